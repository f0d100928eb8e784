//! Browser bindings for the demo page in `www/`.
//!
//! Each export takes the deployment text and comma- or space-separated
//! capability lists and returns a JSON string. Failures come back as
//! `{"error": "..."}` so the page has a single code path.

use capgraph::boundary::{audit_surface, minimal_unsafe_antichain, AntichainOptions};
use capgraph::closure::Reached;
use capgraph::dynamics::{Session, Verdict};
use capgraph::fixtures::TELCO;
use capgraph::{closure, parse_hypergraph, CapabilityHypergraph, Configuration, Deployment};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn error(msg: impl ToString) -> String {
    json!({ "error": msg.to_string() }).to_string()
}

fn parse_set(graph: &CapabilityHypergraph, text: &str) -> Result<Configuration, String> {
    let tokens: Vec<&str> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .collect();
    graph.config(&tokens).map_err(|e| e.to_string())
}

fn load(graph_text: &str) -> Result<Deployment, String> {
    parse_hypergraph(graph_text).map_err(|e| e.to_string())
}

/// The Telco deployment, for pre-filling the editor.
#[wasm_bindgen]
pub fn sample_graph() -> String {
    TELCO.to_string()
}

fn closure_value(graph_text: &str, start: &str) -> Result<Value, String> {
    let d = load(graph_text)?;
    let g = &d.graph;
    let s = parse_set(g, start)?;
    let r = closure(g, &s);
    let derivations: Vec<Value> = r
        .certificate
        .derivations
        .iter()
        .map(|dv| {
            json!({
                "capability": g.token(dv.capability),
                "edge": g.edge(dv.edge).id,
                "witnesses": g.tokens(&dv.witnesses),
            })
        })
        .collect();
    let reached = r.first_forbidden(&d.forbidden).map(|x| match x {
        Reached::Granted(c) => json!({ "capability": g.token(c), "via": null }),
        Reached::Derived { capability, edge } => {
            json!({ "capability": g.token(capability), "via": g.edge(edge).id })
        }
    });
    Ok(json!({
        "start": g.tokens(&s),
        "closure": g.tokens(&r.closure),
        "fired": r.certificate.fired.iter().map(|&e| g.edge(e).id.clone()).collect::<Vec<_>>(),
        "derivations": derivations,
        "safe": reached.is_none(),
        "reached": reached,
    }))
}

/// Closure of `start` with its derivation trace and safety verdict.
#[wasm_bindgen]
pub fn closure_report(graph_text: &str, start: &str) -> String {
    closure_value(graph_text, start).map_or_else(error, |v| v.to_string())
}

fn audit_value(graph_text: &str, set: &str) -> Result<Value, String> {
    let d = load(graph_text)?;
    let g = &d.graph;
    let s = parse_set(g, set)?;
    let a = audit_surface(g, &s, &d.forbidden).map_err(|e| e.to_string())?;
    let frontier: Vec<Value> = a
        .frontier_raw
        .iter()
        .map(|e| {
            json!({
                "edge": g.edge(e.edge).id,
                "missing": g.token(e.missing),
                "safe_after": e.safe_after,
                "closure_gain": e.closure_gain,
            })
        })
        .collect();
    let threats: Vec<Value> = a
        .structurally_unsafe
        .iter()
        .map(|t| json!({ "forbidden": g.token(t.forbidden), "acquisition": g.tokens(&t.acquisition) }))
        .collect();
    Ok(json!({
        "reachable": g.tokens(&a.reachable),
        "safe": a.closure.is_safe(&d.forbidden),
        "safe_goals": g.tokens(&a.safe_goals),
        "frontier": frontier,
        "threats": threats,
    }))
}

/// Reachable set, near-miss frontier and structural threats for `set`.
#[wasm_bindgen]
pub fn audit_report(graph_text: &str, set: &str) -> String {
    audit_value(graph_text, set).map_or_else(error, |v| v.to_string())
}

fn join_value(graph_text: &str, incumbent: &str, joiner: &str) -> Result<Value, String> {
    let d = load(graph_text)?;
    let first = parse_set(&d.graph, incumbent)?;
    let second = parse_set(&d.graph, joiner)?;
    let b = minimal_unsafe_antichain(&d.graph, &d.forbidden, &AntichainOptions::default())
        .map_err(|e| e.to_string())?;
    let antichain: Vec<Vec<String>> = b.elements().iter().map(|s| d.graph.tokens(s)).collect();
    let mut session = Session::new(d.graph, d.forbidden, b);
    let incumbent_verdict = session
        .agent_join("incumbent", &first)
        .map_err(|e| e.to_string())?;
    if incumbent_verdict.is_blocked() {
        return Ok(json!({ "antichain": antichain, "incumbent": incumbent_verdict }));
    }
    let plain = session
        .clone()
        .agent_join("joiner", &second)
        .map_err(|e| e.to_string())?;
    let recovered = session
        .agent_join_with_recovery("joiner", &second)
        .map_err(|e| e.to_string())?;
    let pooled = session.graph().tokens(session.pooled());
    let cl = session.closure().closure.clone();
    Ok(json!({
        "antichain": antichain,
        "incumbent": Verdict::Accepted,
        "join": plain,
        "recovery": recovered,
        "pooled": pooled,
        "closure": session.graph().tokens(&cl),
    }))
}

/// Gates a second agent joining an incumbent, with and without recovery.
#[wasm_bindgen]
pub fn join_gate(graph_text: &str, incumbent: &str, joiner: &str) -> String {
    join_value(graph_text, incumbent, joiner).map_or_else(error, |v| v.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn closure_of_c7_c8() {
        let v = parse(&closure_report(&sample_graph(), "c7, c8"));
        assert_eq!(v["closure"], json!(["c7", "c8", "c9"]));
        assert_eq!(v["fired"], json!(["h4"]));
        assert_eq!(v["safe"], json!(true));
    }

    #[test]
    fn unsafe_closure_names_the_edge() {
        let v = parse(&closure_report(&sample_graph(), "c3 c10"));
        assert_eq!(v["safe"], json!(false));
        assert_eq!(v["reached"], json!({ "capability": "c12", "via": "h6" }));
    }

    #[test]
    fn audit_of_billing_agent() {
        let v = parse(&audit_report(&sample_graph(), "c1,c3,c4,c5"));
        assert_eq!(v["safe_goals"], json!(["c1", "c3", "c4", "c5", "c6", "c7"]));
        assert_eq!(v["frontier"].as_array().unwrap().len(), 4);
        assert_eq!(
            v["threats"][1],
            json!({ "forbidden": "c12", "acquisition": ["c2"] })
        );
    }

    #[test]
    fn join_gate_blocks_and_recovers() {
        let v = parse(&join_gate(&sample_graph(), "c1,c3,c4,c5", "c1,c2,c10"));
        assert_eq!(v["join"]["verdict"], json!("blocked"));
        assert_eq!(v["recovery"]["verdict"], json!("recovered"));
        assert_eq!(v["recovery"]["kept"], json!(["c1"]));
        assert_eq!(v["pooled"], json!(["c1", "c3", "c4", "c5"]));
    }

    #[test]
    fn errors_are_json() {
        let v = parse(&closure_report(&sample_graph(), "c99"));
        assert!(v["error"].as_str().unwrap().contains("c99"));
        let v = parse(&audit_report("edge h1 : a -> b\n", "a"));
        assert!(v["error"].as_str().unwrap().contains("line 1"));
    }
}
