//! Directed capability hypergraphs and their line-oriented text format.
//!
//! ```text
//! # comment
//! capability c1 IntentClassify
//! capability c11 PaymentModify forbidden
//! edge h1 : c1 -> c3 c7
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::config::{Configuration, ForbiddenSet};
use crate::error::{GraphError, ParseError, ParseErrorKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Capability {
    pub token: String,
    pub display: Option<String>,
}

/// A conjunctive rule: holding every tail capability grants every head capability.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Hyperedge {
    pub id: String,
    pub tail: Configuration,
    pub head: Configuration,
}

impl Hyperedge {
    pub fn new(id: impl Into<String>, tail: Configuration, head: Configuration) -> Self {
        Self {
            id: id.into(),
            tail,
            head,
        }
    }
}

/// Non-fatal findings about a graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Lint {
    /// Capabilities in both tail and head of an edge; they are inert.
    TailHeadOverlap { edge: String, overlap: Vec<String> },
}

impl std::fmt::Display for Lint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Lint::TailHeadOverlap { edge, overlap } => write!(
                f,
                "edge `{edge}`: {} appear in both tail and head and are inert",
                overlap.join(" ")
            ),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CapabilityHypergraph {
    caps: Vec<Capability>,
    cap_index: HashMap<String, usize>,
    edges: Vec<Hyperedge>,
    edge_index: HashMap<String, usize>,
    // capability -> edges whose tail contains it, in declaration order
    triggers: Vec<Vec<usize>>,
    max_tail: usize,
}

pub(crate) fn is_valid_id(token: &str) -> bool {
    let mut chars = token.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl CapabilityHypergraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of capabilities.
    pub fn n(&self) -> usize {
        self.caps.len()
    }

    /// Number of edges.
    pub fn m(&self) -> usize {
        self.edges.len()
    }

    /// Largest tail size (0 for an edgeless graph).
    pub fn k(&self) -> usize {
        self.max_tail
    }

    pub fn add_capability(
        &mut self,
        token: impl Into<String>,
        display: Option<String>,
    ) -> Result<usize, GraphError> {
        let token = token.into();
        if !is_valid_id(&token) {
            return Err(GraphError::InvalidId(token));
        }
        if self.cap_index.contains_key(&token) {
            return Err(GraphError::DuplicateCapability(token));
        }
        let index = self.caps.len();
        self.cap_index.insert(token.clone(), index);
        self.caps.push(Capability { token, display });
        self.triggers.push(Vec::new());
        Ok(index)
    }

    pub fn add_edge(&mut self, edge: Hyperedge) -> Result<usize, GraphError> {
        if !is_valid_id(&edge.id) {
            return Err(GraphError::InvalidId(edge.id));
        }
        if self.edge_index.contains_key(&edge.id) {
            return Err(GraphError::DuplicateEdge(edge.id));
        }
        self.check_edge_shape(&edge)?;
        let index = self.edges.len();
        for c in edge.tail.iter() {
            self.triggers[c].push(index);
        }
        self.max_tail = self.max_tail.max(edge.tail.len());
        self.edge_index.insert(edge.id.clone(), index);
        self.edges.push(edge);
        Ok(index)
    }

    fn check_edge_shape(&self, edge: &Hyperedge) -> Result<(), GraphError> {
        if edge.tail.is_empty() {
            return Err(GraphError::EmptyTail(edge.id.clone()));
        }
        if edge.head.is_empty() {
            return Err(GraphError::EmptyHead(edge.id.clone()));
        }
        for set in [&edge.tail, &edge.head] {
            if let Some(last) = set.last() {
                if last >= self.n() {
                    return Err(GraphError::IndexOutOfRange {
                        index: last,
                        n: self.n(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Removes an edge by id. Later edges keep their relative order.
    pub fn remove_edge(&mut self, id: &str) -> Result<Hyperedge, GraphError> {
        let index = self
            .edge_index
            .get(id)
            .copied()
            .ok_or_else(|| GraphError::NoSuchEdge(id.to_string()))?;
        let edge = self.edges.remove(index);
        self.reindex_edges();
        Ok(edge)
    }

    fn reindex_edges(&mut self) {
        self.edge_index.clear();
        for list in &mut self.triggers {
            list.clear();
        }
        self.max_tail = 0;
        for (i, e) in self.edges.iter().enumerate() {
            self.edge_index.insert(e.id.clone(), i);
            for c in e.tail.iter() {
                self.triggers[c].push(i);
            }
            self.max_tail = self.max_tail.max(e.tail.len());
        }
    }

    /// A copy of this graph with one extra edge appended, skipping id checks.
    /// Used to evaluate proposed edges whose id is irrelevant.
    pub(crate) fn with_extra_edge(&self, tail: &Configuration, head: &Configuration) -> Self {
        let mut g = self.clone();
        let index = g.edges.len();
        for c in tail.iter() {
            g.triggers[c].push(index);
        }
        g.max_tail = g.max_tail.max(tail.len());
        g.edges.push(Hyperedge::new(
            format!("__proposed{index}"),
            tail.clone(),
            head.clone(),
        ));
        g
    }

    pub fn capabilities(&self) -> &[Capability] {
        &self.caps
    }

    pub fn edges(&self) -> &[Hyperedge] {
        &self.edges
    }

    pub fn edge(&self, index: usize) -> &Hyperedge {
        &self.edges[index]
    }

    pub fn edge_position(&self, id: &str) -> Option<usize> {
        self.edge_index.get(id).copied()
    }

    /// Edges whose tail contains capability `c`, in declaration order.
    #[inline]
    pub fn triggers(&self, c: usize) -> &[usize] {
        &self.triggers[c]
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.cap_index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.caps[index].token
    }

    pub fn universe(&self) -> Configuration {
        Configuration::full(self.n())
    }

    /// Resolves capability tokens into a configuration.
    pub fn config<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Configuration, GraphError> {
        tokens
            .iter()
            .map(|t| {
                let t = t.as_ref();
                self.lookup(t)
                    .ok_or_else(|| GraphError::UndeclaredCapability(t.to_string()))
            })
            .collect()
    }

    /// Checks that every member of `set` is a declared capability.
    pub fn check_config(&self, set: &Configuration) -> Result<(), GraphError> {
        match set.last() {
            Some(last) if last >= self.n() => Err(GraphError::IndexOutOfRange {
                index: last,
                n: self.n(),
            }),
            _ => Ok(()),
        }
    }

    pub fn tokens(&self, set: &Configuration) -> Vec<String> {
        set.iter().map(|i| self.token(i).to_string()).collect()
    }

    /// Space-separated tokens in index order.
    pub fn format_set(&self, set: &Configuration) -> String {
        let mut out = String::new();
        for (i, c) in set.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.token(c));
        }
        out
    }

    /// `tail -> head` with tokens.
    pub fn format_edge_body(&self, edge: &Hyperedge) -> String {
        format!(
            "{} -> {}",
            self.format_set(&edge.tail),
            self.format_set(&edge.head)
        )
    }

    pub fn lints(&self) -> Vec<Lint> {
        self.edges
            .iter()
            .filter_map(|e| {
                let overlap = e.tail.intersection(&e.head);
                (!overlap.is_empty()).then(|| Lint::TailHeadOverlap {
                    edge: e.id.clone(),
                    overlap: self.tokens(&overlap),
                })
            })
            .collect()
    }
}

/// A parsed hypergraph document.
#[derive(Debug, Clone)]
pub struct Deployment {
    pub graph: CapabilityHypergraph,
    pub forbidden: ForbiddenSet,
}

impl Deployment {
    /// Renders the document back to the text format.
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        for (i, cap) in self.graph.capabilities().iter().enumerate() {
            out.push_str("capability ");
            out.push_str(&cap.token);
            if let Some(d) = &cap.display {
                out.push(' ');
                out.push_str(d);
            }
            if self.forbidden.contains(i) {
                out.push_str(" forbidden");
            }
            out.push('\n');
        }
        for e in self.graph.edges() {
            let _ = writeln!(out, "edge {} : {}", e.id, self.graph.format_edge_body(e));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok<'a> {
    Word(&'a str),
    Colon,
    Arrow,
}

/// Splits a comment-stripped line into words, `:` and `->`, with 1-based columns.
pub(crate) fn tokenize(line: &str) -> Vec<(usize, Tok<'_>)> {
    let mut out = Vec::new();
    let bytes = line.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c == b':' {
            out.push((i + 1, Tok::Colon));
            i += 1;
        } else if c == b'-' && bytes.get(i + 1) == Some(&b'>') {
            out.push((i + 1, Tok::Arrow));
            i += 2;
        } else {
            let start = i;
            while i < bytes.len() {
                let c = bytes[i];
                if c.is_ascii_whitespace()
                    || c == b':'
                    || (c == b'-' && bytes.get(i + 1) == Some(&b'>'))
                {
                    break;
                }
                i += 1;
            }
            out.push((start + 1, Tok::Word(&line[start..i])));
        }
    }
    out
}

pub(crate) fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(p) => &line[..p],
        None => line,
    }
}

fn syntax(line: usize, column: usize, msg: impl Into<String>) -> ParseError {
    ParseError::new(line, column, ParseErrorKind::Syntax(msg.into()))
}

/// Ids with their 1-based columns.
pub(crate) type Spanned<'a> = Vec<(usize, &'a str)>;

/// Parses the `tail... -> head...` part of an edge declaration.
/// `toks` starts right after the colon.
pub(crate) fn parse_edge_body<'a>(
    line_no: usize,
    toks: &[(usize, Tok<'a>)],
    eol_column: usize,
) -> Result<(Spanned<'a>, Spanned<'a>), ParseError> {
    let arrow = toks
        .iter()
        .position(|(_, t)| *t == Tok::Arrow)
        .ok_or_else(|| syntax(line_no, eol_column, "expected `->`"))?;
    let collect = |part: &[(usize, Tok<'a>)]| -> Result<Vec<(usize, &'a str)>, ParseError> {
        part.iter()
            .map(|(col, t)| match t {
                Tok::Word(w) if is_valid_id(w) => Ok((*col, *w)),
                Tok::Word(w) => Err(syntax(line_no, *col, format!("invalid id `{w}`"))),
                Tok::Colon => Err(syntax(line_no, *col, "unexpected `:`")),
                Tok::Arrow => Err(syntax(line_no, *col, "unexpected `->`")),
            })
            .collect()
    };
    Ok((collect(&toks[..arrow])?, collect(&toks[arrow + 1..])?))
}

/// Resolves tokens against the graph, reporting the first undeclared one.
pub(crate) fn resolve(
    graph: &CapabilityHypergraph,
    line_no: usize,
    ids: &[(usize, &str)],
) -> Result<Configuration, ParseError> {
    ids.iter()
        .map(|(col, id)| {
            graph.lookup(id).ok_or_else(|| {
                ParseError::new(
                    line_no,
                    *col,
                    ParseErrorKind::UndeclaredCapability(id.to_string()),
                )
            })
        })
        .collect()
}

/// Parses a hypergraph document. Declaration order is preserved.
pub fn parse_hypergraph(text: &str) -> Result<Deployment, ParseError> {
    let mut graph = CapabilityHypergraph::new();
    let mut forbidden = Configuration::new();

    for (line_index, raw) in text.lines().enumerate() {
        let line_no = line_index + 1;
        let line = strip_comment(raw);
        let toks = tokenize(line);
        let Some((kw_col, kw)) = toks.first() else {
            continue;
        };
        let eol = line.trim_end().len() + 1;
        match kw {
            Tok::Word("capability") => {
                let words: Vec<(usize, &str)> = toks[1..]
                    .iter()
                    .map(|(c, t)| match t {
                        Tok::Word(w) => Ok((*c, *w)),
                        _ => Err(syntax(
                            line_no,
                            *c,
                            "unexpected punctuation in capability declaration",
                        )),
                    })
                    .collect::<Result<_, _>>()?;
                let Some(&(id_col, id)) = words.first() else {
                    return Err(syntax(line_no, eol, "expected capability id"));
                };
                if !is_valid_id(id) {
                    return Err(syntax(line_no, id_col, format!("invalid id `{id}`")));
                }
                let mut rest = &words[1..];
                let mut is_forbidden = false;
                if let Some((_, "forbidden")) = rest.last() {
                    is_forbidden = true;
                    rest = &rest[..rest.len() - 1];
                }
                let display = match rest {
                    [] => None,
                    [(_, name)] => Some(name.to_string()),
                    [_, (col, extra), ..] => {
                        return Err(syntax(line_no, *col, format!("unexpected token `{extra}`")))
                    }
                };
                let index = graph.add_capability(id, display).map_err(|_| {
                    ParseError::new(
                        line_no,
                        id_col,
                        ParseErrorKind::DuplicateCapability(id.to_string()),
                    )
                })?;
                if is_forbidden {
                    forbidden.insert(index);
                }
            }
            Tok::Word("edge") => {
                let Some((id_col, Tok::Word(id))) = toks.get(1) else {
                    return Err(syntax(line_no, eol, "expected edge id"));
                };
                if !is_valid_id(id) {
                    return Err(syntax(line_no, *id_col, format!("invalid id `{id}`")));
                }
                match toks.get(2) {
                    Some((_, Tok::Colon)) => {}
                    Some((c, _)) => return Err(syntax(line_no, *c, "expected `:`")),
                    None => return Err(syntax(line_no, eol, "expected `:`")),
                }
                let (tail_ids, head_ids) = parse_edge_body(line_no, &toks[3..], eol)?;
                let tail = resolve(&graph, line_no, &tail_ids)?;
                let head = resolve(&graph, line_no, &head_ids)?;
                let edge = Hyperedge::new(*id, tail, head);
                graph.add_edge(edge).map_err(|e| {
                    let kind = match e {
                        GraphError::DuplicateEdge(id) => ParseErrorKind::DuplicateEdge(id),
                        GraphError::EmptyTail(id) => ParseErrorKind::EmptyTail(id),
                        GraphError::EmptyHead(id) => ParseErrorKind::EmptyHead(id),
                        other => ParseErrorKind::Syntax(other.to_string()),
                    };
                    ParseError::new(line_no, *id_col, kind)
                })?;
            }
            Tok::Word(other) => {
                return Err(syntax(
                    line_no,
                    *kw_col,
                    format!("unknown declaration `{other}`"),
                ))
            }
            _ => return Err(syntax(line_no, *kw_col, "expected `capability` or `edge`")),
        }
    }

    Ok(Deployment {
        graph,
        forbidden: ForbiddenSet::new(forbidden),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::TELCO;

    #[test]
    fn telco_dimensions() {
        let d = parse_hypergraph(TELCO).unwrap();
        assert_eq!((d.graph.n(), d.graph.m(), d.graph.k()), (12, 6, 2));
        assert_eq!(d.graph.format_set(d.forbidden.as_set()), "c11 c12");
        assert_eq!(
            d.graph.capabilities()[0].display.as_deref(),
            Some("IntentClassify")
        );
        assert_eq!(d.graph.edge(5).id, "h6");
        assert_eq!(d.graph.format_edge_body(d.graph.edge(0)), "c1 -> c3 c7");
        // c3 triggers h3 then h6, in declaration order
        assert_eq!(d.graph.triggers(2), &[2, 5]);
        assert!(d.graph.lints().is_empty());
    }

    #[test]
    fn capabilities_only() {
        let d =
            parse_hypergraph("capability a\ncapability b X forbidden\n\n# nothing else\n").unwrap();
        assert_eq!((d.graph.n(), d.graph.m(), d.graph.k()), (2, 0, 0));
        assert!(d.forbidden.contains(1));
        assert_eq!(d.graph.capabilities()[1].display.as_deref(), Some("X"));
    }

    #[test]
    fn undeclared_capability_is_located() {
        let err = parse_hypergraph("capability c1\nedge h1 : c1 -> c99\n").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UndeclaredCapability("c99".into()));
        assert_eq!((err.location.line, err.location.column), (2, 17));
        assert!(err.to_string().contains("c99"));
    }

    #[test]
    fn duplicates_rejected() {
        let err = parse_hypergraph("capability a\ncapability a\n").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::DuplicateCapability("a".into()));
        assert_eq!(err.location.line, 2);
        let err = parse_hypergraph("capability a\nedge e : a -> a\nedge e : a -> a\n").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::DuplicateEdge("e".into()));
        assert_eq!(err.location.line, 3);
    }

    #[test]
    fn syntax_errors() {
        for (doc, line) in [
            ("capability\n", 1),
            ("capability 1a\n", 1),
            ("capability a\nedge h : a a\n", 2),
            ("capability a\nedge h a -> a\n", 2),
            ("capability a\nedge h : -> a\n", 2),
            ("capability a\nedge h : a ->\n", 2),
            ("capability a b c d\n", 1),
            ("node a\n", 1),
        ] {
            let err = parse_hypergraph(doc).unwrap_err();
            assert_eq!(err.location.line, line, "{doc:?}: {err}");
        }
    }

    #[test]
    fn compact_punctuation_and_overlap_lint() {
        let d = parse_hypergraph("capability a\ncapability b\nedge h:a b->b # self\n").unwrap();
        assert_eq!(d.graph.edge(0).tail, Configuration::from_indices([0, 1]));
        let lints = d.graph.lints();
        assert_eq!(lints.len(), 1);
        assert!(lints[0].to_string().contains("inert"));
    }

    #[test]
    fn document_round_trip() {
        let d = parse_hypergraph(TELCO).unwrap();
        let again = parse_hypergraph(&d.to_document()).unwrap();
        assert_eq!(again.to_document(), d.to_document());
        assert_eq!(again.forbidden, d.forbidden);
    }

    #[test]
    fn remove_edge_reindexes_triggers() {
        let mut g = parse_hypergraph(TELCO).unwrap().graph;
        g.remove_edge("h3").unwrap();
        assert_eq!(g.m(), 5);
        assert_eq!(g.edge_position("h6"), Some(4));
        assert_eq!(g.triggers(2), &[4]);
        assert!(matches!(
            g.remove_edge("h3"),
            Err(GraphError::NoSuchEdge(_))
        ));
    }
}
