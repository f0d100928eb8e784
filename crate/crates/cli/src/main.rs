mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use capgraph::adversarial::{enumerate_injections, TailMode, DEFAULT_INJECTION_BUDGET};
use capgraph::boundary::{
    audit_surface, minimal_unsafe_antichain, near_miss_frontier, AntichainOptions, Domain,
    NearMissEntry,
};
use capgraph::closure::Reached;
use capgraph::dynamics::{replay, Verdict};
use capgraph::goals::{emergent_goals, greedy_select, optimal_select_bruteforce, GoalValueMap};
use capgraph::projection::{format_money, ProjectionModel};
use capgraph::{closure, parse_hypergraph, CapabilityHypergraph, Configuration, Deployment};
use clap::{Args, Parser, Subcommand, ValueEnum};

use report::{Cell, Report};

#[derive(Parser)]
#[command(
    name = "capgraph",
    version,
    about = "Safety analysis for capability hypergraphs"
)]
struct Cli {
    #[arg(long, value_enum, default_value_t = Format::Text, global = true)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
struct GraphArg {
    /// Deployment file (capabilities, forbidden flags, hyperedges)
    #[arg(long)]
    graph: PathBuf,
}

#[derive(Args)]
struct SetArg {
    /// Comma-separated capability ids
    #[arg(long)]
    set: Option<String>,
    /// File of capability ids separated by whitespace or commas
    #[arg(long)]
    set_file: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    All,
    NonForbidden,
}

#[derive(Subcommand)]
enum Command {
    /// Closure of a starting configuration, with the fired edge sequence
    Closure {
        #[command(flatten)]
        graph: GraphArg,
        #[arg(long)]
        start: Option<String>,
        #[arg(long)]
        start_file: Option<PathBuf>,
    },
    /// Safety check; exits 1 when the configuration is unsafe
    Check {
        #[command(flatten)]
        graph: GraphArg,
        #[command(flatten)]
        set: SetArg,
    },
    /// Minimal unsafe configurations
    Antichain {
        #[command(flatten)]
        graph: GraphArg,
        #[arg(long)]
        max_size: Option<usize>,
        #[arg(long, value_enum, default_value_t = DomainArg::All)]
        domain: DomainArg,
    },
    /// Reachable set, safe goals, near-miss frontier and structural threats
    Audit {
        #[command(flatten)]
        graph: GraphArg,
        #[command(flatten)]
        set: SetArg,
    },
    /// Edges one capability away from firing
    Nmf {
        #[command(flatten)]
        graph: GraphArg,
        #[command(flatten)]
        set: SetArg,
    },
    /// Goals reachable by a two-agent coalition but by neither agent alone
    Emergent {
        #[command(flatten)]
        graph: GraphArg,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
    },
    /// Greedy safe goal selection
    Goals {
        #[command(flatten)]
        graph: GraphArg,
        #[command(flatten)]
        set: SetArg,
        #[arg(short)]
        k: usize,
        /// Goal value file (`value <cap> <decimal>` lines)
        #[arg(long)]
        values: Option<PathBuf>,
        /// Also compute the exact optimum by exhaustive search
        #[arg(long)]
        optimum: bool,
    },
    /// Dangerous single-step injections against a configuration
    InjectScan {
        #[command(flatten)]
        graph: GraphArg,
        #[command(flatten)]
        set: SetArg,
        #[arg(short)]
        k: usize,
        /// Tails of exactly k capabilities instead of 1 to k
        #[arg(long)]
        exact: bool,
    },
    /// Replays a session script
    Replay {
        #[command(flatten)]
        graph: GraphArg,
        #[arg(long)]
        script: PathBuf,
        /// Print the aligned event table instead of fields
        #[arg(long)]
        table: bool,
    },
    /// Annual business-case projection
    Project {
        #[arg(long)]
        params: PathBuf,
    },
}

enum Outcome {
    Report(Report),
    /// A check whose verdict was negative.
    Failed(Report),
    Raw(String),
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn load(arg: &GraphArg) -> Result<Deployment, String> {
    parse_hypergraph(&read(&arg.graph)?).map_err(|e| format!("{}: {e}", arg.graph.display()))
}

fn parse_list(
    graph: &CapabilityHypergraph,
    text: &str,
    origin: &str,
) -> Result<Configuration, String> {
    let tokens: Vec<&str> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split(|c: char| c == ',' || c.is_whitespace()))
        .filter(|t| !t.is_empty())
        .collect();
    graph.config(&tokens).map_err(|e| format!("{origin}: {e}"))
}

fn resolve_set(
    graph: &CapabilityHypergraph,
    inline: Option<&str>,
    file: Option<&Path>,
    name: &str,
) -> Result<Configuration, String> {
    match (inline, file) {
        (Some(_), Some(_)) => Err(format!("--{name} and --{name}-file are mutually exclusive")),
        (Some(s), None) => parse_list(graph, s, &format!("--{name}")),
        (None, Some(p)) => parse_list(graph, &read(p)?, &p.display().to_string()),
        (None, None) => Err(format!("one of --{name} or --{name}-file is required")),
    }
}

fn set_of(d: &Deployment, arg: &SetArg) -> Result<Configuration, String> {
    resolve_set(&d.graph, arg.set.as_deref(), arg.set_file.as_deref(), "set")
}

fn frontier_rows(
    g: &CapabilityHypergraph,
    entries: &[NearMissEntry],
) -> Vec<Vec<(&'static str, Cell)>> {
    entries
        .iter()
        .map(|e| {
            vec![
                ("edge", Cell::Str(g.edge(e.edge).id.clone())),
                ("missing", Cell::Str(g.token(e.missing).into())),
                ("safe_after", Cell::Bool(e.safe_after)),
                ("closure_gain", Cell::Int(e.closure_gain as i64)),
            ]
        })
        .collect()
}

fn run(cli: &Cli) -> Result<Outcome, String> {
    let out = match &cli.command {
        Command::Closure {
            graph,
            start,
            start_file,
        } => {
            let d = load(graph)?;
            let g = &d.graph;
            let s = resolve_set(g, start.as_deref(), start_file.as_deref(), "start")?;
            let r = closure(g, &s);
            let fired = r
                .certificate
                .fired
                .iter()
                .map(|&e| g.edge(e).id.clone())
                .collect();
            Report::new("closure")
                .set("start", g.tokens(&s))
                .set("cl", g.tokens(&r.closure))
                .set("fired", fired)
                .bool("safe", r.is_safe(&d.forbidden))
                .set("safe_goals", g.tokens(&r.safe_goals(&d.forbidden)))
                .int("edges_examined", r.counters.edges_examined)
        }
        Command::Check { graph, set } => {
            let d = load(graph)?;
            let g = &d.graph;
            let s = set_of(&d, set)?;
            let r = closure(g, &s);
            let report = Report::new("check").set("set", g.tokens(&s));
            return Ok(match r.first_forbidden(&d.forbidden) {
                None => Outcome::Report(report.headline("SAFE").bool("safe", true)),
                Some(reached) => {
                    let token = g.token(reached.capability()).to_string();
                    let via = match reached {
                        Reached::Granted(_) => "granted".to_string(),
                        Reached::Derived { edge, .. } => g.edge(edge).id.clone(),
                    };
                    let headline = match reached {
                        Reached::Granted(_) => format!("UNSAFE ({token} held directly)"),
                        Reached::Derived { .. } => format!("UNSAFE (reaches {token} via {via})"),
                    };
                    Outcome::Failed(
                        report
                            .headline(headline)
                            .bool("safe", false)
                            .str("reached", token)
                            .str("via", via),
                    )
                }
            });
        }
        Command::Antichain {
            graph,
            max_size,
            domain,
        } => {
            let d = load(graph)?;
            let opts = AntichainOptions {
                max_set_size: *max_size,
                domain: match domain {
                    DomainArg::All => Domain::All,
                    DomainArg::NonForbidden => Domain::NonForbidden,
                },
                ..AntichainOptions::default()
            };
            let b = minimal_unsafe_antichain(&d.graph, &d.forbidden, &opts)
                .map_err(|e| e.to_string())?;
            Report::new("antichain")
                .int("count", b.len())
                .int("max_set_size", b.max_set_size())
                .str(
                    "domain",
                    match b.domain() {
                        Domain::All => "all",
                        Domain::NonForbidden => "non-forbidden",
                    },
                )
                .sets(
                    "unsafe-min",
                    b.elements().iter().map(|s| d.graph.tokens(s)).collect(),
                )
        }
        Command::Audit { graph, set } => {
            let d = load(graph)?;
            let g = &d.graph;
            let s = set_of(&d, set)?;
            let a = audit_surface(g, &s, &d.forbidden).map_err(|e| e.to_string())?;
            let threats = a
                .structurally_unsafe
                .iter()
                .map(|t| {
                    vec![
                        ("forbidden", Cell::Str(g.token(t.forbidden).into())),
                        ("acquisition", Cell::Set(g.tokens(&t.acquisition))),
                    ]
                })
                .collect();
            Report::new("audit")
                .set("set", g.tokens(&s))
                .set("reachable", g.tokens(&a.reachable))
                .bool("safe", a.closure.is_safe(&d.forbidden))
                .set("safe_goals", g.tokens(&a.safe_goals))
                .rows("frontier", frontier_rows(g, &a.frontier_raw))
                .rows("safe_frontier", frontier_rows(g, &a.frontier_safe))
                .rows("threat", threats)
        }
        Command::Nmf { graph, set } => {
            let d = load(graph)?;
            let g = &d.graph;
            let s = set_of(&d, set)?;
            let base = closure(g, &s);
            let nmf = near_miss_frontier(g, &base, &d.forbidden);
            Report::new("nmf")
                .set("set", g.tokens(&s))
                .int("count", nmf.len())
                .rows("frontier", frontier_rows(g, &nmf))
        }
        Command::Emergent { graph, a, b } => {
            let d = load(graph)?;
            let g = &d.graph;
            let first = parse_list(g, a, "--a")?;
            let second = parse_list(g, b, "--b")?;
            let r = emergent_goals(g, &d.forbidden, &first, &second);
            Report::new("emergent")
                .set("a", g.tokens(&first))
                .set("b", g.tokens(&second))
                .set("cl_a", g.tokens(&r.closure_first))
                .set("cl_b", g.tokens(&r.closure_second))
                .set("cl_joint", g.tokens(&r.closure_joint))
                .bool("coalition_safe", r.coalition_safe)
                .set("emergent", g.tokens(&r.emergent))
        }
        Command::Goals {
            graph,
            set,
            k,
            values,
            optimum,
        } => {
            let d = load(graph)?;
            let g = &d.graph;
            let s = set_of(&d, set)?;
            let values = match values {
                Some(p) => GoalValueMap::parse(&read(p)?, g, &d.forbidden)
                    .map_err(|e| format!("{}: {e}", p.display()))?,
                None => GoalValueMap::uniform(),
            };
            let sel = greedy_select(g, &s, &d.forbidden, *k, &values).map_err(|e| e.to_string())?;
            let steps = sel
                .steps
                .iter()
                .map(|st| {
                    vec![
                        ("goal", Cell::Str(g.token(st.goal).into())),
                        ("gain", Cell::Int(st.gain as i64)),
                        ("weighted_gain", Cell::Float(st.weighted_gain)),
                    ]
                })
                .collect();
            let mut report = Report::new("goals")
                .set("set", g.tokens(&s))
                .int("k", *k)
                .rows("step", steps)
                .set("chosen", g.tokens(&sel.chosen()))
                .int("total", sel.total)
                .float("weighted_total", sel.weighted_total);
            if *optimum {
                let best =
                    optimal_select_bruteforce(g, &s, &d.forbidden, *k, DEFAULT_INJECTION_BUDGET)
                        .map_err(|e| e.to_string())?;
                report = report
                    .set("optimum_goals", g.tokens(&best.goals))
                    .int("optimum", best.value);
            }
            report
        }
        Command::InjectScan {
            graph,
            set,
            k,
            exact,
        } => {
            let d = load(graph)?;
            let g = &d.graph;
            let s = set_of(&d, set)?;
            let mode = if *exact {
                TailMode::Exact
            } else {
                TailMode::UpTo
            };
            let found =
                enumerate_injections(g, &s, &d.forbidden, *k, mode, DEFAULT_INJECTION_BUDGET)
                    .map_err(|e| e.to_string())?;
            let lines = found
                .iter()
                .map(|c| format!("{} -> {}", g.format_set(&c.tail), g.token(c.forbidden)))
                .collect();
            Report::new("inject-scan")
                .set("set", g.tokens(&s))
                .int("k", *k)
                .str("tail_mode", if *exact { "exact" } else { "up-to" })
                .int("count", found.len())
                .lines("inject", lines)
        }
        Command::Replay {
            graph,
            script,
            table,
        } => {
            let d = load(graph)?;
            let b = minimal_unsafe_antichain(&d.graph, &d.forbidden, &AntichainOptions::default())
                .map_err(|e| e.to_string())?;
            let log = replay(&d.graph, &d.forbidden, &b, &read(script)?)
                .map_err(|e| format!("{}: {e}", script.display()))?;
            if *table && cli.format == Format::Text {
                return Ok(Outcome::Raw(log.to_text()));
            }
            let events = log
                .events
                .iter()
                .map(|e| {
                    let mut row = vec![
                        ("seq", Cell::Int(e.seq as i64)),
                        ("line", Cell::Int(e.line.unwrap_or(0) as i64)),
                        (
                            "event",
                            Cell::Str(e.event.to_string().trim_end().to_string()),
                        ),
                        ("verdict", Cell::Str(e.verdict.name().into())),
                    ];
                    match &e.verdict {
                        Verdict::Blocked { violations }
                        | Verdict::BlockedEntirely { violations } => {
                            row.push(("violations", Cell::Str(braces(violations))));
                        }
                        Verdict::Recovered { kept, removed, .. } => {
                            row.push(("kept", Cell::Set(kept.clone())));
                            row.push(("removed", Cell::Set(removed.clone())));
                        }
                        Verdict::ActiveBlocked { witness } => {
                            row.push(("witness", Cell::Str(witness.clone())))
                        }
                        Verdict::Error { message } => {
                            row.push(("message", Cell::Str(message.clone())))
                        }
                        _ => {}
                    }
                    row.push((
                        "edges_examined",
                        Cell::Int(e.counters.edges_examined as i64),
                    ));
                    row.push((
                        "antichain_tests",
                        Cell::Int(e.counters.antichain_tests as i64),
                    ));
                    match &e.closure {
                        Some(c) => row.push(("closure", Cell::Set(c.clone()))),
                        None => row.push(("closure", Cell::Str("stale".into()))),
                    }
                    if let Some(d) = &e.divergence {
                        row.push(("divergence", Cell::Str(d.clone())));
                    }
                    row
                })
                .collect();
            Report::new("replay")
                .int("events", log.events.len())
                .rows("event", events)
                .int("edges_examined", log.totals.edges_examined)
                .int("antichain_tests", log.totals.antichain_tests)
                .int("divergences", log.divergences)
        }
        Command::Project { params } => {
            let model = ProjectionModel::parse(&read(params)?)
                .map_err(|e| format!("{}: {e}", params.display()))?;
            let p = model.evaluate().map_err(|e| e.to_string())?;
            let items = p
                .items
                .iter()
                .map(|i| {
                    vec![
                        ("key", Cell::Str(i.key.into())),
                        ("reported", Cell::Str(format_money(i.reported))),
                        ("exact", Cell::Str(format_money(i.exact))),
                    ]
                })
                .collect();
            Report::new("project")
                .rows("item", items)
                .str(
                    "retained_customers",
                    p.retained_customers.normalize().to_string(),
                )
                .str("total", format_money(p.total))
                .str("deployment_cost", format_money(p.deployment_cost))
                .str("NAV", format_money(p.net_annual_value))
                .str("exact_total", format_money(p.exact_total))
                .str("exact_NAV", format_money(p.exact_net_annual_value))
        }
    };
    Ok(Outcome::Report(out))
}

fn braces(sets: &[Vec<String>]) -> String {
    sets.iter()
        .map(|s| format!("{{{}}}", s.join(" ")))
        .collect::<Vec<_>>()
        .join(" ")
}

fn emit(report: &Report, format: Format) {
    match format {
        Format::Text => print!("{}", report.to_text()),
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(&report.to_json()).expect("report serialises")
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Report(r)) => {
            emit(&r, cli.format);
            ExitCode::SUCCESS
        }
        Ok(Outcome::Failed(r)) => {
            emit(&r, cli.format);
            ExitCode::from(1)
        }
        Ok(Outcome::Raw(text)) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
