//! Command output as an ordered list of fields, rendered either as text or
//! as one JSON object. Both renderings walk the same fields.

use serde_json::{json, Map, Value};

pub const SCHEMA: &str = "capgraph/1";

#[derive(Debug, Clone)]
pub enum Cell {
    Str(String),
    Int(i64),
    Float(f64),
    Bool(bool),
    Set(Vec<String>),
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::Str(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => format!("{x:?}"),
            Cell::Bool(b) => b.to_string(),
            Cell::Set(s) => format!("{{{}}}", s.join(" ")),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Str(s) => json!(s),
            Cell::Int(i) => json!(i),
            Cell::Float(x) => json!(x),
            Cell::Bool(b) => json!(b),
            Cell::Set(s) => json!(s),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Val {
    Cell(Cell),
    /// Rendered `key = a b c`.
    Set(Vec<String>),
    /// One `key: a b` line per set.
    Sets(Vec<Vec<String>>),
    /// One `key: line` per entry.
    Lines(Vec<String>),
    /// One `key: k=v k=v` line per row.
    Rows(Vec<Vec<(&'static str, Cell)>>),
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    command: &'static str,
    headline: Option<String>,
    fields: Vec<(&'static str, Val)>,
}

impl Report {
    pub fn new(command: &'static str) -> Self {
        Self {
            command,
            ..Self::default()
        }
    }

    /// A free-form first line; emitted as `summary` in JSON.
    pub fn headline(mut self, line: impl Into<String>) -> Self {
        self.headline = Some(line.into());
        self
    }

    pub fn str(mut self, key: &'static str, v: impl Into<String>) -> Self {
        self.fields.push((key, Val::Cell(Cell::Str(v.into()))));
        self
    }

    pub fn int(mut self, key: &'static str, v: usize) -> Self {
        self.fields.push((key, Val::Cell(Cell::Int(v as i64))));
        self
    }

    pub fn float(mut self, key: &'static str, v: f64) -> Self {
        self.fields.push((key, Val::Cell(Cell::Float(v))));
        self
    }

    pub fn bool(mut self, key: &'static str, v: bool) -> Self {
        self.fields.push((key, Val::Cell(Cell::Bool(v))));
        self
    }

    pub fn set(mut self, key: &'static str, v: Vec<String>) -> Self {
        self.fields.push((key, Val::Set(v)));
        self
    }

    pub fn sets(mut self, key: &'static str, v: Vec<Vec<String>>) -> Self {
        self.fields.push((key, Val::Sets(v)));
        self
    }

    pub fn lines(mut self, key: &'static str, v: Vec<String>) -> Self {
        self.fields.push((key, Val::Lines(v)));
        self
    }

    pub fn rows(mut self, key: &'static str, v: Vec<Vec<(&'static str, Cell)>>) -> Self {
        self.fields.push((key, Val::Rows(v)));
        self
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(h) = &self.headline {
            out.push_str(h);
            out.push('\n');
        }
        for (key, val) in &self.fields {
            match val {
                Val::Cell(c) => out.push_str(&format!("{key} = {}\n", c.text())),
                Val::Set(s) => {
                    out.push_str(&format!("{key} = {}\n", s.join(" ")).replace(" \n", "\n"))
                }
                Val::Sets(sets) => {
                    for s in sets {
                        out.push_str(&format!("{key}: {}\n", s.join(" ")));
                    }
                }
                Val::Lines(lines) => {
                    for l in lines {
                        out.push_str(&format!("{key}: {l}\n"));
                    }
                }
                Val::Rows(rows) => {
                    for row in rows {
                        let cells: Vec<String> = row
                            .iter()
                            .map(|(k, c)| format!("{k}={}", c.text()))
                            .collect();
                        out.push_str(&format!("{key}: {}\n", cells.join(" ")));
                    }
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("schema".into(), json!(SCHEMA));
        obj.insert("command".into(), json!(self.command));
        if let Some(h) = &self.headline {
            obj.insert("summary".into(), json!(h));
        }
        for (key, val) in &self.fields {
            let v = match val {
                Val::Cell(c) => c.json(),
                Val::Set(s) => json!(s),
                Val::Sets(s) => json!(s),
                Val::Lines(l) => json!(l),
                Val::Rows(rows) => Value::Array(
                    rows.iter()
                        .map(|row| {
                            Value::Object(
                                row.iter().map(|(k, c)| (k.to_string(), c.json())).collect(),
                            )
                        })
                        .collect(),
                ),
            };
            obj.insert(key.to_string(), v);
        }
        Value::Object(obj)
    }
}
