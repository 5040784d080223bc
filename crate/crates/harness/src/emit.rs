//! Result tables and their JSONL/CSV renderings.
//!
//! Exact rationals become `"p/q"` strings in JSON and decimals in CSV;
//! floats are rounded to 12 significant digits in both.

use cylren::exact::{fmt_exact, to_f64, Q};
use serde_json::{Map, Number, Value as Json};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Exact(Q),
    Float(f64),
    Int(i64),
    Bool(bool),
    Text(String),
    /// Sorted edge list of a multigraph.
    Edges(Vec<(usize, usize)>),
    Ints(Vec<usize>),
    Missing,
}

impl From<Q> for Value {
    fn from(x: Q) -> Self {
        Value::Exact(x)
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Float(x)
    }
}

impl From<usize> for Value {
    fn from(x: usize) -> Self {
        Value::Int(x as i64)
    }
}

impl From<i64> for Value {
    fn from(x: i64) -> Self {
        Value::Int(x)
    }
}

impl From<bool> for Value {
    fn from(x: bool) -> Self {
        Value::Bool(x)
    }
}

impl From<&str> for Value {
    fn from(x: &str) -> Self {
        Value::Text(x.to_string())
    }
}

impl From<String> for Value {
    fn from(x: String) -> Self {
        Value::Text(x)
    }
}

impl<T: Into<Value>> From<Option<T>> for Value {
    fn from(x: Option<T>) -> Self {
        x.map_or(Value::Missing, Into::into)
    }
}

/// Round to 12 significant digits.
fn round12(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

/// Shortest decimal of `x` rounded to 12 significant digits.
pub fn decimal12(x: f64) -> String {
    let r = round12(x);
    if !r.is_finite() {
        return r.to_string();
    }
    let a = r.abs();
    if a == 0.0 || (1e-5..1e15).contains(&a) {
        format!("{r}")
    } else {
        format!("{r:e}")
    }
}

impl Value {
    pub fn to_json(&self) -> Json {
        match self {
            Value::Exact(q) => Json::String(fmt_exact(q)),
            Value::Float(x) => match Number::from_f64(round12(*x)) {
                Some(n) => Json::Number(n),
                None => Json::String(x.to_string()),
            },
            Value::Int(i) => Json::from(*i),
            Value::Bool(b) => Json::Bool(*b),
            Value::Text(s) => Json::String(s.clone()),
            Value::Edges(es) => Json::Array(es.iter().map(|(a, b)| Json::from(vec![*a, *b])).collect()),
            Value::Ints(v) => Json::from(v.clone()),
            Value::Missing => Json::Null,
        }
    }

    pub fn to_csv(&self) -> String {
        match self {
            Value::Exact(q) => decimal12(to_f64(q)),
            Value::Float(x) => decimal12(*x),
            Value::Int(i) => i.to_string(),
            Value::Bool(b) => b.to_string(),
            Value::Text(s) => s.clone(),
            Value::Edges(es) => es.iter().map(|(a, b)| format!("{a}-{b}")).collect::<Vec<_>>().join(" "),
            Value::Ints(v) => v.iter().map(usize::to_string).collect::<Vec<_>>().join(" "),
            Value::Missing => String::new(),
        }
    }
}

/// Records with a fixed column order.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Table {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let obj: Map<String, Json> = self
                .columns
                .iter()
                .zip(row)
                .map(|(c, v)| (c.to_string(), v.to_json()))
                .collect();
            out.push_str(&Json::Object(obj).to_string());
            out.push('\n');
        }
        out
    }

    pub fn csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Value::to_csv))?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("utf-8 input"))
    }
}

/// Write `contents` to `dir/name`, returning the path.
pub fn write_file(dir: &Path, name: &str, contents: &str) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut f = std::fs::File::create(&path)?;
    f.write_all(contents.as_bytes())?;
    Ok(path)
}
