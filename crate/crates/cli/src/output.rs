use std::io::{self, Write};

use serde_json::{Map, Value};

/// Stdout writer for `key: value` blocks, or JSON lines under `--json`.
pub struct Out {
    json: bool,
    stdout: io::Stdout,
}

impl Out {
    pub fn new(json: bool) -> Self {
        Out {
            json,
            stdout: io::stdout(),
        }
    }

    pub fn json(&self) -> bool {
        self.json
    }

    /// One record. Human form prints `key: value` per field and a blank line
    /// between records; nested values are printed as compact JSON.
    pub fn record(&mut self, kind: &str, fields: Map<String, Value>) -> io::Result<()> {
        let mut lock = self.stdout.lock();
        if self.json {
            let mut obj = Map::new();
            obj.insert("record".into(), Value::String(kind.into()));
            obj.extend(fields);
            writeln!(lock, "{}", Value::Object(obj))
        } else {
            for (k, v) in &fields {
                match v {
                    Value::String(s) => writeln!(lock, "{k}: {s}")?,
                    other => writeln!(lock, "{k}: {other}")?,
                }
            }
            writeln!(lock)
        }
    }

    /// Free-form human text; suppressed under `--json`.
    pub fn text(&mut self, text: &str) -> io::Result<()> {
        if self.json {
            return Ok(());
        }
        self.stdout.lock().write_all(text.as_bytes())
    }
}

/// Builds a field map from `key => value` pairs.
#[macro_export]
macro_rules! fields {
    ($($k:expr => $v:expr),* $(,)?) => {{
        let mut m = serde_json::Map::new();
        $( m.insert($k.to_string(), serde_json::json!($v)); )*
        m
    }};
}
