use std::io::Write;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Copy)]
pub struct Output {
    pub json: bool,
}

impl Output {
    /// Writes `report` to stdout, as pretty JSON or as an aligned
    /// `key  value` table with nested keys joined by dots.
    pub fn emit<T: Serialize>(&self, report: &T) -> Result<()> {
        let value = serde_json::to_value(report).context("serializing report")?;
        let stdout = std::io::stdout();
        let mut w = stdout.lock();
        if self.json {
            serde_json::to_writer_pretty(&mut w, &value)?;
            writeln!(w)?;
        } else {
            let rows = flatten(&value);
            let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
            for (k, v) in rows {
                writeln!(w, "{k:<width$}  {v}")?;
            }
        }
        Ok(())
    }
}

fn flatten(v: &Value) -> Vec<(String, String)> {
    fn walk(prefix: String, v: &Value, out: &mut Vec<(String, String)>) {
        let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
        match v {
            Value::Object(map) => {
                for (k, v) in map {
                    walk(join(k), v, out);
                }
            }
            // arrays of scalars stay on one line
            Value::Array(items) if items.iter().any(|i| i.is_object() || i.is_array()) => {
                for (i, item) in items.iter().enumerate() {
                    walk(join(&i.to_string()), item, out);
                }
            }
            Value::Null => out.push((prefix, "-".into())),
            Value::String(s) => out.push((prefix, s.clone())),
            Value::Number(n) => out.push((prefix, match n.as_f64() {
                Some(f) if n.is_f64() => format!("{f:.4}"),
                _ => n.to_string(),
            })),
            other => out.push((prefix, other.to_string())),
        }
    }
    let mut out = Vec::new();
    walk(String::new(), v, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn nested_keys_are_dotted() {
        let rows = flatten(&json!({"a": {"b": 1, "c": [1, 2]}, "d": [{"e": 0.5}], "f": null}));
        assert_eq!(
            rows,
            vec![
                ("a.b".to_string(), "1".to_string()),
                ("a.c".into(), "[1,2]".into()),
                ("d.0.e".into(), "0.5000".into()),
                ("f".into(), "-".into()),
            ]
        );
    }
}
