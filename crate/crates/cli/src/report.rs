use std::io::Write;

use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Output envelope shared by every subcommand.
#[derive(Serialize)]
pub struct Envelope<'a, C: Serialize, R: Serialize> {
    pub version: &'a str,
    pub command: &'a str,
    pub seed: Option<u64>,
    pub config: &'a C,
    pub wall_clock_seconds: Option<f64>,
    pub result: &'a R,
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(cell).collect::<Vec<_>>().join(" "),
        other => other.to_string(),
    }
}

/// Flattens nested objects into `parent.child` columns.
fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, inner) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, inner, out);
            }
        }
        other => out.push((prefix.to_string(), cell(other))),
    }
}

pub fn to_row<T: Serialize>(item: &T) -> serde_json::Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    flatten("", &serde_json::to_value(item)?, &mut out);
    Ok(out)
}

/// Writes the envelope as `# key: value` comment lines followed by a table.
pub fn write_csv<C: Serialize, R: Serialize>(
    w: &mut dyn Write,
    env: &Envelope<C, R>,
    rows: &[Vec<(String, String)>],
) -> std::io::Result<()> {
    writeln!(w, "# version: {}", env.version)?;
    writeln!(w, "# command: {}", env.command)?;
    if let Some(seed) = env.seed {
        writeln!(w, "# seed: {seed}")?;
    }
    writeln!(w, "# config: {}", serde_json::to_string(env.config)?)?;
    if let Some(t) = env.wall_clock_seconds {
        writeln!(w, "# wall_clock_seconds: {t}")?;
    }
    let mut out = csv::Writer::from_writer(w);
    if let Some(first) = rows.first() {
        out.write_record(first.iter().map(|(k, _)| k))?;
    }
    for r in rows {
        out.write_record(r.iter().map(|(_, v)| v))?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Inner {
        a: f64,
        b: Vec<usize>,
    }

    #[derive(Serialize)]
    struct Outer {
        x: Option<f64>,
        inner: Inner,
        name: &'static str,
    }

    #[test]
    fn flattening_keeps_order_and_values() {
        let row = to_row(&Outer {
            x: None,
            inner: Inner { a: 0.1 + 0.2, b: vec![1, 3] },
            name: "J0",
        })
        .unwrap();
        let keys: Vec<&str> = row.iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(keys, ["x", "inner.a", "inner.b", "name"]);
        assert_eq!(row[0].1, "");
        assert_eq!(row[1].1.parse::<f64>().unwrap(), 0.1 + 0.2);
        assert_eq!(row[2].1, "1 3");
    }
}
