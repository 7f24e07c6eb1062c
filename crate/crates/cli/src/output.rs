use std::path::Path;

use rwre::experiments::{CheckKind, ExperimentResult, Table};
use rwre::quenched::oracle::ValidationCase;
use serde::Serialize;
use serde_json::Value;

/// 17 significant digits, enough to round-trip any f64.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn csv<R, I, S>(header: &[&str], rows: R) -> String
where
    R: IntoIterator<Item = I>,
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub fn table_csv(t: &Table) -> String {
    let header: Vec<&str> = t.columns.iter().map(String::as_str).collect();
    csv(&header, t.rows.iter().map(|row| row.iter().map(|&x| num(x)).collect::<Vec<_>>()))
}

pub fn checks_csv(r: &ExperimentResult) -> String {
    let rows = r.checks.iter().map(|c| {
        let kind = match c.kind {
            CheckKind::Hard => "hard",
            CheckKind::Soft => "soft",
        };
        [c.name.clone(), kind.into(), opt(c.value), opt(c.lo), opt(c.hi), c.passed.to_string(), c.note.clone()]
    });
    csv(&["name", "kind", "value", "lo", "hi", "passed", "note"], rows)
}

pub fn series_csv(r: &ExperimentResult) -> String {
    let rows = r.series.iter().flat_map(|s| s.x.iter().zip(&s.y).map(|(x, y)| [s.name.clone(), num(*x), num(*y)]));
    csv(&["series", "x", "y"], rows)
}

pub fn statistics_csv(r: &ExperimentResult) -> String {
    csv(&["name", "value"], r.statistics.iter().map(|(k, v)| [k.clone(), num(*v)]))
}

/// Key/value CSV of a JSON object; nested keys are joined by '.'.
pub fn flat_csv(value: &Value) -> String {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<[String; 2]>) {
        let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
        match v {
            Value::Object(m) => {
                for (k, v) in m {
                    walk(&key(k), v, out);
                }
            }
            Value::Array(a) => {
                for (i, v) in a.iter().enumerate() {
                    walk(&key(&i.to_string()), v, out);
                }
            }
            Value::Number(n) => {
                let s = if n.is_f64() { num(n.as_f64().unwrap_or(f64::NAN)) } else { n.to_string() };
                out.push([prefix.to_string(), s]);
            }
            Value::String(s) => out.push([prefix.to_string(), s.clone()]),
            Value::Bool(b) => out.push([prefix.to_string(), b.to_string()]),
            Value::Null => out.push([prefix.to_string(), String::new()]),
        }
    }
    let mut rows = Vec::new();
    walk("", value, &mut rows);
    csv(&["name", "value"], rows)
}

pub fn validation_csv(cases: &[ValidationCase]) -> String {
    let rows = cases.iter().map(|c| {
        [
            c.case.to_string(),
            c.seed.to_string(),
            c.left.to_string(),
            c.right.to_string(),
            c.a.to_string(),
            c.b.to_string(),
            num(c.exit_rel),
            num(c.mean_rel),
            num(c.variance_rel),
            c.failing().is_empty().to_string(),
        ]
    });
    csv(&["case", "seed", "left", "right", "a", "b", "exit_rel", "mean_rel", "variance_rel", "passed"], rows)
}

/// Result JSON without execution details: the worker count lives in the sidecar.
pub fn result_json(r: &ExperimentResult) -> Result<String, String> {
    let mut v = serde_json::to_value(r).map_err(|e| e.to_string())?;
    if let Some(Value::Object(c)) = v.get_mut("config") {
        c.remove("workers");
    }
    pretty(&v)
}

pub fn pretty<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string_pretty(v).map(|mut s| {
        s.push('\n');
        s
    })
    .map_err(|e| e.to_string())
}

pub fn write(dir: &Path, file: &str, contents: &str) -> Result<(), String> {
    let path = dir.join(file);
    std::fs::write(&path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, 2.5e-300, -7.0, 123456789.0123456] {
            let s = num(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-');
            assert_eq!(mantissa.chars().filter(|c| c.is_ascii_digit()).count(), 17);
        }
        assert_eq!(num(f64::NAN), "nan");
    }

    #[test]
    fn fields_are_quoted() {
        assert_eq!(csv(&["a"], [["x,y"], ["say \"hi\""]]), "a\n\"x,y\"\n\"say \"\"hi\"\"\"\n");
    }

    #[test]
    fn table_layout() {
        let t = Table { columns: vec!["env".into(), "w1".into()], rows: vec![vec![0.0, 0.5]] };
        assert_eq!(table_csv(&t), "env,w1\n0.0000000000000000e0,5.0000000000000000e-1\n");
    }
}
