use std::path::Path;

use rwre::experiments::ExperimentConfig;
use serde_json::Value;

pub const SCHEMA_VERSION: u64 = 1;

/// Command-line values that replace the file's.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

/// Reads `{"schema_version": 1, ...ExperimentConfig fields}`. Unknown keys
/// and a missing seed are errors.
pub fn load(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    parse(&text, overrides).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn parse(text: &str, overrides: &Overrides) -> Result<ExperimentConfig, String> {
    let value: Value = serde_json::from_str(text).map_err(|e| format!("invalid JSON: {e}"))?;
    let Value::Object(mut map) = value else {
        return Err("config must be a JSON object".into());
    };
    match map.remove("schema_version") {
        Some(Value::Number(n)) if n.as_u64() == Some(SCHEMA_VERSION) => {}
        Some(v) => return Err(format!("unsupported schema_version {v}, expected {SCHEMA_VERSION}")),
        None => return Err(format!("missing schema_version (expected {SCHEMA_VERSION})")),
    }
    if let Some(seed) = overrides.seed {
        map.insert("seed".into(), seed.into());
    }
    if let Some(workers) = overrides.workers {
        map.insert("workers".into(), workers.into());
    }
    if !map.contains_key("seed") {
        return Err("missing seed: every run needs an explicit seed".into());
    }
    serde_json::from_value(Value::Object(map)).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config() {
        let c = parse(r#"{"schema_version": 1, "seed": 5}"#, &Overrides::default()).unwrap();
        assert_eq!(c, ExperimentConfig::new(5));
    }

    #[test]
    fn overrides_win() {
        let o = Overrides { seed: Some(9), workers: Some(4) };
        let c = parse(r#"{"schema_version": 1, "seed": 5, "workers": 2}"#, &o).unwrap();
        assert_eq!((c.seed, c.workers), (9, 4));
        let c = parse(r#"{"schema_version": 1}"#, &o).unwrap();
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn rejections() {
        let o = Overrides::default();
        assert!(parse(r#"{"seed": 5}"#, &o).unwrap_err().contains("schema_version"));
        assert!(parse(r#"{"schema_version": 2, "seed": 5}"#, &o).is_err());
        assert!(parse(r#"{"schema_version": 1}"#, &o).unwrap_err().contains("seed"));
        assert!(parse(r#"{"schema_version": 1, "seed": 5, "colour": 1}"#, &o).unwrap_err().contains("colour"));
        assert!(parse("[1]", &o).is_err());
    }
}
