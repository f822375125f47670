//! TOML experiment files and `--set key=value` overrides.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use sparsefed_core::fedsim::ExperimentConfig;
use toml::{Table, Value};

/// Parses the right-hand side of an override. Anything that is not a TOML
/// literal is taken as a bare string, so `algorithm=fedtiny` works unquoted.
fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Sets the dotted `key` in `table`, creating intermediate tables.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{assignment}` is not of the form key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` has an empty segment");
    }
    let (last, parents) = path.split_last().expect("split yields one segment");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override `{key}`: `{p}` is not a section"))?;
    }
    cur.insert(last.to_string(), parse_value(raw));
    Ok(())
}

/// Parses a config from TOML text with overrides applied, then validates it.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut table: Table = text.parse().context("config is not valid TOML")?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    // Round-trip through text so deserialization errors carry the key path.
    let merged = toml::to_string(&table)?;
    let cfg: ExperimentConfig = toml::from_str(&merged).map_err(|e| anyhow!("invalid config: {e}"))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    parse_config(&text, overrides).with_context(|| format!("in {}", path.display()))
}

pub fn to_toml(cfg: &ExperimentConfig) -> Result<String> {
    Ok(toml::to_string(cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "algorithm = \"fedtiny\"\ndensity = 0.1\nrounds = 3\n";

    #[test]
    fn overrides() {
        let cfg = parse_config(
            MINIMAL,
            &[
                "density=0.01".into(),
                "data.alpha = 0.3".into(),
                "schedule.granularity=layer".into(),
                "model.hidden=[8, 8]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.density, 0.01);
        assert_eq!(cfg.data.alpha, 0.3);
        assert_eq!(cfg.model.hidden, vec![8, 8]);
        assert!(parse_config(MINIMAL, &["density".into()]).is_err());
        assert!(parse_config(MINIMAL, &["density.x=1".into()]).is_err());
    }

    #[test]
    fn field_diagnostics() {
        let err = parse_config(MINIMAL, &["density=2.0".into()]).unwrap_err();
        assert!(format!("{err:#}").contains("density"), "{err:#}");
        let err = parse_config(MINIMAL, &["train.epochs=2".into()]).unwrap_err();
        assert!(format!("{err:#}").contains("epochs"), "{err:#}");
        let err = parse_config("density = 0.1\nrounds = 3\n", &[]).unwrap_err();
        assert!(format!("{err:#}").contains("algorithm"), "{err:#}");
    }
}
