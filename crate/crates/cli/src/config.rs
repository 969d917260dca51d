//! Config loading with `--set key=value` overrides.

use std::path::Path;

use anyhow::{bail, Context, Result};
use nat::pipeline::PipelineConfig;
use toml::{Table, Value};

/// Parses an override value as a TOML literal, falling back to a bare
/// string so `--set data.h=h.jsonl` works unquoted.
fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Sets `dotted` (e.g. `weak_sources.0.label_noise`) in `root`, creating
/// intermediate tables as needed.
pub fn set_path(root: &mut Table, dotted: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = dotted.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("malformed key `{dotted}`");
    }
    let (last, init) = parts.split_last().expect("split yields one part");
    let mut cur = root;
    let mut walked = String::new();
    for (i, part) in init.iter().enumerate() {
        if !walked.is_empty() {
            walked.push('.');
        }
        walked.push_str(part);
        let slot = cur
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        let next = match slot {
            Value::Array(items) => return set_in_array(items, &parts[i + 1..], value, &walked),
            Value::Table(t) => t,
            _ => bail!("`{walked}` is not a table"),
        };
        cur = next;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn set_in_array(items: &mut [Value], rest: &[&str], value: Value, walked: &str) -> Result<()> {
    let idx: usize = rest[0]
        .parse()
        .with_context(|| format!("`{walked}` is a list; expected an index, found `{}`", rest[0]))?;
    let len = items.len();
    let item = items
        .get_mut(idx)
        .with_context(|| format!("`{walked}` has {len} entries, index {idx} is out of range"))?;
    if rest.len() == 1 {
        *item = value;
        return Ok(());
    }
    match item {
        Value::Table(t) => set_path(t, &rest[1..].join("."), value),
        _ => bail!("`{walked}.{idx}` is not a table"),
    }
}

fn to_config(table: &Table) -> std::result::Result<PipelineConfig, toml::de::Error> {
    table.clone().try_into()
}

/// Applies `key=value` overrides one at a time, so a rejected override is
/// reported under its own key.
pub fn apply_overrides(mut table: Table, sets: &[String]) -> Result<Table> {
    for set in sets {
        let (key, raw) = set
            .split_once('=')
            .with_context(|| format!("--set expects key=value, got `{set}`"))?;
        let key = key.trim();
        set_path(&mut table, key, parse_value(raw.trim())).with_context(|| format!("--set {key}"))?;
        if let Err(e) = to_config(&table) {
            bail!("--set {key}: {}", e.message());
        }
    }
    Ok(table)
}

/// Command-line settings that shape the effective config.
#[derive(Debug, Clone, Default)]
pub struct ConfigArgs<'a> {
    pub path: Option<&'a Path>,
    pub sets: &'a [String],
    pub seed: Option<u64>,
    pub max_seconds: Option<f64>,
}

/// Reads the config file (or starts from the reference setup), applies
/// overrides and resolves relative paths against the file's directory.
pub fn load_config(args: &ConfigArgs<'_>) -> Result<PipelineConfig> {
    let base: Table = match args.path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            text.parse::<Table>()
                .with_context(|| format!("{} is not valid TOML", p.display()))?
        }
        None => Table::try_from(PipelineConfig::reference()).context("serializing the reference config")?,
    };
    if let Err(e) = to_config(&base) {
        match args.path {
            Some(p) => bail!("{}: {}", p.display(), e.message()),
            None => bail!("{}", e.message()),
        }
    }
    let table = apply_overrides(base, args.sets)?;
    let mut config = to_config(&table).map_err(|e| anyhow::anyhow!("{}", e.message()))?;
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(t) = args.max_seconds {
        config.t_max = t;
    }
    if let Some(dir) = args.path.and_then(Path::parent) {
        config.resolve_paths(dir);
    }
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_table() -> Table {
        Table::try_from(PipelineConfig::reference()).unwrap()
    }

    #[test]
    fn overrides_nested_keys_and_list_entries() {
        let t = apply_overrides(
            reference_table(),
            &[
                "noise_aware.lambda=0.25".into(),
                "weak_sources.1.label_noise=0.3".into(),
                "t_max=60".into(),
                "data.h=h.jsonl".into(),
            ],
        )
        .unwrap();
        let c = to_config(&t).unwrap();
        assert_eq!(c.noise_aware.lambda, 0.25);
        assert_eq!(c.weak_sources[1].label_noise, 0.3);
        assert_eq!(c.t_max, 60.0);
        assert_eq!(c.data.h.as_deref(), Some(Path::new("h.jsonl")));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = apply_overrides(reference_table(), &["noise_aware.lamda=0.2".into()]).unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("noise_aware.lamda") && msg.contains("lamda"), "{msg}");
    }

    #[test]
    fn type_mismatch_is_rejected() {
        let err = apply_overrides(reference_table(), &["seed=abc".into()]).unwrap_err();
        assert!(format!("{err:#}").contains("--set seed"));
    }

    #[test]
    fn list_index_out_of_range_is_rejected() {
        assert!(apply_overrides(reference_table(), &["weak_sources.5.seed=1".into()]).is_err());
    }

    #[test]
    fn missing_equals_sign_is_rejected() {
        assert!(apply_overrides(reference_table(), &["seed".into()]).is_err());
    }
}
