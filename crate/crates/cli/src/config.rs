use std::path::Path;

use anyhow::{bail, Context, Result};
use hipexo::signal::EnvelopeConfig;
use hipexo::{LspiConfig, PlantConfig, Protocol, TrialConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Contents of a config file: `[trial]`, `[plant]`, `[lspi]`, `[filter]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub trial: Protocol,
    pub plant: PlantConfig,
    pub lspi: LspiConfig,
    pub filter: EnvelopeConfig,
}

impl RunConfig {
    /// Reads `path` (defaults when absent) and applies `section.key=value`
    /// overrides in order. Unknown keys are rejected.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<Table>()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Table::new(),
        };
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .context("invalid configuration")?;
        cfg.trial_config()
            .validate()
            .context("invalid configuration")?;
        Ok(cfg)
    }

    pub fn trial_config(&self) -> TrialConfig {
        TrialConfig {
            protocol: self.trial.clone(),
            plant: self.plant.clone(),
            lspi: self.lspi.clone(),
        }
    }
}

fn apply_override(table: &mut Table, item: &str) -> Result<()> {
    let Some((key, raw)) = item.split_once('=') else {
        bail!("override `{item}` is not of the form section.key=value");
    };
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override `{item}` has an empty key segment");
    }
    let raw = raw.trim();
    // bare words that are not TOML literals are taken as strings
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));

    let (last, parents) = path.split_last().expect("non-empty path");
    let mut node = table;
    for part in parents {
        node = node
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .with_context(|| format!("override `{item}`: `{part}` is not a section"))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_take_precedence_and_parse_types() {
        let cfg = RunConfig::load(
            None,
            &[
                "trial.cycle_budget=0".into(),
                "lspi.r_u=[[0.02, 0.0], [0.0, 0.02]]".into(),
                "plant.work_noise_std = 0".into(),
                "trial.timing_bounds.peak_max=39".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.trial.cycle_budget, 0);
        assert_eq!(cfg.lspi.r_u, [[0.02, 0.0], [0.0, 0.02]]);
        assert_eq!(cfg.plant.work_noise_std, 0.0);
        assert_eq!(cfg.trial.timing_bounds.peak_max, 39.0);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(RunConfig::load(None, &["trial.cycle_budgt=3".into()]).is_err());
        assert!(RunConfig::load(None, &["plants.seed=3".into()]).is_err());
        assert!(RunConfig::load(None, &["trial".into()]).is_err());
    }

    #[test]
    fn invalid_values_are_errors() {
        assert!(RunConfig::load(None, &["trial.eta_target=1.5".into()]).is_err());
        assert!(RunConfig::load(None, &["trial.window_cycles=fast".into()]).is_err());
    }

    #[test]
    fn shipped_default_file_matches_builtin_defaults() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
        assert_eq!(
            RunConfig::load(Some(&path), &[]).unwrap(),
            RunConfig::default()
        );
    }
}
