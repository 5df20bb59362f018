//! TOML pipeline configuration with dotted command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ImputeOptions;
use crate::oracle::{Template, COUNTS_FILE, NETWORK_FILE, SPEEDS_FILE, TRUTH_FILE};
use crate::patterns::TsneParams;
use crate::solver::SpgdConfig;
use crate::timeflow::{DarOptions, TimeGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub network: PathBuf,
    pub counts: Vec<PathBuf>,
    pub speeds: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor_map: Option<PathBuf>,
    /// Known OD demand (`date,od,interval,vehicles`) for synthetic runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMethod {
    #[default]
    Tsne,
    Pca,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternConfig {
    pub count_clusters: usize,
    pub speed_clusters: usize,
    pub embedding: EmbeddingMethod,
    pub count_tsne: TsneParams,
    pub speed_tsne: TsneParams,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self {
            count_clusters: 8,
            speed_clusters: 8,
            embedding: EmbeddingMethod::Tsne,
            count_tsne: TsneParams::default(),
            speed_tsne: TsneParams {
                perplexity: 20.0,
                early_exaggeration: 2.0,
                learning_rate: 80.0,
                ..TsneParams::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChoiceConfig {
    pub theta: f64,
}

impl Default for ChoiceConfig {
    fn default() -> Self {
        Self { theta: 0.01 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    pub k: usize,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self { k: 3 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservedConfig {
    /// Link ids whose counts enter the estimation; all counted links when
    /// empty.
    pub links: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Worker threads for per-day stages; 0 uses all cores.
    pub workers: usize,
    pub seed: u64,
    pub cache: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            workers: 0,
            seed: 0,
            cache: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub holidays: Vec<chrono::NaiveDate>,
    /// Named OD groups, e.g. `northbound = ["W1->T", "W2->T"]`.
    pub od_groups: BTreeMap<String, Vec<String>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossvalConfig {
    /// Dates whose DAR is replaced by one built from the other days' mean
    /// speeds. Skipped when empty.
    pub holdout: Vec<chrono::NaiveDate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: InputConfig,
    pub grid: TimeGrid,
    #[serde(default)]
    pub paths: PathConfig,
    #[serde(default)]
    pub patterns: PatternConfig,
    #[serde(default)]
    pub choice: ChoiceConfig,
    #[serde(default)]
    pub dar: DarOptions,
    #[serde(default)]
    pub solver: SpgdConfig,
    #[serde(default)]
    pub impute: ImputeOptions,
    #[serde(default)]
    pub observed: ObservedConfig,
    pub output: OutputConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub report: ReportConfig,
    #[serde(default)]
    pub crossval: CrossvalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

/// Splits trailing `--a.b value` / `--a.b=value` arguments into pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(key) = arg.strip_prefix("--") else {
            return Err(Error::Config(format!(
                "unexpected argument `{arg}`; overrides look like --section.key value"
            )));
        };
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
        } else {
            let v = it
                .next()
                .ok_or_else(|| Error::Config(format!("override --{key} needs a value")))?;
            out.push((key.to_string(), v.clone()));
        }
    }
    Ok(out)
}

/// Interprets an override value as TOML (numbers, booleans, arrays), falling
/// back to a plain string.
fn override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(root: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a section")))?;
    }
    let mut value = override_value(raw);
    // Path-like lists given as a single word.
    if let (Some(toml::Value::Array(_)), toml::Value::String(s)) =
        (table.get(parts[parts.len() - 1]), &value)
    {
        value = toml::Value::Array(vec![toml::Value::String(s.clone())]);
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl PipelineConfig {
    /// Parses TOML text, applies overrides and resolves relative paths
    /// against `base`.
    pub fn from_toml(text: &str, overrides: &[(String, String)], base: &Path) -> Result<Self> {
        let mut root: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("invalid TOML: {e}")))?;
        for (k, v) in overrides {
            apply_override(&mut root, k, v)?;
        }
        let mut cfg: PipelineConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, overrides, base)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.input.network);
        self.input.counts.iter_mut().for_each(fix);
        self.input.speeds.iter_mut().for_each(fix);
        if let Some(p) = self.input.sensor_map.as_mut() {
            fix(p);
        }
        if let Some(p) = self.input.truth.as_mut() {
            fix(p);
        }
        fix(&mut self.output.dir);
    }

    /// Config for a dataset written by [`crate::oracle::write_dataset`], with
    /// paths relative to the dataset directory.
    pub fn synthetic(template: Template, grid: TimeGrid, n_days: usize) -> Self {
        let mut patterns = PatternConfig::default();
        let perplexity = (n_days.saturating_sub(1) as f64 / 3.0).clamp(1.0, 60.0);
        patterns.count_tsne.perplexity = perplexity;
        patterns.speed_tsne.perplexity = perplexity;
        // The default rates suit about a thousand days; with tens of days
        // they overshoot and the layout scatters.
        patterns.count_tsne.learning_rate = 50.0;
        patterns.speed_tsne.learning_rate = 50.0;
        // The generator has two day types.
        patterns.count_clusters = 2.min(n_days.max(1));
        patterns.speed_clusters = 2.min(n_days.max(1));
        Self {
            input: InputConfig {
                network: PathBuf::from(NETWORK_FILE),
                counts: vec![PathBuf::from(COUNTS_FILE)],
                speeds: vec![PathBuf::from(SPEEDS_FILE)],
                sensor_map: None,
                truth: Some(PathBuf::from(TRUTH_FILE)),
            },
            grid,
            paths: PathConfig {
                k: template.k_paths(),
            },
            patterns,
            choice: ChoiceConfig::default(),
            dar: DarOptions::default(),
            solver: SpgdConfig {
                batch_size: 1024,
                learning_rate: 5.0,
                epochs: 1000,
                ..Default::default()
            },
            impute: ImputeOptions::default(),
            observed: ObservedConfig::default(),
            output: OutputConfig {
                dir: PathBuf::from("out"),
            },
            run: RunConfig::default(),
            report: ReportConfig::default(),
            crossval: CrossvalConfig::default(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks files and parameter ranges before any computation.
    pub fn validate(&self) -> Result<()> {
        let must_exist = |p: &Path, what: &str| -> Result<()> {
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{what} file {} does not exist",
                    p.display()
                )))
            }
        };
        must_exist(&self.input.network, "network")?;
        if self.input.counts.is_empty() || self.input.speeds.is_empty() {
            return Err(Error::Config(
                "at least one count file and one speed file are required".into(),
            ));
        }
        for p in &self.input.counts {
            must_exist(p, "count")?;
        }
        for p in &self.input.speeds {
            must_exist(p, "speed")?;
        }
        if let Some(p) = &self.input.sensor_map {
            must_exist(p, "sensor map")?;
        }
        if let Some(p) = &self.input.truth {
            must_exist(p, "truth")?;
        }
        self.grid.validate()?;
        if self.paths.k == 0 {
            return Err(Error::Config("paths.k must be at least 1".into()));
        }
        if !(self.choice.theta > 0.0) {
            return Err(Error::Config(format!(
                "choice.theta {} must be positive",
                self.choice.theta
            )));
        }
        if self.patterns.count_clusters == 0 || self.patterns.speed_clusters == 0 {
            return Err(Error::Config("cluster counts must be at least 1".into()));
        }
        for t in [&self.patterns.count_tsne, &self.patterns.speed_tsne] {
            if !(t.perplexity > 0.0 && t.learning_rate > 0.0 && t.early_exaggeration >= 1.0)
                || t.iterations < 250
            {
                return Err(Error::Config(
                    "t-SNE needs positive perplexity and learning rate, exaggeration >= 1 and >= 250 iterations".into(),
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.impute.drop_fraction) {
            return Err(Error::Config(
                "impute.drop_fraction must lie in [0, 1]".into(),
            ));
        }
        self.solver.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[input]
network = "net.json"
counts = ["counts.csv"]
speeds = ["speeds.csv"]

[grid]
interval_s = 300.0
n_intervals = 288

[output]
dir = "out"
"#;

    #[test]
    fn defaults_and_paths() {
        let cfg = PipelineConfig::from_toml(MINIMAL, &[], Path::new("/data")).unwrap();
        assert_eq!(cfg.input.network, PathBuf::from("/data/net.json"));
        assert_eq!(cfg.solver.epochs, 300);
        assert_eq!(cfg.solver.batch_size, 8192);
        assert_eq!(cfg.solver.learning_rate, 5.0);
        assert_eq!(cfg.choice.theta, 0.01);
        assert_eq!(cfg.patterns.count_clusters, 8);
        assert_eq!(cfg.patterns.count_tsne.perplexity, 60.0);
        assert_eq!(cfg.impute.max_time_gap, 6);
    }

    #[test]
    fn dotted_overrides() {
        let args: Vec<String> = [
            "--solver.epochs",
            "100",
            "--choice.theta=0.02",
            "--run.cache",
            "false",
            "--output.dir",
            "elsewhere",
            "--patterns.count_tsne.perplexity",
            "12",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let ov = parse_overrides(&args).unwrap();
        let cfg = PipelineConfig::from_toml(MINIMAL, &ov, Path::new("/d")).unwrap();
        assert_eq!(cfg.solver.epochs, 100);
        assert_eq!(cfg.choice.theta, 0.02);
        assert!(!cfg.run.cache);
        assert_eq!(cfg.output.dir, PathBuf::from("/d/elsewhere"));
        assert_eq!(cfg.patterns.count_tsne.perplexity, 12.0);
        let ov = parse_overrides(&["--input.counts".into(), "c2.csv".into()]).unwrap();
        let cfg = PipelineConfig::from_toml(MINIMAL, &ov, Path::new("/d")).unwrap();
        assert_eq!(cfg.input.counts, vec![PathBuf::from("/d/c2.csv")]);
    }

    #[test]
    fn bad_overrides() {
        assert!(parse_overrides(&["solver.epochs".into()]).is_err());
        assert!(parse_overrides(&["--solver.epochs".into()]).is_err());
        let ov = vec![("solver.nonsense".to_string(), "1".to_string())];
        assert!(PipelineConfig::from_toml(MINIMAL, &ov, Path::new("/")).is_err());
    }

    #[test]
    fn missing_network_file() {
        let cfg = PipelineConfig::from_toml(MINIMAL, &[], Path::new("/nonexistent")).unwrap();
        match cfg.validate() {
            Err(Error::Config(msg)) => assert!(msg.contains("network")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip() {
        let cfg = PipelineConfig::from_toml(MINIMAL, &[], Path::new("/data")).unwrap();
        let text = cfg.to_toml().unwrap();
        let again = PipelineConfig::from_toml(&text, &[], Path::new("/other")).unwrap();
        assert_eq!(again, cfg);
    }
}
