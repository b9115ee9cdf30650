use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::edf::synthetic::{SyntheticConfig, IMAGERY_RUNS};
use crate::edf::RunKind;
use crate::encoding::EncoderConfig;
use crate::energy::EnergyModel;
use crate::federated::LocalConfig;
use crate::models::{LifConfig, LstmArch, Model, ModelKind, TrunkArch};
use crate::rng;

/// Environment variable that replaces `dataset.path`.
pub const DATA_ROOT_ENV: &str = "SPIKEFED_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub federated: FederatedConfig,
    #[serde(default)]
    pub energy: EnergyModel,
    /// Generator settings for `dataset.synthetic`. Its `seed` is mixed
    /// with the master seed.
    #[serde(default)]
    pub synthetic: SyntheticConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Directory holding `S001/S001R04.edf` style files.
    pub path: PathBuf,
    pub subjects: Vec<String>,
    pub runs: Vec<u32>,
    /// Samples per trial window.
    pub window: usize,
    pub sampling_rate: f64,
    /// Fraction of each (subject, class) stratum used for training.
    pub split_ratio: f64,
    /// Generate seeded surrogate recordings instead of reading `path`.
    pub synthetic: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::from("data"),
            subjects: vec!["S001".into(), "S002".into(), "S003".into()],
            runs: IMAGERY_RUNS.to_vec(),
            window: 640,
            sampling_rate: 160.0,
            split_ratio: 0.8,
            synthetic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Method trained by `train` when none is given on the command line.
    pub kind: ModelKind,
    /// Methods compared by `compare`; the first is the ratio reference.
    pub methods: Vec<ModelKind>,
    pub trunk: TrunkArch,
    pub lstm: LstmArch,
    pub lif: LifConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Snn,
            methods: ModelKind::ALL.to_vec(),
            trunk: TrunkArch::default(),
            lstm: LstmArch::default(),
            lif: LifConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederatedConfig {
    pub rounds: usize,
    pub lr: f64,
    pub batch: usize,
    pub local_epochs: usize,
}

impl Default for FederatedConfig {
    fn default() -> Self {
        let l = LocalConfig::default();
        Self {
            rounds: 60,
            lr: l.lr,
            batch: l.batch,
            local_epochs: l.epochs,
        }
    }
}

impl FederatedConfig {
    pub fn local(&self) -> LocalConfig {
        LocalConfig {
            epochs: self.local_epochs,
            lr: self.lr,
            batch: self.batch,
        }
    }
}

fn invalid(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(msg.into())
}

/// Sets `a.b.c = value` in a TOML table, creating intermediate tables.
fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ExperimentError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| invalid(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    // Bare words that are not valid TOML values are taken as strings.
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| invalid(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Parses TOML text, applies `key=value` overrides, then validates.
    /// Relative paths are resolved against `base`.
    pub fn from_toml(
        text: &str,
        overrides: &[String],
        base: &Path,
        data_root: Option<PathBuf>,
    ) -> Result<Self, ExperimentError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| invalid(e.to_string()))?;
        if let Some(root) = data_root {
            cfg.dataset.path = root;
        }
        if cfg.dataset.path.is_relative() {
            cfg.dataset.path = base.join(&cfg.dataset.path);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths are taken from its directory.
    pub fn load(path: &Path, overrides: &[String], data_root: Option<PathBuf>) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, overrides, base, data_root)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let d = &self.dataset;
        if d.subjects.is_empty() {
            return Err(invalid("dataset.subjects is empty"));
        }
        let mut subjects = d.subjects.clone();
        subjects.sort();
        subjects.dedup();
        if subjects.len() != d.subjects.len() {
            return Err(invalid("dataset.subjects has duplicates"));
        }
        for s in &d.subjects {
            if subject_index(s).is_none() {
                return Err(invalid(format!("subject id `{s}` is not of the form S001")));
            }
        }
        if d.runs.is_empty() {
            return Err(invalid("dataset.runs is empty"));
        }
        if let Some(r) = d.runs.iter().find(|&&r| RunKind::for_run(r).is_none()) {
            return Err(invalid(format!("run {r} is not a motor-imagery run (4, 6, 8, 10, 12, 14)")));
        }
        if d.window == 0 {
            return Err(invalid("dataset.window must be positive"));
        }
        if !(d.sampling_rate > 0.0 && d.sampling_rate.is_finite()) {
            return Err(invalid("dataset.sampling_rate must be positive"));
        }
        if !(d.split_ratio > 0.0 && d.split_ratio < 1.0) {
            return Err(invalid(format!("dataset.split_ratio {} outside (0, 1)", d.split_ratio)));
        }
        if !d.synthetic && !d.path.is_dir() {
            return Err(invalid(format!(
                "dataset.path {} does not exist (set {DATA_ROOT_ENV} or use synthetic mode)",
                d.path.display()
            )));
        }
        if d.synthetic && (self.synthetic.records == 0 || self.synthetic.sampling_rate as f64 != d.sampling_rate) {
            return Err(invalid("synthetic generator needs records > 0 and the dataset sampling rate"));
        }
        self.encoder.validate().map_err(|e| invalid(e.to_string()))?;
        if self.federated.rounds == 0 {
            return Err(invalid("federated.rounds must be at least 1"));
        }
        self.federated.local().validate().map_err(|e| invalid(e.to_string()))?;
        self.energy.validate().map_err(|e| invalid(e.to_string()))?;
        if self.model.methods.is_empty() {
            return Err(invalid("model.methods is empty"));
        }
        let mut m = self.model.methods.clone();
        m.sort();
        m.dedup();
        if m.len() != self.model.methods.len() {
            return Err(invalid("model.methods has duplicates"));
        }
        for kind in ModelKind::ALL {
            let model = self.build_model(kind);
            model.validate().map_err(|e| invalid(e.to_string()))?;
            if kind == ModelKind::Lstm && self.model.lstm.window != d.window
                || kind != ModelKind::Lstm && self.model.trunk.window != d.window
            {
                return Err(invalid(format!("{kind} architecture window differs from dataset.window {}", d.window)));
            }
        }
        Ok(())
    }

    pub fn build_model(&self, kind: ModelKind) -> Model {
        Model::new(kind, self.model.trunk, self.model.lstm, self.model.lif)
    }

    /// Encoder settings with the seed drawn from the master stream.
    pub fn effective_encoder(&self) -> EncoderConfig {
        EncoderConfig {
            seed: rng::derive_u64(self.seed, &["encoder", &self.encoder.seed.to_string()]),
            ..self.encoder.clone()
        }
    }

    pub fn effective_synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            runs: self.dataset.runs.clone(),
            seed: rng::derive_u64(self.seed, &["synthetic", &self.synthetic.seed.to_string()]),
            ..self.synthetic.clone()
        }
    }

    pub fn split_seed(&self) -> u64 {
        rng::derive_u64(self.seed, &["split"])
    }

    pub fn client_seed(&self) -> u64 {
        rng::derive_u64(self.seed, &["clients"])
    }

    pub fn init_seed(&self, kind: ModelKind) -> u64 {
        rng::derive_u64(self.seed, &["init", kind.as_str()])
    }

    /// The config as pretty JSON, embedded in every report.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// `S007` -> 6.
pub(crate) fn subject_index(id: &str) -> Option<usize> {
    let digits = id.strip_prefix('S')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse::<usize>().ok()?.checked_sub(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, overrides: &[&str]) -> Result<ExperimentConfig, ExperimentError> {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        ExperimentConfig::from_toml(text, &o, Path::new("/tmp"), None)
    }

    #[test]
    fn seed_is_mandatory() {
        let err = parse("[dataset]\nsynthetic = true\n", &[]).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn defaults_follow_the_reference_setup() {
        let cfg = parse("seed = 3\n[dataset]\nsynthetic = true\n", &[]).unwrap();
        assert_eq!(cfg.federated.lr, 0.01);
        assert_eq!(cfg.federated.batch, 64);
        assert_eq!(cfg.federated.local_epochs, 1);
        assert_eq!(cfg.federated.rounds, 60);
        assert_eq!(cfg.dataset.subjects.len(), 3);
        assert_eq!(cfg.dataset.split_ratio, 0.8);
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/runs"));
    }

    #[test]
    fn overrides_replace_keys() {
        let cfg = parse(
            "seed = 3\n[dataset]\nsynthetic = true\n",
            &["encoder.scheme=rate", "encoder.steps=12", "federated.rounds=5", "model.kind=cnn"],
        )
        .unwrap();
        assert_eq!(cfg.encoder.steps, 12);
        assert_eq!(cfg.encoder.scheme, crate::encoding::EncoderScheme::Rate);
        assert_eq!(cfg.federated.rounds, 5);
        assert_eq!(cfg.model.kind, ModelKind::Cnn);
        assert!(parse("seed = 1", &["noequals"]).is_err());
    }

    #[test]
    fn validation_failures() {
        let base = "seed = 1\n[dataset]\nsynthetic = true\n";
        for o in [
            "federated.rounds=0",
            "dataset.split_ratio=1.0",
            "dataset.runs=[3]",
            "encoder.steps=0",
            "encoder.delta_threshold=0.0",
            "energy.e_ac=1.0",
            "dataset.subjects=[]",
            "dataset.subjects=[\"X1\"]",
            "model.methods=[\"snn\", \"snn\"]",
            "dataset.window=320",
            "encoder.bogus=1",
        ] {
            let err = parse(base, &[o]).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{o}: {err}");
        }
        let err = parse("seed = 1\n[dataset]\npath = \"/definitely/missing\"\n", &[]).unwrap_err();
        assert!(err.to_string().contains("/definitely/missing"));
    }

    #[test]
    fn env_root_replaces_path() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_toml(
            "seed = 1\n[dataset]\npath = \"/definitely/missing\"\n",
            &[],
            Path::new("/tmp"),
            Some(dir.path().to_path_buf()),
        )
        .unwrap();
        assert_eq!(cfg.dataset.path, dir.path());
    }

    #[test]
    fn subject_ids() {
        assert_eq!(subject_index("S001"), Some(0));
        assert_eq!(subject_index("S109"), Some(108));
        assert_eq!(subject_index("S000"), None);
        assert_eq!(subject_index("X001"), None);
        assert_eq!(subject_index("S"), None);
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let cfg = parse("seed = 9\n[dataset]\nsynthetic = true\n", &[]).unwrap();
        let seeds = [
            cfg.split_seed(),
            cfg.client_seed(),
            cfg.init_seed(ModelKind::Snn),
            cfg.init_seed(ModelKind::Cnn),
            cfg.effective_encoder().seed,
            cfg.effective_synthetic().seed,
        ];
        let mut s = seeds.to_vec();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), seeds.len());
    }
}
