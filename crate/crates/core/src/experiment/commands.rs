use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cache::{read_cache, sha256_hex, write_cache};
use super::config::{subject_index, ExperimentConfig};
use super::output::{create_dir, read_json, read_text, read_tsv, write_atomic, write_json, TsvLog};
use super::ExperimentError;
use crate::edf::synthetic::{generate_run, subject_id};
use crate::edf::{
    build_trials, inspect_summary, read_edf_file, split_normalize, write_edf, DatasetSplit, EdfError,
    RunFile, TaskSpec, EXPECTED_SUBJECT_SAMPLES,
};
use crate::energy::{build_report, count_ops, EnergyReport};
use crate::federated::{partition_by_subject, run_rounds, RoundResult};
use crate::models::{ModelKind, SpikeStats};
use crate::numerics::{read_checkpoint, write_checkpoint, Fingerprint};

const VERSION: &str = env!("CARGO_PKG_VERSION");

fn cache_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("cache")
}

fn run_dir(cfg: &ExperimentConfig, kind: ModelKind) -> PathBuf {
    cfg.output_dir.join("runs").join(kind.as_str())
}

fn compare_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("compare")
}

/// Written when a command starts and again, atomically, when it completes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub method: Option<ModelKind>,
    /// `running` or `complete`.
    pub status: String,
    pub dataset_digest: String,
    pub config: serde_json::Value,
    /// Artifact name -> path relative to the output directory.
    pub files: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(cfg: &ExperimentConfig, command: &str, method: Option<ModelKind>, digest: &str) -> Self {
        Self {
            tool_version: VERSION.into(),
            command: command.into(),
            method,
            status: "running".into(),
            dataset_digest: digest.into(),
            config: cfg.snapshot(),
            files: BTreeMap::new(),
        }
    }

    fn add(&mut self, cfg: &ExperimentConfig, name: &str, path: &Path) {
        let rel = path.strip_prefix(&cfg.output_dir).unwrap_or(path);
        self.files.insert(name.into(), rel.display().to_string());
    }
}

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub split: DatasetSplit,
    pub digest: String,
    pub cache_path: PathBuf,
    /// `subject class train test` table.
    pub summary: String,
    pub files: Vec<PathBuf>,
}

fn locate_run(root: &Path, subject: &str, run: u32) -> Option<PathBuf> {
    let name = RunFile {
        subject: subject.to_string(),
        run,
    }
    .file_name();
    [root.join(subject).join(&name), root.join(&name)]
        .into_iter()
        .find(|p| p.is_file())
}

/// Writes the configured subjects and runs as EDF files under
/// `<output_dir>/synthetic`.
fn materialize_synthetic(cfg: &ExperimentConfig) -> Result<PathBuf, ExperimentError> {
    let root = cfg.output_dir.join("synthetic");
    let gen = cfg.effective_synthetic();
    for s in &cfg.dataset.subjects {
        let index = subject_index(s).expect("validated subject id");
        let dir = root.join(s);
        create_dir(&dir)?;
        for &run in &cfg.dataset.runs {
            let Some(rec) = generate_run(&gen, index, run) else {
                continue;
            };
            debug_assert_eq!(subject_id(index), *s);
            let path = dir.join(
                RunFile {
                    subject: s.clone(),
                    run,
                }
                .file_name(),
            );
            let bytes = write_edf(&rec).map_err(|source| ExperimentError::Edf {
                path: path.clone(),
                source,
            })?;
            write_atomic(&path, &bytes)?;
        }
    }
    Ok(root)
}

/// Sample total over runs 1-14 when a subject directory holds all of them.
fn subject_sample_total(root: &Path, subject: &str) -> Result<Option<usize>, ExperimentError> {
    let paths: Vec<PathBuf> = (1..=14).filter_map(|r| locate_run(root, subject, r)).collect();
    if paths.len() != 14 {
        return Ok(None);
    }
    let mut total = 0;
    for p in paths {
        let rec = read_edf_file(&p).map_err(|source| ExperimentError::Edf { path: p.clone(), source })?;
        total += rec.num_samples();
    }
    Ok(Some(total))
}

fn summary_table(split: &DatasetSplit) -> String {
    let mut out = String::from("subject\tclass\ttrain\ttest\n");
    for ((subject, class), (train, test)) in split.summary() {
        let _ = writeln!(out, "{subject}\t{}\t{train}\t{test}", class.name());
    }
    out
}

/// Reads every configured run, cuts labelled windows, splits and normalizes
/// them, and writes the cache with its digest.
pub fn ingest(cfg: &ExperimentConfig) -> Result<IngestOutcome, ExperimentError> {
    let root = if cfg.dataset.synthetic {
        materialize_synthetic(cfg)?
    } else {
        cfg.dataset.path.clone()
    };
    let mut examples = Vec::new();
    let mut files = Vec::new();
    let mut channels: Option<usize> = None;
    for subject in &cfg.dataset.subjects {
        for &run in &cfg.dataset.runs {
            let path = locate_run(&root, subject, run).ok_or_else(|| {
                ExperimentError::MissingFile(root.join(subject).join(
                    RunFile {
                        subject: subject.clone(),
                        run,
                    }
                    .file_name(),
                ))
            })?;
            let rec = read_edf_file(&path).map_err(|source| ExperimentError::Edf {
                path: path.clone(),
                source,
            })?;
            rec.ensure_sampling_rate(cfg.dataset.sampling_rate)
                .map_err(|source| ExperimentError::Edf {
                    path: path.clone(),
                    source,
                })?;
            match channels {
                None => channels = Some(rec.num_channels()),
                Some(c) if c != rec.num_channels() => {
                    return Err(ExperimentError::Edf {
                        path,
                        source: EdfError::Header {
                            field: "ns",
                            offset: 252,
                            reason: format!("{} signals, earlier files have {c}", rec.num_channels()),
                        },
                    })
                }
                Some(_) => {}
            }
            let task = TaskSpec::for_run(run, cfg.dataset.window).expect("validated run");
            let set = build_trials(&rec, &task).map_err(|source| ExperimentError::Trials {
                path: path.clone(),
                source,
            })?;
            examples.extend(set.examples);
            files.push(path);
        }
        if let Some(total) = subject_sample_total(&root, subject)? {
            if total != EXPECTED_SUBJECT_SAMPLES {
                log::warn!("{subject}: {total} samples over runs 1-14, expected {EXPECTED_SUBJECT_SAMPLES}");
            }
        }
    }
    let in_channels = cfg.model.trunk.in_channels;
    if channels != Some(in_channels) {
        return Err(ExperimentError::Config(format!(
            "recordings have {} channels but the models expect {in_channels}",
            channels.unwrap_or(0)
        )));
    }
    let split = split_normalize(examples, cfg.dataset.split_ratio, cfg.split_seed())?;
    let cache = write_cache(&split);
    let dir = cache_dir(cfg);
    let cache_path = dir.join("split.bin");
    write_atomic(&cache_path, &cache.bytes)?;
    write_atomic(&dir.join("split.sha256"), format!("{}  split.bin\n", cache.digest).as_bytes())?;
    let summary = summary_table(&split);
    write_atomic(&dir.join("summary.tsv"), summary.as_bytes())?;
    Ok(IngestOutcome {
        split,
        digest: cache.digest,
        cache_path,
        summary,
        files,
    })
}

/// Loads the cache and checks it against its recorded digest.
fn load_cache(cfg: &ExperimentConfig) -> Result<(DatasetSplit, String), ExperimentError> {
    let dir = cache_dir(cfg);
    let path = dir.join("split.bin");
    let bytes = std::fs::read(&path).map_err(|_| ExperimentError::MissingFile(path.clone()))?;
    let recorded = read_text(&dir.join("split.sha256"))?;
    let digest = sha256_hex(&bytes);
    if recorded.split_whitespace().next() != Some(digest.as_str()) {
        return Err(ExperimentError::Cache {
            path,
            reason: "content does not match split.sha256; rerun ingest".into(),
        });
    }
    Ok((read_cache(&bytes, &path)?, digest))
}

/// Final evaluation of a trained method on the server's test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub method: ModelKind,
    pub rounds: usize,
    pub fingerprint: String,
    pub accuracy: f64,
    pub loss: f64,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    pub spike_stats: Option<SpikeStats>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub manifest: RunManifest,
    pub rounds: Vec<RoundResult>,
    pub eval: EvalRecord,
    pub dir: PathBuf,
}

/// Federated training of one method from the ingested cache.
///
/// `metrics.tsv` holds one row per client and one `global` row per round
/// and is byte-stable for a fixed config; wall-clock durations go to
/// `timing.tsv`.
pub fn train(
    cfg: &ExperimentConfig,
    kind: ModelKind,
    mut on_round: impl FnMut(&RoundResult),
) -> Result<TrainOutcome, ExperimentError> {
    let (split, digest) = load_cache(cfg)?;
    let model = cfg.build_model(kind);
    model.validate()?;
    let encoder = cfg.effective_encoder();
    let (clients, server) = partition_by_subject(&split, cfg.client_seed())?;
    let dir = run_dir(cfg, kind);
    create_dir(&dir)?;
    let mut manifest = RunManifest::new(cfg, "train", Some(kind), &digest);
    let manifest_path = dir.join("manifest.json");
    write_json(&manifest_path, &manifest)?;

    let metrics_path = dir.join("metrics.tsv");
    let timing_path = dir.join("timing.tsv");
    let mut metrics = TsvLog::create(&metrics_path, &["round", "client", "loss", "accuracy"])?;
    let mut timing = TsvLog::create(&timing_path, &["round", "client", "duration_ms"])?;
    let mut log_error = None;
    let mut log_round = |r: &RoundResult| -> Result<(), ExperimentError> {
        for c in &r.clients {
            metrics.row(&[r.round.to_string(), c.client_id.clone(), c.loss.to_string(), c.accuracy.to_string()])?;
            timing.row(&[r.round.to_string(), c.client_id.clone(), c.duration_ms.to_string()])?;
        }
        metrics.row(&[
            r.round.to_string(),
            "global".into(),
            r.test_loss.to_string(),
            r.test_accuracy.to_string(),
        ])?;
        timing.row(&[r.round.to_string(), "global".into(), r.duration_ms.to_string()])?;
        metrics.flush()?;
        timing.flush()
    };
    let run = run_rounds(
        &clients,
        &server,
        &model,
        model.init_params(cfg.init_seed(kind)),
        &encoder,
        &cfg.federated.local(),
        cfg.federated.rounds,
        |r| {
            if log_error.is_none() {
                if let Err(e) = log_round(r) {
                    log_error = Some(e);
                }
            }
            on_round(r);
        },
    )?;
    if let Some(e) = log_error {
        return Err(e);
    }

    let checkpoint_path = dir.join("checkpoint.txt");
    write_atomic(&checkpoint_path, write_checkpoint(&run.params).as_bytes())?;
    let eval = EvalRecord {
        method: kind,
        rounds: cfg.federated.rounds,
        fingerprint: run.params.fingerprint().to_string(),
        accuracy: run.final_eval.accuracy,
        loss: run.final_eval.loss,
        predictions: run.final_eval.predictions.clone(),
        labels: server.test.iter().map(|e| e.label.id()).collect(),
        spike_stats: run.final_eval.spike_stats.clone(),
    };
    let eval_path = dir.join("eval.json");
    write_json(&eval_path, &eval)?;

    manifest.add(cfg, "metrics", &metrics_path);
    manifest.add(cfg, "timing", &timing_path);
    manifest.add(cfg, "checkpoint", &checkpoint_path);
    manifest.add(cfg, "eval", &eval_path);
    manifest.status = "complete".into();
    write_json(&manifest_path, &manifest)?;
    Ok(TrainOutcome {
        manifest,
        rounds: run.rounds,
        eval,
        dir,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub tool_version: String,
    pub dataset_digest: String,
    pub config: serde_json::Value,
    pub energy: EnergyReport,
}

#[derive(Debug, Clone)]
pub struct CompareOutcome {
    pub report: CompareReport,
    /// `method accuracy energy_uj wsp` table.
    pub table: String,
    pub dir: PathBuf,
}

fn artifact(path: &Path, reason: impl Into<String>) -> ExperimentError {
    ExperimentError::Artifact {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Test accuracy per round from a metrics log.
fn global_curve(path: &Path) -> Result<Vec<f64>, ExperimentError> {
    let (header, rows) = read_tsv(path)?;
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| artifact(path, format!("no `{name}` column")))
    };
    let (client, acc) = (col("client")?, col("accuracy")?);
    rows.iter()
        .filter(|r| r.get(client).map(String::as_str) == Some("global"))
        .map(|r| {
            r.get(acc)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| artifact(path, "unreadable accuracy"))
        })
        .collect()
}

/// Energy, WSP, and accuracy curves over the trained methods.
pub fn compare(cfg: &ExperimentConfig) -> Result<CompareOutcome, ExperimentError> {
    let (_, digest) = load_cache(cfg)?;
    let mut methods = Vec::new();
    let mut curves = Vec::new();
    for &kind in &cfg.model.methods {
        let dir = run_dir(cfg, kind);
        let manifest_path = dir.join("manifest.json");
        let manifest: RunManifest = read_json(&manifest_path)?;
        if manifest.status != "complete" {
            return Err(artifact(&manifest_path, format!("{kind} run did not complete")));
        }
        if manifest.dataset_digest != digest {
            return Err(artifact(&manifest_path, format!("{kind} was trained on a different dataset cache")));
        }
        let eval: EvalRecord = read_json(&dir.join("eval.json"))?;
        let model = cfg.build_model(kind);
        let ckpt_path = dir.join("checkpoint.txt");
        let params = read_checkpoint(&read_text(&ckpt_path)?).map_err(|e| artifact(&ckpt_path, e.to_string()))?;
        let layout = model.layout();
        let expected = Fingerprint::of_layout(layout.iter().map(|(n, s)| (n.as_str(), s.as_slice())));
        params.ensure_layout(expected)?;
        if eval.fingerprint != params.fingerprint().to_string() {
            return Err(artifact(&ckpt_path, "checkpoint does not match eval.json"));
        }
        let ops = count_ops(&model, eval.spike_stats.as_ref())?;
        methods.push((kind.as_str().to_string(), eval.accuracy, ops));
        curves.push(global_curve(&dir.join("metrics.tsv"))?);
    }
    let energy = build_report(&methods, &cfg.energy)?;
    let report = CompareReport {
        tool_version: VERSION.into(),
        dataset_digest: digest.clone(),
        config: cfg.snapshot(),
        energy,
    };
    let dir = compare_dir(cfg);
    create_dir(&dir)?;
    let mut manifest = RunManifest::new(cfg, "compare", None, &digest);
    let manifest_path = dir.join("manifest.json");
    write_json(&manifest_path, &manifest)?;

    let report_path = dir.join("report.json");
    write_json(&report_path, &report)?;

    let mut table = String::from("method\taccuracy\tenergy_j\tmacs\tacs\twsp\tenergy_ratio\n");
    for m in &report.energy.methods {
        let _ = writeln!(
            table,
            "{}\t{}\t{:e}\t{}\t{}\t{}\t{}",
            m.method, m.accuracy, m.energy_j, m.macs, m.acs, m.wsp, m.energy_ratio
        );
    }
    let summary_path = dir.join("summary.tsv");
    write_atomic(&summary_path, table.as_bytes())?;

    let mut curve_text = String::from("round");
    for &kind in &cfg.model.methods {
        let _ = write!(curve_text, "\t{kind}");
    }
    curve_text.push('\n');
    let n = curves.iter().map(Vec::len).max().unwrap_or(0);
    for round in 0..n {
        let _ = write!(curve_text, "{}", round + 1);
        for c in &curves {
            match c.get(round) {
                Some(v) => {
                    let _ = write!(curve_text, "\t{v}");
                }
                None => curve_text.push('\t'),
            }
        }
        curve_text.push('\n');
    }
    let curves_path = dir.join("curves.tsv");
    write_atomic(&curves_path, curve_text.as_bytes())?;

    manifest.add(cfg, "report", &report_path);
    manifest.add(cfg, "summary", &summary_path);
    manifest.add(cfg, "curves", &curves_path);
    manifest.status = "complete".into();
    write_json(&manifest_path, &manifest)?;

    let mut display = String::from("method\taccuracy\tenergy_uj\twsp\n");
    for m in &report.energy.methods {
        let _ = writeln!(display, "{}\t{:.4}\t{:.4}\t{:.4}", m.method, m.accuracy, m.energy_j * 1e6, m.wsp);
    }
    Ok(CompareOutcome {
        report,
        table: display,
        dir,
    })
}

/// Human-readable description of an EDF file, a checkpoint, or a split cache.
pub fn inspect_path(path: &Path) -> Result<String, ExperimentError> {
    if !path.is_file() {
        return Err(ExperimentError::MissingFile(path.to_path_buf()));
    }
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "edf" => {
            let rec = read_edf_file(path).map_err(|source| ExperimentError::Edf {
                path: path.to_path_buf(),
                source,
            })?;
            Ok(inspect_summary(&rec))
        }
        "bin" => {
            let bytes = std::fs::read(path).map_err(|e| artifact(path, e.to_string()))?;
            let split = read_cache(&bytes, path)?;
            let mut out = String::from("[cache]\n");
            let _ = writeln!(out, "digest\t{}", sha256_hex(&bytes));
            let _ = writeln!(out, "train\t{}", split.train.len());
            let _ = writeln!(out, "test\t{}", split.test.len());
            let _ = writeln!(out, "split_seed\t{}", split.seed);
            out.push_str("[strata]\n");
            out.push_str(&summary_table(&split));
            Ok(out)
        }
        _ => {
            let text = read_text(path)?;
            let params = read_checkpoint(&text).map_err(|e| artifact(path, e.to_string()))?;
            let mut out = String::from("[checkpoint]\n");
            let _ = writeln!(out, "fingerprint\t{}", params.fingerprint());
            let _ = writeln!(out, "elements\t{}", params.num_elements());
            out.push_str("[tensors]\nname\tshape\tmean\tmax_abs\n");
            for (name, t) in params.entries() {
                let d = t.data();
                let mean = d.iter().sum::<f64>() / d.len().max(1) as f64;
                let max = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let dims: Vec<String> = t.shape().iter().map(|x| x.to_string()).collect();
                let _ = writeln!(out, "{name}\t{}\t{mean:.6e}\t{max:.6e}", dims.join("x"));
            }
            Ok(out)
        }
    }
}
