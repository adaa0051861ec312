//! Stage orchestration. Stages talk to each other only through files in the
//! run directory, so any suffix of the pipeline can be re-run on its own.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clvae_core::attribution::{perturb_importance, AttributionOptions, ImportanceRanking};
use clvae_core::clustering::{
    correlation_matrix, kmeans_cluster, select_k, ClusteringRecord, KMeansOptions, KSelection,
};
use clvae_core::evaluation::{evaluate, EvalReport, Protocol};
use clvae_core::frame::{read_csv, CsvSchema, DataFormat};
use clvae_core::pot::{default_window, dynamic_threshold};
use clvae_core::preprocess::{iqr_clean, make_windows, CleaningReport, Standardizer};
use clvae_core::scoring::{assemble_scores, assemble_scores_with_stats, score_frame, ScoreSeries};
use clvae_core::vae::{train, EpochLog, LstmVaeModel, TrainError, VaeConfig};
use clvae_core::{Error as CoreError, Frame, LabelSeries, Model, Scores, Thresholds};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::report::emit_report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Clean,
    Cluster,
    Train,
    Score,
    Threshold,
    Eval,
    Explain,
    Report,
}

pub const STAGES: [Stage; 9] = [
    Stage::Ingest,
    Stage::Clean,
    Stage::Cluster,
    Stage::Train,
    Stage::Score,
    Stage::Threshold,
    Stage::Eval,
    Stage::Explain,
    Stage::Report,
];

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Clean => "clean",
            Stage::Cluster => "cluster",
            Stage::Train => "train",
            Stage::Score => "score",
            Stage::Threshold => "threshold",
            Stage::Eval => "eval",
            Stage::Explain => "explain",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        STAGES
            .iter()
            .copied()
            .find(|st| st.name() == s)
            .ok_or_else(|| anyhow!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Complete,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: Status,
    pub artifacts: Vec<Artifact>,
    /// Digest over the artifact list; equal runs give equal checksums.
    pub checksum: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: RunConfig,
    pub seeds: Seeds,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub clustering: u64,
    pub model_init: u64,
    pub training: u64,
    pub attribution: u64,
}

impl Manifest {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            version: MANIFEST_VERSION,
            config: cfg.clone(),
            seeds: Seeds {
                clustering: cfg.clustering.seed,
                model_init: cfg.model.init_seed,
                training: cfg.model.train.seed,
                attribution: cfg.attribution.seed,
            },
            stages: Vec::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    fn record(&mut self, rec: StageRecord) {
        self.stages.retain(|r| r.stage != rec.stage);
        self.stages.push(rec);
        self.stages.sort_by_key(|r| r.stage);
    }

    /// Drops records of `stage` and everything after it.
    fn truncate_from(&mut self, stage: Stage) {
        self.stages.retain(|r| r.stage < stage);
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn describe(dir: &Path, paths: &[PathBuf]) -> Result<(Vec<Artifact>, String)> {
    let mut arts = Vec::with_capacity(paths.len());
    let mut h = Sha256::new();
    for p in paths {
        let rel = p.strip_prefix(dir).unwrap_or(p).to_string_lossy().replace('\\', "/");
        let sha = sha256_file(p)?;
        h.update(rel.as_bytes());
        h.update([0]);
        h.update(sha.as_bytes());
        h.update([b'\n']);
        arts.push(Artifact { path: rel, sha256: sha });
    }
    Ok((arts, hex::encode(h.finalize())))
}

/// What a stage produced.
pub struct StageOutput {
    pub artifacts: Vec<PathBuf>,
    pub skipped: bool,
    pub note: Option<String>,
}

impl StageOutput {
    fn done(artifacts: Vec<PathBuf>) -> Self {
        Self {
            artifacts,
            skipped: false,
            note: None,
        }
    }

    fn skipped(note: impl Into<String>) -> Self {
        Self {
            artifacts: Vec::new(),
            skipped: true,
            note: Some(note.into()),
        }
    }
}

/// A run directory and the resolved config that owns it.
pub struct Run {
    pub dir: PathBuf,
    pub cfg: RunConfig,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, stage: Stage) -> Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("missing {} from the `{stage}` stage", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_frame(path: &Path, stage: Stage) -> Result<Frame> {
    let file = fs::File::open(path).with_context(|| format!("missing {} from the `{stage}` stage", path.display()))?;
    read_csv(std::io::BufReader::new(file), &CsvSchema::with_timestamp("timestamp"))
        .with_context(|| format!("reading {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStageOutput {
    pub record: ClusteringRecord,
    /// `None` when k was fixed in the config.
    pub selection: Option<KSelection>,
    pub f_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTraining {
    pub cluster: usize,
    pub features: Vec<String>,
    pub windows: usize,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub final_recon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSummary {
    pub window: usize,
    pub window_source: String,
    pub smoothing: usize,
    pub q: f64,
    pub init_quantile: f64,
    pub anomalies: usize,
    pub thresholds: Thresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub pointwise: EvalReport,
    pub point_adjust: EvalReport,
}

impl Run {
    pub fn new(dir: impl Into<PathBuf>, cfg: RunConfig) -> Self {
        Self { dir: dir.into(), cfg }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// The frame that gets scored: the test series if configured, else the
    /// training series.
    fn scored_raw(&self) -> PathBuf {
        if self.p("frames/test.csv").exists() {
            self.p("frames/test.csv")
        } else {
            self.p("frames/train.csv")
        }
    }

    pub fn execute(&self, stage: Stage) -> Result<StageOutput> {
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Clean => self.clean(),
            Stage::Cluster => self.cluster(),
            Stage::Train => self.train(),
            Stage::Score => self.score(),
            Stage::Threshold => self.threshold(),
            Stage::Eval => self.eval(),
            Stage::Explain => self.explain(),
            Stage::Report => {
                let out = emit_report(&self.dir, self.cfg.report.time_unit)?;
                Ok(StageOutput::done(out))
            }
        }
    }

    fn ingest(&self) -> Result<StageOutput> {
        let d = &self.cfg.data;
        let schema = self.cfg.schema();
        fs::create_dir_all(self.p("frames"))?;
        let train: Frame = clvae_core::frame::ingest(&d.train, d.format, &schema)
            .with_context(|| format!("ingesting {}", d.train.display()))?;
        let mut out = vec![self.p("frames/train.csv")];
        train.save_csv(&out[0])?;
        let _ = fs::remove_file(self.p("frames/test.csv"));
        let scored = match &d.test {
            Some(path) => {
                let test: Frame = clvae_core::frame::ingest(path, d.format, &schema)
                    .with_context(|| format!("ingesting {}", path.display()))?;
                if test.names() != train.names() {
                    bail!("test features {:?} differ from training features {:?}", test.names(), train.names());
                }
                test.save_csv(self.p("frames/test.csv"))?;
                out.push(self.p("frames/test.csv"));
                test
            }
            None => train,
        };
        let _ = fs::remove_file(self.p("labels.csv"));
        if let Some(path) = &d.labels {
            let labels = LabelSeries::load(path, d.format).with_context(|| format!("reading labels {}", path.display()))?;
            let labels = LabelSeries::for_frame(labels.values().to_vec(), &scored)?;
            let f = fs::File::create(self.p("labels.csv"))?;
            labels.write_csv(scored.timestamps(), std::io::BufWriter::new(f))?;
            out.push(self.p("labels.csv"));
        }
        Ok(StageOutput::done(out))
    }

    fn clean(&self) -> Result<StageOutput> {
        let train = read_frame(&self.p("frames/train.csv"), Stage::Ingest)?;
        let scored = read_frame(&self.scored_raw(), Stage::Ingest)?;
        let (cleaned, report): (Frame, CleaningReport<f64>) = iqr_clean(&train, self.cfg.preprocess.iqr_multiplier)?;
        let std = if self.cfg.preprocess.standardize {
            Standardizer::fit(&cleaned)
        } else {
            let f = cleaned.n_features();
            Standardizer {
                names: cleaned.names().to_vec(),
                mean: vec![0.0; f],
                std: vec![1.0; f],
                degenerate: vec![false; f],
            }
        };
        let mut out = vec![
            write_json(&self.p("cleaning_report.json"), &report)?,
            write_json(&self.p("standardizer.json"), &std)?,
        ];
        cleaned.save_csv(self.p("frames/cleaned.csv"))?;
        std.apply(&cleaned)?.save_csv(self.p("frames/train_std.csv"))?;
        std.apply(&train)?.save_csv(self.p("frames/raw_std.csv"))?;
        std.apply(&scored)?.save_csv(self.p("frames/score_std.csv"))?;
        out.extend(["frames/cleaned.csv", "frames/train_std.csv", "frames/raw_std.csv", "frames/score_std.csv"].map(|p| self.p(p)));
        Ok(StageOutput::done(out))
    }

    fn cluster_frame(&self, frame: &Frame) -> Result<ClusterStageOutput> {
        let c = &self.cfg.clustering;
        let opts = KMeansOptions {
            restarts: c.restarts,
            max_iter: c.max_iter,
        };
        let r = correlation_matrix(frame)?;
        let f = frame.n_features();
        let k_max = c.k_max.min(f);
        let (k, selection) = match c.k {
            Some(k) => (k, None),
            None if k_max < 3 || c.k_min >= k_max => (c.k_min.min(f).max(1), None),
            None => {
                let sel = select_k(&r, c.k_min, k_max, c.seed, opts)?;
                (sel.k, Some(sel))
            }
        };
        let fc = kmeans_cluster(&r, k, c.seed, opts)?;
        Ok(ClusterStageOutput {
            record: fc.record(c.seed),
            selection,
            f_count: f,
        })
    }

    fn cluster(&self) -> Result<StageOutput> {
        let clean = read_frame(&self.p("frames/train_std.csv"), Stage::Clean)?;
        let raw = read_frame(&self.p("frames/raw_std.csv"), Stage::Clean)?;
        let main = self.cluster_frame(&clean)?;
        let diag = self.cluster_frame(&raw)?;
        Ok(StageOutput::done(vec![
            write_json(&self.p("clustering.json"), &main)?,
            write_json(&self.p("clustering_raw.json"), &diag)?,
        ]))
    }

    fn load_clusters(&self, names: &[String]) -> Result<Vec<Vec<usize>>> {
        let c: ClusterStageOutput = read_json(&self.p("clustering.json"), Stage::Cluster)?;
        Ok(c.record.indices(names)?)
    }

    fn train(&self) -> Result<StageOutput> {
        let frame = read_frame(&self.p("frames/train_std.csv"), Stage::Clean)?;
        let clusters = self.load_clusters(frame.names())?;
        let m = &self.cfg.model;
        let pre = &self.cfg.preprocess;
        fs::create_dir_all(self.p("models"))?;
        if let Ok(entries) = fs::read_dir(self.p("models")) {
            for e in entries.flatten() {
                let _ = fs::remove_file(e.path());
            }
        }
        let results: Vec<Result<(Model, Vec<EpochLog>, ClusterTraining)>> = clusters
            .par_iter()
            .enumerate()
            .map(|(j, idx)| {
                let sub = frame.select(idx)?;
                let tensor = make_windows(&sub, pre.window, pre.stride)?;
                let cfg = VaeConfig {
                    n_features: idx.len(),
                    hidden: m.hidden,
                    latent: m.latent,
                    beta: m.beta,
                };
                let init = LstmVaeModel::new(cfg, sub.names().to_vec(), m.init_seed + j as u64)?;
                match train(&init, &tensor, &m.train) {
                    Ok(out) => {
                        let summary = ClusterTraining {
                            cluster: j,
                            features: sub.names().to_vec(),
                            windows: tensor.n_windows(),
                            epochs_run: out.log.len(),
                            best_epoch: out.best_epoch,
                            stopped_early: out.stopped_early,
                            final_recon: out.log.last().map(|e| e.recon),
                        };
                        Ok((out.model, out.log, summary))
                    }
                    Err(TrainError::Diverged {
                        epoch,
                        reason,
                        last_good,
                        log,
                    }) => {
                        let path = self.p(&format!("models/cluster_{j}.last_good.json"));
                        fs::write(&path, last_good.to_json()?)?;
                        let lp = fs::File::create(self.p(&format!("models/cluster_{j}_log.csv")))?;
                        clvae_core::vae::train::write_log_csv(&log, lp)?;
                        bail!(
                            "cluster {j} diverged at epoch {epoch}: {reason}; last good parameters in {}",
                            path.display()
                        )
                    }
                    Err(TrainError::Invalid(e)) => Err(e.into()),
                }
            })
            .collect();
        let mut out = Vec::new();
        let mut summaries = Vec::new();
        for (j, r) in results.into_iter().enumerate() {
            let (model, log, summary) = r?;
            let mp = self.p(&format!("models/cluster_{j}.json"));
            fs::write(&mp, model.to_json()?)?;
            let lp = self.p(&format!("models/cluster_{j}_log.csv"));
            clvae_core::vae::train::write_log_csv(&log, fs::File::create(&lp)?)?;
            out.push(mp);
            out.push(lp);
            summaries.push(summary);
        }
        out.push(write_json(&self.p("training.json"), &summaries)?);
        Ok(StageOutput::done(out))
    }

    pub fn load_models(&self) -> Result<Vec<Model>> {
        let c: ClusterStageOutput = read_json(&self.p("clustering.json"), Stage::Cluster)?;
        (0..c.record.clusters.len())
            .map(|j| {
                let p = self.p(&format!("models/cluster_{j}.json"));
                let text = fs::read_to_string(&p).with_context(|| format!("missing {} from the `train` stage", p.display()))?;
                Ok(Model::from_json(&text)?)
            })
            .collect()
    }

    fn score(&self) -> Result<StageOutput> {
        let frame = read_frame(&self.p("frames/score_std.csv"), Stage::Clean)?;
        let models = self.load_models()?;
        let s = &self.cfg.scoring;
        let comps = score_frame(&models, &frame, self.cfg.preprocess.window)?;
        let scores = assemble_scores(&comps, s.lambda1, s.lambda2, s.normalize)?;
        let csv = self.p("scores.csv");
        scores.write_csv(frame.timestamps(), std::io::BufWriter::new(fs::File::create(&csv)?))?;
        Ok(StageOutput::done(vec![write_json(&self.p("scores.json"), &scores)?, csv]))
    }

    fn threshold(&self) -> Result<StageOutput> {
        let frame = read_frame(&self.p("frames/score_std.csv"), Stage::Clean)?;
        let scores: Scores = read_json(&self.p("scores.json"), Stage::Score)?;
        let t = &self.cfg.threshold;
        let pot = self.cfg.pot();
        let series = scores.smoothed(self.cfg.scoring.smoothing);
        let (window, source) = match t.window {
            Some(w) => (w, "config"),
            None => (default_window(&series, &pot), "estimated"),
        };
        let th = dynamic_threshold(&series, window, &pot)?;
        let ts = frame.timestamps();
        let off = scores.offset;
        let mut w = csv::Writer::from_path(self.p("thresholds.csv"))?;
        w.write_record(["timestamp", "score", "threshold", "label"])?;
        let mut pred = vec![false; ts.len()];
        for (i, &stamp) in ts.iter().enumerate() {
            match i.checked_sub(off) {
                Some(j) => {
                    pred[i] = th.labels[j];
                    w.write_record([
                        stamp.to_string(),
                        series[j].to_string(),
                        th.thresholds[j].to_string(),
                        u8::from(th.labels[j]).to_string(),
                    ])?;
                }
                None => w.write_record([stamp.to_string(), String::new(), String::new(), "0".into()])?,
            }
        }
        w.flush()?;
        let pred = LabelSeries::new(pred);
        let pp = self.p("predictions.csv");
        pred.write_csv(ts, std::io::BufWriter::new(fs::File::create(&pp)?))?;
        let summary = ThresholdSummary {
            window,
            window_source: source.into(),
            smoothing: self.cfg.scoring.smoothing,
            q: t.q,
            init_quantile: t.init_quantile,
            anomalies: th.n_anomalies(),
            thresholds: th,
        };
        Ok(StageOutput::done(vec![
            self.p("thresholds.csv"),
            pp,
            write_json(&self.p("threshold.json"), &summary)?,
        ]))
    }

    fn eval(&self) -> Result<StageOutput> {
        let truth_path = self.p("labels.csv");
        if !truth_path.exists() {
            return Ok(StageOutput::skipped("no ground-truth labels configured"));
        }
        let truth = LabelSeries::load(&truth_path, DataFormat::Csv)?;
        let pred = LabelSeries::load(self.p("predictions.csv"), DataFormat::Csv)
            .context("missing predictions.csv from the `threshold` stage")?;
        let summary = EvalSummary {
            pointwise: evaluate(&pred, &truth, Protocol::Pointwise)?,
            point_adjust: evaluate(&pred, &truth, Protocol::PointAdjust)?,
        };
        Ok(StageOutput::done(vec![write_json(&self.p("eval.json"), &summary)?]))
    }

    fn explain(&self) -> Result<StageOutput> {
        let a = &self.cfg.attribution;
        for entry in fs::read_dir(&self.dir)?.flatten() {
            let name = entry.file_name();
            if name.to_string_lossy().starts_with("importance") {
                let _ = fs::remove_file(entry.path());
            }
        }
        if !a.enabled {
            return Ok(StageOutput::skipped("attribution disabled"));
        }
        let frame = read_frame(&self.p("frames/score_std.csv"), Stage::Clean)?;
        let models = self.load_models()?;
        let scores: Scores = read_json(&self.p("scores.json"), Stage::Score)?;
        let pred = LabelSeries::load(self.p("predictions.csv"), DataFormat::Csv)
            .context("missing predictions.csv from the `threshold` stage")?;
        let opts = AttributionOptions {
            policy: a.policy,
            repeats: a.repeats,
            seed: a.seed,
        };
        let window = self.cfg.preprocess.window;
        let mut out = Vec::new();
        let mut notes = Vec::new();
        let mut emit = |ranking: std::result::Result<ImportanceRanking, CoreError>, stem: String| -> Result<()> {
            match ranking {
                Ok(r) => {
                    out.push(write_json(&self.p(&format!("{stem}.json")), &r)?);
                    let cp = self.p(&format!("{stem}.csv"));
                    r.write_csv(fs::File::create(&cp)?)?;
                    out.push(cp);
                    Ok(())
                }
                Err(CoreError::Attribution(msg)) => {
                    notes.push(format!("{stem}: {msg}"));
                    Ok(())
                }
                Err(e) => Err(e.into()),
            }
        };
        emit(
            perturb_importance(&models, &frame, &scores, pred.values(), window, &opts),
            "importance".into(),
        )?;
        for &(from, to) in &a.periods {
            let rows: Vec<usize> = (0..frame.n_rows())
                .filter(|&i| (from..=to).contains(&frame.timestamps()[i]))
                .collect();
            let stem = format!("importance_{from}_{to}");
            if rows.len() < window {
                let msg = format!("period holds {} rows, fewer than one window", rows.len());
                emit(Err(CoreError::Attribution(msg)), stem)?;
                continue;
            }
            let (s, e) = (rows[0], rows[rows.len() - 1] + 1);
            let sub = frame.slice(s, e)?;
            let base = period_baseline(&models, &sub, &scores, window)?;
            emit(
                perturb_importance(&models, &sub, &base, &pred.values()[s..e], window, &opts),
                stem,
            )?;
        }
        drop(emit);
        let mut so = StageOutput::done(out);
        if !notes.is_empty() {
            so.note = Some(notes.join("; "));
            so.skipped = so.artifacts.is_empty();
        }
        Ok(so)
    }
}

/// Scores of a sub-period, normalized with the full-run statistics so the
/// period's baseline matches the series the labels came from.
fn period_baseline(models: &[Model], frame: &Frame, full: &ScoreSeries<f64>, window: usize) -> Result<Scores> {
    let comps = score_frame(models, frame, window)?;
    Ok(match full.stats() {
        Some(stats) if full.normalized => assemble_scores_with_stats(&comps, full.lambda1, full.lambda2, &stats)?,
        _ => assemble_scores(&comps, full.lambda1, full.lambda2, false)?,
    })
}

/// Runs `stages` in order, persisting the manifest after each one. The first
/// failure is recorded in the manifest and returned.
pub fn run_stages(run: &Run, stages: &[Stage]) -> Result<Manifest> {
    fs::create_dir_all(&run.dir).with_context(|| format!("creating {}", run.dir.display()))?;
    // Records of stages before the restart point survive a config change;
    // the manifest then carries the config of the latest invocation.
    let mut manifest = Manifest::load(&run.dir).unwrap_or_else(|_| Manifest::new(&run.cfg));
    manifest.config = run.cfg.clone();
    manifest.seeds = Manifest::new(&run.cfg).seeds;
    if let Some(&first) = stages.first() {
        manifest.truncate_from(first);
    }
    fs::write(run.dir.join("config.toml"), run.cfg.to_toml()?)?;
    for &stage in stages {
        match run.execute(stage) {
            Ok(out) => {
                let (artifacts, checksum) = describe(&run.dir, &out.artifacts)?;
                manifest.record(StageRecord {
                    stage,
                    status: if out.skipped { Status::Skipped } else { Status::Complete },
                    artifacts,
                    checksum,
                    note: out.note,
                    error: None,
                });
                manifest.save(&run.dir)?;
            }
            Err(e) => {
                manifest.record(StageRecord {
                    stage,
                    status: Status::Failed,
                    artifacts: Vec::new(),
                    checksum: String::new(),
                    note: None,
                    error: Some(format!("{e:#}")),
                });
                manifest.save(&run.dir)?;
                return Err(e.context(format!("stage `{stage}` failed")));
            }
        }
    }
    Ok(manifest)
}

/// Full pipeline, or its suffix starting at `from`.
pub fn run_pipeline(cfg: &RunConfig, from: Option<Stage>) -> Result<Manifest> {
    cfg.validate()?;
    let run = Run::new(cfg.output.clone(), cfg.clone());
    let start = from.unwrap_or(Stage::Ingest);
    let stages: Vec<Stage> = STAGES.iter().copied().filter(|s| *s >= start).collect();
    run_stages(&run, &stages)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in STAGES {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("bogus".parse::<Stage>().is_err());
    }
}
