//! File-level entry points behind the command-line tool.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::plan::{ExperimentPlan, Schedule};
use super::report::{curves_csv, subject_csv};
use super::sweep::{run_one, RunResult, RunSpec};
use crate::error::{Error, Result};
use crate::freq::{disentangle, high_image, low_image, pad_and_invert, SplitConfig};
use crate::fusion::{ArchConfig, Checkpoint, ModelKind};
use crate::metrics::{self, MetricsReport};
use crate::nn::AdamConfig;
use crate::rvol;

/// Configuration of a single training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Relative paths resolve against the config file.
    pub manifest: PathBuf,
    pub target: String,
    pub kind: ModelKind,
    /// Prior combination; the target alone when empty.
    pub combo: Vec<String>,
    pub fraction: f64,
    pub seed: u64,
    pub arch: ArchConfig,
    pub schedule: Schedule,
    pub adam: AdamConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.json"),
            target: "qsm".into(),
            kind: ModelKind::Proposed,
            combo: Vec::new(),
            fraction: 1.0,
            seed: 0,
            arch: ArchConfig::default(),
            schedule: Schedule::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_slice(&bytes)?;
        if cfg.manifest.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.manifest = dir.join(&cfg.manifest);
            }
        }
        Ok(cfg)
    }
}

fn write(path: &Path, body: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Trains one run and writes `checkpoint.json`/`.bin`, `curves.csv`,
/// `metrics.csv`, `run.json` and `pred/<subject>.rvol` under `out`.
pub fn train_run(cfg: &RunConfig, out: &Path) -> Result<RunResult> {
    let ds = Dataset::load(&cfg.manifest)?;
    let plan = ExperimentPlan {
        manifest: cfg.manifest.clone(),
        target: cfg.target.clone(),
        arch: cfg.arch.clone(),
        schedule: cfg.schedule.clone(),
        adam: cfg.adam,
        ..ExperimentPlan::default()
    };
    let combo = if cfg.combo.is_empty() {
        vec![cfg.target.clone()]
    } else {
        cfg.combo.clone()
    };
    let spec = RunSpec {
        kind: cfg.kind,
        target: cfg.target.clone(),
        combo,
        fraction: cfg.fraction,
        seed: cfg.seed,
    };
    let run = run_one(&ds, &plan, &spec)?;
    let r = &run.result;
    let steps = (r.best_epoch * r.n()) as u64;
    Checkpoint::new(run.model.clone(), cfg.seed, steps, r.best_epoch).save(&out.join("checkpoint.json"))?;
    write(&out.join("curves.csv"), curves_csv(std::slice::from_ref(r))?.as_bytes())?;
    write(&out.join("metrics.csv"), subject_csv(&r.test)?.as_bytes())?;
    write(&out.join("run.json"), &serde_json::to_vec_pretty(r)?)?;
    for (id, mask) in &run.predictions {
        let spacing = ds.volume(id, &cfg.target)?.spacing().to_vec();
        rvol::write_mask(&out.join("pred").join(format!("{id}.rvol")), mask, &spacing)?;
    }
    Ok(run.result)
}

fn rvol_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "rvol") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

/// Scores every `<subject>.rvol` mask in `pred` against the same-named mask
/// in `gt`; spacing comes from the ground-truth sidecars.
pub fn evaluate_dirs(pred: &Path, gt: &Path) -> Result<MetricsReport> {
    let preds = rvol_files(pred)?;
    let gts = rvol_files(gt)?;
    if preds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut subjects = Vec::with_capacity(preds.len());
    for (id, p) in &preds {
        let g = gts
            .get(id)
            .ok_or_else(|| Error::Config(format!("no ground truth for {id} in {}", gt.display())))?;
        let (gm, spacing) = rvol::read_mask_with_spacing(g)?;
        let pm = rvol::read_mask(p)?;
        subjects.push(metrics::evaluate(id, &pm, &gm, &spacing)?);
    }
    Ok(metrics::aggregate(subjects))
}

/// Writes `p_high.rvol`, `p_low.rvol` (crop-sized) and `p_lowpad.rvol`
/// (zero-padded low block, inverted at full size) for one volume.
pub fn disentangle_file(input: &Path, theta: f64, out: &Path) -> Result<()> {
    let v = rvol::read_volume(input)?;
    let split = disentangle(&v, SplitConfig::new(theta)?)?;
    let spacing = v.spacing().to_vec();
    let high = high_image(&split).with_spacing(spacing.clone())?;
    let low_spacing = spacing
        .iter()
        .zip(v.shape().iter().zip(split.crop_shape()))
        .map(|(s, (&n, &c))| s * n as f64 / c as f64)
        .collect();
    let low = low_image(&split).with_spacing(low_spacing)?;
    let padded = pad_and_invert(&split).with_spacing(spacing)?;
    rvol::write_volume(&out.join("p_high.rvol"), &high)?;
    rvol::write_volume(&out.join("p_low.rvol"), &low)?;
    rvol::write_volume(&out.join("p_lowpad.rvol"), &padded)
}
