use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::data::{nested_subset, pick_donor, Dataset};
use super::plan::{all_combos, ExperimentPlan};
use crate::error::{Error, Result};
use crate::fusion::{train, ArchConfig, EpochLog, Model, ModalitySample, ModelKind, TrainConfig};
use crate::metrics::{self, MetricsReport};
use crate::phantom::Split;
use crate::volume::Mask;

/// One training run of the harness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub kind: ModelKind,
    pub target: String,
    pub combo: Vec<String>,
    pub fraction: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub spec: RunSpec,
    pub train_ids: Vec<String>,
    pub donor: String,
    pub epochs: usize,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    pub test: MetricsReport,
}

impl RunResult {
    pub fn n(&self) -> usize {
        self.train_ids.len()
    }
}

/// A trained run together with its test predictions.
pub struct TrainedRun {
    pub result: RunResult,
    pub model: Model,
    pub predictions: Vec<(String, Mask)>,
}

fn samples(
    ds: &Dataset,
    ids: &[String],
    target: &str,
    donor: &BTreeMap<String, crate::volume::Volume>,
    combo: &[String],
    arch: &ArchConfig,
) -> Result<Vec<ModalitySample>> {
    let split = arch.split()?;
    ids.iter()
        .map(|id| {
            ModalitySample::new(
                id.clone(),
                target,
                ds.volume(id, target)?,
                ds.mask(id)?.clone(),
                donor,
                combo,
                split,
            )
        })
        .collect()
}

/// Trains one configuration and scores it on the untouched test split.
pub fn run_one(ds: &Dataset, plan: &ExperimentPlan, spec: &RunSpec) -> Result<TrainedRun> {
    for m in spec.combo.iter().chain([&spec.target]) {
        if !ds.manifest.modalities.contains(m) {
            return Err(Error::MissingModality {
                subject: "*".into(),
                modality: m.clone(),
            });
        }
    }
    let pool = ds.ids(Split::Train);
    let val_ids = ds.ids(Split::Val);
    let test_ids = ds.ids(Split::Test);
    let train_ids = nested_subset(&pool, spec.fraction, spec.seed)?;
    let donor = pick_donor(&pool, spec.seed)?;
    if val_ids.contains(&donor) || test_ids.contains(&donor) || train_ids.iter().any(|t| test_ids.contains(t)) {
        return Err(Error::Config("training, donor and test subjects overlap".into()));
    }

    let arch = ArchConfig {
        kind: spec.kind,
        ..plan.arch.clone()
    };
    let donor_vols = ds.volumes(&donor)?;
    let combo: Vec<String> = match spec.kind {
        ModelKind::Proposed => spec.combo.clone(),
        ModelKind::Baseline => vec![spec.target.clone()],
    };
    let make = |ids: &[String]| samples(ds, ids, &spec.target, donor_vols, &combo, &arch);
    let (train_set, val_set, test_set) = (make(&train_ids)?, make(&val_ids)?, make(&test_ids)?);

    let epochs = plan.schedule.epochs_for(train_set.len());
    let cfg = TrainConfig {
        epochs,
        seed: spec.seed,
        adam: plan.adam,
        val_every: plan.schedule.val_every,
    };
    let outcome = train(&arch, &train_set, &val_set, &cfg)?;

    let mut per_subject = Vec::with_capacity(test_set.len());
    let mut predictions = Vec::with_capacity(test_set.len());
    for s in &test_set {
        let pred = outcome.model.predict(s)?;
        let spacing = s.target_volume.spacing().to_vec();
        per_subject.push(metrics::evaluate(&s.subject_id, &pred, &s.mask, &spacing)?);
        predictions.push((s.subject_id.clone(), pred));
    }
    Ok(TrainedRun {
        result: RunResult {
            spec: spec.clone(),
            train_ids,
            donor,
            epochs,
            best_epoch: outcome.best_epoch,
            log: outcome.log,
            test: metrics::aggregate(per_subject),
        },
        model: outcome.model,
        predictions,
    })
}

fn run_all(ds: &Dataset, plan: &ExperimentPlan, specs: Vec<RunSpec>) -> Result<Vec<RunResult>> {
    specs
        .iter()
        .map(|s| run_one(ds, plan, s).map(|r| r.result))
        .collect()
}

/// Proposed model at the plan's combination fraction, once per prior
/// combination and seed.
pub fn run_combo_sweep(ds: &Dataset, plan: &ExperimentPlan) -> Result<Vec<RunResult>> {
    plan.validate()?;
    let combos = plan
        .combos
        .clone()
        .unwrap_or_else(|| all_combos(&plan.target, &ds.manifest.modalities));
    let mut specs = Vec::new();
    for combo in combos {
        for &seed in &plan.seeds {
            specs.push(RunSpec {
                kind: ModelKind::Proposed,
                target: plan.target.clone(),
                combo: combo.clone(),
                fraction: plan.combo_fraction,
                seed,
            });
        }
    }
    run_all(ds, plan, specs)
}

/// Every plan model at every training fraction and seed, with priors from
/// one donor subject.
pub fn run_fraction_sweep(ds: &Dataset, plan: &ExperimentPlan) -> Result<Vec<RunResult>> {
    plan.validate()?;
    let combo = plan.size_sweep_combo();
    let mut specs = Vec::new();
    for &kind in &plan.models {
        for &fraction in &plan.fractions {
            for &seed in &plan.seeds {
                specs.push(RunSpec {
                    kind,
                    target: plan.target.clone(),
                    combo: combo.clone(),
                    fraction,
                    seed,
                });
            }
        }
    }
    run_all(ds, plan, specs)
}
