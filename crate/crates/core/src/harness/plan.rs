use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{ArchConfig, ModelKind};
use crate::nn::AdamConfig;

/// Fractions of the training pool used by the size sweep.
pub const DEFAULT_FRACTIONS: [f64; 5] = [0.075, 0.15, 0.30, 0.50, 1.0];

/// Epoch count as a function of the training-subset size: enough epochs to
/// reach `step_budget` optimizer steps, clamped to `[min_epochs, max_epochs]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub max_epochs: usize,
    pub min_epochs: usize,
    pub step_budget: usize,
    pub val_every: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            min_epochs: 30,
            step_budget: 1500,
            val_every: 5,
        }
    }
}

impl Schedule {
    pub fn epochs_for(&self, n: usize) -> usize {
        self.step_budget
            .div_ceil(n.max(1))
            .clamp(self.min_epochs.max(1), self.max_epochs.max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    /// Cohort manifest; relative paths resolve against the plan file.
    pub manifest: PathBuf,
    /// Modality to segment.
    pub target: String,
    /// Prior combinations for the combination sweep; all combinations that
    /// contain the target when absent.
    pub combos: Option<Vec<Vec<String>>>,
    /// Training fraction used by the combination sweep.
    pub combo_fraction: f64,
    pub fractions: Vec<f64>,
    /// Prior combination for the size sweep; a per-target default when absent.
    pub prior_combo: Option<Vec<String>>,
    pub models: Vec<ModelKind>,
    pub seeds: Vec<u64>,
    /// Shared architecture; `kind` is set per run.
    pub arch: ArchConfig,
    pub schedule: Schedule,
    pub adam: AdamConfig,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.json"),
            target: "qsm".into(),
            combos: None,
            combo_fraction: DEFAULT_FRACTIONS[0],
            fractions: DEFAULT_FRACTIONS.to_vec(),
            prior_combo: None,
            models: vec![ModelKind::Baseline, ModelKind::Proposed],
            seeds: vec![0],
            arch: ArchConfig::default(),
            schedule: Schedule::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl ExperimentPlan {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut plan: ExperimentPlan = serde_json::from_slice(&bytes)?;
        if plan.manifest.is_relative() {
            if let Some(dir) = path.parent() {
                plan.manifest = dir.join(&plan.manifest);
            }
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |f: f64| f > 0.0 && f <= 1.0;
        if !in_range(self.combo_fraction) || !self.fractions.iter().all(|&f| in_range(f)) {
            return Err(Error::Config("fractions must lie in (0, 1]".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("plan needs at least one seed".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("plan needs at least one model".into()));
        }
        self.arch.split().map(|_| ())
    }

    /// Prior combination of the size sweep.
    pub fn size_sweep_combo(&self) -> Vec<String> {
        self.prior_combo
            .clone()
            .unwrap_or_else(|| default_prior_combo(&self.target))
    }
}

/// Best Dice combination per target in the published combination table.
pub fn default_prior_combo(target: &str) -> Vec<String> {
    let names: &[&str] = match target {
        "imag" => &["imag", "r2s", "swi"],
        "qsm" => &["qsm", "swi"],
        "r2s" => &["imag", "qsm", "r2s"],
        _ => return vec![target.to_string()],
    };
    names.iter().map(|s| s.to_string()).collect()
}

/// Every modality subset containing `target`, ordered by size and then by
/// the position of its members in `modalities`.
pub fn all_combos(target: &str, modalities: &[String]) -> Vec<Vec<String>> {
    let others: Vec<&String> = modalities.iter().filter(|m| *m != target).collect();
    let mut combos: Vec<Vec<usize>> = (0..1usize << others.len())
        .map(|bits| (0..others.len()).filter(|i| bits >> i & 1 == 1).collect())
        .collect();
    combos.sort_by(|a: &Vec<usize>, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    combos
        .into_iter()
        .map(|idx| {
            let mut combo: Vec<String> = idx.into_iter().map(|i| others[i].clone()).collect();
            combo.push(target.to_string());
            combo.sort_by_key(|m| modalities.iter().position(|x| x == m));
            combo
        })
        .collect()
}

/// Human-readable modality name.
pub fn display_name(modality: &str) -> &str {
    match modality {
        "imag" => "iMag",
        "qsm" => "QSM",
        "r2s" => "R2*",
        "swi" => "SWI",
        other => other,
    }
}

pub fn combo_label(combo: &[String]) -> String {
    combo
        .iter()
        .map(|m| display_name(m))
        .collect::<Vec<_>>()
        .join("+")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn combos_follow_table_row_structure() {
        let mods = names(&["imag", "qsm", "r2s", "swi"]);
        let c = all_combos("qsm", &mods);
        assert_eq!(c.len(), 8);
        let labels: Vec<String> = c.iter().map(|x| combo_label(x)).collect();
        assert_eq!(
            labels,
            [
                "QSM",
                "iMag+QSM",
                "QSM+R2*",
                "QSM+SWI",
                "iMag+QSM+R2*",
                "iMag+QSM+SWI",
                "QSM+R2*+SWI",
                "iMag+QSM+R2*+SWI"
            ]
        );
        assert!(c.iter().all(|x| x.contains(&"qsm".to_string())));
    }

    #[test]
    fn schedule_clamps() {
        let s = Schedule::default();
        assert_eq!(s.epochs_for(4), 100);
        assert_eq!(s.epochs_for(51), 30);
        assert_eq!(s.epochs_for(26), 58);
    }

    #[test]
    fn plan_json_defaults_and_validation() {
        let p: ExperimentPlan = serde_json::from_str(r#"{"target": "r2s"}"#).unwrap();
        assert_eq!(p.fractions, DEFAULT_FRACTIONS);
        assert_eq!(combo_label(&p.size_sweep_combo()), "iMag+QSM+R2*");
        let bad = ExperimentPlan {
            fractions: vec![0.0],
            ..ExperimentPlan::default()
        };
        assert!(bad.validate().is_err());
    }
}
