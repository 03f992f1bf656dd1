//! Central finite-difference verification of parameter gradients.

use super::graph::{DropoutMode, Graph, NodeId};
use super::params::{ParamId, ParamStore};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Perturbation size.
    pub step: f64,
    /// Seed for the dropout masks of the reference pass.
    pub seed: u64,
    /// Replay the reference dropout masks in every perturbed pass.
    pub freeze_dropout: bool,
    /// Gradients below this magnitude are compared in absolute terms.
    pub abs_floor: f64,
    /// Check at most this many entries per parameter tensor (evenly spaced).
    pub max_per_param: Option<usize>,
    /// One-sided slopes differing by more than this (relative) mark a
    /// non-differentiable point, which is counted instead of compared. A
    /// kink that goes unnoticed shifts the central difference by at most
    /// half this, so it should sit below the tolerance being checked.
    pub kink_tolerance: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            seed: 0,
            freeze_dropout: true,
            abs_floor: 1e-6,
            max_per_param: None,
            kink_tolerance: 1.5e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries skipped because the perturbation straddled a kink
    /// (leaky-ReLU zero crossing or max-pool switch).
    pub kinks: usize,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares every parameter gradient of the scalar built by `build` against
/// central differences.
pub fn grad_check<F>(store: &ParamStore, build: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    let mut reference = Graph::new(DropoutMode::Sample(opts.seed));
    let root = build(&mut reference, store)?;
    let analytic = reference.param_grads(&reference.backward(root), store);
    let masks = reference.dropout_masks().to_vec();
    let base_value = reference.scalar(root);

    let mut probe = store.clone();
    let mut resample = opts.seed;
    let mut evaluate = |params: &ParamStore| -> Result<f64> {
        let mode = if opts.freeze_dropout {
            DropoutMode::Replay(masks.clone())
        } else {
            resample = resample.wrapping_add(1);
            DropoutMode::Sample(resample)
        };
        let mut g = Graph::new(mode);
        let root = build(&mut g, params)?;
        Ok(g.scalar(root))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        kinks: 0,
        worst: None,
    };
    for pid in 0..store.len() {
        let id = ParamId(pid);
        let n = store.get(id).value.len();
        let stride = match opts.max_per_param {
            Some(limit) if limit > 0 && n > limit => n.div_ceil(limit),
            _ => 1,
        };
        for k in (0..n).step_by(stride) {
            let original = store.get(id).value[k];
            // retry a kink once with a quarter of the step before giving up on it
            let mut numeric = None;
            for h in [opts.step, opts.step / 4.0] {
                probe.get_mut(id).value[k] = original + h;
                let plus = evaluate(&probe)?;
                probe.get_mut(id).value[k] = original - h;
                let minus = evaluate(&probe)?;
                probe.get_mut(id).value[k] = original;
                let right = (plus - base_value) / h;
                let left = (base_value - minus) / h;
                if !opts.freeze_dropout || relative_error(right, left, opts.abs_floor) <= opts.kink_tolerance {
                    numeric = Some((plus - minus) / (2.0 * h));
                    break;
                }
            }
            report.checked += 1;
            let Some(numeric) = numeric else {
                report.kinks += 1;
                continue;
            };
            let err = relative_error(analytic[pid][k], numeric, opts.abs_floor);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((store.get(id).name.clone(), k));
            }
        }
    }
    Ok(report)
}
