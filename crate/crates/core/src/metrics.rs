//! Voxel-level segmentation metrics and cohort aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{strides, Mask};

/// The seven reported metrics, in table column order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Dice,
    Hd95,
    Precision,
    Recall,
    Mver,
    Maver,
    PearsonR,
}

/// Which direction of a metric counts as better.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Better {
    Higher,
    Lower,
    /// Closest to zero wins (signed volume error).
    NearZero,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Dice,
        Metric::Hd95,
        Metric::Precision,
        Metric::Recall,
        Metric::Mver,
        Metric::Maver,
        Metric::PearsonR,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Metric::Dice => "dice",
            Metric::Hd95 => "hd95",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::Mver => "mver",
            Metric::Maver => "maver",
            Metric::PearsonR => "pearson_r",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::Dice => "Dice",
            Metric::Hd95 => "95 Hausdorff",
            Metric::Precision => "Precision",
            Metric::Recall => "Recall",
            Metric::Mver => "MVER",
            Metric::Maver => "MAVER",
            Metric::PearsonR => "Pearson's r",
        }
    }

    pub fn better(self) -> Better {
        match self {
            Metric::Hd95 | Metric::Maver => Better::Lower,
            Metric::Mver => Better::NearZero,
            _ => Better::Higher,
        }
    }

    pub fn from_key(key: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.key() == key)
    }

    fn index(self) -> usize {
        Metric::ALL.iter().position(|&m| m == self).unwrap()
    }
}

fn check_pair(pred: &Mask, gt: &Mask) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    Ok(())
}

/// True positives, false positives and false negatives.
pub fn confusion(pred: &Mask, gt: &Mask) -> Result<(usize, usize, usize)> {
    check_pair(pred, gt)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p != 0, g != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    Ok((tp, fp, fn_))
}

pub fn dice(pred: &Mask, gt: &Mask) -> Result<f64> {
    let (tp, fp, fn_) = confusion(pred, gt)?;
    if tp + fn_ == 0 {
        return Err(Error::UndefinedMetric("dice: empty ground truth"));
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

/// `(TP/(TP+FP), TP/(TP+FN))`; precision is 0 for an empty prediction.
pub fn precision_recall(pred: &Mask, gt: &Mask) -> Result<(f64, f64)> {
    let (tp, fp, fn_) = confusion(pred, gt)?;
    if tp + fn_ == 0 {
        return Err(Error::UndefinedMetric("precision/recall: empty ground truth"));
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    Ok((precision, tp as f64 / (tp + fn_) as f64))
}

/// Signed relative volume error `(|P|-|G|)/|G|` and its absolute value.
pub fn volume_error(pred: &Mask, gt: &Mask) -> Result<(f64, f64)> {
    check_pair(pred, gt)?;
    let g = gt.count();
    if g == 0 {
        return Err(Error::UndefinedMetric("volume error: empty ground truth"));
    }
    let term = (pred.count() as f64 - g as f64) / g as f64;
    Ok((term, term.abs()))
}

/// Pearson correlation between the two binary maps over all voxels.
pub fn pearson_r(pred: &Mask, gt: &Mask) -> Result<f64> {
    let (tp, fp, fn_) = confusion(pred, gt)?;
    let n = pred.len() as f64;
    let p = (tp + fp) as f64;
    let g = (tp + fn_) as f64;
    if p == 0.0 || p == n || g == 0.0 || g == n {
        return Err(Error::UndefinedMetric("pearson r: constant map"));
    }
    Ok((n * tp as f64 - p * g) / (p * (n - p) * g * (n - g)).sqrt())
}

/// Foreground voxels with at least one face neighbour in the background.
/// Neighbours outside the grid count as background.
pub fn boundary(mask: &Mask) -> Vec<usize> {
    let shape = mask.shape();
    let st = strides(shape);
    let data = mask.data();
    let mut idx = vec![0; shape.len()];
    let mut out = Vec::new();
    for (flat, &v) in data.iter().enumerate() {
        if v == 0 {
            continue;
        }
        crate::volume::unravel(flat, shape, &mut idx);
        let on_edge = idx.iter().enumerate().any(|(a, &i)| {
            i == 0 || i + 1 == shape[a] || data[flat - st[a]] == 0 || data[flat + st[a]] == 0
        });
        if on_edge {
            out.push(flat);
        }
    }
    out
}

/// Exact squared Euclidean distance from every voxel to the nearest seed,
/// with per-axis spacing. Separable lower-envelope transform.
pub fn squared_distance_transform(shape: &[usize], seeds: &[usize], spacing: &[f64]) -> Vec<f64> {
    let n: usize = shape.iter().product();
    let mut dist = vec![f64::INFINITY; n];
    for &s in seeds {
        dist[s] = 0.0;
    }
    let st = strides(shape);
    let mut line = Vec::new();
    let mut out = Vec::new();
    for axis in 0..shape.len() {
        let len = shape[axis];
        let step = st[axis];
        let h = spacing[axis];
        for start in 0..n {
            // Visit each line once, from its first element.
            if (start / step) % len != 0 {
                continue;
            }
            line.clear();
            line.extend((0..len).map(|i| dist[start + i * step]));
            envelope_1d(&line, h, &mut out);
            for (i, &d) in out.iter().enumerate() {
                dist[start + i * step] = d;
            }
        }
    }
    dist
}

fn envelope_1d(f: &[f64], h: f64, out: &mut Vec<f64>) {
    out.clear();
    let finite: Vec<usize> = (0..f.len()).filter(|&i| f[i].is_finite()).collect();
    if finite.is_empty() {
        out.resize(f.len(), f64::INFINITY);
        return;
    }
    let pos = |i: usize| i as f64 * h;
    let meet = |p: usize, q: usize| {
        ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)))
    };
    let mut hull: Vec<usize> = Vec::with_capacity(finite.len());
    let mut from: Vec<f64> = Vec::with_capacity(finite.len());
    for &q in &finite {
        let mut z = f64::NEG_INFINITY;
        while let Some(&p) = hull.last() {
            z = meet(p, q);
            if z <= *from.last().unwrap() {
                hull.pop();
                from.pop();
                z = f64::NEG_INFINITY;
            } else {
                break;
            }
        }
        hull.push(q);
        from.push(z);
    }
    let mut k = 0;
    for i in 0..f.len() {
        let x = pos(i);
        while k + 1 < hull.len() && from[k + 1] < x {
            k += 1;
        }
        let d = x - pos(hull[k]);
        out.push(d * d + f[hull[k]]);
    }
}

/// Linear interpolation between order statistics at rank `q*(n-1)`.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let rank = q * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    values[lo] + (rank - lo as f64) * (values[hi] - values[lo])
}

/// 95th percentile of the pooled directed boundary-to-boundary distances.
pub fn hd95(pred: &Mask, gt: &Mask, spacing: &[f64]) -> Result<f64> {
    check_pair(pred, gt)?;
    if spacing.len() != pred.shape().len() {
        return Err(Error::ShapeMismatch(format!(
            "spacing {spacing:?} for shape {:?}",
            pred.shape()
        )));
    }
    let bp = boundary(pred);
    let bg = boundary(gt);
    if bp.is_empty() || bg.is_empty() {
        return Err(Error::UndefinedMetric("hd95: empty mask"));
    }
    let to_gt = squared_distance_transform(gt.shape(), &bg, spacing);
    let to_pred = squared_distance_transform(pred.shape(), &bp, spacing);
    let mut pooled: Vec<f64> = bp
        .iter()
        .map(|&i| to_gt[i].sqrt())
        .chain(bg.iter().map(|&i| to_pred[i].sqrt()))
        .collect();
    Ok(percentile(&mut pooled, 0.95))
}

/// All seven metrics for one subject; `None` marks an undefined value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectMetrics {
    pub subject: String,
    pub values: [Option<f64>; 7],
}

impl SubjectMetrics {
    pub fn get(&self, m: Metric) -> Option<f64> {
        self.values[m.index()]
    }
}

pub fn evaluate(subject: &str, pred: &Mask, gt: &Mask, spacing: &[f64]) -> Result<SubjectMetrics> {
    fn defined<T>(r: Result<T>) -> Result<Option<T>> {
        match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::UndefinedMetric(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
    let pr = defined(precision_recall(pred, gt))?;
    let ve = defined(volume_error(pred, gt))?;
    let values = [
        defined(dice(pred, gt))?,
        defined(hd95(pred, gt, spacing))?,
        pr.map(|v| v.0),
        pr.map(|v| v.1),
        ve.map(|v| v.0),
        ve.map(|v| v.1),
        defined(pearson_r(pred, gt))?,
    ];
    Ok(SubjectMetrics {
        subject: subject.to_string(),
        values,
    })
}

/// Mean and standard error over the subjects where a metric is defined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    /// Sample standard deviation over `sqrt(n)`; needs `n >= 2`.
    pub sem: Option<f64>,
    pub n: usize,
    pub excluded: usize,
}

impl Summary {
    pub fn of(values: &[Option<f64>]) -> Summary {
        let defined: Vec<f64> = values.iter().flatten().copied().collect();
        let n = defined.len();
        let excluded = values.len() - n;
        if n == 0 {
            return Summary {
                mean: None,
                sem: None,
                n,
                excluded,
            };
        }
        let mean = defined.iter().sum::<f64>() / n as f64;
        let sem = (n >= 2).then(|| {
            let var = defined.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            var.sqrt() / (n as f64).sqrt()
        });
        Summary {
            mean: Some(mean),
            sem,
            n,
            excluded,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub subjects: Vec<SubjectMetrics>,
    pub summaries: [Summary; 7],
}

impl MetricsReport {
    pub fn summary(&self, m: Metric) -> Summary {
        self.summaries[m.index()]
    }

    /// Metrics that are undefined for every subject.
    pub fn undefined_metrics(&self) -> Vec<Metric> {
        Metric::ALL
            .into_iter()
            .filter(|&m| self.summary(m).n == 0)
            .collect()
    }
}

pub fn aggregate(subjects: Vec<SubjectMetrics>) -> MetricsReport {
    let summaries = Metric::ALL.map(|m| {
        let col: Vec<Option<f64>> = subjects.iter().map(|s| s.get(m)).collect();
        Summary::of(&col)
    });
    MetricsReport {
        subjects,
        summaries,
    }
}
