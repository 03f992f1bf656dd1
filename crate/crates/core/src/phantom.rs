//! Synthetic multimodal phantoms: one fixed anatomy per subject, rendered
//! through several contrast transfers with independent bias fields and noise.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rvol;
use crate::volume::{minmax_normalize, unravel, Mask, Volume};

pub const MIN_MASK_FRACTION: f64 = 0.005;
pub const MAX_MASK_FRACTION: f64 = 0.03;
pub const MAX_ATTEMPTS: usize = 10;

/// Direction of a contrast transfer relative to tissue iron content.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Increasing,
    Inverted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityTransfer {
    pub name: String,
    pub polarity: Polarity,
    /// Contrast gain applied to the tissue score.
    pub gain: f64,
    /// Exponent of the tissue score before the gain.
    pub gamma: f64,
    /// Number of Gaussian bumps in the multiplicative bias field.
    pub bias_bumps: usize,
    /// Largest absolute bump amplitude, in log-gain units.
    pub bias_amplitude: f64,
    /// Signal-to-noise range; the brain mean over the noise sigma.
    pub snr: (f64, f64),
}

impl ModalityTransfer {
    fn new(name: &str, polarity: Polarity, gain: f64, gamma: f64) -> Self {
        ModalityTransfer {
            name: name.to_string(),
            polarity,
            gain,
            gamma,
            bias_bumps: 4,
            bias_amplitude: 1.0,
            snr: (12.0, 25.0),
        }
    }

    /// qsm-like, r2s-like (increasing) and imag-like, swi-like (inverted).
    pub fn defaults() -> Vec<ModalityTransfer> {
        vec![
            ModalityTransfer::new("imag", Polarity::Inverted, 0.7, 1.0),
            ModalityTransfer::new("qsm", Polarity::Increasing, 1.0, 1.0),
            ModalityTransfer::new("r2s", Polarity::Increasing, 0.6, 0.8),
            ModalityTransfer::new("swi", Polarity::Inverted, 0.9, 1.3),
        ]
    }

    /// Noise-free intensity for a tissue score in `[0, 1]`.
    pub fn intensity(&self, score: f64) -> f64 {
        let s = score.clamp(0.0, 1.0).powf(self.gamma);
        match self.polarity {
            Polarity::Increasing => 0.2 + self.gain * s,
            Polarity::Inverted => 1.0 - self.gain * s,
        }
    }
}

/// Anatomy ranges, in units of the half field of view (the field spans
/// `[-1, 1]` along every axis).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anatomy {
    pub brain_radius: f64,
    pub midbrain_radius: f64,
    /// Lateral offset of each nucleus from the midline.
    pub nucleus_offset: f64,
    /// Standard deviation of the nucleus centre jitter.
    pub center_jitter: f64,
    /// Nucleus semi-axis range per diagnostic class.
    pub radii: Vec<(f64, f64)>,
    /// Tissue scores: brain, midbrain, distractor, nucleus.
    pub scores: [f64; 4],
    /// Per-subject jitter of every tissue score.
    pub score_jitter: f64,
}

impl Anatomy {
    pub fn default_for(ndim: usize) -> Anatomy {
        let (offset, radii) = if ndim == 3 {
            (0.32, vec![(0.2, 0.27), (0.18, 0.24), (0.19, 0.25)])
        } else {
            (0.22, vec![(0.09, 0.13), (0.07, 0.11), (0.08, 0.12)])
        };
        Anatomy {
            brain_radius: 0.88,
            midbrain_radius: if ndim == 3 { 0.7 } else { 0.5 },
            nucleus_offset: offset,
            center_jitter: 0.03,
            radii,
            scores: [0.25, 0.4, 0.7, 0.85],
            score_jitter: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub shape: Vec<usize>,
    pub seed: u64,
    pub anatomy: Anatomy,
    pub modalities: Vec<ModalityTransfer>,
    /// Relative frequency of each diagnostic class in a cohort.
    pub class_weights: Vec<f64>,
}

impl PhantomSpec {
    pub fn new(shape: Vec<usize>, seed: u64) -> PhantomSpec {
        let anatomy = Anatomy::default_for(shape.len());
        PhantomSpec {
            shape,
            seed,
            anatomy,
            modalities: ModalityTransfer::defaults(),
            class_weights: vec![18.0, 46.0, 16.0],
        }
    }

    pub fn default_2d() -> PhantomSpec {
        PhantomSpec::new(vec![64, 64], 0)
    }

    pub fn default_3d() -> PhantomSpec {
        PhantomSpec::new(vec![32, 32, 32], 0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(2..=3).contains(&self.shape.len()) || self.shape.iter().any(|&s| s < 8) {
            return bad("phantom shape must be 2-D or 3-D with every axis >= 8");
        }
        if self.modalities.is_empty() {
            return bad("phantom needs at least one modality");
        }
        if self.anatomy.radii.len() != self.class_weights.len() {
            return bad("one radius range per diagnostic class is required");
        }
        if self.class_weights.iter().any(|w| !(*w >= 0.0)) || self.class_weights.iter().sum::<f64>() <= 0.0 {
            return bad("class weights must be non-negative with a positive sum");
        }
        for m in &self.modalities {
            if !(m.snr.0 > 0.0 && m.snr.0 <= m.snr.1) {
                return bad("snr range must be positive and ordered");
            }
        }
        Ok(())
    }

    pub fn modality(&self, name: &str) -> Option<&ModalityTransfer> {
        self.modalities.iter().find(|m| m.name == name)
    }
}

#[derive(Clone, Debug)]
pub struct Subject {
    pub id: String,
    pub class: usize,
    pub volumes: BTreeMap<String, Volume>,
    pub mask: Mask,
    /// Multiplicative bias field applied to each modality.
    pub bias: BTreeMap<String, Volume>,
    /// Noise standard deviation used for each modality, before normalization.
    pub noise_sigma: BTreeMap<String, f64>,
    /// Brain-region indicator.
    pub brain: Mask,
}

/// Deterministic generator for subject `index`, attempt `attempt`.
fn derived_rng(seed: u64, index: u64, attempt: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    key[16..24].copy_from_slice(&attempt.to_le_bytes());
    key[24..].copy_from_slice(b"phantom!");
    ChaCha8Rng::from_seed(key)
}

fn normalized_coords(shape: &[usize], flat: usize, idx: &mut [usize], out: &mut [f64]) {
    unravel(flat, shape, idx);
    for a in 0..shape.len() {
        let half = (shape[a] as f64 - 1.0) / 2.0;
        out[a] = (idx[a] as f64 - half) / (shape[a] as f64 / 2.0);
    }
}

struct Ellipsoid {
    center: Vec<f64>,
    radii: Vec<f64>,
}

impl Ellipsoid {
    fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(&self.center)
            .zip(&self.radii)
            .map(|((x, c), r)| ((x - c) / r).powi(2))
            .sum::<f64>()
            <= 1.0
    }

    fn inside_field(&self) -> bool {
        self.center
            .iter()
            .zip(&self.radii)
            .all(|(c, r)| c - r > -1.0 && c + r < 1.0)
    }
}

/// Lateral axis is the last one; the remaining axes carry the jitter only.
fn nuclei(spec: &PhantomSpec, class: usize, rng: &mut ChaCha8Rng) -> Vec<Ellipsoid> {
    let a = &spec.anatomy;
    let nd = spec.shape.len();
    let jitter = Normal::new(0.0, a.center_jitter.max(1e-12)).unwrap();
    let (lo, hi) = a.radii[class];
    [-1.0, 1.0]
        .iter()
        .map(|side| {
            let mut center: Vec<f64> = (0..nd).map(|_| jitter.sample(rng)).collect();
            center[nd - 1] += side * a.nucleus_offset;
            let radii = (0..nd).map(|_| rng.gen_range(lo..=hi)).collect();
            Ellipsoid { center, radii }
        })
        .collect()
}

/// Elongated iron-rich structures below the nuclei; bright like the target
/// but not part of the mask.
fn distractors(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Vec<Ellipsoid> {
    let a = &spec.anatomy;
    let nd = spec.shape.len();
    [-1.0, 1.0]
        .iter()
        .map(|side| {
            let mut center = vec![0.0; nd];
            center[0] = a.nucleus_offset * 1.4 + rng.gen_range(-0.03..0.03);
            center[nd - 1] = side * a.nucleus_offset * 1.1;
            let mut radii = vec![a.radii[0].0 * 0.6; nd];
            radii[nd - 1] = a.radii[0].1 * 1.6;
            Ellipsoid { center, radii }
        })
        .collect()
}

/// Smooth positive multiplicative field `exp(sum of bumps)`. Each bump is a periodic
/// Gaussian, `exp(k (cos(pi (x - c)) - 1))` per axis, so the field wraps
/// without an edge discontinuity and its spectrum stays in the lowest bins.
fn bias_field(shape: &[usize], m: &ModalityTransfer, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let nd = shape.len();
    let bumps: Vec<(Vec<f64>, f64, f64)> = (0..m.bias_bumps)
        .map(|_| {
            let c = (0..nd).map(|_| rng.gen_range(-0.6..0.6)).collect();
            let amp = rng.gen_range(-m.bias_amplitude..=m.bias_amplitude);
            let kappa = rng.gen_range(1.0..2.5);
            (c, amp, kappa)
        })
        .collect();
    let n: usize = shape.iter().product();
    let mut idx = vec![0; nd];
    let mut p = vec![0.0; nd];
    (0..n)
        .map(|flat| {
            unravel(flat, shape, &mut idx);
            for a in 0..nd {
                p[a] = 2.0 * idx[a] as f64 / shape[a] as f64 - 1.0;
            }
            let log_gain: f64 = bumps
                .iter()
                .map(|(c, amp, kappa)| {
                    let e: f64 = p
                        .iter()
                        .zip(c)
                        .map(|(x, y)| (std::f64::consts::PI * (x - y)).cos() - 1.0)
                        .sum();
                    amp * (kappa * e).exp()
                })
                .sum();
            log_gain.exp()
        })
        .collect()
}

/// One subject; regenerates with a fresh sub-seed when the sampled geometry
/// leaves the field or the mask fraction falls outside its range.
pub fn generate_subject(spec: &PhantomSpec, subject_seed: u64, class: usize) -> Result<Subject> {
    spec.validate()?;
    if class >= spec.anatomy.radii.len() {
        return Err(Error::Config(format!("class {class} has no anatomy range")));
    }
    for attempt in 0..MAX_ATTEMPTS as u64 {
        let mut rng = derived_rng(spec.seed, subject_seed, attempt);
        if let Some(s) = try_subject(spec, class, &mut rng)? {
            return Ok(Subject {
                id: format!("sub-{subject_seed:03}"),
                ..s
            });
        }
    }
    Err(Error::DegenerateGeometry(MAX_ATTEMPTS))
}

fn try_subject(spec: &PhantomSpec, class: usize, rng: &mut ChaCha8Rng) -> Result<Option<Subject>> {
    let shape = &spec.shape;
    let nd = shape.len();
    let a = &spec.anatomy;
    let nuc = nuclei(spec, class, rng);
    if !nuc.iter().all(Ellipsoid::inside_field) {
        return Ok(None);
    }
    let dis = distractors(spec, rng);
    let mut scores = a.scores;
    for s in &mut scores {
        *s = (*s + rng.gen_range(-a.score_jitter..=a.score_jitter)).clamp(0.0, 1.0);
    }
    let n: usize = shape.iter().product();
    let mut idx = vec![0; nd];
    let mut p = vec![0.0; nd];
    let mut score = vec![0.0; n];
    let mut mask = vec![0u8; n];
    let mut brain = vec![0u8; n];
    for flat in 0..n {
        normalized_coords(shape, flat, &mut idx, &mut p);
        let r2: f64 = p.iter().map(|x| x * x).sum();
        if r2 > a.brain_radius.powi(2) {
            continue;
        }
        brain[flat] = 1;
        score[flat] = scores[0];
        if r2 <= a.midbrain_radius.powi(2) {
            score[flat] = scores[1];
        }
        if dis.iter().any(|e| e.contains(&p)) {
            score[flat] = scores[2];
        }
        if nuc.iter().any(|e| e.contains(&p)) {
            score[flat] = scores[3];
            mask[flat] = 1;
        }
    }
    let count = mask.iter().filter(|&&m| m != 0).count();
    let fraction = count as f64 / n as f64;
    let overlap = nuc[0].contains(&nuc[1].center) || nuc[1].contains(&nuc[0].center);
    if !(MIN_MASK_FRACTION..=MAX_MASK_FRACTION).contains(&fraction) || overlap {
        return Ok(None);
    }

    let mut volumes = BTreeMap::new();
    let mut bias = BTreeMap::new();
    let mut noise_sigma = BTreeMap::new();
    for m in &spec.modalities {
        let field = bias_field(shape, m, rng);
        let clean: Vec<f64> = (0..n)
            .map(|i| if brain[i] != 0 { m.intensity(score[i]) * field[i] } else { 0.0 })
            .collect();
        let brain_mean = clean.iter().zip(&brain).filter(|(_, &b)| b != 0).map(|(v, _)| v).sum::<f64>()
            / brain.iter().filter(|&&b| b != 0).count() as f64;
        let snr = rng.gen_range(m.snr.0..=m.snr.1);
        let sigma = brain_mean / snr;
        let noise = Normal::new(0.0, sigma).unwrap();
        let noisy: Vec<f64> = clean.iter().map(|v| v + noise.sample(rng)).collect();
        let raw = Volume::new(shape.clone(), noisy)?;
        volumes.insert(m.name.clone(), minmax_normalize(&raw)?);
        bias.insert(m.name.clone(), Volume::new(shape.clone(), field)?);
        noise_sigma.insert(m.name.clone(), sigma);
    }
    Ok(Some(Subject {
        id: String::new(),
        class,
        volumes,
        mask: Mask::new(shape.clone(), mask)?,
        bias,
        noise_sigma,
        brain: Mask::new(shape.clone(), brain)?,
    }))
}

/// Largest-remainder apportionment of `n` items over `weights`.
pub fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

/// Assigns splits with exact totals from `ratios` while spreading every
/// diagnostic class proportionally over the splits.
pub fn stratified_split(classes: &[usize], ratios: &[f64; 3], seed: u64) -> Result<Vec<Split>> {
    let n = classes.len();
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let targets = apportion(n, ratios);
    if targets.iter().zip(ratios).any(|(&t, &r)| r > 0.0 && t == 0) {
        return Err(Error::SplitTooSmall {
            n,
            ratios: ratios.to_vec(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| classes[i]);
    let mut assigned = [0usize; 3];
    let mut out = vec![Split::Train; n];
    for (j, &i) in order.iter().enumerate() {
        let progress = (j + 1) as f64 / n as f64;
        let s = (0..3)
            .filter(|&s| assigned[s] < targets[s])
            .max_by(|&a, &b| {
                let da = targets[a] as f64 * progress - assigned[a] as f64;
                let db = targets[b] as f64 * progress - assigned[b] as f64;
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .unwrap();
        assigned[s] += 1;
        out[i] = Split::ALL[s];
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: String,
    pub class: usize,
    pub split: Split,
    /// Sidecar path per modality, relative to the manifest directory.
    pub volumes: BTreeMap<String, PathBuf>,
    pub mask: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: PhantomSpec,
    pub ratios: [f64; 3],
    pub modalities: Vec<String>,
    pub subjects: Vec<SubjectEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Default ratios of the 80-subject cohort: 51 / 13 / 16.
pub const DEFAULT_RATIOS: [f64; 3] = [51.0 / 80.0, 13.0 / 80.0, 16.0 / 80.0];

/// Class labels for a cohort, apportioned by the spec's class weights and
/// shuffled by its seed.
pub fn cohort_classes(spec: &PhantomSpec, n: usize) -> Vec<usize> {
    let counts = apportion(n, &spec.class_weights);
    let mut classes: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat(c).take(k))
        .collect();
    classes.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_c1a5));
    classes
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn ids(&self, split: Split) -> Vec<String> {
        self.subjects
            .iter()
            .filter(|s| s.split == split)
            .map(|s| s.id.clone())
            .collect()
    }

    pub fn entry(&self, id: &str) -> Option<&SubjectEntry> {
        self.subjects.iter().find(|s| s.id == id)
    }
}

/// Writes `n` subjects as RVOL files plus `manifest.json` under `out`.
pub fn generate_cohort(spec: &PhantomSpec, n: usize, ratios: [f64; 3], out: &Path) -> Result<Manifest> {
    spec.validate()?;
    let classes = cohort_classes(spec, n);
    let splits = stratified_split(&classes, &ratios, spec.seed)?;
    let spacing = vec![1.0; spec.shape.len()];
    let mut subjects = Vec::with_capacity(n);
    for (i, (&class, &split)) in classes.iter().zip(&splits).enumerate() {
        let s = generate_subject(spec, i as u64, class)?;
        let mut volumes = BTreeMap::new();
        for (name, v) in &s.volumes {
            let rel = PathBuf::from(&s.id).join(format!("{name}.rvol"));
            rvol::write_volume(&out.join(&rel), v)?;
            volumes.insert(name.clone(), rel);
        }
        let mask = PathBuf::from(&s.id).join("mask.rvol");
        rvol::write_mask(&out.join(&mask), &s.mask, &spacing)?;
        subjects.push(SubjectEntry {
            id: s.id,
            class,
            split,
            volumes,
            mask,
        });
    }
    let manifest = Manifest {
        spec: spec.clone(),
        ratios,
        modalities: spec.modalities.iter().map(|m| m.name.clone()).collect(),
        subjects,
    };
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freq::{crop_bounds, for_each_in_block};
    use crate::volume::dft_forward;

    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        for (rank, &i) in order.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }

    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        let (ra, rb) = (ranks(a), ranks(b));
        let n = a.len() as f64;
        let ma = ra.iter().sum::<f64>() / n;
        let mb = rb.iter().sum::<f64>() / n;
        let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn brain_values(s: &Subject, m: &str) -> Vec<f64> {
        s.volumes[m]
            .data()
            .iter()
            .zip(s.brain.data())
            .filter(|(_, &b)| b != 0)
            .map(|(v, _)| *v)
            .collect()
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = PhantomSpec::default_2d();
        let a = generate_subject(&spec, 4, 1).unwrap();
        let b = generate_subject(&spec, 4, 1).unwrap();
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.volumes, b.volumes);
        let c = generate_subject(&spec, 5, 1).unwrap();
        assert_ne!(a.volumes, c.volumes);
    }

    #[test]
    fn volumes_are_normalized() {
        let s = generate_subject(&PhantomSpec::default_2d(), 0, 0).unwrap();
        assert_eq!(s.volumes.len(), 4);
        for v in s.volumes.values() {
            assert_eq!(v.min_max(), (0.0, 1.0));
        }
    }

    #[test]
    fn mask_fraction_in_range_over_100_seeds() {
        for spec in [PhantomSpec::default_2d(), PhantomSpec::default_3d()] {
            let n: usize = spec.shape.iter().product();
            let seeds = if spec.shape.len() == 3 { 20 } else { 100 };
            for seed in 0..seeds {
                let s = generate_subject(&spec, seed, (seed % 3) as usize).unwrap();
                let f = s.mask.data().iter().filter(|&&m| m != 0).count() as f64 / n as f64;
                assert!((0.005..=0.03).contains(&f), "seed {seed}: {f}");
            }
        }
    }

    #[test]
    fn contrast_polarity_on_brain_voxels() {
        let s = generate_subject(&PhantomSpec::default_2d(), 2, 0).unwrap();
        let q = brain_values(&s, "qsm");
        assert!(spearman(&q, &brain_values(&s, "r2s")) > 0.0);
        assert!(spearman(&q, &brain_values(&s, "imag")) < 0.0);
        assert!(spearman(&q, &brain_values(&s, "swi")) < 0.0);
    }

    #[test]
    fn bias_energy_sits_in_low_band() {
        let spec = PhantomSpec::default_2d();
        for seed in 0..30 {
            let s = generate_subject(&spec, seed, 0).unwrap();
            for field in s.bias.values() {
                let centred: Vec<f64> = field.data().iter().map(|v| v - 1.0).collect();
                let spec = dft_forward(&Volume::new(field.shape().to_vec(), centred).unwrap());
                let bounds = crop_bounds(spec.shape(), 0.1).unwrap();
                let mut low = 0.0;
                for_each_in_block(spec.shape(), &bounds, |full, _| low += spec.data()[full].norm_sqr());
                assert!(low >= 0.95 * spec.energy(), "seed {seed}: {}", low / spec.energy());
            }
        }
    }

    #[test]
    fn background_noise_matches_configured_snr() {
        let spec = PhantomSpec::default_2d();
        let s = generate_subject(&spec, 1, 0).unwrap();
        for m in &spec.modalities {
            let v = &s.volumes[&m.name];
            let bg: Vec<f64> = v.data().iter().zip(s.brain.data()).filter(|(_, &b)| b == 0).map(|(x, _)| *x).collect();
            let brain = brain_values(&s, &m.name);
            let mean_bg = bg.iter().sum::<f64>() / bg.len() as f64;
            let sd = (bg.iter().map(|x| (x - mean_bg).powi(2)).sum::<f64>() / (bg.len() - 1) as f64).sqrt();
            let signal = brain.iter().sum::<f64>() / brain.len() as f64 - mean_bg;
            let snr = signal / sd;
            assert!(snr > m.snr.0 * 0.85 && snr < m.snr.1 * 1.15, "{}: {snr}", m.name);
        }
    }

    #[test]
    fn split_sizes() {
        let classes: Vec<usize> = (0..80).map(|i| i % 3).collect();
        let s = stratified_split(&classes, &DEFAULT_RATIOS, 0).unwrap();
        let count = |x| s.iter().filter(|&&v| v == x).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (51, 13, 16));
        let s = stratified_split(&[0; 5], &[0.6, 0.2, 0.2], 0).unwrap();
        let count = |x| s.iter().filter(|&&v| v == x).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (3, 1, 1));
        assert!(matches!(
            stratified_split(&[0; 2], &[0.6, 0.2, 0.2], 0),
            Err(Error::SplitTooSmall { .. })
        ));
    }

    #[test]
    fn split_is_stratified_by_class() {
        let spec = PhantomSpec::default_2d();
        let classes = cohort_classes(&spec, 80);
        let s = stratified_split(&classes, &DEFAULT_RATIOS, 3).unwrap();
        for c in 0..3 {
            let total = classes.iter().filter(|&&k| k == c).count() as f64;
            let train = classes.iter().zip(&s).filter(|(&k, &x)| k == c && x == Split::Train).count() as f64;
            assert!((train - total * 51.0 / 80.0).abs() <= 1.5, "class {c}");
        }
    }

    #[test]
    fn cohort_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let spec = PhantomSpec::new(vec![16, 16], 9);
        let mut spec = spec;
        spec.anatomy.radii = vec![(0.12, 0.13); 3];
        let m = generate_cohort(&spec, 5, [0.6, 0.2, 0.2], dir.path()).unwrap();
        let loaded = Manifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(m, loaded);
        let mut seen = std::collections::BTreeSet::new();
        for e in &loaded.subjects {
            assert!(seen.insert(e.id.clone()));
            let mask = rvol::read_mask(&dir.path().join(&e.mask)).unwrap();
            for p in e.volumes.values() {
                let v = rvol::read_volume(&dir.path().join(p)).unwrap();
                assert_eq!(v.shape(), mask.shape());
            }
        }
        assert_eq!(loaded.ids(Split::Train).len(), 3);
    }
}
