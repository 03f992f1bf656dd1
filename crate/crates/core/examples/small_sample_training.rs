//! Baseline UNet against the frequency-fused model on four training
//! subjects, scored on the held-out test split.
//!
//! Usage: `small_sample_training [n_train] [epochs] [seed]`

use std::collections::BTreeMap;
use std::time::Instant;

use freqfuse::fusion::{evaluate_dice, train, ArchConfig, ModalitySample, ModelKind, TrainConfig};
use freqfuse::phantom::{cohort_classes, generate_subject, stratified_split, PhantomSpec, Split, Subject, DEFAULT_RATIOS};

fn main() -> freqfuse::Result<()> {
    let arg = |i: usize, d: u64| std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (n_train, epochs, seed) = (arg(1, 4) as usize, arg(2, 60) as usize, arg(3, 0));

    let spec = PhantomSpec::default_2d();
    let n = 80;
    let classes = cohort_classes(&spec, n);
    let splits = stratified_split(&classes, &DEFAULT_RATIOS, spec.seed)?;
    let subjects = (0..n)
        .map(|i| generate_subject(&spec, i as u64, classes[i]))
        .collect::<freqfuse::Result<Vec<Subject>>>()?;
    let ids = |s: Split| (0..n).filter(|&i| splits[i] == s).collect::<Vec<_>>();
    let (train_ids, val_ids, test_ids) = (ids(Split::Train), ids(Split::Val), ids(Split::Test));

    let donors: BTreeMap<_, _> = subjects[train_ids[0]].volumes.clone();
    let combo = vec!["qsm".to_string(), "swi".to_string()];

    for kind in [ModelKind::Baseline, ModelKind::Proposed] {
        let arch = ArchConfig { kind, ..ArchConfig::default() };
        let split = arch.split()?;
        let set = |idx: &[usize]| {
            idx.iter()
                .map(|&i| {
                    let s = &subjects[i];
                    ModalitySample::new(&s.id, "qsm", &s.volumes["qsm"], s.mask.clone(), &donors, &combo, split)
                })
                .collect::<freqfuse::Result<Vec<_>>>()
        };
        let (tr, va, te) = (set(&train_ids[..n_train])?, set(&val_ids)?, set(&test_ids)?);
        let cfg = TrainConfig { epochs, seed, val_every: 5, ..TrainConfig::default() };

        let t = Instant::now();
        let out = train(&arch, &tr, &va, &cfg)?;
        println!(
            "{kind:>8}: {n_train} subjects, {epochs} epochs in {:.1}s, best epoch {}, test Dice {:.3}",
            t.elapsed().as_secs_f64(),
            out.best_epoch,
            evaluate_dice(&out.model, &te)?
        );
    }
    Ok(())
}
