//! Generates a small phantom cohort on disk and summarizes it.

use std::collections::BTreeMap;

use freqfuse::phantom::{generate_cohort, PhantomSpec, Split, DEFAULT_RATIOS};

fn main() -> freqfuse::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let out = std::env::temp_dir().join("freqfuse-phantom-cohort");
    let spec = PhantomSpec::default_2d();
    let manifest = generate_cohort(&spec, n, DEFAULT_RATIOS, &out)?;

    let mut counts: BTreeMap<(Split, usize), usize> = BTreeMap::new();
    for s in &manifest.subjects {
        *counts.entry((s.split, s.class)).or_default() += 1;
    }
    println!("{} subjects in {}", manifest.subjects.len(), out.display());
    println!("modalities: {}", manifest.modalities.join(", "));
    for split in [Split::Train, Split::Val, Split::Test] {
        let per: Vec<usize> = (0..3).map(|c| counts.get(&(split, c)).copied().unwrap_or(0)).collect();
        println!("{split:?}: {} subjects, per class {per:?}", manifest.ids(split).len());
    }

    let first = freqfuse::phantom::generate_subject(&spec, 0, manifest.subjects[0].class)?;
    println!(
        "{}: mask fraction {:.4}, qsm noise sigma {:.3}",
        first.id,
        first.mask.count() as f64 / first.mask.len() as f64,
        first.noise_sigma["qsm"]
    );
    Ok(())
}
