//! Runs a reduced combination sweep and training-size sweep on a generated
//! cohort and prints both tables.
//!
//! Usage: `sweeps [out_dir]`

use std::path::PathBuf;

use freqfuse::fusion::{ArchConfig, BackboneConfig};
use freqfuse::harness::{run_combo_sweep, run_fraction_sweep, write_outputs, Dataset, ExperimentPlan, Schedule, TableKind};
use freqfuse::phantom::{generate_cohort, PhantomSpec, MANIFEST_FILE};

fn main() -> freqfuse::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("freqfuse-sweeps"));
    let spec = PhantomSpec::new(vec![32, 32], 1);
    generate_cohort(&spec, 24, [0.6, 0.2, 0.2], &out.join("cohort"))?;
    let ds = Dataset::load(&out.join("cohort").join(MANIFEST_FILE))?;

    let plan = ExperimentPlan {
        combo_fraction: 0.3,
        fractions: vec![0.3, 1.0],
        seeds: vec![0, 1],
        arch: ArchConfig {
            backbone: BackboneConfig { base_channels: 4, depth: 2, ..BackboneConfig::default() },
            ..ArchConfig::default()
        },
        schedule: Schedule { max_epochs: 80, min_epochs: 40, step_budget: 600, val_every: 5 },
        ..ExperimentPlan::default()
    };

    let combos = run_combo_sweep(&ds, &plan)?;
    let table = write_outputs(&out, "combos", TableKind::Combos, &combos)?;
    println!("{}", table.to_markdown());

    let sizes = run_fraction_sweep(&ds, &plan)?;
    let table = write_outputs(&out, "fractions", TableKind::Fractions, &sizes)?;
    println!("{}", table.to_markdown());
    println!("outputs in {}", out.display());
    Ok(())
}
