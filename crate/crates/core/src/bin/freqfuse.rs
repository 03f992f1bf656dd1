use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use freqfuse::harness::{
    disentangle_file, evaluate_dirs, run_combo_sweep, run_fraction_sweep, subject_csv, train_run,
    write_outputs, Dataset, ExperimentPlan, RunConfig, RunResult, TableKind,
};
use freqfuse::metrics::Metric;
use freqfuse::phantom::{generate_cohort, PhantomSpec, DEFAULT_RATIOS};
use freqfuse::{Error, Result};

#[derive(Parser)]
#[command(name = "freqfuse", version, about = "Frequency-disentangled prior fusion for small-sample segmentation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Combos,
    Fractions,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a phantom cohort and its manifest.
    Gen {
        /// Phantom spec JSON; the 2-D default when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 80)]
        n: usize,
        /// Overrides the spec seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Train, validation and test ratios.
        #[arg(long, num_args = 3, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split one volume into high- and low-frequency images.
    Disentangle {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        theta: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and predict the test split.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a directory of predicted masks against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Proposed model over every prior combination.
    SweepCombos {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Every model over the training-set fractions.
    SweepFractions {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild a table from saved runs.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
    },
}

fn undefined(label: &str, metrics: &[Metric]) -> bool {
    if metrics.is_empty() {
        return false;
    }
    let keys: Vec<&str> = metrics.iter().map(|m| m.key()).collect();
    eprintln!("{label}: undefined on every subject: {}", keys.join(", "));
    true
}

fn check_runs(runs: &[RunResult]) -> bool {
    let mut bad = false;
    for r in runs {
        let label = format!("{:?} {} f={} seed={}", r.spec.kind, r.spec.combo.join("+"), r.spec.fraction, r.spec.seed);
        bad |= undefined(&label, &r.test.undefined_metrics());
    }
    bad
}

fn sweep(plan: &Path, out: &Path, kind: TableKind) -> Result<bool> {
    let plan = ExperimentPlan::load(plan)?;
    let ds = Dataset::load(&plan.manifest)?;
    let (runs, name) = match kind {
        TableKind::Combos => (run_combo_sweep(&ds, &plan)?, "combos"),
        TableKind::Fractions => (run_fraction_sweep(&ds, &plan)?, "fractions"),
    };
    write_outputs(out, name, kind, &runs)?;
    Ok(check_runs(&runs))
}

/// Returns whether some cohort metric was undefined.
fn run(cmd: Cmd) -> Result<bool> {
    match cmd {
        Cmd::Gen { spec, n, seed, ratios, out } => {
            let mut spec = match spec {
                Some(p) => serde_json::from_slice(&fs::read(&p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?)?,
                None => PhantomSpec::default_2d(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let ratios = match ratios {
                Some(r) => [r[0], r[1], r[2]],
                None => DEFAULT_RATIOS,
            };
            let m = generate_cohort(&spec, n, ratios, &out)?;
            eprintln!("wrote {} subjects to {}", m.subjects.len(), out.display());
            Ok(false)
        }
        Cmd::Disentangle { input, theta, out } => disentangle_file(&input, theta, &out).map(|_| false),
        Cmd::Train { config, out } => {
            let r = train_run(&RunConfig::load(&config)?, &out)?;
            eprintln!("best epoch {} of {}", r.best_epoch, r.epochs);
            Ok(undefined("test", &r.test.undefined_metrics()))
        }
        Cmd::Eval { pred, gt, out } => {
            let report = evaluate_dirs(&pred, &gt)?;
            fs::write(&out, subject_csv(&report)?).map_err(|e| Error::Config(format!("{}: {e}", out.display())))?;
            Ok(undefined("eval", &report.undefined_metrics()))
        }
        Cmd::SweepCombos { plan, out } => sweep(&plan, &out, TableKind::Combos),
        Cmd::SweepFractions { plan, out } => sweep(&plan, &out, TableKind::Fractions),
        Cmd::Report { runs, kind, out } => {
            let bytes = fs::read(&runs).map_err(|e| Error::Config(format!("{}: {e}", runs.display())))?;
            let runs: Vec<RunResult> = serde_json::from_slice(&bytes)?;
            let (kind, name) = match kind {
                Kind::Combos => (TableKind::Combos, "combos"),
                Kind::Fractions => (TableKind::Fractions, "fractions"),
            };
            write_outputs(&out, name, kind, &runs)?;
            Ok(check_runs(&runs))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse().cmd) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
