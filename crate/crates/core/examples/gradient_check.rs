//! Finite-difference check of every parameter gradient of a small proposed
//! network on a phantom slice.

use std::collections::BTreeMap;

use freqfuse::fusion::{ArchConfig, BackboneConfig, HeadConfig, ModalitySample, Model, ModelKind};
use freqfuse::nn::{grad_check, GradCheckOptions};
use freqfuse::phantom::{generate_subject, PhantomSpec};

fn main() -> freqfuse::Result<()> {
    let arch = ArchConfig {
        kind: ModelKind::Proposed,
        theta: 0.25,
        backbone: BackboneConfig {
            base_channels: 2,
            depth: 2,
            ..BackboneConfig::default()
        },
        head: HeadConfig {
            hidden_channels: 2,
            dropout: 0.1,
        },
    };
    let subject = generate_subject(&PhantomSpec::new(vec![24, 24], 0), 3, 1)?;
    let target = &subject.volumes["qsm"];
    let donors: BTreeMap<String, _> = subject.volumes.clone();
    let combo = vec!["qsm".to_string(), "swi".to_string()];
    let sample = ModalitySample::new(&subject.id, "qsm", target, subject.mask.clone(), &donors, &combo, arch.split()?)?;

    let model = Model::new(arch, 5)?;
    let prepared = model.prepare(&sample)?;
    let report = grad_check(
        model.params(),
        |g, params| {
            let m = Model::from_params(model.arch().clone(), params.clone())?;
            let out = m.forward_graph(g, &prepared)?;
            m.loss(g, &out, &prepared.target)
        },
        GradCheckOptions::default(),
    )?;
    println!(
        "{} parameters, {} entries checked, {} at kinks, max relative error {:.2e} (worst {:?})",
        model.parameter_count(),
        report.checked,
        report.kinks,
        report.max_rel_error,
        report.worst
    );
    println!("{}", if report.passes(1e-4) { "ok" } else { "FAILED" });
    Ok(())
}
