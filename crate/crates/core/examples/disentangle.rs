//! Splits one phantom QSM slice into its high- and low-frequency parts and
//! checks that they add back up to the image.

use freqfuse::phantom::{generate_subject, PhantomSpec};
use freqfuse::{dft_forward, high_image, low_image, pad_and_invert, split, SplitConfig};

fn main() -> freqfuse::Result<()> {
    let spec = PhantomSpec::default_2d();
    let subject = generate_subject(&spec, 7, 1)?;
    let qsm = &subject.volumes["qsm"];

    for theta in [0.05, 0.1, 0.25] {
        let spectrum = dft_forward(qsm);
        let parts = split(&spectrum, SplitConfig::new(theta)?)?;
        let high = high_image(&parts);
        let low = low_image(&parts);
        let blurred = pad_and_invert(&parts);

        let low_energy = parts.padded_low().energy() / spectrum.energy();
        let recon = high.add(&blurred)?;
        println!(
            "theta={theta:<5} low block {:?}  low-band energy {:5.1}%  reassembly error {:.2e}  low range [{:.3}, {:.3}]",
            low.shape(),
            100.0 * low_energy,
            recon.relative_l2(qsm),
            low.min_max().0,
            low.min_max().1,
        );
    }
    Ok(())
}
