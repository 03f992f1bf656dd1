//! Scores a shifted, slightly smaller disk against a reference disk.

use freqfuse::metrics::{evaluate, Metric};
use freqfuse::Mask;

fn disk(n: usize, cx: f64, cy: f64, r: f64) -> Mask {
    Mask::from_fn(vec![n, n], |i| {
        let (y, x) = (i[0] as f64, i[1] as f64);
        (x - cx).powi(2) + (y - cy).powi(2) <= r * r
    })
    .expect("valid shape")
}

fn main() -> freqfuse::Result<()> {
    let gt = disk(48, 24.0, 24.0, 10.0);
    let spacing = [0.5, 0.5];
    for (dx, r) in [(0.0, 10.0), (2.0, 10.0), (3.0, 8.0), (6.0, 6.0)] {
        let pred = disk(48, 24.0 + dx, 24.0, r);
        let m = evaluate("disk", &pred, &gt, &spacing)?;
        let cells: Vec<String> = Metric::ALL
            .iter()
            .map(|&k| match m.get(k) {
                Some(v) => format!("{}={v:.3}", k.key()),
                None => format!("{}=n/a", k.key()),
            })
            .collect();
        println!("shift {dx} radius {r}: {}", cells.join(" "));
    }
    Ok(())
}
