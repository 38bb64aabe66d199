//! Expected squared jumps across constant-acceptance ladders, in β and in
//! thermodynamic length.
//!
//! cargo run --release --example acceptance_sweep [d]

use tempercore::validation::acceptance_sweep;
use tempercore::TemperedFamily;

fn main() -> tempercore::Result<()> {
    let d: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(100);
    let points = acceptance_sweep(&TemperedFamily::gaussian(), d, 0.3, 200_000, 3)?;
    println!(
        "{:>7} {:>6} {:>9} {:>11} {:>11}",
        "target", "rungs", "accepted", "esjd", "metric"
    );
    for p in &points {
        println!(
            "{:>7.2} {:>6} {:>9.4} {:>11.3e} {:>11.3e}",
            p.target, p.rungs, p.acc_rate, p.esjd, p.metric_esjd
        );
    }
    Ok(())
}
