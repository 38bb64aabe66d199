//! The scaled variance 2v/(m²S) settling to the diffusion variance as the
//! lattice is refined.
//!
//! cargo run --release --example variance_scaling

use tempercore::birth_death::{build_chain, exact_asymptotic_variance, SigmaFunction};
use tempercore::TargetDensity;

fn main() -> tempercore::Result<()> {
    let pi = TargetDensity::standard_normal(-3.0, 3.0)?;
    let sigma = SigmaFunction::constant(1.0)?;
    println!(
        "{:>5} {:>7} {:>12} {:>12} {:>12}",
        "m", "states", "v", "S", "scaled"
    );
    let mut prev: Option<f64> = None;
    for m in [4, 8, 16, 32, 64, 128, 256] {
        let chain = build_chain(&pi, &sigma, m, &pi.domain, None)?;
        let r = exact_asymptotic_variance(&chain, |x| x)?;
        let delta = prev.map_or(String::new(), |p| format!("  change {:+.4}", r.scaled - p));
        println!(
            "{m:>5} {:>7} {:>12.2} {:>12.4} {:>12.6}{delta}",
            chain.len(),
            r.v,
            r.s_norm,
            r.scaled
        );
        prev = Some(r.scaled);
    }
    Ok(())
}
