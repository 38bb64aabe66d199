//! The universal optimum of u²Φ(−u/2) and the acceptance rate it implies.
//!
//! cargo run --release --example optimal_acceptance

use tempercore::ladder_opt::{objective, speed, stationarity_residual, OptimalRule};
use tempercore::TemperedFamily;

fn main() -> tempercore::Result<()> {
    let rule = OptimalRule::compute()?;
    println!("u*   = {:.8}", rule.u_star);
    println!("acc* = {:.6}", rule.acc_star);
    println!(
        "stationarity residual = {:.2e}",
        stationarity_residual(rule.u_star)
    );

    println!("\n{:>6} {:>12}", "u", "u^2 Phi(-u/2)");
    for k in 1..=12 {
        let u = 0.5 * k as f64;
        println!("{u:>6.2} {:>12.6}", objective(u));
    }

    // the same maximiser for any family once ℓ is measured in units of 1/√I
    for fam in [TemperedFamily::gaussian(), TemperedFamily::laplace()] {
        let ell = rule.ell_rule(&fam, 0.3)?;
        for beta in [0.3, 1.0] {
            let l = ell.at(beta);
            println!(
                "{:>8} beta={beta:.1} ell*={l:.4} speed={:.4} (0.8 ell*: {:.4}, 1.25 ell*: {:.4})",
                fam.name(),
                speed(&fam, beta, l)?,
                speed(&fam, beta, 0.8 * l)?,
                speed(&fam, beta, 1.25 * l)?,
            );
        }
    }
    Ok(())
}
