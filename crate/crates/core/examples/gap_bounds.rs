//! Exact spectral gaps against the analytic lower bound, on a bounded
//! interval and on the real line.
//!
//! cargo run --release --example gap_bounds

use tempercore::birth_death::{build_chain, gap_exact, gap_lower_bound, SigmaFunction};
use tempercore::target::check_regularity;
use tempercore::{Domain, TargetDensity};

fn main() -> tempercore::Result<()> {
    let sigma = SigmaFunction::constant_in(0.8, 0.5, 1.0)?;
    let m_list = [8, 16, 32, 64];
    let targets = [
        TargetDensity::standard_normal(-3.0, 3.0)?,
        TargetDensity::laplace(1.0, Domain::real_line(1.0, 1.0)?)?,
    ];
    for pi in targets {
        let reg = check_regularity(&pi, &m_list)?;
        let rate = match pi.domain {
            Domain::RealLine { tail_rate, .. } => Some(tail_rate),
            Domain::Bounded { .. } => None,
        };
        println!(
            "{} on {:?}: L = {:.3}, Q = {:.4}",
            pi.name, pi.domain, pi.lipschitz, reg.big_q
        );
        println!("{:>5} {:>12} {:>12} {:>10}", "m", "gap", "bound", "gap*m^2");
        for m in m_list {
            let chain = build_chain(&pi, &sigma, m, &pi.domain, None)?;
            let g = gap_exact(&chain)?;
            let b = gap_lower_bound(
                pi.lipschitz,
                rate,
                reg.big_q,
                sigma.k_lo,
                m,
                pi.domain.kind(),
            )?;
            println!("{m:>5} {g:>12.4e} {b:>12.4e} {:>10.4}", g * (m * m) as f64);
        }
        println!();
    }
    Ok(())
}
