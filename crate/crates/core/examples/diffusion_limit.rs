//! A speeded-up birth–death chain and the Langevin diffusion it approximates,
//! compared through endpoint moments and the asymptotic variance of x.
//!
//! cargo run --release --example diffusion_limit

use tempercore::birth_death::{
    build_chain, exact_asymptotic_variance, sample_speeded_endpoint, SigmaFunction,
};
use tempercore::diffusion::{
    batch_means_variance, langevin_spec, simulate_endpoint, simulate_reflected,
};
use tempercore::stats::{derive_seed, ks_two_sample, mean, sample_variance};
use tempercore::TargetDensity;

fn main() -> tempercore::Result<()> {
    let pi = TargetDensity::standard_normal(-3.0, 3.0)?;
    let sigma = SigmaFunction::constant(1.0)?;
    let spec = langevin_spec(&pi, &sigma)?;
    let (x0, t) = (1.5, 0.5);
    let n = 4000;
    let diff: Vec<f64> = (0..n)
        .map(|k| simulate_endpoint(&spec, x0, 1e-3, t, derive_seed(11, k)))
        .collect::<tempercore::Result<_>>()?;
    println!(
        "diffusion X_{t}: mean {:.4}, var {:.4}",
        mean(&diff),
        sample_variance(&diff)
    );
    for m in [8, 32] {
        let chain = build_chain(&pi, &sigma, m, &pi.domain, None)?;
        let ends: Vec<f64> = (0..n)
            .map(|k| sample_speeded_endpoint(&chain, t, x0, derive_seed(12, k)))
            .collect();
        println!(
            "m = {m:>2}: mean {:.4}, var {:.4}, KS to diffusion {:.4}",
            mean(&ends),
            sample_variance(&ends),
            ks_two_sample(&ends, &diff)
        );
    }

    let path = simulate_reflected(&spec, 0.0, 2e-3, 2000.0, 5)?;
    let est = batch_means_variance(&path.values, |x| x, 50, path.dt)?;
    let chain = build_chain(&pi, &sigma, 64, &pi.domain, None)?;
    let exact = exact_asymptotic_variance(&chain, |x| x)?;
    println!(
        "diffusion variance of x: {:.3} ± {:.3}",
        est.estimate, est.se
    );
    println!("chain m = 64 scaled variance: {:.3}", exact.scaled);
    Ok(())
}
