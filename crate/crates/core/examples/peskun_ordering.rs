//! Exact asymptotic variances of two birth–death chains whose σ functions are
//! pointwise ordered.
//!
//! cargo run --release --example peskun_ordering

use tempercore::birth_death::{
    build_chain, exact_asymptotic_variance, peskun_dominates, SigmaFunction,
};
use tempercore::target::evaluator;
use tempercore::TargetDensity;

fn main() -> tempercore::Result<()> {
    let pi = TargetDensity::standard_normal(-3.0, 3.0)?;
    let (k_lo, k_hi) = (0.3, 1.2);
    let big = SigmaFunction::constant_in(1.2, k_lo, k_hi)?;
    let small = SigmaFunction::new(
        evaluator(|x| 0.75 + 0.4 * x.cos()),
        evaluator(|x| -0.4 * x.sin()),
        k_lo,
        k_hi,
    )?;
    type Named = (&'static str, fn(f64) -> f64);
    let fs: [Named; 3] = [("x", |x| x), ("x^2", |x| x * x), ("sin", f64::sin)];
    println!(
        "{:>4} {:>5} {:>12} {:>12} {:>10}",
        "m", "f", "v(big)", "v(small)", "dominates"
    );
    for m in [8, 16, 32, 64] {
        let c1 = build_chain(&pi, &big, m, &pi.domain, None)?;
        let c2 = build_chain(&pi, &small, m, &pi.domain, None)?;
        let dom = peskun_dominates(&c1, &c2)?;
        for (name, f) in fs {
            let v1 = exact_asymptotic_variance(&c1, f)?;
            let v2 = exact_asymptotic_variance(&c2, f)?;
            println!("{m:>4} {name:>5} {:>12.4} {:>12.4} {dom:>10}", v1.v, v2.v);
        }
    }
    Ok(())
}
