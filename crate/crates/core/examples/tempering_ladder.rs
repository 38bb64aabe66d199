//! Optimal and fixed-acceptance ladders for built-in and tabulated families.
//!
//! cargo run --release --example tempering_ladder

use tempercore::ladder_opt::acceptance_ladder;
use tempercore::target::LogTable;
use tempercore::tempering::acceptance_refined;
use tempercore::{optimal_ladder, Domain, OptimalRule, TemperedFamily};

fn main() -> tempercore::Result<()> {
    let gauss = TemperedFamily::gaussian();
    let ladder = optimal_ladder(&gauss, 100, 0.3)?;
    println!("gaussian, d = 100: {:?}", ladder.betas);

    let rule = OptimalRule::compute()?;
    let ell = rule.ell_rule(&gauss, 0.3)?;
    for beta in [0.4, 0.7, 1.0] {
        let (up, down) = acceptance_refined(&gauss, beta, &ell, 100)?;
        println!("  beta {beta:.1}: refined acceptance up {up:.4}, down {down:.4}");
    }

    for d in [10, 100, 1000, 10_000] {
        let opt = optimal_ladder(&TemperedFamily::laplace(), d, 0.1)?;
        let wide = acceptance_ladder(&TemperedFamily::laplace(), 0.5, d, 0.1)?;
        println!(
            "laplace, d = {d:>5}: {} rungs optimal, {} rungs at a = 0.5",
            opt.n_rungs(),
            wide.n_rungs()
        );
    }

    // a double well given as a table of log f
    let xs: Vec<f64> = (0..=80).map(|k| -4.0 + 0.1 * k as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|x| -2.0 * (x * x - 1.0).powi(2)).collect();
    let well =
        TemperedFamily::from_table(LogTable::new(xs, ys)?, Domain::bounded(-4.0, 4.0)?, 2048)?;
    let ladder = optimal_ladder(&well, 200, 0.05)?;
    println!("double well, d = 200: {} rungs", ladder.n_rungs());
    for b in ladder.betas.iter().take(6) {
        println!("  {b:.5}  I = {:.4}", well.moments(*b)?.i);
    }
    Ok(())
}
