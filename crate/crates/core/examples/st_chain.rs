//! A simulated-tempering run on an optimal ladder with exact and Gaussian
//! draws of the sufficient statistic.
//!
//! cargo run --release --example st_chain

use tempercore::tempering::{run_st_chain_with, trace_stats, GSampler};
use tempercore::{optimal_ladder, TemperedFamily};

fn main() -> tempercore::Result<()> {
    let fam = TemperedFamily::gaussian();
    let ladder = optimal_ladder(&fam, 400, 0.3)?;
    println!("{} rungs: {:?}", ladder.n_rungs(), ladder.betas);
    for sampler in [GSampler::Exact, GSampler::GaussianApprox] {
        let trace = run_st_chain_with(&fam, &ladder, 200_000, 7, sampler)?;
        let st = trace_stats(&trace, &ladder, |b| b)?;
        println!(
            "{sampler:?}: acceptance {:.4}, esjd {:.3e}, var(beta) {:.2} ± {:.2}",
            st.acc_rate, st.esjd, st.var_f, st.se
        );
        for (i, r) in trace.rungs.iter().enumerate() {
            println!(
                "  rung {i}: occupancy {:.3}, up {}/{}, down {}/{}",
                st.occupancy[i], r.up_accepted, r.up_proposed, r.down_accepted, r.down_proposed
            );
        }
    }
    Ok(())
}
