//! Simulated tempering over an inverse-temperature ladder, with the
//! within-temperature state redrawn exactly before every proposal.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::quadrature::CompositeRule;
use crate::stats::{self, rng_from_seed, BatchMeans};
use crate::target::{evaluator, Evaluator, TemperedFamily};

/// A spacing rule β ↦ ℓ(β) with a name for reports.
#[derive(Clone)]
pub struct EllRule {
    pub name: String,
    pub eval: Evaluator,
}

impl fmt::Debug for EllRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EllRule").field("name", &self.name).finish()
    }
}

impl EllRule {
    pub fn new(name: impl Into<String>, eval: Evaluator) -> Self {
        EllRule {
            name: name.into(),
            eval,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("constant-{c}"), evaluator(move |_| c))
    }

    pub fn at(&self, beta: f64) -> f64 {
        (self.eval)(beta)
    }

    /// ℓ'(β) by a centred difference, one-sided at β = 1.
    pub fn derivative(&self, beta: f64) -> f64 {
        let h = 1e-5 * beta;
        if beta + h > 1.0 {
            (self.at(beta) - self.at(beta - h)) / h
        } else {
            (self.at(beta + h) - self.at(beta - h)) / (2.0 * h)
        }
    }
}

/// Inverse temperatures 1 = β_0 > β_1 > … > β_{k_d} ≥ χ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    pub d: usize,
    pub chi: f64,
    pub betas: Vec<f64>,
    pub ell_name: String,
    pub k_d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc_target: Option<f64>,
}

const MAX_RUNGS: usize = 1_000_000;

/// β_{i+1} = β_i − ℓ(β_i)/√d until the next rung would fall below χ.
pub fn build_ladder(ell: &EllRule, d: usize, chi: f64) -> Result<Ladder> {
    if d == 0 {
        return Err(Error::rejected("d must be >= 1"));
    }
    if !(chi > 0.0 && chi < 1.0) {
        return Err(Error::rejected(format!(
            "chi must lie in (0, 1), got {chi}"
        )));
    }
    let sd = (d as f64).sqrt();
    let mut betas = vec![1.0];
    let mut b = 1.0;
    loop {
        let l = ell.at(b);
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::rejected(format!("ell({b}) = {l} must be positive")));
        }
        let next = b - l / sd;
        if next < chi {
            break;
        }
        if betas.len() >= MAX_RUNGS {
            return Err(Error::Configuration(format!(
                "ladder did not reach chi = {chi} within {MAX_RUNGS} rungs"
            )));
        }
        betas.push(next);
        b = next;
    }
    Ok(Ladder {
        d,
        chi,
        k_d: betas.len() - 1,
        betas,
        ell_name: ell.name.clone(),
        acc_target: None,
    })
}

impl Ladder {
    pub fn n_rungs(&self) -> usize {
        self.betas.len()
    }
}

/// How the sufficient statistic G = Σ g(X_j) is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GSampler {
    /// d exact draws from f^β.
    #[default]
    Exact,
    /// G ~ Normal(dM(β), dI(β)).
    GaussianApprox,
}

/// Per-rung proposal and acceptance counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RungCounts {
    /// Proposals towards lower β (index + 1), including auto-rejected ones.
    pub up_proposed: u64,
    pub up_accepted: u64,
    pub down_proposed: u64,
    pub down_accepted: u64,
}

/// Index path of a simulated-tempering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct STTrace {
    /// Ladder index before the first step and after every step.
    pub indices: Vec<u32>,
    pub accepted: Vec<bool>,
    pub proposals: u64,
    pub accepts: u64,
    pub rungs: Vec<RungCounts>,
    pub seed: u64,
}

impl STTrace {
    pub fn n_steps(&self) -> usize {
        self.accepted.len()
    }

    pub fn betas(&self, ladder: &Ladder) -> Vec<f64> {
        self.indices
            .iter()
            .map(|&i| ladder.betas[i as usize])
            .collect()
    }
}

pub fn run_st_chain(
    family: &TemperedFamily,
    ladder: &Ladder,
    n_steps: usize,
    seed: u64,
) -> Result<STTrace> {
    run_st_chain_with(family, ladder, n_steps, seed, GSampler::Exact)
}

/// Simulated tempering on `ladder` starting at β = 1.
///
/// Each step proposes a neighbouring rung with probability ½ each; moves off
/// the ladder are rejected and still count as proposals. Otherwise G is
/// drawn at the current β and the move is accepted with probability
/// `min(1, exp(d(K(β′) − K(β)) + (β′ − β)G))`.
pub fn run_st_chain_with(
    family: &TemperedFamily,
    ladder: &Ladder,
    n_steps: usize,
    seed: u64,
    g_sampler: GSampler,
) -> Result<STTrace> {
    if n_steps == 0 {
        return Err(Error::rejected("n_steps must be >= 1"));
    }
    let n = ladder.n_rungs();
    let moments = ladder
        .betas
        .iter()
        .map(|&b| family.moments(b))
        .collect::<Result<Vec<_>>>()?;
    let samplers = match g_sampler {
        GSampler::Exact => ladder
            .betas
            .iter()
            .map(|&b| family.sampler(b))
            .collect::<Result<Vec<_>>>()?,
        GSampler::GaussianApprox => Vec::new(),
    };
    let d = ladder.d;
    let df = d as f64;
    let mut rng = rng_from_seed(seed);
    let mut i = 0usize;
    let mut indices = Vec::with_capacity(n_steps + 1);
    let mut accepted = Vec::with_capacity(n_steps);
    let mut rungs = vec![RungCounts::default(); n];
    let mut accepts = 0u64;
    indices.push(0);
    for _ in 0..n_steps {
        let up = rng.gen::<bool>();
        let counts = &mut rungs[i];
        if up {
            counts.up_proposed += 1;
        } else {
            counts.down_proposed += 1;
        }
        let target = if up { i + 1 } else { i.wrapping_sub(1) };
        let mut ok = false;
        if target < n {
            let g = match g_sampler {
                GSampler::Exact => {
                    let s = &samplers[i];
                    (0..d).map(|_| family.g(s.draw(&mut rng))).sum::<f64>()
                }
                GSampler::GaussianApprox => {
                    let z: f64 = rng.sample(StandardNormal);
                    df * moments[i].m + (df * moments[i].i).sqrt() * z
                }
            };
            let log_ratio = df * (moments[target].k - moments[i].k)
                + (ladder.betas[target] - ladder.betas[i]) * g;
            ok = rng.gen::<f64>() < log_ratio.exp();
        }
        if ok {
            if up {
                counts.up_accepted += 1;
            } else {
                counts.down_accepted += 1;
            }
            accepts += 1;
            i = target;
        }
        accepted.push(ok);
        indices.push(i as u32);
    }
    Ok(STTrace {
        indices,
        accepted,
        proposals: n_steps as u64,
        accepts,
        rungs,
        seed,
    })
}

/// First-order acceptance 2Φ(−ℓ√I(β)/2).
pub fn acceptance_asymptotic(family: &TemperedFamily, beta: f64, ell_val: f64) -> Result<f64> {
    let i = family.moments(beta)?.i;
    Ok((2.0 * normal::cdf(-ell_val * i.sqrt() / 2.0)).clamp(0.0, 1.0))
}

/// E[1 ∧ e^Z] for Z ~ Normal(−s²/2 + shift, s²).
fn expected_min_one(s: f64, shift: f64) -> f64 {
    if s < 1e-12 {
        return shift.exp().min(1.0);
    }
    let mu = -0.5 * s * s + shift;
    (normal::cdf(mu / s) + shift.exp() * normal::cdf(-s - mu / s)).clamp(0.0, 1.0)
}

/// Acceptance of moves away from (α⁺) and back to (α⁻) the rung at β,
/// including the K''' corrections of order d^{−1/2}.
///
/// α⁺ = Φ(−√Iℓ/2 − εℓK'''/(6√I)) + exp(−εℓ²K'''/6)Φ(−√Iℓ/2 + εℓK'''/(6√I)), ε = ℓ/√d;
/// α⁻ uses ℓ̲ = ℓ + ℓℓ'/√d, ε̲ = ℓ̲/√d and the opposite sign of K'''.
pub fn acceptance_refined(
    family: &TemperedFamily,
    beta: f64,
    ell: &EllRule,
    d: usize,
) -> Result<(f64, f64)> {
    if d == 0 {
        return Err(Error::rejected("d must be >= 1"));
    }
    let sd = (d as f64).sqrt();
    let i = family.moments(beta)?.i;
    let k3 = family.third_derivative_k(beta)?;
    let l = ell.at(beta);
    let l_low = l + l * ell.derivative(beta) / sd;
    let plus = expected_min_one(l * i.sqrt(), -(l / sd) * l * l * k3 / 6.0);
    let minus = expected_min_one(l_low * i.sqrt(), (l_low / sd) * l_low * l_low * k3 / 6.0);
    Ok((plus, minus))
}

/// ∫_β^1 √I(b) db at every rung, the thermodynamic position of the rung.
pub fn thermodynamic_positions(family: &TemperedFamily, ladder: &Ladder) -> Result<Vec<f64>> {
    let mut pos = Vec::with_capacity(ladder.n_rungs());
    let mut acc = 0.0;
    pos.push(0.0);
    for w in ladder.betas.windows(2) {
        let rule = CompositeRule::new(w[1], w[0], 2);
        let mut seg = 0.0;
        for (&b, &wt) in rule.nodes.iter().zip(&rule.weights) {
            seg += wt * family.moments(b)?.i.sqrt();
        }
        acc += seg;
        pos.push(acc);
    }
    Ok(pos)
}

/// Summary statistics of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    /// Mean of (β_n − β_{n−1})².
    pub esjd: f64,
    pub acc_rate: f64,
    pub occupancy: Vec<f64>,
    /// Batch-means asymptotic variance of f(β_n), per step.
    pub var_f: f64,
    pub se: f64,
}

pub const MIN_TRACE_LEN: usize = 1000;

pub fn trace_stats(trace: &STTrace, ladder: &Ladder, f: impl Fn(f64) -> f64) -> Result<TraceStats> {
    let n = trace.n_steps();
    if n < MIN_TRACE_LEN {
        return Err(Error::InsufficientData(format!(
            "trace has {n} steps, need at least {MIN_TRACE_LEN}"
        )));
    }
    let betas = trace.betas(ladder);
    let esjd = mean_square_jump(&betas);
    let mut occupancy = vec![0.0; ladder.n_rungs()];
    for &i in &trace.indices[1..] {
        occupancy[i as usize] += 1.0;
    }
    for o in &mut occupancy {
        *o /= n as f64;
    }
    let fx: Vec<f64> = betas[1..].iter().map(|&b| f(b)).collect();
    let BatchMeans { estimate, se, .. } =
        stats::batch_means(&fx, (n / 100).clamp(stats::MIN_BATCHES, 50), 1.0)?;
    Ok(TraceStats {
        esjd,
        acc_rate: trace.accepts as f64 / trace.proposals as f64,
        occupancy,
        var_f: estimate,
        se,
    })
}

fn mean_square_jump(xs: &[f64]) -> f64 {
    xs.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// ESJD measured in thermodynamic length ∫√I dβ rather than in β.
pub fn metric_esjd(trace: &STTrace, positions: &[f64]) -> f64 {
    let xs: Vec<f64> = trace
        .indices
        .iter()
        .map(|&i| positions[i as usize])
        .collect();
    mean_square_jump(&xs)
}

/// Rows `(step, index, beta, accepted)`; step 0 is the initial state.
pub fn trace_rows(trace: &STTrace, ladder: &Ladder) -> Vec<(usize, u32, f64, bool)> {
    trace
        .indices
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let acc = if k == 0 { false } else { trace.accepted[k - 1] };
            (k, i, ladder.betas[i as usize], acc)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ladder_opt;

    #[test]
    fn constant_rule_ladders() {
        let l = build_ladder(&EllRule::constant(1.0), 25, 0.7).unwrap();
        assert_eq!(l.k_d, 1);
        assert!((l.betas[1] - 0.8).abs() < 1e-15);
        let l = build_ladder(&EllRule::constant(1.0), 100, 0.55).unwrap();
        assert_eq!(l.k_d, 4);
        for (b, want) in l.betas.iter().zip([1.0, 0.9, 0.8, 0.7, 0.6]) {
            assert!((b - want).abs() < 1e-12);
        }
        assert!(l.betas.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn ladder_errors() {
        assert!(matches!(
            build_ladder(&EllRule::constant(1e-9), 1, 0.5),
            Err(Error::Configuration(_))
        ));
        assert!(build_ladder(&EllRule::constant(0.0), 1, 0.5).is_err());
        assert!(build_ladder(&EllRule::constant(1.0), 0, 0.5).is_err());
    }

    #[test]
    fn ladder_json_shape() {
        let l = build_ladder(&EllRule::constant(1.0), 25, 0.7).unwrap();
        let v: serde_json::Value = serde_json::to_value(&l).unwrap();
        for key in ["d", "chi", "betas", "ell_name"] {
            assert!(v.get(key).is_some());
        }
    }

    #[test]
    fn single_rung_never_moves() {
        let fam = TemperedFamily::gaussian();
        let l = build_ladder(&EllRule::constant(1.0), 1, 0.5).unwrap();
        assert_eq!(l.k_d, 0);
        let t = run_st_chain(&fam, &l, 500, 1).unwrap();
        assert!(t.indices.iter().all(|&i| i == 0));
        assert_eq!(t.accepts, 0);
        assert_eq!(t.proposals, 500);
    }

    #[test]
    fn zero_step_proposal_is_always_accepted() {
        // two rungs at the same β: the Metropolis ratio is exactly 1
        let fam = TemperedFamily::gaussian();
        let l = Ladder {
            d: 10,
            chi: 0.5,
            betas: vec![0.8, 0.8],
            ell_name: "flat".into(),
            k_d: 1,
            acc_target: None,
        };
        let t = run_st_chain(&fam, &l, 2000, 3).unwrap();
        let feasible: u64 = t.rungs[0].up_proposed + t.rungs[1].down_proposed;
        assert_eq!(t.accepts, feasible);
    }

    #[test]
    fn traces_are_reproducible() {
        let fam = TemperedFamily::gaussian();
        let l = ladder_opt::optimal_ladder(&fam, 100, 0.3).unwrap();
        assert_eq!(
            run_st_chain(&fam, &l, 3000, 5).unwrap(),
            run_st_chain(&fam, &l, 3000, 5).unwrap()
        );
        assert_ne!(
            run_st_chain(&fam, &l, 3000, 5).unwrap(),
            run_st_chain(&fam, &l, 3000, 6).unwrap()
        );
    }

    #[test]
    fn trace_invariants() {
        let fam = TemperedFamily::laplace();
        let l = ladder_opt::optimal_ladder(&fam, 50, 0.2).unwrap();
        let t = run_st_chain(&fam, &l, 5000, 11).unwrap();
        assert!(t
            .indices
            .windows(2)
            .all(|w| (w[0] as i64 - w[1] as i64).abs() <= 1));
        let moves = t.indices.windows(2).filter(|w| w[0] != w[1]).count() as u64;
        assert_eq!(moves, t.accepts);
        let per_rung: u64 = t
            .rungs
            .iter()
            .map(|r| r.up_proposed + r.down_proposed)
            .sum();
        assert_eq!(per_rung, t.proposals);
    }

    #[test]
    fn two_rung_esjd() {
        // Stationary occupancy is ½ each; from either rung the move is feasible
        // with probability ½ and then accepted with probability a, so
        // ESJD = a·s²/2 where a is the feasible acceptance.
        let fam = TemperedFamily::gaussian();
        let l = build_ladder(&EllRule::constant(0.4), 4, 0.7).unwrap();
        assert_eq!(l.k_d, 1);
        let s = l.betas[0] - l.betas[1];
        let t = run_st_chain(&fam, &l, 200_000, 2).unwrap();
        let st = trace_stats(&t, &l, |b| b).unwrap();
        let feasible = t.rungs[0].up_proposed + t.rungs[1].down_proposed;
        let a = t.accepts as f64 / feasible as f64;
        assert!((st.esjd - a * s * s / 2.0).abs() < 0.01 * st.esjd);
        assert!((st.acc_rate - a / 2.0).abs() < 0.01);
    }

    #[test]
    fn constant_trace_stats() {
        let fam = TemperedFamily::gaussian();
        let l = build_ladder(&EllRule::constant(1.0), 1, 0.5).unwrap();
        let t = run_st_chain(&fam, &l, 2000, 1).unwrap();
        let st = trace_stats(&t, &l, |b| b).unwrap();
        assert_eq!((st.esjd, st.var_f), (0.0, 0.0));
        let short = run_st_chain(&fam, &l, 999, 1).unwrap();
        assert!(matches!(
            trace_stats(&short, &l, |b| b),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn gaussian_fast_path_agrees() {
        let fam = TemperedFamily::gaussian();
        let l = ladder_opt::optimal_ladder(&fam, 100, 0.3).unwrap();
        let exact = run_st_chain(&fam, &l, 40_000, 4).unwrap();
        let approx = run_st_chain_with(&fam, &l, 40_000, 4, GSampler::GaussianApprox).unwrap();
        let (ea, aa) = (exact.accepts as f64 / 4e4, approx.accepts as f64 / 4e4);
        assert!((ea - aa).abs() < 0.02, "{ea} {aa}");
    }

    #[test]
    fn asymptotic_acceptance_values() {
        let fam = TemperedFamily::gaussian();
        assert_eq!(acceptance_asymptotic(&fam, 1.0, 0.0).unwrap(), 1.0);
        let (u, acc) = ladder_opt::optimal_u().unwrap();
        let a = acceptance_asymptotic(&fam, 1.0, u / 0.5f64.sqrt()).unwrap();
        assert!((a - acc).abs() < 1e-12);
        assert!((a - 0.2338).abs() < 1e-3);
        let a = acceptance_asymptotic(&fam, 1.0, 2.0 / 0.5f64.sqrt()).unwrap();
        assert!((a - 0.317_310_507_862_914).abs() < 1e-12);
    }

    #[test]
    fn refined_acceptance_on_a_flat_family() {
        let fam = TemperedFamily::uniform();
        let (p, m) = acceptance_refined(&fam, 0.5, &EllRule::constant(1.0), 100).unwrap();
        assert_eq!((p, m), (1.0, 1.0));
    }

    #[test]
    fn refined_acceptance_converges_to_first_order() {
        let fam = TemperedFamily::gaussian();
        let ell = ladder_opt::OptimalRule::compute()
            .unwrap()
            .ell_rule(&fam, 0.3)
            .unwrap();
        let first = acceptance_asymptotic(&fam, 0.7, ell.at(0.7)).unwrap();
        let mut prev = f64::INFINITY;
        for d in [100, 10_000, 1_000_000] {
            let (p, m) = acceptance_refined(&fam, 0.7, &ell, d).unwrap();
            let err = (p - first).abs().max((m - first).abs());
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn refined_acceptance_detailed_balance() {
        let fam = TemperedFamily::gaussian();
        let ell = ladder_opt::OptimalRule::compute()
            .unwrap()
            .ell_rule(&fam, 0.3)
            .unwrap();
        let d = 400;
        let b = 0.7;
        let (_, minus) = acceptance_refined(&fam, b, &ell, d).unwrap();
        let (plus_below, _) = acceptance_refined(&fam, b - ell.at(b) / 20.0, &ell, d).unwrap();
        assert!(
            (minus - plus_below).abs() < 1.0 / 20.0,
            "{minus} {plus_below}"
        );
    }

    #[test]
    fn thermodynamic_length_of_gaussian_ladder() {
        // √I = 1/(√2 β), so the position of β is -ln β / √2
        let fam = TemperedFamily::gaussian();
        let l = ladder_opt::optimal_ladder(&fam, 100, 0.3).unwrap();
        let pos = thermodynamic_positions(&fam, &l).unwrap();
        for (p, b) in pos.iter().zip(&l.betas) {
            assert!((p + b.ln() / 2f64.sqrt()).abs() < 1e-10);
        }
    }
}
