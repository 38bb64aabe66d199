//! Birth–death discretisations of the Langevin diffusion on the grid i/m.
//!
//! The chain moves to a neighbour with probabilities
//! `up[i] = (σ²(x_i) + σ²(x_{i+1}) π(x_{i+1})/π(x_i)) / 2S` and the mirror
//! image for `down`, holding otherwise. Asymptotic variances are exact
//! (Poisson equation), spectral gaps come from a Sturm-sequence bisection on
//! the symmetrised tridiagonal matrix.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::rng_from_seed;
use crate::target::{evaluator, Domain, DomainKind, Evaluator, TargetDensity};

/// A volatility σ with its derivative and declared bounds `k_lo ≤ σ ≤ k_hi`.
///
/// Chains that are to be compared must share `k_hi`, since it fixes S.
#[derive(Clone)]
pub struct SigmaFunction {
    pub sigma: Evaluator,
    pub dsigma: Evaluator,
    pub k_lo: f64,
    pub k_hi: f64,
}

impl fmt::Debug for SigmaFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigmaFunction")
            .field("k_lo", &self.k_lo)
            .field("k_hi", &self.k_hi)
            .finish()
    }
}

impl SigmaFunction {
    pub fn new(sigma: Evaluator, dsigma: Evaluator, k_lo: f64, k_hi: f64) -> Result<Self> {
        if !(k_lo > 0.0 && k_hi >= k_lo && k_hi.is_finite()) {
            return Err(Error::rejected(format!(
                "sigma bounds need 0 < k_lo <= k_hi, got [{k_lo}, {k_hi}]"
            )));
        }
        Ok(SigmaFunction {
            sigma,
            dsigma,
            k_lo,
            k_hi,
        })
    }

    pub fn constant(c: f64) -> Result<Self> {
        Self::new(evaluator(move |_| c), evaluator(|_| 0.0), c, c)
    }

    /// Constant σ ≡ c declared within the wider class `[k_lo, k_hi]`.
    pub fn constant_in(c: f64, k_lo: f64, k_hi: f64) -> Result<Self> {
        let s = Self::new(evaluator(move |_| c), evaluator(|_| 0.0), k_lo, k_hi)?;
        if !(k_lo..=k_hi).contains(&c) {
            return Err(Error::rejected(format!(
                "sigma {c} outside [{k_lo}, {k_hi}]"
            )));
        }
        Ok(s)
    }

    pub fn sigma(&self, x: f64) -> f64 {
        (self.sigma)(x)
    }

    pub fn dsigma(&self, x: f64) -> f64 {
        (self.dsigma)(x)
    }

    /// Checks the declared bounds at every point of `grid`.
    pub fn check_bounds(&self, grid: &[f64]) -> Result<()> {
        for &x in grid {
            let s = self.sigma(x);
            if !(s >= self.k_lo - 1e-12 && s <= self.k_hi + 1e-12) {
                return Err(Error::rejected(format!(
                    "sigma({x}) = {s} outside [{}, {}]",
                    self.k_lo, self.k_hi
                )));
            }
        }
        Ok(())
    }
}

/// A finite nearest-neighbour chain with its stationary law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirthDeathChain {
    pub m: usize,
    pub states: Vec<f64>,
    pub up: Vec<f64>,
    pub down: Vec<f64>,
    pub hold: Vec<f64>,
    pub s_norm: f64,
    pub pi_m: Vec<f64>,
    /// Stationary mass discarded by truncating a real-line target.
    pub truncated_mass: f64,
}

/// Exact asymptotic variance of an ergodic average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    /// Σ_k Cov_π(f(Z_0), f(Z_k)) over all integer lags.
    pub v: f64,
    /// 2v / (m² S).
    pub scaled: f64,
    pub m: usize,
    pub s_norm: f64,
    pub var_pi: f64,
}

const AUTO_TRUNCATION_MASS: f64 = 1e-10;

/// Normaliser `2 max(k_hi, k_hi²) e^L`.
pub fn normalizer(k_hi: f64, lipschitz: f64) -> f64 {
    2.0 * k_hi.max(k_hi * k_hi) * lipschitz.exp()
}

/// Grid indices retained for `domain` at resolution `m`.
fn lattice_range(
    pi: &TargetDensity,
    m: usize,
    domain: &Domain,
    truncation_q: Option<f64>,
) -> Result<(i64, i64, f64)> {
    let mf = m as f64;
    match *domain {
        Domain::Bounded { a, b } => {
            let lo = (a * mf - 1e-9).ceil() as i64;
            let hi = (b * mf + 1e-9).floor() as i64;
            Ok((lo, hi, 0.0))
        }
        Domain::RealLine { .. } => {
            let probe = pi.with_domain(*domain)?;
            let (elo, ehi) = probe.effective_interval()?;
            let lo = (elo * mf).floor() as i64;
            let hi = (ehi * mf).ceil() as i64;
            let lw: Vec<f64> = (lo..=hi).map(|i| pi.log_pi(i as f64 / mf)).collect();
            let peak = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = lw.iter().map(|l| (l - peak).exp()).collect();
            let total: f64 = w.iter().sum();
            let outside = |q: f64| -> f64 {
                (lo..=hi)
                    .zip(&w)
                    .filter(|(i, _)| (*i as f64 / mf).abs() > q + 1e-12)
                    .map(|(_, w)| w)
                    .sum::<f64>()
                    / total
            };
            let q = match truncation_q {
                Some(q) => {
                    if !(q > 0.0) {
                        return Err(Error::rejected("truncation_q must be positive"));
                    }
                    q
                }
                None => {
                    // smallest lattice radius leaving less than the target mass outside
                    let mut k = 1i64;
                    loop {
                        let q = k as f64 / mf;
                        if outside(q) < AUTO_TRUNCATION_MASS || k >= hi.max(-lo) {
                            break q;
                        }
                        k += 1;
                    }
                }
            };
            let r = (q * mf + 1e-9).floor() as i64;
            Ok((-r, r, outside(q)))
        }
    }
}

/// Build the chain Z^{m,σ} for `pi` on `domain`.
///
/// For real-line domains, `truncation_q = None` picks the smallest radius
/// whose discarded stationary mass is below 1e-10.
pub fn build_chain(
    pi: &TargetDensity,
    sigma: &SigmaFunction,
    m: usize,
    domain: &Domain,
    truncation_q: Option<f64>,
) -> Result<BirthDeathChain> {
    if m < 2 {
        return Err(Error::rejected(format!("m must be >= 2, got {m}")));
    }
    domain.validate()?;
    let (lo, hi, truncated_mass) = lattice_range(pi, m, domain, truncation_q)?;
    if hi <= lo {
        return Err(Error::rejected("grid has fewer than two states"));
    }
    let mf = m as f64;
    let states: Vec<f64> = (lo..=hi).map(|i| i as f64 / mf).collect();
    let log_pi: Vec<f64> = states.iter().map(|&x| pi.log_pi(x)).collect();
    if let Some(k) = log_pi.iter().position(|l| !l.is_finite()) {
        return Err(Error::rejected(format!(
            "target density is not positive at state {}",
            states[k]
        )));
    }
    let s2: Vec<f64> = states
        .iter()
        .map(|&x| {
            let s = sigma.sigma(x);
            s * s
        })
        .collect();
    let s_norm = normalizer(sigma.k_hi, pi.lipschitz);
    let n = states.len();
    let mut up = vec![0.0; n];
    let mut down = vec![0.0; n];
    for i in 0..n {
        if i + 1 < n {
            up[i] = (s2[i] + s2[i + 1] * (log_pi[i + 1] - log_pi[i]).exp()) / (2.0 * s_norm);
        }
        if i > 0 {
            down[i] = (s2[i] + s2[i - 1] * (log_pi[i - 1] - log_pi[i]).exp()) / (2.0 * s_norm);
        }
    }
    let peak = log_pi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_pi.iter().map(|l| (l - peak).exp()).collect();
    let z: f64 = w.iter().sum();
    let pi_m = w.iter().map(|w| w / z).collect();
    finish(m, states, up, down, s_norm, pi_m, truncated_mass)
}

fn finish(
    m: usize,
    states: Vec<f64>,
    up: Vec<f64>,
    down: Vec<f64>,
    s_norm: f64,
    pi_m: Vec<f64>,
    truncated_mass: f64,
) -> Result<BirthDeathChain> {
    let mut hold = Vec::with_capacity(up.len());
    for (i, (&u, &d)) in up.iter().zip(&down).enumerate() {
        if !(u >= 0.0 && d >= 0.0) || u + d > 1.0 {
            return Err(Error::Internal(format!(
                "transition probabilities at state {i} are invalid: up {u}, down {d}"
            )));
        }
        hold.push(1.0 - u - d);
    }
    Ok(BirthDeathChain {
        m,
        states,
        up,
        down,
        hold,
        s_norm,
        pi_m,
        truncated_mass,
    })
}

impl BirthDeathChain {
    /// A chain on states `0, 1, …, n-1` given directly by its move
    /// probabilities; the stationary law follows from detailed balance.
    pub fn from_probabilities(up: Vec<f64>, down: Vec<f64>) -> Result<Self> {
        let n = up.len();
        if n < 2 || down.len() != n {
            return Err(Error::rejected(
                "need matching up/down vectors with at least two states",
            ));
        }
        if up[n - 1] != 0.0 || down[0] != 0.0 {
            return Err(Error::rejected("chain must not leave the state space"));
        }
        let mut w = vec![1.0; n];
        for i in 0..n - 1 {
            if up[i] <= 0.0 || down[i + 1] <= 0.0 {
                return Err(Error::Structure(format!(
                    "chain is reducible between states {i} and {}",
                    i + 1
                )));
            }
            w[i + 1] = w[i] * up[i] / down[i + 1];
        }
        let z: f64 = w.iter().sum();
        let pi_m = w.iter().map(|w| w / z).collect();
        let states = (0..n).map(|i| i as f64).collect();
        finish(1, states, up, down, 1.0, pi_m, 0.0)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Largest relative violation of `π_i up_i = π_{i+1} down_{i+1}`.
    pub fn detailed_balance_residual(&self) -> f64 {
        (0..self.len() - 1)
            .map(|i| {
                let lhs = self.pi_m[i] * self.up[i];
                let rhs = self.pi_m[i + 1] * self.down[i + 1];
                let scale = lhs.abs().max(rhs.abs());
                if scale == 0.0 {
                    0.0
                } else {
                    (lhs - rhs).abs() / scale
                }
            })
            .fold(0.0, f64::max)
    }

    /// Dense transition matrix, row-stochastic.
    pub fn transition_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut row = vec![0.0; n];
                row[i] = self.hold[i];
                if i + 1 < n {
                    row[i + 1] = self.up[i];
                }
                if i > 0 {
                    row[i - 1] = self.down[i];
                }
                row
            })
            .collect()
    }

    /// Index of the state nearest to `x`.
    pub fn nearest_index(&self, x: f64) -> usize {
        let k = self.states.partition_point(|&s| s < x);
        if k == 0 {
            0
        } else if k == self.len() {
            self.len() - 1
        } else if (self.states[k] - x).abs() < (x - self.states[k - 1]).abs() {
            k
        } else {
            k - 1
        }
    }

    /// Number of chain steps per unit of diffusion time, m²S/2.
    pub fn speed_factor(&self) -> f64 {
        (self.m * self.m) as f64 * self.s_norm / 2.0
    }

    /// Steps taken by time `t` of the speeded process: ⌊m²St/2⌋.
    pub fn steps_at(&self, t: f64) -> u64 {
        (self.speed_factor() * t).floor() as u64
    }

    /// Exact law of the chain after `n_steps` steps from state `start`.
    pub fn propagate(&self, start: usize, n_steps: u64) -> Vec<f64> {
        let n = self.len();
        let mut p = vec![0.0; n];
        p[start] = 1.0;
        let mut next = vec![0.0; n];
        for _ in 0..n_steps {
            for j in 0..n {
                let mut acc = p[j] * self.hold[j];
                if j > 0 {
                    acc += p[j - 1] * self.up[j - 1];
                }
                if j + 1 < n {
                    acc += p[j + 1] * self.down[j + 1];
                }
                next[j] = acc;
            }
            std::mem::swap(&mut p, &mut next);
        }
        p
    }

    /// One-step conditional mean and variance of the increment from state `i`,
    /// in space units.
    pub fn local_moments(&self, i: usize) -> (f64, f64) {
        let h = 1.0 / self.m as f64;
        let mean = (self.up[i] - self.down[i]) * h;
        let second = (self.up[i] + self.down[i]) * h * h;
        (mean, second - mean * mean)
    }
}

/// Exact Σ_k Cov_π(f(Z_0), f(Z_k)) by solving the Poisson equation.
///
/// For a birth–death chain `(Id − P)u = f̄` reduces to the flux identity
/// `π_i up_i (u_i − u_{i+1}) = Σ_{j≤i} π_j f̄_j`, solved in O(n).
pub fn exact_asymptotic_variance(
    chain: &BirthDeathChain,
    f: impl Fn(f64) -> f64,
) -> Result<VarianceReport> {
    let n = chain.len();
    let fx: Vec<f64> = chain.states.iter().map(|&x| f(x)).collect();
    if fx.iter().any(|v| !v.is_finite()) {
        return Err(Error::rejected("functional is not finite on every state"));
    }
    let mean: f64 = fx.iter().zip(&chain.pi_m).map(|(f, p)| f * p).sum();
    let fbar: Vec<f64> = fx.iter().map(|f| f - mean).collect();
    let var_pi: f64 = fbar.iter().zip(&chain.pi_m).map(|(f, p)| f * f * p).sum();

    let mut u = vec![0.0; n];
    let mut flux = 0.0;
    for i in 0..n - 1 {
        flux += chain.pi_m[i] * fbar[i];
        let rate = chain.pi_m[i] * chain.up[i];
        if !(rate > 0.0) {
            return Err(Error::Structure(format!(
                "chain is reducible: no upward move from state {}",
                chain.states[i]
            )));
        }
        u[i + 1] = u[i] - flux / rate;
    }
    let inner: f64 = (0..n).map(|i| chain.pi_m[i] * fbar[i] * u[i]).sum();
    let v = 2.0 * inner - var_pi;
    Ok(VarianceReport {
        v,
        scaled: 2.0 * v / ((chain.m * chain.m) as f64 * chain.s_norm),
        m: chain.m,
        s_norm: chain.s_norm,
        var_pi,
    })
}

const PESKUN_TOL: f64 = 1e-14;
const GRID_TOL: f64 = 1e-12;

/// Whether `c1` dominates `c2` off the diagonal.
pub fn peskun_dominates(c1: &BirthDeathChain, c2: &BirthDeathChain) -> Result<bool> {
    if c1.len() != c2.len() {
        return Err(Error::Incomparable(format!(
            "state counts differ: {} vs {}",
            c1.len(),
            c2.len()
        )));
    }
    let grid_ok = c1
        .states
        .iter()
        .zip(&c2.states)
        .all(|(a, b)| (a - b).abs() <= GRID_TOL * a.abs().max(1.0));
    if !grid_ok {
        return Err(Error::Incomparable("state grids differ".into()));
    }
    let pi_ok = c1
        .pi_m
        .iter()
        .zip(&c2.pi_m)
        .all(|(a, b)| (a - b).abs() <= GRID_TOL);
    if !pi_ok {
        return Err(Error::Incomparable("stationary laws differ".into()));
    }
    Ok((0..c1.len())
        .all(|i| c1.up[i] >= c2.up[i] - PESKUN_TOL && c1.down[i] >= c2.down[i] - PESKUN_TOL))
}

/// Number of eigenvalues below `x` of the symmetric tridiagonal matrix
/// with diagonal `diag` and off-diagonal `off`.
fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut d = 1.0;
    for i in 0..diag.len() {
        let e2 = if i == 0 { 0.0 } else { off[i - 1] * off[i - 1] };
        d = diag[i] - x - if i == 0 { 0.0 } else { e2 / d };
        if d == 0.0 {
            d = -f64::EPSILON * (diag[i].abs() + x.abs()).max(f64::MIN_POSITIVE);
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

/// `k`-th smallest eigenvalue (0-based) by bisection on the Sturm count.
fn tridiagonal_eigenvalue(diag: &[f64], off: &[f64], k: usize) -> Result<f64> {
    let n = diag.len();
    let radius = |i: usize| {
        (if i > 0 { off[i - 1].abs() } else { 0.0 }) + (if i + 1 < n { off[i].abs() } else { 0.0 })
    };
    let mut lo = (0..n)
        .map(|i| diag[i] - radius(i))
        .fold(f64::INFINITY, f64::min);
    let mut hi = (0..n)
        .map(|i| diag[i] + radius(i))
        .fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::NumericalFailure {
            what: "eigenvalue bracket".into(),
            previous: lo,
            last: hi,
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(diag, off, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Spectral gap 1 − λ₂ of a reversible chain.
///
/// Works with `Id − P` symmetrised by `D^{1/2}`, whose diagonal is
/// `up + down`, so small gaps keep full relative precision.
pub fn gap_exact(chain: &BirthDeathChain) -> Result<f64> {
    let n = chain.len();
    if n < 2 {
        return Err(Error::Structure(
            "a single-state chain has no spectral gap".into(),
        ));
    }
    let residual = chain.detailed_balance_residual();
    if residual > 1e-10 {
        return Err(Error::Structure(format!(
            "chain is not reversible (residual {residual:e})"
        )));
    }
    let diag: Vec<f64> = (0..n).map(|i| chain.up[i] + chain.down[i]).collect();
    let off: Vec<f64> = (0..n - 1)
        .map(|i| -(chain.up[i] * chain.down[i + 1]).sqrt())
        .collect();
    tridiagonal_eigenvalue(&diag, &off, 1)
}

/// κ²/2 for the capacitance bound κ of a birth–death chain.
///
/// Real line: `κ = min(k_lo e^{−L} r / 2m, Q k_lo e^{−2L/m} / 2m)`; bounded
/// domains use the second branch only and ignore `r`.
pub fn gap_lower_bound(
    lipschitz: f64,
    tail_rate: Option<f64>,
    big_q: f64,
    k_lo: f64,
    m: usize,
    kind: DomainKind,
) -> Result<f64> {
    if !(lipschitz >= 0.0 && big_q > 0.0 && k_lo > 0.0 && m > 0) {
        return Err(Error::rejected(
            "gap bound needs L >= 0, Q > 0, k_lo > 0, m > 0",
        ));
    }
    let mf = m as f64;
    let q_branch = big_q * k_lo * (-2.0 * lipschitz / mf).exp() / (2.0 * mf);
    let kappa = match kind {
        DomainKind::Bounded => q_branch,
        DomainKind::RealLine => {
            let r = tail_rate
                .filter(|r| *r > 0.0)
                .ok_or_else(|| Error::rejected("real-line gap bound needs a positive tail rate"))?;
            (k_lo * (-lipschitz).exp() * r / (2.0 * mf)).min(q_branch)
        }
    };
    Ok(0.5 * kappa * kappa)
}

/// Sample path of the speeded process Y_t = Z_{⌊m²St/2⌋}.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeededPath {
    pub speed_factor: f64,
    pub indices: Vec<u32>,
    pub states: Vec<f64>,
    pub seed: u64,
}

impl SpeededPath {
    pub fn n_steps(&self) -> usize {
        self.indices.len() - 1
    }

    /// State at time `t` through the floor index map.
    pub fn state_at(&self, t: f64) -> f64 {
        let k = ((self.speed_factor * t).floor() as usize).min(self.n_steps());
        self.states[self.indices[k] as usize]
    }

    pub fn final_state(&self) -> f64 {
        self.states[*self.indices.last().unwrap() as usize]
    }
}

/// Simulate ⌊m²S·t_end/2⌋ steps from the state nearest `x0`.
pub fn sample_speeded_path(
    chain: &BirthDeathChain,
    t_end: f64,
    x0: f64,
    seed: u64,
) -> Result<SpeededPath> {
    if !(t_end > 0.0) {
        return Err(Error::rejected("T must be positive"));
    }
    let n_steps = chain.steps_at(t_end) as usize;
    let mut rng = rng_from_seed(seed);
    let mut i = chain.nearest_index(x0);
    let mut indices = Vec::with_capacity(n_steps + 1);
    indices.push(i as u32);
    for _ in 0..n_steps {
        let u: f64 = rng.gen();
        if u < chain.up[i] {
            i += 1;
        } else if u < chain.up[i] + chain.down[i] {
            i -= 1;
        }
        indices.push(i as u32);
    }
    Ok(SpeededPath {
        speed_factor: chain.speed_factor(),
        indices,
        states: chain.states.clone(),
        seed,
    })
}

/// Final state of a speeded path at `t_end`, without storing the path.
pub fn sample_speeded_endpoint(chain: &BirthDeathChain, t_end: f64, x0: f64, seed: u64) -> f64 {
    let n_steps = chain.steps_at(t_end);
    let mut rng = rng_from_seed(seed);
    let mut i = chain.nearest_index(x0);
    for _ in 0..n_steps {
        let u: f64 = rng.gen();
        if u < chain.up[i] {
            i += 1;
        } else if u < chain.up[i] + chain.down[i] {
            i -= 1;
        }
    }
    chain.states[i]
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, SymmetricEigen};

    fn gaussian_chain(sigma: &SigmaFunction, m: usize) -> BirthDeathChain {
        let pi = TargetDensity::standard_normal(-3.0, 3.0).unwrap();
        build_chain(&pi, sigma, m, &pi.domain, None).unwrap()
    }

    fn flip_chain(p: f64) -> BirthDeathChain {
        BirthDeathChain::from_probabilities(vec![p, 0.0], vec![0.0, p]).unwrap()
    }

    /// Σ Cov by the dense fundamental matrix Z = (Id − P + 1π)^{-1}.
    fn dense_variance(chain: &BirthDeathChain, f: impl Fn(f64) -> f64) -> f64 {
        let n = chain.len();
        let p = chain.transition_matrix();
        let a = DMatrix::from_fn(n, n, |i, j| {
            (if i == j { 1.0 } else { 0.0 }) - p[i][j] + chain.pi_m[j]
        });
        let z = a.try_inverse().unwrap();
        let fx: Vec<f64> = chain.states.iter().map(|&x| f(x)).collect();
        let mean: f64 = fx.iter().zip(&chain.pi_m).map(|(f, p)| f * p).sum();
        let fb = nalgebra::DVector::from_iterator(n, fx.iter().map(|f| f - mean));
        let u = &z * &fb;
        let var: f64 = (0..n).map(|i| chain.pi_m[i] * fb[i] * fb[i]).sum();
        2.0 * (0..n).map(|i| chain.pi_m[i] * fb[i] * u[i]).sum::<f64>() - var
    }

    fn dense_gap(chain: &BirthDeathChain) -> f64 {
        let n = chain.len();
        let p = chain.transition_matrix();
        let s = DMatrix::from_fn(n, n, |i, j| {
            p[i][j] * (chain.pi_m[i] / chain.pi_m[j]).sqrt()
        });
        let s = 0.5 * (&s + s.transpose());
        let mut ev: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().cloned().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        1.0 - ev[1]
    }

    #[test]
    fn uniform_chain_probabilities() {
        let pi = TargetDensity::uniform(0.0, 1.0).unwrap();
        let c = build_chain(
            &pi,
            &SigmaFunction::constant(1.0).unwrap(),
            4,
            &pi.domain,
            None,
        )
        .unwrap();
        assert_eq!(c.s_norm, 2.0);
        assert_eq!(c.len(), 5);
        for i in 1..4 {
            assert_eq!((c.up[i], c.down[i], c.hold[i]), (0.5, 0.5, 0.0));
        }
        assert_eq!(c.down[0], 0.0);
        assert_eq!(c.up[4], 0.0);
    }

    #[test]
    fn gaussian_chain_detailed_balance() {
        let c = gaussian_chain(&SigmaFunction::constant(1.0).unwrap(), 10);
        assert!(c.detailed_balance_residual() < 1e-12);
        for i in 0..c.len() {
            assert!((c.up[i] + c.down[i] + c.hold[i] - 1.0).abs() <= f64::EPSILON);
            assert!(c.hold[i] >= 0.0);
        }
    }

    #[test]
    fn larger_sigma_moves_more() {
        let c1 = gaussian_chain(&SigmaFunction::constant_in(1.0, 0.5, 1.0).unwrap(), 10);
        let c2 = gaussian_chain(&SigmaFunction::constant_in(0.5, 0.5, 1.0).unwrap(), 10);
        for i in 0..c1.len() {
            assert!(c1.up[i] >= c2.up[i] && c1.down[i] >= c2.down[i]);
        }
        assert!(peskun_dominates(&c1, &c2).unwrap());
        assert!(peskun_dominates(&c1, &c1).unwrap());
        assert!(!peskun_dominates(&c2, &c1).unwrap());
    }

    #[test]
    fn crossing_sigmas_are_unordered() {
        let s1 = SigmaFunction::new(
            evaluator(|x: f64| 0.6 + 0.3 * x.cos()),
            evaluator(|x: f64| -0.3 * x.sin()),
            0.3,
            0.9,
        )
        .unwrap();
        let s2 = SigmaFunction::new(
            evaluator(|x: f64| 0.6 - 0.3 * x.cos()),
            evaluator(|x: f64| 0.3 * x.sin()),
            0.3,
            0.9,
        )
        .unwrap();
        let c1 = gaussian_chain(&s1, 10);
        let c2 = gaussian_chain(&s2, 10);
        // σ₁ > σ₂ near 0, σ₁ < σ₂ near ±π
        let zero = c1.nearest_index(0.0);
        let edge = c1.nearest_index(3.0);
        assert!(c1.up[zero] > c2.up[zero]);
        assert!(c1.down[edge] < c2.down[edge]);
        assert!(!peskun_dominates(&c1, &c2).unwrap());
        assert!(!peskun_dominates(&c2, &c1).unwrap());
    }

    #[test]
    fn incomparable_chains() {
        let s = SigmaFunction::constant(1.0).unwrap();
        assert!(matches!(
            peskun_dominates(&gaussian_chain(&s, 8), &gaussian_chain(&s, 16)),
            Err(Error::Incomparable(_))
        ));
        let pi = TargetDensity::uniform(-3.0, 3.0).unwrap();
        let u = build_chain(&pi, &s, 8, &pi.domain, None).unwrap();
        assert!(matches!(
            peskun_dominates(&gaussian_chain(&s, 8), &u),
            Err(Error::Incomparable(_))
        ));
    }

    #[test]
    fn two_state_variances() {
        let ind = |x: f64| if x > 0.5 { 1.0 } else { 0.0 };
        let v = exact_asymptotic_variance(&flip_chain(0.5), ind).unwrap().v;
        assert!((v - 0.25).abs() < 1e-15);
        let v = exact_asymptotic_variance(&flip_chain(0.9), ind).unwrap().v;
        assert!((v - 1.0 / 36.0).abs() < 1e-15, "{v}");
        let v = exact_asymptotic_variance(
            &gaussian_chain(&SigmaFunction::constant(1.0).unwrap(), 8),
            |_| 3.0,
        )
        .unwrap()
        .v;
        assert_eq!(v, 0.0);
    }

    #[test]
    fn flux_solver_matches_fundamental_matrix() {
        let s = SigmaFunction::new(
            evaluator(|x: f64| 0.7 + 0.2 * x.sin()),
            evaluator(|x: f64| 0.2 * x.cos()),
            0.5,
            0.9,
        )
        .unwrap();
        let c = gaussian_chain(&s, 8);
        for f in [
            |x: f64| x,
            |x: f64| x * x,
            |x: f64| x.sin(),
            |x: f64| if x > 0.0 { 1.0 } else { 0.0 },
        ] {
            let exact = exact_asymptotic_variance(&c, f).unwrap().v;
            let dense = dense_variance(&c, f);
            assert!(
                (exact - dense).abs() < 1e-8 * dense.abs().max(1.0),
                "{exact} vs {dense}"
            );
        }
    }

    #[test]
    fn reducible_chain_is_a_structure_error() {
        let c = BirthDeathChain {
            m: 1,
            states: vec![0.0, 1.0, 2.0],
            up: vec![0.5, 0.0, 0.0],
            down: vec![0.0, 0.5, 0.5],
            hold: vec![0.5, 0.5, 0.5],
            s_norm: 1.0,
            pi_m: vec![0.5, 0.5, 0.0],
            truncated_mass: 0.0,
        };
        assert!(matches!(
            exact_asymptotic_variance(&c, |x| x),
            Err(Error::Structure(_))
        ));
        assert!(matches!(
            BirthDeathChain::from_probabilities(vec![0.5, 0.0, 0.0], vec![0.0, 0.5, 0.5]),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn time_change_with_common_normaliser() {
        // With S fixed, σ → cσ multiplies every move probability by c², so
        // (v + Var) scales as 1/c².
        let pi = TargetDensity::standard_normal(-3.0, 3.0).unwrap();
        let s1 = SigmaFunction::constant_in(1.0, 0.5, 1.0).unwrap();
        let s2 = SigmaFunction::constant_in(0.5, 0.5, 1.0).unwrap();
        let c1 = build_chain(&pi, &s1, 16, &pi.domain, None).unwrap();
        let c2 = build_chain(&pi, &s2, 16, &pi.domain, None).unwrap();
        let r1 = exact_asymptotic_variance(&c1, |x| x).unwrap();
        let r2 = exact_asymptotic_variance(&c2, |x| x).unwrap();
        let lhs = (r2.v + r2.var_pi) * 0.25;
        let rhs = r1.v + r1.var_pi;
        assert!((lhs - rhs).abs() < 1e-8 * rhs, "{lhs} vs {rhs}");
    }

    #[test]
    fn two_state_gaps() {
        assert!((gap_exact(&flip_chain(0.5)).unwrap() - 1.0).abs() < 1e-14);
        for p in [0.1, 0.3, 0.9] {
            assert!((gap_exact(&flip_chain(p)).unwrap() - 2.0 * p).abs() < 1e-14);
        }
    }

    #[test]
    fn gap_matches_dense_eigensolver() {
        let s = SigmaFunction::new(
            evaluator(|x: f64| 0.6 + 0.3 * x.cos()),
            evaluator(|x: f64| -0.3 * x.sin()),
            0.3,
            0.9,
        )
        .unwrap();
        for m in [4, 8] {
            let c = gaussian_chain(&s, m);
            let g = gap_exact(&c).unwrap();
            let d = dense_gap(&c);
            assert!((g - d).abs() < 1e-10, "{g} vs {d}");
        }
    }

    #[test]
    fn uniform_gap_scales_like_inverse_square() {
        let pi = TargetDensity::uniform(0.0, 1.0).unwrap();
        let s = SigmaFunction::constant(1.0).unwrap();
        let g: Vec<f64> = [8, 16, 32]
            .iter()
            .map(|&m| gap_exact(&build_chain(&pi, &s, m, &pi.domain, None).unwrap()).unwrap())
            .collect();
        for w in g.windows(2) {
            assert!(w[0] > 0.0 && w[0] < 1.0);
            let ratio = w[0] / w[1];
            assert!((ratio - 4.0).abs() < 0.5, "{ratio}");
        }
    }

    #[test]
    fn gap_bound_formula() {
        let b = gap_lower_bound(0.0, Some(1.0), 1.0, 1.0, 10, DomainKind::RealLine).unwrap();
        assert!((b - 0.00125).abs() < 1e-15);
        let b = gap_lower_bound(0.0, None, 1.0, 1.0, 10, DomainKind::Bounded).unwrap();
        assert!((b - 0.00125).abs() < 1e-15);
        assert!(gap_lower_bound(0.0, None, 1.0, 1.0, 10, DomainKind::RealLine).is_err());
        assert!(gap_lower_bound(0.0, Some(1.0), 0.0, 1.0, 10, DomainKind::RealLine).is_err());
    }

    #[test]
    fn speeded_path_step_counts() {
        let pi = TargetDensity::uniform(0.0, 1.0).unwrap();
        let c = build_chain(
            &pi,
            &SigmaFunction::constant(1.0).unwrap(),
            16,
            &pi.domain,
            None,
        )
        .unwrap();
        let p = sample_speeded_path(&c, 1.0, 0.5, 1).unwrap();
        assert_eq!(p.n_steps(), 256);
        let p = sample_speeded_path(&c, 1e-4, 0.5, 1).unwrap();
        assert_eq!(p.n_steps(), 0);
        assert_eq!(p.state_at(1e-4), 0.5);
        assert_eq!(
            sample_speeded_path(&c, 2.0, 0.5, 9).unwrap(),
            sample_speeded_path(&c, 2.0, 0.5, 9).unwrap()
        );
    }

    #[test]
    fn speeded_path_occupancy() {
        let pi = TargetDensity::uniform(0.0, 1.0).unwrap();
        let c = build_chain(
            &pi,
            &SigmaFunction::constant(1.0).unwrap(),
            16,
            &pi.domain,
            None,
        )
        .unwrap();
        let p = sample_speeded_path(&c, 1e3, 0.5, 2).unwrap();
        let mut counts = vec![0.0; c.len()];
        for &i in &p.indices {
            counts[i as usize] += 1.0;
        }
        let n = p.indices.len() as f64;
        let tv: f64 = counts
            .iter()
            .zip(&c.pi_m)
            .map(|(k, q)| (k / n - q).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "{tv}");
    }

    #[test]
    fn propagated_law_converges_to_stationary() {
        let c = gaussian_chain(&SigmaFunction::constant(1.0).unwrap(), 4);
        let p = c.propagate(c.nearest_index(0.0), 20_000);
        let tv: f64 = p.iter().zip(&c.pi_m).map(|(a, b)| (a - b).abs()).sum();
        assert!(tv < 1e-8);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn real_line_truncation() {
        let pi = TargetDensity::new(
            "gaussian",
            evaluator(|x| -0.5 * x * x),
            evaluator(|x| -x),
            4.0,
            Domain::real_line(1.0, 2.0).unwrap(),
        )
        .unwrap();
        let c = build_chain(
            &pi,
            &SigmaFunction::constant(1.0).unwrap(),
            8,
            &pi.domain,
            None,
        )
        .unwrap();
        assert!(c.truncated_mass < 1e-10 && c.truncated_mass > 0.0);
        let last = *c.states.last().unwrap();
        assert!(last > 6.0 && last < 7.5, "{last}");
        let c = build_chain(
            &pi,
            &SigmaFunction::constant(1.0).unwrap(),
            8,
            &pi.domain,
            Some(3.0),
        )
        .unwrap();
        assert_eq!(c.states.len(), 49);
    }

    #[test]
    fn local_moments_match_langevin() {
        // drift ½(log π)' = -x/2, vol² = 1, time step 2/(m²S)
        let c = gaussian_chain(&SigmaFunction::constant(1.0).unwrap(), 64);
        let h = 1.0 / c.speed_factor();
        for x in [-1.0, 0.0, 0.5, 2.0] {
            let i = c.nearest_index(x);
            let (mean, var) = c.local_moments(i);
            let xi = c.states[i];
            assert!((mean / h + xi / 2.0).abs() < 2.0 / 64.0, "{x}");
            assert!((var / h - 1.0).abs() < 2.0 / 64.0, "{x}");
        }
    }
}
