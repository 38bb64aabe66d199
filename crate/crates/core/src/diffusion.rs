//! Reflected one-dimensional diffusions and their Euler–Maruyama simulation.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::birth_death::SigmaFunction;
use crate::error::{Error, Result};
use crate::normal;
use crate::stats::{self, rng_from_seed, BatchMeans, SimRng};
use crate::target::{evaluator, Domain, Evaluator, TargetDensity, TemperedFamily};

/// Drift μ and squared volatility σ² on `[a, b]` with reflecting ends.
#[derive(Clone)]
pub struct DiffusionSpec {
    pub drift: Evaluator,
    pub vol2: Evaluator,
    pub a: f64,
    pub b: f64,
}

impl fmt::Debug for DiffusionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionSpec")
            .field("a", &self.a)
            .field("b", &self.b)
            .finish()
    }
}

impl DiffusionSpec {
    pub fn new(drift: Evaluator, vol2: Evaluator, a: f64, b: f64) -> Result<Self> {
        Domain::bounded(a, b)?;
        Ok(DiffusionSpec { drift, vol2, a, b })
    }

    pub fn drift(&self, x: f64) -> f64 {
        (self.drift)(x)
    }

    pub fn vol2(&self, x: f64) -> f64 {
        (self.vol2)(x)
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    /// Reflect `x` into `[a, b]`; equivalent to folding repeatedly at the ends.
    pub fn fold(&self, x: f64) -> f64 {
        if x >= self.a && x <= self.b {
            return x;
        }
        let w = self.width();
        let y = (x - self.a).rem_euclid(2.0 * w);
        self.a + if y > w { 2.0 * w - y } else { y }
    }
}

/// Langevin diffusion with stationary density π and volatility σ:
/// μ = ½σ²(log π)' + σσ', vol² = σ².
///
/// Real-line targets must first be restricted to a bounded interval.
pub fn langevin_spec(pi: &TargetDensity, sigma: &SigmaFunction) -> Result<DiffusionSpec> {
    let (a, b) = pi.domain.bounds().ok_or_else(|| {
        Error::rejected("Langevin simulation needs a bounded domain; truncate the target first")
    })?;
    let (p1, s1, s2) = (pi.clone(), sigma.clone(), sigma.clone());
    DiffusionSpec::new(
        evaluator(move |x| {
            let s = s1.sigma(x);
            0.5 * s * s * p1.dlog_pi(x) + s * s1.dsigma(x)
        }),
        evaluator(move |x| {
            let s = s2.sigma(x);
            s * s
        }),
        a,
        b,
    )
}

/// Restriction of a real-line target to `[-q-1, q+1]`.
pub fn truncate_target(pi: &TargetDensity, q: f64) -> Result<TargetDensity> {
    pi.with_domain(Domain::bounded(-q - 1.0, q + 1.0)?)
}

const LIMIT_TABLE_POINTS: usize = 1024;

/// Centred difference on `[lo, hi]`, one-sided at the ends.
fn derivative(f: &dyn Fn(f64) -> Result<f64>, x: f64, h: f64, lo: f64, hi: f64) -> Result<f64> {
    if x - h < lo {
        Ok((f(x + h)? - f(x)?) / h)
    } else if x + h > hi {
        Ok((f(x)? - f(x - h)?) / h)
    } else {
        Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
    }
}

/// Cubic (Catmull–Rom) interpolation of values on a uniform grid.
#[derive(Debug, Clone)]
struct UniformCubic {
    lo: f64,
    h: f64,
    ys: Vec<f64>,
}

impl UniformCubic {
    fn eval(&self, x: f64) -> f64 {
        let n = self.ys.len() - 1;
        let t = ((x - self.lo) / self.h).clamp(0.0, n as f64);
        let j = (t.floor() as usize).min(n - 1);
        let s = t - j as f64;
        let y = |k: isize| self.ys[(j as isize + k).clamp(0, n as isize) as usize];
        let (y0, y1, y2, y3) = (y(-1), y(0), y(1), y(2));
        let m1 = if j == 0 { y2 - y1 } else { 0.5 * (y2 - y0) };
        let m2 = if j + 1 == n { y2 - y1 } else { 0.5 * (y3 - y1) };
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y1
            + (s3 - 2.0 * s2 + s) * m1
            + (-2.0 * s3 + 3.0 * s2) * y2
            + (s3 - s2) * m2
    }
}

/// Limit diffusion of the inverse temperature on `[χ, 1]`:
/// vol² = 2ℓ²Φ(−ℓ√I/2),
/// μ = ℓℓ'Φ(−ℓ√I/2) − ℓ²(ℓ√I/2)'φ(ℓ√I/2).
///
/// Both coefficients are computed exactly on a grid of 1025 points and
/// interpolated by cubic splines, so simulation never calls the quadrature.
pub fn tempering_limit_spec(
    family: &TemperedFamily,
    ell: &Evaluator,
    chi: f64,
) -> Result<DiffusionSpec> {
    if !(chi > 0.0 && chi < 1.0) {
        return Err(Error::rejected(format!(
            "chi must lie in (0, 1), got {chi}"
        )));
    }
    let h = 1e-4 * (1.0 - chi);
    let ell_at = |b: f64| -> Result<f64> {
        let l = ell(b);
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::rejected(format!("ell({b}) = {l} is not positive")));
        }
        Ok(l)
    };
    let u_at = |b: f64| -> Result<f64> { Ok(ell_at(b)? * family.moments(b)?.i.sqrt() / 2.0) };
    let step = (1.0 - chi) / LIMIT_TABLE_POINTS as f64;
    let mut vol2 = Vec::with_capacity(LIMIT_TABLE_POINTS + 1);
    let mut drift = Vec::with_capacity(LIMIT_TABLE_POINTS + 1);
    for j in 0..=LIMIT_TABLE_POINTS {
        let b = if j == LIMIT_TABLE_POINTS {
            1.0
        } else {
            chi + j as f64 * step
        };
        let l = ell_at(b)?;
        let u = u_at(b)?;
        let dl = derivative(&ell_at, b, h, chi, 1.0)?;
        let du = derivative(&u_at, b, h, chi, 1.0)?;
        vol2.push(2.0 * l * l * normal::cdf(-u));
        drift.push(l * dl * normal::cdf(-u) - l * l * du * normal::pdf(u));
    }
    let v = UniformCubic {
        lo: chi,
        h: step,
        ys: vol2,
    };
    let d = UniformCubic {
        lo: chi,
        h: step,
        ys: drift,
    };
    DiffusionSpec::new(
        evaluator(move |x| d.eval(x)),
        evaluator(move |x| v.eval(x)),
        chi,
        1.0,
    )
}

/// An Euler–Maruyama path sampled every `dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub dt: f64,
    pub n_steps: usize,
    pub values: Vec<f64>,
    pub seed: u64,
}

impl PathSummary {
    /// `(t, x)` rows keeping every `thin`-th point.
    pub fn rows(&self, thin: usize) -> Vec<(f64, f64)> {
        self.values
            .iter()
            .enumerate()
            .step_by(thin.max(1))
            .map(|(k, &x)| (k as f64 * self.dt, x))
            .collect()
    }
}

fn check_run(spec: &DiffusionSpec, x0: f64, dt: f64, t_end: f64) -> Result<usize> {
    if !(x0 >= spec.a && x0 <= spec.b) {
        return Err(Error::rejected(format!(
            "x0 = {x0} outside [{}, {}]",
            spec.a, spec.b
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::rejected("dt must be positive"));
    }
    if !(t_end >= dt) {
        return Err(Error::rejected("T must be at least dt"));
    }
    Ok((t_end / dt + 1e-9).floor() as usize)
}

#[inline]
fn em_step(spec: &DiffusionSpec, x: f64, dt: f64, xi: f64) -> Result<f64> {
    let mu = spec.drift(x);
    let excursion = (mu * dt).abs();
    if !(excursion <= spec.width()) {
        return Err(Error::StepSize {
            excursion,
            width: spec.width(),
        });
    }
    let v = spec.vol2(x).max(0.0);
    Ok(spec.fold(x + mu * dt + (v * dt).sqrt() * xi))
}

/// Euler–Maruyama with reflection by folding, ⌊T/dt⌋ steps from `x0`.
pub fn simulate_reflected(
    spec: &DiffusionSpec,
    x0: f64,
    dt: f64,
    t_end: f64,
    seed: u64,
) -> Result<PathSummary> {
    let n_steps = check_run(spec, x0, dt, t_end)?;
    let mut rng = rng_from_seed(seed);
    let mut values = Vec::with_capacity(n_steps + 1);
    let mut x = x0;
    values.push(x);
    for _ in 0..n_steps {
        x = em_step(spec, x, dt, rng.sample(StandardNormal))?;
        values.push(x);
    }
    Ok(PathSummary {
        dt,
        n_steps,
        values,
        seed,
    })
}

/// Final value of a reflected Euler–Maruyama path, without storing it.
pub fn simulate_endpoint(
    spec: &DiffusionSpec,
    x0: f64,
    dt: f64,
    t_end: f64,
    seed: u64,
) -> Result<f64> {
    let n_steps = check_run(spec, x0, dt, t_end)?;
    let mut rng = rng_from_seed(seed);
    let mut x = x0;
    for _ in 0..n_steps {
        x = em_step(spec, x, dt, rng.sample(StandardNormal))?;
    }
    Ok(x)
}

/// Batch-means estimate of ∫Cov(f(X_0), f(X_t)) dt from a path.
pub fn batch_means_variance(
    values: &[f64],
    f: impl Fn(f64) -> f64,
    n_batches: usize,
    dt: f64,
) -> Result<BatchMeans> {
    let fx: Vec<f64> = values.iter().map(|&x| f(x)).collect();
    stats::batch_means(&fx, n_batches, dt)
}

/// JSON record of a diffusion variance estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub estimate: f64,
    pub se: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub seed: u64,
}

/// Paths at step `dt` and `2dt` driven by the same Brownian motion.
fn coupled_paths(
    spec: &DiffusionSpec,
    x0: f64,
    dt: f64,
    t_end: f64,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n_coarse = check_run(spec, x0, 2.0 * dt, t_end)?;
    let mut rng: SimRng = rng_from_seed(seed);
    let mut fine = Vec::with_capacity(2 * n_coarse + 1);
    let mut coarse = Vec::with_capacity(n_coarse + 1);
    let (mut xf, mut xc) = (x0, x0);
    fine.push(xf);
    coarse.push(xc);
    for _ in 0..n_coarse {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        xf = em_step(spec, xf, dt, z1)?;
        fine.push(xf);
        xf = em_step(spec, xf, dt, z2)?;
        fine.push(xf);
        xc = em_step(spec, xc, 2.0 * dt, (z1 + z2) / std::f64::consts::SQRT_2)?;
        coarse.push(xc);
    }
    Ok((fine, coarse))
}

/// Step size for variance estimation: start at 10⁻³(b−a)² and halve until
/// the batch-means estimate of `f` moves by less than 5% between the
/// coupled `dt` and `dt/2` runs, up to `max_halvings`.
pub fn choose_dt(
    spec: &DiffusionSpec,
    f: impl Fn(f64) -> f64 + Copy,
    x0: f64,
    t_end: f64,
    n_batches: usize,
    seed: u64,
    max_halvings: usize,
) -> Result<f64> {
    let mut dt = 1e-3 * spec.width() * spec.width();
    for _ in 0..max_halvings {
        let (fine, coarse) = coupled_paths(spec, x0, dt / 2.0, t_end, seed)?;
        let ef = batch_means_variance(&fine, f, n_batches, dt / 2.0)?.estimate;
        let ec = batch_means_variance(&coarse, f, n_batches, dt)?.estimate;
        dt /= 2.0;
        if (ef - ec).abs() < 0.05 * ef.abs() {
            break;
        }
    }
    Ok(dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ladder_opt;

    #[test]
    fn gaussian_langevin_coefficients() {
        let pi = TargetDensity::standard_normal(-3.0, 3.0).unwrap();
        let spec = langevin_spec(&pi, &SigmaFunction::constant(1.0).unwrap()).unwrap();
        for x in [-2.0, 0.0, 1.3] {
            assert_eq!(spec.drift(x), -x / 2.0);
            assert_eq!(spec.vol2(x), 1.0);
        }
        let c = 0.7;
        let scaled = langevin_spec(&pi, &SigmaFunction::constant(c).unwrap()).unwrap();
        assert!((scaled.drift(1.3) - c * c * spec.drift(1.3)).abs() < 1e-15);
    }

    #[test]
    fn state_dependent_sigma_drift() {
        let pi = TargetDensity::uniform(-3.0, 3.0).unwrap();
        let sigma = SigmaFunction::new(
            evaluator(|x: f64| 1.0 + 0.5 * x.sin()),
            evaluator(|x: f64| 0.5 * x.cos()),
            0.5,
            1.5,
        )
        .unwrap();
        let spec = langevin_spec(&pi, &sigma).unwrap();
        for x in [-1.0, 0.2, 2.5] {
            let want = (1.0 + 0.5 * f64::sin(x)) * (0.5 * f64::cos(x));
            assert!((spec.drift(x) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn real_line_needs_truncation() {
        let pi = TargetDensity::laplace(1.0, Domain::real_line(1.0, 1.0).unwrap()).unwrap();
        let sigma = SigmaFunction::constant(1.0).unwrap();
        assert!(langevin_spec(&pi, &sigma).is_err());
        let t = truncate_target(&pi, 4.0).unwrap();
        assert_eq!(langevin_spec(&t, &sigma).unwrap().a, -5.0);
    }

    #[test]
    fn folding() {
        let spec = DiffusionSpec::new(evaluator(|_| 0.0), evaluator(|_| 1.0), 0.0, 1.0).unwrap();
        assert!((spec.fold(1.25) - 0.75).abs() < 1e-15);
        assert!((spec.fold(-0.25) - 0.25).abs() < 1e-15);
        assert!((spec.fold(2.25) - 0.25).abs() < 1e-15);
        assert!((spec.fold(-1.75) - 0.25).abs() < 1e-15);
        assert_eq!(spec.fold(0.5), 0.5);
    }

    #[test]
    fn degenerate_diffusion_stays_put() {
        let spec = DiffusionSpec::new(evaluator(|_| 0.0), evaluator(|_| 0.0), -1.0, 1.0).unwrap();
        let p = simulate_reflected(&spec, 0.3, 0.01, 1.0, 5).unwrap();
        assert_eq!(p.n_steps, 100);
        assert!(p.values.iter().all(|&x| x == 0.3));
    }

    #[test]
    fn step_size_error() {
        let spec = DiffusionSpec::new(evaluator(|_| 100.0), evaluator(|_| 1.0), 0.0, 1.0).unwrap();
        assert!(matches!(
            simulate_reflected(&spec, 0.5, 0.1, 1.0, 1),
            Err(Error::StepSize { .. })
        ));
    }

    #[test]
    fn reflected_brownian_motion_is_uniform() {
        let spec = DiffusionSpec::new(evaluator(|_| 0.0), evaluator(|_| 1.0), 0.0, 1.0).unwrap();
        let p = simulate_reflected(&spec, 0.5, 1e-3, 1e3, 3).unwrap();
        assert!(p.values.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let d = stats::ks_one_sample(&p.values, |x| x);
        assert!(d < 0.02, "{d}");
    }

    #[test]
    fn langevin_truncated_normal_moments() {
        let pi = TargetDensity::standard_normal(-3.0, 3.0).unwrap();
        let spec = langevin_spec(&pi, &SigmaFunction::constant(1.0).unwrap()).unwrap();
        let p = simulate_reflected(&spec, 0.0, 1e-3, 1e3, 8).unwrap();
        let bm = batch_means_variance(&p.values, |x| x, 50, p.dt).unwrap();
        let t = p.n_steps as f64 * p.dt;
        let se_mean = (bm.estimate / t).sqrt();
        assert!(stats::mean(&p.values).abs() < 3.0 * se_mean);
        // truncated N(0,1) on (-3,3): 1 - 6φ(3)/(2Φ(3)-1)
        let var_true = 1.0 - 6.0 * normal::pdf(3.0) / (2.0 * normal::cdf(3.0) - 1.0);
        let sq = batch_means_variance(&p.values, |x| x * x, 50, p.dt).unwrap();
        let se_var = (sq.estimate / t).sqrt();
        assert!((stats::sample_variance(&p.values) - var_true).abs() < 3.0 * se_var);
    }

    #[test]
    fn paths_are_reproducible() {
        let spec = DiffusionSpec::new(evaluator(|x| -x), evaluator(|_| 1.0), -2.0, 2.0).unwrap();
        let a = simulate_reflected(&spec, 0.0, 1e-2, 5.0, 42).unwrap();
        assert_eq!(a, simulate_reflected(&spec, 0.0, 1e-2, 5.0, 42).unwrap());
        assert_eq!(
            *a.values.last().unwrap(),
            simulate_endpoint(&spec, 0.0, 1e-2, 5.0, 42).unwrap()
        );
        assert_eq!(a.rows(10).len(), 51);
    }

    #[test]
    fn limit_spec_for_the_optimal_gaussian_rule() {
        let fam = TemperedFamily::gaussian();
        let (u, _) = ladder_opt::optimal_u().unwrap();
        let ell = evaluator(move |b: f64| u * std::f64::consts::SQRT_2 * b);
        let spec = tempering_limit_spec(&fam, &ell, 0.3).unwrap();
        let c = 2.0 * u * u * normal::cdf(-u / 2.0) * 2.0;
        for b in [0.3, 0.45, 0.77, 1.0] {
            assert!((spec.vol2(b) - c * b * b).abs() < 1e-6 * c, "{b}");
            // ℓ√I/2 is constant, so only the ℓℓ' term survives
            let want = (u * std::f64::consts::SQRT_2).powi(2) * b * normal::cdf(-u / 2.0);
            assert!((spec.drift(b) - want).abs() < 1e-5, "{b}");
        }
    }

    #[test]
    fn limit_spec_for_a_flat_family() {
        let fam = TemperedFamily::uniform();
        let ell = evaluator(|b: f64| 0.5 + b);
        let spec = tempering_limit_spec(&fam, &ell, 0.2).unwrap();
        for b in [0.2, 0.6, 1.0] {
            let l = 0.5 + b;
            assert!((spec.vol2(b) - l * l).abs() < 1e-9);
            assert!((spec.drift(b) - 0.5 * l).abs() < 1e-6);
        }
    }

    #[test]
    fn coupled_dt_choice() {
        let pi = TargetDensity::standard_normal(-3.0, 3.0).unwrap();
        let spec = langevin_spec(&pi, &SigmaFunction::constant(1.0).unwrap()).unwrap();
        let dt = choose_dt(&spec, |x| x, 0.0, 200.0, 20, 1, 3).unwrap();
        let halvings = (0.036 / dt).log2();
        assert!(
            (halvings - halvings.round()).abs() < 1e-9 && (1.0..=3.0).contains(&halvings.round()),
            "{dt}"
        );
    }
}
