//! One-dimensional target densities and the tempered family f^β.
//!
//! A [`TargetDensity`] carries log π, its derivative and a declared
//! log-Lipschitz constant; [`check_regularity`] probes the lattice tail
//! condition and the constants q and Q used by the capacitance bound.
//! A [`TemperedFamily`] wraps an unnormalised log-density g = log f and
//! evaluates M(β) = E^β g, I(β) = Var^β g and K(β) = -log ∫ f^β by
//! composite Gauss–Legendre quadrature with a doubling convergence check.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::sync::{Arc, RwLock};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{CompositeRule, ORDER};
use crate::stats::{rng_from_seed, SimRng};

/// A real function shared between threads.
pub type Evaluator = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

pub fn evaluator<F>(f: F) -> Evaluator
where
    F: Fn(f64) -> f64 + Send + Sync + 'static,
{
    Arc::new(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Domain {
    /// A closed interval with reflecting ends.
    Bounded { a: f64, b: f64 },
    /// The whole line with tails bounded by `exp(-tail_rate * y)` beyond
    /// `tail_threshold`.
    RealLine { tail_rate: f64, tail_threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Bounded,
    RealLine,
}

impl Domain {
    pub fn bounded(a: f64, b: f64) -> Result<Self> {
        let d = Domain::Bounded { a, b };
        d.validate()?;
        Ok(d)
    }

    pub fn real_line(tail_rate: f64, tail_threshold: f64) -> Result<Self> {
        let d = Domain::RealLine {
            tail_rate,
            tail_threshold,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Domain::Bounded { a, b } => {
                if !(a.is_finite() && b.is_finite() && a < b) {
                    return Err(Error::rejected(format!(
                        "bounded domain needs a < b, got [{a}, {b}]"
                    )));
                }
            }
            Domain::RealLine {
                tail_rate,
                tail_threshold,
            } => {
                if !(tail_rate > 0.0 && tail_rate.is_finite()) {
                    return Err(Error::rejected(format!(
                        "tail rate must be > 0, got {tail_rate}"
                    )));
                }
                if !(tail_threshold > 0.0 && tail_threshold.is_finite()) {
                    return Err(Error::rejected(format!(
                        "tail threshold must be > 0, got {tail_threshold}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> DomainKind {
        match self {
            Domain::Bounded { .. } => DomainKind::Bounded,
            Domain::RealLine { .. } => DomainKind::RealLine,
        }
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        match *self {
            Domain::Bounded { a, b } => Some((a, b)),
            Domain::RealLine { .. } => None,
        }
    }
}

/// Piecewise-linear log-density read from an `(x, log f(x))` table.
#[derive(Debug, Clone, PartialEq)]
pub struct LogTable {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct TableRow {
    x: f64,
    log_f: f64,
}

impl LogTable {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::rejected(
                "log-density table needs at least two (x, log f) rows",
            ));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::rejected(
                "table x values must be strictly increasing",
            ));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::rejected("table contains non-finite values"));
        }
        Ok(LogTable { xs, ys })
    }

    /// Reads CSV with a header row naming the columns `x` and `log_f`.
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for row in rdr.deserialize() {
            let row: TableRow = row?;
            xs.push(row.x);
            ys.push(row.log_f);
        }
        Self::new(xs, ys)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn range(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    fn segment(&self, x: f64) -> usize {
        let n = self.xs.len();
        self.xs.partition_point(|&t| t <= x).clamp(1, n - 1) - 1
    }

    fn slope(&self, seg: usize) -> f64 {
        (self.ys[seg + 1] - self.ys[seg]) / (self.xs[seg + 1] - self.xs[seg])
    }

    /// Linear interpolation, extended linearly beyond the first and last rows.
    pub fn eval(&self, x: f64) -> f64 {
        let s = self.segment(x);
        self.ys[s] + self.slope(s) * (x - self.xs[s])
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.slope(self.segment(x))
    }

    pub fn max_abs_slope(&self) -> f64 {
        (0..self.xs.len() - 1)
            .map(|s| self.slope(s).abs())
            .fold(0.0, f64::max)
    }

    pub fn end_slopes(&self) -> (f64, f64) {
        (self.slope(0), self.slope(self.xs.len() - 2))
    }
}

/// A one-dimensional target density π with its log-derivative and a
/// declared log-Lipschitz constant.
#[derive(Clone)]
pub struct TargetDensity {
    pub log_pi: Evaluator,
    pub dlog_pi: Evaluator,
    pub lipschitz: f64,
    pub domain: Domain,
    pub name: String,
}

impl fmt::Debug for TargetDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetDensity")
            .field("name", &self.name)
            .field("lipschitz", &self.lipschitz)
            .field("domain", &self.domain)
            .finish()
    }
}

impl TargetDensity {
    pub fn new(
        name: impl Into<String>,
        log_pi: Evaluator,
        dlog_pi: Evaluator,
        lipschitz: f64,
        domain: Domain,
    ) -> Result<Self> {
        domain.validate()?;
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(Error::rejected(format!(
                "Lipschitz constant must be finite and >= 0, got {lipschitz}"
            )));
        }
        Ok(TargetDensity {
            log_pi,
            dlog_pi,
            lipschitz,
            domain,
            name: name.into(),
        })
    }

    /// Standard normal restricted to `[a, b]`; L = max(|a|, |b|).
    pub fn standard_normal(a: f64, b: f64) -> Result<Self> {
        let domain = Domain::bounded(a, b)?;
        Self::new(
            "gaussian",
            evaluator(|x| -0.5 * x * x),
            evaluator(|x| -x),
            a.abs().max(b.abs()),
            domain,
        )
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        Self::new(
            "uniform",
            evaluator(|_| 0.0),
            evaluator(|_| 0.0),
            0.0,
            Domain::bounded(a, b)?,
        )
    }

    /// π ∝ exp(-rate |x|) on `domain`; L = rate.
    pub fn laplace(rate: f64, domain: Domain) -> Result<Self> {
        if !(rate > 0.0) {
            return Err(Error::rejected("laplace rate must be positive"));
        }
        if let Domain::RealLine { tail_rate, .. } = domain {
            if tail_rate > rate {
                return Err(Error::rejected(
                    "declared tail rate exceeds the laplace rate",
                ));
            }
        }
        Self::new(
            "laplace",
            evaluator(move |x| -rate * x.abs()),
            evaluator(move |x| -rate * x.signum()),
            rate,
            domain,
        )
    }

    /// Piecewise-linear log-density; L is the largest table slope.
    pub fn from_table(table: LogTable, domain: Domain) -> Result<Self> {
        if let Domain::RealLine { tail_rate, .. } = domain {
            let (left, right) = table.end_slopes();
            if -right < tail_rate || left < tail_rate {
                return Err(Error::rejected(
                    "table end slopes do not decay at the declared tail rate",
                ));
            }
        }
        let l = table.max_abs_slope();
        let t1 = Arc::new(table);
        let t2 = t1.clone();
        Self::new(
            "table",
            evaluator(move |x| t1.eval(x)),
            evaluator(move |x| t2.derivative(x)),
            l,
            domain,
        )
    }

    pub fn with_domain(&self, domain: Domain) -> Result<Self> {
        domain.validate()?;
        Ok(TargetDensity {
            domain,
            ..self.clone()
        })
    }

    pub fn log_pi(&self, x: f64) -> f64 {
        (self.log_pi)(x)
    }

    pub fn dlog_pi(&self, x: f64) -> f64 {
        (self.dlog_pi)(x)
    }

    /// Interval that carries all but a negligible fraction of the mass.
    pub fn effective_interval(&self) -> Result<(f64, f64)> {
        effective_interval(&*self.log_pi, &self.domain, 1.0)
    }

    /// log ∫ π over the domain.
    pub fn log_normalizer(&self) -> Result<f64> {
        let (lo, hi) = self.effective_interval()?;
        let rule = CompositeRule::new(lo, hi, 512);
        let peak = rule
            .nodes
            .iter()
            .map(|&x| self.log_pi(x))
            .fold(f64::NEG_INFINITY, f64::max);
        let z = rule.integrate(|x| (self.log_pi(x) - peak).exp());
        Ok(z.ln() + peak)
    }
}

/// Outcome of [`check_regularity`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    /// Largest chord slope of log π on the probe grid (a lower estimate of L).
    pub l_hat: f64,
    pub tail_ok: bool,
    pub q: f64,
    /// Minimum of the normalised density on the probed compact set.
    pub big_q: f64,
}

const Q_MAX: f64 = 1.0e6;
const PROBE_POINTS: usize = 4001;
/// Tail cut in log units: mass beyond the cut is below exp(-TAIL_CUT).
const TAIL_CUT: f64 = 40.0;

/// Lattice sums Σ π(i/m) over all i and over |i/m| ≥ q, relative to exp(peak).
fn lattice_sums(pi: &TargetDensity, m: usize, q: f64, peak: f64) -> (f64, f64) {
    let mf = m as f64;
    let (total, tail) = match pi.domain {
        Domain::Bounded { a, b } => {
            let lo = (a * mf).ceil() as i64;
            let hi = (b * mf).floor() as i64;
            let mut total = 0.0;
            let mut tail = 0.0;
            for i in lo..=hi {
                let x = i as f64 / mf;
                let w = (pi.log_pi(x) - peak).exp();
                total += w;
                if x.abs() >= q {
                    tail += w;
                }
            }
            (total, tail)
        }
        Domain::RealLine {
            tail_rate,
            tail_threshold,
        } => {
            let geometric = 1.0 / (1.0 - (-tail_rate / mf).exp());
            let mut total = 0.0;
            let mut tail = 0.0;
            for dir in [1i64, -1] {
                let mut i: i64 = if dir == 1 { 0 } else { -1 };
                loop {
                    let x = i as f64 / mf;
                    let lw = pi.log_pi(x) - peak;
                    let w = lw.exp();
                    total += w;
                    if x.abs() >= q {
                        tail += w;
                    }
                    if x.abs() > tail_threshold && lw < -TAIL_CUT - 10.0 {
                        // remaining terms are dominated by a geometric series
                        tail += w * geometric;
                        break;
                    }
                    i += dir;
                }
            }
            (total, tail)
        }
    };
    (total, tail)
}

/// Probe the log-Lipschitz constant, the lattice tail condition
/// `Σ_{|i/m| ≥ q} π(i/m) ≤ ¼ Σ_i π(i/m)` for every m in `m_list`, and
/// `Q = inf π` over `[-q-1, q+1]` (or the whole bounded domain).
pub fn check_regularity(pi: &TargetDensity, m_list: &[usize]) -> Result<RegularityReport> {
    if m_list.is_empty() || m_list.contains(&0) {
        return Err(Error::rejected(
            "m_list must be a nonempty list of positive integers",
        ));
    }
    let log_z = pi.log_normalizer()?;
    let (lo, hi) = pi.effective_interval()?;
    let peak = CompositeRule::new(lo, hi, 512)
        .nodes
        .iter()
        .map(|&x| pi.log_pi(x))
        .fold(f64::NEG_INFINITY, f64::max);

    let tail_holds = |q: f64| {
        m_list.iter().all(|&m| {
            let (total, tail) = lattice_sums(pi, m, q, peak);
            tail <= 0.25 * total
        })
    };

    let (q, tail_ok, probe) = match pi.domain {
        Domain::Bounded { a, b } => {
            let q = a.abs().max(b.abs());
            (q, tail_holds(q), (a, b))
        }
        Domain::RealLine { tail_threshold, .. } => {
            let mut q = tail_threshold;
            while !tail_holds(q) {
                q *= 2.0;
                if q > Q_MAX {
                    return Err(Error::TailViolation { q_max: Q_MAX });
                }
            }
            (q, true, (-q - 1.0, q + 1.0))
        }
    };

    let h = (probe.1 - probe.0) / (PROBE_POINTS - 1) as f64;
    let mut l_hat: f64 = 0.0;
    let mut min_log = f64::INFINITY;
    let mut prev = pi.log_pi(probe.0);
    min_log = min_log.min(prev);
    for k in 1..PROBE_POINTS {
        let cur = pi.log_pi(probe.0 + k as f64 * h);
        l_hat = l_hat.max((cur - prev).abs() / h);
        min_log = min_log.min(cur);
        prev = cur;
    }
    Ok(RegularityReport {
        l_hat,
        tail_ok,
        q,
        big_q: (min_log - log_z).exp(),
    })
}

/// Interval outside which `exp(beta * log_f)` carries relative mass below
/// roughly exp(-TAIL_CUT).
fn effective_interval(
    log_f: &(dyn Fn(f64) -> f64 + Send + Sync),
    domain: &Domain,
    beta: f64,
) -> Result<(f64, f64)> {
    match *domain {
        Domain::Bounded { a, b } => Ok((a, b)),
        Domain::RealLine {
            tail_rate,
            tail_threshold,
        } => {
            // beyond the threshold the density decreases, so the mode lies inside
            let scan = 2048;
            let peak = (0..=scan)
                .map(|k| log_f(-tail_threshold + 2.0 * tail_threshold * k as f64 / scan as f64))
                .fold(f64::NEG_INFINITY, f64::max);
            let cut = TAIL_CUT + (1.0 / (beta * tail_rate)).ln().max(0.0);
            let mut ends = [0.0; 2];
            for (slot, dir) in ends.iter_mut().zip([-1.0, 1.0]) {
                let mut t = 1.0 / (beta * tail_rate);
                let mut found = None;
                for _ in 0..200 {
                    let x = dir * (tail_threshold + t);
                    if beta * (peak - log_f(x)) >= cut {
                        found = Some(x);
                        break;
                    }
                    t *= 2.0;
                }
                *slot = found.ok_or_else(|| Error::NumericalFailure {
                    what: "tail truncation search".into(),
                    previous: t / 2.0,
                    last: t,
                })?;
            }
            Ok((ends[0], ends[1]))
        }
    }
}

/// M(β), I(β) and K(β) of a tempered family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: f64,
    pub i: f64,
    pub k: f64,
}

const CONVERGENCE_RTOL: f64 = 1e-8;
const CONVERGENCE_ATOL: f64 = 1e-12;
const MAX_REFINEMENTS: usize = 6;

struct FamilyInner {
    name: String,
    log_f: Evaluator,
    support: Domain,
    grid_n: usize,
    /// Points where log f may have a kink; panels never straddle them.
    breaks: Vec<f64>,
    cache: RwLock<HashMap<u64, Moments>>,
}

/// The tempered family f^β of an unnormalised base density f.
///
/// Cheap to clone; clones share the moment cache.
#[derive(Clone)]
pub struct TemperedFamily {
    inner: Arc<FamilyInner>,
}

impl fmt::Debug for TemperedFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TemperedFamily")
            .field("name", &self.inner.name)
            .field("support", &self.inner.support)
            .field("grid_n", &self.inner.grid_n)
            .finish()
    }
}

pub const DEFAULT_GRID_N: usize = 2048;

/// Build a tempered family from g = log f.
pub fn build_tempered_family(
    log_f: Evaluator,
    support: Domain,
    grid_n: usize,
) -> Result<TemperedFamily> {
    TemperedFamily::new("custom", log_f, support, grid_n)
}

impl TemperedFamily {
    pub fn new(
        name: impl Into<String>,
        log_f: Evaluator,
        support: Domain,
        grid_n: usize,
    ) -> Result<Self> {
        Self::with_breaks(name, log_f, support, grid_n, Vec::new())
    }

    fn with_breaks(
        name: impl Into<String>,
        log_f: Evaluator,
        support: Domain,
        grid_n: usize,
        breaks: Vec<f64>,
    ) -> Result<Self> {
        support.validate()?;
        if grid_n < 64 {
            return Err(Error::rejected(format!(
                "grid_n must be >= 64, got {grid_n}"
            )));
        }
        let family = TemperedFamily {
            inner: Arc::new(FamilyInner {
                name: name.into(),
                log_f,
                support,
                grid_n,
                breaks,
                cache: RwLock::new(HashMap::new()),
            }),
        };
        let rule = family.rule(1.0, 1)?;
        if let Some(&x) = rule.nodes.iter().find(|&&x| !family.g(x).is_finite()) {
            return Err(Error::rejected(format!(
                "log f is not finite at quadrature node {x}"
            )));
        }
        Ok(family)
    }

    /// log f(x) = -x²/2 on the real line.
    pub fn gaussian() -> Self {
        Self::new(
            "gaussian",
            evaluator(|x| -0.5 * x * x),
            Domain::RealLine {
                tail_rate: 1.0,
                tail_threshold: 2.0,
            },
            DEFAULT_GRID_N,
        )
        .expect("gaussian family is well formed")
    }

    /// log f(x) = -|x| on the real line.
    pub fn laplace() -> Self {
        Self::new(
            "laplace",
            evaluator(|x: f64| -x.abs()),
            Domain::RealLine {
                tail_rate: 1.0,
                tail_threshold: 1.0,
            },
            DEFAULT_GRID_N,
        )
        .expect("laplace family is well formed")
    }

    /// f ≡ 1 on (0, 1); every moment vanishes.
    pub fn uniform() -> Self {
        Self::new(
            "uniform",
            evaluator(|_| 0.0),
            Domain::Bounded { a: 0.0, b: 1.0 },
            DEFAULT_GRID_N,
        )
        .expect("uniform family is well formed")
    }

    pub fn from_table(table: LogTable, support: Domain, grid_n: usize) -> Result<Self> {
        if let Domain::Bounded { a, b } = support {
            let (lo, hi) = table.range();
            if a < lo || b > hi {
                return Err(Error::rejected("bounded support extends past the table"));
            }
        } else if let Domain::RealLine { tail_rate, .. } = support {
            let (left, right) = table.end_slopes();
            if -right < tail_rate || left < tail_rate {
                return Err(Error::rejected(
                    "table end slopes do not decay at the declared tail rate",
                ));
            }
        }
        let breaks = table.xs.clone();
        let t = Arc::new(table);
        Self::with_breaks(
            "table",
            evaluator(move |x| t.eval(x)),
            support,
            grid_n,
            breaks,
        )
    }

    /// Look up a built-in family by name.
    pub fn named(name: &str) -> Result<Self> {
        match name {
            "gaussian" => Ok(Self::gaussian()),
            "laplace" => Ok(Self::laplace()),
            "uniform" => Ok(Self::uniform()),
            other => Err(Error::rejected(format!("unknown family `{other}`"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.inner.name
    }

    pub fn support(&self) -> Domain {
        self.inner.support
    }

    pub fn grid_n(&self) -> usize {
        self.inner.grid_n
    }

    /// g(x) = log f(x).
    pub fn g(&self, x: f64) -> f64 {
        (self.inner.log_f)(x)
    }

    pub fn log_f(&self) -> &Evaluator {
        &self.inner.log_f
    }

    /// Integration interval used at inverse temperature `beta`.
    pub fn interval(&self, beta: f64) -> Result<(f64, f64)> {
        effective_interval(&*self.inner.log_f, &self.inner.support, beta)
    }

    /// Quadrature rule at refinement level `level` (1 = grid_n nodes).
    fn rule(&self, beta: f64, level: usize) -> Result<CompositeRule> {
        let (lo, hi) = self.interval(beta)?;
        let panels = (self.inner.grid_n / ORDER).max(1) * level;
        let inner: Vec<f64> = self
            .inner
            .breaks
            .iter()
            .copied()
            .filter(|&x| x > lo && x < hi)
            .collect();
        if inner.is_empty() {
            return Ok(CompositeRule::new(lo, hi, panels));
        }
        let mut cuts = vec![lo];
        cuts.extend(inner);
        cuts.push(hi);
        let mut rule = CompositeRule {
            lo,
            hi,
            nodes: Vec::new(),
            weights: Vec::new(),
        };
        for w in cuts.windows(2) {
            let n = ((panels as f64 * (w[1] - w[0]) / (hi - lo)).ceil() as usize).max(level);
            let piece = CompositeRule::new(w[0], w[1], n);
            rule.nodes.extend(piece.nodes);
            rule.weights.extend(piece.weights);
        }
        Ok(rule)
    }

    fn raw_moments(&self, beta: f64, rule: &CompositeRule) -> Moments {
        let g: Vec<f64> = rule.nodes.iter().map(|&x| self.g(x)).collect();
        let peak = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = g
            .iter()
            .zip(&rule.weights)
            .map(|(&gv, &wt)| wt * (beta * (gv - peak)).exp())
            .collect();
        let z: f64 = w.iter().sum();
        let m = w.iter().zip(&g).map(|(wi, gi)| wi * gi).sum::<f64>() / z;
        let i = w
            .iter()
            .zip(&g)
            .map(|(wi, gi)| wi * (gi - m) * (gi - m))
            .sum::<f64>()
            / z;
        Moments {
            m,
            i,
            k: -(z.ln() + beta * peak),
        }
    }

    /// Moments at any β > 0, with the doubling convergence check.
    fn compute_moments(&self, beta: f64) -> Result<Moments> {
        if let Some(hit) = self.inner.cache.read().unwrap().get(&beta.to_bits()) {
            return Ok(*hit);
        }
        let close = |a: f64, b: f64| (a - b).abs() <= CONVERGENCE_RTOL * b.abs() + CONVERGENCE_ATOL;
        let mut level = 1;
        let mut coarse = self.raw_moments(beta, &self.rule(beta, level)?);
        loop {
            level *= 2;
            let fine = self.raw_moments(beta, &self.rule(beta, level)?);
            if close(coarse.m, fine.m) && close(coarse.i, fine.i) && close(coarse.k, fine.k) {
                self.inner
                    .cache
                    .write()
                    .unwrap()
                    .insert(beta.to_bits(), fine);
                return Ok(fine);
            }
            if level >= 1 << MAX_REFINEMENTS {
                let (previous, last) = [(coarse.m, fine.m), (coarse.i, fine.i), (coarse.k, fine.k)]
                    .into_iter()
                    .max_by(|a, b| (a.0 - a.1).abs().total_cmp(&(b.0 - b.1).abs()))
                    .unwrap();
                return Err(Error::NumericalFailure {
                    what: format!(
                        "quadrature of the {} family at beta = {beta}",
                        self.inner.name
                    ),
                    previous,
                    last,
                });
            }
            coarse = fine;
        }
    }

    /// (M(β), I(β), K(β)) for β in (0, 1].
    pub fn moments(&self, beta: f64) -> Result<Moments> {
        check_beta(beta)?;
        self.compute_moments(beta)
    }

    /// K'''(β) = -I'(β) by a centred difference of I with step 10⁻³β.
    ///
    /// The upper stencil point may exceed 1; f^β stays integrable there.
    pub fn third_derivative_k(&self, beta: f64) -> Result<f64> {
        check_beta(beta)?;
        let h = 1e-3 * beta;
        let up = self.compute_moments(beta + h)?.i;
        let down = self.compute_moments(beta - h)?.i;
        Ok(-(up - down) / (2.0 * h))
    }

    /// Inverse-CDF sampler for the normalised f^β.
    pub fn sampler(&self, beta: f64) -> Result<TemperedSampler> {
        check_beta(beta)?;
        TemperedSampler::new(self, beta)
    }

    /// `n` i.i.d. draws from normalised f^β, deterministic in `seed`.
    pub fn sample_tempered(&self, beta: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::rejected("n must be >= 1"));
        }
        let sampler = self.sampler(beta)?;
        let mut rng = rng_from_seed(seed);
        Ok((0..n).map(|_| sampler.draw(&mut rng)).collect())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Domain(format!(
            "inverse temperature must lie in (0, 1], got {beta}"
        )));
    }
    Ok(())
}

/// Tabulated inverse CDF of f^β with linear interpolation between nodes.
#[derive(Debug, Clone)]
pub struct TemperedSampler {
    lo: f64,
    h: f64,
    cdf: Vec<f64>,
    guide: Vec<u32>,
}

const SAMPLER_CELLS_PER_NODE: usize = 4;

impl TemperedSampler {
    fn new(family: &TemperedFamily, beta: f64) -> Result<Self> {
        let (lo, hi) = family.interval(beta)?;
        let cells = family.grid_n() * SAMPLER_CELLS_PER_NODE;
        let h = (hi - lo) / cells as f64;
        let lw: Vec<f64> = (0..=cells)
            .map(|j| beta * family.g(lo + j as f64 * h))
            .collect();
        let peak = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lw.iter().map(|l| (l - peak).exp()).collect();
        let mut cdf = Vec::with_capacity(cells + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for j in 0..cells {
            acc += 0.5 * (w[j] + w[j + 1]);
            cdf.push(acc);
        }
        if !(acc > 0.0 && acc.is_finite()) {
            return Err(Error::NumericalFailure {
                what: "sampler normalisation".into(),
                previous: 0.0,
                last: acc,
            });
        }
        for c in &mut cdf {
            *c /= acc;
        }
        cdf[cells] = 1.0;
        let guide = (0..cells)
            .map(|k| {
                let u = k as f64 / cells as f64;
                (cdf.partition_point(|&c| c <= u).max(1) - 1) as u32
            })
            .collect();
        Ok(TemperedSampler { lo, h, cdf, guide })
    }

    pub fn draw(&self, rng: &mut SimRng) -> f64 {
        let u: f64 = rng.gen();
        let cells = self.guide.len();
        let mut j = self.guide[((u * cells as f64) as usize).min(cells - 1)] as usize;
        while j + 1 < cells && self.cdf[j + 1] <= u {
            j += 1;
        }
        let frac = (u - self.cdf[j]) / (self.cdf[j + 1] - self.cdf[j]);
        self.lo + (j as f64 + frac) * self.h
    }
}
