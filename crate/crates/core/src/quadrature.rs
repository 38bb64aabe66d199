//! Composite Gauss–Legendre rules on uniform panels.

/// Points per panel.
pub const ORDER: usize = 8;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
///
/// Newton iteration on P_n from the Chebyshev initial guess; converges to
/// machine precision for the small orders used here.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// A fixed set of composite-rule nodes and weights on `[lo, hi]`.
#[derive(Debug, Clone)]
pub struct CompositeRule {
    pub lo: f64,
    pub hi: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl CompositeRule {
    /// `panels` uniform panels with an [`ORDER`]-point rule on each.
    pub fn new(lo: f64, hi: f64, panels: usize) -> Self {
        let (gx, gw) = gauss_legendre(ORDER);
        let h = (hi - lo) / panels as f64;
        let mut nodes = Vec::with_capacity(panels * ORDER);
        let mut weights = Vec::with_capacity(panels * ORDER);
        for p in 0..panels {
            let left = lo + p as f64 * h;
            let mid = left + 0.5 * h;
            for (x, w) in gx.iter().zip(&gw) {
                nodes.push(mid + 0.5 * h * x);
                weights.push(0.5 * h * w);
            }
        }
        CompositeRule {
            lo,
            hi,
            nodes,
            weights,
        }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_two() {
        for n in [2, 5, 8, 12] {
            let (_, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_for_high_degree_polynomials() {
        // An 8-point rule integrates degree 15 exactly.
        let rule = CompositeRule::new(-1.0, 2.0, 1);
        let got = rule.integrate(|x| x.powi(15));
        let want = (2f64.powi(16) - 1.0) / 16.0;
        assert!((got - want).abs() < 1e-10 * want);
    }

    #[test]
    fn gaussian_integral() {
        let rule = CompositeRule::new(-12.0, 12.0, 64);
        let got = rule.integrate(|x| (-0.5 * x * x).exp());
        assert!((got - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-13);
    }
}
