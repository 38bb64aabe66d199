//! Speed of the limiting temperature diffusion and the optimal ladder rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::target::{evaluator, TemperedFamily};
use crate::tempering::{build_ladder, EllRule, Ladder};

/// 2ℓ²Φ(−ℓ√I(β)/2).
pub fn speed(family: &TemperedFamily, beta: f64, ell_val: f64) -> Result<f64> {
    if !(ell_val >= 0.0) {
        return Err(Error::rejected("ell must be >= 0"));
    }
    let i = family.moments(beta)?.i;
    Ok(2.0 * ell_val * ell_val * normal::cdf(-ell_val * i.sqrt() / 2.0))
}

/// u²Φ(−u/2), the speed after the substitution u = ℓ√I.
pub fn objective(u: f64) -> f64 {
    u * u * normal::cdf(-u / 2.0)
}

/// 2Φ(−u/2) − (u/2)φ(u/2); vanishes at the optimum.
pub fn stationarity_residual(u: f64) -> f64 {
    2.0 * normal::cdf(-u / 2.0) - (u / 2.0) * normal::pdf(u / 2.0)
}

const BRACKET: (f64, f64) = (1e-3, 10.0);
const U_TOL: f64 = 1e-8;

/// Golden-section maximisation of `f` on `[lo, hi]` to width `tol`.
pub fn golden_section_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// (u*, 2Φ(−u*/2)) with u* = argmax u²Φ(−u/2).
pub fn optimal_u() -> Result<(f64, f64)> {
    let u = golden_section_max(objective, BRACKET.0, BRACKET.1, U_TOL);
    if u - BRACKET.0 < 1e-6 || BRACKET.1 - u < 1e-6 {
        return Err(Error::Internal(format!(
            "optimum {u} sits on the search bracket"
        )));
    }
    Ok((u, 2.0 * normal::cdf(-u / 2.0)))
}

/// The universal optimiser and its acceptance rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalRule {
    pub u_star: f64,
    pub acc_star: f64,
}

impl OptimalRule {
    pub fn compute() -> Result<Self> {
        let (u_star, acc_star) = optimal_u()?;
        Ok(OptimalRule { u_star, acc_star })
    }

    /// ℓ(β) = u*/√I(β).
    pub fn ell_rule(&self, family: &TemperedFamily, chi: f64) -> Result<EllRule> {
        check_nondegenerate(family, chi)?;
        let fam = family.clone();
        let u = self.u_star;
        Ok(EllRule::new(
            "optimal",
            evaluator(move |b| match fam.moments(b) {
                Ok(mo) => u / mo.i.sqrt(),
                Err(_) => f64::NAN,
            }),
        ))
    }
}

fn check_nondegenerate(family: &TemperedFamily, chi: f64) -> Result<()> {
    if !(chi > 0.0 && chi <= 1.0) {
        return Err(Error::rejected(format!(
            "chi must lie in (0, 1], got {chi}"
        )));
    }
    for k in 0..=32 {
        let b = chi + (1.0 - chi) * k as f64 / 32.0;
        if !(family.moments(b)?.i > 0.0) {
            return Err(Error::DegenerateFamily(format!(
                "I({b}) = 0 for the {} family; speed has no interior maximum",
                family.name()
            )));
        }
    }
    Ok(())
}

/// ℓ(β) = 2Φ⁻¹(1 − a/2)/√I(β), so that 2Φ(−ℓ√I/2) = a on `[chi, 1]`.
pub fn ell_for_acceptance(family: &TemperedFamily, a: f64, chi: f64) -> Result<EllRule> {
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::rejected(format!(
            "acceptance target must lie in (0, 1], got {a}"
        )));
    }
    let z = 2.0 * normal::quantile(1.0 - a / 2.0);
    if z == 0.0 {
        return Ok(EllRule::new(format!("acceptance-{a}"), evaluator(|_| 0.0)));
    }
    check_nondegenerate(family, chi)?;
    let fam = family.clone();
    Ok(EllRule::new(
        format!("acceptance-{a}"),
        evaluator(move |b| match fam.moments(b) {
            Ok(mo) => z / mo.i.sqrt(),
            Err(_) => f64::NAN,
        }),
    ))
}

/// Ladder built from the optimal rule ℓ = u*/√I.
pub fn optimal_ladder(family: &TemperedFamily, d: usize, chi: f64) -> Result<Ladder> {
    let rule = OptimalRule::compute()?;
    let ell = rule.ell_rule(family, chi)?;
    let mut ladder = build_ladder(&ell, d, chi)?;
    ladder.acc_target = Some(rule.acc_star);
    Ok(ladder)
}

/// Ladder targeting first-order acceptance `a` at every rung.
pub fn acceptance_ladder(family: &TemperedFamily, a: f64, d: usize, chi: f64) -> Result<Ladder> {
    let ell = ell_for_acceptance(family, a, chi)?;
    let mut ladder = build_ladder(&ell, d, chi)?;
    ladder.acc_target = Some(a);
    Ok(ladder)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tempering::acceptance_asymptotic;

    /// Bisection on the stationarity equation 4Φ(−u/2) = uφ(u/2).
    fn bisect_stationarity() -> f64 {
        let (mut lo, mut hi) = (1.0, 4.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if stationarity_residual(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn optimum_reproduces_0_234() {
        let (u, acc) = optimal_u().unwrap();
        assert!((0.2335..=0.2345).contains(&acc), "{acc}");
        assert!((u - 2.38).abs() < 0.01);
        assert!(stationarity_residual(u).abs() < 1e-8);
        assert!((u - bisect_stationarity()).abs() < 1e-7);
        assert!(objective(u) > objective(0.9 * u) && objective(u) > objective(1.1 * u));
    }

    #[test]
    fn speed_values() {
        let fam = TemperedFamily::gaussian();
        assert_eq!(speed(&fam, 1.0, 0.0).unwrap(), 0.0);
        let uni = TemperedFamily::uniform();
        assert_eq!(speed(&uni, 0.5, 3.0).unwrap(), 9.0);
        let (u, acc) = optimal_u().unwrap();
        let s = speed(&fam, 1.0, u / 0.5f64.sqrt()).unwrap();
        assert!((s - 4.0 * u * u * acc / 2.0).abs() < 1e-10);
    }

    #[test]
    fn degenerate_family_is_rejected() {
        let uni = TemperedFamily::uniform();
        assert!(matches!(
            ell_for_acceptance(&uni, 0.234, 0.3),
            Err(Error::DegenerateFamily(_))
        ));
        assert!(matches!(
            optimal_ladder(&uni, 100, 0.3),
            Err(Error::DegenerateFamily(_))
        ));
    }

    #[test]
    fn acceptance_rule_round_trip() {
        let fam = TemperedFamily::gaussian();
        assert_eq!((ell_for_acceptance(&fam, 1.0, 0.3).unwrap().eval)(0.5), 0.0);
        for a in [0.1, 0.234, 0.5] {
            let ell = ell_for_acceptance(&fam, a, 0.3).unwrap();
            for b in [0.3, 0.55, 1.0] {
                let got = acceptance_asymptotic(&fam, b, ell.at(b)).unwrap();
                assert!((got - a).abs() < 1e-10, "{a} {b} {got}");
            }
        }
        let (u, acc) = optimal_u().unwrap();
        let ell = ell_for_acceptance(&fam, acc, 0.3).unwrap();
        for b in [0.4, 0.9] {
            assert!((ell.at(b) - u * 2f64.sqrt() * b).abs() < 1e-8);
        }
    }

    #[test]
    fn optimal_gaussian_ladder() {
        let fam = TemperedFamily::gaussian();
        let ladder = optimal_ladder(&fam, 100, 0.3).unwrap();
        let (u, _) = optimal_u().unwrap();
        let ratio = 1.0 - u * 2f64.sqrt() / 10.0;
        assert_eq!(ladder.k_d, 2);
        for (i, b) in ladder.betas.iter().enumerate() {
            assert!((b - ratio.powi(i as i32)).abs() < 1e-8, "{b}");
        }
        assert!((ladder.betas[1] - 0.6633).abs() < 1e-3);
        assert!((ladder.betas[2] - 0.4400).abs() < 1e-3);
        let single = optimal_ladder(&fam, 100, 1.0 - 1e-3).unwrap();
        assert_eq!(single.k_d, 0);
    }

    #[test]
    fn rule_is_exact_for_large_d() {
        let fam = TemperedFamily::gaussian();
        let rule = OptimalRule::compute().unwrap();
        let ell = rule.ell_rule(&fam, 0.3).unwrap();
        let ladder = build_ladder(&ell, 1_000_000, 0.3).unwrap();
        for &b in ladder.betas.iter().step_by(97) {
            let acc = acceptance_asymptotic(&fam, b, ell.at(b)).unwrap();
            assert!((acc - rule.acc_star).abs() < 1e-3);
        }
        for b in [0.3, 0.6, 1.0] {
            let i = fam.moments(b).unwrap().i;
            assert!((ell.at(b) * i.sqrt() - rule.u_star).abs() < 1e-8 * rule.u_star);
        }
    }

    #[test]
    fn universality_across_families() {
        // Profiles of speed(β, ℓ) in ℓ peak at ℓ√I = u* for any family.
        let (u, _) = optimal_u().unwrap();
        for fam in [TemperedFamily::gaussian(), TemperedFamily::laplace()] {
            for b in [0.4, 1.0] {
                let i = fam.moments(b).unwrap().i;
                let l = golden_section_max(
                    |l| speed(&fam, b, l).unwrap(),
                    1e-3,
                    20.0 / i.sqrt(),
                    1e-10,
                );
                assert!((l * i.sqrt() - u).abs() < 1e-6, "{} {b}", fam.name());
            }
        }
    }

    #[test]
    fn optimal_speed_dominates() {
        let fam = TemperedFamily::laplace();
        let rule = OptimalRule::compute().unwrap();
        let ell = rule.ell_rule(&fam, 0.3).unwrap();
        for b in [0.3, 0.5, 0.8, 1.0] {
            let best = speed(&fam, b, ell.at(b)).unwrap();
            for scale in [0.2, 0.5, 0.9, 0.99, 1.01, 1.1, 2.0, 5.0] {
                assert!(best >= speed(&fam, b, scale * ell.at(b)).unwrap());
            }
        }
    }
}
