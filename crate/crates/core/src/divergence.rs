//! f-divergences and their asymmetrically relaxed counterparts.
//!
//! The relaxed generator keeps `f` above `beta` (shifted by a constant) and
//! replaces it with its tangent line at `beta` below, so any ratio `p/q <= beta`
//! costs nothing in aggregate.

use crate::error::{invalid, Error, Result};

/// Convex generator `f` with `f(1) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    /// `f(u) = u log u`, giving the KL divergence.
    Kl,
}

impl Generator {
    /// `f(u)`, with `f(0)` taken as its limit.
    pub fn f(self, u: f64) -> f64 {
        match self {
            Generator::Kl => {
                if u == 0.0 {
                    0.0
                } else {
                    u * u.ln()
                }
            }
        }
    }

    /// `f'(u)`.
    pub fn f_prime(self, u: f64) -> f64 {
        match self {
            Generator::Kl => u.ln() + 1.0,
        }
    }
}

/// Generator, relaxation level and the constants derived from them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxedDivergenceSpec {
    generator: Generator,
    beta: f64,
    f_prime_beta: f64,
    c_f_beta: f64,
}

impl RelaxedDivergenceSpec {
    pub fn new(generator: Generator, beta: f64) -> Result<Self> {
        if !(beta > 1.0) || !beta.is_finite() {
            return Err(invalid(format!("relaxation level beta must be a finite number > 1, got {beta}")));
        }
        Ok(Self::new_unchecked(generator, beta))
    }

    /// Builds a spec for any positive `beta`, including the `beta -> 0`
    /// regime used to recover the plain KL-regularized objective.
    pub fn new_unchecked(generator: Generator, beta: f64) -> Self {
        let f_prime_beta = generator.f_prime(beta);
        let c_f_beta = -generator.f(beta) + f_prime_beta * (beta - 1.0);
        Self { generator, beta, f_prime_beta, c_f_beta }
    }

    pub fn kl(beta: f64) -> Result<Self> {
        Self::new(Generator::Kl, beta)
    }

    pub fn generator(&self) -> Generator {
        self.generator
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `f'(beta)`.
    pub fn f_prime_beta(&self) -> f64 {
        self.f_prime_beta
    }

    /// `C_{f,beta} = -f(beta) + f'(beta)(beta - 1)`.
    pub fn c_f_beta(&self) -> f64 {
        self.c_f_beta
    }

    /// Relaxed generator evaluated at `u >= 0`.
    pub fn f_tilde(&self, u: f64) -> Result<f64> {
        if !(u >= 0.0) {
            return Err(invalid(format!("f_tilde needs u >= 0, got {u}")));
        }
        Ok(self.f_tilde_unchecked(u))
    }

    pub(crate) fn f_tilde_unchecked(&self, u: f64) -> f64 {
        if u >= self.beta {
            self.generator.f(u) + self.c_f_beta
        } else {
            self.f_prime_beta * u - self.f_prime_beta
        }
    }
}

/// `B` in `d*(s,a) / d^U(s,a) <= B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcentrabilityBound(f64);

impl ConcentrabilityBound {
    pub fn new(b: f64) -> Result<Self> {
        if !(b >= 1.0) {
            return Err(invalid(format!("concentrability bound must be >= 1, got {b}")));
        }
        Ok(Self(b))
    }

    /// Smallest bound that holds for the given pair.
    pub fn of(d_star: &[f64], d_u: &[f64]) -> Result<Self> {
        let mut b: f64 = 1.0;
        for (i, (&p, &q)) in d_star.iter().zip(d_u).enumerate() {
            if p > 0.0 && q == 0.0 {
                return Err(Error::SupportViolation { index: i, detail: format!("d*={p} but d^U=0") });
            }
            if q > 0.0 {
                b = b.max(p / q);
            }
        }
        Self::new(b)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

fn for_each_ratio(p: &[f64], q: &[f64], mut visit: impl FnMut(f64, f64)) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch(format!("distributions have {} and {} atoms", p.len(), q.len())));
    }
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if !(pi >= 0.0) || !(qi >= 0.0) {
            return Err(invalid(format!("negative or NaN mass at atom {i}")));
        }
        if qi == 0.0 {
            if pi > 0.0 {
                return Err(Error::SupportViolation {
                    index: i,
                    detail: format!("p={pi} where q=0; ratio undefined"),
                });
            }
            continue;
        }
        visit(qi, pi / qi);
    }
    Ok(())
}

/// `sum_x q(x) f(p(x)/q(x))`; atoms with `p = q = 0` contribute nothing.
pub fn f_divergence(generator: Generator, p: &[f64], q: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for_each_ratio(p, q, |qi, u| total += qi * generator.f(u))?;
    Ok(total)
}

/// `sum_x q(x) f_tilde_beta(p(x)/q(x))`.
pub fn relaxed_f_divergence(spec: &RelaxedDivergenceSpec, p: &[f64], q: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for_each_ratio(p, q, |qi, u| total += qi * spec.f_tilde_unchecked(u))?;
    Ok(total)
}

/// Outcome of comparing the exact and relaxed regularizers at an optimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OptimumCheck {
    /// Relaxed divergence of `d*` from `d^U` vanishes (within 1e-12).
    pub relaxed_zero: bool,
    /// Exact divergence of `d*` from `d^U` is strictly positive.
    pub exact_positive: bool,
}

/// Whether the relaxed regularizer leaves `d_star` unpenalized while the
/// exact one penalizes it. Requires `d_star / d_u <= beta` everywhere.
pub fn preserves_optimum_check(spec: &RelaxedDivergenceSpec, d_star: &[f64], d_u: &[f64]) -> Result<OptimumCheck> {
    let mut violation = None;
    let mut idx = 0usize;
    for_each_ratio(d_star, d_u, |_, _| {})?;
    for (i, (&p, &q)) in d_star.iter().zip(d_u).enumerate() {
        if q > 0.0 && p / q > spec.beta() + 1e-12 && violation.is_none() {
            violation = Some(p / q);
            idx = i;
        }
    }
    if let Some(r) = violation {
        return Err(invalid(format!(
            "ratio d*/d^U = {r} at atom {idx} exceeds beta = {}",
            spec.beta()
        )));
    }
    let relaxed = relaxed_f_divergence(spec, d_star, d_u)?;
    let exact = f_divergence(spec.generator(), d_star, d_u)?;
    Ok(OptimumCheck { relaxed_zero: relaxed.abs() <= 1e-12, exact_positive: exact > 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn f_tilde_values() {
        let spec = RelaxedDivergenceSpec::kl(2.0).unwrap();
        assert!(spec.f_tilde(1.0).unwrap().abs() < 1e-15);
        // 3 ln 3 + (2 - 1 - ln 2), evaluated independently.
        let expected = 3.0 * 3f64.ln() + 1.0 - 2f64.ln();
        assert!((spec.f_tilde(3.0).unwrap() - expected).abs() < 1e-12);
        assert!((spec.f_tilde(3.0).unwrap() - 3.602_689_685_444_384).abs() < 1e-12);
        assert!((spec.c_f_beta() - 0.306_852_819_440_054_7).abs() < 1e-15);
        let upper = Generator::Kl.f(2.0) + spec.c_f_beta();
        let lower = spec.f_prime_beta() * 2.0 - spec.f_prime_beta();
        assert!((upper - lower).abs() < 1e-12);
        assert!(spec.f_tilde(-0.1).is_err());
        assert!((spec.f_tilde(0.0).unwrap() + spec.f_prime_beta()).abs() < 1e-15);
    }

    #[test]
    fn beta_must_exceed_one() {
        assert!(RelaxedDivergenceSpec::kl(1.0).is_err());
        assert!(RelaxedDivergenceSpec::kl(0.5).is_err());
        assert!(RelaxedDivergenceSpec::kl(f64::NAN).is_err());
    }

    #[test]
    fn divergence_examples() {
        let spec = RelaxedDivergenceSpec::kl(2.0).unwrap();
        let p = [0.3, 0.2, 0.5];
        assert!(relaxed_f_divergence(&spec, &p, &p).unwrap().abs() < 1e-15);
        assert!(relaxed_f_divergence(&spec, &[0.6, 0.4], &[0.5, 0.5]).unwrap().abs() < 1e-15);

        let got = relaxed_f_divergence(&spec, &[0.9, 0.1], &[0.3, 0.7]).unwrap();
        let by_hand = 0.3 * (3.0 * 3f64.ln() + 1.0 - 2f64.ln()) + 0.7 * ((2f64.ln() + 1.0) * (0.1 / 0.7 - 1.0));
        assert!(got > 0.0);
        assert!((got - by_hand).abs() < 1e-12);

        let kl = f_divergence(Generator::Kl, &[0.75, 0.25], &[0.5, 0.5]).unwrap();
        let direct = 0.75 * (0.75f64 / 0.5).ln() + 0.25 * (0.25f64 / 0.5).ln();
        assert!((kl - direct).abs() < 1e-15);
        assert!((kl - 0.130_812_035_941_137).abs() < 1e-12);
        assert!(f_divergence(Generator::Kl, &p, &p).unwrap().abs() < 1e-15);
    }

    #[test]
    fn support_violation_is_an_error() {
        let spec = RelaxedDivergenceSpec::kl(2.0).unwrap();
        let err = relaxed_f_divergence(&spec, &[0.5, 0.5], &[1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::SupportViolation { index: 1, .. }));
        assert!(f_divergence(Generator::Kl, &[0.5, 0.5], &[1.0, 0.0]).is_err());
        // p = q = 0 atoms are fine.
        assert!(f_divergence(Generator::Kl, &[1.0, 0.0], &[1.0, 0.0]).is_ok());
    }

    #[test]
    fn optimum_check() {
        let spec = RelaxedDivergenceSpec::kl(1.5).unwrap();
        let r = preserves_optimum_check(&spec, &[0.6, 0.4], &[0.4, 0.6]).unwrap();
        assert_eq!(r, OptimumCheck { relaxed_zero: true, exact_positive: true });
        let r = preserves_optimum_check(&spec, &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert!(r.relaxed_zero && !r.exact_positive);
        assert!(preserves_optimum_check(&spec, &[0.9, 0.1], &[0.4, 0.6]).is_err());
        assert!((ConcentrabilityBound::of(&[0.6, 0.4], &[0.4, 0.6]).unwrap().value() - 1.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn f_tilde_is_convex(beta in 1.01f64..10.0, u1 in 0.0f64..20.0, u2 in 0.0f64..20.0, lam in 0.0f64..1.0) {
            let spec = RelaxedDivergenceSpec::kl(beta).unwrap();
            let mid = spec.f_tilde(lam * u1 + (1.0 - lam) * u2).unwrap();
            let chord = lam * spec.f_tilde(u1).unwrap() + (1.0 - lam) * spec.f_tilde(u2).unwrap();
            prop_assert!(mid <= chord + 1e-12 * (1.0 + chord.abs()));
        }

        #[test]
        fn relaxation_is_monotone_in_beta(raw_p in prop::collection::vec(0.01f64..1.0, 4), raw_q in prop::collection::vec(0.01f64..1.0, 4)) {
            let norm = |v: &[f64]| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect::<Vec<_>>() };
            let (p, q) = (norm(&raw_p), norm(&raw_q));
            let mut prev = f64::INFINITY;
            for beta in [1.1, 1.5, 2.0, 4.0, 8.0] {
                let spec = RelaxedDivergenceSpec::kl(beta).unwrap();
                let v = relaxed_f_divergence(&spec, &p, &q).unwrap();
                prop_assert!(v <= prev + 1e-12);
                prev = v;
            }
        }
    }
}
