//! Scalar truncation and the regularized porous-medium diffusivity.

/// `T_k(s) = max(min(s, k), -k)`.
#[inline]
pub fn truncate(s: f64, k: f64) -> f64 {
    debug_assert!(k > 0.0);
    s.clamp(-k, k)
}

/// Clipped diffusivity `a_n(s) = m·clamp(|s|, 1/n, n)^{m-1}`.
///
/// Equal to `m|s|^{m-1}` on `1/n ≤ |s| ≤ n` and frozen at the clip values
/// outside, so it is strictly positive and bounded for every `m > 0`.
#[inline]
pub fn regularized_diffusivity(s: f64, m: f64, n: f64) -> f64 {
    debug_assert!(m > 0.0 && n >= 1.0);
    m * s.abs().clamp(1.0 / n, n).powf(m - 1.0)
}

/// Primitive `Φ_n(s) = ∫_0^s a_n(r) dr` of [`regularized_diffusivity`].
///
/// The scheme diffuses `Φ_n(u)`, so that the face flux
/// `Φ_n(u_j) - Φ_n(u_i)` carries the integral mean of `a_n` over `[u_i, u_j]`.
#[derive(Clone, Copy, Debug)]
pub struct Diffusion {
    m: f64,
    n: f64,
    lo: f64,
    a_lo: f64,
    a_hi: f64,
    phi_lo: f64,
    phi_hi: f64,
}

impl Diffusion {
    pub fn new(m: f64, n: f64) -> Self {
        let lo = 1.0 / n;
        let a_lo = regularized_diffusivity(0.0, m, n);
        let a_hi = regularized_diffusivity(n, m, n);
        let phi_lo = a_lo * lo;
        let phi_hi = phi_lo + (n.powf(m) - lo.powf(m));
        Self {
            m,
            n,
            lo,
            a_lo,
            a_hi,
            phi_lo,
            phi_hi,
        }
    }

    pub fn exponent(&self) -> f64 {
        self.m
    }

    pub fn level(&self) -> f64 {
        self.n
    }

    #[inline]
    pub fn diffusivity(&self, s: f64) -> f64 {
        regularized_diffusivity(s, self.m, self.n)
    }

    #[inline]
    pub fn potential(&self, s: f64) -> f64 {
        let r = s.abs();
        let v = if r <= self.lo {
            self.a_lo * r
        } else if r <= self.n {
            self.phi_lo + (r.powf(self.m) - self.lo.powf(self.m))
        } else {
            self.phi_hi + self.a_hi * (r - self.n)
        };
        v.copysign(s)
    }
}

/// Truncated absorption `g(s) = T_k(|s|^{q-1} s)`; `None` disables it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Absorption {
    pub q: f64,
    pub k: f64,
}

impl Absorption {
    #[inline]
    pub fn value(&self, s: f64) -> f64 {
        truncate(s.abs().powf(self.q).copysign(s), self.k)
    }

    /// Derivative, zero where the truncation is active.
    #[inline]
    pub fn derivative(&self, s: f64) -> f64 {
        let r = s.abs();
        if r.powf(self.q) >= self.k {
            0.0
        } else if r == 0.0 {
            if self.q < 1.0 {
                f64::INFINITY
            } else if self.q == 1.0 {
                1.0
            } else {
                0.0
            }
        } else {
            self.q * r.powf(self.q - 1.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn truncation_examples() {
        assert_eq!(truncate(5.0, 2.0), 2.0);
        assert_eq!(truncate(-1.0, 2.0), -1.0);
        assert_eq!(truncate(-7.0, 3.0), -3.0);
    }

    #[test]
    fn diffusivity_examples() {
        assert!((regularized_diffusivity(3.0, 2.0, 10.0) - 6.0).abs() < 1e-14);
        assert!((regularized_diffusivity(0.0, 2.0, 10.0) - 0.2).abs() < 1e-14);
        assert!((regularized_diffusivity(100.0, 2.0, 10.0) - 20.0).abs() < 1e-14);
    }

    #[test]
    fn diffusivity_converges_as_level_grows() {
        for &(m, s) in &[(2.0, 0.3), (0.8, 0.05), (3.0, 7.0)] {
            let exact: f64 = m * f64::powf(s, m - 1.0);
            let errs: Vec<f64> = [1.0, 2.0, 5.0, 20.0, 1e3]
                .iter()
                .map(|&n| (regularized_diffusivity(s, m, n) - exact).abs())
                .collect();
            assert!(errs.windows(2).all(|w| w[1] <= w[0]));
            assert_eq!(*errs.last().unwrap(), 0.0);
        }
    }

    #[test]
    fn potential_is_primitive() {
        for &m in &[0.8, 1.0, 2.0, 3.5] {
            let d = Diffusion::new(m, 10.0);
            for &s in &[-30.0, -3.0, -0.05, 0.0, 0.02, 0.7, 9.9, 15.0] {
                let eps = 1e-6;
                let fd = (d.potential(s + eps) - d.potential(s - eps)) / (2.0 * eps);
                assert!(
                    (fd - d.diffusivity(s)).abs() < 1e-5 * d.diffusivity(s).max(1.0),
                    "m={m} s={s}: {fd} vs {}",
                    d.diffusivity(s)
                );
            }
        }
    }

    #[test]
    fn absorption_is_monotone_and_truncated() {
        let g = Absorption { q: 2.5, k: 4.0 };
        assert_eq!(g.value(10.0), 4.0);
        assert_eq!(g.value(-10.0), -4.0);
        assert_eq!(g.derivative(10.0), 0.0);
        assert!((g.value(1.0) - 1.0).abs() < 1e-15);
        assert!((g.derivative(1.0) - 2.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn truncate_is_odd_and_lipschitz(a in -50.0f64..50.0, b in -50.0f64..50.0, k in 0.01f64..20.0) {
            prop_assert_eq!(truncate(-a, k), -truncate(a, k));
            prop_assert!((truncate(a, k) - truncate(b, k)).abs() <= (a - b).abs());
        }

        #[test]
        fn diffusivity_bounded(s in -1e3f64..1e3, m in 0.1f64..4.0, n in 1.0f64..1e3) {
            let a = regularized_diffusivity(s, m, n);
            let lo = m * n.min(1.0 / n).powf(m - 1.0);
            let hi = m * n.max(1.0 / n).powf(m - 1.0);
            let (lo, hi) = (lo.min(hi), lo.max(hi));
            prop_assert!(a > 0.0 && a.is_finite());
            prop_assert!(a >= lo * (1.0 - 1e-12) && a <= hi * (1.0 + 1e-12));
        }

        #[test]
        fn potential_monotone(a in -50.0f64..50.0, b in -50.0f64..50.0, m in 0.3f64..3.0) {
            let d = Diffusion::new(m, 100.0);
            if a < b {
                prop_assert!(d.potential(a) < d.potential(b));
            }
        }
    }
}
