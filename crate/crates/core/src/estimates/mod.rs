//! Lebesgue and Marcinkiewicz norms of grid fields, the exponents and
//! right-hand sides of the a priori bounds, and the verifier that compares
//! solver output against them.

mod bounds;
mod norms;
mod verify;

use serde::{Deserialize, Serialize};

use crate::geometry::BoxDomain;

pub use bounds::{
    decay_bound, good_in_time_bound, pointwise_bound_plap, pointwise_bound_pme, PmeBranch,
};
pub use norms::{
    composite_gradient, lebesgue_norm, linf_l1_norm, marcinkiewicz_norm, weak_norm_of,
};
pub use verify::{
    probe_cells, verify_estimates, Ceilings, Equation, EstimateId, EstimateReport, VerifyOptions,
};

/// A formula that could not be evaluated and why.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExponentFlag {
    pub field: String,
    pub reason: String,
}

/// Exponents and length scales of the a priori bounds.
///
/// Entries whose formula is undefined or whose hypothesis fails are `None`
/// and listed in `flags`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentPack {
    pub dim: usize,
    pub m: Option<f64>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    /// Power on the scaled mass in the degenerate (`m > 1`) bound.
    pub m1: Option<f64>,
    /// Power on the scaled mass in the singular (`m ≤ 1`) bound.
    pub m2: Option<f64>,
    /// Power on the scaled mass in the p-Laplace bound.
    pub m3: Option<f64>,
    pub lambda: Option<f64>,
    /// `diam(Ω) + T^{1/2}`.
    pub d: f64,
    /// `diam(Ω) + T^{1/p}`.
    pub big_d: Option<f64>,
    /// Weak-Lebesgue order of `u`: `m + 2/N`.
    pub r_u: Option<f64>,
    /// Weak-Lebesgue order of the composite gradient: `(mN+2)/(mN+1)`.
    pub r_g: Option<f64>,
    /// Absorption exponent separating arbitrary from restricted data: `m + 2/N`.
    pub q_crit: Option<f64>,
    /// Mass power in the weak bound on `u`: `(N+2)/(mN+2)`.
    pub mass_power_u: Option<f64>,
    /// Mass power in the weak bound on the gradient: `(m(N+1)+1)/(mN+2)`.
    pub mass_power_grad: Option<f64>,
    /// Power on the potential in the singular bound: `2/(2−N(1−m))`.
    pub singular_power: Option<f64>,
    pub flags: Vec<ExponentFlag>,
}

impl ExponentPack {
    pub fn flagged(&self, field: &str) -> bool {
        self.flags.iter().any(|f| f.field == field)
    }

    pub fn is_complete(&self) -> bool {
        self.flags.is_empty()
    }
}

/// Evaluates every formula that the supplied parameters allow.
///
/// `m` selects the porous-medium entries, `p` the p-Laplace ones; `q` is
/// checked against its hypothesis only.
pub fn exponents(
    domain: &BoxDomain,
    m: Option<f64>,
    p: Option<f64>,
    q: Option<f64>,
) -> ExponentPack {
    let dim = domain.dim();
    let n = dim as f64;
    let mut flags = Vec::new();
    let mut flag = |field: &str, reason: String| {
        flags.push(ExponentFlag {
            field: field.to_string(),
            reason,
        })
    };
    let diam = domain.diam();
    let horizon = domain.horizon();
    let d = diam + horizon.sqrt();

    let mut pack = ExponentPack {
        dim,
        m,
        p,
        q,
        m1: None,
        m2: None,
        m3: None,
        lambda: None,
        d,
        big_d: None,
        r_u: None,
        r_g: None,
        q_crit: None,
        mass_power_u: None,
        mass_power_grad: None,
        singular_power: None,
        flags: Vec::new(),
    };

    if let Some(m) = m {
        let lower = (n - 2.0) / n;
        if !(m > 0.0 && m > lower) {
            flag(
                "m",
                format!("m = {m} must exceed max(0, (N-2)/N) = {}", lower.max(0.0)),
            );
        } else {
            pack.m1 = Some((n + 2.0) * (2.0 * m * n + 1.0) / (m * (m * n + 2.0) * (1.0 + 2.0 * n)));
            pack.r_u = Some(m + 2.0 / n);
            pack.q_crit = Some(m + 2.0 / n);
            pack.r_g = Some((m * n + 2.0) / (m * n + 1.0));
            pack.mass_power_u = Some((n + 2.0) / (m * n + 2.0));
            pack.mass_power_grad = Some((m * (n + 1.0) + 1.0) / (m * n + 2.0));
        }
        let gap = 2.0 - n * (1.0 - m);
        if gap > 0.0 && m > 0.0 {
            pack.m2 = Some(
                2.0 * n * (n + 2.0) * (m + 1.0) / ((2.0 + n * m) * gap * (2.0 + n * (1.0 + m))),
            );
            pack.singular_power = Some(2.0 / gap);
        } else {
            flag("m2", format!("2 - N(1-m) = {gap} is not positive"));
        }
        if let Some(q) = q {
            if q != 0.0 && q <= m.max(1.0) {
                flag(
                    "q",
                    format!("q = {q} must exceed max(1, m) = {}", m.max(1.0)),
                );
            }
        }
    }

    if let Some(p) = p {
        if !(p > 1.0) {
            flag("p", format!("p = {p} must exceed 1"));
        } else {
            let lambda = (1.0 / (p - 1.0)).min(1.0 / n);
            pack.lambda = Some(lambda);
            pack.big_d = Some(diam + horizon.powf(1.0 / p));
            if p > 2.0 {
                pack.m3 = Some(
                    (n + p) * (lambda + 1.0) * (p - 1.0)
                        / (((p - 1.0) * n + p) * (1.0 + lambda * (p - 1.0))),
                );
            } else {
                flag("m3", format!("p = {p} must exceed 2"));
            }
            if let Some(q) = q {
                if q != 0.0 && q <= p - 1.0 {
                    flag("q", format!("q = {q} must exceed p - 1 = {}", p - 1.0));
                }
            }
        }
    }
    pack.flags = flags;
    pack
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn square() -> BoxDomain {
        BoxDomain::cube(2, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn degenerate_power() {
        let e = exponents(&square(), Some(2.0), None, None);
        assert_relative_eq!(e.m1.unwrap(), 36.0 / 60.0, epsilon = 1e-15);
        assert_relative_eq!(e.r_u.unwrap(), 3.0);
        assert_relative_eq!(e.r_g.unwrap(), 6.0 / 5.0);
        assert_relative_eq!(e.d, 2f64.sqrt() + 1.0);
        assert!(e.is_complete());
    }

    #[test]
    fn singular_power() {
        let e = exponents(&square(), Some(0.5), None, None);
        assert_relative_eq!(e.m2.unwrap(), 24.0 / 15.0, epsilon = 1e-15);
        assert_relative_eq!(e.singular_power.unwrap(), 2.0);
    }

    #[test]
    fn plap_power() {
        let e = exponents(&square(), None, Some(3.0), None);
        assert_eq!(e.lambda, Some(0.5));
        assert_relative_eq!(e.m3.unwrap(), 15.0 / 14.0, epsilon = 1e-15);
        assert_relative_eq!(e.big_d.unwrap(), 2f64.sqrt() + 1.0);
        // λ switches branch at p - 1 = N.
        let e = exponents(
            &BoxDomain::cube(3, 0.0, 1.0, 1.0).unwrap(),
            None,
            Some(2.5),
            None,
        );
        assert_eq!(e.lambda, Some(1.0 / 3.0));
    }

    #[test]
    fn hypotheses_are_flagged() {
        let d3 = BoxDomain::cube(3, 0.0, 1.0, 1.0).unwrap();
        let e = exponents(&d3, Some(0.2), None, None);
        assert!(e.flagged("m") && e.flagged("m2"));
        assert!(e.m1.is_none() && e.m2.is_none());
        let e = exponents(&square(), Some(2.0), None, Some(1.5));
        assert!(e.flagged("q"));
        assert!(e.m1.is_some());
        let e = exponents(&square(), None, Some(2.0), None);
        assert!(e.flagged("m3") && e.lambda.is_some());
        assert!(!exponents(&square(), Some(2.0), None, Some(0.0)).flagged("q"));
    }
}
