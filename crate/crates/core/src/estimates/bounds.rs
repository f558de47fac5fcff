//! Right-hand sides of the pointwise bounds, without their multiplicative
//! constants; the verifier estimates those.

use serde::{Deserialize, Serialize};

use super::ExponentPack;
use crate::error::{Error, Result};
use crate::measure::{Ambient, RadonMeasure};
use crate::potentials::{riesz_elliptic, PotentialValue, RadialQuadrature};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PmeBranch {
    /// `m > 1`.
    Degenerate,
    /// `m ≤ 1`.
    Singular,
}

impl PmeBranch {
    pub fn of(m: f64) -> Self {
        if m > 1.0 {
            PmeBranch::Degenerate
        } else {
            PmeBranch::Singular
        }
    }
}

fn porous_exponent(pack: &ExponentPack) -> Result<f64> {
    pack.m
        .ok_or_else(|| Error::Config("exponent pack has no porous-medium exponent".into()))
}

fn need(value: Option<f64>, what: &str) -> Result<f64> {
    value.ok_or_else(|| Error::Hypothesis(format!("{what} is undefined for these parameters")))
}

/// `mass` is `|σ|(Ω) + |μ|(Ω_T)` and `potential` the parabolic potential of
/// `|σ|⊗δ₀ + |μ|` truncated at `2d`.
pub fn pointwise_bound_pme(
    pack: &ExponentPack,
    mass: f64,
    potential: f64,
    branch: PmeBranch,
) -> Result<f64> {
    let m = porous_exponent(pack)?;
    if PmeBranch::of(m) != branch {
        return Err(Error::Hypothesis(format!(
            "m = {m} does not belong to the {branch:?} branch"
        )));
    }
    let scaled = mass / pack.d.powi(pack.dim as i32);
    Ok(match branch {
        PmeBranch::Degenerate => scaled.powf(need(pack.m1, "m1")?) + mass + 1.0 + potential,
        PmeBranch::Singular => {
            scaled.powf(need(pack.m2, "m2")?)
                + 1.0
                + potential.powf(need(pack.singular_power, "singular power")?)
        }
    })
}

/// As [`pointwise_bound_pme`] with the `T^{1/p}` length and the `1 + D` floor.
pub fn pointwise_bound_plap(pack: &ExponentPack, mass: f64, potential: f64) -> Result<f64> {
    let big_d = need(pack.big_d, "D")?;
    let m3 = need(pack.m3, "m3")?;
    Ok(1.0 + big_d + (mass / big_d.powi(pack.dim as i32)).powf(m3) + potential)
}

/// Bound for source-free runs in terms of the initial mass alone.
pub fn decay_bound(t: f64, sigma_mass: f64, pack: &ExponentPack) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("decay bound needs t > 0, got {t}")));
    }
    let m = porous_exponent(pack)?;
    let n = pack.dim as f64;
    let scaled = sigma_mass / pack.d.powi(pack.dim as i32);
    let heat = sigma_mass / (n * t.powf(n / 2.0));
    Ok(match PmeBranch::of(m) {
        PmeBranch::Degenerate => scaled.powf(need(pack.m1, "m1")?) + sigma_mass + 1.0 + heat,
        PmeBranch::Singular => {
            scaled.powf(need(pack.m2, "m2")?)
                + 1.0
                + heat.powf(need(pack.singular_power, "singular power")?)
        }
    })
}

/// `(I₂^{2 diam}[ω](x))^{1/m}`, the comparison field for data `ω ⊗ F`.
pub fn good_in_time_bound(
    x: &[f64],
    omega: &RadonMeasure,
    m: f64,
    quad: &RadialQuadrature,
) -> Result<PotentialValue> {
    if omega.ambient() != Ambient::Space {
        return Err(Error::Config(
            "good-in-time bound needs a spatial measure".into(),
        ));
    }
    if !(m > 0.0) {
        return Err(Error::Domain(format!("m must be positive, got {m}")));
    }
    if omega.atoms().iter().any(|a| a.mass < 0.0)
        || omega.density().is_some_and(|f| f.min_value() < 0.0)
    {
        return Err(Error::Precondition(
            "good-in-time bound needs a nonnegative measure".into(),
        ));
    }
    if omega.is_zero() {
        return Ok(PotentialValue::Finite(0.0));
    }
    let radius = 2.0 * omega.domain().diam();
    Ok(match riesz_elliptic(omega, x, radius, quad)? {
        PotentialValue::Finite(v) => PotentialValue::Finite(v.powf(1.0 / m)),
        PotentialValue::Infinite => PotentialValue::Infinite,
    })
}
