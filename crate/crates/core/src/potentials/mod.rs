//! Truncated Riesz potentials, the dyadic p-Laplace potential and the Bessel kernel.

mod bessel;
mod dyadic;
mod riesz;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::RadonMeasure;

pub use bessel::{bessel_convolve, bessel_kernel, BesselProfile, BesselTable};
pub use dyadic::{dp_term, p_potential, DpTerm, DyadicSchedule, PPotential};
pub use riesz::{riesz_elliptic, riesz_parabolic, RadialQuadrature};

/// A potential value; at atoms the integral diverges and is flagged instead.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PotentialValue {
    Finite(f64),
    Infinite,
}

impl PotentialValue {
    pub fn is_finite(&self) -> bool {
        matches!(self, PotentialValue::Finite(_))
    }

    /// The value, with `+∞` for the flag.
    pub fn value(&self) -> f64 {
        match self {
            PotentialValue::Finite(v) => *v,
            PotentialValue::Infinite => f64::INFINITY,
        }
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            PotentialValue::Finite(v) => Some(*v),
            PotentialValue::Infinite => None,
        }
    }

    pub fn flag(&self) -> &'static str {
        match self {
            PotentialValue::Finite(_) => "finite",
            PotentialValue::Infinite => "infinite",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    /// Parabolic Riesz potential over cylinders `B_ρ × (t − ρ², t + ρ²)`.
    Parabolic,
    /// Elliptic Riesz potential over balls.
    Elliptic,
    /// Dyadic sum of `D_p` terms.
    Pp,
}

/// Batch evaluation request.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialQuery {
    /// Spatial point and time (ignored for elliptic queries).
    pub points: Vec<(Vec<f64>, f64)>,
    /// Truncation radius `R`, or the base radius `ρ` for `Pp`.
    pub radius: f64,
    /// Exponent for `Pp` queries.
    pub p: Option<f64>,
    pub quadrature_nodes: usize,
}

impl PotentialQuery {
    pub fn validate(&self, kind: PotentialKind) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Domain(format!(
                "radius must be positive, got {}",
                self.radius
            )));
        }
        if self.quadrature_nodes < 16 {
            return Err(Error::Config(
                "at least 16 quadrature nodes are required".into(),
            ));
        }
        if kind == PotentialKind::Pp {
            match self.p {
                Some(p) if p > 2.0 => {}
                other => return Err(Error::Hypothesis(format!("P_p needs p > 2, got {other:?}"))),
            }
        }
        Ok(())
    }
}

/// Evaluates every query point in parallel; output order matches the input.
pub fn evaluate(
    kind: PotentialKind,
    mu: &RadonMeasure,
    query: &PotentialQuery,
    schedule: Option<&DyadicSchedule>,
) -> Result<Vec<PotentialValue>> {
    query.validate(kind)?;
    let quad = RadialQuadrature::with_nodes(query.quadrature_nodes);
    let default_schedule;
    let schedule = match (kind, schedule) {
        (PotentialKind::Pp, Some(s)) => Some(s),
        (PotentialKind::Pp, None) => {
            default_schedule = DyadicSchedule::with_default_taus(query.radius, 0)?;
            Some(&default_schedule)
        }
        _ => None,
    };
    query
        .points
        .par_iter()
        .map(|(x, t)| match kind {
            PotentialKind::Parabolic => riesz_parabolic(mu, x, *t, query.radius, &quad),
            PotentialKind::Elliptic => riesz_elliptic(mu, x, query.radius, &quad),
            PotentialKind::Pp => {
                let s = schedule.expect("schedule set for Pp");
                p_potential(mu, x, *t, query.p.unwrap(), s).map(|r| r.value)
            }
        })
        .collect()
}
