//! Truncated Riesz potentials by a product-midpoint rule on log-spaced radii.
//!
//! Between consecutive nodes `a < b` the mass `M(ρ)` is frozen at the
//! geometric midpoint and `∫_a^b ρ^{-β-1} dρ` is taken exactly. Atom radii are
//! inserted as nodes, so atomic measures are integrated without error.

use crate::error::{Error, Result};
use crate::geometry::{dist, Layout};
use crate::measure::{Ambient, OverlapRule, RadonMeasure};

use super::PotentialValue;

/// Radial quadrature controls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadialQuadrature {
    pub nodes: usize,
    /// Lower cut-off; defaults to a quarter of the finest density cell.
    pub floor: Option<f64>,
}

impl Default for RadialQuadrature {
    fn default() -> Self {
        Self {
            nodes: 256,
            floor: None,
        }
    }
}

impl RadialQuadrature {
    pub fn with_nodes(nodes: usize) -> Self {
        Self { nodes, floor: None }
    }

    fn floor_for(&self, mu: &RadonMeasure, radius: f64) -> f64 {
        self.floor
            .or_else(|| mu.resolution().map(|h| 0.25 * h))
            .unwrap_or(radius * 1e-6)
            .min(radius * 0.5)
    }
}

/// Point masses sorted by the radius at which they enter the ball or cylinder.
pub(crate) struct Events {
    radii: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Events {
    pub(crate) fn new(mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut acc = 0.0;
        let (radii, cumulative) = pairs
            .into_iter()
            .map(|(r, m)| {
                acc += m;
                (r, acc)
            })
            .unzip();
        Self { radii, cumulative }
    }

    /// Total mass of events with radius strictly below `r`.
    pub(crate) fn below(&self, r: f64) -> f64 {
        let k = self.radii.partition_point(|&e| e < r);
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1]
        }
    }
}

/// `∫_a^b ρ^{-β-1} dρ`.
#[inline]
fn power_weight(a: f64, b: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        (b / a).ln()
    } else {
        (a.powf(-beta) - b.powf(-beta)) / beta
    }
}

fn integrate(
    breakpoints: &mut Vec<f64>,
    floor: f64,
    radius: f64,
    nodes: usize,
    beta: f64,
    mass: impl Fn(f64) -> f64,
) -> f64 {
    let ratio = (radius / floor).ln() / (nodes - 1) as f64;
    debug_assert!(floor > 0.0);
    breakpoints.extend((0..nodes).map(|k| floor * (ratio * k as f64).exp()));
    breakpoints.retain(|&r| r <= radius);
    breakpoints.push(radius);
    breakpoints.sort_by(f64::total_cmp);
    breakpoints.dedup();
    breakpoints
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let mid = if a > 0.0 { (a * b).sqrt() } else { 0.5 * b };
            let m = mass(mid);
            if m == 0.0 {
                0.0
            } else {
                m * power_weight(a, b, beta)
            }
        })
        .sum()
}

/// Midpoint rule on the nodes `{atom radii} ∪ {R}`, exact for atomic masses.
fn atom_integral(pairs: Vec<(f64, f64)>, radius: f64, beta: f64) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let events = Events::new(pairs);
    nodes.push(radius);
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    nodes
        .windows(2)
        .map(|w| {
            let mid = if w[0] > 0.0 {
                (w[0] * w[1]).sqrt()
            } else {
                0.5 * w[1]
            };
            events.below(mid) * power_weight(w[0], w[1], beta)
        })
        .sum()
}

fn check_radius(radius: f64) -> Result<()> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Domain(format!(
            "truncation radius must be positive, got {radius}"
        )));
    }
    Ok(())
}

/// `I₂^R[|μ|](x,t) = ∫_0^R |μ|(B_ρ(x) × (t−ρ², t+ρ²)) ρ^{-N-1} dρ`.
pub fn riesz_parabolic(
    mu: &RadonMeasure,
    x: &[f64],
    t: f64,
    radius: f64,
    quad: &RadialQuadrature,
) -> Result<PotentialValue> {
    check_radius(radius)?;
    if mu.ambient() != Ambient::SpaceTime {
        return Err(Error::Config(
            "parabolic potential needs a space-time measure".into(),
        ));
    }
    let n = mu.domain().dim();
    let beta = n as f64;
    // Atoms: M is piecewise constant with jumps at the atom radii, so those
    // radii alone are nodes and the rule is exact.
    let mut atom_pairs = Vec::new();
    let cyl = |y: &[f64], s: f64| dist(y, x).max((s - t).abs().sqrt());
    for a in mu.atoms() {
        let r = cyl(&a.position, a.time);
        if r == 0.0 {
            return Ok(PotentialValue::Infinite);
        }
        if r < radius {
            atom_pairs.push((r, a.mass.abs()));
        }
    }
    let mut pairs = Vec::new();
    let mut breaks = Vec::new();
    if let Some(f) = mu.density() {
        let l = f.lattice();
        let ns = l.n_space();
        let cm = f.cell_measure();
        let window = radius * radius;
        let steps: Vec<usize> = (0..l.time_steps())
            .filter(|&j| (l.time_center(j) - t).abs() < window)
            .collect();
        l.for_each_in_range(&l.cell_range(x, radius), |idx, c| {
            let rs = dist(&c[..n], x);
            if rs < radius {
                for &j in &steps {
                    let v = f.values()[j * ns + idx];
                    if v != 0.0 {
                        let r = rs.max((l.time_center(j) - t).abs().sqrt());
                        pairs.push((r, v.abs() * cm));
                    }
                }
            }
        });
    }
    if let Some(sigma) = mu.initial() {
        let lag = t.max(0.0).sqrt();
        for a in sigma.atoms() {
            let r = dist(&a.position, x).max(lag);
            if r == 0.0 {
                return Ok(PotentialValue::Infinite);
            }
            if r < radius {
                atom_pairs.push((r, a.mass.abs()));
            }
        }
        if let Some(f) = sigma.density() {
            let l = f.lattice();
            let cm = f.cell_measure();
            l.for_each_in_range(&l.cell_range(x, radius), |idx, c| {
                let v = f.values()[idx];
                let r = dist(&c[..n], x).max(lag);
                if v != 0.0 && r < radius {
                    pairs.push((r, v.abs() * cm));
                }
            });
        }
    }
    let horizon = mu.domain().horizon();
    for p in mu.products() {
        for a in p.omega.atoms() {
            breaks.push(dist(&a.position, x));
        }
    }
    let atomic = atom_integral(atom_pairs, radius, beta);
    if pairs.is_empty() && mu.products().is_empty() {
        return Ok(PotentialValue::Finite(atomic));
    }
    let events = Events::new(pairs);
    let products = mu.products();
    let spread = integrate(
        &mut breaks,
        quad.floor_for(mu, radius),
        radius,
        quad.nodes,
        beta,
        |rho| {
            let mut m = events.below(rho);
            for p in products {
                let time = p.profile_integral(t - rho * rho, t + rho * rho, horizon);
                if time > 0.0 {
                    m += time
                        * p.omega
                            .measure_of_ball(x, rho, OverlapRule::CellCenter)
                            .unwrap_or(0.0);
                }
            }
            m
        },
    );
    Ok(PotentialValue::Finite(atomic + spread))
}

/// `I₂^R[|ν|](x) = ∫_0^R |ν|(B_ρ(x)) ρ^{1-N} dρ/ρ` for a spatial measure.
///
/// For `N = 1` the exponent is `+1` and the potential stays finite at atoms.
pub fn riesz_elliptic(
    nu: &RadonMeasure,
    x: &[f64],
    radius: f64,
    quad: &RadialQuadrature,
) -> Result<PotentialValue> {
    check_radius(radius)?;
    if nu.ambient() != Ambient::Space {
        return Err(Error::Config(
            "elliptic potential needs a spatial measure".into(),
        ));
    }
    let n = nu.domain().dim();
    let beta = n as f64 - 2.0;
    let mut atom_pairs = Vec::new();
    for a in nu.atoms() {
        let r = dist(&a.position, x);
        if r == 0.0 && beta >= 0.0 && a.mass != 0.0 {
            return Ok(PotentialValue::Infinite);
        }
        if r < radius {
            atom_pairs.push((r, a.mass.abs()));
        }
    }
    let atomic = atom_integral(atom_pairs, radius, beta);
    let mut pairs = Vec::new();
    if let Some(f) = nu.density() {
        debug_assert_eq!(f.layout(), Layout::Space);
        let l = f.lattice();
        let cm = f.cell_measure();
        l.for_each_in_range(&l.cell_range(x, radius), |idx, c| {
            let v = f.values()[idx];
            let r = dist(&c[..n], x);
            if v != 0.0 && r < radius {
                pairs.push((r, v.abs() * cm));
            }
        });
    }
    if pairs.is_empty() {
        return Ok(PotentialValue::Finite(atomic));
    }
    let events = Events::new(pairs);
    let spread = integrate(
        &mut Vec::new(),
        quad.floor_for(nu, radius),
        radius,
        quad.nodes,
        beta,
        |rho| events.below(rho),
    );
    Ok(PotentialValue::Finite(atomic + spread))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoxDomain, GridField, GridSpec, Lattice};
    use proptest::prelude::*;

    fn unit_atom(n: usize) -> RadonMeasure {
        let d = BoxDomain::cube(n, -1.0, 1.0, 1.0).unwrap();
        RadonMeasure::zero_space_time(d)
            .with_atom(&vec![0.0; n], 0.0, 1.0)
            .unwrap()
    }

    /// Independent oracle: dense midpoint rule on the direct containment test.
    fn brute_parabolic(atoms: &[(Vec<f64>, f64, f64)], x: &[f64], t: f64, r: f64) -> f64 {
        let n = x.len() as f64;
        let steps = 400_000;
        let lo = 1e-4f64;
        let q = (r / lo).ln() / steps as f64;
        (0..steps)
            .map(|k| {
                let a = lo * (q * k as f64).exp();
                let b = lo * (q * (k + 1) as f64).exp();
                let rho = 0.5 * (a + b);
                let m: f64 = atoms
                    .iter()
                    .filter(|(y, s, _)| dist(y, x) < rho && (s - t).abs() < rho * rho)
                    .map(|(_, _, m)| m.abs())
                    .sum();
                m * rho.powf(-n - 1.0) * (b - a)
            })
            .sum()
    }

    #[test]
    fn dirac_parabolic_example() {
        let mu = unit_atom(2);
        let v = riesz_parabolic(&mu, &[0.5, 0.0], 0.25, 1.0, &RadialQuadrature::default())
            .unwrap()
            .value();
        assert!((v - 1.5).abs() < 1e-12, "{v}");
    }

    #[test]
    fn signed_atoms_match_brute_force() {
        let atoms = vec![
            (vec![0.1, -0.2], 0.3, 2.0),
            (vec![-0.4, 0.25], 0.1, -1.5),
            (vec![0.0, 0.3], 0.6, 0.7),
        ];
        let d = BoxDomain::cube(2, -1.0, 1.0, 1.0).unwrap();
        let mut mu = RadonMeasure::zero_space_time(d);
        for (y, s, m) in &atoms {
            mu = mu.with_atom(y, *s, *m).unwrap();
        }
        let x = [0.05, 0.1];
        let got = riesz_parabolic(&mu, &x, 0.4, 0.8, &RadialQuadrature::default())
            .unwrap()
            .value();
        let want = brute_parabolic(&atoms, &x, 0.4, 0.8);
        assert!((got - want).abs() / want < 1e-4, "{got} vs {want}");
    }

    #[test]
    fn unit_density_parabolic() {
        let d = BoxDomain::cube(2, -1.0, 1.0, 1.0).unwrap();
        let l = Lattice::new(d.clone(), GridSpec::uniform(2, 96, 96).unwrap()).unwrap();
        let f = GridField::from_fn_space_time(l, |_, _| 1.0);
        let mu = RadonMeasure::zero_space_time(d).with_density(f).unwrap();
        let v = riesz_parabolic(&mu, &[0.0, 0.0], 0.5, 0.5, &RadialQuadrature::default())
            .unwrap()
            .value();
        let exact = std::f64::consts::FRAC_PI_4;
        assert!((v - exact).abs() / exact < 0.02, "{v}");
    }

    #[test]
    fn elliptic_closed_forms() {
        let d3 = BoxDomain::cube(3, -1.0, 1.0, 1.0).unwrap();
        let nu = RadonMeasure::dirac(d3, &[0.0; 3], 1.0).unwrap();
        let v = riesz_elliptic(&nu, &[0.1, 0.0, 0.0], 1.0, &RadialQuadrature::default()).unwrap();
        assert!((v.value() - 9.0).abs() < 1e-9);
        let d2 = BoxDomain::cube(2, -1.0, 1.0, 1.0).unwrap();
        let nu = RadonMeasure::dirac(d2, &[0.0; 2], 1.0).unwrap();
        let v = riesz_elliptic(&nu, &[0.0, 0.3], 1.0, &RadialQuadrature::default()).unwrap();
        assert!((v.value() - (1.0f64 / 0.3).ln()).abs() < 1e-9);
        assert_eq!(
            riesz_elliptic(&nu, &[0.0, 0.0], 1.0, &RadialQuadrature::default()).unwrap(),
            PotentialValue::Infinite
        );
    }

    #[test]
    fn zero_measure_and_bad_radius() {
        let d = BoxDomain::cube(2, -1.0, 1.0, 1.0).unwrap();
        let z = RadonMeasure::zero_space_time(d.clone());
        let q = RadialQuadrature::default();
        assert_eq!(
            riesz_parabolic(&z, &[0.0, 0.0], 0.5, 1.0, &q)
                .unwrap()
                .value(),
            0.0
        );
        assert!(riesz_parabolic(&z, &[0.0, 0.0], 0.5, 0.0, &q).is_err());
        let zs = RadonMeasure::zero_space(d);
        assert_eq!(
            riesz_elliptic(&zs, &[0.0, 0.0], 1.0, &q).unwrap().value(),
            0.0
        );
        assert!(riesz_elliptic(&zs, &[0.0, 0.0], -1.0, &q).is_err());
    }

    #[test]
    fn atom_at_query_is_flagged() {
        let mu = unit_atom(2);
        let v = riesz_parabolic(&mu, &[0.0, 0.0], 0.0, 1.0, &RadialQuadrature::default()).unwrap();
        assert_eq!(v, PotentialValue::Infinite);
    }

    #[test]
    fn initial_trace_above_atom() {
        // |σ|/(N t^{N/2}) decay profile with the R-truncation.
        let d = BoxDomain::cube(2, -1.0, 1.0, 1.0).unwrap();
        let sigma = RadonMeasure::dirac(d.clone(), &[0.0, 0.0], 1.0).unwrap();
        let mu = RadonMeasure::zero_space_time(d)
            .with_initial(sigma)
            .unwrap();
        let (t, r) = (0.04, 2.0);
        let v = riesz_parabolic(&mu, &[0.0, 0.0], t, r, &RadialQuadrature::default())
            .unwrap()
            .value();
        let exact = (t.powf(-1.0) - r.powf(-2.0)) / 2.0;
        assert!((v - exact).abs() < 1e-10 * exact);
    }

    proptest! {
        #[test]
        fn additive_homogeneous_monotone(
            x in -0.5f64..0.5, y in -0.5f64..0.5, t in 0.05f64..0.9,
            c in 0.1f64..10.0, r1 in 0.1f64..1.0, dr in 0.0f64..1.0,
        ) {
            let d = BoxDomain::cube(2, -1.0, 1.0, 1.0).unwrap();
            let l = Lattice::new(d.clone(), GridSpec::uniform(2, 16, 16).unwrap()).unwrap();
            let m1 = RadonMeasure::zero_space_time(d.clone())
                .with_atom(&[0.2, 0.1], 0.3, 1.0).unwrap();
            let m2 = RadonMeasure::zero_space_time(d)
                .with_density(GridField::from_fn_space_time(l, |p, s| (p[0] + s).abs())).unwrap();
            let q = RadialQuadrature::default();
            let pt = [x, y];
            let v = |m: &RadonMeasure, r: f64| riesz_parabolic(m, &pt, t, r, &q).unwrap().value();
            let sum = m1.add(&m2).unwrap();
            let (a, b, s) = (v(&m1, r1), v(&m2, r1), v(&sum, r1));
            prop_assert!((s - a - b).abs() <= 1e-12 * s.max(1e-6));
            let scaled = v(&m2.scaled(c), r1);
            prop_assert!((scaled - c * b).abs() <= 1e-12 * scaled.max(1.0));
            prop_assert!(v(&sum, r1 + dr) >= s - 1e-12);
        }
    }
}
