//! Shared fixtures for the benchmarks.

use dplab_core::{BoxDomain, GridField, GridSpec, Lattice, RadonMeasure};

/// `(-1, 1)^2 × (0, T)` with `n` cells per axis and `steps` time steps.
pub fn square(n: usize, steps: usize, horizon: f64) -> Lattice {
    let domain = BoxDomain::cube(2, -1.0, 1.0, horizon).expect("valid box");
    Lattice::new(domain, GridSpec::uniform(2, n, steps).expect("valid grid"))
        .expect("valid lattice")
}

/// A space-time measure with a few atoms and a smooth density on `lattice`.
pub fn mixed_measure(lattice: &Lattice) -> RadonMeasure {
    let density = GridField::from_fn_space_time(lattice.clone(), |x, t| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        (-4.0 * r2).exp() * (1.0 + t)
    });
    RadonMeasure::zero_space_time(lattice.domain().clone())
        .with_density(density)
        .and_then(|m| m.with_atom(&[0.3, -0.2], 0.3 * lattice.domain().horizon(), 0.5))
        .and_then(|m| m.with_atom(&[-0.4, 0.1], 0.7 * lattice.domain().horizon(), 0.25))
        .expect("points inside the box")
}

/// A rough space-time field for the norm kernels.
pub fn rough_field(lattice: &Lattice) -> GridField {
    GridField::from_fn_space_time(lattice.clone(), |x, t| {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt() + 0.05;
        (1.0 + t) / r - 0.3 * (7.0 * x[0]).sin()
    })
}
