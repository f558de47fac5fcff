//! Numerical core: measures on space-time boxes, porous-medium and
//! p-Laplace solvers with measure data, Riesz/Bessel potentials, capacities
//! and the norm and bound checks built on top of them.

pub mod capacity;
pub mod error;
pub mod estimates;
pub mod geometry;
pub mod gridfile;
pub mod measure;
pub mod measure_file;
pub mod nonlinearity;
pub mod potentials;
pub mod solver;
pub mod sweep;

pub use capacity::{
    bessel_capacity, capacity_scaling_exponent, parabolic_capacity, CapacityEstimate, CompactSet,
};
pub use error::{Error, Result};
pub use estimates::{exponents, verify_estimates, EstimateReport, ExponentPack};
pub use geometry::{BoxDomain, GridField, GridSpec, Lattice, Layout};
pub use measure::{Ambient, Atom, OverlapRule, RadonMeasure};
pub use nonlinearity::{regularized_diffusivity, truncate, Absorption, Diffusion};
pub use potentials::{PotentialKind, PotentialQuery, PotentialValue};
pub use solver::{
    comparison_run, mass_retention_experiment, plap_comparison_run, solve_plap, solve_pme,
    ComparisonOutcome, NewtonControls, PLapConfig, PmeConfig, RetentionPoint, SolveResult,
    StepRecord,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
