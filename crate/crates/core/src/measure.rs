//! Discrete bounded Radon measures on `Ω` or `Ω_T`.
//!
//! A measure is a finite sum of atoms, an optional cell density, product
//! parts `ω ⊗ F` and, for space-time measures, an initial trace `σ ⊗ δ_{t=0}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dist, BoxDomain, GridField, Lattice, Layout, MAX_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ambient {
    Space,
    SpaceTime,
}

/// Point mass; `time` is ignored for spatial measures.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub position: Vec<f64>,
    pub time: f64,
    pub mass: f64,
}

/// `ω ⊗ F` with `F ≥ 0` piecewise constant on `profile.len()` uniform slabs of `(0, T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductPart {
    pub omega: RadonMeasure,
    pub profile: Vec<f64>,
}

impl ProductPart {
    fn slab(&self, horizon: f64) -> f64 {
        horizon / self.profile.len() as f64
    }

    pub fn profile_l1(&self, horizon: f64) -> f64 {
        self.profile.iter().sum::<f64>() * self.slab(horizon)
    }

    /// `∫_a^b F` with `[a, b]` clipped to `[0, T]`.
    pub fn profile_integral(&self, a: f64, b: f64, horizon: f64) -> f64 {
        let (a, b) = (a.max(0.0), b.min(horizon));
        if b <= a {
            return 0.0;
        }
        let w = self.slab(horizon);
        let first = ((a / w).floor() as usize).min(self.profile.len() - 1);
        let last = ((b / w).ceil() as usize).min(self.profile.len());
        (first..last)
            .map(|j| {
                let lo = (j as f64 * w).max(a);
                let hi = ((j + 1) as f64 * w).min(b);
                self.profile[j] * (hi - lo).max(0.0)
            })
            .sum()
    }
}

/// How cell densities are intersected with balls and cylinders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OverlapRule {
    /// A cell counts fully iff its centre lies inside.
    #[default]
    CellCenter,
    /// Fraction of `k` sub-samples per axis lying inside.
    Subsampled(u32),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RadonMeasure {
    ambient: Ambient,
    domain: BoxDomain,
    atoms: Vec<Atom>,
    density: Option<GridField>,
    products: Vec<ProductPart>,
    initial: Option<Box<RadonMeasure>>,
}

impl RadonMeasure {
    pub fn zero(domain: BoxDomain, ambient: Ambient) -> Self {
        Self {
            ambient,
            domain,
            atoms: Vec::new(),
            density: None,
            products: Vec::new(),
            initial: None,
        }
    }

    pub fn zero_space(domain: BoxDomain) -> Self {
        Self::zero(domain, Ambient::Space)
    }

    pub fn zero_space_time(domain: BoxDomain) -> Self {
        Self::zero(domain, Ambient::SpaceTime)
    }

    /// Unit-or-other mass at a spatial point (spatial measures).
    pub fn dirac(domain: BoxDomain, x: &[f64], mass: f64) -> Result<Self> {
        Self::zero_space(domain).with_atom(x, 0.0, mass)
    }

    pub fn with_atom(mut self, x: &[f64], t: f64, mass: f64) -> Result<Self> {
        if x.len() != self.domain.dim() || !self.domain.contains(x) {
            return Err(Error::Domain(format!(
                "atom at {x:?} lies outside the domain"
            )));
        }
        if self.ambient == Ambient::SpaceTime && !(0.0..=self.domain.horizon()).contains(&t) {
            return Err(Error::Domain(format!("atom time {t} outside [0, T]")));
        }
        if !mass.is_finite() {
            return Err(Error::Domain("atom mass must be finite".into()));
        }
        self.atoms.push(Atom {
            position: x.to_vec(),
            time: if self.ambient == Ambient::Space {
                0.0
            } else {
                t
            },
            mass,
        });
        Ok(self)
    }

    pub fn with_density(mut self, field: GridField) -> Result<Self> {
        let want = match self.ambient {
            Ambient::Space => Layout::Space,
            Ambient::SpaceTime => Layout::SpaceTime,
        };
        if field.layout() != want {
            return Err(Error::Config(format!(
                "density layout {:?} does not match ambient {:?}",
                field.layout(),
                self.ambient
            )));
        }
        if field.lattice().domain() != &self.domain {
            return Err(Error::Config(
                "density lattice is on a different domain".into(),
            ));
        }
        self.density = Some(match self.density.take() {
            None => field,
            Some(old) => add_fields(&old, &field)?,
        });
        Ok(self)
    }

    pub fn with_product(mut self, omega: RadonMeasure, profile: Vec<f64>) -> Result<Self> {
        if self.ambient != Ambient::SpaceTime || omega.ambient != Ambient::Space {
            return Err(Error::Config(
                "product parts need a space-time measure and a spatial ω".into(),
            ));
        }
        if profile.is_empty() || profile.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::Config(
                "time profile F must be non-empty, finite and ≥ 0".into(),
            ));
        }
        self.products.push(ProductPart { omega, profile });
        Ok(self)
    }

    /// Adds the initial trace `σ ⊗ δ_{t=0}`.
    pub fn with_initial(mut self, sigma: RadonMeasure) -> Result<Self> {
        if self.ambient != Ambient::SpaceTime || sigma.ambient != Ambient::Space {
            return Err(Error::Config(
                "initial trace needs a space-time measure and a spatial σ".into(),
            ));
        }
        self.initial = Some(Box::new(match self.initial.take() {
            None => sigma,
            Some(old) => old.add(&sigma)?,
        }));
        Ok(self)
    }

    pub fn ambient(&self) -> Ambient {
        self.ambient
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn density(&self) -> Option<&GridField> {
        self.density.as_ref()
    }

    pub fn products(&self) -> &[ProductPart] {
        &self.products
    }

    pub fn initial(&self) -> Option<&RadonMeasure> {
        self.initial.as_deref()
    }

    pub fn is_zero(&self) -> bool {
        self.total_variation() == 0.0
    }

    /// Smallest grid cell width among the density parts, if any.
    pub fn resolution(&self) -> Option<f64> {
        let own = self.density.as_ref().map(|f| f.lattice().h_min());
        let nested = self
            .products
            .iter()
            .filter_map(|p| p.omega.resolution())
            .chain(self.initial.as_ref().and_then(|s| s.resolution()));
        own.into_iter().chain(nested).reduce(f64::min)
    }

    /// `|μ|(Ω)` or `|μ|(Ω_T)`.
    pub fn total_variation(&self) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|a| a.mass.abs()).sum();
        let density = self.density.as_ref().map_or(0.0, |f| f.l1_norm());
        let products: f64 = self
            .products
            .iter()
            .map(|p| p.omega.total_variation() * p.profile_l1(self.domain.horizon()))
            .sum();
        let initial = self.initial.as_ref().map_or(0.0, |s| s.total_variation());
        atoms + density + products + initial
    }

    /// Signed total mass `μ(Ω_T)`.
    pub fn total_mass(&self) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|a| a.mass).sum();
        let density = self.density.as_ref().map_or(0.0, |f| f.integral());
        let products: f64 = self
            .products
            .iter()
            .map(|p| p.omega.total_mass() * p.profile_l1(self.domain.horizon()))
            .sum();
        let initial = self.initial.as_ref().map_or(0.0, |s| s.total_mass());
        atoms + density + products + initial
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            ambient: self.ambient,
            domain: self.domain.clone(),
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    mass: c * a.mass,
                    ..a.clone()
                })
                .collect(),
            density: self.density.as_ref().map(|f| f.scaled(c)),
            products: self
                .products
                .iter()
                .map(|p| ProductPart {
                    omega: p.omega.scaled(c),
                    profile: p.profile.clone(),
                })
                .collect(),
            initial: self.initial.as_ref().map(|s| Box::new(s.scaled(c))),
        }
    }

    pub fn add(&self, other: &RadonMeasure) -> Result<Self> {
        if self.ambient != other.ambient || self.domain != other.domain {
            return Err(Error::Config(
                "cannot add measures on different spaces".into(),
            ));
        }
        let mut out = self.clone();
        out.atoms.extend(other.atoms.iter().cloned());
        if let Some(f) = &other.density {
            out = out.with_density(f.clone())?;
        }
        out.products.extend(other.products.iter().cloned());
        if let Some(s) = &other.initial {
            out = out.with_initial((**s).clone())?;
        }
        Ok(out)
    }

    /// Jordan decomposition `μ = μ⁺ − μ⁻`, split atom-wise and cell-wise.
    pub fn jordan_decompose(&self) -> (Self, Self) {
        let split = |sign: f64| -> RadonMeasure {
            Self {
                ambient: self.ambient,
                domain: self.domain.clone(),
                atoms: self
                    .atoms
                    .iter()
                    .filter(|a| a.mass * sign > 0.0)
                    .map(|a| Atom {
                        mass: a.mass.abs(),
                        ..a.clone()
                    })
                    .collect(),
                density: self
                    .density
                    .as_ref()
                    .map(|f| f.map(|v| (sign * v).max(0.0))),
                products: self
                    .products
                    .iter()
                    .map(|p| {
                        let (pos, neg) = p.omega.jordan_decompose();
                        ProductPart {
                            omega: if sign > 0.0 { pos } else { neg },
                            profile: p.profile.clone(),
                        }
                    })
                    .collect(),
                initial: self.initial.as_ref().map(|s| {
                    let (pos, neg) = s.jordan_decompose();
                    Box::new(if sign > 0.0 { pos } else { neg })
                }),
            }
        };
        (split(1.0), split(-1.0))
    }

    /// Total-variation measure `|μ| = μ⁺ + μ⁻` with the same support structure.
    pub fn abs(&self) -> Self {
        Self {
            ambient: self.ambient,
            domain: self.domain.clone(),
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    mass: a.mass.abs(),
                    ..a.clone()
                })
                .collect(),
            density: self.density.as_ref().map(|f| f.map(f64::abs)),
            products: self
                .products
                .iter()
                .map(|p| ProductPart {
                    omega: p.omega.abs(),
                    profile: p.profile.clone(),
                })
                .collect(),
            initial: self.initial.as_ref().map(|s| Box::new(s.abs())),
        }
    }

    /// `|ν|(B_ρ(x) ∩ Ω)` for a spatial measure.
    pub fn measure_of_ball(&self, x: &[f64], rho: f64, rule: OverlapRule) -> Result<f64> {
        if self.ambient != Ambient::Space {
            return Err(Error::Config(
                "measure_of_ball needs a spatial measure".into(),
            ));
        }
        check_radius(rho)?;
        let atoms: f64 = self
            .atoms
            .iter()
            .filter(|a| dist(&a.position, x) < rho)
            .map(|a| a.mass.abs())
            .sum();
        let density = match &self.density {
            None => 0.0,
            Some(f) => density_in_cylinder(f, x, rho, None, rule),
        };
        Ok(atoms + density)
    }

    /// `|μ|(Q_{ρ,τρ^p}(x,t) ∩ Ω_T)` with `Q = B_ρ(x) × (t − τρ^p, t + τρ^p)`.
    pub fn measure_of_cylinder(
        &self,
        x: &[f64],
        t: f64,
        rho: f64,
        tau: f64,
        p: f64,
        rule: OverlapRule,
    ) -> Result<f64> {
        if self.ambient != Ambient::SpaceTime {
            return Err(Error::Config(
                "measure_of_cylinder needs a space-time measure".into(),
            ));
        }
        check_radius(rho)?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Domain(format!(
                "time scaling τ must be positive, got {tau}"
            )));
        }
        let half = tau * rho.powf(p);
        Ok(self.cylinder_mass(x, t, rho, half, rule))
    }

    /// Cylinder mass with explicit time half-width; no argument checks.
    pub(crate) fn cylinder_mass(
        &self,
        x: &[f64],
        t: f64,
        rho: f64,
        half: f64,
        rule: OverlapRule,
    ) -> f64 {
        let horizon = self.domain.horizon();
        let atoms: f64 = self
            .atoms
            .iter()
            .filter(|a| (a.time - t).abs() < half && dist(&a.position, x) < rho)
            .map(|a| a.mass.abs())
            .sum();
        let density = match &self.density {
            None => 0.0,
            Some(f) => density_in_cylinder(f, x, rho, Some((t, half)), rule),
        };
        let products: f64 = self
            .products
            .iter()
            .map(|p| {
                let time = p.profile_integral(t - half, t + half, horizon);
                if time == 0.0 {
                    0.0
                } else {
                    time * p.omega.measure_of_ball(x, rho, rule).unwrap_or(0.0)
                }
            })
            .sum();
        let initial = match &self.initial {
            Some(s) if t - half < 0.0 && t + half > 0.0 => {
                s.measure_of_ball(x, rho, rule).unwrap_or(0.0)
            }
            _ => 0.0,
        };
        atoms + density + products + initial
    }

    /// Convolution with the normalized bump `∏ (15/16)(1 − (x_i/ε)²)₊² / ε`.
    ///
    /// Spatial measures give a spatial density; space-time measures are
    /// mollified in time with the same scale, the initial trace is loaded into
    /// the first slab and product parts keep their time profile.
    pub fn mollify(&self, scale: f64, lattice: &Lattice) -> Result<GridField> {
        self.check_lattice(lattice)?;
        let needs_time = self.ambient == Ambient::SpaceTime;
        check_scale(scale, lattice, needs_time)?;
        match self.ambient {
            Ambient::Space => {
                let mut out = GridField::zeros(lattice.clone(), Layout::Space);
                self.deposit_space(scale, lattice, 1.0, out.values_mut());
                Ok(out)
            }
            Ambient::SpaceTime => {
                let mut out = GridField::zeros(lattice.clone(), Layout::SpaceTime);
                let ns = lattice.n_space();
                let dt = lattice.dt();
                let time_axis = TimeAxis::new(lattice);
                let vals = out.values_mut();
                let mut spatial = vec![0.0; ns];
                for (pos, t, mass) in self.point_masses() {
                    spatial.iter_mut().for_each(|v| *v = 0.0);
                    bump_deposit(lattice, &pos, scale, mass, &mut spatial);
                    for (j, frac) in bump_weights(&time_axis, t, scale) {
                        let w = frac / dt;
                        for (v, s) in vals[j * ns..(j + 1) * ns].iter_mut().zip(&spatial) {
                            *v += w * s;
                        }
                    }
                }
                self.deposit_products(scale, lattice, vals)?;
                if let Some(sigma) = &self.initial {
                    sigma.deposit_space(scale, lattice, 1.0 / dt, &mut vals[..ns]);
                }
                Ok(out)
            }
        }
    }

    /// Spatial data on the solver grid: atoms mollified at `scale`, a density
    /// on the same lattice copied verbatim.
    pub fn discretize_initial(&self, scale: f64, lattice: &Lattice) -> Result<GridField> {
        if self.ambient != Ambient::Space {
            return Err(Error::Config(
                "initial data must be a spatial measure".into(),
            ));
        }
        self.check_lattice(lattice)?;
        let mut out = GridField::zeros(lattice.clone(), Layout::Space);
        if !self.atoms.is_empty() || self.density_needs_smoothing(lattice) {
            check_scale(scale, lattice, false)?;
        }
        self.deposit_space_or_copy(scale, lattice, 1.0, out.values_mut());
        Ok(out)
    }

    /// Source term on the solver grid: spatial mollification of atoms, and the
    /// mass of each time slab `(t_j, t_{j+1}]` spread over that slab (divided by `Δt`).
    pub fn discretize_source(&self, scale: f64, lattice: &Lattice) -> Result<GridField> {
        if self.ambient != Ambient::SpaceTime {
            return Err(Error::Config("source must be a space-time measure".into()));
        }
        self.check_lattice(lattice)?;
        let ns = lattice.n_space();
        let dt = lattice.dt();
        let mut out = GridField::zeros(lattice.clone(), Layout::SpaceTime);
        let needs_scale = !self.atoms.is_empty()
            || self
                .products
                .iter()
                .any(|p| !p.omega.atoms.is_empty() || p.omega.density_needs_smoothing(lattice))
            || self
                .density
                .as_ref()
                .is_some_and(|f| f.lattice() != lattice);
        if needs_scale {
            check_scale(scale, lattice, false)?;
        }
        let vals = out.values_mut();
        for a in &self.atoms {
            let j = lattice.locate_time(a.time).expect("atom time validated");
            bump_deposit(
                lattice,
                &a.position,
                scale,
                a.mass / dt,
                &mut vals[j * ns..(j + 1) * ns],
            );
        }
        if let Some(f) = &self.density {
            if f.lattice() == lattice {
                for (v, d) in vals.iter_mut().zip(f.values()) {
                    *v += d;
                }
            } else {
                let fl = f.lattice();
                let m = fl.cell_measure();
                for (idx, &d) in f.values().iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let (js, s) = (idx / fl.n_space(), idx % fl.n_space());
                    let c = fl.center(s);
                    let j = lattice.locate_time(fl.time_center(js)).unwrap();
                    bump_deposit(
                        lattice,
                        &c[..fl.dim()],
                        scale,
                        d * m / dt,
                        &mut vals[j * ns..(j + 1) * ns],
                    );
                }
            }
        }
        let horizon = self.domain.horizon();
        for p in &self.products {
            let mut spatial = vec![0.0; ns];
            p.omega
                .deposit_space_or_copy(scale, lattice, 1.0, &mut spatial);
            for j in 0..lattice.time_steps() {
                let w = p.profile_integral(j as f64 * dt, (j + 1) as f64 * dt, horizon) / dt;
                if w != 0.0 {
                    for (v, s) in vals[j * ns..(j + 1) * ns].iter_mut().zip(&spatial) {
                        *v += w * s;
                    }
                }
            }
        }
        Ok(out)
    }

    fn check_lattice(&self, lattice: &Lattice) -> Result<()> {
        if lattice.domain() != &self.domain {
            return Err(Error::Config(
                "lattice domain differs from measure domain".into(),
            ));
        }
        Ok(())
    }

    fn density_needs_smoothing(&self, lattice: &Lattice) -> bool {
        self.density
            .as_ref()
            .is_some_and(|f| f.lattice() != lattice)
    }

    /// Atoms and density cells (as centre atoms) as `(position, time, mass)`.
    fn point_masses(&self) -> Vec<(Vec<f64>, f64, f64)> {
        let mut out: Vec<_> = self
            .atoms
            .iter()
            .map(|a| (a.position.clone(), a.time, a.mass))
            .collect();
        if let Some(f) = &self.density {
            let l = f.lattice();
            let m = f.cell_measure();
            let ns = l.n_space();
            for (idx, &d) in f.values().iter().enumerate() {
                if d != 0.0 {
                    let c = l.center(idx % ns);
                    let t = match f.layout() {
                        Layout::Space => 0.0,
                        Layout::SpaceTime => l.time_center(idx / ns),
                    };
                    out.push((c[..l.dim()].to_vec(), t, d * m));
                }
            }
        }
        out
    }

    fn deposit_space(&self, scale: f64, lattice: &Lattice, factor: f64, out: &mut [f64]) {
        for (pos, _, mass) in self.point_masses() {
            bump_deposit(lattice, &pos, scale, factor * mass, out);
        }
    }

    fn deposit_space_or_copy(&self, scale: f64, lattice: &Lattice, factor: f64, out: &mut [f64]) {
        for a in &self.atoms {
            bump_deposit(lattice, &a.position, scale, factor * a.mass, out);
        }
        if let Some(f) = &self.density {
            if f.lattice() == lattice {
                for (v, d) in out.iter_mut().zip(f.values()) {
                    *v += factor * d;
                }
            } else {
                let l = f.lattice();
                let m = f.cell_measure();
                for (idx, &d) in f.values().iter().enumerate() {
                    if d != 0.0 {
                        let c = l.center(idx);
                        bump_deposit(lattice, &c[..l.dim()], scale, factor * d * m, out);
                    }
                }
            }
        }
    }

    fn deposit_products(&self, scale: f64, lattice: &Lattice, vals: &mut [f64]) -> Result<()> {
        let ns = lattice.n_space();
        let dt = lattice.dt();
        for p in &self.products {
            let mut spatial = vec![0.0; ns];
            p.omega.deposit_space(scale, lattice, 1.0, &mut spatial);
            for j in 0..lattice.time_steps() {
                let w =
                    p.profile_integral(j as f64 * dt, (j + 1) as f64 * dt, self.domain.horizon())
                        / dt;
                for (v, s) in vals[j * ns..(j + 1) * ns].iter_mut().zip(&spatial) {
                    *v += w * s;
                }
            }
        }
        Ok(())
    }
}

fn check_radius(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::Domain(format!("radius must be positive, got {rho}")));
    }
    Ok(())
}

fn check_scale(scale: f64, lattice: &Lattice, with_time: bool) -> Result<()> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Domain(format!(
            "mollification scale must be positive, got {scale}"
        )));
    }
    let mut width = lattice.h();
    if with_time {
        width = width.max(lattice.dt());
    }
    if scale < width * (1.0 - 1e-12) {
        return Err(Error::Resolution(format!(
            "mollification scale {scale} below cell width {width}"
        )));
    }
    Ok(())
}

fn add_fields(a: &GridField, b: &GridField) -> Result<GridField> {
    if a.lattice() != b.lattice() || a.layout() != b.layout() {
        return Err(Error::Config(
            "cannot add densities on different lattices".into(),
        ));
    }
    let vals = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| x + y)
        .collect();
    GridField::from_values(a.lattice().clone(), a.layout(), vals)
}

/// `∫_{-1}^{s} (15/16)(1 − r²)² dr` for `s ∈ [-1, 1]`.
#[inline]
fn bump_cdf(s: f64) -> f64 {
    let s = s.clamp(-1.0, 1.0);
    0.5 + (15.0 / 16.0) * (s - 2.0 * s.powi(3) / 3.0 + s.powi(5) / 5.0)
}

/// One axis of cells: origin, width, count.
struct TimeAxis {
    origin: f64,
    width: f64,
    n: usize,
}

impl TimeAxis {
    fn new(lattice: &Lattice) -> Self {
        Self {
            origin: 0.0,
            width: lattice.dt(),
            n: lattice.time_steps(),
        }
    }

    fn spatial(lattice: &Lattice, axis: usize) -> Self {
        Self {
            origin: lattice.domain().lower()[axis],
            width: lattice.widths()[axis],
            n: lattice.shape()[axis],
        }
    }
}

/// Fraction of the 1-D bump centred at `c` falling in each cell of `axis`.
fn bump_weights(axis: &TimeAxis, c: f64, scale: f64) -> Vec<(usize, f64)> {
    let lo = ((c - scale - axis.origin) / axis.width).floor().max(0.0) as usize;
    let hi = (((c + scale - axis.origin) / axis.width).ceil().max(0.0) as usize).min(axis.n);
    (lo.min(axis.n)..hi)
        .filter_map(|i| {
            let a = axis.origin + i as f64 * axis.width;
            let b = a + axis.width;
            let w = bump_cdf((b - c) / scale) - bump_cdf((a - c) / scale);
            (w > 0.0).then_some((i, w))
        })
        .collect()
}

/// Adds the cell averages of `mass · bump(· − x)` to a spatial slice.
fn bump_deposit(lattice: &Lattice, x: &[f64], scale: f64, mass: f64, out: &mut [f64]) {
    if mass == 0.0 {
        return;
    }
    let d = lattice.dim();
    let per_axis: Vec<Vec<(usize, f64)>> = (0..d)
        .map(|a| bump_weights(&TimeAxis::spatial(lattice, a), x[a], scale))
        .collect();
    let inv_vol = 1.0 / lattice.cell_volume();
    let s = lattice.strides();
    let unit = [(0usize, 1.0f64)];
    let ax1: &[(usize, f64)] = if d > 1 { &per_axis[1] } else { &unit };
    let ax2: &[(usize, f64)] = if d > 2 { &per_axis[2] } else { &unit };
    for &(i, wi) in &per_axis[0] {
        for &(j, wj) in ax1 {
            for &(k, wk) in ax2 {
                let idx = i * s[0] + if d > 1 { j * s[1] } else { 0 } + if d > 2 { k } else { 0 };
                out[idx] += mass * wi * wj * wk * inv_vol;
            }
        }
    }
}

/// `Σ |f| · (cell measure) · (fraction inside)` over the ball (and time window).
fn density_in_cylinder(
    f: &GridField,
    x: &[f64],
    rho: f64,
    window: Option<(f64, f64)>,
    rule: OverlapRule,
) -> f64 {
    let l = f.lattice();
    let d = l.dim();
    let ns = l.n_space();
    let ranges = l.cell_range(x, rho + l.h());
    let steps: Vec<(usize, f64)> = match (f.layout(), window) {
        (Layout::Space, _) | (_, None) => vec![(0, 1.0)],
        (Layout::SpaceTime, Some((t, half))) => (0..l.time_steps())
            .filter_map(|j| {
                let frac = time_fraction(l, j, t, half, rule);
                (frac > 0.0).then_some((j, frac))
            })
            .collect(),
    };
    if steps.is_empty() {
        return 0.0;
    }
    let m = f.cell_measure();
    let mut total = 0.0;
    l.for_each_in_range(&ranges, |idx, c| {
        let frac = space_fraction(l, c, x, rho, rule);
        if frac > 0.0 {
            let mut acc = 0.0;
            for &(j, tf) in &steps {
                acc += f.values()[j * ns + idx].abs() * tf;
            }
            total += acc * frac;
        }
    });
    let _ = d;
    total * m
}

fn time_fraction(l: &Lattice, j: usize, t: f64, half: f64, rule: OverlapRule) -> f64 {
    match rule {
        OverlapRule::CellCenter => {
            if (l.time_center(j) - t).abs() < half {
                1.0
            } else {
                0.0
            }
        }
        OverlapRule::Subsampled(k) => {
            let k = k.max(1);
            let a = j as f64 * l.dt();
            let hits = (0..k)
                .filter(|&s| {
                    let ts = a + (s as f64 + 0.5) * l.dt() / k as f64;
                    (ts - t).abs() < half
                })
                .count();
            hits as f64 / k as f64
        }
    }
}

fn space_fraction(l: &Lattice, c: &[f64; MAX_DIM], x: &[f64], rho: f64, rule: OverlapRule) -> f64 {
    let d = l.dim();
    match rule {
        OverlapRule::CellCenter => {
            if dist(&c[..d], x) < rho {
                1.0
            } else {
                0.0
            }
        }
        OverlapRule::Subsampled(k) => {
            let k = k.max(1) as usize;
            let w = l.widths();
            // Whole cell inside / outside shortcuts.
            let half_diag = w.iter().map(|v| v * v).sum::<f64>().sqrt() * 0.5;
            let dc = dist(&c[..d], x);
            if dc + half_diag < rho {
                return 1.0;
            }
            if dc - half_diag >= rho {
                return 0.0;
            }
            let total = k.pow(d as u32);
            let mut hits = 0usize;
            let mut p = [0.0; MAX_DIM];
            for n in 0..total {
                let mut r = n;
                for a in 0..d {
                    let i = r % k;
                    r /= k;
                    p[a] = c[a] - 0.5 * w[a] + (i as f64 + 0.5) * w[a] / k as f64;
                }
                if dist(&p[..d], x) < rho {
                    hits += 1;
                }
            }
            hits as f64 / total as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridSpec;
    use proptest::prelude::*;

    fn square() -> BoxDomain {
        BoxDomain::cube(2, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn ball_mass_of_atoms() {
        let d = BoxDomain::cube(2, -1.0, 1.0, 1.0).unwrap();
        let nu = RadonMeasure::dirac(d, &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(
            nu.measure_of_ball(&[0.0, 0.0], 0.1, OverlapRule::CellCenter)
                .unwrap(),
            1.0
        );
        assert_eq!(
            nu.measure_of_ball(&[1.0, 0.0], 0.5, OverlapRule::CellCenter)
                .unwrap(),
            0.0
        );
        assert!(nu
            .measure_of_ball(&[0.0, 0.0], 0.0, OverlapRule::CellCenter)
            .is_err());
        assert!(nu
            .measure_of_ball(&[0.0, 0.0], -1.0, OverlapRule::CellCenter)
            .is_err());
    }

    #[test]
    fn ball_mass_of_unit_density_matches_disc_area() {
        let exact = std::f64::consts::PI * 0.25 * 0.25;
        for (n, rule, tol) in [
            (64, OverlapRule::CellCenter, 0.03),
            (64, OverlapRule::Subsampled(8), 0.003),
            (256, OverlapRule::CellCenter, 0.005),
        ] {
            let l = Lattice::new(square(), GridSpec::uniform(2, n, 1).unwrap()).unwrap();
            let f = GridField::from_fn_space(l, |_| 1.0);
            let nu = RadonMeasure::zero_space(square()).with_density(f).unwrap();
            let got = nu.measure_of_ball(&[0.5, 0.5], 0.25, rule).unwrap();
            assert!(
                (got - exact).abs() / exact < tol,
                "n={n} {rule:?}: {got} vs {exact}"
            );
        }
    }

    #[test]
    fn cylinder_mass_of_origin_atom() {
        let d = BoxDomain::cube(2, -1.0, 1.0, 1.0).unwrap();
        let mu = RadonMeasure::zero_space_time(d)
            .with_atom(&[0.0, 0.0], 0.0, 1.0)
            .unwrap();
        let q = |rho| {
            mu.measure_of_cylinder(&[0.0, 0.0], 0.25, rho, 1.0, 2.0, OverlapRule::CellCenter)
                .unwrap()
        };
        assert_eq!(q(0.6), 1.0);
        assert_eq!(q(0.4), 0.0);
        let zero = RadonMeasure::zero_space_time(BoxDomain::cube(2, -1.0, 1.0, 1.0).unwrap());
        assert_eq!(
            zero.measure_of_cylinder(&[0.2, 0.1], 0.5, 0.3, 2.0, 3.0, OverlapRule::CellCenter)
                .unwrap(),
            0.0
        );
        assert!(mu
            .measure_of_cylinder(&[0.0, 0.0], 0.25, 0.5, 0.0, 2.0, OverlapRule::CellCenter)
            .is_err());
    }

    #[test]
    fn initial_trace_counts_only_when_window_reaches_zero() {
        let d = BoxDomain::cube(1, 0.0, 1.0, 1.0).unwrap();
        let sigma = RadonMeasure::dirac(d.clone(), &[0.5], 2.0).unwrap();
        let mu = RadonMeasure::zero_space_time(d)
            .with_initial(sigma)
            .unwrap();
        let r = OverlapRule::CellCenter;
        assert_eq!(
            mu.measure_of_cylinder(&[0.5], 0.09, 0.31, 1.0, 2.0, r)
                .unwrap(),
            2.0
        );
        assert_eq!(
            mu.measure_of_cylinder(&[0.5], 0.09, 0.29, 1.0, 2.0, r)
                .unwrap(),
            0.0
        );
        assert_eq!(mu.total_variation(), 2.0);
    }

    #[test]
    fn jordan_of_signed_atoms() {
        let mu = RadonMeasure::zero_space(square())
            .with_atom(&[0.2, 0.2], 0.0, 2.0)
            .unwrap()
            .with_atom(&[0.7, 0.7], 0.0, -3.0)
            .unwrap();
        let (p, n) = mu.jordan_decompose();
        assert_eq!(p.atoms().len(), 1);
        assert_eq!(p.atoms()[0].mass, 2.0);
        assert_eq!(p.atoms()[0].position, vec![0.2, 0.2]);
        assert_eq!(n.atoms()[0].mass, 3.0);
        assert_eq!(n.atoms()[0].position, vec![0.7, 0.7]);
        let z = RadonMeasure::zero_space(square());
        let (zp, zn) = z.jordan_decompose();
        assert!(zp.is_zero() && zn.is_zero());
    }

    #[test]
    fn jordan_of_density_is_pointwise() {
        let l = Lattice::new(square(), GridSpec::uniform(2, 8, 1).unwrap()).unwrap();
        let f = GridField::from_fn_space(l, |x| x[0] - 0.5);
        let mu = RadonMeasure::zero_space(square())
            .with_density(f.clone())
            .unwrap();
        let (p, n) = mu.jordan_decompose();
        for ((v, a), b) in f
            .values()
            .iter()
            .zip(p.density().unwrap().values())
            .zip(n.density().unwrap().values())
        {
            assert_eq!(*a, v.max(0.0));
            assert_eq!(*b, (-v).max(0.0));
        }
    }

    #[test]
    fn mollified_atom_keeps_unit_mass() {
        let l = Lattice::new(square(), GridSpec::uniform(2, 40, 4).unwrap()).unwrap();
        let nu = RadonMeasure::dirac(square(), &[0.43, 0.51], 1.0).unwrap();
        let f = nu.mollify(0.1, &l).unwrap();
        assert!((f.integral() - 1.0).abs() < 1e-12);
        assert!(f.min_value() >= 0.0);
        assert!(nu.mollify(0.01, &l).is_err());
        let zero = RadonMeasure::zero_space(square()).mollify(0.1, &l).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
    }

    #[test]
    fn mollified_atoms_have_disjoint_supports() {
        let l = Lattice::new(square(), GridSpec::uniform(2, 50, 1).unwrap()).unwrap();
        let a = RadonMeasure::dirac(square(), &[0.25, 0.5], 1.0).unwrap();
        let b = RadonMeasure::dirac(square(), &[0.75, 0.5], 1.0).unwrap();
        let fa = a.mollify(0.1, &l).unwrap();
        let fb = b.mollify(0.1, &l).unwrap();
        let both = a.add(&b).unwrap().mollify(0.1, &l).unwrap();
        let overlap = fa
            .values()
            .iter()
            .zip(fb.values())
            .filter(|(x, y)| **x > 0.0 && **y > 0.0)
            .count();
        assert_eq!(overlap, 0);
        let left: f64 = (0..l.n_space())
            .filter(|&i| l.center(i)[0] < 0.5)
            .map(|i| both.values()[i])
            .sum::<f64>()
            * l.cell_volume();
        assert!((left - 1.0).abs() < 1e-12);
        assert!((both.integral() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn space_time_mollification_preserves_mass() {
        let d = BoxDomain::cube(1, 0.0, 1.0, 1.0).unwrap();
        let l = Lattice::new(d.clone(), GridSpec::uniform(1, 50, 50).unwrap()).unwrap();
        let sigma = RadonMeasure::dirac(d.clone(), &[0.3], 0.5).unwrap();
        let mu = RadonMeasure::zero_space_time(d.clone())
            .with_atom(&[0.6], 0.5, 1.0)
            .unwrap()
            .with_initial(sigma)
            .unwrap()
            .with_product(RadonMeasure::dirac(d, &[0.5], 2.0).unwrap(), vec![1.0, 0.0])
            .unwrap();
        let f = mu.mollify(0.1, &l).unwrap();
        assert!((f.integral() - mu.total_mass()).abs() < 1e-12);
        assert!((mu.total_variation() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn source_discretization_uses_time_slabs() {
        let d = BoxDomain::cube(1, 0.0, 1.0, 1.0).unwrap();
        let l = Lattice::new(d.clone(), GridSpec::uniform(1, 20, 10).unwrap()).unwrap();
        let mu = RadonMeasure::zero_space_time(d)
            .with_atom(&[0.5], 0.35, 1.0)
            .unwrap();
        let f = mu.discretize_source(0.1, &l).unwrap();
        let per_slab: Vec<f64> = (0..10)
            .map(|j| f.slice(j).iter().sum::<f64>() * l.cell_volume() * l.dt())
            .collect();
        assert!((per_slab[3] - 1.0).abs() < 1e-12);
        assert!(per_slab
            .iter()
            .enumerate()
            .all(|(j, v)| j == 3 || *v == 0.0));
    }

    proptest! {
        #[test]
        fn total_variation_additive_under_jordan(
            masses in prop::collection::vec(-5.0f64..5.0, 1..6),
            dens in prop::collection::vec(-2.0f64..2.0, 16),
        ) {
            let l = Lattice::new(square(), GridSpec::uniform(2, 4, 1).unwrap()).unwrap();
            let mut mu = RadonMeasure::zero_space(square())
                .with_density(GridField::from_values(l, Layout::Space, dens).unwrap()).unwrap();
            for (i, m) in masses.iter().enumerate() {
                mu = mu.with_atom(&[0.1 + 0.15 * i as f64, 0.5], 0.0, *m).unwrap();
            }
            let (p, n) = mu.jordan_decompose();
            let direct = mu.total_variation();
            let split = p.total_variation() + n.total_variation();
            prop_assert!((direct - split).abs() <= 1e-12 * direct.max(1.0));
            prop_assert!((mu.total_mass() - (p.total_mass() - n.total_mass())).abs() < 1e-12);
        }

        #[test]
        fn ball_mass_monotone_in_radius(r1 in 0.01f64..1.0, dr in 0.0f64..0.5, x in 0.0f64..1.0) {
            let l = Lattice::new(square(), GridSpec::uniform(2, 10, 1).unwrap()).unwrap();
            let f = GridField::from_fn_space(l, |p| (p[0] * 7.0).sin());
            let nu = RadonMeasure::zero_space(square()).with_density(f).unwrap()
                .with_atom(&[0.3, 0.3], 0.0, -1.0).unwrap();
            for rule in [OverlapRule::CellCenter, OverlapRule::Subsampled(3)] {
                let a = nu.measure_of_ball(&[x, 0.5], r1, rule).unwrap();
                let b = nu.measure_of_ball(&[x, 0.5], r1 + dr, rule).unwrap();
                prop_assert!(a <= b + 1e-12);
            }
        }

        #[test]
        fn cylinder_mass_monotone(r in 0.05f64..0.8, dr in 0.0f64..0.3, tau in 0.1f64..3.0, dtau in 0.0f64..2.0, t in 0.0f64..1.0) {
            let d = BoxDomain::cube(1, 0.0, 1.0, 1.0).unwrap();
            let l = Lattice::new(d.clone(), GridSpec::uniform(1, 12, 12).unwrap()).unwrap();
            let f = GridField::from_fn_space_time(l, |x, s| x[0] + s);
            let mu = RadonMeasure::zero_space_time(d).with_density(f).unwrap();
            let base = mu.measure_of_cylinder(&[0.5], t, r, tau, 2.5, OverlapRule::CellCenter).unwrap();
            let wider = mu.measure_of_cylinder(&[0.5], t, r + dr, tau, 2.5, OverlapRule::CellCenter).unwrap();
            let longer = mu.measure_of_cylinder(&[0.5], t, r, tau + dtau, 2.5, OverlapRule::CellCenter).unwrap();
            prop_assert!(base <= wider + 1e-12 && base <= longer + 1e-12);
        }

        #[test]
        fn mollify_preserves_sign(xs in prop::collection::vec(0.2f64..0.8, 2), m in 0.0f64..4.0, scale in 0.1f64..0.2) {
            let l = Lattice::new(square(), GridSpec::uniform(2, 16, 1).unwrap()).unwrap();
            let nu = RadonMeasure::dirac(square(), &xs, m).unwrap();
            let f = nu.mollify(scale, &l).unwrap();
            prop_assert!(f.min_value() >= 0.0);
        }
    }
}
