//! Box domains, uniform grids and sampled fields.
//!
//! Spatial cells are indexed row-major with the first axis slowest. Space-time
//! fields stack spatial slices by time step, slice `j` covering the time slab
//! `(j·Δt, (j+1)·Δt]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// Axis-aligned spatial box `Ω` together with the time horizon `T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDomain", into = "RawDomain")]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    horizon: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    horizon: f64,
}

impl TryFrom<RawDomain> for BoxDomain {
    type Error = Error;

    fn try_from(raw: RawDomain) -> Result<Self> {
        BoxDomain::new(raw.lower, raw.upper, raw.horizon)
    }
}

impl From<BoxDomain> for RawDomain {
    fn from(d: BoxDomain) -> Self {
        RawDomain {
            lower: d.lower,
            upper: d.upper,
            horizon: d.horizon,
        }
    }
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, horizon: f64) -> Result<Self> {
        let dim = lower.len();
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Config(format!(
                "spatial dimension must be 1, 2 or 3, got {dim}"
            )));
        }
        if upper.len() != dim {
            return Err(Error::Config(format!(
                "lower has {dim} coordinates but upper has {}",
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::Config(format!(
                    "axis {i}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Config(format!(
                "time horizon must be positive, got {horizon}"
            )));
        }
        Ok(Self {
            lower,
            upper,
            horizon,
        })
    }

    /// The cube `(a, b)^dim` with horizon `T`.
    pub fn cube(dim: usize, a: f64, b: f64, horizon: f64) -> Result<Self> {
        Self::new(vec![a; dim], vec![b; dim], horizon)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    /// Euclidean length of the diagonal.
    pub fn diam(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.extent(i).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.extent(i)).product()
    }

    /// `diam(Ω) + T^{1/p}`; `p = 2` gives the porous-medium scale `d`.
    pub fn parabolic_scale(&self, p: f64) -> f64 {
        self.diam() + self.horizon.powf(1.0 / p)
    }

    /// Closed-box membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Distance from an interior point to the boundary of the box.
    pub fn distance_to_boundary(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| (v - lo).min(hi - v))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }
}

/// Uniform resolution of `Ω_T`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub cells_per_axis: Vec<usize>,
    pub time_steps: usize,
}

impl GridSpec {
    pub fn new(cells_per_axis: Vec<usize>, time_steps: usize) -> Result<Self> {
        let spec = Self {
            cells_per_axis,
            time_steps,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `n` cells on every axis.
    pub fn uniform(dim: usize, n: usize, time_steps: usize) -> Result<Self> {
        Self::new(vec![n; dim], time_steps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells_per_axis.is_empty() || self.cells_per_axis.len() > MAX_DIM {
            return Err(Error::Config(format!(
                "grid needs 1..=3 spatial axes, got {}",
                self.cells_per_axis.len()
            )));
        }
        if self.cells_per_axis.contains(&0) || self.time_steps == 0 {
            return Err(Error::Config(
                "cell counts and time steps must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Same domain, every count multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            cells_per_axis: self.cells_per_axis.iter().map(|n| n * factor).collect(),
            time_steps: self.time_steps * factor,
        }
    }
}

/// Whether a field lives on spatial cells or on space-time cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    Space,
    SpaceTime,
}

/// A domain paired with its grid, with the derived cell geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    domain: BoxDomain,
    grid: GridSpec,
    widths: Vec<f64>,
    strides: Vec<usize>,
    n_space: usize,
    dt: f64,
}

impl Lattice {
    pub fn new(domain: BoxDomain, grid: GridSpec) -> Result<Self> {
        grid.validate()?;
        if grid.cells_per_axis.len() != domain.dim() {
            return Err(Error::Config(format!(
                "grid has {} axes but domain has dimension {}",
                grid.cells_per_axis.len(),
                domain.dim()
            )));
        }
        let widths = (0..domain.dim())
            .map(|i| domain.extent(i) / grid.cells_per_axis[i] as f64)
            .collect();
        let mut strides = vec![1; domain.dim()];
        for i in (0..domain.dim().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * grid.cells_per_axis[i + 1];
        }
        let n_space = grid.cells_per_axis.iter().product();
        let dt = domain.horizon() / grid.time_steps as f64;
        Ok(Self {
            domain,
            grid,
            widths,
            strides,
            n_space,
            dt,
        })
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    /// Largest spatial cell width.
    pub fn h(&self) -> f64 {
        self.widths.iter().copied().fold(0.0, f64::max)
    }

    pub fn h_min(&self) -> f64 {
        self.widths.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time_steps(&self) -> usize {
        self.grid.time_steps
    }

    pub fn shape(&self) -> &[usize] {
        &self.grid.cells_per_axis
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn n_space(&self) -> usize {
        self.n_space
    }

    pub fn n_cells(&self, layout: Layout) -> usize {
        match layout {
            Layout::Space => self.n_space,
            Layout::SpaceTime => self.n_space * self.grid.time_steps,
        }
    }

    pub fn cell_volume(&self) -> f64 {
        self.widths.iter().product()
    }

    /// Space-time cell measure `h^N · Δt`.
    pub fn cell_measure(&self) -> f64 {
        self.cell_volume() * self.dt
    }

    pub fn measure_of_cell(&self, layout: Layout) -> f64 {
        match layout {
            Layout::Space => self.cell_volume(),
            Layout::SpaceTime => self.cell_measure(),
        }
    }

    pub fn multi_index(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        for (axis, stride) in self.strides.iter().enumerate() {
            out[axis] = idx / stride;
            idx %= stride;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Centre coordinate along `axis` of the cell with index `i` on that axis.
    #[inline]
    pub fn axis_center(&self, axis: usize, i: usize) -> f64 {
        self.domain.lower()[axis] + (i as f64 + 0.5) * self.widths[axis]
    }

    /// Centre of spatial cell `idx`, padded with zeros beyond `dim`.
    pub fn center(&self, idx: usize) -> [f64; MAX_DIM] {
        let m = self.multi_index(idx);
        let mut c = [0.0; MAX_DIM];
        for axis in 0..self.dim() {
            c[axis] = self.axis_center(axis, m[axis]);
        }
        c
    }

    pub fn time_center(&self, step: usize) -> f64 {
        (step as f64 + 0.5) * self.dt
    }

    /// End time of slab `step`, where the backward-Euler value lives.
    pub fn time_end(&self, step: usize) -> f64 {
        (step as f64 + 1.0) * self.dt
    }

    /// Cell containing `x` (closed domain; upper faces belong to the last cell).
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        if !self.domain.contains(x) {
            return None;
        }
        let mut idx = 0;
        for axis in 0..self.dim() {
            let rel = (x[axis] - self.domain.lower()[axis]) / self.widths[axis];
            let i = (rel.floor() as usize).min(self.shape()[axis] - 1);
            idx += i * self.strides[axis];
        }
        Some(idx)
    }

    /// Time slab `(jΔt, (j+1)Δt]` containing `t`; `t = 0` maps to slab 0.
    pub fn locate_time(&self, t: f64) -> Option<usize> {
        if !(0.0..=self.domain.horizon()).contains(&t) {
            return None;
        }
        let j = (t / self.dt).ceil() as usize;
        Some(j.saturating_sub(1).min(self.grid.time_steps - 1))
    }

    /// Index ranges per axis of cells whose centres may lie within `radius` of `x`.
    pub fn cell_range(&self, x: &[f64], radius: f64) -> [(usize, usize); MAX_DIM] {
        let mut out = [(0, 1); MAX_DIM];
        for axis in 0..self.dim() {
            let n = self.shape()[axis];
            let lo = ((x[axis] - radius - self.domain.lower()[axis]) / self.widths[axis] - 0.5)
                .floor()
                .max(0.0);
            let hi = ((x[axis] + radius - self.domain.lower()[axis]) / self.widths[axis] - 0.5)
                .ceil()
                + 1.0;
            let lo = (lo as usize).min(n);
            let hi = if hi <= 0.0 { 0 } else { (hi as usize).min(n) };
            out[axis] = (lo, hi.max(lo));
        }
        out
    }

    /// Calls `f(flat_index, centre)` for every cell in the per-axis ranges.
    pub fn for_each_in_range(
        &self,
        ranges: &[(usize, usize); MAX_DIM],
        mut f: impl FnMut(usize, &[f64; MAX_DIM]),
    ) {
        let d = self.dim();
        let (r0, r1, r2) = (
            ranges[0],
            if d > 1 { ranges[1] } else { (0, 1) },
            if d > 2 { ranges[2] } else { (0, 1) },
        );
        let s = &self.strides;
        let mut c = [0.0; MAX_DIM];
        for i in r0.0..r0.1 {
            c[0] = self.axis_center(0, i);
            for j in r1.0..r1.1 {
                if d > 1 {
                    c[1] = self.axis_center(1, j);
                }
                for k in r2.0..r2.1 {
                    if d > 2 {
                        c[2] = self.axis_center(2, k);
                    }
                    let idx =
                        i * s[0] + if d > 1 { j * s[1] } else { 0 } + if d > 2 { k } else { 0 };
                    f(idx, &c);
                }
            }
        }
    }

    /// Neighbour of `idx` along `axis` in direction `+1`/`-1`, if inside the grid.
    #[inline]
    pub fn neighbor(&self, idx: usize, axis: usize, forward: bool) -> Option<usize> {
        let stride = self.strides[axis];
        let i = (idx / stride) % self.shape()[axis];
        if forward {
            (i + 1 < self.shape()[axis]).then(|| idx + stride)
        } else {
            (i > 0).then(|| idx - stride)
        }
    }
}

#[inline]
pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Scalar samples on a lattice, either per spatial cell or per space-time cell.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    lattice: Lattice,
    layout: Layout,
    values: Vec<f64>,
}

impl GridField {
    pub fn zeros(lattice: Lattice, layout: Layout) -> Self {
        let n = lattice.n_cells(layout);
        Self {
            lattice,
            layout,
            values: vec![0.0; n],
        }
    }

    pub fn from_values(lattice: Lattice, layout: Layout, values: Vec<f64>) -> Result<Self> {
        let expected = lattice.n_cells(layout);
        if values.len() != expected {
            return Err(Error::Config(format!(
                "field has {} values, lattice expects {expected}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite value at cell {bad}")));
        }
        Ok(Self {
            lattice,
            layout,
            values,
        })
    }

    /// Spatial field sampled from `f` at cell centres.
    pub fn from_fn_space(lattice: Lattice, f: impl Fn(&[f64]) -> f64) -> Self {
        let d = lattice.dim();
        let values = (0..lattice.n_space())
            .map(|i| f(&lattice.center(i)[..d]))
            .collect();
        Self {
            lattice,
            layout: Layout::Space,
            values,
        }
    }

    /// Space-time field sampled from `f(x, t)` at cell centres.
    pub fn from_fn_space_time(lattice: Lattice, f: impl Fn(&[f64], f64) -> f64) -> Self {
        let d = lattice.dim();
        let ns = lattice.n_space();
        let mut values = Vec::with_capacity(lattice.n_cells(Layout::SpaceTime));
        for j in 0..lattice.time_steps() {
            let t = lattice.time_center(j);
            values.extend((0..ns).map(|i| f(&lattice.center(i)[..d], t)));
        }
        Self {
            lattice,
            layout: Layout::SpaceTime,
            values,
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn cell_measure(&self) -> f64 {
        self.lattice.measure_of_cell(self.layout)
    }

    /// Spatial slice `step` of a space-time field (the whole field for spatial layout).
    pub fn slice(&self, step: usize) -> &[f64] {
        match self.layout {
            Layout::Space => &self.values,
            Layout::SpaceTime => {
                let n = self.lattice.n_space();
                &self.values[step * n..(step + 1) * n]
            }
        }
    }

    pub fn n_slices(&self) -> usize {
        match self.layout {
            Layout::Space => 1,
            Layout::SpaceTime => self.lattice.time_steps(),
        }
    }

    /// `∫ f` with cell-wise constant reconstruction.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_measure()
    }

    /// `∫ |f|`.
    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.cell_measure()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            lattice: self.lattice.clone(),
            layout: self.layout,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice2() -> Lattice {
        Lattice::new(
            BoxDomain::cube(2, 0.0, 1.0, 1.0).unwrap(),
            GridSpec::uniform(2, 4, 2).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn domain_rejects_degenerate_boxes() {
        assert!(BoxDomain::new(vec![0.0], vec![0.0], 1.0).is_err());
        assert!(BoxDomain::new(vec![0.0, 0.0], vec![1.0], 1.0).is_err());
        assert!(BoxDomain::new(vec![0.0], vec![1.0], 0.0).is_err());
        assert!(BoxDomain::new(vec![0.0; 4], vec![1.0; 4], 1.0).is_err());
    }

    #[test]
    fn diameter_and_scales() {
        let d = BoxDomain::cube(2, 0.0, 1.0, 1.0).unwrap();
        assert!((d.diam() - 2f64.sqrt()).abs() < 1e-15);
        assert!((d.parabolic_scale(2.0) - (1.0 + 2f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn index_round_trip() {
        let l = lattice2();
        for idx in 0..l.n_space() {
            let m = l.multi_index(idx);
            assert_eq!(l.flat_index(&m[..2]), idx);
        }
        assert_eq!(l.locate(&[0.99, 0.01]), Some(3 * 4));
        assert_eq!(l.locate(&[1.0, 1.0]), Some(15));
        assert_eq!(l.locate(&[1.1, 0.5]), None);
    }

    #[test]
    fn time_slabs_are_left_open() {
        let l = lattice2();
        assert_eq!(l.locate_time(0.0), Some(0));
        assert_eq!(l.locate_time(0.5), Some(0));
        assert_eq!(l.locate_time(0.50001), Some(1));
        assert_eq!(l.locate_time(1.0), Some(1));
        assert_eq!(l.locate_time(1.5), None);
    }

    #[test]
    fn cell_range_covers_ball() {
        let l = lattice2();
        let x = [0.5, 0.5];
        let r = l.cell_range(&x, 0.3);
        let mut hit = Vec::new();
        l.for_each_in_range(&r, |i, c| {
            if dist(&c[..2], &x) < 0.3 {
                hit.push(i)
            }
        });
        let brute: Vec<usize> = (0..16)
            .filter(|&i| dist(&l.center(i)[..2], &x) < 0.3)
            .collect();
        assert_eq!(hit, brute);
    }

    #[test]
    fn field_value_count_checked() {
        let l = lattice2();
        assert!(GridField::from_values(l.clone(), Layout::Space, vec![0.0; 15]).is_err());
        assert!(GridField::from_values(l.clone(), Layout::SpaceTime, vec![0.0; 32]).is_ok());
        assert!(GridField::from_values(l, Layout::Space, vec![f64::NAN; 16]).is_err());
    }
}
