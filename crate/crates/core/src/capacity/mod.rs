//! Grid estimators for the Bessel capacity and the anisotropic parabolic
//! capacity, plus the small-ball scaling fit.

mod bessel;
mod nnqp;
mod parabolic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoxDomain, GridSpec, Lattice, Layout};

pub use bessel::{bessel_capacity, bessel_capacity_free_space, bessel_capacity_window};
pub use parabolic::{parabolic_capacity, parabolic_capacity_with, ParabolicOptions};

/// Inclusive cell-index box; for space-time sets the time step is the first axis.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellBox {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
}

impl CellBox {
    pub fn extent(&self, axis: usize) -> usize {
        self.hi[axis] - self.lo[axis] + 1
    }

    pub fn contains(&self, idx: &[usize]) -> bool {
        idx.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(i, (lo, hi))| lo <= i && i <= hi)
    }

    pub fn hull(&self, other: &CellBox) -> CellBox {
        CellBox {
            lo: self
                .lo
                .iter()
                .zip(&other.lo)
                .map(|(a, b)| *a.min(b))
                .collect(),
            hi: self
                .hi
                .iter()
                .zip(&other.hi)
                .map(|(a, b)| *a.max(b))
                .collect(),
        }
    }
}

/// A finite set of grid cells, spatial or space-time, with the bounding box
/// that fixes its computational window.
///
/// Sets built with a shared bounding box are estimated on the same window,
/// which makes inclusion and union comparisons exact at the discrete level.
#[derive(Clone, Debug)]
pub struct CompactSet {
    lattice: Lattice,
    layout: Layout,
    cells: Vec<usize>,
    bounds: Option<CellBox>,
}

impl CompactSet {
    pub fn new(lattice: Lattice, layout: Layout, mut cells: Vec<usize>) -> Result<Self> {
        let total = lattice.n_cells(layout);
        if let Some(c) = cells.iter().find(|&&c| c >= total) {
            return Err(Error::Domain(format!(
                "cell {c} outside the grid of {total} cells"
            )));
        }
        cells.sort_unstable();
        cells.dedup();
        let mut set = Self {
            lattice,
            layout,
            cells,
            bounds: None,
        };
        set.bounds = set.cell_hull();
        Ok(set)
    }

    pub fn empty(lattice: Lattice, layout: Layout) -> Self {
        Self {
            lattice,
            layout,
            cells: Vec::new(),
            bounds: None,
        }
    }

    /// Spatial cells whose centres lie in the closed ball.
    pub fn ball(lattice: Lattice, center: &[f64], radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Domain(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        let cells: Vec<usize> = (0..lattice.n_space())
            .filter(|&i| {
                let c = lattice.center(i);
                crate::geometry::dist(&c[..lattice.dim()], center) <= radius
            })
            .collect();
        if cells.is_empty() {
            return Err(Error::Resolution(format!(
                "ball of radius {radius} contains no cell centre (cell width {})",
                lattice.h()
            )));
        }
        Self::new(lattice, Layout::Space, cells)
    }

    /// Cells selected by a predicate on the cell's multi-index
    /// (time step first for space-time sets).
    pub fn from_predicate(
        lattice: Lattice,
        layout: Layout,
        pred: impl Fn(&[usize]) -> bool,
    ) -> Result<Self> {
        let cells = (0..lattice.n_cells(layout))
            .filter(|&c| pred(&multi_index(&lattice, layout, c)))
            .collect();
        Self::new(lattice, layout, cells)
    }

    /// The spatial set placed in time slab `step`.
    pub fn at_step(&self, step: usize) -> Result<Self> {
        if self.layout != Layout::Space {
            return Err(Error::Config(
                "only spatial sets can be placed in a time slab".into(),
            ));
        }
        if step >= self.lattice.time_steps() {
            return Err(Error::Domain(format!("time slab {step} outside the grid")));
        }
        let ns = self.lattice.n_space();
        let cells = self.cells.iter().map(|c| step * ns + c).collect();
        let mut out = Self::new(self.lattice.clone(), Layout::SpaceTime, cells)?;
        if let Some(b) = &self.bounds {
            let mut lo = vec![step];
            let mut hi = vec![step];
            lo.extend_from_slice(&b.lo);
            hi.extend_from_slice(&b.hi);
            out.bounds = Some(CellBox { lo, hi });
        }
        Ok(out)
    }

    /// Replaces the bounding box; it must contain every cell.
    pub fn with_bounds(mut self, bounds: CellBox) -> Result<Self> {
        if bounds.lo.len() != self.axes() || bounds.hi.len() != self.axes() {
            return Err(Error::Config(
                "bounding box has the wrong number of axes".into(),
            ));
        }
        let shape = axis_shape(&self.lattice, self.layout);
        if bounds.hi.iter().zip(&shape).any(|(h, n)| h >= n)
            || bounds.lo.iter().zip(&bounds.hi).any(|(l, h)| l > h)
        {
            return Err(Error::Domain("bounding box outside the grid".into()));
        }
        if self.cells.iter().any(|&c| !bounds.contains(&self.multi(c))) {
            return Err(Error::Config(
                "bounding box does not contain the set".into(),
            ));
        }
        self.bounds = Some(bounds);
        Ok(self)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Number of index axes (space dimension, plus one for time).
    pub fn axes(&self) -> usize {
        self.lattice.dim() + usize::from(self.layout == Layout::SpaceTime)
    }

    pub fn bounds(&self) -> Option<&CellBox> {
        self.bounds.as_ref()
    }

    pub fn multi(&self, cell: usize) -> Vec<usize> {
        multi_index(&self.lattice, self.layout, cell)
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.cells.binary_search(&cell).is_ok()
    }

    pub fn is_subset(&self, other: &CompactSet) -> bool {
        self.cells.iter().all(|&c| other.contains(c))
    }

    /// Union; the bounding box is the hull of both boxes.
    pub fn union(&self, other: &CompactSet) -> Result<Self> {
        self.check_same_grid(other)?;
        let mut cells = self.cells.clone();
        cells.extend_from_slice(&other.cells);
        let mut out = Self::new(self.lattice.clone(), self.layout, cells)?;
        out.bounds = match (&self.bounds, &other.bounds) {
            (Some(a), Some(b)) => Some(a.hull(b)),
            (Some(a), None) | (None, Some(a)) => Some(a.clone()),
            (None, None) => None,
        };
        Ok(out)
    }

    /// Subset of this set's cells, keeping its bounding box.
    pub fn restrict(&self, keep: impl Fn(&[usize]) -> bool) -> Self {
        let cells = self
            .cells
            .iter()
            .copied()
            .filter(|&c| keep(&self.multi(c)))
            .collect();
        Self {
            lattice: self.lattice.clone(),
            layout: self.layout,
            cells,
            bounds: self.bounds.clone(),
        }
    }

    fn check_same_grid(&self, other: &CompactSet) -> Result<()> {
        if self.lattice != other.lattice || self.layout != other.layout {
            return Err(Error::Config("sets live on different grids".into()));
        }
        Ok(())
    }

    fn cell_hull(&self) -> Option<CellBox> {
        let first = self.multi(*self.cells.first()?);
        let mut b = CellBox {
            lo: first.clone(),
            hi: first,
        };
        for &c in &self.cells[1..] {
            let m = self.multi(c);
            for a in 0..m.len() {
                b.lo[a] = b.lo[a].min(m[a]);
                b.hi[a] = b.hi[a].max(m[a]);
            }
        }
        Some(b)
    }
}

fn axis_shape(lattice: &Lattice, layout: Layout) -> Vec<usize> {
    let mut shape = Vec::with_capacity(lattice.dim() + 1);
    if layout == Layout::SpaceTime {
        shape.push(lattice.time_steps());
    }
    shape.extend_from_slice(lattice.shape());
    shape
}

fn multi_index(lattice: &Lattice, layout: Layout, cell: usize) -> Vec<usize> {
    let d = lattice.dim();
    let ns = lattice.n_space();
    let mut out = Vec::with_capacity(d + 1);
    let spatial = if layout == Layout::SpaceTime {
        out.push(cell / ns);
        cell % ns
    } else {
        cell
    };
    out.extend_from_slice(&lattice.multi_index(spatial)[..d]);
    out
}

/// A computational window three times the set's bounding box per axis,
/// with the set in the middle third.
#[derive(Clone, Debug)]
pub(crate) struct Window {
    pub shape: Vec<usize>,
    pub strides: Vec<usize>,
    /// Window index of each set cell.
    pub set_cells: Vec<usize>,
}

impl Window {
    pub fn around(set: &CompactSet) -> Self {
        let b = set.bounds().expect("nonempty set has a bounding box");
        let shape: Vec<usize> = (0..set.axes()).map(|a| 3 * b.extent(a)).collect();
        let strides = strides_of(&shape);
        let set_cells = set
            .cells()
            .iter()
            .map(|&c| {
                set.multi(c)
                    .iter()
                    .enumerate()
                    .map(|(a, &i)| (i + b.extent(a) - b.lo[a]) * strides[a])
                    .sum()
            })
            .collect();
        Self {
            shape,
            strides,
            set_cells,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn multi(&self, mut idx: usize) -> Vec<usize> {
        self.strides
            .iter()
            .map(|&s| {
                let i = idx / s;
                idx %= s;
                i
            })
            .collect()
    }
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for a in (0..shape.len().saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * shape[a + 1];
    }
    strides
}

/// Which discretization produced an estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapacityRoute {
    /// Density supported on a window three times the bounding box.
    Window,
    /// `s = 2` dual over the set cells with the free-space kernel `G_{2α}`.
    FreeSpace,
    /// Space-time window for the anisotropic Sobolev norm.
    Parabolic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CapacityExponents {
    Bessel { alpha: f64, s: f64 },
    Parabolic { a: f64, b: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityEstimate {
    /// Objective at a feasible point: an upper bound for the grid problem.
    pub value: f64,
    /// Certified lower bound of the grid problem where a dual is available.
    pub lower_bound: Option<f64>,
    pub exponents: CapacityExponents,
    pub route: CapacityRoute,
    pub iterations: usize,
    /// `sup_E (level - constraint)_+` at the returned minimizer.
    pub feasibility_residual: f64,
    /// Relative duality gap (Bessel) or relative projected-gradient size (parabolic).
    pub stationarity: f64,
    pub converged: bool,
    /// Unknowns in the optimization.
    pub unknowns: usize,
    /// Largest spatial cell width.
    pub h: f64,
}

impl CapacityEstimate {
    pub(crate) fn empty(exponents: CapacityExponents, route: CapacityRoute, h: f64) -> Self {
        Self {
            value: 0.0,
            lower_bound: Some(0.0),
            exponents,
            route,
            iterations: 0,
            feasibility_residual: 0.0,
            stationarity: 0.0,
            converged: true,
            unknowns: 0,
            h,
        }
    }
}

/// Least-squares fit of `log value` against `log r` over balls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub radii: Vec<f64>,
    pub estimates: Vec<CapacityEstimate>,
}

impl ScalingFit {
    pub fn values(&self) -> Vec<f64> {
        self.estimates.iter().map(|e| e.value).collect()
    }
}

/// Ball capacities at each radius, each on a grid with `cells_per_radius`
/// cells across the radius, and the fitted log-log slope.
///
/// The grid is rescaled with the radius, so discretization bias is the same
/// relative factor at every radius and drops out of the slope.
pub fn capacity_scaling_exponent(
    alpha: f64,
    s: f64,
    dim: usize,
    radii: &[f64],
    cells_per_radius: usize,
) -> Result<ScalingFit> {
    if radii.len() < 3 {
        return Err(Error::Precondition(format!(
            "scaling fit needs at least three radii, got {}",
            radii.len()
        )));
    }
    if cells_per_radius < 2 {
        return Err(Error::Resolution(format!(
            "{cells_per_radius} cells per radius cannot resolve a ball"
        )));
    }
    if radii.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(Error::Domain("radii must be positive".into()));
    }
    let estimates = radii
        .iter()
        .map(|&r| {
            let set = centered_ball(dim, r, cells_per_radius)?;
            bessel_capacity(&set, alpha, s)
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = estimates.iter().map(|e| e.value.ln()).collect();
    let (slope, intercept) = least_squares(&xs, &ys);
    Ok(ScalingFit {
        slope,
        intercept,
        radii: radii.to_vec(),
        estimates,
    })
}

/// Ball of radius `r` centred on a grid vertex with `c` cells per radius.
pub fn centered_ball(dim: usize, r: f64, c: usize) -> Result<CompactSet> {
    let n = 2 * (c + 1);
    let h = r / c as f64;
    let half = h * n as f64 / 2.0;
    let domain = BoxDomain::cube(dim, -half, half, 1.0)?;
    let lattice = Lattice::new(domain, GridSpec::uniform(dim, n, 1)?)?;
    CompactSet::ball(lattice, &vec![0.0; dim], r)
}

pub(crate) fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice2(n: usize) -> Lattice {
        Lattice::new(
            BoxDomain::cube(2, 0.0, 1.0, 1.0).unwrap(),
            GridSpec::uniform(2, n, 4).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn ball_and_bounds() {
        let set = CompactSet::ball(lattice2(10), &[0.5, 0.5], 0.15).unwrap();
        assert_eq!(set.len(), 4);
        let b = set.bounds().unwrap();
        assert_eq!(b.lo, vec![4, 4]);
        assert_eq!(b.hi, vec![5, 5]);
        assert!(matches!(
            CompactSet::ball(lattice2(10), &[0.5, 0.5], 0.01),
            Err(Error::Resolution(_))
        ));
    }

    #[test]
    fn union_and_subset() {
        let lat = lattice2(8);
        let a = CompactSet::new(lat.clone(), Layout::Space, vec![1, 2]).unwrap();
        let b = CompactSet::new(lat.clone(), Layout::Space, vec![2, 60]).unwrap();
        let u = a.union(&b).unwrap();
        assert_eq!(u.cells(), &[1, 2, 60]);
        assert!(a.is_subset(&u) && b.is_subset(&u) && !u.is_subset(&a));
        assert_eq!(u.bounds().unwrap().lo, vec![0, 1]);
        assert_eq!(u.bounds().unwrap().hi, vec![7, 4]);
        assert!(CompactSet::new(lat, Layout::Space, vec![64]).is_err());
    }

    #[test]
    fn window_places_set_in_middle_third() {
        let lat = lattice2(8);
        let set = CompactSet::new(lat, Layout::Space, vec![9, 10]).unwrap();
        let w = Window::around(&set);
        assert_eq!(w.shape, vec![3, 6]);
        assert_eq!(
            w.set_cells.iter().map(|&c| w.multi(c)).collect::<Vec<_>>(),
            vec![vec![1, 2], vec![1, 3]]
        );
    }

    #[test]
    fn space_time_placement() {
        let lat = lattice2(4);
        let set = CompactSet::new(lat, Layout::Space, vec![5]).unwrap();
        let st = set.at_step(2).unwrap();
        assert_eq!(st.cells(), &[2 * 16 + 5]);
        assert_eq!(st.multi(st.cells()[0]), vec![2, 1, 1]);
        assert_eq!(st.bounds().unwrap().lo, vec![2, 1, 1]);
    }

    #[test]
    fn scaling_needs_three_radii() {
        assert!(matches!(
            capacity_scaling_exponent(1.0, 2.0, 2, &[0.1], 4),
            Err(Error::Precondition(_))
        ));
    }
}
