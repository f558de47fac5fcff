//! The Bessel kernel `G_α`, its cell-averaged tables and FFT convolution.
//!
//! `G_α(r) = (4π)^{-N/2} / Γ(α/2) · ∫_0^∞ exp(−t − r²/(4t)) t^{(α−N)/2 − 1} dt`,
//! normalized to unit mass (Fourier multiplier `(1 + |ξ|²)^{-α/2}`).

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};
use crate::geometry::{GridField, Lattice, Layout, MAX_DIM};

use super::PotentialValue;

fn check_order(alpha: f64, n: usize) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!(
            "Bessel order must be positive, got {alpha}"
        )));
    }
    if n == 0 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    Ok(())
}

/// `∫_{-∞}^{∞} exp(−e^y − (r²/4) e^{−y} + c·y) dy` with `c = (α − N)/2`, for `r > 0`.
///
/// The integrand is analytic with double-exponential tails, so the trapezoid
/// rule converges geometrically; the step is halved until it settles.
fn subordination_integral(r: f64, c: f64) -> f64 {
    let q = 0.25 * r * r;
    let log_f = |y: f64| -y.exp() - q * (-y).exp() + c * y;
    // Peak of the log-integrand: e^{2y} − c e^y − q = 0.
    let disc = (c * c + 4.0 * q).sqrt();
    let root = if c >= 0.0 {
        0.5 * (c + disc)
    } else {
        2.0 * q / (disc - c)
    };
    let peak = root.ln();
    let top = log_f(peak);
    let cutoff = top - 60.0;
    let mut lo = peak - 0.5;
    let mut step = 0.5;
    while log_f(lo) > cutoff {
        lo -= step;
        step *= 1.5;
    }
    let mut hi = peak + 0.5;
    step = 0.5;
    while log_f(hi) > cutoff {
        hi += step;
        step *= 1.5;
    }
    let f = |y: f64| (log_f(y) - top).exp();
    let mut n = 64usize;
    let mut h = (hi - lo) / n as f64;
    let mut sum = 0.5 * (f(lo) + f(hi)) + (1..n).map(|k| f(lo + k as f64 * h)).sum::<f64>();
    let mut estimate = sum * h;
    loop {
        // Add the midpoints of the current panels.
        let mids: f64 = (0..n).map(|k| f(lo + (k as f64 + 0.5) * h)).sum();
        sum += mids;
        n *= 2;
        h *= 0.5;
        let next = sum * h;
        let settled = (next - estimate).abs() <= 1e-13 * next.abs();
        estimate = next;
        if settled || n >= 1 << 20 {
            break;
        }
    }
    estimate * top.exp()
}

/// Pointwise value of the Bessel kernel.
///
/// At `r = 0` the kernel is finite only for `α > N`; otherwise the infinity flag is returned.
pub fn bessel_kernel(alpha: f64, r: f64, n: usize) -> Result<PotentialValue> {
    check_order(alpha, n)?;
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::Domain(format!(
            "radius must be nonnegative, got {r}"
        )));
    }
    let nf = n as f64;
    let norm = (4.0 * PI).powf(-0.5 * nf);
    if r == 0.0 {
        if alpha > nf {
            let v = norm * (ln_gamma(0.5 * (alpha - nf)) - ln_gamma(0.5 * alpha)).exp();
            return Ok(PotentialValue::Finite(v));
        }
        return Ok(PotentialValue::Infinite);
    }
    let integral = subordination_integral(r, 0.5 * (alpha - nf));
    Ok(PotentialValue::Finite(norm * integral / gamma(0.5 * alpha)))
}

/// Surface area of the unit sphere in `R^N`.
fn sphere_area(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => 2.0 * PI.powf(0.5 * n as f64) / gamma(0.5 * n as f64),
    }
}

/// `G_α` tabulated on a log-spaced radius grid and interpolated in log-log.
#[derive(Clone, Debug)]
pub struct BesselProfile {
    alpha: f64,
    n: usize,
    ln_r0: f64,
    step: f64,
    ln_g: Vec<f64>,
}

impl BesselProfile {
    const R_MIN: f64 = 1e-7;
    const R_MAX: f64 = 700.0;
    const NODES: usize = 8192;

    pub fn new(alpha: f64, n: usize) -> Result<Self> {
        check_order(alpha, n)?;
        let ln_r0 = Self::R_MIN.ln();
        let step = (Self::R_MAX.ln() - ln_r0) / (Self::NODES - 1) as f64;
        let ln_g = (0..Self::NODES)
            .map(|k| {
                let r = (ln_r0 + step * k as f64).exp();
                bessel_kernel(alpha, r, n).map(|v| v.value().max(f64::MIN_POSITIVE).ln())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            alpha,
            n,
            ln_r0,
            step,
            ln_g,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Interpolated kernel value for `r > 0`.
    pub fn value(&self, r: f64) -> f64 {
        debug_assert!(r > 0.0);
        let s = (r.ln() - self.ln_r0) / self.step;
        if s <= 0.0 {
            // Small-radius regime: extrapolate the leading behaviour.
            let slope = (self.ln_g[1] - self.ln_g[0]) / self.step;
            return (self.ln_g[0] + slope * s * self.step).exp();
        }
        let k = s.floor() as usize;
        if k + 1 >= self.ln_g.len() {
            return 0.0;
        }
        let w = s - k as f64;
        ((1.0 - w) * self.ln_g[k] + w * self.ln_g[k + 1]).exp()
    }

    /// Mean of `G_α` over the ball of radius `radius` centred at the origin.
    pub fn ball_average(&self, radius: f64) -> f64 {
        // ∫_0^R G(r) S r^{N-1} dr with r = R e^{-u}; the integrand decays like e^{-αu}.
        let nf = self.n as f64;
        let decay = self.alpha.min(nf).max(1e-3);
        let umax = 50.0 / decay;
        let panels = 4000;
        let du = umax / panels as f64;
        let f = |u: f64| {
            let r = radius * (-u).exp();
            self.value(r) * r.powf(nf)
        };
        let mut acc = 0.5 * (f(0.0) + f(umax));
        for k in 1..panels {
            acc += f(k as f64 * du);
        }
        let volume = sphere_area(self.n) / nf * radius.powf(nf);
        sphere_area(self.n) * acc * du / volume
    }
}

/// Cell-averaged kernel `Ḡ(o) = (1/|cell|) ∫_cell G_α(o·h − y) dy` per cell offset.
#[derive(Clone, Debug)]
pub struct BesselTable {
    extents: [usize; MAX_DIM],
    widths: [f64; MAX_DIM],
    dim: usize,
    values: Vec<f64>,
}

impl BesselTable {
    /// Offsets with every component below this are averaged by sub-sampling.
    const NEAR: usize = 2;
    const SUB: usize = 4;

    /// Table for offsets `|o_a| < extents[a]` on cells of the given widths.
    pub fn new(profile: &BesselProfile, widths: &[f64], extents: &[usize]) -> Self {
        let dim = widths.len();
        let mut ext = [1; MAX_DIM];
        let mut w = [1.0; MAX_DIM];
        ext[..dim].copy_from_slice(extents);
        w[..dim].copy_from_slice(widths);
        let volume: f64 = widths.iter().product();
        let r_eq = (volume * dim as f64 / sphere_area(dim)).powf(1.0 / dim as f64);
        let total = ext[0] * ext[1] * ext[2];
        let mut values = Vec::with_capacity(total);
        let mut cache = std::collections::HashMap::new();
        for i in 0..ext[0] {
            for j in 0..ext[1] {
                for k in 0..ext[2] {
                    let o = [i, j, k];
                    let v = if o.iter().all(|&c| c == 0) {
                        profile.ball_average(r_eq)
                    } else if o.iter().all(|&c| c <= Self::NEAR) {
                        Self::subsampled(profile, &o, &w, dim)
                    } else {
                        let r2: f64 = (0..dim).map(|a| (o[a] as f64 * w[a]).powi(2)).sum();
                        *cache
                            .entry(r2.to_bits())
                            .or_insert_with(|| profile.value(r2.sqrt()))
                    };
                    values.push(v);
                }
            }
        }
        Self {
            extents: ext,
            widths: w,
            dim,
            values,
        }
    }

    fn subsampled(profile: &BesselProfile, o: &[usize; 3], w: &[f64; 3], dim: usize) -> f64 {
        let sub = Self::SUB;
        let count = sub.pow(dim as u32);
        let mut acc = 0.0;
        for n in 0..count {
            let mut rem = n;
            let mut r2 = 0.0;
            for a in 0..dim {
                let s = rem % sub;
                rem /= sub;
                let y = ((s as f64 + 0.5) / sub as f64 - 0.5) * w[a];
                r2 += (o[a] as f64 * w[a] - y).powi(2);
            }
            acc += profile.value(r2.sqrt());
        }
        acc / count as f64
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths[..self.dim]
    }

    /// Kernel for a signed offset; zero beyond the tabulated extents.
    pub fn get(&self, offset: &[isize]) -> f64 {
        let mut idx = 0;
        for a in 0..MAX_DIM {
            let o = if a < self.dim {
                offset[a].unsigned_abs()
            } else {
                0
            };
            if o >= self.extents[a] {
                return 0.0;
            }
            let stride: usize = self.extents[a + 1..].iter().product();
            idx += o * stride;
        }
        self.values[idx]
    }
}

/// Linear convolution of fields of fixed shape with a fixed even kernel via zero-padded FFTs.
pub(crate) struct FftConvolver {
    dims: Vec<usize>,
    padded: Vec<usize>,
    kernel_hat: Vec<Complex64>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl FftConvolver {
    pub(crate) fn new(dims: &[usize], kernel: impl Fn(&[isize]) -> f64) -> Self {
        let padded: Vec<usize> = dims.iter().map(|&n| (2 * n).max(2)).collect();
        let mut planner = FftPlanner::new();
        let forward = padded
            .iter()
            .map(|&p| planner.plan_fft_forward(p))
            .collect();
        let inverse = padded
            .iter()
            .map(|&p| planner.plan_fft_inverse(p))
            .collect();
        let total: usize = padded.iter().product();
        let mut k = vec![Complex64::new(0.0, 0.0); total];
        let d = dims.len();
        let mut offset = vec![0isize; d];
        for (flat, slot) in k.iter_mut().enumerate() {
            let mut rem = flat;
            let mut inside = true;
            for a in (0..d).rev() {
                let i = rem % padded[a];
                rem /= padded[a];
                // Index i ↔ offset i (i < n) or i − P (i > P − n).
                let o = if i < dims[a] {
                    i as isize
                } else if i > padded[a] - dims[a] {
                    i as isize - padded[a] as isize
                } else {
                    inside = false;
                    0
                };
                offset[a] = o;
            }
            if inside {
                *slot = Complex64::new(kernel(&offset), 0.0);
            }
        }
        let mut this = Self {
            dims: dims.to_vec(),
            padded,
            kernel_hat: Vec::new(),
            forward,
            inverse,
        };
        this.transform(&mut k, false);
        this.kernel_hat = k;
        this
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let d = self.padded.len();
        for a in 0..d {
            let n = self.padded[a];
            let stride: usize = self.padded[a + 1..].iter().product();
            let plan = if inverse {
                &self.inverse[a]
            } else {
                &self.forward[a]
            };
            let mut line = vec![Complex64::new(0.0, 0.0); n];
            let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
            let outer = data.len() / (n * stride);
            for o in 0..outer {
                for s in 0..stride {
                    let base = o * n * stride + s;
                    for (i, v) in line.iter_mut().enumerate() {
                        *v = data[base + i * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (i, v) in line.iter().enumerate() {
                        data[base + i * stride] = *v;
                    }
                }
            }
        }
    }

    /// `out[x] = Σ_y k(x − y) input[y]` for `x, y` on the unpadded grid.
    pub(crate) fn apply(&self, input: &[f64]) -> Vec<f64> {
        let d = self.dims.len();
        let total: usize = self.padded.iter().product();
        let mut buf = vec![Complex64::new(0.0, 0.0); total];
        let n_in: usize = self.dims.iter().product();
        debug_assert_eq!(input.len(), n_in);
        let map = |flat: usize| -> usize {
            let mut rem = flat;
            let mut idx = 0;
            let mut stride = 1;
            for a in (0..d).rev() {
                let i = rem % self.dims[a];
                rem /= self.dims[a];
                idx += i * stride;
                stride *= self.padded[a];
            }
            idx
        };
        for (flat, &v) in input.iter().enumerate() {
            buf[map(flat)] = Complex64::new(v, 0.0);
        }
        self.transform(&mut buf, false);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        self.transform(&mut buf, true);
        let scale = 1.0 / total as f64;
        (0..n_in).map(|flat| buf[map(flat)].re * scale).collect()
    }
}

/// `G_α ∗ g` on the lattice of `g`, with `g` extended by zero outside the domain.
pub fn bessel_convolve(g: &GridField, alpha: f64) -> Result<GridField> {
    if g.layout() != Layout::Space {
        return Err(Error::Config(
            "Bessel convolution needs a spatial field".into(),
        ));
    }
    if g.values().iter().any(|&v| v < 0.0) {
        return Err(Error::Precondition(
            "Bessel convolution input must be nonnegative".into(),
        ));
    }
    let l: &Lattice = g.lattice();
    let profile = BesselProfile::new(alpha, l.dim())?;
    let table = BesselTable::new(&profile, l.widths(), l.shape());
    let conv = FftConvolver::new(l.shape(), |o| table.get(o));
    let vol = l.cell_volume();
    let values = conv
        .apply(g.values())
        .into_iter()
        .map(|v| (v * vol).max(0.0))
        .collect();
    GridField::from_values(l.clone(), Layout::Space, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoxDomain, GridSpec};

    /// Closed forms through half-integer Macdonald functions:
    /// `G_α(r) = 2 (4π)^{-N/2} / Γ(α/2) · (r/2)^{(α−N)/2} K_{|α−N|/2}(r)`.
    fn closed_form(alpha: f64, r: f64, n: usize) -> f64 {
        let nu = ((alpha - n as f64) / 2.0).abs();
        let k = if (nu - 0.5).abs() < 1e-12 {
            (PI / (2.0 * r)).sqrt() * (-r).exp()
        } else if (nu - 1.5).abs() < 1e-12 {
            (PI / (2.0 * r)).sqrt() * (-r).exp() * (1.0 + 1.0 / r)
        } else {
            panic!("no closed form for order {nu}")
        };
        2.0 * (4.0 * PI).powf(-(n as f64) / 2.0) / gamma(alpha / 2.0)
            * (r / 2.0).powf((alpha - n as f64) / 2.0)
            * k
    }

    #[test]
    fn matches_half_integer_closed_forms() {
        for &(alpha, n) in &[(2.0, 3), (1.0, 2), (3.0, 2), (4.0, 3), (2.0, 1), (5.0, 2)] {
            for &r in &[1e-3, 0.01, 0.1, 0.5, 1.0, 3.0, 10.0] {
                let got = bessel_kernel(alpha, r, n).unwrap().value();
                let want = closed_form(alpha, r, n);
                assert!(
                    (got - want).abs() <= 1e-8 * want,
                    "α={alpha} N={n} r={r}: {got} vs {want}"
                );
            }
        }
        // N = 3, α = 2: the Yukawa kernel e^{-r}/(4πr).
        let v = bessel_kernel(2.0, 0.5, 3).unwrap().value();
        assert!((v - (-0.5f64).exp() / (2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn unit_total_mass() {
        for &(alpha, n) in &[(1.0, 3), (0.5, 2), (2.0, 2), (1.5, 1), (4.0, 3)] {
            // Radial integral in log r, independent of the profile table.
            let (lo, hi, m) = (1e-12f64, 80.0f64, 20000);
            let step = (hi / lo).ln() / m as f64;
            let mut acc = 0.0;
            for k in 0..=m {
                let r = lo * (step * k as f64).exp();
                let w = if k == 0 || k == m { 0.5 } else { 1.0 };
                acc += w * bessel_kernel(alpha, r, n).unwrap().value() * r.powi(n as i32);
            }
            let total = sphere_area(n) * acc * step;
            assert!((total - 1.0).abs() < 1e-4, "α={alpha} N={n}: {total}");
        }
    }

    #[test]
    fn decreasing_and_singular_slope() {
        let g = |r| bessel_kernel(1.0, r, 3).unwrap().value();
        assert!(g(0.5) > g(1.0));
        let slope = (g(1.1e-3).ln() - g(0.9e-3).ln()) / (1.1e-3f64.ln() - 0.9e-3f64.ln());
        assert!((slope - (1.0 - 3.0)).abs() < 0.05 * 2.0, "{slope}");
        assert_eq!(
            bessel_kernel(1.0, 0.0, 3).unwrap(),
            PotentialValue::Infinite
        );
        assert!(bessel_kernel(4.0, 0.0, 3).unwrap().is_finite());
        assert!(bessel_kernel(0.0, 1.0, 3).is_err());
    }

    #[test]
    fn profile_interpolation_is_accurate() {
        let p = BesselProfile::new(1.0, 3).unwrap();
        for &r in &[2e-4, 3.3e-3, 0.07, 0.9, 5.5, 20.0] {
            let exact = bessel_kernel(1.0, r, 3).unwrap().value();
            assert!((p.value(r) - exact).abs() < 2e-5 * exact, "r={r}");
        }
    }

    #[test]
    fn fft_convolution_matches_direct_sum() {
        let dims = [5usize, 4];
        let kernel = |o: &[isize]| 1.0 / (1.0 + (o[0] * o[0] + 2 * o[1] * o[1]) as f64);
        let conv = FftConvolver::new(&dims, kernel);
        let input: Vec<f64> = (0..20).map(|i| ((i * 7) % 5) as f64 - 1.0).collect();
        let out = conv.apply(&input);
        for x in 0..20 {
            let (xi, xj) = ((x / 4) as isize, (x % 4) as isize);
            let direct: f64 = (0..20)
                .map(|y| {
                    let (yi, yj) = ((y / 4) as isize, (y % 4) as isize);
                    kernel(&[xi - yi, xj - yj]) * input[y]
                })
                .sum();
            assert!((out[x] - direct).abs() < 1e-12);
        }
    }

    fn lattice() -> Lattice {
        Lattice::new(
            BoxDomain::cube(2, 0.0, 1.0, 1.0).unwrap(),
            GridSpec::uniform(2, 15, 1).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn convolution_basics() {
        let zero = GridField::zeros(lattice(), Layout::Space);
        assert_eq!(bessel_convolve(&zero, 1.0).unwrap().max_abs(), 0.0);
        let mut g = GridField::zeros(lattice(), Layout::Space);
        let src = 7 * 15 + 7;
        g.values_mut()[src] = 1.0;
        let out = bessel_convolve(&g, 1.0).unwrap();
        let argmax = out
            .values()
            .iter()
            .enumerate()
            .fold((0, 0.0), |a, (i, &v)| if v > a.1 { (i, v) } else { a })
            .0;
        assert_eq!(argmax, src);
        assert!(out.min_value() >= 0.0);
        let twice = bessel_convolve(&g.scaled(2.0), 1.0).unwrap();
        for (a, b) in out.values().iter().zip(twice.values()) {
            assert_eq!(2.0 * a, *b);
        }
        let neg = g.scaled(-1.0);
        assert!(bessel_convolve(&neg, 1.0).is_err());
    }
}
