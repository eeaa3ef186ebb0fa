//! Periodic square grid, spectral operators and quadrature.
//!
//! The box `[-l/2, l/2)^2` with `n` points per axis is the stand-in for the
//! plane: every field is assumed to have decayed below round-off at the box
//! edge, and experiments are expected to verify that via
//! [`ComplexField::boundary_amplitude`]. Differential operators act on the
//! discrete Fourier basis, so they are exact for band-limited fields, and the
//! quadrature is the plain grid sum times `spacing^2`, which is spectrally
//! accurate for smooth periodic integrands.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Compensated (Neumaier) summation; keeps quadrature round-off near one ulp
/// independent of the number of grid points.
#[derive(Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut acc = KahanSum::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

fn compensated_sum_c64(values: impl Iterator<Item = Complex64>) -> Complex64 {
    let mut re = KahanSum::default();
    let mut im = KahanSum::default();
    for v in values {
        re.add(v.re);
        im.add(v.im);
    }
    Complex64::new(re.value(), im.value())
}

/// Weight `<x>^{sign*s}` used for the weighted `L^2` / `H^1` norms.
///
/// `s = 0` degenerates to the plain norm (and is required to match it
/// bit-for-bit); otherwise `s` is restricted to `(1, 3/2]`, the range the
/// estimates are stated for.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightSpec {
    s: f64,
    sign: i8,
}

impl WeightSpec {
    pub fn new(s: f64, sign: i8) -> Result<Self> {
        if !(sign == 1 || sign == -1) {
            return Err(Error::InvalidParameter(format!(
                "weight sign must be +1 or -1, got {sign}"
            )));
        }
        if !(s == 0.0 || (s > 1.0 && s <= 1.5)) {
            return Err(Error::InvalidParameter(format!(
                "weight exponent s must be 0 or in (1, 3/2], got {s}"
            )));
        }
        Ok(Self { s, sign })
    }

    /// `<x>^{-s}` with the default exponent `s = 3/2`.
    pub fn default_minus() -> Self {
        Self { s: 1.5, sign: -1 }
    }

    /// `<x>^{+s}` with the default exponent `s = 3/2`.
    pub fn default_plus() -> Self {
        Self { s: 1.5, sign: 1 }
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn sign(&self) -> i8 {
        self.sign
    }

    /// `<x>^{2*sign*s}` evaluated at squared radius `r2`; this is the factor
    /// that multiplies `|f|^2` in the squared norm.
    fn squared_factor(&self, r2: f64) -> f64 {
        if self.s == 0.0 {
            1.0
        } else {
            (1.0 + r2).powf(f64::from(self.sign) * self.s)
        }
    }
}

/// Periodic square grid: `n` points per axis (power of two), physical side
/// length `l_dom`, nodes at `-l_dom/2 + i*spacing`.
#[derive(Clone)]
pub struct Grid2D {
    n: usize,
    l_dom: f64,
    spacing: f64,
    coords: Arc<Vec<f64>>,
    wavenumbers: Arc<Vec<f64>>,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid2D")
            .field("n", &self.n)
            .field("l_dom", &self.l_dom)
            .finish()
    }
}

impl PartialEq for Grid2D {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.l_dom == other.l_dom
    }
}

impl Grid2D {
    pub fn new(n: usize, l_dom: f64) -> Result<Self> {
        if n < 16 || !n.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "grid size must be a power of two >= 16, got {n}"
            )));
        }
        if !(l_dom.is_finite() && l_dom > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "domain length must be positive, got {l_dom}"
            )));
        }
        let spacing = l_dom / n as f64;
        let coords: Vec<f64> = (0..n).map(|i| -0.5 * l_dom + i as f64 * spacing).collect();
        let wavenumbers: Vec<f64> = (0..n)
            .map(|i| {
                let m = if i < n / 2 { i as i64 } else { i as i64 - n as i64 };
                2.0 * std::f64::consts::PI * m as f64 / l_dom
            })
            .collect();
        let mut planner = FftPlanner::new();
        let fft_fwd = planner.plan_fft_forward(n);
        let fft_inv = planner.plan_fft_inverse(n);
        Ok(Self {
            n,
            l_dom,
            spacing,
            coords: Arc::new(coords),
            wavenumbers: Arc::new(wavenumbers),
            fft_fwd,
            fft_inv,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn l_dom(&self) -> f64 {
        self.l_dom
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Quadrature weight of one cell.
    pub fn cell_area(&self) -> f64 {
        self.spacing * self.spacing
    }

    pub fn num_nodes(&self) -> usize {
        self.n * self.n
    }

    /// Physical coordinate along one axis, measured from the box center.
    pub fn coord(&self, i: usize) -> f64 {
        self.coords[i]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Discrete wavenumber `2*pi*m/l_dom` in FFT storage order.
    pub fn wavenumber(&self, i: usize) -> f64 {
        self.wavenumbers[i]
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub fn index(&self, i1: usize, i2: usize) -> usize {
        i1 * self.n + i2
    }

    /// Node index nearest to the physical point `(x1, x2)`.
    pub fn nearest_index(&self, x1: f64, x2: f64) -> usize {
        let wrap = |x: f64| -> usize {
            let i = ((x + 0.5 * self.l_dom) / self.spacing).round() as i64;
            i.rem_euclid(self.n as i64) as usize
        };
        self.index(wrap(x1), wrap(x2))
    }

    /// Squared distance from the box center for node `(i1, i2)`.
    pub fn r2(&self, i1: usize, i2: usize) -> f64 {
        let x = self.coords[i1];
        let y = self.coords[i2];
        x * x + y * y
    }

    /// In-place 2D FFT (unnormalized forward).
    pub(crate) fn fft2(&self, values: &mut [Complex64]) {
        self.transform(values, true);
    }

    /// In-place 2D inverse FFT, normalized so that `ifft2(fft2(f)) = f`.
    pub(crate) fn ifft2(&self, values: &mut [Complex64]) {
        self.transform(values, false);
        let scale = 1.0 / (self.n * self.n) as f64;
        for v in values.iter_mut() {
            *v *= scale;
        }
    }

    fn transform(&self, values: &mut [Complex64], forward: bool) {
        assert_eq!(values.len(), self.n * self.n);
        let fft = if forward { &self.fft_fwd } else { &self.fft_inv };
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        fft.process_with_scratch(values, &mut scratch);
        transpose_square(values, self.n);
        fft.process_with_scratch(values, &mut scratch);
        transpose_square(values, self.n);
    }
}

fn transpose_square(values: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            values.swap(i * n + j, j * n + i);
        }
    }
}

/// Complex scalar field sampled on a [`Grid2D`].
#[derive(Clone, Debug)]
pub struct ComplexField {
    grid: Grid2D,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(grid: &Grid2D) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![Complex64::default(); grid.num_nodes()],
        }
    }

    pub fn from_values(grid: &Grid2D, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.num_nodes() {
            return Err(Error::InvalidParameter(format!(
                "field length {} does not match grid with {} nodes",
                values.len(),
                grid.num_nodes()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    /// Builds a field by evaluating `f(x1, x2)` at every node.
    pub fn from_fn(grid: &Grid2D, mut f: impl FnMut(f64, f64) -> Complex64) -> Self {
        let n = grid.n();
        let mut values = Vec::with_capacity(n * n);
        for i1 in 0..n {
            let x1 = grid.coord(i1);
            for i2 in 0..n {
                values.push(f(x1, grid.coord(i2)));
            }
        }
        Self {
            grid: grid.clone(),
            values,
        }
    }

    /// Real-valued Gaussian `amp * exp(-|x - x0|^2 / (2 sigma^2))`.
    pub fn gaussian(grid: &Grid2D, center: (f64, f64), sigma: f64, amp: f64) -> Self {
        Self::from_fn(grid, |x, y| {
            let dx = x - center.0;
            let dy = y - center.1;
            Complex64::new(amp * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp(), 0.0)
        })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    /// Errors with the first offending node if any entry is NaN/Inf.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        for (idx, v) in self.values.iter().enumerate() {
            if !(v.re.is_finite() && v.im.is_finite()) {
                let n = self.grid.n();
                return Err(Error::NonFinite {
                    context: context.to_string(),
                    index: idx,
                    i1: idx / n,
                    i2: idx % n,
                });
            }
        }
        Ok(())
    }

    pub fn same_grid(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    pub fn scale(&mut self, a: Complex64) {
        for v in &mut self.values {
            *v *= a;
        }
    }

    pub fn scaled(&self, a: Complex64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: Complex64, other: &Self) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (v, w) in self.values.iter_mut().zip(&other.values) {
            *v += a * w;
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_grid(other)?;
        let mut out = self.clone();
        out.axpy(Complex64::new(1.0, 0.0), other);
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_grid(other)?;
        let mut out = self.clone();
        out.axpy(Complex64::new(-1.0, 0.0), other);
        Ok(out)
    }

    pub fn conj(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v.conj()).collect(),
        }
    }

    pub fn real_part(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| Complex64::new(v.re, 0.0)).collect(),
        }
    }

    pub fn imag_part(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| Complex64::new(v.im, 0.0)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest `|f|` on the four box edges; experiments gate on this to make
    /// sure the periodic box is a faithful stand-in for the plane.
    pub fn boundary_amplitude(&self) -> f64 {
        let n = self.grid.n();
        let mut m: f64 = 0.0;
        for i in 0..n {
            m = m.max(self.values[self.grid.index(0, i)].norm());
            m = m.max(self.values[self.grid.index(i, 0)].norm());
            m = m.max(self.values[self.grid.index(n - 1, i)].norm());
            m = m.max(self.values[self.grid.index(i, n - 1)].norm());
        }
        m
    }

    /// Spectral coefficients (unnormalized forward transform).
    pub fn to_spectral(&self) -> Vec<Complex64> {
        let mut hat = self.values.clone();
        self.grid.fft2(&mut hat);
        hat
    }

    pub fn from_spectral(grid: &Grid2D, mut hat: Vec<Complex64>) -> Self {
        grid.ifft2(&mut hat);
        Self {
            grid: grid.clone(),
            values: hat,
        }
    }

    /// Applies a Fourier multiplier `m(k1, k2)`.
    pub fn apply_multiplier(&self, mut m: impl FnMut(f64, f64) -> Complex64) -> Self {
        let n = self.grid.n();
        let mut hat = self.to_spectral();
        for i1 in 0..n {
            let k1 = self.grid.wavenumber(i1);
            for i2 in 0..n {
                hat[i1 * n + i2] *= m(k1, self.grid.wavenumber(i2));
            }
        }
        Self::from_spectral(&self.grid, hat)
    }
}

/// Spectral Laplacian; exact on the discrete Fourier basis.
pub fn laplacian_apply(f: &ComplexField) -> Result<ComplexField> {
    f.ensure_finite("laplacian_apply input")?;
    Ok(f.apply_multiplier(|k1, k2| Complex64::new(-(k1 * k1 + k2 * k2), 0.0)))
}

/// Spectral gradient `(d/dx1 f, d/dx2 f)`.
pub fn gradient(f: &ComplexField) -> (ComplexField, ComplexField) {
    let gx = f.apply_multiplier(|k1, _| Complex64::new(0.0, k1));
    let gy = f.apply_multiplier(|_, k2| Complex64::new(0.0, k2));
    (gx, gy)
}

/// Weighted norm `(int <x>^{2*sign*s} (|f|^2 [+ |grad f|^2]))^{1/2}`.
///
/// The weight is measured from the box center and simply evaluated at each
/// node (no periodic wrap of the weight). With `s = 0` this is the plain
/// `L^2` (or `H^1`) norm, bit for bit.
pub fn weighted_norm(f: &ComplexField, w: WeightSpec, deriv_order: u8) -> f64 {
    assert!(deriv_order <= 1, "only orders 0 and 1 are defined");
    let grid = f.grid();
    let n = grid.n();
    let mut acc = KahanSum::default();
    let add_field = |acc: &mut KahanSum, g: &ComplexField| {
        for i1 in 0..n {
            for i2 in 0..n {
                let r2 = grid.r2(i1, i2);
                let v = g.values()[grid.index(i1, i2)];
                acc.add(w.squared_factor(r2) * v.norm_sqr());
            }
        }
    };
    add_field(&mut acc, f);
    if deriv_order == 1 {
        let (gx, gy) = gradient(f);
        add_field(&mut acc, &gx);
        add_field(&mut acc, &gy);
    }
    (acc.value() * grid.cell_area()).sqrt()
}

/// Plain `L^2` norm (same code path as `weighted_norm` with `s = 0`).
pub fn l2_norm(f: &ComplexField) -> f64 {
    weighted_norm(f, WeightSpec { s: 0.0, sign: 1 }, 0)
}

/// `H^1` norm `(|f|_2^2 + |grad f|_2^2)^{1/2}`.
pub fn h1_norm(f: &ComplexField) -> f64 {
    weighted_norm(f, WeightSpec { s: 0.0, sign: 1 }, 1)
}

/// `L^p` norm by grid quadrature, `p >= 1` real.
pub fn lp_norm(f: &ComplexField, p: f64) -> f64 {
    let s = compensated_sum(f.values().iter().map(|v| v.norm().powf(p)));
    (s * f.grid().cell_area()).powf(1.0 / p)
}

/// `W^{1,p}` norm `(|f|_p^p + |grad f|_p^p)^{1/p}` with spectral gradients.
pub fn w1p_norm(f: &ComplexField, p: f64) -> f64 {
    let (gx, gy) = gradient(f);
    let mut acc = KahanSum::default();
    for v in f.values() {
        acc.add(v.norm().powf(p));
    }
    for (a, b) in gx.values().iter().zip(gy.values()) {
        // |grad f| at a node is the Euclidean norm of the two components
        acc.add((a.norm_sqr() + b.norm_sqr()).powf(0.5 * p));
    }
    (acc.value() * f.grid().cell_area()).powf(1.0 / p)
}

/// Bilinear pairing `<f, g> = int f g dx` (no conjugation), as in the paper.
pub fn inner_bilinear(f: &ComplexField, g: &ComplexField) -> Result<Complex64> {
    f.same_grid(g)?;
    let s = compensated_sum_c64(f.values().iter().zip(g.values()).map(|(a, b)| a * b));
    Ok(s * f.grid().cell_area())
}

/// Sesquilinear inner product `int f conj(g) dx`.
pub fn inner_sesquilinear(f: &ComplexField, g: &ComplexField) -> Result<Complex64> {
    f.same_grid(g)?;
    let s = compensated_sum_c64(f.values().iter().zip(g.values()).map(|(a, b)| a * b.conj()));
    Ok(s * f.grid().cell_area())
}

/// Real bilinear pairing of the real parts; the modulation constraints use
/// this on fields that are real by construction.
pub fn inner_real(f: &ComplexField, g: &ComplexField) -> Result<f64> {
    f.same_grid(g)?;
    let s = compensated_sum(
        f.values()
            .iter()
            .zip(g.values())
            .map(|(a, b)| a.re * b.re),
    );
    Ok(s * f.grid().cell_area())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid() -> Grid2D {
        Grid2D::new(64, 20.0).unwrap()
    }

    #[test]
    fn grid_invariants() {
        let g = grid();
        assert_eq!(g.spacing() * g.n() as f64, g.l_dom());
        // wavenumbers symmetric about zero up to the Nyquist mode
        for i in 1..g.n() / 2 {
            assert_relative_eq!(g.wavenumber(i), -g.wavenumber(g.n() - i), epsilon = 1e-14);
        }
        assert!(Grid2D::new(12, 10.0).is_err());
        assert!(Grid2D::new(48, 10.0).is_err());
    }

    #[test]
    fn laplacian_of_constant_is_zero() {
        let g = grid();
        let f = ComplexField::from_fn(&g, |_, _| Complex64::new(1.0, 0.0));
        let lap = laplacian_apply(&f).unwrap();
        assert!(lap.max_abs() < 1e-12);
    }

    #[test]
    fn laplacian_of_fourier_mode_is_exact() {
        let g = grid();
        let k1 = 2.0 * std::f64::consts::PI / g.l_dom();
        let f = ComplexField::from_fn(&g, |x, _| Complex64::new(0.0, k1 * x).exp());
        let lap = laplacian_apply(&g_clone(&f)).unwrap();
        let err = lap
            .values()
            .iter()
            .zip(f.values())
            .map(|(l, v)| (l + k1 * k1 * v).norm())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-12, "err = {err}");
    }

    fn g_clone(f: &ComplexField) -> ComplexField {
        f.clone()
    }

    #[test]
    fn laplacian_rejects_non_finite() {
        let g = grid();
        let mut f = ComplexField::zeros(&g);
        f.values_mut()[5] = Complex64::new(f64::NAN, 0.0);
        let err = laplacian_apply(&f).unwrap_err();
        assert!(err.to_string().contains("index 5"), "{err}");
    }

    #[test]
    fn laplacian_commutes_with_grid_translation() {
        let g = grid();
        let f = ComplexField::from_fn(&g, |x, y| {
            Complex64::new((-(x * x + y * y) / 3.0).exp(), 0.1 * x)
        });
        let shift = |field: &ComplexField, s: usize| {
            let n = field.grid().n();
            let mut out = ComplexField::zeros(field.grid());
            for i1 in 0..n {
                for i2 in 0..n {
                    out.values_mut()[((i1 + s) % n) * n + i2] = field.values()[i1 * n + i2];
                }
            }
            out
        };
        let a = shift(&laplacian_apply(&f).unwrap(), 7);
        let b = laplacian_apply(&shift(&f, 7)).unwrap();
        let diff = a.sub(&b).unwrap().max_abs();
        assert!(diff < 1e-10, "diff = {diff}");
    }

    #[test]
    fn weighted_norm_trivia() {
        let g = grid();
        let zero = ComplexField::zeros(&g);
        assert_eq!(weighted_norm(&zero, WeightSpec::default_minus(), 0), 0.0);
        // constant 1 with s = 0 integrates to the box measure
        let one = ComplexField::from_fn(&g, |_, _| Complex64::new(1.0, 0.0));
        assert_relative_eq!(l2_norm(&one), g.l_dom(), epsilon = 1e-12);
    }

    #[test]
    fn weighted_norm_s0_is_l2_bit_for_bit() {
        let g = grid();
        let f = ComplexField::from_fn(&g, |x, y| Complex64::new(x.sin(), (y * 0.3).cos()));
        let w0 = WeightSpec { s: 0.0, sign: -1 };
        assert_eq!(weighted_norm(&f, w0, 0), l2_norm(&f));
    }

    #[test]
    fn weighted_norm_scaling_and_monotonicity() {
        let g = grid();
        let f = ComplexField::gaussian(&g, (0.0, 0.0), 1.0, 1.0);
        let w = WeightSpec::default_minus();
        let n1 = weighted_norm(&f, w, 0);
        let n2 = weighted_norm(&f.scaled(Complex64::new(3.0, 0.0)), w, 0);
        assert_relative_eq!(n2, 3.0 * n1, epsilon = 1e-12);
        let bigger = ComplexField::gaussian(&g, (0.0, 0.0), 1.0, 1.5);
        assert!(weighted_norm(&bigger, w, 0) > n1);
    }

    #[test]
    fn inner_product_examples() {
        let g = Grid2D::new(128, 30.0).unwrap();
        let zero = ComplexField::zeros(&g);
        let f = ComplexField::gaussian(&g, (0.0, 0.0), 1.0, 1.0);
        assert_eq!(inner_bilinear(&f, &zero).unwrap(), Complex64::default());

        // <e^{ik x1}, e^{-ik x1}> bilinear = measure of the box
        let k1 = 2.0 * std::f64::consts::PI / g.l_dom();
        let e_plus = ComplexField::from_fn(&g, |x, _| Complex64::new(0.0, k1 * x).exp());
        let e_minus = ComplexField::from_fn(&g, |x, _| Complex64::new(0.0, -k1 * x).exp());
        let ip = inner_bilinear(&e_plus, &e_minus).unwrap();
        assert_relative_eq!(ip.re, g.l_dom() * g.l_dom(), epsilon = 1e-9);
        assert!(ip.im.abs() < 1e-9);

        // Gaussian integral: int e^{-2|x|^2} = pi/2
        let ga = ComplexField::from_fn(&g, |x, y| Complex64::new((-(x * x + y * y)).exp(), 0.0));
        let gg = inner_bilinear(&ga, &ga).unwrap();
        assert_relative_eq!(gg.re, std::f64::consts::PI / 2.0, epsilon = 1e-8);

        // symmetry of the bilinear pairing
        let h = ComplexField::from_fn(&g, |x, y| Complex64::new(0.2 * y, (0.1 * x).sin()));
        let ab = inner_bilinear(&ga, &h).unwrap();
        let ba = inner_bilinear(&h, &ga).unwrap();
        assert!((ab - ba).norm() < 1e-13);
    }

    #[test]
    fn inner_product_rejects_grid_mismatch() {
        let a = ComplexField::zeros(&Grid2D::new(64, 20.0).unwrap());
        let b = ComplexField::zeros(&Grid2D::new(64, 25.0).unwrap());
        assert!(inner_bilinear(&a, &b).is_err());
    }

    #[test]
    fn spectral_laplacian_self_adjoint() {
        let g = grid();
        let mut rng = crate::rng::seeded(7);
        for _ in 0..4 {
            let f = crate::rng::smooth_field(&g, &mut rng, 3.0);
            let h = crate::rng::smooth_field(&g, &mut rng, 3.0);
            let lf = laplacian_apply(&f).unwrap();
            let lh = laplacian_apply(&h).unwrap();
            let a = inner_sesquilinear(&lf, &h).unwrap();
            let b = inner_sesquilinear(&f, &lh).unwrap();
            let bound = 1e-10 * l2_norm(&f) * l2_norm(&h);
            assert!((a - b).norm() < bound, "{} vs {}", (a - b).norm(), bound);
        }
    }

    #[test]
    fn parseval_identity() {
        let g = grid();
        let mut rng = crate::rng::seeded(11);
        let f = crate::rng::smooth_field(&g, &mut rng, 2.0);
        let phys = l2_norm(&f).powi(2);
        let hat = f.to_spectral();
        let freq = compensated_sum(hat.iter().map(|v| v.norm_sqr()))
            * g.cell_area()
            / (g.num_nodes() as f64);
        assert_relative_eq!(phys, freq, max_relative = 1e-12);
    }

    #[test]
    fn gaussian_laplacian_closed_form() {
        // exp(-|x|^2/2) -> (|x|^2 - 2) exp(-|x|^2/2)
        let g = Grid2D::new(256, 30.0).unwrap();
        let f = ComplexField::gaussian(&g, (0.0, 0.0), 1.0, 1.0);
        assert!(f.boundary_amplitude() < 1e-12);
        let lap = laplacian_apply(&f).unwrap();
        let mut err: f64 = 0.0;
        for i1 in 0..g.n() {
            for i2 in 0..g.n() {
                let r2 = g.r2(i1, i2);
                let expect = (r2 - 2.0) * (-r2 / 2.0).exp();
                err = err.max((lap.values()[g.index(i1, i2)].re - expect).abs());
                err = err.max(lap.values()[g.index(i1, i2)].im.abs());
            }
        }
        assert!(err < 1e-8, "max error {err}");
    }
}
