//! Radial transforms with Bessel kernels: `T1 f(x) = int_0^inf J0(xy) f(y) dy`
//! and `T2 f(x) = int_0^inf Y0(xy) f(y) dy`, plus the measure-weighted Hankel
//! transform `f -> int J0(xy) f(y) y dy`.
//!
//! Quadrature is panel-based Gauss-Legendre with oscillation-aware panel
//! lengths (at most half a period of the kernel per panel) and geometric
//! refinement toward `y = 0` where `Y0` is logarithmic.

use crate::bessel::{bessel_j0, bessel_y0};
use crate::error::{Error, Result};

/// Log-uniform radial grid on `[r_min, r_max]`.
#[derive(Clone, Debug)]
pub struct RadialGrid {
    pub points: Vec<f64>,
}

impl RadialGrid {
    pub fn log_uniform(r_min: f64, r_max: f64, m: usize) -> Result<Self> {
        if !(r_min > 0.0 && r_max > r_min && m >= 2) {
            return Err(Error::InvalidParameter(format!(
                "bad radial grid ({r_min}, {r_max}, {m})"
            )));
        }
        let ratio = (r_max / r_min).powf(1.0 / (m - 1) as f64);
        let mut points = Vec::with_capacity(m);
        let mut r = r_min;
        for _ in 0..m {
            points.push(r);
            r *= ratio;
        }
        Ok(Self { points })
    }
}

/// Radial samples on a log-uniform grid.
#[derive(Clone, Debug)]
pub struct RadialSamples {
    pub grid: RadialGrid,
    pub values: Vec<f64>,
}

impl RadialSamples {
    pub fn new(grid: RadialGrid, values: Vec<f64>) -> Result<Self> {
        if grid.points.len() != values.len() {
            return Err(Error::InvalidParameter(
                "radial sample count does not match grid".into(),
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: RadialGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.points.iter().map(|&r| f(r)).collect();
        Self { grid, values }
    }

    /// Catmull-Rom interpolation in `log r`; constant below the first node,
    /// zero beyond the last.
    pub fn eval(&self, y: f64) -> f64 {
        let pts = &self.grid.points;
        let m = pts.len();
        if y <= pts[0] {
            return self.values[0];
        }
        if y >= pts[m - 1] {
            return 0.0;
        }
        let l0 = pts[0].ln();
        let dl = pts[1].ln() - l0;
        let pos = (y.ln() - l0) / dl;
        let i = (pos.floor() as usize).min(m - 2);
        let t = pos - i as f64;
        let get = |j: isize| -> f64 {
            let jj = (i as isize + j).clamp(0, m as isize - 1) as usize;
            self.values[jj]
        };
        let (p0, p1, p2, p3) = (get(-1), get(0), get(1), get(2));
        0.5 * ((2.0 * p1)
            + (-p0 + p2) * t
            + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
            + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t)
    }

    pub fn r_max(&self) -> f64 {
        *self.grid.points.last().expect("nonempty grid")
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// Both Rooney transforms evaluated on the input grid. `truncation_warning`
/// is set when the sampled tail has not decayed.
#[derive(Clone, Debug)]
pub struct RooneyTransforms {
    pub t1: RadialSamples,
    pub t2: RadialSamples,
    pub truncation_warning: bool,
}

pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    // Newton iteration on P_n; nodes in (-1, 1)
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = pk;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Integrates `kernel(x*y) * f(y)` over `[0, f.r_max()]` with panels no
/// longer than half a kernel period, plus geometric panels near zero.
fn radial_quadrature(
    f: &RadialSamples,
    x: f64,
    kernel: impl Fn(f64) -> f64,
    nodes: &[f64],
    weights: &[f64],
) -> f64 {
    let y_max = f.r_max();
    let half_period = if x > 0.0 {
        std::f64::consts::PI / x
    } else {
        f64::INFINITY
    };
    let y_break = (0.05 * y_max).min(half_period).max(y_max * 1e-7);
    let mut total = 0.0;
    // geometric section toward the origin
    let mut lo = y_break * 2.0f64.powi(-40);
    while lo < y_break {
        let hi = (lo * 2.0).min(y_break);
        total += panel(f, x, &kernel, nodes, weights, lo, hi);
        lo = hi;
    }
    // oscillation-aware section
    let panel_len = half_period.min(y_max / 16.0).max(y_max * 1e-6);
    let mut a = y_break;
    while a < y_max {
        let b = (a + panel_len).min(y_max);
        total += panel(f, x, &kernel, nodes, weights, a, b);
        a = b;
    }
    total
}

fn panel(
    f: &RadialSamples,
    x: f64,
    kernel: &impl Fn(f64) -> f64,
    nodes: &[f64],
    weights: &[f64],
    a: f64,
    b: f64,
) -> f64 {
    let c = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut s = 0.0;
    for (t, w) in nodes.iter().zip(weights) {
        let y = mid + c * t;
        s += w * kernel(x * y) * f.eval(y);
    }
    s * c
}

/// `T1 f` and `T2 f` on the sample grid.
pub fn hankel_rooney_ops(f: &RadialSamples) -> Result<RooneyTransforms> {
    let truncation_warning = {
        let tail = f.values.last().copied().unwrap_or(0.0).abs();
        tail > 1e-8 * f.max_abs().max(1e-300)
    };
    let (nodes, weights) = gauss_legendre(16);
    let xs = f.grid.points.clone();
    let mut t1 = Vec::with_capacity(xs.len());
    let mut t2 = Vec::with_capacity(xs.len());
    for &x in &xs {
        t1.push(radial_quadrature(
            f,
            x,
            |z| bessel_j0(z).unwrap_or(0.0),
            &nodes,
            &weights,
        ));
        t2.push(radial_quadrature(
            f,
            x,
            |z| if z > 0.0 { bessel_y0(z).unwrap_or(0.0) } else { 0.0 },
            &nodes,
            &weights,
        ));
    }
    Ok(RooneyTransforms {
        t1: RadialSamples::new(f.grid.clone(), t1)?,
        t2: RadialSamples::new(f.grid.clone(), t2)?,
        truncation_warning,
    })
}

/// Measure-weighted Hankel transform `g -> int_0^inf J0(xy) g(y) y dy`
/// (self-inverse on suitable functions).
pub fn hankel_weighted(f: &RadialSamples) -> Result<RadialSamples> {
    let (nodes, weights) = gauss_legendre(16);
    let weighted = RadialSamples::new(
        f.grid.clone(),
        f.grid
            .points
            .iter()
            .zip(&f.values)
            .map(|(r, v)| r * v)
            .collect(),
    )?;
    let mut out = Vec::with_capacity(f.grid.points.len());
    for &x in &f.grid.points {
        out.push(radial_quadrature(
            &weighted,
            x,
            |z| bessel_j0(z).unwrap_or(0.0),
            &nodes,
            &weights,
        ));
    }
    RadialSamples::new(f.grid.clone(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_maps_to_zero() {
        let grid = RadialGrid::log_uniform(1e-4, 50.0, 200).unwrap();
        let f = RadialSamples::from_fn(grid, |_| 0.0);
        let out = hankel_rooney_ops(&f).unwrap();
        assert!(out.t1.max_abs() == 0.0 && out.t2.max_abs() == 0.0);
        assert!(!out.truncation_warning);
    }

    #[test]
    fn laplace_pair_for_t1() {
        // T1 e^{-y} = 1 / sqrt(1 + x^2)
        let grid = RadialGrid::log_uniform(1e-4, 60.0, 600).unwrap();
        let f = RadialSamples::from_fn(grid, |y| (-y).exp());
        let out = hankel_rooney_ops(&f).unwrap();
        for (x, t1) in out.t1.grid.points.iter().zip(&out.t1.values) {
            if *x < 0.1 || *x > 20.0 {
                continue;
            }
            let exact = 1.0 / (1.0 + x * x).sqrt();
            let rel = ((t1 - exact) / exact).abs();
            assert!(rel < 1e-6, "x = {x}: rel err {rel}");
        }
    }

    #[test]
    fn t2_laplace_reference() {
        // int_0^inf Y0(xy) e^{-y} dy = -(2/pi) asinh(1/x) / sqrt(1+x^2)
        let grid = RadialGrid::log_uniform(1e-4, 60.0, 400).unwrap();
        let f = RadialSamples::from_fn(grid, |y| (-y).exp());
        let out = hankel_rooney_ops(&f).unwrap();
        for (x, t2) in out.t2.grid.points.iter().zip(&out.t2.values) {
            if *x < 0.5 || *x > 10.0 {
                continue;
            }
            let exact = -(2.0 / std::f64::consts::PI) * (1.0 / x).asinh() / (1.0 + x * x).sqrt();
            let rel = ((t2 - exact) / exact).abs();
            assert!(rel < 1e-5, "x = {x}: t2 {t2} vs {exact}");
        }
    }

    #[test]
    fn truncation_warning_for_fat_tail() {
        let grid = RadialGrid::log_uniform(1e-3, 20.0, 100).unwrap();
        let f = RadialSamples::from_fn(grid, |y| 1.0 / (1.0 + y));
        let out = hankel_rooney_ops(&f).unwrap();
        assert!(out.truncation_warning);
    }

    #[test]
    fn weighted_transform_self_inverse() {
        // smooth, effectively compactly supported bump
        let grid = RadialGrid::log_uniform(1e-4, 40.0, 500).unwrap();
        let f = RadialSamples::from_fn(grid.clone(), |y| (-(y - 3.0) * (y - 3.0)).exp());
        let once = hankel_weighted(&f).unwrap();
        let twice = hankel_weighted(&once).unwrap();
        let mut worst = 0.0f64;
        for ((r, a), b) in grid.points.iter().zip(&f.values).zip(&twice.values) {
            if *r > 8.0 {
                continue;
            }
            worst = worst.max((a - b).abs());
        }
        assert!(worst < 1e-4, "self-inverse defect {worst}");
    }
}
