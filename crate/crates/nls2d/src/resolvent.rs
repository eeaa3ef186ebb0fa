//! Resolvent laboratory: boundary values `R0(lambda +- i0)` of the free
//! resolvent (spectral-regularization and truncated-kernel quadrature
//! paths), the low-energy expansion `R0 = c(lambda) P0 + G0 + E0(lambda)`,
//! the perturbed resolvent through the second resolvent identity, the
//! `M(lambda) = U + v R0 v` operator on the potential support, and measured
//! smoothing constants.
//!
//! The kernel path evaluates the convolution with the Hankel kernel
//! truncated at a radius covering the box; the truncated kernel has a
//! closed-form Fourier transform, so the quadrature inherits spectral
//! accuracy instead of being limited by the logarithmic singularity.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::bessel::{bessel_j0, bessel_j1, bessel_y0, bessel_y1, EULER_GAMMA};
use crate::error::{Error, Result};
use crate::evolution::{evolve_with_policy, free_flow_exact, DriftPolicy, EvolutionConfig};
use crate::grid::{l2_norm, weighted_norm, ComplexField, Grid2D, WeightSpec};
use crate::linalg::gmres;
use crate::spectral::{log_cell_average, project, Potential, SpectralData, SpectralPart};

/// Upper edge of the low-energy window.
pub const LAMBDA1_DEFAULT: f64 = 0.05;

/// Which boundary value `lambda +- i0` is taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }
}

/// `c_{+-}(lambda) = +- i/4 - gamma/(2 pi) - log(lambda/4)/(4 pi)`.
pub fn c_coefficient(lambda: f64, side: Side) -> Complex64 {
    Complex64::new(
        -EULER_GAMMA / (2.0 * std::f64::consts::PI)
            - (lambda / 4.0).ln() / (4.0 * std::f64::consts::PI),
        side.sign() * 0.25,
    )
}

/// Spectral-regularization path: Fourier multiplier
/// `1/(|xi|^2 - lambda -+ i eps)`.
pub fn free_resolvent_spectral(
    f: &ComplexField,
    lambda: f64,
    side: Side,
    eps: f64,
) -> Result<ComplexField> {
    if lambda <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "spectral resolvent path requires lambda > 0, got {lambda} \
             (use the low-energy expansion near zero)"
        )));
    }
    let shift = Complex64::new(lambda, side.sign() * eps);
    Ok(f.apply_multiplier(|k1, k2| {
        Complex64::new(1.0, 0.0) / (Complex64::new(k1 * k1 + k2 * k2, 0.0) - shift)
    }))
}

/// Resolvent applied with the same multiplier but against a general complex
/// spectral parameter (used off the continuous spectrum where no
/// regularization is needed).
pub fn free_resolvent_offaxis(f: &ComplexField, z: Complex64) -> ComplexField {
    f.apply_multiplier(|k1, k2| Complex64::new(1.0, 0.0) / (Complex64::new(k1 * k1 + k2 * k2, 0.0) - z))
}

/// Padded-grid convolution machinery shared by the kernel paths.
struct PaddedConv {
    n: usize,
    m: usize,
    multiplier: Vec<Complex64>,
}

const PAD_FACTOR: usize = 3;

impl PaddedConv {
    /// `multiplier_fn(rho)` is the closed-form transform of the truncated
    /// kernel, sampled on the padded frequency grid.
    fn from_multiplier(grid: &Grid2D, multiplier_fn: impl Fn(f64) -> Complex64) -> Self {
        let n = grid.n();
        let m = PAD_FACTOR * n;
        let h = grid.spacing();
        let dk = 2.0 * std::f64::consts::PI / (m as f64 * h);
        let freq = |i: usize| -> f64 {
            let mm = if i < m / 2 { i as i64 } else { i as i64 - m as i64 };
            dk * mm as f64
        };
        let mut multiplier = Vec::with_capacity(m * m);
        for i1 in 0..m {
            let k1 = freq(i1);
            for i2 in 0..m {
                let k2 = freq(i2);
                multiplier.push(multiplier_fn((k1 * k1 + k2 * k2).sqrt()));
            }
        }
        Self { n, m, multiplier }
    }

    /// Kernel values sampled in physical space (for smooth kernels).
    fn from_kernel(grid: &Grid2D, kernel_fn: impl Fn(f64) -> Complex64) -> Self {
        let n = grid.n();
        let m = PAD_FACTOR * n;
        let h = grid.spacing();
        let mut samples = Vec::with_capacity(m * m);
        for i1 in 0..m {
            let d1 = i1.min(m - i1) as f64 * h;
            for i2 in 0..m {
                let d2 = i2.min(m - i2) as f64 * h;
                samples.push(kernel_fn((d1 * d1 + d2 * d2).sqrt()));
            }
        }
        // multiplier = h^2 * DFT(kernel samples): then conv = ifft(mult * fft(F))
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(m);
        fft2_raw(&mut samples, m, &*fft);
        let h2 = h * h;
        for v in &mut samples {
            *v *= h2;
        }
        Self {
            n,
            m,
            multiplier: samples,
        }
    }

    fn apply(&self, f: &ComplexField) -> ComplexField {
        let n = self.n;
        let m = self.m;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(m);
        let inv = planner.plan_fft_inverse(m);
        let mut buf = vec![Complex64::default(); m * m];
        for i1 in 0..n {
            for i2 in 0..n {
                buf[i1 * m + i2] = f.values()[i1 * n + i2];
            }
        }
        fft2_raw(&mut buf, m, &*fwd);
        for (b, mult) in buf.iter_mut().zip(&self.multiplier) {
            *b *= mult;
        }
        fft2_raw(&mut buf, m, &*inv);
        let scale = 1.0 / (m * m) as f64;
        let mut out = ComplexField::zeros(f.grid());
        for i1 in 0..n {
            for i2 in 0..n {
                out.values_mut()[i1 * n + i2] = buf[i1 * m + i2] * scale;
            }
        }
        out
    }
}

fn fft2_raw(values: &mut [Complex64], m: usize, fft: &dyn rustfft::Fft<f64>) {
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(values, &mut scratch);
    // transpose
    for i in 0..m {
        for j in (i + 1)..m {
            values.swap(i * m + j, j * m + i);
        }
    }
    fft.process_with_scratch(values, &mut scratch);
    for i in 0..m {
        for j in (i + 1)..m {
            values.swap(i * m + j, j * m + i);
        }
    }
}

/// Closed-form transform of the outgoing Hankel kernel truncated at `D`:
/// `2 pi (i/4) { D [rho H0(kD) J1(rho D) - k H1(kD) J0(rho D)] - 2i/pi } / (rho^2 - k^2)`.
fn helmholtz_truncated_multiplier(rho: f64, k: f64, d: f64) -> Complex64 {
    let h0 = Complex64::new(bessel_j0(k * d).unwrap(), bessel_y0(k * d).unwrap());
    let h1 = Complex64::new(bessel_j1(k * d).unwrap(), bessel_y1(k * d).unwrap());
    let den = rho * rho - k * k;
    let pref = 2.0 * std::f64::consts::PI * Complex64::new(0.0, 0.25);
    if den.abs() > 1e-8 * k * k {
        let num = d * (rho * h0 * bessel_j1(rho * d).unwrap() - k * h1 * bessel_j0(rho * d).unwrap())
            - Complex64::new(0.0, 2.0 / std::f64::consts::PI);
        pref * num / den
    } else {
        // removable singularity at rho = k: N'(k) / (2 k)
        let j1 = bessel_j1(rho * d).unwrap();
        let j1p = bessel_j0(rho * d).unwrap() - j1 / (rho * d);
        let dn = d * (h0 * j1 + rho * d * h0 * j1p + k * d * h1 * j1);
        pref * dn / (2.0 * rho)
    }
}

/// Free-resolvent boundary value by truncated-kernel quadrature (the
/// validation path; spectrally accurate for localized data).
pub fn free_resolvent_kernel(f: &ComplexField, k: f64, side: Side) -> Result<ComplexField> {
    if k <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "kernel resolvent path requires k > 0, got {k}"
        )));
    }
    f.ensure_finite("free resolvent input")?;
    let grid = f.grid();
    let d = grid.l_dom() * std::f64::consts::SQRT_2 * 1.0001;
    match side {
        Side::Plus => {
            let conv =
                PaddedConv::from_multiplier(grid, |rho| helmholtz_truncated_multiplier(rho, k, d));
            Ok(conv.apply(f))
        }
        Side::Minus => {
            // R0(l - i0) f = conj(R0(l + i0) conj f)
            let conv =
                PaddedConv::from_multiplier(grid, |rho| helmholtz_truncated_multiplier(rho, k, d));
            Ok(conv.apply(&f.conj()).conj())
        }
    }
}

/// `G0 = (-Delta)^{-1}` with kernel `-(2 pi)^{-1} log|x-y|`, via the
/// truncated-kernel transform
/// `-(D log D / rho) J1(rho D) + (1 - J0(rho D))/rho^2`.
pub fn g0_apply(f: &ComplexField) -> Result<ComplexField> {
    f.ensure_finite("G0 input")?;
    let grid = f.grid();
    let d = grid.l_dom() * std::f64::consts::SQRT_2 * 1.0001;
    let conv = PaddedConv::from_multiplier(grid, |rho| {
        if rho * d > 1e-6 {
            let val = -(d * d.ln() / rho) * bessel_j1(rho * d).unwrap()
                + (1.0 - bessel_j0(rho * d).unwrap()) / (rho * rho);
            Complex64::new(val, 0.0)
        } else {
            Complex64::new(-(d * d * d.ln() / 2.0 - d * d / 4.0), 0.0)
        }
    });
    Ok(conv.apply(f))
}

/// `P0 f = <f, 1> * 1` (rank-one, bilinear pairing).
pub fn p0_apply(f: &ComplexField) -> Result<ComplexField> {
    let total = crate::grid::inner_bilinear(
        f,
        &ComplexField::from_fn(f.grid(), |_, _| Complex64::new(1.0, 0.0)),
    )?;
    Ok(ComplexField::from_fn(f.grid(), |_, _| total))
}

/// Smooth remainder kernel
/// `e0(r) = (i s/4)(J0(kr) - 1) - (1/4)[Y0(kr) - (2/pi)(log(kr/2) + gamma)]`.
fn e0_kernel(r: f64, k: f64, side: Side) -> Complex64 {
    if r == 0.0 {
        return Complex64::default();
    }
    let z = k * r;
    let j = bessel_j0(z).unwrap();
    let y = bessel_y0(z).unwrap();
    let y_reg = y - 2.0 / std::f64::consts::PI * ((0.5 * z).ln() + EULER_GAMMA);
    Complex64::new(-0.25 * y_reg, side.sign() * 0.25 * (j - 1.0))
}

/// Applies the low-energy remainder `E0(lambda) = R0 - c P0 - G0` directly
/// through its smooth kernel.
pub fn e0_remainder_apply(f: &ComplexField, lambda: f64, side: Side) -> Result<ComplexField> {
    let k = lambda.sqrt();
    let conv = PaddedConv::from_kernel(f.grid(), |r| e0_kernel(r, k, side));
    Ok(conv.apply(f))
}

/// Measured low-energy expansion at one `lambda`.
#[derive(Clone, Debug)]
pub struct LowEnergyExpansion {
    pub lambda: f64,
    pub c_plus: Complex64,
    pub c_minus: Complex64,
    /// Per-probe weighted ratios `|E0 f|_{2,-s} / |f|_{2,s}` for each side.
    pub remainder_plus: Vec<(String, f64)>,
    pub remainder_minus: Vec<(String, f64)>,
    pub max_remainder_plus: f64,
    pub max_remainder_minus: f64,
}

pub fn low_energy_expansion(
    lambda: f64,
    s: f64,
    probes: &[(String, ComplexField)],
) -> Result<LowEnergyExpansion> {
    if !(lambda > 0.0 && lambda <= LAMBDA1_DEFAULT) {
        return Err(Error::InvalidParameter(format!(
            "low-energy expansion requires 0 < lambda <= {LAMBDA1_DEFAULT}, got {lambda}"
        )));
    }
    let w_minus = WeightSpec::new(s, -1)?;
    let w_plus = WeightSpec::new(s, 1)?;
    let mut rem_p = Vec::new();
    let mut rem_m = Vec::new();
    for (name, f) in probes {
        let den = weighted_norm(f, w_plus, 0);
        let ep = e0_remainder_apply(f, lambda, Side::Plus)?;
        let em = e0_remainder_apply(f, lambda, Side::Minus)?;
        rem_p.push((name.clone(), weighted_norm(&ep, w_minus, 0) / den));
        rem_m.push((name.clone(), weighted_norm(&em, w_minus, 0) / den));
    }
    let max_p = rem_p.iter().map(|(_, r)| *r).fold(0.0, f64::max);
    let max_m = rem_m.iter().map(|(_, r)| *r).fold(0.0, f64::max);
    Ok(LowEnergyExpansion {
        lambda,
        c_plus: c_coefficient(lambda, Side::Plus),
        c_minus: c_coefficient(lambda, Side::Minus),
        remainder_plus: rem_p,
        remainder_minus: rem_m,
        max_remainder_plus: max_p,
        max_remainder_minus: max_m,
    })
}

/// Perturbed resolvent `R(lambda +- i0) f` through the identity
/// `(I + R0 V) g = R0 f`, solved by GMRES.
pub fn perturbed_resolvent_apply(
    f: &ComplexField,
    lambda: f64,
    side: Side,
    pot: &Potential,
    e_star: f64,
    eps: f64,
) -> Result<ComplexField> {
    if lambda.abs() < 1e-3 || (lambda - e_star).abs() < 1e-3 {
        return Err(Error::InvalidParameter(format!(
            "lambda = {lambda} too close to zero or to the eigenvalue {e_star}"
        )));
    }
    let rhs = free_resolvent_spectral(f, lambda, side, eps)?;
    let apply = |g: &ComplexField| {
        let mut vg = g.clone();
        for (val, v) in vg.values_mut().iter_mut().zip(pot.values()) {
            *val *= v;
        }
        let mut out = free_resolvent_spectral(&vg, lambda, side, eps).expect("lambda checked");
        out.axpy(Complex64::new(1.0, 0.0), g);
        out
    };
    let (g, res) = gmres(apply, &rhs, None, 1e-9, 60, 12)?;
    // resolvent identity defect, relative to the data
    let mut defect = apply(&g);
    defect.axpy(Complex64::new(-1.0, 0.0), &rhs);
    let rel = l2_norm(&defect) / l2_norm(&rhs).max(1e-300);
    if rel > 1e-6 {
        return Err(Error::ConvergenceFailure {
            context: format!("perturbed resolvent at lambda = {lambda} (gmres res {res:.3e})"),
            residual: rel,
        });
    }
    Ok(g)
}

/// The six standard probe fields. The set spans slow Gaussians, an
/// off-center bump, an oscillatory packet, a thin ring (broad radial
/// spectrum) and a seeded band-limited random field so that sweeps up to
/// `lambda ~ 60` keep spectral content near the sphere.
pub fn probe_set(grid: &Grid2D) -> Vec<(String, ComplexField)> {
    let gauss1 = ComplexField::gaussian(grid, (0.0, 0.0), 1.0, 1.0);
    let gauss2 = ComplexField::gaussian(grid, (0.0, 0.0), 2.0, 1.0);
    let off = ComplexField::gaussian(grid, (4.0, 0.0), 1.5, 1.0);
    let osc = ComplexField::from_fn(grid, |x, y| {
        Complex64::from_polar(1.0, 3.0 * x) * (-(x * x + y * y)).exp()
    });
    let ring = ComplexField::from_fn(grid, |x, y| {
        let r = (x * x + y * y).sqrt();
        Complex64::new((-(r - 3.0) * (r - 3.0) / 0.125).exp(), 0.0)
    });
    let mut rng = crate::rng::seeded(42);
    let mut band = crate::rng::smooth_field(grid, &mut rng, 8.0);
    for i1 in 0..grid.n() {
        for i2 in 0..grid.n() {
            let r2 = grid.r2(i1, i2);
            band.values_mut()[grid.index(i1, i2)] *= (-r2 / 4.5).exp();
        }
    }
    let nb = l2_norm(&band);
    band.scale(Complex64::new(1.0 / nb, 0.0));
    vec![
        ("gauss_w1".to_string(), gauss1),
        ("gauss_w2".to_string(), gauss2),
        ("gauss_off".to_string(), off),
        ("osc_3x1".to_string(), osc),
        ("ring_r3".to_string(), ring),
        ("band_limited".to_string(), band),
    ]
}

/// Desk-scale form of the free-resolvent square-integrability in `lambda`:
/// `sup_x (int |R0(k^2 + i0) f(x)|^2 2k dk)^{1/2}` over a point set.
pub fn sup_l2_lambda(f: &ComplexField, k_grid: &[f64], points: &[(f64, f64)]) -> Result<f64> {
    if k_grid.len() < 2 {
        return Err(Error::InvalidParameter("need at least two k samples".into()));
    }
    let grid = f.grid();
    let idx: Vec<usize> = points
        .iter()
        .map(|&(x, y)| grid.nearest_index(x, y))
        .collect();
    let mut acc = vec![0.0f64; idx.len()];
    let mut prev: Option<(f64, Vec<f64>)> = None;
    for &k in k_grid {
        let u = free_resolvent_kernel(f, k, Side::Plus)?;
        let vals: Vec<f64> = idx.iter().map(|&j| u.values()[j].norm_sqr() * 2.0 * k).collect();
        if let Some((k_prev, vals_prev)) = &prev {
            let dk = k - k_prev;
            for (a, (v0, v1)) in acc.iter_mut().zip(vals_prev.iter().zip(&vals)) {
                *a += 0.5 * dk * (v0 + v1);
            }
        }
        prev = Some((k, vals));
    }
    Ok(acc.iter().cloned().fold(0.0, f64::max).sqrt())
}

/// One row of a smoothing-constant table.
#[derive(Clone, Debug)]
pub struct SmoothingEntry {
    pub name: String,
    pub constant: f64,
    pub constant_half: f64,
    /// Self-convergence flag: `constant(T) / constant(T/2)`.
    pub ratio: f64,
    /// Set when the ratio indicates recurrence contamination (> 1.05).
    pub flagged: bool,
}

/// Measured constants of the weighted space-time estimate
/// `|<x>^{-s} e^{-itL} P_c f|_{L^2_{t,x}(0,T)} <= C |f|_{L^2}` per probe.
pub fn smoothing_report(
    pot: &Potential,
    sd: &SpectralData,
    probes: &[(String, ComplexField)],
    t_final: f64,
    s: f64,
    dt: f64,
) -> Result<Vec<SmoothingEntry>> {
    let w_minus = WeightSpec::new(s, -1)?;
    let sample_every = (0.1 / dt).round().max(1.0) as usize;
    let mut out = Vec::new();
    for (name, f) in probes {
        let pc = project(f, SpectralPart::Continuous, sd)?;
        let fnorm = l2_norm(f);
        let cfg = EvolutionConfig::new(dt, t_final, sample_every)?;
        let mut acc = 0.0f64;
        let mut acc_half = 0.0f64;
        let mut prev: Option<(f64, f64)> = None;
        let mut sample = |t: f64, u: &ComplexField| -> Result<()> {
            let val = weighted_norm(u, w_minus, 0).powi(2);
            if let Some((t0, v0)) = prev {
                let inc = 0.5 * (t - t0) * (v0 + val);
                acc += inc;
                if t <= 0.5 * t_final {
                    acc_half += inc;
                }
            }
            prev = Some((t, val));
            Ok(())
        };
        evolve_with_policy(&pc, pot, 0.0, 3.0, &cfg, DriftPolicy::MassOnly, &mut sample)?;
        let constant = (acc.sqrt()) / fnorm;
        let constant_half = (acc_half.sqrt()) / fnorm;
        let ratio = if constant_half > 0.0 {
            constant / constant_half
        } else {
            f64::INFINITY
        };
        out.push(SmoothingEntry {
            name: name.clone(),
            constant,
            constant_half,
            ratio,
            flagged: ratio > 1.05,
        });
    }
    Ok(out)
}

/// Free-flow variant: `sup_x (int_0^T |e^{it Delta} f(x)|^2 dt)^{1/2} / |f|_2`
/// over a point set, with the exact spectral propagator per sample time.
pub fn free_smoothing_sup_constant(
    f: &ComplexField,
    t_final: f64,
    dt_sample: f64,
    points: &[(f64, f64)],
) -> f64 {
    let grid = f.grid();
    let idx: Vec<usize> = points
        .iter()
        .map(|&(x, y)| grid.nearest_index(x, y))
        .collect();
    let steps = (t_final / dt_sample).round() as usize;
    let mut acc = vec![0.0f64; idx.len()];
    let hat0 = f.to_spectral();
    let n = grid.n();
    let mut planner_grid = grid.clone();
    let _ = &mut planner_grid;
    for srec in 0..=steps {
        let t = srec as f64 * dt_sample;
        let mut hat = hat0.clone();
        for i1 in 0..n {
            let k1 = grid.wavenumber(i1);
            for i2 in 0..n {
                let k2 = grid.wavenumber(i2);
                hat[i1 * n + i2] *= Complex64::from_polar(1.0, -(k1 * k1 + k2 * k2) * t);
            }
        }
        let u = ComplexField::from_spectral(grid, hat);
        let w = if srec == 0 || srec == steps { 0.5 } else { 1.0 };
        for (a, &j) in acc.iter_mut().zip(&idx) {
            *a += w * dt_sample * u.values()[j].norm_sqr();
        }
    }
    let sup = acc.iter().cloned().fold(0.0, f64::max).sqrt();
    sup / l2_norm(f)
}

/// Retarded-estimate measurement: evolves
/// `w(t) = int_0^t e^{-i(t-s)L} P_c g(s) ds` for `g(s, x) = a(s) G(x)` and
/// returns the ratio `|w|_{L^2_t H^{1,-s}} / |g|_{L^2_t H^{1,s}}`.
pub fn retarded_estimate_constant(
    pot: &Potential,
    sd: &SpectralData,
    source: &ComplexField,
    envelope: impl Fn(f64) -> Complex64,
    t_final: f64,
    s: f64,
    dt: f64,
) -> Result<f64> {
    let w_minus = WeightSpec::new(s, -1)?;
    let w_plus = WeightSpec::new(s, 1)?;
    let pc_src = project(source, SpectralPart::Continuous, sd)?;
    let src_h1s = weighted_norm(&pc_src, w_plus, 1);
    let stepper_cfg = EvolutionConfig::new(dt, t_final, 1)?;
    let steps = stepper_cfg.steps();
    let mut w = ComplexField::zeros(pot.grid());
    let mut acc_num = 0.0f64;
    let mut acc_den = 0.0f64;
    let mut prev_num = 0.0f64;
    let mut prev_den = envelope(0.0).norm_sqr() * src_h1s * src_h1s;
    // midpoint-source Duhamel step: w <- U_dt w + dt U_{dt/2} P_c g(t + dt/2)
    for step in 0..steps {
        let t = step as f64 * dt;
        let w_full = crate::evolution::linear_flow(&w, pot, dt, false, None, dt)?;
        let mut src = pc_src.scaled(envelope(t + 0.5 * dt) * dt);
        src = crate::evolution::linear_flow(&src, pot, 0.5 * dt, false, None, 0.5 * dt)?;
        w = w_full;
        w.axpy(Complex64::new(1.0, 0.0), &src);
        let num = weighted_norm(&w, w_minus, 1).powi(2);
        let den = envelope(t + dt).norm_sqr() * src_h1s * src_h1s;
        acc_num += 0.5 * dt * (prev_num + num);
        acc_den += 0.5 * dt * (prev_den + den);
        prev_num = num;
        prev_den = den;
    }
    Ok(acc_num.sqrt() / acc_den.sqrt().max(1e-300))
}

/// Mixed-estimate measurement: Strichartz norm `L^q_t W^{1,r}_x` of the same
/// Duhamel integral against `|g|_{L^2_t H^{1,s}}`, `(q, r) = (3, 6)`.
pub fn mixed_estimate_constant(
    pot: &Potential,
    sd: &SpectralData,
    source: &ComplexField,
    envelope: impl Fn(f64) -> Complex64,
    t_final: f64,
    s: f64,
    dt: f64,
) -> Result<f64> {
    let w_plus = WeightSpec::new(s, 1)?;
    let pc_src = project(source, SpectralPart::Continuous, sd)?;
    let src_h1s = weighted_norm(&pc_src, w_plus, 1);
    let cfg = EvolutionConfig::new(dt, t_final, 1)?;
    let steps = cfg.steps();
    let q = 3.0;
    let r = 6.0;
    let mut w = ComplexField::zeros(pot.grid());
    let mut acc_num = 0.0f64;
    let mut acc_den = 0.0f64;
    let mut prev_num = 0.0f64;
    let mut prev_den = envelope(0.0).norm_sqr() * src_h1s * src_h1s;
    for step in 0..steps {
        let t = step as f64 * dt;
        let w_full = crate::evolution::linear_flow(&w, pot, dt, false, None, dt)?;
        let mut src = pc_src.scaled(envelope(t + 0.5 * dt) * dt);
        src = crate::evolution::linear_flow(&src, pot, 0.5 * dt, false, None, 0.5 * dt)?;
        w = w_full;
        w.axpy(Complex64::new(1.0, 0.0), &src);
        let num = crate::grid::w1p_norm(&w, r).powf(q);
        let den = envelope(t + dt).norm_sqr() * src_h1s * src_h1s;
        acc_num += 0.5 * dt * (prev_num + num);
        acc_den += 0.5 * dt * (prev_den + den);
        prev_num = num;
        prev_den = den;
    }
    Ok(acc_num.powf(1.0 / q) / acc_den.sqrt().max(1e-300))
}

/// Support-node data for `M(lambda)` and the `Q D0 Q` comparison.
struct SupportData {
    xs: Vec<(f64, f64)>,
    v: Vec<f64>,
    u_sign: Vec<f64>,
    cell: f64,
    h: f64,
}

fn support_data(pot: &Potential) -> Result<SupportData> {
    let grid = pot.grid();
    let n = grid.n();
    let mut xs = Vec::new();
    let mut v = Vec::new();
    let mut u_sign = Vec::new();
    for idx in 0..grid.num_nodes() {
        let val = pot.values()[idx];
        if val.abs() > 1e-12 {
            xs.push((grid.coord(idx / n), grid.coord(idx % n)));
            v.push(val.abs().sqrt());
            u_sign.push(if val >= 0.0 { 1.0 } else { -1.0 });
        }
    }
    if xs.is_empty() {
        return Err(Error::EmptySupport);
    }
    Ok(SupportData {
        xs,
        v,
        u_sign,
        cell: grid.cell_area(),
        h: grid.spacing(),
    })
}

/// Entry `(i, j)` of `v R0(lambda +- i0) v` on the support nodes, built from
/// the Hankel kernel with the exact cell average on the diagonal.
fn m_kernel_entry(sup: &SupportData, k: f64, side: Side, i: usize, j: usize) -> Complex64 {
    let s = side.sign();
    let kernel = if i == j {
        // cell-averaged (i s/4) H0(kr): J0 ~ 1 over the cell, Y0 averaged
        // through its logarithm
        let y_avg = 2.0 / std::f64::consts::PI
            * ((0.5 * k).ln() + EULER_GAMMA + log_cell_average(sup.h));
        Complex64::new(-0.25 * y_avg, s * 0.25)
    } else {
        let dx = sup.xs[i].0 - sup.xs[j].0;
        let dy = sup.xs[i].1 - sup.xs[j].1;
        let z = k * (dx * dx + dy * dy).sqrt();
        Complex64::new(
            -0.25 * bessel_y0(z).unwrap(),
            s * 0.25 * bessel_j0(z).unwrap(),
        )
    };
    sup.v[i] * kernel * sup.v[j] * sup.cell
}

/// Scalar singular channel `<v_hat, M(lambda) v_hat>`.
pub fn m_scalar_channel(pot: &Potential, lambda: f64, side: Side) -> Result<Complex64> {
    let sup = support_data(pot)?;
    let k = lambda.sqrt();
    let m = sup.v.len();
    let vnorm2: f64 = sup.v.iter().map(|x| x * x).sum();
    let mut acc = Complex64::default();
    for i in 0..m {
        // diagonal U contribution
        acc += sup.u_sign[i] * sup.v[i] * sup.v[i] / vnorm2;
        for j in 0..m {
            acc += sup.v[i] / vnorm2.sqrt() * m_kernel_entry(&sup, k, side, i, j) / vnorm2.sqrt()
                * sup.v[j];
        }
    }
    Ok(acc)
}

/// Relative Frobenius difference between `Q M(lambda) Q` and `D0`.
pub fn m_qd0q_relative_difference(pot: &Potential, lambda: f64, side: Side) -> Result<f64> {
    let asm = crate::spectral::assemble_d0(pot)?;
    let sup = support_data(pot)?;
    let k = lambda.sqrt();
    let m = sup.v.len();
    let mut mmat = nalgebra::DMatrix::<Complex64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            mmat[(i, j)] = m_kernel_entry(&sup, k, side, i, j);
        }
        mmat[(i, i)] += Complex64::new(sup.u_sign[i], 0.0);
    }
    // Q = I - vhat vhat^T
    let vnorm = sup.v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let vhat: Vec<f64> = sup.v.iter().map(|x| x / vnorm).collect();
    let project_q = |mat: &mut nalgebra::DMatrix<Complex64>| {
        // M <- Q M Q applied as rank-one updates
        let mv: Vec<Complex64> = (0..m)
            .map(|i| (0..m).map(|j| mat[(i, j)] * vhat[j]).sum())
            .collect();
        let vm: Vec<Complex64> = (0..m)
            .map(|j| (0..m).map(|i| vhat[i] * mat[(i, j)]).sum())
            .collect();
        let vmv: Complex64 = (0..m).map(|i| vhat[i] * mv[i]).sum();
        for i in 0..m {
            for j in 0..m {
                mat[(i, j)] += -mv[i] * vhat[j] - vhat[i] * vm[j] + vhat[i] * vmv * vhat[j];
            }
        }
    };
    project_q(&mut mmat);
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            let d = Complex64::new(asm.d0[(i, j)], 0.0);
            num += (mmat[(i, j)] - d).norm_sqr();
            den += d.norm_sqr();
        }
    }
    Ok((num / den).sqrt())
}

/// Log fit of the scalar channel over a `lambda` set.
#[derive(Clone, Debug)]
pub struct MOperatorFit {
    pub side: Side,
    pub lambdas: Vec<f64>,
    pub scalars: Vec<Complex64>,
    /// Fitted `h(lambda) ~ a log lambda + z` with real `a`.
    pub a: f64,
    pub z: Complex64,
    pub fit_residual: f64,
    pub warning: bool,
}

pub fn m_operator_fit(pot: &Potential, lambda_set: &[f64], side: Side) -> Result<MOperatorFit> {
    if lambda_set.len() < 3 {
        return Err(Error::InvalidParameter("need at least three lambdas for the fit".into()));
    }
    if lambda_set
        .iter()
        .any(|&l| !(l > 0.0 && l <= LAMBDA1_DEFAULT))
    {
        return Err(Error::InvalidParameter(format!(
            "m-operator fit requires lambdas in (0, {LAMBDA1_DEFAULT}]"
        )));
    }
    let mut scalars = Vec::with_capacity(lambda_set.len());
    for &l in lambda_set {
        scalars.push(m_scalar_channel(pot, l, side)?);
    }
    // least squares for a (real) and z (complex)
    let xs: Vec<f64> = lambda_set.iter().map(|l| l.ln()).collect();
    let xbar = xs.iter().sum::<f64>() / xs.len() as f64;
    let ybar = scalars.iter().sum::<Complex64>() / xs.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(&scalars) {
        num += (x - xbar) * (y - ybar).re;
        den += (x - xbar) * (x - xbar);
    }
    let a = num / den;
    let z = ybar - Complex64::new(a * xbar, 0.0);
    let mut res2 = 0.0;
    let mut tot2 = 0.0;
    for (x, y) in xs.iter().zip(&scalars) {
        res2 += (Complex64::new(a * x, 0.0) + z - y).norm_sqr();
        tot2 += y.norm_sqr();
    }
    let fit_residual = (res2 / tot2).sqrt();
    Ok(MOperatorFit {
        side,
        lambdas: lambda_set.to_vec(),
        scalars,
        a,
        z,
        fit_residual,
        warning: fit_residual > 0.2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn c_coefficient_examples() {
        // log(lambda/4) vanishes at lambda = 4 (formula check outside the
        // low-energy window)
        let c = c_coefficient(4.0, Side::Plus);
        assert_relative_eq!(c.im, 0.25, epsilon = 1e-15);
        assert_relative_eq!(
            c.re,
            -EULER_GAMMA / (2.0 * std::f64::consts::PI),
            epsilon = 1e-15
        );
        for l in [1e-3, 1e-2, 0.04] {
            let p = c_coefficient(l, Side::Plus);
            let m = c_coefficient(l, Side::Minus);
            assert_eq!(p.conj(), m);
        }
    }

    #[test]
    fn spectral_path_properties() {
        let grid = Grid2D::new(64, 30.0).unwrap();
        let f = ComplexField::gaussian(&grid, (0.0, 0.0), 1.0, 1.0);
        // conjugation symmetry R0(l-i0) f = conj(R0(l+i0) conj f)
        let a = free_resolvent_spectral(&f, 2.0, Side::Minus, 0.05).unwrap();
        let b = free_resolvent_spectral(&f.conj(), 2.0, Side::Plus, 0.05)
            .unwrap()
            .conj();
        assert!(a.sub(&b).unwrap().max_abs() < 1e-13);
        // limiting absorption sign on both sides
        let ip_plus = crate::grid::inner_sesquilinear(
            &free_resolvent_spectral(&f, 2.0, Side::Plus, 0.05).unwrap(),
            &f,
        )
        .unwrap();
        let ip_minus = crate::grid::inner_sesquilinear(&a, &f).unwrap();
        assert!(ip_plus.im >= 0.0, "Im <R0+ f, f> = {}", ip_plus.im);
        assert!(ip_minus.im <= 0.0, "Im <R0- f, f> = {}", ip_minus.im);
    }

    #[test]
    fn kernel_path_conjugation() {
        let grid = Grid2D::new(64, 30.0).unwrap();
        let f = ComplexField::from_fn(&grid, |x, y| {
            Complex64::new((-(x * x + y * y) / 2.0).exp(), 0.1 * x * (-(x * x + y * y)).exp())
        });
        let a = free_resolvent_kernel(&f, 1.5, Side::Minus).unwrap();
        let b = free_resolvent_kernel(&f.conj(), 1.5, Side::Plus).unwrap().conj();
        assert!(a.sub(&b).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn g0_inverts_laplacian_on_mean_free_data() {
        let grid = Grid2D::new(128, 30.0).unwrap();
        // mean-free localized data: Laplacian of a Gaussian
        let g = ComplexField::gaussian(&grid, (0.0, 0.0), 1.2, 1.0);
        let f = crate::grid::laplacian_apply(&g).unwrap();
        let back = g0_apply(&f).unwrap();
        // -Delta G0 f = f, so G0 (Delta g) = -g up to a constant; compare
        // gradients to kill the constant ambiguity
        let (bx, by) = crate::grid::gradient(&back);
        let (gx, gy) = crate::grid::gradient(&g);
        let ex = bx.add(&gx).unwrap().max_abs();
        let ey = by.add(&gy).unwrap().max_abs();
        assert!(ex < 1e-6 && ey < 1e-6, "G0 gradient errors {ex}, {ey}");
    }

    #[test]
    fn low_energy_window_enforced() {
        let grid = Grid2D::new(64, 30.0).unwrap();
        let probes = vec![("g".to_string(), ComplexField::gaussian(&grid, (0.0, 0.0), 1.0, 1.0))];
        assert!(low_energy_expansion(0.1, 1.5, &probes).is_err());
        let le = low_energy_expansion(0.01, 1.5, &probes).unwrap();
        assert_eq!(le.c_minus, le.c_plus.conj());
        assert!(le.max_remainder_plus > 0.0);
    }

    #[test]
    fn m_conjugation_symmetry() {
        let grid = Grid2D::new(32, 12.0).unwrap();
        let pot = Potential::gaussian_well(&grid, 5.0, 1.0);
        let mp = m_scalar_channel(&pot, 0.01, Side::Plus).unwrap();
        let mm = m_scalar_channel(&pot, 0.01, Side::Minus).unwrap();
        assert!((mp.conj() - mm).norm() < 1e-12);
    }
}
