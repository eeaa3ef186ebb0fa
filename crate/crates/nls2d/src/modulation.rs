//! Soliton + radiation decomposition `u = e^{-i theta} (phi_E + v)` under
//! the orthogonality constraints `<Re v, phi_E> = <Im v, d_E phi_E> = 0`,
//! the 2x2 modulation system for `(dE/dt, d theta/dt - E)`, the nonlinear
//! source terms, and the running diagnostic norms `M1..M5`.

use num_complex::Complex64;

use crate::bound::{BoundStateProfile, ProfileSolver};
use crate::error::{Error, Result};
use crate::grid::{
    h1_norm, inner_real, l2_norm, lp_norm, w1p_norm, weighted_norm, ComplexField, WeightSpec,
};
use crate::spectral::{project, SpectralData, SpectralPart};

/// Local model of the branch around one exactly-solved profile: the profile
/// itself is refreshed at every decompose call, while the FD derivatives are
/// reused within a trust radius in `E`.
pub struct ProfileModel {
    base: BoundStateProfile,
    /// Center of the derivative stencil.
    deriv_e: f64,
    /// Radius in `E` within which the stored derivatives are trusted.
    pub deriv_radius: f64,
}

impl ProfileModel {
    pub fn new(base: BoundStateProfile) -> Self {
        let deriv_e = base.e;
        Self {
            base,
            deriv_e,
            deriv_radius: 5e-3,
        }
    }

    pub fn base(&self) -> &BoundStateProfile {
        &self.base
    }

    /// Quadratic prediction of `phi_E`.
    fn predict_phi(&self, e: f64) -> ComplexField {
        let de = e - self.base.e;
        let mut out = self.base.phi.clone();
        out.axpy(Complex64::new(de, 0.0), &self.base.dphi_de);
        out.axpy(Complex64::new(0.5 * de * de, 0.0), &self.base.d2phi_de2);
        out
    }

    fn predict_dphi(&self, e: f64) -> ComplexField {
        let de = e - self.base.e;
        let mut out = self.base.dphi_de.clone();
        out.axpy(Complex64::new(de, 0.0), &self.base.d2phi_de2);
        out
    }

    /// Re-solves the profile exactly at `e` (warm-started from the model)
    /// and refreshes the derivative stencil when `e` has drifted out of the
    /// trust radius.
    pub fn refresh(&mut self, solver: &ProfileSolver, e: f64) -> Result<()> {
        if (e - self.deriv_e).abs() > self.deriv_radius {
            self.base = solver.profile(e, Some(&self.predict_phi(e)))?;
            self.deriv_e = e;
            return Ok(());
        }
        let seed = self.predict_phi(e);
        let (phi, residual, _) = solver.solve_profile(e, &seed)?;
        let de = e - self.base.e;
        let mut dphi = self.base.dphi_de.clone();
        dphi.axpy(Complex64::new(de, 0.0), &self.base.d2phi_de2);
        self.base = BoundStateProfile {
            e,
            phi,
            dphi_de: dphi,
            d2phi_de2: self.base.d2phi_de2.clone(),
            alpha: self.base.alpha,
            p: self.base.p,
            residual,
        };
        Ok(())
    }
}

/// Decomposition of one snapshot.
#[derive(Clone, Debug)]
pub struct ModulationState {
    pub t: f64,
    pub e: f64,
    pub theta: f64,
    /// Radiation in the rotated frame: `v = e^{i theta} u - phi_E`.
    pub v: ComplexField,
    /// Gauged radiation `w = e^{-i theta} v`.
    pub w: ComplexField,
    pub profile: BoundStateProfile,
    pub constraint_residual: f64,
    /// Reconstruction defect `|u - e^{-i theta}(phi_E + v)|_{L^2}`.
    pub reconstruction_residual: f64,
    /// Condition number of the 2x2 constraint Jacobian at the solution.
    pub jacobian_condition: f64,
}

/// Fraction of the soliton norm within which the decomposition is trusted.
pub const TUBE_RADIUS_FACTOR: f64 = 0.2;

fn constraints(
    u: &ComplexField,
    e_theta: (f64, f64),
    phi: &ComplexField,
    dphi: &ComplexField,
) -> Result<(f64, f64, ComplexField)> {
    let (_, theta) = e_theta;
    let rot = Complex64::from_polar(1.0, theta);
    let mut v = u.scaled(rot);
    v.axpy(Complex64::new(-1.0, 0.0), phi);
    let c1 = inner_real(&v, phi)?;
    let c2 = inner_real(&v.imag_part(), dphi)?;
    Ok((c1, c2, v))
}

/// Two-variable Newton for `(E, theta)` driving the constraints to zero.
///
/// The caller supplies a warm guess (typically the previous snapshot); the
/// profile model is refreshed so the returned state is evaluated against an
/// exactly solved `phi_E`.
pub fn decompose(
    u: &ComplexField,
    t: f64,
    solver: &ProfileSolver,
    model: &mut ProfileModel,
    guess: (f64, f64),
) -> Result<ModulationState> {
    let (mut e, mut theta) = guess;
    // tube precondition at the guess
    {
        let phi_g = model.predict_phi(e);
        let rot = Complex64::from_polar(1.0, theta);
        let mut diff = u.scaled(rot);
        diff.axpy(Complex64::new(-1.0, 0.0), &phi_g);
        let tube = TUBE_RADIUS_FACTOR * l2_norm(&phi_g);
        if l2_norm(&diff) > tube {
            return Err(Error::DecompositionLost {
                t,
                detail: format!(
                    "distance to the soliton tube {:.3e} exceeds {:.3e}",
                    l2_norm(&diff),
                    tube
                ),
            });
        }
    }
    let scale = l2_norm(u).max(1e-300);
    let mut jac_cond = f64::NAN;
    // stage 1: cheap Newton on the quadratic model
    for _ in 0..40 {
        let phi = model.predict_phi(e);
        let dphi = model.predict_dphi(e);
        let (c1, c2, v) = constraints(u, (e, theta), &phi, &dphi)?;
        let (de, dth, cond) = newton_update(&phi, &dphi, &model.base.d2phi_de2, &v, c1, c2)?;
        jac_cond = cond;
        e -= de;
        theta -= dth;
        if de.abs() + dth.abs() < 1e-13 {
            break;
        }
    }
    // stage 2: polish against exactly solved profiles, driving the
    // constraints below the invariant bound they are validated with
    let mut state = None;
    for _ in 0..6 {
        model.refresh(solver, e)?;
        let phi = &model.base.phi;
        let dphi = &model.base.dphi_de;
        let (c1, c2, v) = constraints(u, (e, theta), phi, dphi)?;
        let tol = 0.25 * constraint_bound(&v, phi, scale);
        if c1.abs() < tol && c2.abs() < tol {
            state = Some((c1, c2, v));
            break;
        }
        let (de, dth, cond) = newton_update(phi, dphi, &model.base.d2phi_de2, &v, c1, c2)?;
        jac_cond = cond;
        e -= de;
        theta -= dth;
        state = None;
    }
    let (c1, c2, v) = match state {
        Some(s) => s,
        None => {
            // final evaluation after the last update
            model.refresh(solver, e)?;
            let (c1, c2, v) = constraints(u, (e, theta), &model.base.phi, &model.base.dphi_de)?;
            let tol = constraint_bound(&v, &model.base.phi, scale);
            if c1.abs() > tol || c2.abs() > tol {
                return Err(Error::DecompositionLost {
                    t,
                    detail: format!(
                        "constraint Newton stalled (residuals {c1:.3e}, {c2:.3e})"
                    ),
                });
            }
            (c1, c2, v)
        }
    };
    let profile = model.base.clone();
    // w = e^{-i theta} v
    let w = v.scaled(Complex64::from_polar(1.0, -theta));
    // reconstruction defect: u - e^{-i theta}(phi + v); v is defined as the
    // exact remainder, so this measures pure round-off
    let mut recon = profile.phi.clone();
    recon.axpy(Complex64::new(1.0, 0.0), &v);
    recon.scale(Complex64::from_polar(1.0, -theta));
    recon.axpy(Complex64::new(-1.0, 0.0), u);
    let reconstruction_residual = l2_norm(&recon);
    let state = ModulationState {
        t,
        e,
        theta,
        v,
        w,
        profile,
        constraint_residual: c1.abs().max(c2.abs()),
        reconstruction_residual,
        jacobian_condition: jac_cond,
    };
    validate_state(&state)?;
    Ok(state)
}

fn newton_update(
    phi: &ComplexField,
    dphi: &ComplexField,
    d2phi: &ComplexField,
    v: &ComplexField,
    c1: f64,
    c2: f64,
) -> Result<(f64, f64, f64)> {
    let re_v = v.real_part();
    let im_v = v.imag_part();
    let dphi_phi = inner_real(dphi, phi)?;
    let rev_dphi = inner_real(&re_v, dphi)?;
    let imv_phi = inner_real(&im_v, phi)?;
    let imv_d2 = inner_real(&im_v, d2phi)?;
    let phi_dphi = inner_real(phi, dphi)?;
    // d c / d (E, theta)
    let j11 = -dphi_phi + rev_dphi;
    let j12 = -imv_phi;
    let j21 = imv_d2;
    let j22 = rev_dphi + phi_dphi;
    let det = j11 * j22 - j12 * j21;
    let norm_inf = (j11.abs() + j12.abs()).max(j21.abs() + j22.abs());
    if det.abs() < 1e-300 {
        return Err(Error::ModulationDegenerate { cond: f64::INFINITY });
    }
    let cond = norm_inf * ((j11.abs() + j21.abs()).max(j12.abs() + j22.abs())) / det.abs();
    // solve J [de, dth]^T = [c1, c2]^T
    let de = (c1 * j22 - c2 * j12) / det;
    let dth = (j11 * c2 - j21 * c1) / det;
    Ok((de, dth, cond))
}

/// Constraint tolerance: the stated invariant `1e-10 |v| |phi|`, floored at
/// the quadrature round-off scale of the pairings themselves.
fn constraint_bound(v: &ComplexField, phi: &ComplexField, u_scale: f64) -> f64 {
    let vnorm = l2_norm(v);
    let phinorm = l2_norm(phi);
    (1e-10 * vnorm * phinorm).max(30.0 * f64::EPSILON * u_scale * phinorm.max(1.0))
}

fn validate_state(ms: &ModulationState) -> Result<()> {
    let u_scale = l2_norm(&ms.v) + l2_norm(&ms.profile.phi);
    let bound = constraint_bound(&ms.v, &ms.profile.phi, u_scale);
    if ms.constraint_residual > bound {
        return Err(Error::DecompositionLost {
            t: ms.t,
            detail: format!(
                "constraint residual {:.3e} above invariant {:.3e}",
                ms.constraint_residual, bound
            ),
        });
    }
    if ms.reconstruction_residual > 1e-12 {
        return Err(Error::DecompositionLost {
            t: ms.t,
            detail: format!(
                "reconstruction residual {:.3e} above 1e-12",
                ms.reconstruction_residual
            ),
        });
    }
    Ok(())
}

/// Modulation rates `(dE/dt, d theta/dt - E)` from the 2x2 system.
pub fn modulation_system(
    ms: &ModulationState,
    alpha: f64,
    p: f64,
) -> Result<(f64, f64)> {
    let phi = &ms.profile.phi;
    let dphi = &ms.profile.dphi_de;
    let d2phi = &ms.profile.d2phi_de2;
    let re_v = ms.v.real_part();
    let im_v = ms.v.imag_part();
    let dphi_phi = inner_real(dphi, phi)?;
    let rev_dphi = inner_real(&re_v, dphi)?;
    let imv_phi = inner_real(&im_v, phi)?;
    let imv_d2 = inner_real(&im_v, d2phi)?;
    let a11 = dphi_phi - rev_dphi;
    let a12 = imv_phi;
    let a21 = imv_d2;
    let a22 = dphi_phi + rev_dphi;
    let det = a11 * a22 - a12 * a21;
    let norm_inf = (a11.abs() + a12.abs()).max(a21.abs() + a22.abs());
    let cond = if det == 0.0 {
        f64::INFINITY
    } else {
        norm_inf * ((a11.abs() + a21.abs()).max(a12.abs() + a22.abs())) / det.abs()
    };
    if cond > 1e10 {
        return Err(Error::ModulationDegenerate { cond });
    }
    let g3 = g3_term(ms, alpha, p);
    let rhs1 = inner_real(&g3.imag_part(), phi)?;
    let rhs2 = inner_real(&g3.real_part(), dphi)?;
    let e_dot = (rhs1 * a22 - rhs2 * a12) / det;
    let theta_dot_minus_e = (a11 * rhs2 - a21 * rhs1) / det;
    Ok((e_dot, theta_dot_minus_e))
}

/// `f(u) = alpha |u|^{p-1} u`.
fn f_power(u: &ComplexField, alpha: f64, p: f64) -> ComplexField {
    let cubic = p == 3.0;
    ComplexField::from_values(
        u.grid(),
        u.values()
            .iter()
            .map(|z| {
                let a = if cubic {
                    z.norm_sqr()
                } else {
                    z.norm_sqr().powf(0.5 * (p - 1.0))
                };
                alpha * a * z
            })
            .collect(),
    )
    .expect("same grid")
}

/// Linearization `g4 = alpha phi^{p-1} ((p+1)/2 v + (p-1)/2 conj(v))`.
pub fn g4_term(ms: &ModulationState, alpha: f64, p: f64) -> ComplexField {
    let phi = &ms.profile.phi;
    ComplexField::from_values(
        ms.v.grid(),
        ms.v
            .values()
            .iter()
            .zip(phi.values())
            .map(|(v, ph)| {
                let w = alpha * ph.re.abs().powf(p - 1.0);
                w * (0.5 * (p + 1.0) * v + 0.5 * (p - 1.0) * v.conj())
            })
            .collect(),
    )
    .expect("same grid")
}

/// Quadratic-and-higher remainder `g3 = f(phi + v) - f(phi) - g4`.
pub fn g3_term(ms: &ModulationState, alpha: f64, p: f64) -> ComplexField {
    let phi = &ms.profile.phi;
    let mut total = ms.v.clone();
    total.axpy(Complex64::new(1.0, 0.0), phi);
    let mut g3 = f_power(&total, alpha, p);
    g3.axpy(Complex64::new(-1.0, 0.0), &f_power(phi, alpha, p));
    g3.axpy(Complex64::new(-1.0, 0.0), &g4_term(ms, alpha, p));
    g3
}

/// All three source terms of the radiation equation, with
/// `g2 = (E - d theta/dt) phi - i dE/dt d_E phi` built from supplied rates.
pub fn nonlinear_terms(
    ms: &ModulationState,
    rates: (f64, f64),
    alpha: f64,
    p: f64,
) -> (ComplexField, ComplexField, ComplexField) {
    let (e_dot, theta_dot_minus_e) = rates;
    let mut g2 = ms.profile.phi.scaled(Complex64::new(-theta_dot_minus_e, 0.0));
    g2.axpy(Complex64::new(0.0, -e_dot), &ms.profile.dphi_de);
    let g4 = g4_term(ms, alpha, p);
    let g3 = g3_term(ms, alpha, p);
    (g2, g3, g4)
}

/// Running diagnostic norms; all nondecreasing in `T` by construction.
#[derive(Clone, Debug)]
pub struct NormLedger {
    pub s: f64,
    pub p: f64,
    /// Strichartz exponent, `2/q = 1 - 1/p`.
    pub q: f64,
    pub t: f64,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
    pub m5: f64,
    // running accumulators
    acc_m2: f64,
    acc_m3: f64,
    acc_m4q: f64,
    acc_m5q: f64,
    sup_m4: f64,
    sup_m5: f64,
    last: Option<LedgerSample>,
    started: bool,
}

#[derive(Clone, Copy, Debug)]
struct LedgerSample {
    t: f64,
    i2: f64,
    i3: f64,
    i4: f64,
    i5: f64,
}

impl NormLedger {
    pub fn new(s: f64, p: f64) -> Self {
        Self {
            s,
            p,
            q: 2.0 * p / (p - 1.0),
            t: 0.0,
            m1: 0.0,
            m2: 0.0,
            m3: 0.0,
            m4: 0.0,
            m5: 0.0,
            acc_m2: 0.0,
            acc_m3: 0.0,
            acc_m4q: 0.0,
            acc_m5q: 0.0,
            sup_m4: 0.0,
            sup_m5: 0.0,
            last: None,
            started: false,
        }
    }

    /// Incorporates one decomposed snapshot; times must increase.
    pub fn update(&mut self, ms: &ModulationState, sd: &SpectralData, e_star: f64) -> Result<()> {
        if let Some(prev) = &self.last {
            if ms.t <= prev.t && self.started {
                return Err(Error::TimeRegression {
                    t: ms.t,
                    t_prev: prev.t,
                });
            }
        }
        let w_minus = WeightSpec::new(self.s, -1)?;
        let pc_w = project(&ms.w, SpectralPart::Continuous, sd)?;
        let pd_w = project(&ms.w, SpectralPart::Discrete, sd)?;
        let i2 = weighted_norm(&pc_w, w_minus, 1).powi(2);
        let i3 = weighted_norm(&pd_w, w_minus, 1).powi(2);
        let i4 = w1p_norm(&pc_w, 2.0 * self.p).powf(self.q);
        let i5 = w1p_norm(&pd_w, 2.0 * self.p).powf(self.q);
        self.sup_m4 = self.sup_m4.max(h1_norm(&pc_w));
        self.sup_m5 = self.sup_m5.max(h1_norm(&pd_w));
        if let Some(prev) = self.last {
            let dt = ms.t - prev.t;
            self.acc_m2 += 0.5 * dt * (prev.i2 + i2);
            self.acc_m3 += 0.5 * dt * (prev.i3 + i3);
            self.acc_m4q += 0.5 * dt * (prev.i4 + i4);
            self.acc_m5q += 0.5 * dt * (prev.i5 + i5);
        }
        self.last = Some(LedgerSample {
            t: ms.t,
            i2,
            i3,
            i4,
            i5,
        });
        self.started = true;
        self.t = ms.t;
        self.m1 = self.m1.max((ms.e - e_star).abs());
        self.m2 = self.acc_m2.sqrt();
        self.m3 = self.acc_m3.sqrt();
        self.m4 = self.sup_m4 + self.acc_m4q.powf(1.0 / self.q);
        self.m5 = self.sup_m5 + self.acc_m5q.powf(1.0 / self.q);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;
    use crate::spectral::{ground_state, Potential};

    fn setup() -> (Potential, SpectralData) {
        let grid = Grid2D::new(128, 30.0).unwrap();
        let pot = Potential::gaussian_well(&grid, 5.0, 1.0);
        let sd = ground_state(&pot).unwrap();
        (pot, sd)
    }

    #[test]
    fn exact_soliton_decomposes_to_zero_radiation() {
        let (pot, sd) = setup();
        let solver = ProfileSolver::new(&pot, &sd, 1.0, 3.0).unwrap();
        let e0 = sd.e_star + 0.03;
        let theta0 = 0.7;
        let prof = solver.profile(e0, None).unwrap();
        let u = prof.phi.scaled(Complex64::from_polar(1.0, -theta0));
        let mut model = ProfileModel::new(prof);
        let ms = decompose(&u, 0.0, &solver, &mut model, (e0, theta0)).unwrap();
        assert!((ms.e - e0).abs() < 1e-11, "E moved by {}", (ms.e - e0).abs());
        assert!((ms.theta - theta0).abs() < 1e-11);
        assert!(l2_norm(&ms.v) < 1e-10);
    }

    #[test]
    fn preorthogonalized_perturbation_leaves_parameters() {
        let (pot, sd) = setup();
        let solver = ProfileSolver::new(&pot, &sd, 1.0, 3.0).unwrap();
        let e0 = sd.e_star + 0.03;
        let prof = solver.profile(e0, None).unwrap();
        // real perturbation orthogonal to phi: second constraint is trivial
        let mut eta = ComplexField::gaussian(prof.phi.grid(), (1.5, 0.0), 1.0, 1.0);
        let c = inner_real(&eta, &prof.phi).unwrap() / l2_norm(&prof.phi).powi(2);
        eta.axpy(Complex64::new(-c, 0.0), &prof.phi);
        eta.scale(Complex64::new(1e-3, 0.0));
        let mut u = prof.phi.clone();
        u.axpy(Complex64::new(1.0, 0.0), &eta);
        let theta0 = -0.4;
        let u = u.scaled(Complex64::from_polar(1.0, -theta0));
        let mut model = ProfileModel::new(prof);
        let ms = decompose(&u, 0.0, &solver, &mut model, (e0 + 1e-5, theta0 - 1e-5)).unwrap();
        assert!((ms.e - e0).abs() < 1e-9, "E moved by {}", (ms.e - e0).abs());
        assert!((ms.theta - theta0).abs() < 1e-9);
        let diff = ms.v.sub(&eta.scaled(Complex64::new(1.0, 0.0))).unwrap();
        assert!(l2_norm(&diff) < 1e-9);
    }

    #[test]
    fn gauge_equivariance() {
        let (pot, sd) = setup();
        let solver = ProfileSolver::new(&pot, &sd, 1.0, 3.0).unwrap();
        let e0 = sd.e_star + 0.03;
        let prof = solver.profile(e0, None).unwrap();
        let mut u = prof.phi.clone();
        let mut rng = crate::rng::seeded(17);
        let pert = crate::rng::smooth_field(u.grid(), &mut rng, 2.0);
        u.axpy(Complex64::new(1e-3, 0.0), &pert);
        let mut model = ProfileModel::new(prof.clone());
        let ms0 = decompose(&u, 0.0, &solver, &mut model, (e0, 0.0)).unwrap();
        let phase = 0.55;
        let u_rot = u.scaled(Complex64::from_polar(1.0, phase));
        let mut model2 = ProfileModel::new(prof);
        let ms1 = decompose(&u_rot, 0.0, &solver, &mut model2, (e0, -phase)).unwrap();
        assert!((ms1.e - ms0.e).abs() < 1e-10);
        assert!((ms1.theta - (ms0.theta - phase)).abs() < 1e-10);
        let amp_diff: f64 = ms0
            .v
            .values()
            .iter()
            .zip(ms1.v.values())
            .map(|(a, b)| (a.norm() - b.norm()).abs())
            .fold(0.0, f64::max);
        assert!(amp_diff < 1e-12);
    }

    #[test]
    fn zero_radiation_rates_vanish() {
        let (pot, sd) = setup();
        let solver = ProfileSolver::new(&pot, &sd, 1.0, 3.0).unwrap();
        let e0 = sd.e_star + 0.03;
        let prof = solver.profile(e0, None).unwrap();
        let u = prof.phi.clone();
        let mut model = ProfileModel::new(prof.clone());
        let ms = decompose(&u, 0.0, &solver, &mut model, (e0, 0.0)).unwrap();
        let (e_dot, tdme) = modulation_system(&ms, 1.0, 3.0).unwrap();
        assert!(e_dot.abs() < 1e-12, "E_dot = {e_dot}");
        assert!(tdme.abs() < 1e-12, "theta_dot - E = {tdme}");
        // matrix diagonal with <d_E phi, phi> on both entries when v = 0:
        // checked via the trivial source structure; g terms vanish
        let (g2, g3, g4) = nonlinear_terms(&ms, (e_dot, tdme), 1.0, 3.0);
        assert!(g2.max_abs() < 1e-12);
        assert!(g3.max_abs() < 1e-10);
        assert!(g4.max_abs() < 1e-10);
    }

    #[test]
    fn cubic_g3_closed_form() {
        let (pot, sd) = setup();
        let solver = ProfileSolver::new(&pot, &sd, 1.0, 3.0).unwrap();
        let e0 = sd.e_star + 0.03;
        let prof = solver.profile(e0, None).unwrap();
        let grid = prof.phi.grid().clone();
        let mut rng = crate::rng::seeded(23);
        let eta = crate::rng::smooth_field(&grid, &mut rng, 2.0);
        // assemble a state with v = eps * eta without running the solver
        let eps = 1e-3;
        let v = eta.scaled(Complex64::new(eps, 0.0));
        let mut u = prof.phi.clone();
        u.axpy(Complex64::new(1.0, 0.0), &v);
        let ms = ModulationState {
            t: 0.0,
            e: e0,
            theta: 0.0,
            v: v.clone(),
            w: v.clone(),
            profile: prof,
            constraint_residual: 0.0,
            reconstruction_residual: 0.0,
            jacobian_condition: 1.0,
        };
        // for p = 3: g3 = alpha (2 phi |v|^2 + phi v^2 + |v|^2 v) exactly
        let g3 = g3_term(&ms, 1.0, 3.0);
        let mut err: f64 = 0.0;
        for ((g, vv), ph) in g3
            .values()
            .iter()
            .zip(ms.v.values())
            .zip(ms.profile.phi.values())
        {
            let exact = 2.0 * ph.re * vv.norm_sqr() + ph.re * vv * vv + vv.norm_sqr() * vv;
            err = err.max((g - exact).norm());
        }
        assert!(err < 1e-14, "cubic expansion error {err}");
        // quadratic smallness along the scaling family
        let ms2 = ModulationState {
            v: eta.scaled(Complex64::new(2.0 * eps, 0.0)),
            ..ms.clone()
        };
        let g3_2 = g3_term(&ms2, 1.0, 3.0);
        let r1 = l2_norm(&g3) / eps.powi(2);
        let r2 = l2_norm(&g3_2) / (2.0 * eps).powi(2);
        assert!((r2 - r1).abs() / r1 < 0.05, "not quadratic: {r1} vs {r2}");
    }

    #[test]
    fn ledger_zero_radiation_and_monotonicity() {
        let (pot, sd) = setup();
        let solver = ProfileSolver::new(&pot, &sd, 1.0, 3.0).unwrap();
        let e0 = sd.e_star + 0.03;
        let prof = solver.profile(e0, None).unwrap();
        let u = prof.phi.clone();
        let mut model = ProfileModel::new(prof);
        let mut ledger = NormLedger::new(1.5, 3.0);
        for (i, t) in [0.0, 0.5, 1.0].iter().enumerate() {
            let mut ms = decompose(&u, *t, &solver, &mut model, (e0, 0.0)).unwrap();
            ms.t = *t;
            ledger.update(&ms, &sd, sd.e_star).unwrap();
            if i == 0 {
                assert!((ledger.m1 - 0.03).abs() < 1e-9);
            }
        }
        assert!(ledger.m2 < 1e-9);
        assert!(ledger.m3 < 1e-9);
        assert!(ledger.m4 < 1e-8);
        assert!(ledger.m5 < 1e-8);
        // time regression rejected
        let ms = decompose(&u, 0.5, &solver, &mut model, (e0, 0.0)).unwrap();
        assert!(matches!(
            ledger.update(&ms, &sd, sd.e_star),
            Err(Error::TimeRegression { .. })
        ));
    }
}
