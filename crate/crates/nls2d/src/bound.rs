//! Nonlinear bound states: the bifurcating branch `E -> phi_E` of
//! `Delta phi + E phi = V phi + alpha |phi|^{p-1} phi`, solved by Newton
//! iteration with Krylov inner solves, plus finite-difference branch
//! derivatives.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{h1_norm, inner_sesquilinear, l2_norm, laplacian_apply, lp_norm, ComplexField};
use crate::linalg::{gmres, pcg};
use crate::spectral::{Potential, SpectralData};

/// Nonlinearity used by the profile solver. `RankOneProjected` replaces
/// `f(phi)` by its projection onto `phi_star`, which turns the PDE into the
/// scalar bifurcation equation (an exactly solvable check case).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Nonlinearity {
    Power,
    RankOneProjected,
}

#[derive(Clone, Copy, Debug)]
pub struct NewtonParams {
    /// Convergence threshold on the Newton step norm.
    pub tol_step: f64,
    pub max_iter: usize,
    /// Largest distance from the bifurcation point the seed is trusted for.
    pub delta_max: f64,
    /// Target accuracy of the finite-difference branch derivative.
    pub fd_tol: f64,
}

impl Default for NewtonParams {
    fn default() -> Self {
        Self {
            tol_step: 1e-10,
            max_iter: 30,
            delta_max: 0.1,
            fd_tol: 1e-4,
        }
    }
}

/// One point of the branch with its finite-difference `E`-derivatives.
#[derive(Clone, Debug)]
pub struct BoundStateProfile {
    pub e: f64,
    pub phi: ComplexField,
    pub dphi_de: ComplexField,
    pub d2phi_de2: ComplexField,
    pub alpha: f64,
    pub p: f64,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct BranchFailure {
    pub index: usize,
    pub message: String,
}

/// Ordered set of profiles over an `E`-interval on one side of `E_*`.
#[derive(Clone, Debug)]
pub struct Branch {
    pub delta: f64,
    pub profiles: Vec<BoundStateProfile>,
    pub failure: Option<BranchFailure>,
}

impl Branch {
    /// Profile nearest in `E`; used for warm starts.
    pub fn nearest(&self, e: f64) -> &BoundStateProfile {
        self.profiles
            .iter()
            .min_by(|a, b| {
                (a.e - e)
                    .abs()
                    .partial_cmp(&(b.e - e).abs())
                    .expect("finite energies")
            })
            .expect("branch is nonempty")
    }

    /// Fitted constant of the `|phi_{i,E} - phi_*|_{H^1} <= C |E - E_*|`
    /// bound: max over profiles of the left side over `|E - E_*|`.
    pub fn remark1_constant(&self, sd: &SpectralData) -> f64 {
        let mut c: f64 = 0.0;
        for prof in &self.profiles {
            let phi1 = prof.phi.scaled(Complex64::new(1.0 / l2_norm(&prof.phi), 0.0));
            let phi2 = prof
                .dphi_de
                .scaled(Complex64::new(1.0 / l2_norm(&prof.dphi_de), 0.0));
            let lhs = h1_norm(&phi1.sub(&sd.phi_star).expect("same grid"))
                + h1_norm(&phi2.sub(&sd.phi_star).expect("same grid"));
            c = c.max(lhs / (prof.e - sd.e_star).abs());
        }
        c
    }
}

fn negative_mass_fraction(phi: &ComplexField) -> f64 {
    let neg: f64 = phi
        .values()
        .iter()
        .map(|v| if v.re < 0.0 { v.re * v.re } else { 0.0 })
        .sum();
    let tot: f64 = phi.values().iter().map(|v| v.norm_sqr()).sum();
    if tot == 0.0 {
        0.0
    } else {
        (neg / tot).sqrt()
    }
}

pub struct ProfileSolver<'a> {
    pot: &'a Potential,
    pub sd: &'a SpectralData,
    pub alpha: f64,
    pub p: f64,
    pub params: NewtonParams,
    pub nonlinearity: Nonlinearity,
}

impl<'a> ProfileSolver<'a> {
    pub fn new(pot: &'a Potential, sd: &'a SpectralData, alpha: f64, p: f64) -> Result<Self> {
        if alpha != 1.0 && alpha != -1.0 {
            return Err(Error::InvalidParameter(format!("alpha must be +-1, got {alpha}")));
        }
        if p < 3.0 {
            return Err(Error::InvalidParameter(format!("p must be >= 3, got {p}")));
        }
        Ok(Self {
            pot,
            sd,
            alpha,
            p,
            params: NewtonParams::default(),
            nonlinearity: Nonlinearity::Power,
        })
    }

    fn check_branch_side(&self, e: f64) -> Result<()> {
        let offset = e - self.sd.e_star;
        if offset * self.alpha <= 0.0 {
            return Err(Error::BranchSide(format!(
                "E - E_* = {offset:.3e} with alpha = {}",
                self.alpha
            )));
        }
        if offset.abs() > self.params.delta_max {
            return Err(Error::BranchSide(format!(
                "|E - E_*| = {:.3e} beyond the trusted range {}",
                offset.abs(),
                self.params.delta_max
            )));
        }
        Ok(())
    }

    /// Scalar amplitude of the leading-order bifurcation profile.
    pub fn seed_amplitude(&self, e: f64) -> f64 {
        let norm_pp1 = lp_norm(&self.sd.phi_star, self.p + 1.0);
        (e - self.sd.e_star).abs().powf(1.0 / (self.p - 1.0))
            * norm_pp1.powf(-(self.p + 1.0) / (self.p - 1.0))
    }

    /// Leading-order profile
    /// `|E - E_*|^{1/(p-1)} |phi_*|_{p+1}^{-(p+1)/(p-1)} phi_*`.
    pub fn bifurcation_seed(&self, e: f64) -> Result<ComplexField> {
        self.check_branch_side(e)?;
        Ok(self
            .sd
            .phi_star
            .scaled(Complex64::new(self.seed_amplitude(e), 0.0)))
    }

    /// `F(phi) = Delta phi + E phi - V phi - alpha |phi|^{p-1} phi`
    /// (or the rank-one-projected nonlinearity in toy mode).
    pub fn equation_residual(&self, e: f64, phi: &ComplexField) -> ComplexField {
        let mut out = laplacian_apply(phi).expect("finite profile");
        for ((o, f), v) in out
            .values_mut()
            .iter_mut()
            .zip(phi.values())
            .zip(self.pot.values())
        {
            *o += (e - v) * f;
        }
        match self.nonlinearity {
            Nonlinearity::Power => {
                for (o, f) in out.values_mut().iter_mut().zip(phi.values()) {
                    *o -= self.alpha * f.norm().powf(self.p - 1.0) * f;
                }
            }
            Nonlinearity::RankOneProjected => {
                let fphi = ComplexField::from_values(
                    phi.grid(),
                    phi.values()
                        .iter()
                        .map(|f| self.alpha * f.norm().powf(self.p - 1.0) * f)
                        .collect(),
                )
                .expect("same grid");
                let c = inner_sesquilinear(&fphi, &self.sd.phi_star).expect("same grid");
                out.axpy(-c, &self.sd.phi_star);
            }
        }
        out
    }

    /// One Newton solve from the supplied seed. Returns the profile, its
    /// residual and the number of Newton steps taken.
    pub fn solve_profile(&self, e: f64, seed: &ComplexField) -> Result<(ComplexField, f64, usize)> {
        self.check_branch_side(e)?;
        let mut phi = seed.real_part();
        let mut history: Vec<f64> = Vec::new();
        let mut converged = false;
        let mut steps = 0;
        for iter in 0..self.params.max_iter {
            let f = self.equation_residual(e, &phi);
            let fnorm = l2_norm(&f);
            if let Some(&prev) = history.last() {
                if fnorm > 100.0 * prev.max(1e-14) {
                    return Err(Error::ConvergenceFailure {
                        context: format!(
                            "Newton divergence at E = {e}; residual history {history:?} -> {fnorm:.3e}"
                        ),
                        residual: fnorm,
                    });
                }
            }
            history.push(fnorm);
            let delta = self.newton_step(e, &phi, &f)?;
            phi.axpy(Complex64::new(1.0, 0.0), &delta);
            phi = phi.real_part();
            steps = iter + 1;
            if negative_mass_fraction(&phi) > 1e-8 {
                return Err(Error::LeftPositiveBranch { step: iter });
            }
            let step_norm = l2_norm(&delta);
            if step_norm < self.params.tol_step * l2_norm(&phi).max(1.0) {
                converged = true;
                break;
            }
        }
        let residual = l2_norm(&self.equation_residual(e, &phi));
        if !converged {
            return Err(Error::ConvergenceFailure {
                context: format!(
                    "Newton did not reach step tolerance at E = {e}; residual history {history:?}"
                ),
                residual,
            });
        }
        Ok((phi, residual, steps))
    }

    /// Solves `J d = -F` with `J = Delta + E - V - alpha p phi^{p-1}`.
    /// `J` is negative definite near the branch, so CG runs on `-J`; the toy
    /// nonlinearity makes `J` nonsymmetric and falls back to GMRES.
    fn newton_step(&self, e: f64, phi: &ComplexField, f: &ComplexField) -> Result<ComplexField> {
        let pm1: Vec<f64> = phi
            .values()
            .iter()
            .map(|v| self.alpha * self.p * v.norm().powf(self.p - 1.0))
            .collect();
        let fnorm = l2_norm(f);
        let rel_tol = (0.1 * fnorm).clamp(1e-13, 1e-3);
        match self.nonlinearity {
            Nonlinearity::Power => {
                let apply = |d: &ComplexField| {
                    // (-J) d
                    let mut out = laplacian_apply(d).expect("finite direction");
                    out.scale(Complex64::new(-1.0, 0.0));
                    for (((o, dv), v), w) in out
                        .values_mut()
                        .iter_mut()
                        .zip(d.values())
                        .zip(self.pot.values())
                        .zip(&pm1)
                    {
                        *o += (v - e + w) * dv;
                    }
                    out
                };
                let precond = |r: &ComplexField| {
                    r.apply_multiplier(|k1, k2| {
                        Complex64::new(1.0 / (k1 * k1 + k2 * k2 - e + 1.0), 0.0)
                    })
                };
                let (d, _res) = pcg(apply, precond, f, None, rel_tol, 600)?;
                Ok(d)
            }
            Nonlinearity::RankOneProjected => {
                let phi_star = &self.sd.phi_star;
                let apply = |d: &ComplexField| {
                    let mut out = laplacian_apply(d).expect("finite direction");
                    out.scale(Complex64::new(-1.0, 0.0));
                    for ((o, dv), v) in out
                        .values_mut()
                        .iter_mut()
                        .zip(d.values())
                        .zip(self.pot.values())
                    {
                        *o += (v - e) * dv;
                    }
                    let weighted = ComplexField::from_values(
                        d.grid(),
                        d.values().iter().zip(&pm1).map(|(dv, w)| w * dv).collect(),
                    )
                    .expect("same grid");
                    let c = inner_sesquilinear(&weighted, phi_star).expect("same grid");
                    out.axpy(c, phi_star);
                    out
                };
                let (d, _res) = gmres(apply, f, None, rel_tol, 50, 20)?;
                Ok(d)
            }
        }
    }

    /// Profile together with finite-difference `E`-derivatives; the FD step
    /// is refined until a Richardson estimate of the derivative error is
    /// below `fd_tol`.
    pub fn profile(&self, e: f64, warm: Option<&ComplexField>) -> Result<BoundStateProfile> {
        let seed = match warm {
            Some(w) => w.clone(),
            None => self.bifurcation_seed(e)?,
        };
        let (phi, residual, _) = self.solve_profile(e, &seed)?;
        let offset = (e - self.sd.e_star).abs();
        let mut step = (0.25 * offset).min(0.02).max(1e-5);
        // keep both stencil points strictly inside the branch
        step = step.min(0.45 * (self.params.delta_max - offset).max(1e-5));
        let mut best: Option<(ComplexField, ComplexField, f64)> = None;
        for _ in 0..3 {
            let coarse = self.fd_pair(e, step, &phi)?;
            let fine = self.fd_pair(e, 0.5 * step, &phi)?;
            let d_coarse = derivative(&coarse.0, &coarse.1, step);
            let d_fine = derivative(&fine.0, &fine.1, 0.5 * step);
            let err = l2_norm(&d_fine.sub(&d_coarse)?) / 3.0;
            let scale = l2_norm(&d_fine).max(1.0);
            // Richardson extrapolation of the first derivative
            let mut d1 = d_fine.scaled(Complex64::new(4.0 / 3.0, 0.0));
            d1.axpy(Complex64::new(-1.0 / 3.0, 0.0), &d_coarse);
            let mut d2 = fine.0.clone();
            d2.axpy(Complex64::new(-2.0, 0.0), &phi);
            d2.axpy(Complex64::new(1.0, 0.0), &fine.1);
            d2.scale(Complex64::new(1.0 / (0.25 * step * step), 0.0));
            best = Some((d1, d2, err / scale));
            if err / scale < self.params.fd_tol {
                break;
            }
            step *= 0.5;
        }
        let (dphi_de, d2phi_de2, _err) = best.expect("at least one FD pass");
        let prof = BoundStateProfile {
            e,
            phi,
            dphi_de,
            d2phi_de2,
            alpha: self.alpha,
            p: self.p,
            residual,
        };
        self.validate_profile(&prof)?;
        Ok(prof)
    }

    fn fd_pair(&self, e: f64, step: f64, warm: &ComplexField) -> Result<(ComplexField, ComplexField)> {
        let (hi, _, _) = self.solve_profile(e + step, warm)?;
        let (lo, _, _) = self.solve_profile(e - step, warm)?;
        Ok((hi, lo))
    }

    fn validate_profile(&self, prof: &BoundStateProfile) -> Result<()> {
        let bound = 1e-9 * h1_norm(&prof.phi).max(1.0);
        if prof.residual > bound {
            return Err(Error::ConvergenceFailure {
                context: format!(
                    "profile residual {:.3e} above invariant {:.3e} at E = {}",
                    prof.residual, bound, prof.e
                ),
                residual: prof.residual,
            });
        }
        if (prof.e - self.sd.e_star) * prof.alpha <= 0.0 {
            return Err(Error::BranchSide("stored profile violates the side condition".into()));
        }
        if negative_mass_fraction(&prof.phi) > 1e-8 {
            return Err(Error::LeftPositiveBranch { step: usize::MAX });
        }
        Ok(())
    }

    /// Sequential continuation from `e_from` to `e_to`; each solve seeded by
    /// the previous profile. A failing step leaves a partial branch with the
    /// failure index recorded.
    pub fn branch_continuation(&self, e_from: f64, e_to: f64, steps: usize) -> Result<Branch> {
        if steps == 0 {
            return Err(Error::InvalidParameter("branch needs at least one step".into()));
        }
        self.check_branch_side(e_from)?;
        self.check_branch_side(e_to)?;
        let mut profiles = Vec::with_capacity(steps);
        let mut failure = None;
        let mut warm: Option<ComplexField> = None;
        for i in 0..steps {
            let t = if steps == 1 {
                0.0
            } else {
                i as f64 / (steps - 1) as f64
            };
            let e = e_from + t * (e_to - e_from);
            match self.profile(e, warm.as_ref()) {
                Ok(prof) => {
                    warm = Some(prof.phi.clone());
                    profiles.push(prof);
                }
                Err(err) => {
                    failure = Some(BranchFailure {
                        index: i,
                        message: err.to_string(),
                    });
                    break;
                }
            }
        }
        let delta = profiles
            .iter()
            .map(|p| (p.e - self.sd.e_star).abs())
            .fold(0.0, f64::max);
        Ok(Branch {
            delta,
            profiles,
            failure,
        })
    }
}

fn derivative(hi: &ComplexField, lo: &ComplexField, step: f64) -> ComplexField {
    let mut d = hi.clone();
    d.axpy(Complex64::new(-1.0, 0.0), lo);
    d.scale(Complex64::new(1.0 / (2.0 * step), 0.0));
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;
    use crate::spectral::ground_state;
    use approx::assert_relative_eq;

    fn setup() -> (Potential, SpectralData) {
        let grid = Grid2D::new(128, 30.0).unwrap();
        let pot = Potential::gaussian_well(&grid, 5.0, 1.0);
        let sd = ground_state(&pot).unwrap();
        (pot, sd)
    }

    #[test]
    fn seed_scales_like_square_root_for_cubic() {
        let (pot, sd) = setup();
        let solver = ProfileSolver::new(&pot, &sd, 1.0, 3.0).unwrap();
        // amplitude / |E-E_*|^{1/2} is constant in the E -> E_* limit
        let r1 = solver.seed_amplitude(sd.e_star + 0.02) / 0.02f64.sqrt();
        let r2 = solver.seed_amplitude(sd.e_star + 0.0002) / 0.0002f64.sqrt();
        assert_relative_eq!(r1, r2, max_relative = 1e-12);
        // p = 3 closed form: |phi_*|_{L^4}^{-2}
        let l4 = lp_norm(&sd.phi_star, 4.0);
        assert_relative_eq!(r1, 1.0 / (l4 * l4), max_relative = 1e-12);
        // seed amplitude -> 0 at the bifurcation point
        assert!(solver.seed_amplitude(sd.e_star + 1e-9) < 1e-4);
    }

    #[test]
    fn wrong_branch_side_rejected() {
        let (pot, sd) = setup();
        let solver = ProfileSolver::new(&pot, &sd, 1.0, 3.0).unwrap();
        match solver.bifurcation_seed(sd.e_star - 0.01) {
            Err(Error::BranchSide(_)) => {}
            other => panic!("expected branch side error, got {other:?}"),
        }
    }

    #[test]
    fn toy_rank_one_mode_converges_immediately() {
        let (pot, sd) = setup();
        let mut solver = ProfileSolver::new(&pot, &sd, 1.0, 3.0).unwrap();
        solver.nonlinearity = Nonlinearity::RankOneProjected;
        let e = sd.e_star + 0.02;
        let seed = solver.bifurcation_seed(e).unwrap();
        // the scalar bifurcation equation is satisfied exactly at the seed
        let proj = inner_sesquilinear(&solver.equation_residual(e, &seed), &sd.phi_star)
            .unwrap()
            .norm();
        assert!(proj < 1e-10, "scalar projection at seed = {proj:.3e}");
        // the field residual only inherits the ground-state residual
        let res0 = l2_norm(&solver.equation_residual(e, &seed));
        assert!(res0 < 1e-9, "toy residual at seed = {res0:.3e}");
        // the seed is the exact toy solution up to the ground-state residual
        // it inherits, so Newton needs at most one real step plus one
        // verification step
        let (_phi, res, steps) = solver.solve_profile(e, &seed).unwrap();
        assert!(steps <= 2, "took {steps} Newton steps");
        assert!(res < 1e-10);
    }

    #[test]
    fn profile_close_to_bifurcation() {
        let (pot, sd) = setup();
        let solver = ProfileSolver::new(&pot, &sd, 1.0, 3.0).unwrap();
        let e = sd.e_star + 0.02;
        let seed = solver.bifurcation_seed(e).unwrap();
        let (phi, res, steps) = solver.solve_profile(e, &seed).unwrap();
        assert!(steps <= 8, "took {steps} Newton steps from the seed");
        assert!(res < 1e-9);
        // determinism: recomputing the residual reproduces it bit for bit
        let recomputed = l2_norm(&solver.equation_residual(e, &phi));
        assert_eq!(res, recomputed);
        // gauge: -phi solves too; the solver returned the positive one
        assert!(phi.values().iter().map(|v| v.re).sum::<f64>() > 0.0);
    }

    #[test]
    fn derivative_consistency_with_norm_slope() {
        let (pot, sd) = setup();
        let solver = ProfileSolver::new(&pot, &sd, 1.0, 3.0).unwrap();
        let e = sd.e_star + 0.03;
        let prof = solver.profile(e, None).unwrap();
        // <d_E phi, phi> = 1/2 d/dE |phi|^2 via an independent FD of the norm
        let lhs = inner_sesquilinear(&prof.dphi_de, &prof.phi).unwrap().re;
        let h = 2e-4;
        let (hi, _, _) = solver
            .solve_profile(e + h, &prof.phi)
            .unwrap();
        let (lo, _, _) = solver
            .solve_profile(e - h, &prof.phi)
            .unwrap();
        let rhs = (l2_norm(&hi).powi(2) - l2_norm(&lo).powi(2)) / (4.0 * h);
        assert_relative_eq!(lhs, rhs, max_relative = 1e-3);
    }

    #[test]
    fn single_step_branch_equals_direct_solve() {
        let (pot, sd) = setup();
        let solver = ProfileSolver::new(&pot, &sd, 1.0, 3.0).unwrap();
        let e = sd.e_star + 0.02;
        let branch = solver.branch_continuation(e, e, 1).unwrap();
        assert!(branch.failure.is_none());
        assert_eq!(branch.profiles.len(), 1);
        let direct = solver.profile(e, None).unwrap();
        let diff = branch.profiles[0].phi.sub(&direct.phi).unwrap();
        assert!(l2_norm(&diff) < 1e-12);
    }
}
