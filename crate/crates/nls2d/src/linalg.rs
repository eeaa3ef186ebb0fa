//! Iterative solvers on grid fields: preconditioned CG, restarted GMRES and
//! a locally-optimal preconditioned eigensolver with deflation.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{inner_sesquilinear, l2_norm, ComplexField};

/// Preconditioned conjugate gradients for a Hermitian positive definite
/// operator. `apply` is the operator, `precond` an approximation of its
/// inverse. Returns the solution and the final relative residual.
pub fn pcg(
    apply: impl Fn(&ComplexField) -> ComplexField,
    precond: impl Fn(&ComplexField) -> ComplexField,
    b: &ComplexField,
    x0: Option<&ComplexField>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<(ComplexField, f64)> {
    let bnorm = l2_norm(b);
    if bnorm == 0.0 {
        return Ok((ComplexField::zeros(b.grid()), 0.0));
    }
    let mut x = match x0 {
        Some(x0) => x0.clone(),
        None => ComplexField::zeros(b.grid()),
    };
    let mut r = b.clone();
    if x0.is_some() {
        r.axpy(Complex64::new(-1.0, 0.0), &apply(&x));
    }
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = inner_sesquilinear(&r, &z)?;
    let mut res = l2_norm(&r) / bnorm;
    for _ in 0..max_iter {
        if res < rel_tol {
            break;
        }
        let ap = apply(&p);
        let pap = inner_sesquilinear(&ap, &p)?;
        let alpha = rz / pap;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        res = l2_norm(&r) / bnorm;
        z = precond(&r);
        let rz_new = inner_sesquilinear(&r, &z)?;
        let beta = rz_new / rz;
        rz = rz_new;
        let mut p_new = z.clone();
        p_new.axpy(beta, &p);
        p = p_new;
    }
    Ok((x, res))
}

/// Restarted GMRES for a general complex operator. Returns the solution and
/// the final relative residual.
pub fn gmres(
    apply: impl Fn(&ComplexField) -> ComplexField,
    b: &ComplexField,
    x0: Option<&ComplexField>,
    rel_tol: f64,
    restart: usize,
    max_outer: usize,
) -> Result<(ComplexField, f64)> {
    let bnorm = l2_norm(b);
    if bnorm == 0.0 {
        return Ok((ComplexField::zeros(b.grid()), 0.0));
    }
    let mut x = match x0 {
        Some(x0) => x0.clone(),
        None => ComplexField::zeros(b.grid()),
    };
    let mut final_res = f64::INFINITY;
    for _outer in 0..max_outer {
        let mut r = b.clone();
        r.axpy(Complex64::new(-1.0, 0.0), &apply(&x));
        let beta = l2_norm(&r);
        final_res = beta / bnorm;
        if final_res < rel_tol {
            return Ok((x, final_res));
        }
        let mut basis: Vec<ComplexField> = vec![r.scaled(Complex64::new(1.0 / beta, 0.0))];
        // Triangularized Hessenberg, one column per Arnoldi step; rotation
        // pairs (c real, s complex) annihilate the subdiagonal as we go.
        let m = restart;
        let mut h: Vec<Vec<Complex64>> = Vec::with_capacity(m);
        let mut cs: Vec<f64> = Vec::with_capacity(m);
        let mut sn: Vec<Complex64> = Vec::with_capacity(m);
        let mut g = vec![Complex64::default(); m + 1];
        g[0] = Complex64::new(beta, 0.0);
        let mut k_used = 0;
        for k in 0..m {
            let mut w = apply(&basis[k]);
            let mut col = vec![Complex64::default(); k + 2];
            for (j, vj) in basis.iter().enumerate() {
                let hjk = inner_sesquilinear(&w, vj)?;
                col[j] = hjk;
                w.axpy(-hjk, vj);
            }
            let wnorm = l2_norm(&w);
            col[k + 1] = Complex64::new(wnorm, 0.0);
            // previously computed rotations
            for j in 0..k {
                let a = col[j];
                let bb = col[j + 1];
                col[j] = cs[j] * a + sn[j] * bb;
                col[j + 1] = -sn[j].conj() * a + cs[j] * bb;
            }
            // new rotation annihilating col[k+1]
            let (c, s) = givens(col[k], col[k + 1]);
            col[k] = c * col[k] + s * col[k + 1];
            col[k + 1] = Complex64::default();
            let gk = g[k];
            g[k] = c * gk;
            g[k + 1] = -s.conj() * gk;
            cs.push(c);
            sn.push(s);
            h.push(col);
            k_used = k + 1;
            final_res = g[k + 1].norm() / bnorm;
            if final_res < rel_tol || wnorm < 1e-14 {
                break;
            }
            basis.push(w.scaled(Complex64::new(1.0 / wnorm, 0.0)));
        }
        // back substitution on the triangularized system
        let mut y = vec![Complex64::default(); k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in (i + 1)..k_used {
                s -= h[j][i] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (i, yi) in y.iter().enumerate() {
            x.axpy(*yi, &basis[i]);
        }
        if final_res < rel_tol {
            return Ok((x, final_res));
        }
    }
    Ok((x, final_res))
}

/// Complex Givens pair with real `c`: `[c, s; -conj(s), c] [a; b] = [r; 0]`.
fn givens(a: Complex64, b: Complex64) -> (f64, Complex64) {
    let na = a.norm();
    let nb = b.norm();
    if nb == 0.0 {
        return (1.0, Complex64::default());
    }
    if na == 0.0 {
        return (0.0, b.conj() / nb);
    }
    let r = (na * na + nb * nb).sqrt();
    let c = na / r;
    let s = (a / na) * (b.conj() / r);
    (c, s)
}

/// One eigenpair out of a locally-optimal preconditioned CG iteration
/// (single-vector LOBPCG) for a real-symmetric operator, with hard deflation
/// against already-converged eigenvectors.
pub struct LopcgOutcome {
    pub eigenvalue: f64,
    pub eigenvector: ComplexField,
    pub residual: f64,
    pub iterations: usize,
    /// True when `eigenvalue - residual > certify_above`, i.e. the remaining
    /// spectrum is certified to lie above the requested threshold.
    pub certified_above: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn lopcg_smallest(
    apply: impl Fn(&ComplexField) -> ComplexField,
    precond: impl Fn(&ComplexField) -> ComplexField,
    deflate: &[ComplexField],
    start: &ComplexField,
    tol: f64,
    max_iter: usize,
    certify_above: Option<f64>,
) -> Result<LopcgOutcome> {
    let dot = |a: &ComplexField, b: &ComplexField| -> Result<f64> {
        Ok(inner_sesquilinear(a, b)?.re)
    };
    let project_out = |f: &mut ComplexField| -> Result<()> {
        for d in deflate {
            let c = inner_sesquilinear(f, d)?;
            f.axpy(-c, d);
        }
        Ok(())
    };
    let mut x = start.clone();
    project_out(&mut x)?;
    let nx = l2_norm(&x);
    if nx == 0.0 {
        return Err(Error::ConvergenceFailure {
            context: "eigensolver start vector vanished under deflation".into(),
            residual: f64::NAN,
        });
    }
    x.scale(Complex64::new(1.0 / nx, 0.0));
    let mut p: Option<ComplexField> = None;
    let mut theta = 0.0;
    let mut resnorm = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let ax = apply(&x);
        theta = dot(&x, &ax)?;
        let mut r = ax;
        r.axpy(Complex64::new(-theta, 0.0), &x);
        resnorm = l2_norm(&r);
        if resnorm < tol {
            break;
        }
        if let Some(thresh) = certify_above {
            if theta - resnorm > thresh {
                break;
            }
        }
        let mut w = precond(&r);
        project_out(&mut w)?;
        // Rayleigh-Ritz on span{x, w, p}
        let mut basis: Vec<ComplexField> = Vec::with_capacity(3);
        for cand in [Some(&x), Some(&w), p.as_ref()].into_iter().flatten() {
            let mut b = cand.clone();
            for q in &basis {
                let c = inner_sesquilinear(&b, q)?;
                b.axpy(-c, q);
            }
            let nb = l2_norm(&b);
            if nb > 1e-10 {
                b.scale(Complex64::new(1.0 / nb, 0.0));
                basis.push(b);
            }
        }
        let m = basis.len();
        let mut gram = nalgebra::DMatrix::<f64>::zeros(m, m);
        let applied: Vec<ComplexField> = basis.iter().map(&apply).collect();
        for i in 0..m {
            for j in 0..m {
                gram[(i, j)] = dot(&basis[i], &applied[j])?;
            }
        }
        let gram = (&gram + gram.transpose()) * 0.5;
        let eig = nalgebra::SymmetricEigen::new(gram);
        // column of the smallest eigenvalue
        let (jmin, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let mut xnew = ComplexField::zeros(x.grid());
        for (i, b) in basis.iter().enumerate() {
            xnew.axpy(Complex64::new(eig.eigenvectors[(i, jmin)], 0.0), b);
        }
        let mut pnew = xnew.clone();
        pnew.axpy(Complex64::new(-eig.eigenvectors[(0, jmin)], 0.0), &basis[0]);
        let np = l2_norm(&pnew);
        p = if np > 1e-12 {
            pnew.scale(Complex64::new(1.0 / np, 0.0));
            Some(pnew)
        } else {
            None
        };
        let nxn = l2_norm(&xnew);
        xnew.scale(Complex64::new(1.0 / nxn, 0.0));
        x = xnew;
    }
    let certified = certify_above.map(|t| theta - resnorm > t).unwrap_or(false);
    Ok(LopcgOutcome {
        eigenvalue: theta,
        eigenvector: x,
        residual: resnorm,
        iterations,
        certified_above: certified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{laplacian_apply, Grid2D};

    #[test]
    fn pcg_solves_shifted_laplacian() {
        let grid = Grid2D::new(32, 10.0).unwrap();
        let mut rng = crate::rng::seeded(5);
        let b = crate::rng::smooth_field(&grid, &mut rng, 4.0);
        let apply = |f: &ComplexField| {
            let mut out = laplacian_apply(f).unwrap();
            out.scale(Complex64::new(-1.0, 0.0));
            out.axpy(Complex64::new(2.0, 0.0), f);
            out
        };
        let precond = |f: &ComplexField| {
            f.apply_multiplier(|k1, k2| Complex64::new(1.0 / (k1 * k1 + k2 * k2 + 2.0), 0.0))
        };
        let (x, res) = pcg(apply, precond, &b, None, 1e-12, 200).unwrap();
        assert!(res < 1e-12);
        let diff = apply(&x).sub(&b).unwrap();
        assert!(l2_norm(&diff) < 1e-10 * l2_norm(&b));
    }

    #[test]
    fn gmres_solves_complex_shift() {
        let grid = Grid2D::new(32, 10.0).unwrap();
        let mut rng = crate::rng::seeded(9);
        let b = crate::rng::smooth_field(&grid, &mut rng, 4.0);
        let apply = |f: &ComplexField| {
            let mut out = laplacian_apply(f).unwrap();
            out.scale(Complex64::new(-1.0, 0.0));
            out.axpy(Complex64::new(1.0, 0.5), f);
            out
        };
        let (x, res) = gmres(apply, &b, None, 1e-10, 40, 20).unwrap();
        assert!(res < 1e-10, "res = {res}");
        let diff = apply(&x).sub(&b).unwrap();
        assert!(l2_norm(&diff) < 1e-8 * l2_norm(&b));
    }
}
