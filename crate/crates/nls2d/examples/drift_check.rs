// scratch diagnostic, removed before release
use nls2d::bound::ProfileSolver;
use nls2d::evolution::{evolve_with, EvolutionConfig};
use nls2d::grid::{ComplexField, Grid2D};
use nls2d::spectral::{ground_state, project, Potential, SpectralPart};
use num_complex::Complex64;
use std::time::Instant;

fn main() {
    let grid = Grid2D::new(256, 60.0).unwrap();
    let pot = Potential::gaussian_well(&grid, 5.0, 1.0);
    let t0 = Instant::now();
    let sd = ground_state(&pot).unwrap();
    println!("ground state in {:?}: E* = {}", t0.elapsed(), sd.e_star);
    let solver = ProfileSolver::new(&pot, &sd, 1.0, 3.0).unwrap();
    let t0 = Instant::now();
    let prof = solver.profile(sd.e_star + 0.04, None).unwrap();
    println!("profile in {:?}, residual {:.3e}", t0.elapsed(), prof.residual);
    let bump = ComplexField::gaussian(&grid, (0.0, 0.0), 2.0, 1.0);
    let mut eta = project(&bump, SpectralPart::Continuous, &sd).unwrap();
    let nrm = nls2d::grid::h1_norm(&eta);
    eta.scale(Complex64::new(0.02 / nrm, 0.0));
    let mut u0 = prof.phi.clone();
    u0.axpy(Complex64::new(1.0, 0.0), &eta);
    for dt in [0.005, 0.0025] {
        let cfg = EvolutionConfig::new(dt, 10.0, (0.5 / dt) as usize).unwrap();
        let t0 = Instant::now();
        let rep = evolve_with(&u0, &pot, 1.0, 3.0, &cfg, |_, _| Ok(())).unwrap();
        let el = t0.elapsed();
        println!(
            "dt={dt}: T=10 in {:?} ({:.2} ms/step), drift_N={:.3e}, drift_H={:.3e}",
            el,
            el.as_secs_f64() * 1e3 / (10.0 / dt),
            rep.drift_n,
            rep.drift_h
        );
    }
}
