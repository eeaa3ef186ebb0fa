//! Seeded randomness helpers; every stochastic choice in the crate goes
//! through a `ChaCha8Rng` so runs are reproducible bit for bit.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{ComplexField, Grid2D};

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Band-limited random field: white complex coefficients on modes with
/// `|k| < k_cut`, zero elsewhere. Smooth by construction.
pub fn smooth_field(grid: &Grid2D, rng: &mut ChaCha8Rng, k_cut: f64) -> ComplexField {
    let n = grid.n();
    let mut hat = vec![Complex64::default(); n * n];
    for i1 in 0..n {
        let k1 = grid.wavenumber(i1);
        for i2 in 0..n {
            let k2 = grid.wavenumber(i2);
            if k1 * k1 + k2 * k2 < k_cut * k_cut {
                hat[i1 * n + i2] =
                    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
    }
    ComplexField::from_spectral(grid, hat)
}

/// Real random field used as a generic eigensolver start vector.
pub fn real_field(grid: &Grid2D, rng: &mut ChaCha8Rng) -> ComplexField {
    let mut f = ComplexField::zeros(grid);
    for v in f.values_mut() {
        *v = Complex64::new(rng.gen_range(-1.0..1.0), 0.0);
    }
    f
}
