//! Order-0 and order-1 Bessel functions of the first and second kind.
//!
//! Power series below `z = 12`, Hankel's asymptotic expansion beyond. The
//! asymptotic branch keeps enough correction terms that the switch point is
//! the accuracy bottleneck: at `z = 12` the truncation floor is ~1e-11,
//! while the series still carries full double precision there. (Moving the
//! switch below ~10 would let the asymptotic truncation floor through;
//! see the Wronskian test.)

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const SWITCH: f64 = 12.0;
const SERIES_MAX_TERMS: usize = 60;
const ASYMPTOTIC_MAX_TERMS: usize = 24;

/// Evaluation method actually used for a given argument.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMethod {
    PowerSeries,
    Asymptotic,
}

/// Order-0 pair `(J0, Y0)` with the method tag.
#[derive(Clone, Copy, Debug)]
pub struct BesselEval {
    pub j0: f64,
    pub y0: f64,
    pub method: EvalMethod,
}

pub fn bessel_eval(z: f64) -> Result<BesselEval> {
    Ok(BesselEval {
        j0: bessel_j0(z)?,
        y0: bessel_y0(z)?,
        method: if z <= SWITCH {
            EvalMethod::PowerSeries
        } else {
            EvalMethod::Asymptotic
        },
    })
}

pub fn bessel_j0(z: f64) -> Result<f64> {
    if z < 0.0 || !z.is_finite() {
        return Err(Error::InvalidParameter(format!("J0 requires z >= 0, got {z}")));
    }
    if z <= SWITCH {
        Ok(j0_series(z))
    } else {
        Ok(asymptotic(z, 0).0)
    }
}

pub fn bessel_y0(z: f64) -> Result<f64> {
    if z <= 0.0 || !z.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "Y0 requires z > 0 (logarithmic singularity at 0), got {z}"
        )));
    }
    if z <= SWITCH {
        Ok(y0_series(z))
    } else {
        Ok(asymptotic(z, 0).1)
    }
}

pub fn bessel_j1(z: f64) -> Result<f64> {
    if z < 0.0 || !z.is_finite() {
        return Err(Error::InvalidParameter(format!("J1 requires z >= 0, got {z}")));
    }
    if z <= SWITCH {
        Ok(j1_series(z))
    } else {
        Ok(asymptotic(z, 1).0)
    }
}

pub fn bessel_y1(z: f64) -> Result<f64> {
    if z <= 0.0 || !z.is_finite() {
        return Err(Error::InvalidParameter(format!("Y1 requires z > 0, got {z}")));
    }
    if z <= SWITCH {
        Ok(y1_series(z))
    } else {
        Ok(asymptotic(z, 1).1)
    }
}

/// Hankel function `H0^{side} = J0 + side * i * Y0` for `side = +-1`.
pub fn hankel_h0(z: f64, side: i8) -> Result<Complex64> {
    let e = bessel_eval(z)?;
    Ok(Complex64::new(e.j0, f64::from(side) * e.y0))
}

fn j0_series(z: f64) -> f64 {
    let q = 0.25 * z * z;
    let mut term = 1.0;
    let mut sum = 1.0;
    for m in 1..SERIES_MAX_TERMS {
        term *= -q / ((m * m) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

fn y0_series(z: f64) -> f64 {
    let q = 0.25 * z * z;
    let mut term = 1.0;
    let mut harmonic = 0.0;
    let mut sum = 0.0;
    for k in 1..SERIES_MAX_TERMS {
        term *= q / ((k * k) as f64);
        harmonic += 1.0 / k as f64;
        let contrib = if k % 2 == 1 { harmonic * term } else { -harmonic * term };
        sum += contrib;
        if term.abs() * harmonic < 1e-18 {
            break;
        }
    }
    let pref = 2.0 / std::f64::consts::PI;
    pref * (((0.5 * z).ln() + EULER_GAMMA) * j0_series(z) + sum)
}

fn j1_series(z: f64) -> f64 {
    let q = 0.25 * z * z;
    let mut term = 0.5 * z;
    let mut sum = term;
    for m in 1..SERIES_MAX_TERMS {
        term *= -q / ((m * (m + 1)) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

fn y1_series(z: f64) -> f64 {
    // Y1 = (2/pi)[(ln(z/2)+gamma) J1 - 1/z]
    //      - (z/(2 pi)) sum_k (-1)^k (H_k + H_{k+1}) q^k / (k!(k+1)!)
    let q = 0.25 * z * z;
    let mut factor = 1.0; // q^k / (k!(k+1)!)
    let mut h_k = 0.0;
    let mut h_k1 = 1.0;
    let mut sum = h_k + h_k1;
    for k in 1..SERIES_MAX_TERMS {
        factor *= q / ((k * (k + 1)) as f64);
        h_k += 1.0 / k as f64;
        h_k1 += 1.0 / (k + 1) as f64;
        let contrib = factor * (h_k + h_k1);
        sum += if k % 2 == 0 { contrib } else { -contrib };
        if factor * (h_k + h_k1) < 1e-18 {
            break;
        }
    }
    let pref = 2.0 / std::f64::consts::PI;
    pref * (((0.5 * z).ln() + EULER_GAMMA) * j1_series(z) - 1.0 / z)
        - z / (2.0 * std::f64::consts::PI) * sum
}

/// Hankel's large-argument expansion for order `nu`, returning `(J, Y)`.
fn asymptotic(z: f64, nu: u32) -> (f64, f64) {
    let mu = 4.0 * (nu * nu) as f64;
    // signed a_m: a_0 = 1, a_m = a_{m-1} (mu - (2m-1)^2) / (8 m)
    let mut a = 1.0;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut last = f64::INFINITY;
    for m in 1..=ASYMPTOTIC_MAX_TERMS {
        let odd = (2 * m - 1) as f64;
        a *= (mu - odd * odd) / (8.0 * m as f64);
        let term = a / z.powi(m as i32);
        if term.abs() > last {
            break; // divergent tail reached
        }
        last = term.abs();
        let k = m / 2;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        if m % 2 == 0 {
            p += sign * term;
        } else {
            q += sign * term;
        }
        if term.abs() < 1e-18 {
            break;
        }
    }
    let chi = z - (0.25 + 0.5 * nu as f64) * std::f64::consts::PI;
    let pref = (2.0 / (std::f64::consts::PI * z)).sqrt();
    let (s, c) = chi.sin_cos();
    (pref * (p * c - q * s), pref * (p * s + q * c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn j0_at_zero_is_one() {
        assert_eq!(bessel_j0(0.0).unwrap(), 1.0);
    }

    #[test]
    fn negative_and_zero_arguments_rejected() {
        assert!(bessel_j0(-1.0).is_err());
        assert!(bessel_y0(0.0).is_err());
        assert!(bessel_y0(-2.0).is_err());
    }

    #[test]
    fn y0_logarithmic_limit() {
        // Y0(z) - (2/pi)(ln(z/2) + gamma) -> 0 like z^2 log z
        for z in [1e-3, 1e-4] {
            let y = bessel_y0(z).unwrap();
            let lead = 2.0 / std::f64::consts::PI * ((0.5 * z).ln() + EULER_GAMMA);
            let rest = y - lead;
            assert!(
                (rest / (z * z)).abs() < 10.0,
                "z={z}: remainder {rest} not O(z^2 log z)"
            );
        }
    }

    #[test]
    fn first_j0_zero() {
        // bisection against the series
        let (mut lo, mut hi) = (2.0, 3.0);
        assert!(bessel_j0(lo).unwrap() > 0.0 && bessel_j0(hi).unwrap() < 0.0);
        while hi - lo > 1e-14 {
            let mid = 0.5 * (lo + hi);
            if bessel_j0(mid).unwrap() > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((0.5 * (lo + hi) - 2.404825557695773).abs() < 1e-12);
    }

    #[test]
    fn reference_values() {
        // high-precision values (Abramowitz & Stegun / mpmath)
        let cases = [
            (1.0, 0.7651976865579666, 0.08825696421567696),
            (5.0, -0.17759677131433830, -0.30851762524903376),
            (10.0, -0.24593576445134834, 0.05567116728359939),
            (15.0, -0.01422447282678077, 0.20546429603891825),
            (50.0, 0.05581232766925181, -0.09806499547007233),
        ];
        for (z, j, y) in cases {
            assert_relative_eq!(bessel_j0(z).unwrap(), j, epsilon = 1e-10);
            assert_relative_eq!(bessel_y0(z).unwrap(), y, epsilon = 1e-10);
        }
        let cases1 = [
            (1.0, 0.4400505857449335, -0.7812128213002887),
            (10.0, 0.04347274616886144, 0.24901542420695388),
            (20.0, 0.06683312417584991, -0.16551161436252115),
        ];
        for (z, j, y) in cases1 {
            assert_relative_eq!(bessel_j1(z).unwrap(), j, epsilon = 1e-10);
            assert_relative_eq!(bessel_y1(z).unwrap(), y, epsilon = 1e-10);
        }
    }

    #[test]
    fn wronskian_identity_across_range() {
        // J0 Y0' - J0' Y0 = 2/(pi z), with J0' = -J1 and Y0' = -Y1
        let mut z = 0.1;
        while z <= 50.0 {
            let j0 = bessel_j0(z).unwrap();
            let y0 = bessel_y0(z).unwrap();
            let j1 = bessel_j1(z).unwrap();
            let y1 = bessel_y1(z).unwrap();
            let w = j1 * y0 - j0 * y1;
            let exact = 2.0 / (std::f64::consts::PI * z);
            assert!(
                ((w - exact) / exact).abs() < 1e-8,
                "z = {z}: wronskian rel err {}",
                ((w - exact) / exact).abs()
            );
            z += 0.07;
        }
    }

    #[test]
    fn method_tag_switches() {
        assert_eq!(bessel_eval(5.0).unwrap().method, EvalMethod::PowerSeries);
        assert_eq!(bessel_eval(30.0).unwrap().method, EvalMethod::Asymptotic);
    }
}
