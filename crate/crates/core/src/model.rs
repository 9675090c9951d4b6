//! Complex channel model types, M-PSK constellation arithmetic, and the
//! symbol error rate metric shared by every detector.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::f64::consts::TAU;

use crate::error::{Error, Result};

/// An M-PSK constellation: the M unit-modulus symbols exp(i·2πk/M), k = 0..M-1.
///
/// Symbol 0 is always 1 + 0i and symbols are stored in angle order, so a
/// symbol is identified by its index everywhere in this crate.
#[derive(Debug, Clone, PartialEq)]
pub struct PskConstellation {
    mod_order: usize,
    symbols: Vec<Complex64>,
}

impl PskConstellation {
    /// Build the constellation of order `mod_order` (M ≥ 2).
    pub fn new(mod_order: usize) -> Result<Self> {
        if mod_order < 2 {
            return Err(Error::InvalidModulation(mod_order));
        }
        let symbols = (0..mod_order)
            .map(|k| Complex64::from_polar(1.0, TAU * k as f64 / mod_order as f64))
            .collect();
        Ok(Self { mod_order, symbols })
    }

    pub fn mod_order(&self) -> usize {
        self.mod_order
    }

    pub fn symbols(&self) -> &[Complex64] {
        &self.symbols
    }

    pub fn symbol(&self, k: usize) -> Complex64 {
        self.symbols[k]
    }

    /// Angle of symbol `k`, in [0, 2π).
    pub fn angle(&self, k: usize) -> f64 {
        TAU * k as f64 / self.mod_order as f64
    }

    /// Index of the constellation symbol nearest to `z` in Euclidean
    /// distance; ties go to the smaller index (so 0 maps to symbol 0).
    ///
    /// Quantizes the angle and then compares the two bracketing symbols,
    /// which is equivalent to a full nearest-distance scan in O(1).
    pub fn nearest_index(&self, z: Complex64) -> usize {
        let m = self.mod_order;
        let scaled = z.im.atan2(z.re) * m as f64 / TAU;
        let lo = scaled.floor() as i64;
        let a = lo.rem_euclid(m as i64) as usize;
        let b = (lo + 1).rem_euclid(m as i64) as usize;
        let da = (z - self.symbols[a]).norm_sqr();
        let db = (z - self.symbols[b]).norm_sqr();
        if da < db {
            a
        } else if db < da {
            b
        } else {
            a.min(b)
        }
    }

    /// Exact index of `z` if it is a constellation symbol: unit modulus and
    /// angle within `1e-9` of a grid angle.
    pub fn exact_index(&self, z: Complex64) -> Option<usize> {
        if (z.norm() - 1.0).abs() > 1e-9 {
            return None;
        }
        let k = self.nearest_index(z);
        let diff = (z.im.atan2(z.re) - self.angle(k)).rem_euclid(TAU);
        if diff.min(TAU - diff) <= 1e-9 {
            Some(k)
        } else {
            None
        }
    }
}

/// Project each entry of `x` to its nearest constellation symbol.
pub fn project_to_psk(x: &[Complex64], mod_order: usize) -> Result<Vec<Complex64>> {
    let cons = PskConstellation::new(mod_order)?;
    Ok(x.iter()
        .map(|&z| cons.symbol(cons.nearest_index(z)))
        .collect())
}

/// Fraction of entries where `x_hat` and `x_star` map to different
/// constellation indices. Comparison is by index, never by float equality.
pub fn symbol_error_rate(
    x_hat: &[Complex64],
    x_star: &[Complex64],
    mod_order: usize,
) -> Result<f64> {
    if x_hat.len() != x_star.len() || x_hat.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "symbol_error_rate needs equal nonempty lengths, got {} and {}",
            x_hat.len(),
            x_star.len()
        )));
    }
    let cons = PskConstellation::new(mod_order)?;
    let errors = x_hat
        .iter()
        .zip(x_star)
        .filter(|(a, b)| cons.nearest_index(**a) != cons.nearest_index(**b))
        .count();
    Ok(errors as f64 / x_hat.len() as f64)
}

/// One detection problem: received vector `r = H x_star + v` together with
/// the ground truth and noise realization that produced it.
#[derive(Debug, Clone)]
pub struct ChannelInstance {
    pub h: DMatrix<Complex64>,
    pub x_star: Vec<Complex64>,
    pub v: DVector<Complex64>,
    pub r: DVector<Complex64>,
    pub mod_order: usize,
    pub sigma2: f64,
    pub snr_db: f64,
    pub seed: u64,
}

impl ChannelInstance {
    /// Assemble an instance from parts, computing `r = H x_star + v` and
    /// validating that every ground-truth entry is a constellation symbol.
    pub fn from_parts(
        h: DMatrix<Complex64>,
        x_star: Vec<Complex64>,
        v: DVector<Complex64>,
        mod_order: usize,
        sigma2: f64,
        snr_db: f64,
        seed: u64,
    ) -> Result<Self> {
        let (m, n) = h.shape();
        if m == 0 || n == 0 {
            return Err(Error::InvalidParameter(format!(
                "channel must be nonempty, got {m}x{n}"
            )));
        }
        if x_star.len() != n || v.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "H is {m}x{n} but x_star has length {} and v length {}",
                x_star.len(),
                v.len()
            )));
        }
        if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numeric("channel matrix has non-finite entries".into()));
        }
        let cons = PskConstellation::new(mod_order)?;
        for (j, &z) in x_star.iter().enumerate() {
            if cons.exact_index(z).is_none() {
                return Err(Error::NotInConstellation {
                    index: j,
                    value: format!("{z}"),
                });
            }
        }
        let r = &h * DVector::from_column_slice(&x_star) + &v;
        Ok(Self {
            h,
            x_star,
            v,
            r,
            mod_order,
            sigma2,
            snr_db,
            seed,
        })
    }

    pub fn m(&self) -> usize {
        self.h.nrows()
    }

    pub fn n(&self) -> usize {
        self.h.ncols()
    }

    /// Residual objective ‖Hx − r‖² of a candidate symbol vector.
    pub fn residual_norm_sq(&self, x: &[Complex64]) -> f64 {
        let hx = &self.h * DVector::from_column_slice(x);
        (hx - &self.r).norm_squared()
    }

    /// Ground-truth constellation indices of `x_star`.
    pub fn star_indices(&self) -> Vec<usize> {
        let cons = PskConstellation::new(self.mod_order).expect("validated at construction");
        self.x_star.iter().map(|&z| cons.nearest_index(z)).collect()
    }

    /// SER of a candidate vector against the ground truth.
    pub fn ser_of(&self, x_hat: &[Complex64]) -> Result<f64> {
        symbol_error_rate(x_hat, &self.x_star, self.mod_order)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn bpsk_symbols() {
        let c = PskConstellation::new(2).unwrap();
        assert_eq!(c.symbols().len(), 2);
        assert_abs_diff_eq!(c.symbol(0).re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.symbol(0).im, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.symbol(1).re, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.symbol(1).im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn qpsk_symbols() {
        let c = PskConstellation::new(4).unwrap();
        let expect = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
        for (k, &(re, im)) in expect.iter().enumerate() {
            assert_abs_diff_eq!(c.symbol(k).re, re, epsilon = 1e-15);
            assert_abs_diff_eq!(c.symbol(k).im, im, epsilon = 1e-15);
        }
    }

    #[test]
    fn psk8_contains_diagonals() {
        let c = PskConstellation::new(8).unwrap();
        let half_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        for (re, im) in [
            (half_sqrt2, half_sqrt2),
            (-half_sqrt2, half_sqrt2),
            (-half_sqrt2, -half_sqrt2),
            (half_sqrt2, -half_sqrt2),
        ] {
            assert!(c
                .symbols()
                .iter()
                .any(|s| (s.re - re).abs() < 1e-12 && (s.im - im).abs() < 1e-12));
        }
    }

    #[test]
    fn symbols_unit_modulus_and_distinct() {
        for m in [2usize, 3, 4, 5, 8, 16, 17] {
            let c = PskConstellation::new(m).unwrap();
            for s in c.symbols() {
                assert!((s.norm() - 1.0).abs() < 1e-12);
            }
            for a in 0..m {
                for b in a + 1..m {
                    assert!((c.symbol(a) - c.symbol(b)).norm() > 1e-9);
                }
            }
            assert!((c.symbol(0) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn modulation_below_two_rejected() {
        assert!(matches!(
            PskConstellation::new(1),
            Err(Error::InvalidModulation(1))
        ));
        assert!(matches!(
            PskConstellation::new(0),
            Err(Error::InvalidModulation(0))
        ));
    }

    #[test]
    fn nearest_index_examples() {
        let c4 = PskConstellation::new(4).unwrap();
        assert_eq!(c4.nearest_index(Complex64::new(0.9, 0.1)), 0);
        let c8 = PskConstellation::new(8).unwrap();
        assert_eq!(c8.nearest_index(Complex64::new(0.7, 0.7)), 1);
        // All distances equal at the origin: tie resolves to index 0.
        assert_eq!(c4.nearest_index(Complex64::new(0.0, 0.0)), 0);
    }

    /// Exhaustive scan with the same tie rule; independent of the
    /// quantization shortcut in `nearest_index`.
    fn nearest_by_scan(c: &PskConstellation, z: Complex64) -> usize {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (k, &s) in c.symbols().iter().enumerate() {
            let d = (z - s).norm_sqr();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    #[test]
    fn nearest_index_matches_exhaustive_scan() {
        for m in [2usize, 3, 4, 8, 16] {
            let c = PskConstellation::new(m).unwrap();
            // Deterministic grid including exact symbols and bisectors.
            for i in 0..720 {
                let angle = TAU * i as f64 / 720.0;
                for radius in [0.1, 0.7, 1.0, 3.0] {
                    let z = Complex64::from_polar(radius, angle);
                    assert_eq!(
                        c.nearest_index(z),
                        nearest_by_scan(&c, z),
                        "m={m} angle={angle} radius={radius}"
                    );
                }
            }
            // Negative-half-plane bisector: between last and first symbol.
            let z = Complex64::from_polar(1.0, -std::f64::consts::PI / m as f64);
            assert_eq!(c.nearest_index(z), nearest_by_scan(&c, z));
        }
    }

    #[test]
    fn ser_examples() {
        let c = PskConstellation::new(4).unwrap();
        let x: Vec<Complex64> = (0..16).map(|k| c.symbol(k % 4)).collect();
        assert_eq!(symbol_error_rate(&x, &x, 4).unwrap(), 0.0);

        let a = vec![c.symbol(0), c.symbol(1), c.symbol(2), c.symbol(3)];
        let mut b = a.clone();
        b[2] = c.symbol(0);
        assert_eq!(symbol_error_rate(&a, &b, 4).unwrap(), 0.25);

        assert!(symbol_error_rate(&a, &a[..3], 4).is_err());
    }

    #[test]
    fn instance_residual_consistency() {
        let h = DMatrix::from_row_slice(2, 2, &[
            Complex64::new(1.0, 0.5),
            Complex64::new(-0.3, 0.2),
            Complex64::new(0.1, -1.0),
            Complex64::new(0.8, 0.0),
        ]);
        let c = PskConstellation::new(4).unwrap();
        let x = vec![c.symbol(1), c.symbol(3)];
        let v = DVector::from_column_slice(&[Complex64::new(0.01, 0.0), Complex64::new(0.0, -0.02)]);
        let inst = ChannelInstance::from_parts(h.clone(), x.clone(), v.clone(), 4, 0.1, 10.0, 7).unwrap();
        let recomputed = &h * DVector::from_column_slice(&x) + v;
        assert!((&inst.r - recomputed).norm() < 1e-12);
        assert_abs_diff_eq!(inst.residual_norm_sq(&x), inst.v.norm_squared(), epsilon = 1e-12);
    }

    #[test]
    fn instance_rejects_bad_ground_truth() {
        let h = DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
        let v = DVector::from_element(1, Complex64::new(0.0, 0.0));
        let bad = vec![Complex64::new(0.5, 0.5)];
        assert!(matches!(
            ChannelInstance::from_parts(h, bad, v, 4, 0.0, f64::INFINITY, 0),
            Err(Error::NotInConstellation { .. })
        ));
    }

    proptest! {
        #[test]
        fn projection_idempotent(m in 2usize..17, re in -3.0f64..3.0, im in -3.0f64..3.0) {
            let c = PskConstellation::new(m).unwrap();
            let z = Complex64::new(re, im);
            let k = c.nearest_index(z);
            prop_assert_eq!(c.nearest_index(c.symbol(k)), k);
        }

        #[test]
        fn rotation_permutes_indices(m in 2usize..17, k in 0usize..16) {
            let k = k % m;
            let c = PskConstellation::new(m).unwrap();
            let rot = Complex64::from_polar(1.0, TAU / m as f64);
            let rotated = c.symbol(k) * rot;
            prop_assert_eq!(c.nearest_index(rotated), (k + 1) % m);
        }

        #[test]
        fn ser_bounds_and_symmetry(m in 2usize..9, seed in 0u64..1000) {
            let c = PskConstellation::new(m).unwrap();
            let n = 8usize;
            let mut s = seed;
            let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (s >> 33) as usize };
            let a: Vec<Complex64> = (0..n).map(|_| c.symbol(next() % m)).collect();
            let b: Vec<Complex64> = (0..n).map(|_| c.symbol(next() % m)).collect();
            let sab = symbol_error_rate(&a, &b, m).unwrap();
            let sba = symbol_error_rate(&b, &a, m).unwrap();
            prop_assert!((0.0..=1.0).contains(&sab));
            prop_assert_eq!(sab, sba);
            prop_assert_eq!(symbol_error_rate(&a, &a, m).unwrap(), 0.0);
        }
    }
}
