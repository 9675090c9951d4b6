//! Gradient-guided rounding from a (near-)stationary relaxation point to a
//! one-hot assignment, and the blockwise KKT stationarity predicate.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::formulation::{AssignmentForm, AssignmentVector};

/// Round blockwise along the gradient: sweep blocks in order, recompute the
/// block gradient at the current point, and set the block to the indicator
/// of its smallest gradient coordinate (ties to the smallest index).
///
/// Because the objective is affine in each block, replacing a simplex-
/// feasible block by the gradient-argmin indicator never increases it, so
/// for feasible inputs the rounded value satisfies f(out) ≤ f(in). Negative
/// entries are clamped to zero first; the argmin consults only gradients, so
/// approximate feasibility of penalty-method output does not corrupt it.
pub fn round_gradient_guided(form: &AssignmentForm, t0: &DVector<f64>) -> AssignmentVector {
    let (n, m) = (form.n, form.mod_order);
    assert_eq!(t0.len(), n * m, "assignment vector has wrong length");
    let mut t = t0.map(|x| x.max(0.0));
    let mut y = form.lift(&t);
    let mut z = &form.gram_embed * &y;
    for j in 0..n {
        let g = form.block_gradient_from_lift(j, &y, &z);
        let mut pick = 0usize;
        let mut best = g[0];
        for k in 1..m {
            if g[k] < best {
                best = g[k];
                pick = k;
            }
        }
        let da = form.alpha[pick] - y[j];
        let db = form.beta[pick] - y[j + form.n];
        if da != 0.0 || db != 0.0 {
            z.axpy(da, &form.gram_embed.column(j).clone_owned(), 1.0);
            z.axpy(db, &form.gram_embed.column(j + form.n).clone_owned(), 1.0);
            y[j] = form.alpha[pick];
            y[j + form.n] = form.beta[pick];
        }
        for k in 0..m {
            t[j * m + k] = 0.0;
        }
        t[j * m + pick] = 1.0;
    }
    AssignmentVector::new(t, n, m).expect("length preserved")
}

/// Blockwise KKT test at a feasible point: within each block the gradient is
/// constant (within `tol`) across the positive support, and no zero
/// coordinate has a gradient below that level by more than `tol`.
pub fn is_stationary(form: &AssignmentForm, t: &DVector<f64>, tol: f64) -> Result<bool> {
    let (n, m) = (form.n, form.mod_order);
    if t.len() != n * m {
        return Err(Error::DimensionMismatch(format!(
            "assignment vector has length {}, expected {}",
            t.len(),
            n * m
        )));
    }
    if let Some(i) = t.iter().position(|&x| x < -tol) {
        return Err(Error::Infeasible(format!(
            "entry {i} is {} below the nonnegativity bound",
            -t[i]
        )));
    }
    for j in 0..n {
        let sum: f64 = t.rows(j * m, m).sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::Infeasible(format!(
                "block {j} sums to {sum}, outside 1 ± {tol}"
            )));
        }
    }
    let g = form.gradient(t);
    for j in 0..n {
        let mut support_min = f64::INFINITY;
        let mut support_max = f64::NEG_INFINITY;
        let mut zero_min = f64::INFINITY;
        for k in 0..m {
            let gv = g[j * m + k];
            if t[j * m + k] > tol {
                support_min = support_min.min(gv);
                support_max = support_max.max(gv);
            } else {
                zero_min = zero_min.min(gv);
            }
        }
        if support_min == f64::INFINITY {
            return Ok(false);
        }
        if support_max - support_min > tol {
            return Ok(false);
        }
        if zero_min < support_max - tol {
            return Ok(false);
        }
    }
    Ok(true)
}
