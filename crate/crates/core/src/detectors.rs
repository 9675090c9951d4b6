//! Baseline and oracle detectors sharing the penalty detector's result type:
//! MMSE, gradient projection over the constellation, exhaustive maximum
//! likelihood for small problems, and the no-interference lower bound.

use clap::ValueEnum;
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::formulation::hermitian_embed;
use crate::model::{ChannelInstance, PskConstellation};
use crate::solver::{pnqp_detect, DetectionResult, SolverConfig, Termination};

/// Default cap on M^n for the exhaustive search.
pub const DEFAULT_ML_CAP: u64 = 1 << 24;

/// The detectors this crate ships.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    /// Quadratic-penalty projected-Newton detector.
    Pnqp,
    /// Gradient projection over the discrete constellation.
    Gpm,
    /// Regularized linear estimate projected to the constellation.
    Mmse,
    /// Exhaustive maximum likelihood (global optimum, small n only).
    MlBruteforce,
    /// Per-symbol detection with all other symbols fixed to the truth.
    Lb,
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DetectorKind::Pnqp => "pnqp",
            DetectorKind::Gpm => "gpm",
            DetectorKind::Mmse => "mmse",
            DetectorKind::MlBruteforce => "ml_bruteforce",
            DetectorKind::Lb => "lb",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pnqp" => Ok(Self::Pnqp),
            "gpm" => Ok(Self::Gpm),
            "mmse" => Ok(Self::Mmse),
            "ml_bruteforce" | "ml" => Ok(Self::MlBruteforce),
            "lb" => Ok(Self::Lb),
            other => Err(Error::InvalidParameter(format!("unknown detector {other:?}"))),
        }
    }
}

/// MMSE detector output: the linear estimate and its projection.
#[derive(Debug, Clone)]
pub struct MmseOutput {
    pub x_soft: Vec<Complex64>,
    pub x_hat: Vec<Complex64>,
}

/// x_soft = (H†H + σ²I)⁻¹H†r projected entrywise to the constellation.
///
/// Solved through the real 2n×2n embedding; for σ² = 0 with a rank-deficient
/// channel the solve falls back to an eigendecomposition pseudo-inverse.
pub fn mmse_detect(instance: &ChannelInstance) -> Result<MmseOutput> {
    let n = instance.n();
    let gram = instance.h.adjoint() * &instance.h;
    let rhs_c = instance.h.adjoint() * &instance.r;
    let mut a = hermitian_embed(&gram);
    for i in 0..2 * n {
        a[(i, i)] += instance.sigma2;
    }
    let mut b = DVector::zeros(2 * n);
    for j in 0..n {
        b[j] = rhs_c[j].re;
        b[j + n] = rhs_c[j].im;
    }
    let y = match Cholesky::new(a.clone()) {
        Some(chol) => chol.solve(&b),
        None => {
            let eig = SymmetricEigen::new(a);
            let lambda_max = eig.eigenvalues.iter().fold(0.0f64, |acc, &l| acc.max(l.abs()));
            let cutoff = 1e-12 * lambda_max.max(1.0);
            let coeffs = eig.eigenvectors.transpose() * &b;
            let scaled = DVector::from_fn(2 * n, |i, _| {
                if eig.eigenvalues[i].abs() > cutoff {
                    coeffs[i] / eig.eigenvalues[i]
                } else {
                    0.0
                }
            });
            &eig.eigenvectors * scaled
        }
    };
    let x_soft: Vec<Complex64> = (0..n).map(|j| Complex64::new(y[j], y[j + n])).collect();
    let cons = PskConstellation::new(instance.mod_order)?;
    let x_hat = x_soft
        .iter()
        .map(|&z| cons.symbol(cons.nearest_index(z)))
        .collect();
    Ok(MmseOutput { x_soft, x_hat })
}

/// Gradient projection options.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GpmOptions {
    /// Fixed stepsize; when absent, 1/(2·λ_max(H†H)) estimated by power
    /// iteration.
    pub step: Option<f64>,
    pub max_iter: usize,
    pub power_iters: usize,
}

impl Default for GpmOptions {
    fn default() -> Self {
        Self {
            step: None,
            max_iter: 500,
            power_iters: 20,
        }
    }
}

/// Largest eigenvalue of the Hermitian PSD matrix by power iteration from a
/// deterministic start.
fn lambda_max_power(gram: &DMatrix<Complex64>, iters: usize) -> f64 {
    let n = gram.nrows();
    let mut v = DVector::from_element(n, Complex64::new(1.0 / (n as f64).sqrt(), 0.0));
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = gram * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w.unscale(norm);
        lambda = (v.adjoint() * gram * &v)[(0, 0)].re;
    }
    lambda
}

/// Gradient projection over the discrete constellation: x ← Π(x − s·∇F(x))
/// with ∇F(x) = 2(Qx + c). Tracks and returns the best iterate by residual
/// objective among all generated points, so the result never beats x0 from
/// below.
pub fn gpm_detect(
    instance: &ChannelInstance,
    x0: &[Complex64],
    opts: &GpmOptions,
) -> Result<DetectionResult> {
    let start = Instant::now();
    let n = instance.n();
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "initial point has length {}, expected {n}",
            x0.len()
        )));
    }
    let cons = PskConstellation::new(instance.mod_order)?;
    for (j, &z) in x0.iter().enumerate() {
        if cons.exact_index(z).is_none() {
            return Err(Error::NotInConstellation {
                index: j,
                value: format!("{z}"),
            });
        }
    }
    let gram = instance.h.adjoint() * &instance.h;
    let c = -(instance.h.adjoint() * &instance.r);
    let step = match opts.step {
        Some(s) => s,
        None => {
            let lambda = lambda_max_power(&gram, opts.power_iters);
            if lambda > 0.0 {
                1.0 / (2.0 * lambda)
            } else {
                1.0
            }
        }
    };

    let mut x = DVector::from_column_slice(x0);
    let mut best_x = x.clone();
    let mut best_obj = instance.residual_norm_sq(x.as_slice());
    let mut termination = Termination::IterationCap;
    let mut iters = 0usize;
    for _ in 0..opts.max_iter {
        let grad = (&gram * &x + &c).scale(2.0);
        let moved = &x - grad.scale(step);
        let next = DVector::from_fn(n, |j, _| cons.symbol(cons.nearest_index(moved[j])));
        iters += 1;
        let obj = instance.residual_norm_sq(next.as_slice());
        if obj < best_obj {
            best_obj = obj;
            best_x = next.clone();
        }
        if next == x {
            termination = Termination::FixedPoint;
            break;
        }
        x = next;
    }

    let x_hat: Vec<Complex64> = best_x.iter().copied().collect();
    let symbol_indices = x_hat.iter().map(|&z| cons.nearest_index(z)).collect();
    let ser = instance.ser_of(&x_hat)?;
    Ok(DetectionResult {
        x_hat,
        symbol_indices,
        t_final: None,
        objective: best_obj,
        ser,
        outer_iters: iters,
        inner_iters_total: 0,
        wall_time_s: start.elapsed().as_secs_f64(),
        termination,
        solver_diag: None,
        trace: Vec::new(),
    })
}

/// Exhaustive maximum-likelihood search: the exact global minimizer of
/// ‖Hx − r‖² over all Mⁿ constellation vectors, ties resolved to the
/// lexicographically smallest index vector. Errors out when Mⁿ exceeds
/// `cap`.
pub fn ml_bruteforce(instance: &ChannelInstance, cap: u64) -> Result<DetectionResult> {
    let start = Instant::now();
    let (m, n) = (instance.m(), instance.n());
    let m_ord = instance.mod_order;
    let required = (m_ord as f64).powi(n as i32);
    if required > cap as f64 {
        return Err(Error::CapacityExceeded { required, cap });
    }
    let cons = PskConstellation::new(m_ord)?;

    // Depth-first sweep in index order with incremental residuals; the
    // first leaf attaining the minimum is the lexicographically smallest.
    let columns: Vec<DVector<Complex64>> = (0..n).map(|j| instance.h.column(j).clone_owned()).collect();
    let mut partial: Vec<DVector<Complex64>> = vec![DVector::zeros(m); n + 1];
    partial[0] = instance.r.clone();
    let mut indices = vec![0usize; n];
    let mut best_indices = vec![0usize; n];
    let mut best_obj = f64::INFINITY;
    let mut depth = 0usize;
    loop {
        if depth == n {
            let obj = partial[n].norm_squared();
            if obj < best_obj {
                best_obj = obj;
                best_indices.copy_from_slice(&indices);
            }
            // Backtrack to the next unfinished branch.
            loop {
                if depth == 0 {
                    let x_hat: Vec<Complex64> =
                        best_indices.iter().map(|&k| cons.symbol(k)).collect();
                    let ser = instance.ser_of(&x_hat)?;
                    return Ok(DetectionResult {
                        x_hat,
                        symbol_indices: best_indices,
                        t_final: None,
                        objective: best_obj,
                        ser,
                        outer_iters: 0,
                        inner_iters_total: 0,
                        wall_time_s: start.elapsed().as_secs_f64(),
                        termination: Termination::Direct,
                        solver_diag: None,
                        trace: Vec::new(),
                    });
                }
                depth -= 1;
                if indices[depth] + 1 < m_ord {
                    indices[depth] += 1;
                    break;
                }
                indices[depth] = 0;
            }
        }
        // Extend: partial[depth+1] = partial[depth] − h_depth·s_k.
        let s = cons.symbol(indices[depth]);
        let (head, tail) = partial.split_at_mut(depth + 1);
        tail[0].copy_from(&head[depth]);
        tail[0].axpy(-s, &columns[depth], Complex64::new(1.0, 0.0));
        depth += 1;
    }
}

/// The no-interference bound: detect each symbol with every other entry
/// fixed to the ground truth. Its SER floors what any real detector can do.
pub fn no_interference_lb(instance: &ChannelInstance) -> Result<DetectionResult> {
    let start = Instant::now();
    let n = instance.n();
    let m_ord = instance.mod_order;
    let cons = PskConstellation::new(m_ord)?;
    // With all other slots at the truth, H(x*; slot j → s) − r = h_j(s − x*_j) − v.
    let mut indices = Vec::with_capacity(n);
    for j in 0..n {
        let col = instance.h.column(j);
        let mut best = 0usize;
        let mut best_obj = f64::INFINITY;
        for k in 0..m_ord {
            let delta = cons.symbol(k) - instance.x_star[j];
            let mut obj = 0.0;
            for i in 0..instance.m() {
                obj += (col[i] * delta - instance.v[i]).norm_sqr();
            }
            if obj < best_obj {
                best_obj = obj;
                best = k;
            }
        }
        indices.push(best);
    }
    let x_hat: Vec<Complex64> = indices.iter().map(|&k| cons.symbol(k)).collect();
    let objective = instance.residual_norm_sq(&x_hat);
    let ser = instance.ser_of(&x_hat)?;
    Ok(DetectionResult {
        x_hat,
        symbol_indices: indices,
        t_final: None,
        objective,
        ser,
        outer_iters: 0,
        inner_iters_total: 0,
        wall_time_s: start.elapsed().as_secs_f64(),
        termination: Termination::Direct,
        solver_diag: None,
        trace: Vec::new(),
    })
}

/// Shared knobs for `run_detector`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    pub solver: SolverConfig,
    pub gpm: GpmOptions,
    pub ml_cap: Option<u64>,
}

/// Dispatch an instance to a detector. GPM starts from the MMSE estimate.
pub fn run_detector(
    kind: DetectorKind,
    instance: &ChannelInstance,
    params: &DetectorParams,
) -> Result<DetectionResult> {
    match kind {
        DetectorKind::Pnqp => pnqp_detect(instance, &params.solver),
        DetectorKind::Gpm => {
            let mmse = mmse_detect(instance)?;
            gpm_detect(instance, &mmse.x_hat, &params.gpm)
        }
        DetectorKind::Mmse => {
            let start = Instant::now();
            let out = mmse_detect(instance)?;
            let cons = PskConstellation::new(instance.mod_order)?;
            let symbol_indices = out.x_hat.iter().map(|&z| cons.nearest_index(z)).collect();
            let objective = instance.residual_norm_sq(&out.x_hat);
            let ser = instance.ser_of(&out.x_hat)?;
            Ok(DetectionResult {
                x_hat: out.x_hat,
                symbol_indices,
                t_final: None,
                objective,
                ser,
                outer_iters: 0,
                inner_iters_total: 0,
                wall_time_s: start.elapsed().as_secs_f64(),
                termination: Termination::Direct,
                solver_diag: None,
                trace: Vec::new(),
            })
        }
        DetectorKind::MlBruteforce => {
            ml_bruteforce(instance, params.ml_cap.unwrap_or(DEFAULT_ML_CAP))
        }
        DetectorKind::Lb => no_interference_lb(instance),
    }
}
