//! The penalty detector: a quadratic-penalty outer loop whose box-constrained
//! subproblems are solved inexactly by a projected-Newton active-set method.
//!
//! Each outer iteration minimizes f(t) + (ω/2)·Σ_j(𝟙⊤t̄_j − 1)² over the box
//! 0 ≤ t ≤ K to a projected-gradient residual of τ, then grows ω. The loop
//! stops once the ε-support set stabilizes with exactly one significant entry
//! per block, and the final point is rounded blockwise along the gradient to
//! a one-hot assignment.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::detectors::mmse_detect;
use crate::error::{Error, Result};
use crate::formulation::{t_from_x, x_from_t, AssignmentForm, AssignmentVector, DEFAULT_DENSE_THRESHOLD};
use crate::model::{ChannelInstance, PskConstellation};
use crate::rounding::round_gradient_guided;

/// Initial point for the penalty loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPoint {
    /// Every entry 1/(0.2 + M): approximately feasible, full support.
    UniformTe,
    /// The zero vector.
    Zero,
    /// One-hot encoding of the MMSE detector's output.
    Mmse,
}

/// Tunables of the penalty solver. Defaults reproduce the benchmark setup:
/// ω₀ = 10, ρ = 3, ε = 0.01, constant τ = 0.01, K = 10, initial point
/// `UniformTe`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Initial penalty weight ω₀.
    pub omega0: f64,
    /// Penalty growth factor ρ > 1.
    pub rho: f64,
    /// Support threshold ε for the stopping rule.
    pub eps_support: f64,
    /// Inner projected-gradient residual tolerance τ.
    pub tau: f64,
    /// Optional geometric decay γ so that τ_k = τ·γ^(k-1). The stopped-support
    /// rule needs no decay; this exists for convergence-theory experiments.
    pub tau_decay: Option<f64>,
    /// Box upper bound K ≥ 1.
    pub box_bound: f64,
    /// Outer iteration cap.
    pub max_outer: usize,
    /// Projected-Newton iteration cap per subproblem.
    pub max_inner: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo_sigma: f64,
    /// Halving backtracks per line search.
    pub max_backtracks: usize,
    /// Base width ε_a0 of the active-set band.
    pub active_band: f64,
    /// Initial Hessian damping λ.
    pub newton_damping: f64,
    /// Initial point choice.
    pub init: InitPoint,
    /// Build the dense coupling matrix only up to this nM.
    pub dense_threshold: usize,
    /// Free sets larger than this are solved by truncated conjugate
    /// gradients instead of a dense factorization.
    pub cg_free_threshold: usize,
    /// Record a per-outer-iteration trace in the result.
    pub collect_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            omega0: 10.0,
            rho: 3.0,
            eps_support: 0.01,
            tau: 0.01,
            tau_decay: None,
            box_bound: 10.0,
            max_outer: 30,
            max_inner: 100,
            armijo_sigma: 1e-4,
            max_backtracks: 30,
            active_band: 1e-3,
            newton_damping: 1e-8,
            init: InitPoint::UniformTe,
            dense_threshold: DEFAULT_DENSE_THRESHOLD,
            cg_free_threshold: 512,
            collect_trace: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rho <= 1.0 {
            return Err(Error::InvalidParameter(format!("rho must exceed 1, got {}", self.rho)));
        }
        if self.omega0 <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "omega0 must be positive, got {}",
                self.omega0
            )));
        }
        if !(0.0 < self.eps_support && self.eps_support < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "eps_support must lie in (0, 1), got {}",
                self.eps_support
            )));
        }
        if self.box_bound < 1.0 {
            return Err(Error::InvalidParameter(format!(
                "box bound must be at least 1, got {}",
                self.box_bound
            )));
        }
        if self.tau <= 0.0 {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {}", self.tau)));
        }
        if let Some(g) = self.tau_decay {
            if !(0.0 < g && g < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "tau decay must lie in (0, 1), got {g}"
                )));
            }
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::InvalidParameter("iteration caps must be positive".into()));
        }
        Ok(())
    }

    fn tau_at(&self, outer: usize) -> f64 {
        match self.tau_decay {
            Some(g) => self.tau * g.powi(outer as i32 - 1),
            None => self.tau,
        }
    }
}

/// Why a detector run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// ε-support stabilized with one significant entry per block.
    SupportStable,
    /// Outer iteration cap reached.
    OuterCap,
    /// Inner solver could not move on two consecutive outer iterations.
    InnerStall,
    /// Iterates reached a fixed point (gradient projection).
    FixedPoint,
    /// Iteration cap reached (gradient projection).
    IterationCap,
    /// Single-shot detector, nothing iterative to report.
    Direct,
}

/// One outer iteration of the trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub outer: usize,
    pub omega: f64,
    pub tau: f64,
    pub objective: f64,
    pub penalty: f64,
    pub kkt_residual: f64,
    pub support_size: usize,
    pub max_block_violation: f64,
}

/// Solver health counters carried in the result for contract checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverDiagnostics {
    pub final_omega: f64,
    pub final_tau: f64,
    pub final_kkt: f64,
    /// max over outer iterations of (residual at handoff − τ_k); ≤ 0 means
    /// every subproblem met its tolerance.
    pub max_handoff_excess: f64,
    /// max over accepted inner steps of f_ω increase; ≤ 0 means monotone.
    pub max_inner_increase: f64,
    /// max distance of any accepted iterate outside the box; 0 means
    /// clamping was exact.
    pub box_violation: f64,
}

/// Output common to every detector.
#[derive(Debug, Clone)]
pub struct DetectionResult {
    /// Recovered constellation-valued vector.
    pub x_hat: Vec<Complex64>,
    /// Constellation indices of `x_hat`.
    pub symbol_indices: Vec<usize>,
    /// Final one-hot assignment (penalty detector only).
    pub t_final: Option<AssignmentVector>,
    /// ‖H x_hat − r‖².
    pub objective: f64,
    /// Symbol error rate against the instance ground truth.
    pub ser: f64,
    pub outer_iters: usize,
    pub inner_iters_total: usize,
    pub wall_time_s: f64,
    pub termination: Termination,
    pub solver_diag: Option<SolverDiagnostics>,
    pub trace: Vec<TraceRow>,
}

/// Entrywise clamp of t to [0, K].
pub fn project_box(t: &DVector<f64>, box_bound: f64) -> DVector<f64> {
    t.map(|x| x.clamp(0.0, box_bound))
}

/// Value and gradient of f_ω(t) = f(t) + (ω/2)·Σ_j(𝟙⊤t̄_j − 1)².
pub fn penalty_value_grad(
    form: &AssignmentForm,
    t: &DVector<f64>,
    omega: f64,
) -> (f64, DVector<f64>) {
    let (value_f, mut grad) = form.value_and_gradient(t);
    let m = form.mod_order;
    let mut penalty = 0.0;
    for j in 0..form.n {
        let viol: f64 = t.rows(j * m, m).sum() - 1.0;
        penalty += viol * viol;
        for k in 0..m {
            grad[j * m + k] += omega * viol;
        }
    }
    (value_f + 0.5 * omega * penalty, grad)
}

/// ‖t − Π_B(t − g)‖₂ given a precomputed gradient.
pub fn kkt_residual_from_grad(t: &DVector<f64>, grad: &DVector<f64>, box_bound: f64) -> f64 {
    let mut sq = 0.0;
    for i in 0..t.len() {
        let proj = (t[i] - grad[i]).clamp(0.0, box_bound);
        let d = t[i] - proj;
        sq += d * d;
    }
    sq.sqrt()
}

/// Projected-gradient residual ‖t − Π_B(t − ∇f_ω(t))‖₂; zero exactly at
/// stationary points of the subproblem.
pub fn kkt_residual(form: &AssignmentForm, t: &DVector<f64>, omega: f64, box_bound: f64) -> f64 {
    let (_, grad) = penalty_value_grad(form, t, omega);
    kkt_residual_from_grad(t, &grad, box_bound)
}

/// (2G̃ + ω·blockdiag(𝟙𝟙⊤))·v — the subproblem Hessian.
fn hessian_apply(form: &AssignmentForm, v: &DVector<f64>, omega: f64) -> DVector<f64> {
    let mut out = form.coupling_apply(v);
    out *= 2.0;
    let m = form.mod_order;
    for j in 0..form.n {
        let s: f64 = v.rows(j * m, m).sum();
        for k in 0..m {
            out[j * m + k] += omega * s;
        }
    }
    out
}

/// Outcome of one subproblem solve.
#[derive(Debug, Clone)]
pub struct SubsolveResult {
    pub t: DVector<f64>,
    pub inner_iters: usize,
    pub kkt: f64,
    pub stalled: bool,
    pub capped: bool,
    pub max_increase: f64,
    pub box_violation: f64,
}

fn box_violation(t: &DVector<f64>, box_bound: f64) -> f64 {
    t.iter()
        .map(|&x| (-x).max(x - box_bound).max(0.0))
        .fold(0.0, f64::max)
}

/// Damped Newton direction on the free set through a dense factorization,
/// doubling λ until the matrix factors. Returns the direction scattered into
/// a full-size vector, or None when damping is exhausted.
fn newton_direction_dense(
    form: &AssignmentForm,
    gt: &DMatrix<f64>,
    omega: f64,
    free: &[usize],
    grad: &DVector<f64>,
    lambda_state: &mut f64,
) -> Option<DVector<f64>> {
    let m = form.mod_order;
    let nf = free.len();
    let mut hff = DMatrix::zeros(nf, nf);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            let mut v = 2.0 * gt[(i, j)];
            if i / m == j / m {
                v += omega;
            }
            hff[(a, b)] = v;
        }
    }
    let rhs = DVector::from_fn(nf, |a, _| -grad[free[a]]);
    let mut lambda = *lambda_state;
    loop {
        let mut damped = hff.clone();
        for a in 0..nf {
            damped[(a, a)] += lambda;
        }
        if let Some(chol) = Cholesky::new(damped) {
            let d_free = chol.solve(&rhs);
            // Carry a relaxed damping level into the next iteration.
            *lambda_state = (lambda / 4.0).max(1e-12);
            let mut d = DVector::zeros(grad.len());
            for (a, &i) in free.iter().enumerate() {
                d[i] = d_free[a];
            }
            return Some(d);
        }
        lambda = (lambda * 2.0).max(1e-12);
        if lambda > 1e8 {
            return None;
        }
    }
}

/// Inexact Newton direction on the free set by conjugate gradients on the
/// operator form, truncated at 10% relative residual. Exits on negative
/// curvature with the progress made so far (or steepest descent if none).
fn newton_direction_cg(
    form: &AssignmentForm,
    omega: f64,
    free: &[usize],
    grad: &DVector<f64>,
    lambda: f64,
) -> DVector<f64> {
    let dim = grad.len();
    let nf = free.len();
    let apply = |p: &DVector<f64>| -> DVector<f64> {
        let mut full = DVector::zeros(dim);
        for (a, &i) in free.iter().enumerate() {
            full[i] = p[a];
        }
        let hv = hessian_apply(form, &full, omega);
        DVector::from_fn(nf, |a, _| hv[free[a]] + lambda * p[a])
    };

    let b = DVector::from_fn(nf, |a, _| -grad[free[a]]);
    let mut d = DVector::zeros(nf);
    let mut resid = b.clone();
    let mut p = resid.clone();
    let mut rs = resid.norm_squared();
    let rs0 = rs;
    if rs0 == 0.0 {
        return DVector::zeros(dim);
    }
    let max_iters = nf.min(200);
    for it in 0..max_iters {
        let ap = apply(&p);
        let p_ap = p.dot(&ap);
        if p_ap <= 1e-14 * p.norm_squared() {
            if it == 0 {
                d = b.clone();
            }
            break;
        }
        let step = rs / p_ap;
        d.axpy(step, &p, 1.0);
        resid.axpy(-step, &ap, 1.0);
        let rs_new = resid.norm_squared();
        if rs_new.sqrt() <= 0.1 * rs0.sqrt() {
            break;
        }
        let ratio = rs_new / rs;
        p = &resid + p.scale(ratio);
        rs = rs_new;
    }
    let mut out = DVector::zeros(dim);
    for (a, &i) in free.iter().enumerate() {
        out[i] = d[a];
    }
    out
}

/// Backtracking search along the projection arc t(α) = Π_B(t + α·d).
/// Accepts only steps that both satisfy the Armijo condition and do not
/// increase f_ω. Returns the new point with its value and gradient.
fn arc_search(
    form: &AssignmentForm,
    omega: f64,
    t: &DVector<f64>,
    value: f64,
    grad: &DVector<f64>,
    direction: &DVector<f64>,
    config: &SolverConfig,
) -> Option<(DVector<f64>, f64, DVector<f64>)> {
    let mut alpha = 1.0;
    for _ in 0..=config.max_backtracks {
        let t_new = project_box(&(t + direction.scale(alpha)), config.box_bound);
        if t_new == *t {
            alpha *= 0.5;
            continue;
        }
        let (f_new, g_new) = penalty_value_grad(form, &t_new, omega);
        let predicted = grad.dot(&(&t_new - t));
        if f_new <= value + config.armijo_sigma * predicted && f_new <= value {
            return Some((t_new, f_new, g_new));
        }
        alpha *= 0.5;
    }
    None
}

/// Solve one penalty subproblem min_{t ∈ B} f_ω(t) from `t0` to residual τ.
///
/// The free set at each iterate excludes coordinates within the active band
/// of a bound whose gradient pushes outward; free coordinates take a damped
/// Newton step, active ones follow the negative gradient, and the combined
/// direction is searched along the projection arc.
pub fn projected_newton_subsolve(
    form: &AssignmentForm,
    omega: f64,
    t0: &DVector<f64>,
    tau: f64,
    config: &SolverConfig,
) -> Result<SubsolveResult> {
    let box_bound = config.box_bound;
    let mut t = project_box(t0, box_bound);
    let (mut value, mut grad) = penalty_value_grad(form, &t, omega);
    if !value.is_finite() {
        return Err(Error::Numeric(format!(
            "penalty objective non-finite at the initial point (omega = {omega})"
        )));
    }
    let mut kkt = kkt_residual_from_grad(&t, &grad, box_bound);
    let mut inner = 0usize;
    let mut max_increase = f64::NEG_INFINITY;
    let mut max_box_violation = box_violation(&t, box_bound);
    let mut lambda_state = config.newton_damping;
    let mut stalled = false;
    let mut capped = false;

    while kkt > tau {
        if inner >= config.max_inner {
            capped = true;
            break;
        }
        let band = config.active_band.min(kkt);
        let mut free = Vec::with_capacity(t.len());
        let mut direction = DVector::zeros(t.len());
        for i in 0..t.len() {
            let at_lower = t[i] <= band && grad[i] > 0.0;
            let at_upper = t[i] >= box_bound - band && grad[i] < 0.0;
            if at_lower || at_upper {
                direction[i] = -grad[i];
            } else {
                free.push(i);
            }
        }
        if !free.is_empty() {
            let newton = match &form.coupling_dense {
                Some(gt) if free.len() <= config.cg_free_threshold => {
                    newton_direction_dense(form, gt, omega, &free, &grad, &mut lambda_state)
                }
                _ => Some(newton_direction_cg(
                    form,
                    omega,
                    &free,
                    &grad,
                    config.newton_damping,
                )),
            };
            match newton {
                Some(d) => {
                    for &i in &free {
                        direction[i] = d[i];
                    }
                }
                None => {
                    for &i in &free {
                        direction[i] = -grad[i];
                    }
                }
            }
        }
        // The projected arc of a non-descent direction cannot pass Armijo;
        // fall back to steepest descent up front.
        if grad.dot(&direction) >= 0.0 {
            direction = -&grad;
        }

        let step = arc_search(form, omega, &t, value, &grad, &direction, config).or_else(|| {
            let steepest = -&grad;
            if steepest == direction {
                None
            } else {
                arc_search(form, omega, &t, value, &grad, &steepest, config)
            }
        });
        match step {
            Some((t_new, f_new, g_new)) => {
                if !f_new.is_finite() {
                    return Err(Error::Numeric(format!(
                        "penalty objective became non-finite (omega = {omega})"
                    )));
                }
                max_increase = max_increase.max(f_new - value);
                max_box_violation = max_box_violation.max(box_violation(&t_new, box_bound));
                t = t_new;
                value = f_new;
                grad = g_new;
                kkt = kkt_residual_from_grad(&t, &grad, box_bound);
                inner += 1;
            }
            None => {
                stalled = true;
                break;
            }
        }
    }

    Ok(SubsolveResult {
        t,
        inner_iters: inner,
        kkt,
        stalled,
        capped,
        max_increase: if max_increase == f64::NEG_INFINITY {
            0.0
        } else {
            max_increase
        },
        box_violation: max_box_violation,
    })
}

fn initial_point(
    instance: &ChannelInstance,
    form: &AssignmentForm,
    config: &SolverConfig,
) -> Result<DVector<f64>> {
    Ok(match config.init {
        InitPoint::UniformTe => {
            DVector::from_element(form.dim(), 1.0 / (0.2 + form.mod_order as f64))
        }
        InitPoint::Zero => DVector::zeros(form.dim()),
        InitPoint::Mmse => {
            let mmse = mmse_detect(instance)?;
            t_from_x(&mmse.x_hat, instance.mod_order)?.into_vector()
        }
    })
}

fn support_set(t: &DVector<f64>, eps: f64) -> Vec<usize> {
    t.iter()
        .enumerate()
        .filter(|(_, &x)| x > eps)
        .map(|(i, _)| i)
        .collect()
}

fn max_block_violation(t: &DVector<f64>, n: usize, m: usize) -> f64 {
    (0..n)
        .map(|j| (t.rows(j * m, m).sum() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Run the full penalty detector on one instance.
///
/// Builds the lifted form, runs the outer loop until the support stabilizes
/// or the cap is reached, rounds the final point, and reports the recovered
/// vector with diagnostics. Timing covers everything including the build.
pub fn pnqp_detect(instance: &ChannelInstance, config: &SolverConfig) -> Result<DetectionResult> {
    config.validate()?;
    let start = Instant::now();
    let form = AssignmentForm::build_with_threshold(instance, config.dense_threshold)?;
    let (n, m_ord) = (form.n, form.mod_order);

    let mut t = project_box(&initial_point(instance, &form, config)?, config.box_bound);
    let mut support_prev = support_set(&t, config.eps_support);
    let mut omega = config.omega0;
    let mut inner_total = 0usize;
    let mut outer_done = 0usize;
    let mut termination = Termination::OuterCap;
    let mut trace = Vec::new();
    let mut max_handoff_excess = f64::NEG_INFINITY;
    let mut max_inner_increase = 0.0f64;
    let mut max_box_violation = 0.0f64;
    let mut final_kkt = f64::NAN;
    let mut final_tau = f64::NAN;
    let mut stall_streak = 0usize;

    for outer in 1..=config.max_outer {
        let tau_k = config.tau_at(outer);
        let sub = projected_newton_subsolve(&form, omega, &t, tau_k, config)?;
        let moved = sub.t != t;
        t = sub.t;
        inner_total += sub.inner_iters;
        outer_done = outer;
        final_kkt = sub.kkt;
        final_tau = tau_k;
        max_handoff_excess = max_handoff_excess.max(sub.kkt - tau_k);
        max_inner_increase = max_inner_increase.max(sub.max_increase);
        max_box_violation = max_box_violation.max(sub.box_violation);

        let support = support_set(&t, config.eps_support);
        let counts_ok = (0..n).all(|j| {
            t.rows(j * m_ord, m_ord)
                .iter()
                .filter(|&&x| x > config.eps_support)
                .count()
                == 1
        });
        if config.collect_trace {
            let (fv, _) = form.value_and_gradient(&t);
            trace.push(TraceRow {
                outer,
                omega,
                tau: tau_k,
                objective: fv,
                penalty: (0..n)
                    .map(|j| {
                        let v = t.rows(j * m_ord, m_ord).sum() - 1.0;
                        v * v
                    })
                    .sum::<f64>()
                    * 0.5
                    * omega,
                kkt_residual: sub.kkt,
                support_size: support.len(),
                max_block_violation: max_block_violation(&t, n, m_ord),
            });
        }

        if support == support_prev && counts_ok {
            termination = Termination::SupportStable;
            break;
        }
        if sub.stalled && !moved {
            stall_streak += 1;
            if stall_streak >= 2 {
                termination = Termination::InnerStall;
                break;
            }
        } else {
            stall_streak = 0;
        }
        support_prev = support;
        omega *= config.rho;
    }

    let rounded = round_gradient_guided(&form, &t);
    let x_hat = x_from_t(&rounded);
    let objective = instance.residual_norm_sq(&x_hat);
    let ser = instance.ser_of(&x_hat)?;
    let cons = PskConstellation::new(m_ord)?;
    let symbol_indices = x_hat.iter().map(|&z| cons.nearest_index(z)).collect();

    Ok(DetectionResult {
        x_hat,
        symbol_indices,
        t_final: Some(rounded),
        objective,
        ser,
        outer_iters: outer_done,
        inner_iters_total: inner_total,
        wall_time_s: start.elapsed().as_secs_f64(),
        termination,
        solver_diag: Some(SolverDiagnostics {
            final_omega: omega,
            final_tau,
            final_kkt,
            max_handoff_excess,
            max_inner_increase,
            box_violation: max_box_violation,
        }),
        trace,
    })
}
