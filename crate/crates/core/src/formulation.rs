//! The lifted assignment formulation of the detection problem.
//!
//! A symbol vector x ∈ ℂⁿ with entries in an M-point constellation is encoded
//! as t ∈ ℝ^{nM} with n blocks of length M, block j being the one-hot
//! indicator of x_j's constellation index. The residual objective ‖Hx − r‖²
//! becomes a quadratic in t, and removing the diagonal blocks of its
//! quadratic term (which are constant on one-hot blocks) yields an objective
//! that is affine in each block — the property the solver and the rounding
//! sweep both rely on.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{ChannelInstance, PskConstellation};

/// Dense storage limit for the block-coupling matrix. Above this the matrix
/// is applied in factored form only; at n = 512, M = 16 the dense matrix
/// would need half a gigabyte.
pub const DEFAULT_DENSE_THRESHOLD: usize = 4096;

/// A vector in ℝ^{nM} with n blocks of length M.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentVector {
    data: DVector<f64>,
    n: usize,
    mod_order: usize,
}

impl AssignmentVector {
    pub fn new(data: DVector<f64>, n: usize, mod_order: usize) -> Result<Self> {
        if data.len() != n * mod_order {
            return Err(Error::DimensionMismatch(format!(
                "assignment vector has length {}, expected {}*{}",
                data.len(),
                n,
                mod_order
            )));
        }
        Ok(Self { data, n, mod_order })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mod_order(&self) -> usize {
        self.mod_order
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.data
    }

    /// Entries of block j (indices jM .. (j+1)M).
    pub fn block(&self, j: usize) -> &[f64] {
        let m = self.mod_order;
        &self.data.as_slice()[j * m..(j + 1) * m]
    }

    pub fn block_sum(&self, j: usize) -> f64 {
        self.block(j).iter().sum()
    }

    /// All block sums equal 1 within `tol` and all entries ≥ -`tol`.
    pub fn is_simplex_feasible(&self, tol: f64) -> bool {
        self.data.iter().all(|&x| x >= -tol)
            && (0..self.n).all(|j| (self.block_sum(j) - 1.0).abs() <= tol)
    }

    /// Exactly one entry per block, equal to 1, the rest exactly zero.
    pub fn is_integral(&self) -> bool {
        (0..self.n).all(|j| {
            let blk = self.block(j);
            blk.iter().filter(|&&x| x != 0.0).count() == 1
                && blk.iter().any(|&x| x == 1.0)
        })
    }

    /// Indices with entries above `eps`.
    pub fn support_eps(&self, eps: f64) -> Vec<usize> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &x)| x > eps)
            .map(|(i, _)| i)
            .collect()
    }

    /// Number of entries above `eps` in each block.
    pub fn block_counts_eps(&self, eps: f64) -> Vec<usize> {
        (0..self.n)
            .map(|j| self.block(j).iter().filter(|&&x| x > eps).count())
            .collect()
    }
}

/// One-hot encoding of a constellation-valued vector.
pub fn t_from_x(x: &[Complex64], mod_order: usize) -> Result<AssignmentVector> {
    let cons = PskConstellation::new(mod_order)?;
    let n = x.len();
    let mut data = DVector::zeros(n * mod_order);
    for (j, &z) in x.iter().enumerate() {
        let k = cons.exact_index(z).ok_or(Error::NotInConstellation {
            index: j,
            value: format!("{z}"),
        })?;
        data[j * mod_order + k] = 1.0;
    }
    AssignmentVector::new(data, n, mod_order)
}

/// Decode t into a complex vector, x_j = Σ_k t_{jk}·s_k. Integral inputs give
/// constellation symbols; fractional inputs give convex mixtures.
pub fn x_from_t(t: &AssignmentVector) -> Vec<Complex64> {
    let cons = PskConstellation::new(t.mod_order()).expect("mod_order validated");
    (0..t.n())
        .map(|j| {
            t.block(j)
                .iter()
                .zip(cons.symbols())
                .map(|(&w, &s)| w * s)
                .sum()
        })
        .collect()
}

/// Real 2n×2n embedding [[Re A, -Im A], [Im A, Re A]] of a complex matrix.
pub fn hermitian_embed(a: &DMatrix<Complex64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = a[(i, j)];
            out[(i, j)] = z.re;
            out[(i, j + n)] = -z.im;
            out[(i + n, j)] = z.im;
            out[(i + n, j + n)] = z.re;
        }
    }
    out
}

/// All derived problem data for one instance.
///
/// The quadratic term of the lifted objective splits as G = G̃ + D̃ where D̃
/// holds the diagonal blocks q_jj·(αα⊤ + ββ⊤) and G̃ has zero diagonal
/// blocks. Only G̃ may be stored densely; it is always available as an
/// operator through the factored form G̃v = P⊤Q̂(Pv) − D̃v.
#[derive(Debug, Clone)]
pub struct AssignmentForm {
    pub n: usize,
    pub m: usize,
    pub mod_order: usize,
    /// H†H.
    pub gram: DMatrix<Complex64>,
    /// -H†r.
    pub linear_c: DVector<Complex64>,
    /// Real embedding of `gram`, 2n×2n.
    pub gram_embed: DMatrix<f64>,
    /// [Re c; Im c], length 2n.
    pub linear_embed: DVector<f64>,
    /// Cosines of the constellation angles, length M.
    pub alpha: DVector<f64>,
    /// Sines of the constellation angles, length M.
    pub beta: DVector<f64>,
    /// Lifted linear term w = P⊤ĉ, length nM.
    pub linear: DVector<f64>,
    /// Column energies q_jj = ‖h_j‖², length n.
    pub col_energy: DVector<f64>,
    /// αα⊤ + ββ⊤; diagonal block j of G is q_jj times this.
    pub diag_block: DMatrix<f64>,
    /// Dense G̃ when nM is at most the build threshold.
    pub coupling_dense: Option<DMatrix<f64>>,
    /// ‖H‖² (Frobenius, squared).
    pub norm_h_sq: f64,
    /// ‖r‖².
    pub norm_r_sq: f64,
}

impl AssignmentForm {
    /// Build with the default dense-storage threshold.
    pub fn build(instance: &ChannelInstance) -> Result<Self> {
        Self::build_with_threshold(instance, DEFAULT_DENSE_THRESHOLD)
    }

    pub fn build_with_threshold(instance: &ChannelInstance, threshold: usize) -> Result<Self> {
        let (m, n) = (instance.m(), instance.n());
        let mod_order = instance.mod_order;
        if instance
            .h
            .iter()
            .chain(instance.r.iter())
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::Numeric(
                "channel or received vector has non-finite entries".into(),
            ));
        }
        let cons = PskConstellation::new(mod_order)?;
        let gram = instance.h.adjoint() * &instance.h;
        let linear_c = -(instance.h.adjoint() * &instance.r);
        let gram_embed = hermitian_embed(&gram);
        let mut linear_embed = DVector::zeros(2 * n);
        for j in 0..n {
            linear_embed[j] = linear_c[j].re;
            linear_embed[j + n] = linear_c[j].im;
        }
        let alpha = DVector::from_fn(mod_order, |k, _| cons.angle(k).cos());
        let beta = DVector::from_fn(mod_order, |k, _| cons.angle(k).sin());
        let mut linear = DVector::zeros(n * mod_order);
        for j in 0..n {
            for k in 0..mod_order {
                linear[j * mod_order + k] =
                    alpha[k] * linear_embed[j] + beta[k] * linear_embed[j + n];
            }
        }
        let col_energy = DVector::from_fn(n, |j, _| gram[(j, j)].re);
        let diag_block = &alpha * alpha.transpose() + &beta * beta.transpose();

        let dim = n * mod_order;
        let coupling_dense = if dim <= threshold {
            Some(Self::dense_coupling(
                n, mod_order, &gram_embed, &alpha, &beta,
            ))
        } else {
            None
        };

        Ok(Self {
            n,
            m,
            mod_order,
            gram,
            linear_c,
            gram_embed,
            linear_embed,
            alpha,
            beta,
            linear,
            col_energy,
            diag_block,
            coupling_dense,
            norm_h_sq: instance.h.iter().map(|z| z.norm_sqr()).sum(),
            norm_r_sq: instance.r.norm_squared(),
        })
    }

    /// Dense G̃: block (j,k) is q̂_{jk}αα⊤ + q̂_{(n+j)k}βα⊤ + q̂_{j(n+k)}αβ⊤
    /// + q̂_{(n+j)(n+k)}ββ⊤, with diagonal blocks removed.
    fn dense_coupling(
        n: usize,
        m_ord: usize,
        q_hat: &DMatrix<f64>,
        alpha: &DVector<f64>,
        beta: &DVector<f64>,
    ) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(n * m_ord, n * m_ord);
        for j in 0..n {
            for k in 0..n {
                if j == k {
                    continue;
                }
                let (aa, ba, ab, bb) = (
                    q_hat[(j, k)],
                    q_hat[(j + n, k)],
                    q_hat[(j, k + n)],
                    q_hat[(j + n, k + n)],
                );
                for p in 0..m_ord {
                    for q in 0..m_ord {
                        g[(j * m_ord + p, k * m_ord + q)] = aa * alpha[p] * alpha[q]
                            + ba * beta[p] * alpha[q]
                            + ab * alpha[p] * beta[q]
                            + bb * beta[p] * beta[q];
                    }
                }
            }
        }
        g
    }

    /// Problem dimension nM.
    pub fn dim(&self) -> usize {
        self.n * self.mod_order
    }

    /// y = Pt: y_j = α⊤t̄_j, y_{n+j} = β⊤t̄_j.
    pub fn lift(&self, t: &DVector<f64>) -> DVector<f64> {
        let (n, m) = (self.n, self.mod_order);
        let mut y = DVector::zeros(2 * n);
        for j in 0..n {
            let mut a = 0.0;
            let mut b = 0.0;
            for k in 0..m {
                let tv = t[j * m + k];
                a += self.alpha[k] * tv;
                b += self.beta[k] * tv;
            }
            y[j] = a;
            y[j + n] = b;
        }
        y
    }

    /// P⊤u for u ∈ ℝ^{2n}.
    pub fn lift_adjoint(&self, u: &DVector<f64>) -> DVector<f64> {
        let (n, m) = (self.n, self.mod_order);
        let mut out = DVector::zeros(n * m);
        for j in 0..n {
            for k in 0..m {
                out[j * m + k] = self.alpha[k] * u[j] + self.beta[k] * u[j + n];
            }
        }
        out
    }

    /// D̃t: block j is q_jj·(α(α⊤t̄_j) + β(β⊤t̄_j)).
    pub fn diag_apply(&self, t: &DVector<f64>) -> DVector<f64> {
        let (n, m) = (self.n, self.mod_order);
        let mut out = DVector::zeros(n * m);
        for j in 0..n {
            let mut a = 0.0;
            let mut b = 0.0;
            for k in 0..m {
                let tv = t[j * m + k];
                a += self.alpha[k] * tv;
                b += self.beta[k] * tv;
            }
            let q = self.col_energy[j];
            for k in 0..m {
                out[j * m + k] = q * (self.alpha[k] * a + self.beta[k] * b);
            }
        }
        out
    }

    /// G̃t through dense storage when available, else the factored form.
    pub fn coupling_apply(&self, t: &DVector<f64>) -> DVector<f64> {
        if let Some(g) = &self.coupling_dense {
            g * t
        } else {
            let y = self.lift(t);
            let z = &self.gram_embed * y;
            self.lift_adjoint(&z) - self.diag_apply(t)
        }
    }

    /// Solver objective f(t) = t⊤G̃t + 2w⊤t; affine in each block.
    pub fn objective(&self, t: &DVector<f64>) -> f64 {
        let u = self.coupling_apply(t);
        t.dot(&u) + 2.0 * self.linear.dot(t)
    }

    /// ∇f(t) = 2G̃t + 2w.
    pub fn gradient(&self, t: &DVector<f64>) -> DVector<f64> {
        let mut g = self.coupling_apply(t);
        g *= 2.0;
        g += self.linear.scale(2.0);
        g
    }

    /// f(t) and ∇f(t) sharing one matrix application.
    pub fn value_and_gradient(&self, t: &DVector<f64>) -> (f64, DVector<f64>) {
        let u = self.coupling_apply(t);
        let value = t.dot(&u) + 2.0 * self.linear.dot(t);
        let mut g = u;
        g *= 2.0;
        g += self.linear.scale(2.0);
        (value, g)
    }

    /// Full quadratic h(t) = t⊤Gt + 2w⊤t = f(t) + t⊤D̃t. On one-hot feasible
    /// points h − f = ‖H‖² and h + ‖r‖² = ‖Hx − r‖².
    pub fn full_objective(&self, t: &DVector<f64>) -> f64 {
        let (n, m) = (self.n, self.mod_order);
        let mut diag_term = 0.0;
        for j in 0..n {
            let mut a = 0.0;
            let mut b = 0.0;
            for k in 0..m {
                let tv = t[j * m + k];
                a += self.alpha[k] * tv;
                b += self.beta[k] * tv;
            }
            diag_term += self.col_energy[j] * (a * a + b * b);
        }
        self.objective(t) + diag_term
    }

    /// Gradient of f restricted to block j, given y = Pt and z = Q̂y.
    /// Costs O(M); used by the rounding sweep which updates y and z
    /// incrementally as blocks change.
    pub fn block_gradient_from_lift(
        &self,
        j: usize,
        y: &DVector<f64>,
        z: &DVector<f64>,
    ) -> DVector<f64> {
        let (n, m) = (self.n, self.mod_order);
        let q = self.col_energy[j];
        let za = z[j] - q * y[j];
        let zb = z[j + n] - q * y[j + n];
        DVector::from_fn(m, |k, _| {
            2.0 * (self.alpha[k] * za + self.beta[k] * zb + self.linear[j * m + k])
        })
    }

    /// Materialize dense G̃ regardless of the storage threshold. Test and
    /// debug use only; quadratic memory.
    pub fn coupling_matrix(&self) -> DMatrix<f64> {
        match &self.coupling_dense {
            Some(g) => g.clone(),
            None => Self::dense_coupling(
                self.n,
                self.mod_order,
                &self.gram_embed,
                &self.alpha,
                &self.beta,
            ),
        }
    }

    /// Materialize dense G = G̃ + D̃. Test and debug use only.
    pub fn assignment_matrix(&self) -> DMatrix<f64> {
        let mut g = self.coupling_matrix();
        let m = self.mod_order;
        for j in 0..self.n {
            let q = self.col_energy[j];
            for p in 0..m {
                for r in 0..m {
                    g[(j * m + p, j * m + r)] = q * self.diag_block[(p, r)];
                }
            }
        }
        g
    }

    /// Materialize dense P (2n×nM). Test and debug use only.
    pub fn lift_matrix(&self) -> DMatrix<f64> {
        let (n, m) = (self.n, self.mod_order);
        let mut p = DMatrix::zeros(2 * n, n * m);
        for j in 0..n {
            for k in 0..m {
                p[(j, j * m + k)] = self.alpha[k];
                p[(j + n, j * m + k)] = self.beta[k];
            }
        }
        p
    }

    /// Debug dump of (G̃, w) as CSV: nM rows of G̃, then one row of w.
    pub fn dump_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let g = self.coupling_matrix();
        for i in 0..g.nrows() {
            let row: Vec<String> = (0..g.ncols()).map(|j| format!("{:.16e}", g[(i, j)])).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        let w: Vec<String> = self.linear.iter().map(|x| format!("{x:.16e}")).collect();
        writeln!(out, "{}", w.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_instance, GenSpec};
    use crate::model::PskConstellation;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn small_instance(seed: u64, m: usize, n: usize, mod_order: usize) -> ChannelInstance {
        generate_instance(&GenSpec::new(m, n, mod_order, 15.0, seed)).unwrap()
    }

    /// Random simplex-feasible point, deterministic in `seed`.
    fn random_feasible(n: usize, m: usize, seed: u64) -> DVector<f64> {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64) / (1u64 << 53) as f64
        };
        let mut t = DVector::zeros(n * m);
        for j in 0..n {
            let mut sum = 0.0;
            for k in 0..m {
                let u = next() + 1e-3;
                t[j * m + k] = u;
                sum += u;
            }
            for k in 0..m {
                t[j * m + k] /= sum;
            }
        }
        t
    }

    #[test]
    fn hand_example_scalar_channel() {
        // H = [1], r = 1, M = 2: Q = 1, c = -1, α = (1,-1), β = (0,0),
        // w = (-1, 1), G̃ = 0.
        let h = DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
        let x = vec![Complex64::new(1.0, 0.0)];
        let v = DVector::from_element(1, Complex64::new(0.0, 0.0));
        let inst = ChannelInstance::from_parts(h, x, v, 2, 0.0, f64::INFINITY, 0).unwrap();
        let form = AssignmentForm::build(&inst).unwrap();

        assert_abs_diff_eq!(form.gram[(0, 0)].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(form.linear_c[0].re, -1.0, epsilon = 1e-15);
        assert_eq!(form.alpha.as_slice(), &[1.0, -1.0]);
        assert_abs_diff_eq!(form.beta[0], 0.0, epsilon = 1e-15);
        assert!(form.beta[1].abs() < 1e-15);
        assert_abs_diff_eq!(form.linear[0], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(form.linear[1], 1.0, epsilon = 1e-15);
        assert_eq!(form.coupling_matrix(), DMatrix::zeros(2, 2));

        // f(t*) = -2 and f + ‖H‖² + ‖r‖² = ‖Hx - r‖² = 0.
        let t = DVector::from_column_slice(&[1.0, 0.0]);
        let f = form.objective(&t);
        assert_abs_diff_eq!(f, -2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f + form.norm_h_sq + form.norm_r_sq, 0.0, epsilon = 1e-15);
        // h(t*) = -1 and h + ‖r‖² = 0.
        let hval = form.full_objective(&t);
        assert_abs_diff_eq!(hval, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(hval + form.norm_r_sq, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn dense_coupling_matches_explicit_products() {
        for (seed, m, n, m_ord) in [(1u64, 4, 3, 4), (2, 5, 4, 2), (3, 6, 2, 8)] {
            let inst = small_instance(seed, m, n, m_ord);
            let form = AssignmentForm::build(&inst).unwrap();
            let p = form.lift_matrix();
            let g_direct = p.transpose() * &form.gram_embed * &p;
            let g = form.assignment_matrix();
            assert!((g.clone() - &g_direct).norm() < 1e-10 * g_direct.norm().max(1.0));
            // w = P⊤ĉ.
            let w_direct = p.transpose() * &form.linear_embed;
            assert!((&form.linear - w_direct).norm() < 1e-12);
            // G - G̃ is block diagonal with blocks q_jj(αα⊤+ββ⊤).
            let diff = g - form.coupling_matrix();
            for j in 0..n {
                for k in 0..n {
                    for p_ in 0..m_ord {
                        for q_ in 0..m_ord {
                            let got = diff[(j * m_ord + p_, k * m_ord + q_)];
                            let want = if j == k {
                                form.col_energy[j] * form.diag_block[(p_, q_)]
                            } else {
                                0.0
                            };
                            assert_abs_diff_eq!(got, want, epsilon = 1e-10);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn orthonormal_columns_give_zero_coupling() {
        // H with orthonormal columns: Q = I, so all off-diagonal blocks
        // vanish and G̃ = 0.
        let h = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 0.0),
            ],
        );
        let cons = PskConstellation::new(4).unwrap();
        let x = vec![cons.symbol(0), cons.symbol(2)];
        let v = DVector::from_element(2, Complex64::new(0.0, 0.0));
        let inst = ChannelInstance::from_parts(h, x, v, 4, 0.0, f64::INFINITY, 0).unwrap();
        let form = AssignmentForm::build(&inst).unwrap();
        assert!(form.coupling_matrix().norm() < 1e-14);
    }

    #[test]
    fn one_hot_encoding_examples() {
        let cons = PskConstellation::new(4).unwrap();
        let t = t_from_x(&[cons.symbol(1)], 4).unwrap();
        assert_eq!(t.as_vector().as_slice(), &[0.0, 1.0, 0.0, 0.0]);

        let c2 = PskConstellation::new(2).unwrap();
        let t = t_from_x(&[c2.symbol(0), c2.symbol(1)], 2).unwrap();
        assert_eq!(t.as_vector().as_slice(), &[1.0, 0.0, 0.0, 1.0]);
        assert!(t.is_integral());
        assert!(t.is_simplex_feasible(0.0));

        assert!(t_from_x(&[Complex64::new(0.9, 0.0)], 4).is_err());
    }

    #[test]
    fn lift_reproduces_one_hot_encoding() {
        let inst = small_instance(11, 6, 5, 8);
        let form = AssignmentForm::build(&inst).unwrap();
        let t = t_from_x(&inst.x_star, 8).unwrap();
        let y = form.lift(t.as_vector());
        for j in 0..5 {
            assert_abs_diff_eq!(y[j], inst.x_star[j].re, epsilon = 1e-12);
            assert_abs_diff_eq!(y[j + 5], inst.x_star[j].im, epsilon = 1e-12);
        }
        // Round trip back to symbols.
        let x = x_from_t(&t);
        for (a, b) in x.iter().zip(&inst.x_star) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn uniform_blocks_decode_to_zero() {
        for m in [2usize, 3, 4, 8] {
            let n = 3;
            let t = AssignmentVector::new(
                DVector::from_element(n * m, 1.0 / m as f64),
                n,
                m,
            )
            .unwrap();
            for z in x_from_t(&t) {
                assert!(z.norm() < 1e-12, "M={m}: {z}");
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let inst = small_instance(21, 5, 4, 4);
        let form = AssignmentForm::build(&inst).unwrap();
        let t = random_feasible(4, 4, 77).scale(1.3);
        let g = form.gradient(&t);
        let h = 1e-6;
        for i in 0..form.dim() {
            let mut tp = t.clone();
            let mut tm = t.clone();
            tp[i] += h;
            tm[i] -= h;
            let fd = (form.objective(&tp) - form.objective(&tm)) / (2.0 * h);
            let scale = g[i].abs().max(1.0);
            assert!(
                (fd - g[i]).abs() / scale < 1e-5,
                "coord {i}: fd {fd} vs grad {}",
                g[i]
            );
        }
        // t = 0: f = 0, ∇f = 2w.
        let zero = DVector::zeros(form.dim());
        assert_eq!(form.objective(&zero), 0.0);
        assert!((form.gradient(&zero) - form.linear.scale(2.0)).norm() < 1e-14);
    }

    #[test]
    fn operator_and_dense_applications_agree() {
        let inst = small_instance(31, 8, 6, 4);
        let dense = AssignmentForm::build_with_threshold(&inst, usize::MAX).unwrap();
        let op = AssignmentForm::build_with_threshold(&inst, 0).unwrap();
        assert!(dense.coupling_dense.is_some());
        assert!(op.coupling_dense.is_none());
        for seed in 0..5 {
            let t = random_feasible(6, 4, seed).scale(2.0);
            let a = dense.coupling_apply(&t);
            let b = op.coupling_apply(&t);
            assert!((a - b).norm() < 1e-10);
            assert_abs_diff_eq!(dense.objective(&t), op.objective(&t), epsilon = 1e-9);
        }
    }

    #[test]
    fn objective_chain_links_all_forms() {
        // For one-hot feasible t with x = x_from_t(t):
        // ‖Hx−r‖² = h(t) + ‖r‖² and h − f = ‖H‖².
        for seed in 0..20 {
            let inst = small_instance(seed, 6, 4, 8);
            let form = AssignmentForm::build(&inst).unwrap();
            let mut s = seed;
            let mut next = || {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(99);
                (s >> 33) as usize
            };
            let cons = PskConstellation::new(8).unwrap();
            let x: Vec<Complex64> = (0..4).map(|_| cons.symbol(next() % 8)).collect();
            let t = t_from_x(&x, 8).unwrap();
            let f = form.objective(t.as_vector());
            let h = form.full_objective(t.as_vector());
            let direct = inst.residual_norm_sq(&x);
            let scale = direct.abs().max(1.0);
            assert!((h - f - form.norm_h_sq).abs() / form.norm_h_sq.max(1.0) < 1e-9);
            assert!((h + form.norm_r_sq - direct).abs() / scale < 1e-9);
        }
    }

    #[test]
    fn objective_is_affine_per_block() {
        // f(t with block j replaced by u) − f(t) = ∇_j f(t)·(u − t̄_j).
        let inst = small_instance(41, 7, 5, 4);
        let form = AssignmentForm::build(&inst).unwrap();
        let mut s = 7u64;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((s >> 11) as f64) / (1u64 << 53) as f64
        };
        for trial in 0..50 {
            let t = random_feasible(5, 4, trial).scale(1.0 + next());
            let j = (next() * 5.0) as usize % 5;
            let u = DVector::from_fn(4, |_, _| 2.0 * next() - 0.5);
            let mut t2 = t.clone();
            for k in 0..4 {
                t2[j * 4 + k] = u[k];
            }
            let g = form.gradient(&t);
            let gj = g.rows(j * 4, 4);
            let old = t.rows(j * 4, 4);
            let predicted = gj.dot(&(&u - old));
            let actual = form.objective(&t2) - form.objective(&t);
            assert!(
                (predicted - actual).abs() <= 1e-10 * predicted.abs().max(1.0),
                "trial {trial}: predicted {predicted} actual {actual}"
            );
        }
    }

    #[test]
    fn block_gradient_from_lift_matches_full_gradient() {
        let inst = small_instance(51, 6, 4, 8);
        let form = AssignmentForm::build(&inst).unwrap();
        let t = random_feasible(4, 8, 3);
        let g = form.gradient(&t);
        let y = form.lift(&t);
        let z = &form.gram_embed * &y;
        for j in 0..4 {
            let bg = form.block_gradient_from_lift(j, &y, &z);
            for k in 0..8 {
                assert_abs_diff_eq!(bg[k], g[j * 8 + k], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn gram_block_structure_properties() {
        // Structure of Q̂ and the blocks of G on random instances.
        for seed in 0..10 {
            let inst = small_instance(seed + 60, 5, 4, 4);
            let form = AssignmentForm::build(&inst).unwrap();
            let n = 4;
            let qh = &form.gram_embed;
            for j in 0..n {
                // Column energies are sums of squared moduli.
                let direct: f64 = (0..5).map(|k| inst.h[(k, j)].norm_sqr()).sum();
                assert!((form.col_energy[j] - direct).abs() < 1e-10 * direct.max(1.0));
                assert!((qh[(j, j)] - direct).abs() < 1e-10 * direct.max(1.0));
                assert!((qh[(j + n, j + n)] - direct).abs() < 1e-10 * direct.max(1.0));
                assert!(qh[(j + n, j)].abs() < 1e-10);
                assert!(qh[(j, j + n)].abs() < 1e-10);
                for k in 0..n {
                    assert!((qh[(j, k)] - qh[(k, j)]).abs() < 1e-10);
                    assert!((qh[(j, k)] - qh[(j + n, k + n)]).abs() < 1e-10);
                    assert!((qh[(j + n, k)] + qh[(k + n, j)]).abs() < 1e-10);
                    assert!((qh[(j + n, k)] - qh[(k, j + n)]).abs() < 1e-10);
                }
            }
            // G symmetric, S_jk = S_kj⊤, diag(S_jj) = q_jj e, G̃ diagonal
            // blocks zero.
            let g = form.assignment_matrix();
            assert!((g.clone() - g.transpose()).norm() < 1e-9);
            let gt = form.coupling_matrix();
            assert!((gt.clone() - gt.transpose()).norm() < 1e-9);
            let m_ord = 4;
            for j in 0..n {
                for p in 0..m_ord {
                    assert!(
                        (g[(j * m_ord + p, j * m_ord + p)] - form.col_energy[j]).abs() < 1e-10
                    );
                    for q in 0..m_ord {
                        assert_eq!(gt[(j * m_ord + p, j * m_ord + q)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn csv_dump_has_expected_shape() {
        let inst = small_instance(71, 3, 2, 2);
        let form = AssignmentForm::build(&inst).unwrap();
        let mut buf = Vec::new();
        form.dump_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), form.dim() + 1);
        assert_eq!(lines[0].split(',').count(), form.dim());
        assert_eq!(lines[form.dim()].split(',').count(), form.dim());
    }
}
