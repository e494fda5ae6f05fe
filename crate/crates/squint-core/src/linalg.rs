//! Complex matrices stored as split real/imaginary tensors, with the few
//! factorizations the designers need: Hermitian Cholesky (log-determinants,
//! positive-definite solves) and a cyclic Jacobi eigensolver for small
//! Hermitian matrices (singular vectors of channel matrices).
//!
//! Split storage keeps the autodiff tape simple — gradients of a complex
//! value are just gradients with respect to its two real tensors — and lets
//! the real GEMM kernels do the heavy lifting.

use crate::tensor::{self, RealTensor};
use crate::{Error, Result};

pub use num_complex::Complex64;

/// Dense complex matrix; `re` and `im` are row-major `rows`×`cols` tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    re: RealTensor,
    im: RealTensor,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexMatrix {
            rows,
            cols,
            re: RealTensor::zeros(&[rows, cols]),
            im: RealTensor::zeros(&[rows, cols]),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = ComplexMatrix::zeros(n, n);
        for i in 0..n {
            m.re.data_mut()[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = ComplexMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let v = f(i, j);
                m.re.data_mut()[i * cols + j] = v.re;
                m.im.data_mut()[i * cols + j] = v.im;
            }
        }
        m
    }

    /// Pair two equally shaped real tensors into a complex matrix.
    pub fn from_parts(re: RealTensor, im: RealTensor) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::dim(
                "ComplexMatrix::from_parts",
                format!("re {:?} vs im {:?}", re.shape(), im.shape()),
            ));
        }
        let (rows, cols) = re.dims();
        Ok(ComplexMatrix { rows, cols, re, im })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn re(&self) -> &RealTensor {
        &self.re
    }

    pub fn im(&self) -> &RealTensor {
        &self.im
    }

    pub fn into_parts(self) -> (RealTensor, RealTensor) {
        (self.re, self.im)
    }

    pub fn re_data_mut(&mut self) -> &mut [f64] {
        self.re.data_mut()
    }

    pub fn im_data_mut(&mut self) -> &mut [f64] {
        self.im.data_mut()
    }

    /// Both planes mutably at once, for kernels that write re and im in one pass.
    pub fn parts_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (self.re.data_mut(), self.im.data_mut())
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        let idx = i * self.cols + j;
        Complex64::new(self.re.data()[idx], self.im.data()[idx])
    }

    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        let idx = i * self.cols + j;
        self.re.data_mut()[idx] = v.re;
        self.im.data_mut()[idx] = v.im;
    }

    pub fn is_all_finite(&self) -> bool {
        self.re.is_all_finite() && self.im.is_all_finite()
    }

    /// `self · other` via four real GEMMs.
    pub fn matmul(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.cols != other.rows {
            return Err(Error::dim(
                "ComplexMatrix::matmul",
                format!(
                    "{}x{} times {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = ComplexMatrix::zeros(m, n);
        // re = Ar·Br − Ai·Bi, im = Ar·Bi + Ai·Br
        tensor::gemm_acc(out.re.data_mut(), self.re.data(), other.re.data(), m, k, n);
        let aibi = tensor::matmul(self.im.data(), other.im.data(), m, k, n);
        for (o, v) in out.re.data_mut().iter_mut().zip(&aibi) {
            *o -= v;
        }
        tensor::gemm_acc(out.im.data_mut(), self.re.data(), other.im.data(), m, k, n);
        tensor::gemm_acc(out.im.data_mut(), self.im.data(), other.re.data(), m, k, n);
        Ok(out)
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> ComplexMatrix {
        let (r, c) = (self.rows, self.cols);
        let mut out = ComplexMatrix::zeros(c, r);
        for i in 0..r {
            for j in 0..c {
                out.re.data_mut()[j * r + i] = self.re.data()[i * c + j];
                out.im.data_mut()[j * r + i] = -self.im.data()[i * c + j];
            }
        }
        out
    }

    pub fn add(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.zip_entries("ComplexMatrix::add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.zip_entries("ComplexMatrix::sub", other, |a, b| a - b)
    }

    fn zip_entries(
        &self,
        op: &'static str,
        other: &ComplexMatrix,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<ComplexMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dim(
                op,
                format!(
                    "{}x{} vs {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let mut out = self.clone();
        for (o, v) in out.re.data_mut().iter_mut().zip(other.re.data()) {
            *o = f(*o, *v);
        }
        for (o, v) in out.im.data_mut().iter_mut().zip(other.im.data()) {
            *o = f(*o, *v);
        }
        Ok(out)
    }

    /// Multiply every entry by a real scalar.
    pub fn scale(&self, s: f64) -> ComplexMatrix {
        let mut out = self.clone();
        for v in out.re.data_mut().iter_mut() {
            *v *= s;
        }
        for v in out.im.data_mut().iter_mut() {
            *v *= s;
        }
        out
    }

    /// Multiply every entry by a complex scalar.
    pub fn scale_complex(&self, s: Complex64) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j) * s)
    }

    /// `self + I` (square only).
    pub fn add_identity(&self) -> Result<ComplexMatrix> {
        if self.rows != self.cols {
            return Err(Error::dim(
                "ComplexMatrix::add_identity",
                format!("{}x{}", self.rows, self.cols),
            ));
        }
        let mut out = self.clone();
        let n = self.cols;
        for i in 0..n {
            out.re.data_mut()[i * n + i] += 1.0;
        }
        Ok(out)
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.re.data().iter().map(|v| v * v).sum::<f64>()
            + self.im.data().iter().map(|v| v * v).sum::<f64>()
    }

    pub fn frob_norm(&self) -> f64 {
        self.frob_norm_sq().sqrt()
    }

    /// Largest absolute deviation from Hermitian symmetry, `max |A − Aᴴ|`.
    pub fn hermitian_deviation(&self) -> f64 {
        let n = self.rows.min(self.cols);
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                let d = self.get(i, j) - self.get(j, i).conj();
                worst = worst.max(d.norm());
            }
        }
        worst
    }

    /// Cholesky factorization `A = L·Lᴴ` of a Hermitian positive definite
    /// matrix. Fails if `A` deviates from Hermitian by more than `herm_tol`
    /// or any pivot is not strictly positive.
    pub fn cholesky(&self, herm_tol: f64) -> Result<Cholesky> {
        if self.rows != self.cols {
            return Err(Error::dim(
                "ComplexMatrix::cholesky",
                format!("{}x{}", self.rows, self.cols),
            ));
        }
        let dev = self.hermitian_deviation();
        if !(dev <= herm_tol) {
            return Err(Error::Contract(format!(
                "cholesky input deviates from Hermitian by {dev:.3e} (tolerance {herm_tol:.1e})"
            )));
        }
        let n = self.rows;
        let mut l = ComplexMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = self.get(j, j).re;
            for r in 0..j {
                d -= l.get(j, r).norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Decomposition(format!(
                    "pivot {j} is {d:.3e}; matrix is not positive definite"
                )));
            }
            let ljj = d.sqrt();
            l.set(j, j, Complex64::new(ljj, 0.0));
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for r in 0..j {
                    s -= l.get(i, r) * l.get(j, r).conj();
                }
                l.set(i, j, s / ljj);
            }
        }
        Ok(Cholesky { l })
    }

    /// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
    /// Returns eigenvalues in descending order with matching eigenvector
    /// columns (`A ≈ U·diag(λ)·Uᴴ`). Intended for the small matrices that
    /// appear here (n ≲ 100).
    pub fn eigh(&self, herm_tol: f64) -> Result<(Vec<f64>, ComplexMatrix)> {
        if self.rows != self.cols {
            return Err(Error::dim(
                "ComplexMatrix::eigh",
                format!("{}x{}", self.rows, self.cols),
            ));
        }
        let dev = self.hermitian_deviation();
        if !(dev <= herm_tol) {
            return Err(Error::Contract(format!(
                "eigh input deviates from Hermitian by {dev:.3e} (tolerance {herm_tol:.1e})"
            )));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut u = ComplexMatrix::identity(n);
        let scale = self.frob_norm().max(f64::MIN_POSITIVE);
        for _sweep in 0..60 {
            let mut off = 0.0f64;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a.get(p, q).norm_sqr();
                }
            }
            if off.sqrt() <= 1e-14 * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    jacobi_rotate(&mut a, &mut u, p, q);
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        let evs: Vec<f64> = (0..n).map(|i| a.get(i, i).re).collect();
        order.sort_by(|&i, &j| evs[j].partial_cmp(&evs[i]).unwrap());
        let values: Vec<f64> = order.iter().map(|&i| evs[i]).collect();
        let vectors = ComplexMatrix::from_fn(n, n, |i, j| u.get(i, order[j]));
        Ok((values, vectors))
    }

    /// Top `count` singular values with the matching right singular vectors
    /// (as columns), computed from the Hermitian Gram matrix on the smaller
    /// side. Singular values below `1e-12 · σ_max` are treated as zero and
    /// paired with a zero column.
    pub fn top_right_singular(&self, count: usize) -> Result<(Vec<f64>, ComplexMatrix)> {
        let (r, c) = (self.rows, self.cols);
        if count > c {
            return Err(Error::dim(
                "ComplexMatrix::top_right_singular",
                format!("{count} right vectors from a {r}x{c} matrix"),
            ));
        }
        let herm_tol = 1e-9 * (1.0 + self.frob_norm_sq());
        if r <= c {
            // Right vectors from A·Aᴴ = U·Σ²·Uᴴ, then v = Aᴴu/σ.
            let gram = self.matmul(&self.adjoint())?;
            let (lambda, u) = gram.eigh(herm_tol)?;
            let smax = lambda[0].max(0.0).sqrt();
            let mut sigma = Vec::with_capacity(count);
            let mut v = ComplexMatrix::zeros(c, count);
            for jcol in 0..count {
                let s = if jcol < lambda.len() { lambda[jcol].max(0.0).sqrt() } else { 0.0 };
                sigma.push(s);
                if s > 1e-12 * smax.max(f64::MIN_POSITIVE) {
                    for i in 0..c {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for l in 0..r {
                            acc += self.get(l, i).conj() * u.get(l, jcol);
                        }
                        v.set(i, jcol, acc / s);
                    }
                }
            }
            Ok((sigma, v))
        } else {
            // Right vectors are eigenvectors of AᴴA.
            let gram = self.adjoint().matmul(self)?;
            let (lambda, w) = gram.eigh(herm_tol)?;
            let sigma: Vec<f64> = lambda.iter().take(count).map(|l| l.max(0.0).sqrt()).collect();
            let v = ComplexMatrix::from_fn(c, count, |i, j| w.get(i, j));
            Ok((sigma, v))
        }
    }
}

/// One cyclic-Jacobi step: zero the (p,q) off-diagonal pair of the Hermitian
/// matrix `a` with a unitary plane rotation, accumulated into `u`.
fn jacobi_rotate(a: &mut ComplexMatrix, u: &mut ComplexMatrix, p: usize, q: usize) {
    let apq = a.get(p, q);
    let mag = apq.norm();
    if mag == 0.0 {
        return;
    }
    // Absorb the phase so the 2×2 block becomes real symmetric, then apply
    // the classic Jacobi angle. J = [[c, s·e^{iφ}], [−s·e^{−iφ}… ]] folded
    // below as column/row updates.
    let phase = apq / mag;
    let app = a.get(p, p).re;
    let aqq = a.get(q, q).re;
    let tau = (aqq - app) / (2.0 * mag);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        1.0 / (tau - (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    let n = a.rows();
    // Column update: [col_p, col_q] ← [c·col_p − s·phase·col_q,
    //                                  s·conj? …] keeping A Hermitian.
    for i in 0..n {
        let aip = a.get(i, p);
        let aiq = a.get(i, q);
        a.set(i, p, aip * c - aiq * phase.conj() * s);
        a.set(i, q, aip * phase * s + aiq * c);
    }
    // Row update with the conjugate rotation.
    for j in 0..n {
        let apj = a.get(p, j);
        let aqj = a.get(q, j);
        a.set(p, j, apj * c - aqj * phase * s);
        a.set(q, j, apj * phase.conj() * s + aqj * c);
    }
    for i in 0..u.rows() {
        let uip = u.get(i, p);
        let uiq = u.get(i, q);
        u.set(i, p, uip * c - uiq * phase.conj() * s);
        u.set(i, q, uip * phase * s + uiq * c);
    }
}

/// Lower-triangular Cholesky factor of a Hermitian positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: ComplexMatrix,
}

impl Cholesky {
    pub fn factor(&self) -> &ComplexMatrix {
        &self.l
    }

    /// Natural logarithm of `det(A) = det(L)²`.
    pub fn log_det(&self) -> f64 {
        let n = self.l.rows();
        let mut s = 0.0;
        for i in 0..n {
            s += self.l.get(i, i).re.ln();
        }
        2.0 * s
    }

    /// Solve `A·X = B` by forward/back substitution.
    pub fn solve(&self, b: &ComplexMatrix) -> Result<ComplexMatrix> {
        let n = self.l.rows();
        if b.rows() != n {
            return Err(Error::dim(
                "Cholesky::solve",
                format!("rhs has {} rows, factor is {n}x{n}", b.rows()),
            ));
        }
        let k = b.cols();
        // L·Y = B
        let mut y = ComplexMatrix::zeros(n, k);
        for col in 0..k {
            for i in 0..n {
                let mut s = b.get(i, col);
                for r in 0..i {
                    s -= self.l.get(i, r) * y.get(r, col);
                }
                y.set(i, col, s / self.l.get(i, i).re);
            }
        }
        // Lᴴ·X = Y
        let mut x = ComplexMatrix::zeros(n, k);
        for col in 0..k {
            for i in (0..n).rev() {
                let mut s = y.get(i, col);
                for r in (i + 1)..n {
                    s -= self.l.get(r, i).conj() * x.get(r, col);
                }
                x.set(i, col, s / self.l.get(i, i).re);
            }
        }
        Ok(x)
    }

    /// `A⁻¹` (Hermitian).
    pub fn inverse(&self) -> Result<ComplexMatrix> {
        self.solve(&ComplexMatrix::identity(self.l.rows()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
        assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (tol {tol})");
    }

    fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(r, c, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    /// Independent route for determinants: cofactor expansion.
    fn det_cofactor(a: &ComplexMatrix) -> Complex64 {
        let n = a.rows();
        if n == 1 {
            return a.get(0, 0);
        }
        let mut det = Complex64::new(0.0, 0.0);
        for j in 0..n {
            let minor = ComplexMatrix::from_fn(n - 1, n - 1, |r, c| {
                a.get(r + 1, if c < j { c } else { c + 1 })
            });
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            det += a.get(0, j) * det_cofactor(&minor) * sign;
        }
        det
    }

    fn hpd(rng: &mut impl Rng, n: usize) -> ComplexMatrix {
        let a = random_matrix(rng, n, n);
        a.matmul(&a.adjoint()).unwrap().add_identity().unwrap()
    }

    // 1. product oracle: blocked complex multiply vs direct expansion
    #[test]
    fn matmul_matches_entrywise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 3, 4);
        let b = random_matrix(&mut rng, 4, 5);
        let c = a.matmul(&b).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                let mut s = Complex64::new(0.0, 0.0);
                for l in 0..4 {
                    s += a.get(i, l) * b.get(l, j);
                }
                assert!((c.get(i, j) - s).norm() < 1e-12);
            }
        }
        assert!(a.matmul(&a).is_err(), "3x4 times 3x4 must be a dimension error");
    }

    // 2. [[j]]·[[j]] = [[−1]]
    #[test]
    fn matmul_imaginary_unit_squares_to_minus_one() {
        let j = ComplexMatrix::from_fn(1, 1, |_, _| Complex64::new(0.0, 1.0));
        let p = j.matmul(&j).unwrap();
        assert_eq!(p.get(0, 0), Complex64::new(-1.0, 0.0));
    }

    #[test]
    fn adjoint_conjugates_and_transposes() {
        let a = ComplexMatrix::from_fn(2, 3, |i, jc| Complex64::new(i as f64, jc as f64));
        let ah = a.adjoint();
        assert_eq!(ah.rows(), 3);
        assert_eq!(ah.get(2, 1), Complex64::new(1.0, -2.0));
        // (AB)ᴴ = BᴴAᴴ
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 3, 4);
        let y = random_matrix(&mut rng, 4, 2);
        let lhs = x.matmul(&y).unwrap().adjoint();
        let rhs = y.adjoint().matmul(&x.adjoint()).unwrap();
        assert!(lhs.sub(&rhs).unwrap().frob_norm() < 1e-12);
    }

    // 3. log det: identity → 0, diagonal → sum of logs, random HPD vs cofactor
    #[test]
    fn cholesky_log_det() {
        let eye = ComplexMatrix::identity(4);
        assert_close(eye.cholesky(1e-9).unwrap().log_det(), 0.0, 1e-15, "logdet(I)");

        let diag = [2.0, 4.0];
        let d = ComplexMatrix::from_fn(2, 2, |i, j| {
            Complex64::new(if i == j { diag[i] } else { 0.0 }, 0.0)
        });
        assert_close(d.cholesky(1e-9).unwrap().log_det(), 8.0f64.ln(), 1e-12, "logdet(diag(2,4))");

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let m = hpd(&mut rng, 3);
            let det = det_cofactor(&m);
            assert!(det.im.abs() < 1e-10, "HPD determinant should be real");
            assert_close(
                m.cholesky(1e-9).unwrap().log_det(),
                det.re.ln(),
                1e-10,
                "logdet vs cofactor",
            );
        }
    }

    #[test]
    fn cholesky_rejects_bad_inputs() {
        let mut m = ComplexMatrix::identity(2);
        m.set(0, 1, Complex64::new(0.5, 0.0)); // asymmetric now
        assert!(matches!(m.cholesky(1e-9), Err(Error::Contract(_))));

        let neg = ComplexMatrix::from_fn(1, 1, |_, _| Complex64::new(-1.0, 0.0));
        assert!(matches!(neg.cholesky(1e-9), Err(Error::Decomposition(_))));
    }

    #[test]
    fn cholesky_solve_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let a = hpd(&mut rng, 5);
        let b = random_matrix(&mut rng, 5, 3);
        let x = a.cholesky(1e-9).unwrap().solve(&b).unwrap();
        let resid = a.matmul(&x).unwrap().sub(&b).unwrap().frob_norm();
        assert!(resid < 1e-10, "solve residual {resid}");
        let inv = a.cholesky(1e-9).unwrap().inverse().unwrap();
        let eye = a.matmul(&inv).unwrap();
        let err = eye.sub(&ComplexMatrix::identity(5)).unwrap().frob_norm();
        assert!(err < 1e-10, "inverse residual {err}");
    }

    // 4. eigh reconstructs, vectors are orthonormal, values ordered
    #[test]
    fn eigh_reconstructs_hermitian_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for n in [1usize, 2, 3, 6, 8] {
            let a = hpd(&mut rng, n);
            let (vals, u) = a.eigh(1e-9).unwrap();
            for w in vals.windows(2) {
                assert!(w[0] >= w[1], "eigenvalues must be descending");
            }
            let lam = ComplexMatrix::from_fn(n, n, |i, j| {
                Complex64::new(if i == j { vals[i] } else { 0.0 }, 0.0)
            });
            let rebuilt = u.matmul(&lam).unwrap().matmul(&u.adjoint()).unwrap();
            assert!(rebuilt.sub(&a).unwrap().frob_norm() < 1e-9 * (1.0 + a.frob_norm()));
            let gram = u.adjoint().matmul(&u).unwrap();
            let err = gram.sub(&ComplexMatrix::identity(n)).unwrap().frob_norm();
            assert!(err < 1e-10, "eigenvectors not orthonormal: {err}");
        }
    }

    // 5. eigenvalue sum route equals cofactor determinant route
    #[test]
    fn eigh_determinant_cross_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let a = hpd(&mut rng, 4);
        let (vals, _) = a.eigh(1e-9).unwrap();
        let log_det_eig: f64 = vals.iter().map(|v| v.ln()).sum();
        let det = det_cofactor(&a).re;
        assert_close(log_det_eig, det.ln(), 1e-9, "eigh vs cofactor determinant");
    }

    // 6. singular vectors: A v_i = σ_i u_i structure via projection residual
    #[test]
    fn top_right_singular_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        // Wide matrix (receive side smaller), like a channel H.
        let a = random_matrix(&mut rng, 3, 8);
        let (sigma, v) = a.top_right_singular(3).unwrap();
        assert!(sigma.windows(2).all(|w| w[0] >= w[1]));
        // ‖A·v_i‖ = σ_i and the images are orthogonal.
        let av = a.matmul(&v).unwrap();
        for i in 0..3 {
            let mut col = ComplexMatrix::zeros(3, 1);
            for r in 0..3 {
                col.set(r, 0, av.get(r, i));
            }
            assert_close(col.frob_norm(), sigma[i], 1e-9, "‖A v_i‖ vs σ_i");
        }
        // Right vectors orthonormal.
        let gram = v.adjoint().matmul(&v).unwrap();
        let err = gram.sub(&ComplexMatrix::identity(3)).unwrap().frob_norm();
        assert!(err < 1e-9);
        // Frobenius identity: Σσ² over full rank equals ‖A‖².
        let total: f64 = sigma.iter().map(|s| s * s).sum();
        assert_close(total, a.frob_norm_sq(), 1e-9, "Σσ² vs ‖A‖²");
    }

    #[test]
    fn top_right_singular_tall_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let a = random_matrix(&mut rng, 6, 2);
        let (sigma, v) = a.top_right_singular(2).unwrap();
        let av = a.matmul(&v).unwrap();
        for i in 0..2 {
            let mut n2 = 0.0;
            for r in 0..6 {
                n2 += av.get(r, i).norm_sqr();
            }
            assert_close(n2.sqrt(), sigma[i], 1e-9, "tall ‖A v_i‖");
        }
    }
}
