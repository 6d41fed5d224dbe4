//! Small dense complex matrices and the decompositions needed for fidelity
//! and tomographic reconstruction. Everything here targets 4x4 (two-qubit)
//! problems, so the algorithms favour robustness over asymptotics.

use num_complex::Complex;

use crate::scalar::Real;
use crate::{Error, Result};

pub type C<F> = Complex<F>;

/// Square complex matrix in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct CMat<F> {
    dim: usize,
    data: Vec<C<F>>,
}

impl<F: Real> CMat<F> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![C::new(F::zero(), F::zero()); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = C::new(F::one(), F::zero());
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C<F>) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a.re.is_zero() && a.im.is_zero() {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] = out[(i, j)] + a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        let n = self.dim;
        Self::from_fn(n, |i, j| self[(j, i)].conj())
    }

    pub fn trace(&self) -> C<F> {
        (0..self.dim).map(|i| self[(i, i)]).fold(
            C::new(F::zero(), F::zero()),
            |acc, x| acc + x,
        )
    }

    pub fn scale(&self, s: C<F>) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|x| *x * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a + *b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a - *b)
                .collect(),
        }
    }

    pub fn frobenius_norm(&self) -> F {
        self.data
            .iter()
            .map(|x| x.norm_sqr())
            .fold(F::zero(), |a, b| a + b)
            .sqrt()
    }

    /// (M + M†)/2
    pub fn hermitized(&self) -> Self {
        let adj = self.adjoint();
        self.add(&adj).scale(C::new(F::half(), F::zero()))
    }

    pub fn max_hermiticity_violation(&self) -> F {
        let mut worst = F::zero();
        for i in 0..self.dim {
            for j in 0..self.dim {
                let d = (self[(i, j)] - self[(j, i)].conj()).norm();
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }

    /// Kronecker product.
    pub fn kron(&self, other: &Self) -> Self {
        let n = self.dim;
        let m = other.dim;
        Self::from_fn(n * m, |i, j| self[(i / m, j / m)] * other[(i % m, j % m)])
    }
}

impl<F> std::ops::Index<(usize, usize)> for CMat<F> {
    type Output = C<F>;
    fn index(&self, (i, j): (usize, usize)) -> &C<F> {
        &self.data[i * self.dim + j]
    }
}

impl<F> std::ops::IndexMut<(usize, usize)> for CMat<F> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C<F> {
        &mut self.data[i * self.dim + j]
    }
}

/// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues (unsorted) and the unitary of eigenvectors as columns,
/// satisfying `A = V diag(w) V†` up to round-off. The input is hermitized
/// before iterating.
pub fn hermitian_eig<F: Real>(mat: &CMat<F>) -> (Vec<F>, CMat<F>) {
    let n = mat.dim();
    let mut a = mat.hermitized();
    let mut v = CMat::identity(n);
    let scale = a.frobenius_norm() + F::one();
    let tol = F::epsilon() * scale * F::of(1e-2);

    for _sweep in 0..60 {
        let mut off = F::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off = off + a[(p, q)].norm_sqr();
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r <= F::epsilon() * scale {
                    a[(p, q)] = C::new(F::zero(), F::zero());
                    a[(q, p)] = C::new(F::zero(), F::zero());
                    continue;
                }
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let tau = (app - aqq) / (F::two() * r);
                let t = if tau >= F::zero() {
                    F::one() / (tau + (tau * tau + F::one()).sqrt())
                } else {
                    -F::one() / (-tau + (tau * tau + F::one()).sqrt())
                };
                let c = F::one() / (t * t + F::one()).sqrt();
                let s = t * c;
                let phase = apq / C::new(r, F::zero());

                // Columns: A <- A J, with J[p][p]=c, J[p][q]=-s*phase,
                // J[q][p]=s*conj(phase), J[q][q]=c.
                for i in 0..n {
                    let aip = a[(i, p)];
                    let aiq = a[(i, q)];
                    a[(i, p)] = aip * C::new(c, F::zero()) + aiq * phase.conj() * C::new(s, F::zero());
                    a[(i, q)] = aiq * C::new(c, F::zero()) - aip * phase * C::new(s, F::zero());
                }
                // Rows: A <- J† A.
                for j in 0..n {
                    let apj = a[(p, j)];
                    let aqj = a[(q, j)];
                    a[(p, j)] = apj * C::new(c, F::zero()) + aqj * phase * C::new(s, F::zero());
                    a[(q, j)] = aqj * C::new(c, F::zero()) - apj * phase.conj() * C::new(s, F::zero());
                }
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = vip * C::new(c, F::zero()) + viq * phase.conj() * C::new(s, F::zero());
                    v[(i, q)] = viq * C::new(c, F::zero()) - vip * phase * C::new(s, F::zero());
                }
            }
        }
    }

    let w = (0..n).map(|i| a[(i, i)].re).collect();
    (w, v)
}

/// Rebuild `V diag(f(w)) V†`.
pub fn eig_rebuild<F: Real>(w: &[F], v: &CMat<F>, f: impl Fn(F) -> F) -> CMat<F> {
    let n = v.dim();
    CMat::from_fn(n, |i, j| {
        let mut acc = C::new(F::zero(), F::zero());
        for k in 0..n {
            acc = acc + v[(i, k)] * v[(j, k)].conj() * C::new(f(w[k]), F::zero());
        }
        acc
    })
}

/// Principal square root of a Hermitian positive semidefinite matrix.
/// Slightly negative eigenvalues from round-off are clipped to zero.
pub fn hermitian_sqrt<F: Real>(mat: &CMat<F>) -> CMat<F> {
    let (w, v) = hermitian_eig(mat);
    eig_rebuild(&w, &v, |x| if x > F::zero() { x.sqrt() } else { F::zero() })
}

/// Solve `A x = b` for complex square `A` by Gaussian elimination with
/// partial pivoting.
pub fn solve<F: Real>(a: &CMat<F>, b: &[C<F>]) -> Result<Vec<C<F>>> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::Dimension(format!(
            "rhs length {} does not match matrix dim {n}",
            b.len()
        )));
    }
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let mut pivot = col;
        let mut best = m[(col, col)].norm();
        for row in (col + 1)..n {
            let mag = m[(row, col)].norm();
            if mag > best {
                best = mag;
                pivot = row;
            }
        }
        if best <= F::epsilon() {
            return Err(Error::InvalidParameter(
                "singular linear system in reconstruction".into(),
            ));
        }
        if pivot != col {
            for j in 0..n {
                let tmp = m[(col, j)];
                m[(col, j)] = m[(pivot, j)];
                m[(pivot, j)] = tmp;
            }
            rhs.swap(col, pivot);
        }
        let diag = m[(col, col)];
        for row in (col + 1)..n {
            let factor = m[(row, col)] / diag;
            if factor.re.is_zero() && factor.im.is_zero() {
                continue;
            }
            for j in col..n {
                let v = m[(col, j)];
                m[(row, j)] = m[(row, j)] - factor * v;
            }
            let v = rhs[col];
            rhs[row] = rhs[row] - factor * v;
        }
    }
    let mut x = vec![C::new(F::zero(), F::zero()); n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for j in (row + 1)..n {
            acc = acc - m[(row, j)] * x[j];
        }
        x[row] = acc / m[(row, row)];
    }
    Ok(x)
}
