//! Two-qubit state toolbox: Bell states, local unitaries, measurement
//! statistics, fidelity, visibility and tomographic reconstruction.

pub mod linalg;
pub mod tomography;

use crate::scalar::Real;
use crate::{Error, Result};

pub use linalg::{CMat, C};
pub use tomography::{tomographic_reconstruction, TomoCounts};

/// Norm / unitarity tolerance for pure-state operations.
pub fn pure_tol<F: Real>() -> F {
    F::of(1e-12)
}

/// Tolerance for matrix-function operations (matrix square roots amplify
/// round-off).
pub fn matrix_tol<F: Real>() -> F {
    F::of(1e-9)
}

/// The four Bell states in the H/V computational basis (H -> 0, V -> 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BellKind {
    PsiMinus,
    PsiPlus,
    PhiMinus,
    PhiPlus,
}

impl BellKind {
    pub fn name(self) -> &'static str {
        match self {
            BellKind::PsiMinus => "psi_minus",
            BellKind::PsiPlus => "psi_plus",
            BellKind::PhiMinus => "phi_minus",
            BellKind::PhiPlus => "phi_plus",
        }
    }
}

impl std::str::FromStr for BellKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psi_minus" => Ok(BellKind::PsiMinus),
            "psi_plus" => Ok(BellKind::PsiPlus),
            "phi_minus" => Ok(BellKind::PhiMinus),
            "phi_plus" => Ok(BellKind::PhiPlus),
            other => Err(Error::InvalidParameter(format!("unknown bell state {other:?}"))),
        }
    }
}

/// Normalized pure state on one or more qubits.
#[derive(Clone, Debug)]
pub struct StateVector<F> {
    amps: Vec<C<F>>,
}

impl<F: Real> StateVector<F> {
    pub fn new(amps: Vec<C<F>>) -> Result<Self> {
        let dim = amps.len();
        if dim == 0 || dim & (dim - 1) != 0 {
            return Err(Error::InvalidState(format!(
                "dimension {dim} is not a power of two"
            )));
        }
        let norm_sq: F = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm_sq - F::one()).abs() > pure_tol::<F>() {
            return Err(Error::InvalidState(format!(
                "squared norm {norm_sq} differs from 1"
            )));
        }
        Ok(Self { amps })
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn n_qubits(&self) -> usize {
        self.amps.len().trailing_zeros() as usize
    }

    pub fn amplitudes(&self) -> &[C<F>] {
        &self.amps
    }

    pub fn inner(&self, other: &Self) -> Result<C<F>> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension(format!(
                "{} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .fold(C::new(F::zero(), F::zero()), |acc, x| acc + x))
    }

    /// Equality up to a global phase: |<a|b>| = 1 within the pure tolerance.
    pub fn equals_up_to_phase(&self, other: &Self) -> bool {
        match self.inner(other) {
            Ok(ip) => (ip.norm() - F::one()).abs() <= pure_tol::<F>(),
            Err(_) => false,
        }
    }

    pub fn to_density(&self) -> DensityMatrix<F> {
        let n = self.dim();
        let mat = CMat::from_fn(n, |i, j| self.amps[i] * self.amps[j].conj());
        DensityMatrix { mat }
    }
}

/// A (possibly mixed) quantum state as a density matrix.
#[derive(Clone, Debug)]
pub struct DensityMatrix<F> {
    mat: CMat<F>,
}

impl<F: Real> DensityMatrix<F> {
    /// Validates Hermiticity, unit trace and positivity (up to the stated
    /// tolerances) before accepting the matrix.
    pub fn new(mat: CMat<F>) -> Result<Self> {
        let herm = mat.max_hermiticity_violation();
        if herm > F::of(1e-10) {
            return Err(Error::InvalidState(format!(
                "hermiticity violation {herm}"
            )));
        }
        let tr = mat.trace();
        if (tr.re - F::one()).abs() > F::of(1e-10) || tr.im.abs() > F::of(1e-10) {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let (w, _) = linalg::hermitian_eig(&mat);
        let min = w.iter().cloned().fold(F::infinity(), F::min);
        if min < F::of(-1e-9) {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min}"
            )));
        }
        Ok(Self { mat })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        let mat = CMat::identity(dim).scale(C::new(F::one() / F::of(dim as f64), F::zero()));
        Self { mat }
    }

    pub fn dim(&self) -> usize {
        self.mat.dim()
    }

    pub fn n_qubits(&self) -> usize {
        self.dim().trailing_zeros() as usize
    }

    pub fn matrix(&self) -> &CMat<F> {
        &self.mat
    }

    pub fn purity(&self) -> F {
        self.mat.mul(&self.mat).trace().re
    }

    /// p * rho + (1 - p) * other
    pub fn mix(&self, other: &Self, p: F) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension(format!("{} vs {}", self.dim(), other.dim())));
        }
        let mat = self
            .mat
            .scale(C::new(p, F::zero()))
            .add(&other.mat.scale(C::new(F::one() - p, F::zero())));
        Ok(Self { mat })
    }

    /// U rho U† for a full-dimension unitary.
    pub fn conjugate(&self, u: &CMat<F>) -> Result<Self> {
        if u.dim() != self.dim() {
            return Err(Error::Dimension(format!("{} vs {}", u.dim(), self.dim())));
        }
        let mat = u.mul(&self.mat).mul(&u.adjoint());
        Ok(Self { mat })
    }
}

/// A 2x2 unitary acting on one qubit of a multi-qubit register.
#[derive(Clone, Debug)]
pub struct LocalGate<F> {
    pub qubit: usize,
    mat: [[C<F>; 2]; 2],
}

impl<F: Real> LocalGate<F> {
    /// Validates unitarity (U U† = I within 1e-12).
    pub fn new(qubit: usize, mat: [[C<F>; 2]; 2]) -> Result<Self> {
        let tol = pure_tol::<F>();
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = C::new(F::zero(), F::zero());
                for k in 0..2 {
                    acc = acc + mat[i][k] * mat[j][k].conj();
                }
                let expect = if i == j { F::one() } else { F::zero() };
                if (acc - C::new(expect, F::zero())).norm() > tol {
                    return Err(Error::InvalidParameter("gate is not unitary".into()));
                }
            }
        }
        Ok(Self { qubit, mat })
    }

    pub fn identity(qubit: usize) -> Self {
        let z = C::new(F::zero(), F::zero());
        let o = C::new(F::one(), F::zero());
        Self { qubit, mat: [[o, z], [z, o]] }
    }

    pub fn pauli_x(qubit: usize) -> Self {
        let z = C::new(F::zero(), F::zero());
        let o = C::new(F::one(), F::zero());
        Self { qubit, mat: [[z, o], [o, z]] }
    }

    pub fn pauli_z(qubit: usize) -> Self {
        let z = C::new(F::zero(), F::zero());
        let o = C::new(F::one(), F::zero());
        Self { qubit, mat: [[o, z], [z, -o]] }
    }

    pub fn hadamard(qubit: usize) -> Self {
        let h = F::one() / F::two().sqrt();
        let p = C::new(h, F::zero());
        Self { qubit, mat: [[p, p], [p, -p]] }
    }

    /// Polarization rotation by `theta` (radians).
    pub fn rotation(qubit: usize, theta: F) -> Self {
        let c = C::new(theta.cos(), F::zero());
        let s = C::new(theta.sin(), F::zero());
        Self { qubit, mat: [[c, -s], [s, c]] }
    }

    /// Half-wave plate with fast axis at `theta`: rotates polarization by
    /// `2 theta` and flips handedness.
    pub fn half_wave_plate(qubit: usize, theta: F) -> Self {
        let two_t = F::two() * theta;
        let c = C::new(two_t.cos(), F::zero());
        let s = C::new(two_t.sin(), F::zero());
        Self { qubit, mat: [[c, s], [s, -c]] }
    }

    pub fn matrix(&self) -> &[[C<F>; 2]; 2] {
        &self.mat
    }

    /// Expand to the full register unitary (identity on the other qubits).
    pub fn embed(&self, n_qubits: usize) -> Result<CMat<F>> {
        if self.qubit >= n_qubits {
            return Err(Error::QubitIndex {
                index: self.qubit,
                qubits: n_qubits,
            });
        }
        let dim = 1usize << n_qubits;
        // Qubit 0 is the most significant bit of the amplitude index.
        let shift = n_qubits - 1 - self.qubit;
        let mut out = CMat::zeros(dim);
        for row in 0..dim {
            let rbit = (row >> shift) & 1;
            for cbit in 0..2 {
                let col = (row & !(1 << shift)) | (cbit << shift);
                out[(row, col)] = self.mat[rbit][cbit];
            }
        }
        Ok(out)
    }
}

pub fn bell_state<F: Real>(kind: BellKind) -> StateVector<F> {
    let z = C::new(F::zero(), F::zero());
    let h = C::new(F::one() / F::two().sqrt(), F::zero());
    let amps = match kind {
        BellKind::PsiMinus => vec![z, h, -h, z],
        BellKind::PsiPlus => vec![z, h, h, z],
        BellKind::PhiMinus => vec![h, z, z, -h],
        BellKind::PhiPlus => vec![h, z, z, h],
    };
    StateVector { amps }
}

/// Apply a sequence of local gates (in order) to a pure state.
pub fn apply_local<F: Real>(state: &StateVector<F>, gates: &[LocalGate<F>]) -> Result<StateVector<F>> {
    let n_qubits = state.n_qubits();
    let dim = state.dim();
    let mut amps = state.amps.clone();
    for gate in gates {
        if gate.qubit >= n_qubits {
            return Err(Error::QubitIndex {
                index: gate.qubit,
                qubits: n_qubits,
            });
        }
        let shift = n_qubits - 1 - gate.qubit;
        let stride = 1usize << shift;
        let mut next = amps.clone();
        for idx in 0..dim {
            if (idx >> shift) & 1 == 0 {
                let a0 = amps[idx];
                let a1 = amps[idx + stride];
                next[idx] = gate.mat[0][0] * a0 + gate.mat[0][1] * a1;
                next[idx + stride] = gate.mat[1][0] * a0 + gate.mat[1][1] * a1;
            }
        }
        amps = next;
    }
    StateVector::new(amps)
}

/// Measurement basis for one polarization qubit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Basis {
    /// H/V. Outcome 0 is H.
    Rectilinear,
    /// D/A. Outcome 0 is D.
    Diagonal,
    /// R/L. Outcome 0 is R.
    Circular,
}

impl Basis {
    /// Row k of the returned matrix is the bra of the outcome-k eigenvector.
    fn meas_rows<F: Real>(self) -> [[C<F>; 2]; 2] {
        let h = F::one() / F::two().sqrt();
        let hp = C::new(h, F::zero());
        match self {
            Basis::Rectilinear => {
                let z = C::new(F::zero(), F::zero());
                let o = C::new(F::one(), F::zero());
                [[o, z], [z, o]]
            }
            Basis::Diagonal => [[hp, hp], [hp, -hp]],
            Basis::Circular => {
                let mi = C::new(F::zero(), -h);
                let pi = C::new(F::zero(), h);
                // <R| = (1, -i)/sqrt(2), <L| = (1, i)/sqrt(2)
                [[hp, mi], [hp, pi]]
            }
        }
    }
}

impl std::str::FromStr for Basis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rectilinear" => Ok(Basis::Rectilinear),
            "diagonal" => Ok(Basis::Diagonal),
            "circular" => Ok(Basis::Circular),
            other => Err(Error::InvalidParameter(format!("unknown basis {other:?}"))),
        }
    }
}

/// Probability table over outcome bit tuples for measuring each qubit in the
/// given basis. Index k encodes the bits with qubit 0 as the most significant.
pub fn outcome_distribution<F: Real>(state: &DensityMatrix<F>, bases: &[Basis]) -> Result<Vec<F>> {
    let n_qubits = state.n_qubits();
    if bases.len() != n_qubits {
        return Err(Error::Dimension(format!(
            "{} bases for {} qubits",
            bases.len(),
            n_qubits
        )));
    }
    let dim = state.dim();
    // W has the outcome bras as rows: p_k = (W rho W†)[k][k].
    let mut w = CMat::identity(1);
    for basis in bases {
        let rows = basis.meas_rows::<F>();
        let m = CMat::from_fn(2, |i, j| rows[i][j]);
        w = w.kron(&m);
    }
    let rotated = w.mul(&state.mat).mul(&w.adjoint());
    let mut probs: Vec<F> = (0..dim)
        .map(|k| {
            let p = rotated[(k, k)].re;
            if p < F::zero() {
                F::zero()
            } else {
                p
            }
        })
        .collect();
    let total: F = probs.iter().cloned().sum();
    if (total - F::one()).abs() > pure_tol::<F>() * F::of(1e2) {
        return Err(Error::InvalidState(format!(
            "outcome probabilities sum to {total}"
        )));
    }
    for p in &mut probs {
        *p = *p / total;
    }
    Ok(probs)
}

/// Uhlmann fidelity F = (tr sqrt(sqrt(rho) sigma sqrt(rho)))^2.
pub fn fidelity<F: Real>(rho: &DensityMatrix<F>, sigma: &DensityMatrix<F>) -> Result<F> {
    if rho.dim() != sigma.dim() {
        return Err(Error::Dimension(format!("{} vs {}", rho.dim(), sigma.dim())));
    }
    let sr = linalg::hermitian_sqrt(&rho.mat);
    let inner = sr.mul(&sigma.mat).mul(&sr).hermitized();
    let (w, _) = linalg::hermitian_eig(&inner);
    let tr: F = w
        .iter()
        .map(|&x| if x > F::zero() { x.sqrt() } else { F::zero() })
        .sum();
    let f = tr * tr;
    Ok(f.min(F::one()).max(F::zero()))
}

/// Interference-fringe visibility (n_max - n_min) / (n_max + n_min).
pub fn visibility<F: Real>(n_max: F, n_min: F) -> Result<F> {
    if n_min < F::zero() || n_max < n_min {
        return Err(Error::InvalidParameter(
            "visibility requires n_max >= n_min >= 0".into(),
        ));
    }
    if n_max <= F::zero() {
        return Err(Error::InvalidParameter(
            "visibility undefined for all-zero counts".into(),
        ));
    }
    Ok((n_max - n_min) / (n_max + n_min))
}

#[cfg(test)]
mod tests {
    use super::*;

    type SV = StateVector<f64>;

    fn psi_minus() -> SV {
        bell_state(BellKind::PsiMinus)
    }

    #[test]
    fn bell_state_amplitudes() {
        let s = psi_minus();
        let r = 1.0 / 2f64.sqrt();
        let amps = s.amplitudes();
        assert!((amps[0].norm()) < 1e-15);
        assert!((amps[1].re - r).abs() < 1e-15);
        assert!((amps[2].re + r).abs() < 1e-15);
        assert!((amps[3].norm()) < 1e-15);
    }

    #[test]
    fn bell_states_orthogonal() {
        let a = psi_minus();
        let b = bell_state::<f64>(BellKind::PhiPlus);
        assert!(a.inner(&b).unwrap().norm() < 1e-15);
    }

    #[test]
    fn bell_frame_transformation() {
        // (Z x I)(X x I) |psi-> = |phi+> up to a global phase (here -1 with
        // our amplitude sign convention for psi-).
        let s = psi_minus();
        let gates = [LocalGate::pauli_x(0), LocalGate::pauli_z(0)];
        let out = apply_local(&s, &gates).unwrap();
        let phi_plus = bell_state::<f64>(BellKind::PhiPlus);
        assert!(out.equals_up_to_phase(&phi_plus));
        for (a, b) in out.amplitudes().iter().zip(phi_plus.amplitudes()) {
            assert!((a + b).norm() < 1e-15);
        }
    }

    #[test]
    fn frame_transformation_applied_twice_is_global_phase() {
        // Independently verified by 4x4 matrix multiplication: (ZX x I)^2 = -I x I.
        let s = psi_minus();
        let gates = [
            LocalGate::pauli_x(0),
            LocalGate::pauli_z(0),
            LocalGate::pauli_x(0),
            LocalGate::pauli_z(0),
        ];
        let out = apply_local(&s, &gates).unwrap();
        assert!(out.equals_up_to_phase(&s));
        for (a, b) in out.amplitudes().iter().zip(s.amplitudes()) {
            assert!((a + b).norm() < 1e-15); // global phase -1
        }
    }

    #[test]
    fn identity_gate_is_identity() {
        let s = bell_state::<f64>(BellKind::PhiPlus);
        let out = apply_local(&s, &[LocalGate::identity(0), LocalGate::identity(1)]).unwrap();
        for (a, b) in out.amplitudes().iter().zip(s.amplitudes()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn gate_index_out_of_range() {
        let s = psi_minus();
        assert!(apply_local(&s, &[LocalGate::<f64>::pauli_x(2)]).is_err());
    }

    #[test]
    fn psi_minus_anticorrelated_in_rectilinear_and_diagonal() {
        let rho = psi_minus().to_density();
        for basis in [Basis::Rectilinear, Basis::Diagonal] {
            let p = outcome_distribution(&rho, &[basis, basis]).unwrap();
            assert!(p[0].abs() < 1e-12 && p[3].abs() < 1e-12);
            assert!((p[1] - 0.5).abs() < 1e-12);
            assert!((p[2] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn maximally_mixed_uniform_outcomes() {
        let rho = DensityMatrix::<f64>::maximally_mixed(4);
        for bases in [
            [Basis::Rectilinear, Basis::Diagonal],
            [Basis::Circular, Basis::Circular],
        ] {
            let p = outcome_distribution(&rho, &bases).unwrap();
            for v in p {
                assert!((v - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fidelity_identity_and_orthogonal() {
        let a = psi_minus().to_density();
        let b = bell_state::<f64>(BellKind::PhiPlus).to_density();
        assert!((fidelity(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        assert!(fidelity(&a, &b).unwrap() < 1e-9);
    }

    #[test]
    fn werner_state_fidelity_closed_form() {
        // F(Werner(p), psi-) = (3p + 1)/4, cross-checked against the
        // eigendecomposition route used by `fidelity`.
        let pure = psi_minus().to_density();
        let mixed = DensityMatrix::<f64>::maximally_mixed(4);
        for p in [0.0, 0.5, 0.9, 0.984, 1.0] {
            let werner = pure.mix(&mixed, p).unwrap();
            let f = fidelity(&werner, &pure).unwrap();
            assert!((f - (3.0 * p + 1.0) / 4.0).abs() < 1e-9, "p={p}: {f}");
        }
    }

    #[test]
    fn fidelity_symmetric_and_unitary_invariant() {
        let pure = psi_minus().to_density();
        let mixed = DensityMatrix::<f64>::maximally_mixed(4);
        let a = pure.mix(&mixed, 0.7).unwrap();
        let b = bell_state::<f64>(BellKind::PhiPlus)
            .to_density()
            .mix(&mixed, 0.3)
            .unwrap();
        let fab = fidelity(&a, &b).unwrap();
        let fba = fidelity(&b, &a).unwrap();
        assert!((fab - fba).abs() < 1e-9);

        let u = LocalGate::rotation(0, 0.3).embed(2).unwrap()
            .mul(&LocalGate::hadamard(1).embed(2).unwrap());
        let au = a.conjugate(&u).unwrap();
        let bu = b.conjugate(&u).unwrap();
        assert!((fidelity(&au, &bu).unwrap() - fab).abs() < 1e-9);
    }

    #[test]
    fn visibility_values() {
        assert!((visibility(100.0f64, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(visibility(7.0f64, 7.0).unwrap().abs() < 1e-15);
        let v = visibility(995.0f64, 2.5).unwrap();
        assert!((v - 0.9949874686716792).abs() < 1e-12);
        assert!(visibility(0.0f64, 0.0).is_err());
        assert!(visibility(1.0f64, 2.0).is_err());
    }

    #[test]
    fn density_matrix_validation() {
        let good = psi_minus().to_density();
        assert!(DensityMatrix::new(good.matrix().clone()).is_ok());
        let bad = CMat::identity(4); // trace 4
        assert!(DensityMatrix::<f64>::new(bad).is_err());
    }
}
