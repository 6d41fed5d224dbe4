//! Model of one polarization-entangled pair source: the emitted two-qubit
//! state (Werner mixing plus an optional polarization rotation on the dealer
//! photon) and Poissonian per-pulse pair statistics.

use rand::Rng;

use crate::qmath::{bell_state, BellKind, DensityMatrix, LocalGate};
use crate::scalar::{Real, SampleReal};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct SourceParams<F> {
    /// Mean photon pairs per pump pulse.
    pub mu: F,
    /// Werner mixing weight in [0, 1]; 1 is the ideal Bell state.
    pub p: F,
    /// Polarization rotation (radians) applied to the dealer-side photon.
    pub rotation_theta: F,
    pub base_state: BellKind,
}

impl<F: Real> SourceParams<F> {
    pub fn ideal(mu: F, base_state: BellKind) -> Self {
        Self {
            mu,
            p: F::one(),
            rotation_theta: F::zero(),
            base_state,
        }
    }

    /// Calibrate the Werner weight from a measured fidelity: p = (4F - 1)/3.
    pub fn from_fidelity(mu: F, fidelity: F, base_state: BellKind) -> Result<Self> {
        let p = (F::of(4.0) * fidelity - F::one()) / F::of(3.0);
        let s = Self {
            mu,
            p,
            rotation_theta: F::zero(),
            base_state,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu < F::zero() || !self.mu.is_finite() {
            return Err(Error::InvalidParameter(format!("mu = {}", self.mu)));
        }
        if self.p < F::zero() || self.p > F::one() {
            return Err(Error::InvalidParameter(format!(
                "Werner weight p = {} outside [0, 1]",
                self.p
            )));
        }
        Ok(())
    }

    /// Emitted two-qubit state:
    /// (R(theta) x I) [p |bell><bell| + (1-p) I/4] (R(theta)† x I).
    pub fn effective_state(&self) -> Result<DensityMatrix<F>> {
        self.validate()?;
        let pure = bell_state::<F>(self.base_state).to_density();
        let mixed = DensityMatrix::maximally_mixed(4);
        let werner = pure.mix(&mixed, self.p)?;
        if self.rotation_theta.is_zero() {
            return Ok(werner);
        }
        let u = LocalGate::rotation(0, self.rotation_theta).embed(2)?;
        werner.conjugate(&u)
    }
}

impl<F: SampleReal> SourceParams<F> {
    /// Number of pairs emitted in one pulse (Poisson with mean `mu`).
    pub fn sample_pair_count<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        F::sample_poisson(self.mu, rng)
    }
}
