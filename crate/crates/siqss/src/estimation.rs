//! Parameter estimation on postmatched GHZ rounds: observed error rates,
//! the finite-sample deviation bound for sampling without replacement, and
//! the resulting phase-error-rate bound.

use crate::postmatch::RoundSet;
use crate::scalar::Real;
use crate::{Error, Result};

/// Exact error tally; the rate is only formed on demand so callers can keep
/// integer arithmetic as long as possible.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RateCount {
    pub errors: u64,
    pub total: u64,
}

impl RateCount {
    pub fn rate<F: Real>(&self) -> F {
        if self.total == 0 {
            F::zero()
        } else {
            F::of(self.errors as f64) / F::of(self.total as f64)
        }
    }
}

/// Observed error rates of a round set.
#[derive(Clone, Debug)]
pub struct ObservedRates {
    /// Multiparty X error: dealer share vs XOR of all player bits.
    pub x_total: RateCount,
    /// Pairwise X error of each module/player link.
    pub x_pair: Vec<RateCount>,
    /// Pairwise Z error of each player against the reference module, after
    /// applying the announced flips.
    pub z_pair: Vec<RateCount>,
}

/// Tally error rates over the rounds. Requires at least one round in each
/// basis.
pub fn compute_qbers(rounds: &RoundSet) -> Result<ObservedRates> {
    let n_players = rounds
        .n_players()
        .ok_or(Error::EmptyBasis("X"))?;
    if rounds.x_rounds.is_empty() {
        return Err(Error::EmptyBasis("X"));
    }
    if rounds.z_rounds.is_empty() {
        return Err(Error::EmptyBasis("Z"));
    }
    let mut x_total = RateCount::default();
    let mut x_pair = vec![RateCount::default(); n_players];
    let mut z_pair = vec![RateCount::default(); n_players];
    for round in &rounds.x_rounds {
        let xor = round.player_bits.iter().fold(false, |a, &b| a ^ b);
        x_total.total += 1;
        x_total.errors += (xor != round.dealer_bit) as u64;
        for j in 0..n_players {
            x_pair[j].total += 1;
            x_pair[j].errors +=
                (round.player_bits[j] != round.per_stream_dealer_bits[j]) as u64;
        }
    }
    for round in &rounds.z_rounds {
        let corrected = round.corrected_player_bits();
        for j in 0..n_players {
            z_pair[j].total += 1;
            z_pair[j].errors += (corrected[j] != round.dealer_bit) as u64;
        }
    }
    Ok(ObservedRates {
        x_total,
        x_pair,
        z_pair,
    })
}

/// Compose independent pairwise error rates into the error rate of their XOR:
/// e = (1 - prod_j (1 - 2 e_j)) / 2.
pub fn xor_error_composition<F: Real>(rates: &[F]) -> Result<F> {
    if rates.is_empty() {
        return Err(Error::InvalidParameter("no rates to compose".into()));
    }
    let mut prod = F::one();
    for &e in rates {
        if e < F::zero() || e > F::half() {
            return Err(Error::InvalidParameter(format!(
                "pairwise error rate {e} outside [0, 1/2]"
            )));
        }
        prod = prod * (F::one() - F::two() * e);
    }
    Ok((F::one() - prod) * F::half())
}

/// Statistical deviation bound for estimating a rate on `m` untested items
/// from `k` tested ones (random sampling without replacement), at failure
/// probability `eps_bar`. `lambda` is the observed rate on the tested sample.
pub fn gamma<F: Real>(lambda: F, eps_bar: F, m: u64, k: u64) -> Result<F> {
    if m == 0 || k == 0 {
        return Err(Error::InvalidParameter(format!(
            "gamma requires m > 0 and k > 0, got m = {m}, k = {k}"
        )));
    }
    if eps_bar <= F::zero() || eps_bar >= F::one() {
        return Err(Error::InvalidParameter(format!(
            "eps_bar = {eps_bar} outside (0, 1)"
        )));
    }
    if lambda < F::zero() || lambda > F::one() {
        return Err(Error::InvalidParameter(format!(
            "lambda = {lambda} outside [0, 1]"
        )));
    }
    let mf = F::of(m as f64);
    let kf = F::of(k as f64);
    let n = mf + kf;
    // The bound degenerates at lambda in {0, 1}; clamp to the least resolvable
    // rate on a sample of size m + k.
    let lo = F::one() / n;
    let lambda = lambda.max(lo).min(F::one() - lo);
    let a = mf.max(kf);
    let var = lambda * (F::one() - lambda);
    let g = n / (mf * kf)
        * (n / (F::two() * F::PI() * mf * kf * var * eps_bar * eps_bar)).ln();
    let ag = a * g / n;
    let num = (F::one() - F::two() * lambda) * ag + (ag * ag + F::of(4.0) * var * g).sqrt();
    let den = F::two() + F::two() * a * ag / n;
    Ok(num / den)
}

/// Upper bound on the phase error rate: observed Z error plus the sampling
/// deviation, capped at 1/2.
pub fn phase_error_bound<F: Real>(e_z: F, gamma: F) -> F {
    (e_z + gamma).min(F::half())
}

#[derive(Clone, Debug)]
pub struct EstimationResult<F> {
    pub n_x: u64,
    pub n_z: Vec<u64>,
    pub e_x_total: F,
    pub e_x_pair: Vec<F>,
    pub e_z_pair: Vec<F>,
    /// Per-player phase error bound phi_bar_j.
    pub phi_bar: Vec<F>,
    pub epsilon_bar: F,
}

impl<F: Real> EstimationResult<F> {
    pub fn max_phi_bar(&self) -> F {
        self.phi_bar
            .iter()
            .cloned()
            .fold(F::zero(), F::max)
    }
}

/// Full estimation step: observed rates plus the per-player phase error
/// bounds, with the X block size as the untested population for each bound.
pub fn estimate<F: Real>(rounds: &RoundSet, epsilon_bar: F) -> Result<EstimationResult<F>> {
    let rates = compute_qbers(rounds)?;
    let n_x = rates.x_total.total;
    let mut n_z = Vec::with_capacity(rates.z_pair.len());
    let mut phi_bar = Vec::with_capacity(rates.z_pair.len());
    let mut e_z_pair = Vec::with_capacity(rates.z_pair.len());
    for rc in &rates.z_pair {
        let e_z: F = rc.rate();
        let g = gamma(e_z, epsilon_bar, n_x, rc.total)?;
        n_z.push(rc.total);
        e_z_pair.push(e_z);
        phi_bar.push(phase_error_bound(e_z, g));
    }
    Ok(EstimationResult {
        n_x,
        n_z,
        e_x_total: rates.x_total.rate(),
        e_x_pair: rates.x_pair.iter().map(RateCount::rate).collect(),
        e_z_pair,
        phi_bar,
        epsilon_bar,
    })
}
