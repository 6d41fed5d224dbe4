//! Finite-key length arithmetic, the closed-form yield model used for fast
//! parameter exploration, and privacy amplification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::detection::{ChannelParams, MeasBasis};
use crate::estimation::{gamma, phase_error_bound, xor_error_composition};
use crate::postmatch::frame_flip;
use crate::qmath::outcome_distribution;
use crate::scalar::Real;
use crate::source::SourceParams;
use crate::{Error, Result};

/// Binary entropy in bits; 0 outside the open unit interval.
pub fn binary_entropy<F: Real>(x: F) -> F {
    if x <= F::zero() || x >= F::one() {
        return F::zero();
    }
    let ln2 = F::two().ln();
    -(x * x.ln() + (F::one() - x) * (F::one() - x).ln()) / ln2
}

/// Security parameters of the finite-key bound.
#[derive(Clone, Copy, Debug)]
pub struct SecurityParams<F> {
    /// Correctness failure probability.
    pub eps_c: F,
    /// Smoothing/secrecy parameter entering the constant term squared.
    pub eps_prime: F,
    /// Failure probability of each sampling bound.
    pub eps_bar: F,
    /// Error-correction inefficiency.
    pub f_e: F,
    /// Extractable randomness per X round before corrections.
    pub q: F,
}

impl<F: Real> Default for SecurityParams<F> {
    fn default() -> Self {
        Self {
            eps_c: F::of(1e-10),
            eps_prime: F::of(1e-10),
            eps_bar: F::of(1e-10),
            f_e: F::of(1.16),
            q: F::one(),
        }
    }
}

impl<F: Real> SecurityParams<F> {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eps_c", self.eps_c),
            ("eps_prime", self.eps_prime),
            ("eps_bar", self.eps_bar),
        ] {
            if v <= F::zero() || v >= F::one() {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {v} outside (0, 1)"
                )));
            }
        }
        if self.f_e < F::one() {
            return Err(Error::InvalidParameter(format!("f_e = {}", self.f_e)));
        }
        if self.q <= F::zero() || self.q > F::one() {
            return Err(Error::InvalidParameter(format!("q = {}", self.q)));
        }
        Ok(())
    }

    /// The additive constant log2(1 / (4 eps_c eps_prime^2)).
    pub fn constant_term(&self) -> F {
        -(F::of(4.0) * self.eps_c * self.eps_prime * self.eps_prime).log2()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct KeyLength<F> {
    pub l_bits: u64,
    /// The value before flooring and clamping; negative when aborted.
    pub raw: F,
    pub aborted: bool,
}

/// Extractable key length in bits:
/// l = n_x (q - max_j h(phi_bar_j) - f_e h(e_x)) - log2(1/(4 eps_c eps'^2)),
/// floored and clamped at zero.
pub fn key_length<F: Real>(
    n_x: F,
    e_x: F,
    phi_bar: &[F],
    sec: &SecurityParams<F>,
) -> Result<KeyLength<F>> {
    sec.validate()?;
    if n_x < F::zero() || !n_x.is_finite() {
        return Err(Error::InvalidParameter(format!("n_x = {n_x}")));
    }
    if e_x < F::zero() || e_x > F::one() {
        return Err(Error::InvalidParameter(format!("e_x = {e_x}")));
    }
    if phi_bar.is_empty() {
        return Err(Error::InvalidParameter("no phase error bounds".into()));
    }
    let mut worst = F::zero();
    for &p in phi_bar {
        if p < F::zero() || p > F::one() {
            return Err(Error::InvalidParameter(format!("phi_bar = {p}")));
        }
        worst = worst.max(p);
    }
    let raw = n_x * (sec.q - binary_entropy(worst) - sec.f_e * binary_entropy(e_x))
        - sec.constant_term();
    let l_bits = if raw > F::zero() {
        raw.floor().to_f64().expect("finite key length") as u64
    } else {
        0
    };
    Ok(KeyLength {
        l_bits,
        raw,
        aborted: l_bits == 0,
    })
}

/// Per-run report, also the row format of the batch CSV output.
#[derive(Clone, Debug)]
pub struct KeyReport<F> {
    pub loss_db: F,
    pub p_x: F,
    pub n_pulses: F,
    pub n_x: F,
    pub e_x: F,
    pub max_phi_bar: F,
    pub l_bits: u64,
    pub rate_per_pulse: F,
    pub rate_bps: F,
    pub aborted: bool,
}

impl<F: Real> KeyReport<F> {
    pub fn csv_header() -> &'static str {
        "loss_db,p_x,N,n_x,E_X,max_phi_bar,l_bits,rate_per_pulse,rate_bps,aborted"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.loss_db,
            self.p_x,
            self.n_pulses,
            self.n_x,
            self.e_x,
            self.max_phi_bar,
            self.l_bits,
            self.rate_per_pulse,
            self.rate_bps,
            self.aborted as u8
        )
    }
}

/// Key length and throughput from block statistics.
pub fn key_rates<F: Real>(
    length: &KeyLength<F>,
    n_pulses: F,
    rep_rate_hz: F,
) -> (F, F) {
    let per_pulse = F::of(length.l_bits as f64) / n_pulses;
    (per_pulse, per_pulse * rep_rate_hz)
}

/// Per-session intermediates of the closed-form model.
#[derive(Clone, Debug)]
pub struct AnalyticDetail<F> {
    /// Coincidence yield per pulse of each session.
    pub yield_per_pulse: Vec<F>,
    pub e_x_pair: Vec<F>,
    pub e_z_pair: Vec<F>,
    pub n_x: F,
    pub n_z: Vec<F>,
    pub e_x_total: F,
    pub phi_bar: Vec<F>,
    pub report: KeyReport<F>,
}

/// Intrinsic error rate of the emitted state measured in `basis` on both
/// arms, in the corrected frame of the session's reference Bell state.
fn state_error_rate<F: Real>(source: &SourceParams<F>, basis: MeasBasis) -> Result<F> {
    let rho = source.effective_state()?;
    let pol = basis.polarization();
    let p = outcome_distribution(&rho, &[pol, pol])?;
    let equal = p[0] + p[3];
    let diff = p[1] + p[2];
    Ok(if frame_flip(source.base_state, basis) {
        equal
    } else {
        diff
    })
}

/// Compose a state error with an independent misalignment/flip probability.
fn compose_flip<F: Real>(e: F, e_d: F) -> F {
    e + e_d - F::two() * e * e_d
}

/// Closed-form expected performance of a run: Poissonian coincidence yields
/// (signal, multi-pair and dark-count accidentals), pairwise error rates,
/// XOR-composed multiparty X error, phase bounds and key length.
///
/// `e_d_x` / `e_d_z` are intrinsic basis misalignment probabilities applied
/// on top of the emitted state.
pub fn analytic_model<F: Real>(
    sources: &[SourceParams<F>],
    channels: &[ChannelParams<F>],
    n_pulses: F,
    e_d_x: F,
    e_d_z: F,
    sec: &SecurityParams<F>,
) -> Result<AnalyticDetail<F>> {
    if sources.is_empty() || sources.len() != channels.len() {
        return Err(Error::LengthMismatch(format!(
            "{} sources vs {} channels",
            sources.len(),
            channels.len()
        )));
    }
    sec.validate()?;
    for (name, v) in [("e_d_x", e_d_x), ("e_d_z", e_d_z)] {
        if v < F::zero() || v > F::half() {
            return Err(Error::InvalidParameter(format!("{name} = {v} outside [0, 1/2]")));
        }
    }
    let p_x = channels[0].p_x;
    let half = F::half();
    let four = F::of(4.0);

    let mut yields = Vec::with_capacity(sources.len());
    let mut exs = Vec::with_capacity(sources.len());
    let mut ezs = Vec::with_capacity(sources.len());
    for (source, channel) in sources.iter().zip(channels) {
        channel.validate()?;
        source.validate()?;
        let mu = source.mu;
        let t_a = channel.dealer.transmission() * channel.dealer.mean_efficiency();
        let t_b = channel.player.transmission() * channel.player.mean_efficiency();
        let pd_a = channel.dealer.mean_dark_prob();
        let pd_b = channel.player.mean_dark_prob();
        let sig = mu * t_a * t_b;
        let acc = mu * mu * t_a * t_b
            + four * pd_a * mu * t_b
            + four * pd_b * mu * t_a
            + F::of(16.0) * pd_a * pd_b;
        let q = sig + acc;
        if q <= F::zero() {
            return Err(Error::InvalidParameter(
                "session has zero coincidence yield".into(),
            ));
        }
        let ex_sig = compose_flip(state_error_rate(source, MeasBasis::X)?, e_d_x);
        let ez_sig = compose_flip(state_error_rate(source, MeasBasis::Z)?, e_d_z);
        yields.push(q);
        exs.push((ex_sig * sig + acc * half) / q);
        ezs.push((ez_sig * sig + acc * half) / q);
    }

    // The X block is postmatched, so the slowest session limits it; Z rounds
    // are pairwise and accrue at each session's own yield.
    let min_q = yields.iter().cloned().fold(F::infinity(), F::min);
    let n_x = n_pulses * p_x * p_x * min_q;
    let e_x_total = xor_error_composition(&exs)?;
    let mut n_z = Vec::with_capacity(yields.len());
    let mut phi_bar = Vec::with_capacity(yields.len());
    for (q, &ez) in yields.iter().zip(&ezs) {
        let nz = n_pulses * (F::one() - p_x) * (F::one() - p_x) * *q;
        n_z.push(nz);
        let g = gamma(
            ez,
            sec.eps_bar,
            n_x.to_f64().expect("finite") as u64,
            nz.to_f64().expect("finite") as u64,
        )?;
        phi_bar.push(phase_error_bound(ez, g));
    }
    let length = key_length(n_x, e_x_total, &phi_bar, sec)?;
    let (rate_per_pulse, rate_bps) = key_rates(&length, n_pulses, channels[0].rep_rate_hz);
    let report = KeyReport {
        loss_db: channels[0].dealer.loss_db,
        p_x,
        n_pulses,
        n_x,
        e_x: e_x_total,
        max_phi_bar: phi_bar.iter().cloned().fold(F::zero(), F::max),
        l_bits: length.l_bits,
        rate_per_pulse,
        rate_bps,
        aborted: length.aborted,
    };
    Ok(AnalyticDetail {
        yield_per_pulse: yields,
        e_x_pair: exs,
        e_z_pair: ezs,
        n_x,
        n_z,
        e_x_total,
        phi_bar,
        report,
    })
}

/// Privacy amplification: compress `raw_bits` to `l_bits` with a seeded
/// Toeplitz-family hash, `out[i] = parity(sum_j d[i + j] raw[j])` where `d`
/// is a pseudorandom bit string derived from `seed`.
pub fn extract_final_key(raw_bits: &[bool], l_bits: usize, seed: u64) -> Result<Vec<bool>> {
    let n = raw_bits.len();
    if l_bits > n {
        return Err(Error::InvalidParameter(format!(
            "cannot extract {l_bits} bits from {n} raw bits"
        )));
    }
    if l_bits == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let diag_len = n + l_bits - 1;
    let mut diag = vec![0u64; diag_len.div_ceil(64)];
    for word in &mut diag {
        *word = rng.random();
    }
    let mut raw = vec![0u64; n.div_ceil(64)];
    for (j, &b) in raw_bits.iter().enumerate() {
        if b {
            raw[j / 64] |= 1 << (j % 64);
        }
    }
    // Row i of the hash is the window d[i .. i + n]; extract it word by word
    // and accumulate the parity of its AND with the raw key.
    let mut out = Vec::with_capacity(l_bits);
    for i in 0..l_bits {
        let mut parity = 0u32;
        for (w, &raw_word) in raw.iter().enumerate() {
            if raw_word == 0 {
                continue;
            }
            let start = i + w * 64;
            let lo_word = start / 64;
            let shift = start % 64;
            let mut window = diag[lo_word] >> shift;
            if shift != 0 && lo_word + 1 < diag.len() {
                window |= diag[lo_word + 1] << (64 - shift);
            }
            let valid = n - w * 64;
            if valid < 64 {
                window &= (1u64 << valid) - 1;
            }
            parity ^= (window & raw_word).count_ones() & 1;
        }
        out.push(parity & 1 == 1);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::StationParams;
    use crate::qmath::BellKind;

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.0f64), 0.0);
        assert_eq!(binary_entropy(1.0f64), 0.0);
        assert!((binary_entropy(0.5f64) - 1.0).abs() < 1e-15);
        assert!((binary_entropy(0.3f64) - binary_entropy(0.7f64)).abs() < 1e-15);
        // h(1/4) = 2 - (3/4) log2(3).
        let want = 2.0 - 0.75 * 3.0f64.log2();
        assert!((binary_entropy(0.25f64) - want).abs() < 1e-14);
    }

    #[test]
    fn constant_term_value() {
        let sec = SecurityParams::<f64>::default();
        assert!((sec.constant_term() - 97.6578428466209).abs() < 1e-10);
    }

    #[test]
    fn key_length_reference_values() {
        // Cross-checked with a 50-digit arbitrary-precision evaluation.
        let sec = SecurityParams::<f64>::default();
        let kl = key_length(1e6, 0.0, &[0.0], &sec).unwrap();
        assert_eq!(kl.l_bits, 999_902);
        assert!(!kl.aborted);
        let kl = key_length(1e6, 0.035, &[0.027], &sec).unwrap();
        assert_eq!(kl.l_bits, 566_887);
    }

    #[test]
    fn key_length_aborts_on_high_error() {
        let sec = SecurityParams::<f64>::default();
        let kl = key_length(1e4, 0.35, &[0.45], &sec).unwrap();
        assert_eq!(kl.l_bits, 0);
        assert!(kl.aborted);
        assert!(kl.raw < 0.0);
    }

    #[test]
    fn key_length_input_validation() {
        let sec = SecurityParams::<f64>::default();
        assert!(key_length(-1.0, 0.0, &[0.0], &sec).is_err());
        assert!(key_length(1e6, 1.5, &[0.0], &sec).is_err());
        assert!(key_length(1e6, 0.0, &[], &sec).is_err());
        let bad = SecurityParams {
            eps_c: 0.0,
            ..SecurityParams::<f64>::default()
        };
        assert!(key_length(1e6, 0.0, &[0.0], &bad).is_err());
    }

    fn table_setup(mu: [f64; 2], loss_db: f64, p_x: f64) -> (Vec<SourceParams<f64>>, Vec<ChannelParams<f64>>) {
        let sources = mu
            .iter()
            .map(|&m| SourceParams::ideal(m, BellKind::PsiMinus))
            .collect();
        let channels = (0..2)
            .map(|_| ChannelParams {
                dealer: StationParams::uniform(loss_db, 0.83, 1.3e-7),
                player: StationParams::uniform(loss_db, 0.83, 1.3e-7),
                p_x,
                rep_rate_hz: 96.7e6,
                window_ns: 5.16,
            })
            .collect();
        (sources, channels)
    }

    #[test]
    fn analytic_yield_closed_form() {
        let (sources, channels) = table_setup([0.023, 0.021], 7.6, 0.9);
        let sec = SecurityParams::default();
        let d = analytic_model(&sources, &channels, 1e11, 0.01, 0.01, &sec).unwrap();
        // Q = mu t^2 (1 + mu) + 8 pd mu t + 16 pd^2 with t = 10^-0.76 * 0.83.
        let t = 10f64.powf(-0.76) * 0.83;
        let pd = 1.3e-7;
        let q0 = 0.023 * t * t * 1.023 + 8.0 * pd * 0.023 * t + 16.0 * pd * pd;
        assert!((d.yield_per_pulse[0] - q0).abs() / q0 < 1e-12);
        // X block limited by the weaker source.
        assert!((d.n_x - 1e11 * 0.81 * d.yield_per_pulse[1]).abs() / d.n_x < 1e-12);
        // Pairwise errors feed the XOR composition.
        let expect = xor_error_composition(&d.e_x_pair).unwrap();
        assert!((d.e_x_total - expect).abs() < 1e-15);
        assert!(d.report.l_bits > 0 && !d.report.aborted);
        assert!((d.report.rate_per_pulse - d.report.l_bits as f64 / 1e11).abs() < 1e-18);
    }

    #[test]
    fn analytic_rate_decreases_with_loss() {
        let sec = SecurityParams::default();
        let mut last = f64::INFINITY;
        for loss in [7.6, 10.9, 12.9] {
            let (sources, channels) = table_setup([0.023, 0.021], loss, 0.9);
            let d = analytic_model(&sources, &channels, 1e11, 0.01, 0.01, &sec).unwrap();
            assert!(d.report.rate_per_pulse < last);
            last = d.report.rate_per_pulse;
        }
    }

    #[test]
    fn analytic_state_error_includes_rotation() {
        // A rotated source adds sin^2(theta) to both bases of a psi- link.
        let theta = 0.12f64;
        let mut sources = vec![SourceParams::ideal(0.01, BellKind::PsiMinus); 2];
        sources[0].rotation_theta = theta;
        let channels = table_setup([0.01, 0.01], 0.0, 0.5).1;
        let sec = SecurityParams::default();
        let d = analytic_model(&sources, &channels, 1e9, 0.0, 0.0, &sec).unwrap();
        let s2 = theta.sin().powi(2);
        // Signal errors diluted by the multi-pair accidental floor.
        assert!(d.e_x_pair[0] > 0.9 * s2 && d.e_x_pair[0] < s2 + 0.01);
        assert!(d.e_x_pair[1] < 0.01);
        assert!((d.e_x_pair[0] - d.e_z_pair[0]).abs() < 1e-3);
    }

    fn naive_toeplitz(raw: &[bool], l: usize, seed: u64) -> Vec<bool> {
        use rand::SeedableRng;
        let n = raw.len();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let diag_len = n + l - 1;
        let mut words = vec![0u64; diag_len.div_ceil(64)];
        for w in &mut words {
            *w = rng.random();
        }
        let d: Vec<bool> = (0..diag_len)
            .map(|i| (words[i / 64] >> (i % 64)) & 1 == 1)
            .collect();
        (0..l)
            .map(|i| {
                raw.iter()
                    .enumerate()
                    .fold(false, |acc, (j, &b)| acc ^ (b && d[i + j]))
            })
            .collect()
    }

    #[test]
    fn toeplitz_matches_naive_reference() {
        use rand::SeedableRng;
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for (n, l) in [(1, 1), (64, 10), (65, 64), (200, 130), (513, 400)] {
            let raw: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            let fast = extract_final_key(&raw, l, 7).unwrap();
            let slow = naive_toeplitz(&raw, l, 7);
            assert_eq!(fast, slow, "n={n} l={l}");
        }
    }

    #[test]
    fn toeplitz_determinism_and_bounds() {
        let raw: Vec<bool> = (0..300).map(|i| i % 3 == 0).collect();
        let a = extract_final_key(&raw, 100, 5).unwrap();
        let b = extract_final_key(&raw, 100, 5).unwrap();
        assert_eq!(a, b);
        let c = extract_final_key(&raw, 100, 6).unwrap();
        assert_ne!(a, c);
        assert!(extract_final_key(&raw, 301, 5).is_err());
        assert!(extract_final_key(&raw, 0, 5).unwrap().is_empty());
    }
}
