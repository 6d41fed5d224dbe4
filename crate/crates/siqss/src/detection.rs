//! Per-pulse stochastic detection for one dealer-module/player pair:
//! channel loss, passive basis choice, projective outcomes, detector
//! efficiency, dark counts, and coincidence identification.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::qmath::{outcome_distribution, Basis, DensityMatrix};
use crate::scalar::{Real, SampleReal};
use crate::source::SourceParams;
use crate::{Error, Result};

/// Measurement basis used by the protocol. Following the experimental
/// convention, `X` is the rectilinear basis and `Z` the diagonal one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MeasBasis {
    X,
    Z,
}

impl MeasBasis {
    pub fn polarization(self) -> Basis {
        match self {
            MeasBasis::X => Basis::Rectilinear,
            MeasBasis::Z => Basis::Diagonal,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MeasBasis::X => "X",
            MeasBasis::Z => "Z",
        }
    }
}

impl std::str::FromStr for MeasBasis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "X" => Ok(MeasBasis::X),
            "Z" => Ok(MeasBasis::Z),
            other => Err(Error::InvalidParameter(format!("unknown basis {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StationKind {
    Dealer,
    Player,
}

/// A measurement station: dealer module j is `A{j}`, player j is `B{j}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Station {
    pub kind: StationKind,
    pub index: usize,
}

impl Station {
    pub fn dealer(index: usize) -> Self {
        Self {
            kind: StationKind::Dealer,
            index,
        }
    }

    pub fn player(index: usize) -> Self {
        Self {
            kind: StationKind::Player,
            index,
        }
    }
}

impl fmt::Display for Station {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let letter = match self.kind {
            StationKind::Dealer => 'A',
            StationKind::Player => 'B',
        };
        write!(f, "{letter}{}", self.index)
    }
}

impl std::str::FromStr for Station {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.chars();
        let kind = match chars.next() {
            Some('A') => StationKind::Dealer,
            Some('B') => StationKind::Player,
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "unknown station {s:?} (expected A<j> or B<j>)"
                )))
            }
        };
        let index: usize = chars
            .as_str()
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("unknown station {s:?}")))?;
        Ok(Station { kind, index })
    }
}

/// One of the four detector channels of a station, indexed by
/// `basis * 2 + bit` (X0, X1, Z0, Z1).
#[derive(Clone, Copy, Debug)]
pub struct DetectorChannel<F> {
    /// Detection efficiency in [0, 1].
    pub efficiency: F,
    /// Dark-count probability per pulse.
    pub dark_prob: F,
}

#[derive(Clone, Debug)]
pub struct StationParams<F> {
    /// Channel attenuation from source to coupler, in dB.
    pub loss_db: F,
    pub channels: [DetectorChannel<F>; 4],
}

impl<F: Real> StationParams<F> {
    /// All four channels share one efficiency and dark-count probability.
    pub fn uniform(loss_db: F, efficiency: F, dark_prob: F) -> Self {
        Self {
            loss_db,
            channels: [DetectorChannel {
                efficiency,
                dark_prob,
            }; 4],
        }
    }

    /// Channel transmission 10^(-loss/10), before detector efficiency.
    pub fn transmission(&self) -> F {
        F::of(10.0).powf(-self.loss_db / F::of(10.0))
    }

    pub fn mean_efficiency(&self) -> F {
        self.channels
            .iter()
            .map(|c| c.efficiency)
            .fold(F::zero(), |a, b| a + b)
            / F::of(4.0)
    }

    pub fn mean_dark_prob(&self) -> F {
        self.channels
            .iter()
            .map(|c| c.dark_prob)
            .fold(F::zero(), |a, b| a + b)
            / F::of(4.0)
    }

    fn validate(&self) -> Result<()> {
        if self.loss_db < F::zero() {
            return Err(Error::InvalidParameter(format!("loss_db = {}", self.loss_db)));
        }
        for ch in &self.channels {
            for (name, v) in [("eta_d", ch.efficiency), ("p_d", ch.dark_prob)] {
                if v < F::zero() || v > F::one() {
                    return Err(Error::InvalidParameter(format!("{name} = {v} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }
}

/// Detection parameters for one dealer-module/player session.
#[derive(Clone, Debug)]
pub struct ChannelParams<F> {
    pub dealer: StationParams<F>,
    pub player: StationParams<F>,
    /// Probability of the passive beam splitter selecting the X basis.
    pub p_x: F,
    pub rep_rate_hz: F,
    pub window_ns: F,
}

impl<F: Real> ChannelParams<F> {
    pub fn validate(&self) -> Result<()> {
        self.dealer.validate()?;
        self.player.validate()?;
        if self.p_x < F::zero() || self.p_x > F::one() {
            return Err(Error::InvalidParameter(format!("p_x = {}", self.p_x)));
        }
        if self.rep_rate_hz <= F::zero() {
            return Err(Error::InvalidParameter(format!(
                "rep_rate_hz = {}",
                self.rep_rate_hz
            )));
        }
        if self.window_ns <= F::zero() {
            return Err(Error::InvalidParameter(format!("window_ns = {}", self.window_ns)));
        }
        Ok(())
    }

    pub fn pulse_period_ns(&self) -> f64 {
        1e9 / self.rep_rate_hz.to_f64().expect("finite rep rate")
    }
}

/// One detector click after collapsing a pulse.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionEvent {
    pub pulse_index: u64,
    pub timestamp_ns: f64,
    pub station: Station,
    pub basis: MeasBasis,
    pub bit: bool,
}

/// A same-basis dealer-player coincidence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatchedPair {
    pub pulse_index: u64,
    pub basis: MeasBasis,
    pub dealer_bit: bool,
    pub player_bit: bool,
    pub player_id: usize,
}

/// Cached joint-outcome distributions for the four basis combinations,
/// stored as cumulative tables for sampling.
pub struct OutcomeSampler<F> {
    cumulative: [[F; 4]; 4],
}

impl<F: SampleReal> OutcomeSampler<F> {
    pub fn new(state: &DensityMatrix<F>) -> Result<Self> {
        if state.dim() != 4 {
            return Err(Error::Dimension(format!(
                "pair state must be two qubits, got dim {}",
                state.dim()
            )));
        }
        let mut cumulative = [[F::zero(); 4]; 4];
        for (bi, bd) in [MeasBasis::X, MeasBasis::Z].into_iter().enumerate() {
            for (bj, bp) in [MeasBasis::X, MeasBasis::Z].into_iter().enumerate() {
                let probs =
                    outcome_distribution(state, &[bd.polarization(), bp.polarization()])?;
                let mut acc = F::zero();
                for k in 0..4 {
                    acc = acc + probs[k];
                    cumulative[bi * 2 + bj][k] = acc;
                }
                cumulative[bi * 2 + bj][3] = F::one();
            }
        }
        Ok(Self { cumulative })
    }

    /// Sample (dealer_bit, player_bit) for one pair.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        dealer_basis: MeasBasis,
        player_basis: MeasBasis,
        rng: &mut R,
    ) -> (bool, bool) {
        let row = ((dealer_basis == MeasBasis::Z) as usize) * 2
            + (player_basis == MeasBasis::Z) as usize;
        let u = F::sample_unit(rng);
        let table = &self.cumulative[row];
        let mut k = 0;
        while k < 3 && u >= table[k] {
            k += 1;
        }
        ((k & 2) != 0, (k & 1) != 0)
    }
}

fn channel_index(basis: MeasBasis, bit: bool) -> usize {
    ((basis == MeasBasis::Z) as usize) * 2 + bit as usize
}

fn basis_of_channel(ch: usize) -> MeasBasis {
    if ch & 2 == 0 {
        MeasBasis::X
    } else {
        MeasBasis::Z
    }
}

/// Collapse the set of clicked channels (bitmask over the 4 channels) into at
/// most one event. Double clicks yield a uniformly random bit in the
/// registered basis; if both bases registered, the basis is picked uniformly.
fn collapse_clicks<F: SampleReal, R: Rng + ?Sized>(
    mask: u8,
    rng: &mut R,
) -> Option<(MeasBasis, bool)> {
    match mask.count_ones() {
        0 => None,
        1 => {
            let ch = mask.trailing_zeros() as usize;
            Some((basis_of_channel(ch), ch & 1 == 1))
        }
        _ => {
            let has_x = mask & 0b0011 != 0;
            let has_z = mask & 0b1100 != 0;
            let basis = match (has_x, has_z) {
                (true, false) => MeasBasis::X,
                (false, true) => MeasBasis::Z,
                _ => {
                    if F::sample_unit(rng) < F::half() {
                        MeasBasis::X
                    } else {
                        MeasBasis::Z
                    }
                }
            };
            Some((basis, F::sample_unit(rng) < F::half()))
        }
    }
}

struct PulseCore<'a, F> {
    sampler: &'a OutcomeSampler<F>,
    params: &'a ChannelParams<F>,
    session: usize,
}

impl<'a, F: SampleReal> PulseCore<'a, F> {
    /// Realize one pulse given the pair count and pre-drawn dark-click masks.
    fn realize<R: Rng + ?Sized>(
        &self,
        pulse_index: u64,
        pair_count: u64,
        dealer_darks: u8,
        player_darks: u8,
        rng: &mut R,
        out: &mut Vec<DetectionEvent>,
    ) -> (bool, bool) {
        let p_x = self.params.p_x;
        let mut dealer_mask = dealer_darks;
        let mut player_mask = player_darks;
        let mut dealer_basis = None;
        let mut player_basis = None;
        if pair_count > 0 {
            // Passive basis choice: one per station per pulse.
            let bd = if F::sample_unit(rng) < p_x {
                MeasBasis::X
            } else {
                MeasBasis::Z
            };
            let bp = if F::sample_unit(rng) < p_x {
                MeasBasis::X
            } else {
                MeasBasis::Z
            };
            dealer_basis = Some(bd);
            player_basis = Some(bp);
            let t_dealer = self.params.dealer.transmission();
            let t_player = self.params.player.transmission();
            for _ in 0..pair_count {
                let (a, b) = self.sampler.sample(bd, bp, rng);
                let ch_d = channel_index(bd, a);
                let surv_d = t_dealer * self.params.dealer.channels[ch_d].efficiency;
                if F::sample_unit(rng) < surv_d {
                    dealer_mask |= 1 << ch_d;
                }
                let ch_p = channel_index(bp, b);
                let surv_p = t_player * self.params.player.channels[ch_p].efficiency;
                if F::sample_unit(rng) < surv_p {
                    player_mask |= 1 << ch_p;
                }
            }
        }
        let timestamp_ns = pulse_index as f64 * self.params.pulse_period_ns();
        let emit = |mask: u8, station: Station, out: &mut Vec<DetectionEvent>, rng: &mut R| {
            if let Some((basis, bit)) = collapse_clicks::<F, R>(mask, rng) {
                out.push(DetectionEvent {
                    pulse_index,
                    timestamp_ns,
                    station,
                    basis,
                    bit,
                });
                true
            } else {
                false
            }
        };
        let d = emit(dealer_mask, Station::dealer(self.session), out, rng);
        let p = emit(player_mask, Station::player(self.session), out, rng);
        let _ = (dealer_basis, player_basis);
        (d, p)
    }
}

/// Simulate one pulse of a dealer-module/player session. Dark counts are
/// drawn per detector channel; emitted events are ordered dealer first.
pub fn simulate_pulse<F: SampleReal, R: Rng + ?Sized>(
    state: &DensityMatrix<F>,
    pair_count: u64,
    pulse_index: u64,
    params: &ChannelParams<F>,
    session: usize,
    rng: &mut R,
) -> Result<Vec<DetectionEvent>> {
    params.validate()?;
    let sampler = OutcomeSampler::new(state)?;
    let core = PulseCore {
        sampler: &sampler,
        params,
        session,
    };
    let mut out = Vec::new();
    let dealer_darks = sample_dark_mask::<F, R>(&params.dealer, rng);
    let player_darks = sample_dark_mask::<F, R>(&params.player, rng);
    core.realize(pulse_index, pair_count, dealer_darks, player_darks, rng, &mut out);
    Ok(out)
}

fn sample_dark_mask<F: SampleReal, R: Rng + ?Sized>(
    station: &StationParams<F>,
    rng: &mut R,
) -> u8 {
    let mut mask = 0u8;
    for (ch, c) in station.channels.iter().enumerate() {
        if c.dark_prob > F::zero() && F::sample_unit(rng) < c.dark_prob {
            mask |= 1 << ch;
        }
    }
    mask
}

/// Skip-ahead sampling of the next success index for a Bernoulli(p) process.
/// Returns the offset (>= 0) from the current position to the next success.
fn geometric_skip<F: SampleReal, R: Rng + ?Sized>(p: F, rng: &mut R) -> u64 {
    debug_assert!(p > F::zero() && p <= F::one());
    if p >= F::one() {
        return 0;
    }
    let u = F::sample_unit(rng).max(F::of(1e-300));
    let skip = (u.ln() / (F::one() - p).ln()).floor();
    skip.to_f64().map(|s| s as u64).unwrap_or(u64::MAX)
}

/// Truncated Poisson draw conditioned on k >= 1, by inversion.
fn truncated_poisson<F: SampleReal, R: Rng + ?Sized>(mu: F, rng: &mut R) -> u64 {
    let u = F::sample_unit(rng);
    let p_ge1 = F::one() - (-mu).exp();
    let mut target = u * p_ge1;
    let mut k = 1u64;
    let mut pmf = mu * (-mu).exp(); // P(k = 1)
    loop {
        if target < pmf || k >= 64 {
            return k;
        }
        target = target - pmf;
        k += 1;
        pmf = pmf * mu / F::of(k as f64);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Activity {
    Emission(u64),
    Dark { dealer: bool, channel: u8 },
}

/// Simulate a full session of `n_pulses` pulses starting at `first_pulse`,
/// returning time-sorted dealer and player event lists.
///
/// Pulses where nothing can happen (no pair emitted, no dark count) are
/// skipped analytically, so the cost scales with the number of active pulses
/// rather than with `n_pulses`.
pub fn simulate_session<F: SampleReal, R: Rng + ?Sized>(
    source: &SourceParams<F>,
    params: &ChannelParams<F>,
    n_pulses: u64,
    first_pulse: u64,
    session: usize,
    rng: &mut R,
) -> Result<(Vec<DetectionEvent>, Vec<DetectionEvent>)> {
    params.validate()?;
    let state = source.effective_state()?;
    let sampler = OutcomeSampler::new(&state)?;
    let core = PulseCore {
        sampler: &sampler,
        params,
        session,
    };

    let mut activities: Vec<(u64, Activity)> = Vec::new();
    let p_emit = F::one() - (-source.mu).exp();
    if p_emit > F::zero() {
        let mut pulse = geometric_skip(p_emit, rng);
        while pulse < n_pulses {
            let k = truncated_poisson(source.mu, rng);
            activities.push((pulse, Activity::Emission(k)));
            pulse += 1 + geometric_skip(p_emit, rng);
        }
    }
    for (is_dealer, station) in [(true, &params.dealer), (false, &params.player)] {
        for (ch, c) in station.channels.iter().enumerate() {
            if c.dark_prob <= F::zero() {
                continue;
            }
            let mut pulse = geometric_skip(c.dark_prob, rng);
            while pulse < n_pulses {
                activities.push((
                    pulse,
                    Activity::Dark {
                        dealer: is_dealer,
                        channel: ch as u8,
                    },
                ));
                pulse += 1 + geometric_skip(c.dark_prob, rng);
            }
        }
    }
    activities.sort_unstable();

    let mut dealer_events = Vec::new();
    let mut player_events = Vec::new();
    let mut scratch = Vec::with_capacity(2);
    let mut i = 0;
    while i < activities.len() {
        let pulse = activities[i].0;
        let mut pair_count = 0u64;
        let mut dealer_darks = 0u8;
        let mut player_darks = 0u8;
        while i < activities.len() && activities[i].0 == pulse {
            match activities[i].1 {
                Activity::Emission(k) => pair_count += k,
                Activity::Dark { dealer, channel } => {
                    if dealer {
                        dealer_darks |= 1 << channel;
                    } else {
                        player_darks |= 1 << channel;
                    }
                }
            }
            i += 1;
        }
        scratch.clear();
        core.realize(
            first_pulse + pulse,
            pair_count,
            dealer_darks,
            player_darks,
            rng,
            &mut scratch,
        );
        for ev in &scratch {
            match ev.station.kind {
                StationKind::Dealer => dealer_events.push(*ev),
                StationKind::Player => player_events.push(*ev),
            }
        }
    }
    Ok((dealer_events, player_events))
}

/// Simulate a session with a fixed pair count per pulse (no Poisson
/// statistics). Used for noiseless pipeline checks where exact correlations
/// must hold.
pub fn simulate_fixed_pairs<F: SampleReal, R: Rng + ?Sized>(
    state: &DensityMatrix<F>,
    params: &ChannelParams<F>,
    n_pulses: u64,
    pairs_per_pulse: u64,
    session: usize,
    rng: &mut R,
) -> Result<(Vec<DetectionEvent>, Vec<DetectionEvent>)> {
    params.validate()?;
    let sampler = OutcomeSampler::new(state)?;
    let core = PulseCore {
        sampler: &sampler,
        params,
        session,
    };
    let mut dealer_events = Vec::new();
    let mut player_events = Vec::new();
    let mut scratch = Vec::with_capacity(2);
    for pulse in 0..n_pulses {
        let dealer_darks = sample_dark_mask::<F, R>(&params.dealer, rng);
        let player_darks = sample_dark_mask::<F, R>(&params.player, rng);
        scratch.clear();
        core.realize(pulse, pairs_per_pulse, dealer_darks, player_darks, rng, &mut scratch);
        for ev in &scratch {
            match ev.station.kind {
                StationKind::Dealer => dealer_events.push(*ev),
                StationKind::Player => player_events.push(*ev),
            }
        }
    }
    Ok((dealer_events, player_events))
}

/// Result of coincidence matching: retained same-basis pairs plus the count
/// of coincidences discarded for basis mismatch.
#[derive(Clone, Debug, Default)]
pub struct CoincidenceResult {
    pub pairs: Vec<MatchedPair>,
    pub basis_mismatches: u64,
}

/// Greedy first-fit pairing of time-sorted dealer and player events within
/// the coincidence window. Each event is used at most once; same-basis
/// coincidences become `MatchedPair`s, different-basis ones are counted and
/// discarded.
pub fn match_coincidences(
    dealer_events: &[DetectionEvent],
    player_events: &[DetectionEvent],
    window_ns: f64,
    player_id: usize,
) -> Result<CoincidenceResult> {
    for events in [dealer_events, player_events] {
        if events
            .windows(2)
            .any(|w| w[0].timestamp_ns > w[1].timestamp_ns)
        {
            return Err(Error::UnsortedEvents);
        }
    }
    let mut result = CoincidenceResult::default();
    let mut i = 0;
    let mut j = 0;
    while i < dealer_events.len() && j < player_events.len() {
        let d = &dealer_events[i];
        let p = &player_events[j];
        let dt = d.timestamp_ns - p.timestamp_ns;
        if dt.abs() <= window_ns {
            if d.basis == p.basis {
                result.pairs.push(MatchedPair {
                    pulse_index: d.pulse_index,
                    basis: d.basis,
                    dealer_bit: d.bit,
                    player_bit: p.bit,
                    player_id,
                });
            } else {
                result.basis_mismatches += 1;
            }
            i += 1;
            j += 1;
        } else if dt < 0.0 {
            i += 1;
        } else {
            j += 1;
        }
    }
    Ok(result)
}

pub const EVENT_CSV_HEADER: &str = "pulse_index,timestamp_ns,station,basis,bit";

pub fn write_events_csv<W: Write>(writer: &mut W, events: &[DetectionEvent]) -> Result<()> {
    writeln!(writer, "{EVENT_CSV_HEADER}")?;
    for ev in events {
        writeln!(
            writer,
            "{},{},{},{},{}",
            ev.pulse_index,
            ev.timestamp_ns,
            ev.station,
            ev.basis.label(),
            ev.bit as u8
        )?;
    }
    Ok(())
}

pub fn read_events_csv(path: &Path) -> Result<Vec<DetectionEvent>> {
    let text = std::fs::read_to_string(path)?;
    parse_events_csv(&text, &path.display().to_string())
}

pub fn parse_events_csv(text: &str, origin: &str) -> Result<Vec<DetectionEvent>> {
    let mut events = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("pulse_index")) {
            continue;
        }
        let parse = |message: String| Error::Parse {
            path: origin.to_string(),
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(parse(format!("expected 5 fields, got {}", fields.len())));
        }
        let pulse_index: u64 = fields[0]
            .parse()
            .map_err(|_| parse(format!("invalid pulse index {:?}", fields[0])))?;
        let timestamp_ns: f64 = fields[1]
            .parse()
            .map_err(|_| parse(format!("invalid timestamp {:?}", fields[1])))?;
        let station: Station = fields[2].parse().map_err(|e| parse(format!("{e}")))?;
        let basis: MeasBasis = fields[3].parse().map_err(|e| parse(format!("{e}")))?;
        let bit = match fields[4] {
            "0" => false,
            "1" => true,
            other => return Err(parse(format!("invalid bit {other:?}"))),
        };
        events.push(DetectionEvent {
            pulse_index,
            timestamp_ns,
            station,
            basis,
            bit,
        });
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmath::{bell_state, BellKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn lossless_params(p_x: f64) -> ChannelParams<f64> {
        ChannelParams {
            dealer: StationParams::uniform(0.0, 1.0, 0.0),
            player: StationParams::uniform(0.0, 1.0, 0.0),
            p_x,
            rep_rate_hz: 96.7e6,
            window_ns: 5.16,
        }
    }

    fn psi_minus_density() -> DensityMatrix<f64> {
        bell_state::<f64>(BellKind::PsiMinus).to_density()
    }

    #[test]
    fn empty_pulse_produces_no_events() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let state = psi_minus_density();
        let events =
            simulate_pulse(&state, 0, 0, &lossless_params(0.5), 1, &mut rng).unwrap();
        assert!(events.is_empty());
    }

    #[test]
    fn lossless_single_pair_is_anticorrelated() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let state = psi_minus_density();
        let params = lossless_params(0.5);
        for pulse in 0..500u64 {
            let events = simulate_pulse(&state, 1, pulse, &params, 1, &mut rng).unwrap();
            assert_eq!(events.len(), 2);
            let (d, p) = (&events[0], &events[1]);
            assert_eq!(d.station, Station::dealer(1));
            assert_eq!(p.station, Station::player(1));
            if d.basis == p.basis {
                assert_ne!(d.bit, p.bit, "psi- must anticorrelate in equal bases");
            }
        }
    }

    #[test]
    fn timestamps_follow_pulse_grid() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let state = psi_minus_density();
        let params = lossless_params(0.5);
        let events = simulate_pulse(&state, 1, 97, &params, 1, &mut rng).unwrap();
        let period = 1e9 / 96.7e6;
        for ev in events {
            assert!((ev.timestamp_ns - 97.0 * period).abs() < 1e-9);
        }
    }

    #[test]
    fn basis_selection_frequency_matches_p_x() {
        let state = psi_minus_density();
        for p_x in [0.5, 0.9] {
            let mut rng = ChaCha12Rng::seed_from_u64(4);
            let params = lossless_params(p_x);
            let (dealer, _) =
                simulate_fixed_pairs(&state, &params, 120_000, 1, 1, &mut rng).unwrap();
            let n = dealer.len() as f64;
            assert!(n >= 1e5);
            let x_frac =
                dealer.iter().filter(|e| e.basis == MeasBasis::X).count() as f64 / n;
            let sigma = (p_x * (1.0 - p_x) / n).sqrt();
            assert!(
                (x_frac - p_x).abs() < 3.0 * sigma,
                "p_x={p_x}: observed {x_frac}"
            );
        }
    }

    #[test]
    fn matcher_window_and_greedy_rules() {
        let ev = |t: f64, station: Station, basis: MeasBasis| DetectionEvent {
            pulse_index: 0,
            timestamp_ns: t,
            station,
            basis,
            bit: false,
        };
        let a = Station::dealer(1);
        let b = Station::player(1);

        // 3 ns apart, same basis: one matched pair (window 5.16 ns).
        let r = match_coincidences(
            &[ev(0.0, a, MeasBasis::X)],
            &[ev(3.0, b, MeasBasis::X)],
            5.16,
            1,
        )
        .unwrap();
        assert_eq!(r.pairs.len(), 1);

        // 6 ns apart: no match.
        let r = match_coincidences(
            &[ev(0.0, a, MeasBasis::X)],
            &[ev(6.0, b, MeasBasis::X)],
            5.16,
            1,
        )
        .unwrap();
        assert!(r.pairs.is_empty());

        // Greedy first-fit: dealer {0, 2}, player {1} pairs (0, 1).
        // Brute force over the two valid pairings picks the same first match.
        let r = match_coincidences(
            &[ev(0.0, a, MeasBasis::X), ev(2.0, a, MeasBasis::X)],
            &[ev(1.0, b, MeasBasis::X)],
            5.16,
            1,
        )
        .unwrap();
        assert_eq!(r.pairs.len(), 1);
        assert_eq!(r.pairs[0].pulse_index, 0);

        // Basis mismatch is counted, not matched.
        let r = match_coincidences(
            &[ev(0.0, a, MeasBasis::X)],
            &[ev(1.0, b, MeasBasis::Z)],
            5.16,
            1,
        )
        .unwrap();
        assert!(r.pairs.is_empty());
        assert_eq!(r.basis_mismatches, 1);

        // Unsorted input is rejected.
        let r = match_coincidences(
            &[ev(5.0, a, MeasBasis::X), ev(0.0, a, MeasBasis::X)],
            &[ev(1.0, b, MeasBasis::X)],
            5.16,
            1,
        );
        assert!(r.is_err());
    }

    #[test]
    fn session_yield_matches_poisson_expectation() {
        // Coincidence fraction ~ mu * tA * tB for small mu and no darks.
        let mu = 0.023;
        let loss_db = 7.6;
        let eta = 0.83;
        let source = SourceParams::<f64>::ideal(mu, BellKind::PsiMinus);
        let params = ChannelParams {
            dealer: StationParams::uniform(loss_db, eta, 0.0),
            player: StationParams::uniform(loss_db, eta, 0.0),
            p_x: 0.5,
            rep_rate_hz: 96.7e6,
            window_ns: 5.16,
        };
        let n: u64 = 4_000_000;
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let (dealer, player) = simulate_session(&source, &params, n, 0, 1, &mut rng).unwrap();
        let matched = match_coincidences(&dealer, &player, 5.16, 1).unwrap();
        let coincidences = matched.pairs.len() as u64 + matched.basis_mismatches;
        let t = 10f64.powf(-loss_db / 10.0) * eta;
        let expect = (mu * t * t + mu * mu * t * t) * n as f64;
        let sigma = expect.sqrt();
        assert!(
            ((coincidences as f64) - expect).abs() < 3.0 * sigma,
            "observed {coincidences}, expected {expect}"
        );
    }

    #[test]
    fn dark_counts_appear_at_expected_rate() {
        let source = SourceParams::<f64>::ideal(0.0, BellKind::PsiMinus);
        let p_d = 1e-4;
        let params = ChannelParams {
            dealer: StationParams::uniform(0.0, 1.0, p_d),
            player: StationParams::uniform(0.0, 1.0, p_d),
            p_x: 0.5,
            rep_rate_hz: 96.7e6,
            window_ns: 5.16,
        };
        let n: u64 = 1_000_000;
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let (dealer, _) = simulate_session(&source, &params, n, 0, 1, &mut rng).unwrap();
        // Per pulse, P(any of 4 channels fires) ~= 4 p_d.
        let expect = 4.0 * p_d * n as f64;
        let sigma = expect.sqrt();
        assert!(
            (dealer.len() as f64 - expect).abs() < 4.0 * sigma,
            "observed {} expected {expect}",
            dealer.len()
        );
    }

    #[test]
    fn event_csv_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let state = psi_minus_density();
        let params = lossless_params(0.5);
        let (dealer, player) =
            simulate_fixed_pairs(&state, &params, 50, 1, 2, &mut rng).unwrap();
        let all: Vec<DetectionEvent> = dealer.iter().chain(&player).cloned().collect();
        let mut buf = Vec::new();
        write_events_csv(&mut buf, &all).unwrap();
        let parsed = parse_events_csv(std::str::from_utf8(&buf).unwrap(), "mem").unwrap();
        assert_eq!(parsed.len(), all.len());
        for (a, b) in parsed.iter().zip(&all) {
            assert_eq!(a.pulse_index, b.pulse_index);
            assert_eq!(a.station, b.station);
            assert_eq!(a.basis, b.basis);
            assert_eq!(a.bit, b.bit);
            assert!((a.timestamp_ns - b.timestamp_ns).abs() < 1e-9);
        }
    }

    #[test]
    fn session_matches_per_pulse_distribution() {
        // The skip-ahead session and the naive per-pulse path should agree on
        // aggregate statistics.
        let mu = 0.02;
        let source = SourceParams::<f64>::ideal(mu, BellKind::PsiMinus);
        let params = lossless_params(0.5);
        let n: u64 = 200_000;
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let (dealer, _) = simulate_session(&source, &params, n, 0, 1, &mut rng).unwrap();
        let expect = (1.0 - (-mu as f64).exp()) * n as f64;
        let sigma = expect.sqrt();
        assert!((dealer.len() as f64 - expect).abs() < 4.0 * sigma);
    }
}
