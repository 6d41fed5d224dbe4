//! Classical postmatching: sifted pairwise Bell correlations from n-1
//! independent sessions are combined, round by round, into virtual n-party
//! GHZ rounds.
//!
//! Sifted bits are first frame-corrected so that every session behaves as if
//! it distributed a correlated reference state (dealer bit equals player bit
//! in both bases when noiseless). X rounds then carry the dealer's XOR share;
//! Z rounds use the first module's bit as reference, with announced flips
//! `v_j = a_1 XOR a_j` letting player j align to it.

use std::io::Write;
use std::path::Path;

use crate::detection::{MatchedPair, MeasBasis};
use crate::qmath::BellKind;
use crate::{Error, Result};

/// Same-basis sifted bits of one dealer-module/player session.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SiftedStream {
    pub player_id: usize,
    pub basis: MeasBasis,
    pub dealer_bits: Vec<bool>,
    pub player_bits: Vec<bool>,
}

impl SiftedStream {
    pub fn len(&self) -> usize {
        self.dealer_bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dealer_bits.is_empty()
    }
}

/// Split matched pairs of one session into its X and Z sifted streams,
/// preserving time order.
pub fn sift(pairs: &[MatchedPair], player_id: usize) -> (SiftedStream, SiftedStream) {
    let mut x = SiftedStream {
        player_id,
        basis: MeasBasis::X,
        dealer_bits: Vec::new(),
        player_bits: Vec::new(),
    };
    let mut z = SiftedStream {
        player_id,
        basis: MeasBasis::Z,
        dealer_bits: Vec::new(),
        player_bits: Vec::new(),
    };
    for pair in pairs {
        let stream = match pair.basis {
            MeasBasis::X => &mut x,
            MeasBasis::Z => &mut z,
        };
        stream.dealer_bits.push(pair.dealer_bit);
        stream.player_bits.push(pair.player_bit);
    }
    (x, z)
}

/// Whether the dealer bit must be flipped in `basis` to bring correlations of
/// the given source state into the correlated reference frame.
pub fn frame_flip(kind: BellKind, basis: MeasBasis) -> bool {
    match (kind, basis) {
        (BellKind::PsiMinus, _) => true,
        (BellKind::PsiPlus, MeasBasis::X) => true,
        (BellKind::PsiPlus, MeasBasis::Z) => false,
        (BellKind::PhiMinus, MeasBasis::X) => false,
        (BellKind::PhiMinus, MeasBasis::Z) => true,
        (BellKind::PhiPlus, _) => false,
    }
}

/// Apply the frame correction for a session whose source emits `kind`.
pub fn frame_correct(stream: &mut SiftedStream, kind: BellKind) {
    if frame_flip(kind, stream.basis) {
        for bit in &mut stream.dealer_bits {
            *bit = !*bit;
        }
    }
}

/// One virtual n-party GHZ round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GhzRound {
    pub basis: MeasBasis,
    /// X rounds: XOR of the per-module dealer bits (the dealer's share).
    /// Z rounds: the first module's bit, serving as the common reference.
    pub dealer_bit: bool,
    /// Frame-corrected dealer bit of each module, in player order.
    pub per_stream_dealer_bits: Vec<bool>,
    /// Raw player bits, in player order.
    pub player_bits: Vec<bool>,
    /// Z rounds only: announced flips v_j = a_1 XOR a_j (entry 0 is always
    /// false). Empty for X rounds.
    pub announcements: Vec<bool>,
}

impl GhzRound {
    /// Player bits after applying the announced flips (Z rounds); for X
    /// rounds this is just the raw bits.
    pub fn corrected_player_bits(&self) -> Vec<bool> {
        if self.announcements.is_empty() {
            return self.player_bits.clone();
        }
        self.player_bits
            .iter()
            .zip(&self.announcements)
            .map(|(&b, &v)| b ^ v)
            .collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct RoundSet {
    pub x_rounds: Vec<GhzRound>,
    pub z_rounds: Vec<GhzRound>,
}

impl RoundSet {
    pub fn n_players(&self) -> Option<usize> {
        self.x_rounds
            .first()
            .or(self.z_rounds.first())
            .map(|r| r.player_bits.len())
    }
}

fn build_rounds(streams: &[SiftedStream], basis: MeasBasis) -> Result<Vec<GhzRound>> {
    for s in streams {
        if s.basis != basis {
            return Err(Error::InvalidParameter(format!(
                "stream for player {} is in basis {}, expected {}",
                s.player_id,
                s.basis.label(),
                basis.label()
            )));
        }
        if s.dealer_bits.len() != s.player_bits.len() {
            return Err(Error::LengthMismatch(format!(
                "player {} stream: {} dealer bits vs {} player bits",
                s.player_id,
                s.dealer_bits.len(),
                s.player_bits.len()
            )));
        }
    }
    // Postmatching pairs the i-th surviving round of every session; the
    // shortest session limits the usable length.
    let n = streams.iter().map(SiftedStream::len).min().unwrap_or(0);
    let mut rounds = Vec::with_capacity(n);
    for i in 0..n {
        let per_stream: Vec<bool> = streams.iter().map(|s| s.dealer_bits[i]).collect();
        let player_bits: Vec<bool> = streams.iter().map(|s| s.player_bits[i]).collect();
        let (dealer_bit, announcements) = match basis {
            MeasBasis::X => (per_stream.iter().fold(false, |acc, &b| acc ^ b), Vec::new()),
            MeasBasis::Z => {
                let a1 = per_stream[0];
                (a1, per_stream.iter().map(|&a| a1 ^ a).collect())
            }
        };
        rounds.push(GhzRound {
            basis,
            dealer_bit,
            per_stream_dealer_bits: per_stream,
            player_bits,
            announcements,
        });
    }
    Ok(rounds)
}

/// Combine the sifted streams of the n-1 sessions into GHZ rounds. Streams
/// must be in player order; each element is the (X, Z) pair of one session.
pub fn postmatch_rounds(sessions: &[(SiftedStream, SiftedStream)]) -> Result<RoundSet> {
    if sessions.is_empty() {
        return Err(Error::InvalidParameter("no session streams".into()));
    }
    let x_streams: Vec<SiftedStream> = sessions.iter().map(|(x, _)| x.clone()).collect();
    let z_streams: Vec<SiftedStream> = sessions.iter().map(|(_, z)| z.clone()).collect();
    Ok(RoundSet {
        x_rounds: build_rounds(&x_streams, MeasBasis::X)?,
        z_rounds: build_rounds(&z_streams, MeasBasis::Z)?,
    })
}

/// Postmatch a full dataset for an n-party protocol: validates that exactly
/// n-1 distinct session streams are present before combining them.
pub fn dataset_postmatch(
    sessions: &[(SiftedStream, SiftedStream)],
    n_players: usize,
) -> Result<RoundSet> {
    if n_players < 3 {
        return Err(Error::InvalidParameter(format!(
            "protocol needs at least 3 parties, got {n_players}"
        )));
    }
    let expected = n_players - 1;
    if sessions.len() != expected {
        return Err(Error::MissingPlayer {
            expected,
            players: n_players,
            got: sessions.len(),
        });
    }
    for i in 0..sessions.len() {
        for j in (i + 1)..sessions.len() {
            let same_x = !sessions[i].0.is_empty()
                && sessions[i].0.dealer_bits == sessions[j].0.dealer_bits
                && sessions[i].0.player_bits == sessions[j].0.player_bits;
            let same_z = !sessions[i].1.is_empty()
                && sessions[i].1.dealer_bits == sessions[j].1.dealer_bits
                && sessions[i].1.player_bits == sessions[j].1.player_bits;
            if same_x || same_z {
                return Err(Error::DuplicateDataset);
            }
        }
    }
    postmatch_rounds(sessions)
}

pub const TRANSCRIPT_CSV_HEADER: &str =
    "round_index,basis,dealer_bit,player_bits,announcements";

fn bitstring(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

pub fn write_transcript_csv<W: Write>(writer: &mut W, rounds: &RoundSet) -> Result<()> {
    writeln!(writer, "{TRANSCRIPT_CSV_HEADER}")?;
    for (i, round) in rounds.x_rounds.iter().chain(&rounds.z_rounds).enumerate() {
        writeln!(
            writer,
            "{},{},{},{},{}",
            i,
            round.basis.label(),
            round.dealer_bit as u8,
            bitstring(&round.player_bits),
            bitstring(&round.announcements)
        )?;
    }
    Ok(())
}

pub fn write_transcript_file(path: &Path, rounds: &RoundSet) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    write_transcript_csv(&mut file, rounds)
}
