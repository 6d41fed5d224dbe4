//! Line-oriented `key = value` run configuration with dotted section
//! prefixes (`source1.mu = 0.023`). Parsing reports the offending field and
//! line; serialization round-trips semantically.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::detection::{ChannelParams, DetectorChannel, StationParams};
use crate::keyrate::SecurityParams;
use crate::qmath::BellKind;
use crate::source::SourceParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("field {field} (line {line}): {message}")]
    Invalid {
        field: String,
        line: usize,
        message: String,
    },
    #[error("missing required field {field}")]
    Missing { field: String },
    #[error("unknown field {field} (line {line})")]
    Unknown { field: String, line: usize },
}

type CfgResult<T> = std::result::Result<T, ConfigError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Analytic,
    MonteCarlo,
    Analyze,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Analytic => "analytic",
            Mode::MonteCarlo => "montecarlo",
            Mode::Analyze => "analyze",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParameter {
    LossDb,
    PX,
    Mu,
}

impl SweepParameter {
    pub fn label(self) -> &'static str {
        match self {
            SweepParameter::LossDb => "loss_db",
            SweepParameter::PX => "p_x",
            SweepParameter::Mu => "mu",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl SweepSpec {
    /// Inclusive grid values, with an end-point tolerance so `0..25 step 0.5`
    /// yields 51 points despite accumulation error.
    pub fn points(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let n = ((self.stop - self.start) / self.step + 0.5).floor() as u64;
        for i in 0..=n {
            let v = self.start + self.step * i as f64;
            if v <= self.stop + self.step * 1e-9 {
                out.push(v);
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub mode: Mode,
    pub n_players: usize,
    pub n_pulses: u64,
    pub seed: Option<u64>,
    pub sources: Vec<SourceParams<f64>>,
    pub channels: Vec<ChannelParams<f64>>,
    pub security: SecurityParams<f64>,
    /// Misalignment applied on top of the source state, per basis.
    pub e_d_x: f64,
    pub e_d_z: f64,
    /// Fraction of Z rounds used for estimation (1 = all, the default).
    pub z_sample_fraction: f64,
    pub sweep: Option<SweepSpec>,
    pub analyze_logs: Vec<PathBuf>,
    pub tomography_counts: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

struct Raw {
    entries: BTreeMap<String, (usize, String)>,
}

impl Raw {
    fn parse(text: &str) -> CfgResult<Self> {
        let mut entries = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = match line.find('#') {
                Some(pos) => &line[..pos],
                None => line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: lineno,
                    message: format!("expected `key = value`, got {line:?}"),
                });
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError::Syntax {
                    line: lineno,
                    message: "empty key or value".into(),
                });
            }
            if entries.insert(key.clone(), (lineno, value)).is_some() {
                return Err(ConfigError::Syntax {
                    line: lineno,
                    message: format!("duplicate key {key:?}"),
                });
            }
        }
        Ok(Self { entries })
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn take_parsed<T: std::str::FromStr>(&mut self, key: &str) -> CfgResult<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, value)) => value.parse().map(Some).map_err(|_| ConfigError::Invalid {
                field: key.to_string(),
                line,
                message: format!("cannot parse {value:?}"),
            }),
        }
    }

    fn require<T: std::str::FromStr>(&mut self, key: &str) -> CfgResult<T> {
        self.take_parsed(key)?.ok_or(ConfigError::Missing {
            field: key.to_string(),
        })
    }

    fn section_indices(&self, prefix: &str) -> Vec<usize> {
        let mut seen: Vec<usize> = self
            .entries
            .keys()
            .filter_map(|k| {
                let rest = k.strip_prefix(prefix)?;
                let (idx, _) = rest.split_once('.')?;
                idx.parse().ok()
            })
            .collect();
        seen.sort_unstable();
        seen.dedup();
        seen
    }
}

fn invalid(field: &str, line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        line,
        message: message.into(),
    }
}

fn parse_source(raw: &mut Raw, idx: usize) -> CfgResult<SourceParams<f64>> {
    let pre = format!("source{idx}.");
    let mu: f64 = raw.require(&format!("{pre}mu"))?;
    let p_key = format!("{pre}p");
    let f_key = format!("{pre}fidelity");
    let p = match (raw.take(&p_key), raw.take(&f_key)) {
        (Some((line, _)), Some(_)) => {
            return Err(invalid(&p_key, line, "give either p or fidelity, not both"))
        }
        (Some((line, v)), None) => v
            .parse()
            .map_err(|_| invalid(&p_key, line, format!("cannot parse {v:?}")))?,
        (None, Some((line, v))) => {
            let f: f64 = v
                .parse()
                .map_err(|_| invalid(&f_key, line, format!("cannot parse {v:?}")))?;
            (4.0 * f - 1.0) / 3.0
        }
        (None, None) => 1.0,
    };
    let theta_deg: f64 = raw
        .take_parsed(&format!("{pre}rotation_theta_deg"))?
        .unwrap_or(0.0);
    let base_state: BellKind = raw
        .take_parsed(&format!("{pre}base_state"))?
        .unwrap_or(BellKind::PsiMinus);
    let params = SourceParams {
        mu,
        p,
        rotation_theta: theta_deg.to_radians(),
        base_state,
    };
    params
        .validate()
        .map_err(|e| invalid(&format!("{pre}mu"), 0, e.to_string()))?;
    Ok(params)
}

fn parse_station(raw: &mut Raw, pre: &str, loss_key: &str) -> CfgResult<StationParams<f64>> {
    let loss_db: f64 = raw.require(&format!("{pre}{loss_key}"))?;
    let avg_eta: Option<f64> = raw.take_parsed(&format!("{pre}eta_d"))?;
    let avg_pd: Option<f64> = raw.take_parsed(&format!("{pre}p_d"))?;
    let side = if loss_key.ends_with("dealer") {
        "dealer"
    } else {
        "player"
    };
    let mut channels = [DetectorChannel {
        efficiency: avg_eta.unwrap_or(1.0),
        dark_prob: avg_pd.unwrap_or(0.0),
    }; 4];
    // Optional per-channel overrides (Table-V-style granularity).
    for (ch, name) in ["x0", "x1", "z0", "z1"].iter().enumerate() {
        if let Some(v) = raw.take_parsed(&format!("{pre}eta_d_{side}_{name}"))? {
            channels[ch].efficiency = v;
        }
        if let Some(v) = raw.take_parsed(&format!("{pre}p_d_{side}_{name}"))? {
            channels[ch].dark_prob = v;
        }
    }
    Ok(StationParams { loss_db, channels })
}

fn parse_channel(raw: &mut Raw, idx: usize) -> CfgResult<ChannelParams<f64>> {
    let pre = format!("channel{idx}.");
    // Shared eta_d/p_d apply to both stations; per-station keys override.
    let dealer = parse_station(raw, &pre, "loss_db_dealer")?;
    let player_loss: f64 = raw.require(&format!("{pre}loss_db_player"))?;
    let mut player = StationParams {
        loss_db: player_loss,
        channels: dealer.channels,
    };
    for (ch, name) in ["x0", "x1", "z0", "z1"].iter().enumerate() {
        if let Some(v) = raw.take_parsed(&format!("{pre}eta_d_player_{name}"))? {
            player.channels[ch].efficiency = v;
        }
        if let Some(v) = raw.take_parsed(&format!("{pre}p_d_player_{name}"))? {
            player.channels[ch].dark_prob = v;
        }
    }
    let p_x: f64 = raw.require(&format!("{pre}p_x"))?;
    let rep_rate_hz: f64 = raw.require(&format!("{pre}rep_rate_hz"))?;
    let window_ns: f64 = raw.take_parsed(&format!("{pre}window_ns"))?.unwrap_or(5.16);
    let params = ChannelParams {
        dealer,
        player,
        p_x,
        rep_rate_hz,
        window_ns,
    };
    params
        .validate()
        .map_err(|e| invalid(&format!("{pre}p_x"), 0, e.to_string()))?;
    Ok(params)
}

impl RunConfig {
    pub fn parse(text: &str) -> CfgResult<Self> {
        let mut raw = Raw::parse(text)?;

        let (mode_line, mode_str) = raw.take("mode").ok_or(ConfigError::Missing {
            field: "mode".into(),
        })?;
        let mode = match mode_str.as_str() {
            "analytic" => Mode::Analytic,
            "montecarlo" => Mode::MonteCarlo,
            "analyze" => Mode::Analyze,
            other => {
                return Err(invalid(
                    "mode",
                    mode_line,
                    format!("unknown mode {other:?} (analytic, montecarlo or analyze)"),
                ))
            }
        };
        let n_players: usize = raw.require("n_players")?;
        if n_players < 3 {
            return Err(ConfigError::Invalid {
                field: "n_players".into(),
                line: 0,
                message: format!("must be at least 3, got {n_players}"),
            });
        }
        let n_pulses: u64 = raw.take_parsed("n_pulses")?.unwrap_or(0);
        let seed: Option<u64> = raw.take_parsed("seed")?;
        if mode == Mode::MonteCarlo && seed.is_none() {
            return Err(ConfigError::Missing {
                field: "seed".into(),
            });
        }
        if mode != Mode::Analyze && n_pulses == 0 {
            return Err(ConfigError::Missing {
                field: "n_pulses".into(),
            });
        }

        let n_sessions = n_players - 1;
        let source_idx = raw.section_indices("source");
        let channel_idx = raw.section_indices("channel");
        let expand = |idx: &[usize], what: &str| -> CfgResult<Vec<usize>> {
            if idx.len() == n_sessions {
                Ok(idx.to_vec())
            } else if idx.len() == 1 {
                // One section is replicated across all sessions.
                Ok(vec![idx[0]; n_sessions])
            } else if idx.is_empty() && mode == Mode::Analyze {
                Ok(Vec::new())
            } else {
                Err(ConfigError::Invalid {
                    field: format!("{what}*"),
                    line: 0,
                    message: format!(
                        "expected 1 or {n_sessions} {what} sections, found {}",
                        idx.len()
                    ),
                })
            }
        };
        let source_order = expand(&source_idx, "source")?;
        let channel_order = expand(&channel_idx, "channel")?;

        let mut sources = Vec::new();
        let mut source_cache: BTreeMap<usize, SourceParams<f64>> = BTreeMap::new();
        for idx in source_order {
            if !source_cache.contains_key(&idx) {
                source_cache.insert(idx, parse_source(&mut raw, idx)?);
            }
            sources.push(source_cache[&idx].clone());
        }
        let mut channels = Vec::new();
        let mut channel_cache: BTreeMap<usize, ChannelParams<f64>> = BTreeMap::new();
        for idx in channel_order {
            if !channel_cache.contains_key(&idx) {
                channel_cache.insert(idx, parse_channel(&mut raw, idx)?);
            }
            channels.push(channel_cache[&idx].clone());
        }

        let mut security = SecurityParams::default();
        if let Some(v) = raw.take_parsed("security.eps_c")? {
            security.eps_c = v;
        }
        if let Some(v) = raw.take_parsed("security.eps_prime")? {
            security.eps_prime = v;
        }
        if let Some(v) = raw.take_parsed("security.eps_bar")? {
            security.eps_bar = v;
        }
        if let Some(v) = raw.take_parsed("security.f_e")? {
            security.f_e = v;
        }
        if let Some(v) = raw.take_parsed("security.q")? {
            security.q = v;
        }
        security
            .validate()
            .map_err(|e| invalid("security.eps_c", 0, e.to_string()))?;

        let e_d_x: f64 = raw.take_parsed("e_d_x")?.unwrap_or(0.0);
        let e_d_z: f64 = raw.take_parsed("e_d_z")?.unwrap_or(e_d_x);
        let z_sample_fraction: f64 = raw.take_parsed("z_sample_fraction")?.unwrap_or(1.0);
        if !(0.0..=1.0).contains(&z_sample_fraction) || z_sample_fraction == 0.0 {
            return Err(ConfigError::Invalid {
                field: "z_sample_fraction".into(),
                line: 0,
                message: format!("{z_sample_fraction} outside (0, 1]"),
            });
        }

        let sweep = match raw.take("sweep.parameter") {
            None => None,
            Some((line, value)) => {
                let parameter = match value.as_str() {
                    "loss_db" => SweepParameter::LossDb,
                    "p_x" => SweepParameter::PX,
                    "mu" => SweepParameter::Mu,
                    other => {
                        return Err(invalid(
                            "sweep.parameter",
                            line,
                            format!("unknown parameter {other:?} (loss_db, p_x or mu)"),
                        ))
                    }
                };
                let start: f64 = raw.require("sweep.start")?;
                let stop: f64 = raw.require("sweep.stop")?;
                let step: f64 = raw.require("sweep.step")?;
                if step <= 0.0 || stop < start {
                    return Err(invalid(
                        "sweep.step",
                        line,
                        "need step > 0 and stop >= start",
                    ));
                }
                Some(SweepSpec {
                    parameter,
                    start,
                    stop,
                    step,
                })
            }
        };

        let analyze_logs: Vec<PathBuf> = match raw.take("analyze.logs") {
            None => Vec::new(),
            Some((_, v)) => v.split(',').map(|s| PathBuf::from(s.trim())).collect(),
        };
        if mode == Mode::Analyze && analyze_logs.is_empty() {
            return Err(ConfigError::Missing {
                field: "analyze.logs".into(),
            });
        }
        let tomography_counts = raw.take("tomography.counts").map(|(_, v)| PathBuf::from(v));
        let out_dir = raw.take("out_dir").map(|(_, v)| PathBuf::from(v));

        if let Some((key, (line, _))) = raw.entries.iter().next() {
            return Err(ConfigError::Unknown {
                field: key.clone(),
                line: *line,
            });
        }

        Ok(RunConfig {
            mode,
            n_players,
            n_pulses,
            seed,
            sources,
            channels,
            security,
            e_d_x,
            e_d_z,
            z_sample_fraction,
            sweep,
            analyze_logs,
            tomography_counts,
            out_dir,
        })
    }

    pub fn read(path: &Path) -> crate::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::parse(&text)?)
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut line = |s: String| {
            out.push_str(&s);
            out.push('\n');
        };
        line(format!("mode = {}", self.mode.label()));
        line(format!("n_players = {}", self.n_players));
        if self.n_pulses > 0 {
            line(format!("n_pulses = {}", self.n_pulses));
        }
        if let Some(seed) = self.seed {
            line(format!("seed = {seed}"));
        }
        for (i, s) in self.sources.iter().enumerate() {
            let pre = format!("source{}", i + 1);
            line(format!("{pre}.mu = {}", s.mu));
            line(format!("{pre}.p = {}", s.p));
            line(format!(
                "{pre}.rotation_theta_deg = {}",
                s.rotation_theta.to_degrees()
            ));
            line(format!("{pre}.base_state = {}", s.base_state.name()));
        }
        for (i, c) in self.channels.iter().enumerate() {
            let pre = format!("channel{}", i + 1);
            line(format!("{pre}.loss_db_dealer = {}", c.dealer.loss_db));
            line(format!("{pre}.loss_db_player = {}", c.player.loss_db));
            for (station, name) in [(&c.dealer, "dealer"), (&c.player, "player")] {
                for (ch, cname) in ["x0", "x1", "z0", "z1"].iter().enumerate() {
                    line(format!(
                        "{pre}.eta_d_{name}_{cname} = {}",
                        station.channels[ch].efficiency
                    ));
                    line(format!(
                        "{pre}.p_d_{name}_{cname} = {}",
                        station.channels[ch].dark_prob
                    ));
                }
            }
            line(format!("{pre}.p_x = {}", c.p_x));
            line(format!("{pre}.rep_rate_hz = {}", c.rep_rate_hz));
            line(format!("{pre}.window_ns = {}", c.window_ns));
        }
        line(format!("security.eps_c = {}", self.security.eps_c));
        line(format!("security.eps_prime = {}", self.security.eps_prime));
        line(format!("security.eps_bar = {}", self.security.eps_bar));
        line(format!("security.f_e = {}", self.security.f_e));
        line(format!("security.q = {}", self.security.q));
        line(format!("e_d_x = {}", self.e_d_x));
        line(format!("e_d_z = {}", self.e_d_z));
        line(format!("z_sample_fraction = {}", self.z_sample_fraction));
        if let Some(sw) = &self.sweep {
            line(format!("sweep.parameter = {}", sw.parameter.label()));
            line(format!("sweep.start = {}", sw.start));
            line(format!("sweep.stop = {}", sw.stop));
            line(format!("sweep.step = {}", sw.step));
        }
        if !self.analyze_logs.is_empty() {
            let paths: Vec<String> = self
                .analyze_logs
                .iter()
                .map(|p| p.display().to_string())
                .collect();
            line(format!("analyze.logs = {}", paths.join(",")));
        }
        if let Some(p) = &self.tomography_counts {
            line(format!("tomography.counts = {}", p.display()));
        }
        if let Some(p) = &self.out_dir {
            line(format!("out_dir = {}", p.display()));
        }
        out
    }
}
