//! Scenario configuration, its TOML representation and validation.
//!
//! Keys are lower_snake_case and unknown keys are rejected. Validation
//! errors name the offending key path, e.g. `tmo.wt` or `sweep.values`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tetra_aoi_core::time::DEFAULT_FRAME_DUR_MS;
use tetra_aoi_core::Discipline;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid `{path}`: {message}")]
    Invalid { path: String, message: String },
}

impl ConfigError {
    pub fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Key path of a validation error, if any.
    pub fn path(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { path, .. } => Some(path),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "tmo", alias = "TMO")]
    Tmo,
    #[serde(rename = "dmo", alias = "DMO")]
    Dmo,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Tmo => "tmo",
            Mode::Dmo => "dmo",
        })
    }
}

/// First-responder and gateway disciplines of the DMO settings.
pub fn setting_disciplines(setting: u8) -> Option<(Discipline, Discipline)> {
    match setting {
        1 => Some((Discipline::Prrt, Discipline::Fcfs)),
        2 => Some((Discipline::Fcfs, Discipline::Fcfs)),
        3 => Some((Discipline::Prrt, Discipline::Replace2)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TmoParams {
    /// Access retry window in frames.
    pub wt: u32,
    /// Maximum random-access attempts per transmission round.
    pub nu: u32,
    /// Whole-message retransmissions after a missing ACK.
    pub sds_retx_limit: u32,
    pub ack_timeout_frames: u32,
    pub first_fragment_bits: u32,
    /// Random-access exchanges needed to set up one voice call.
    pub voice_setup_exchanges: u32,
}

impl Default for TmoParams {
    fn default() -> Self {
        Self {
            wt: 4,
            nu: 5,
            sds_retx_limit: 3,
            ack_timeout_frames: 4,
            first_fragment_bits: 86,
            voice_setup_exchanges: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DmoParams {
    pub dsb_frames: u32,
    /// ACK wait after the last fragment, in frames.
    pub dt316: u32,
    /// Whole-message retransmissions.
    pub dn316: u32,
    pub channels: u32,
    /// Random start offset drawn from `1..=backoff_slots` slots.
    pub backoff_slots: u32,
    /// Fragments of a relayed message on the gateway's trunked uplink.
    pub relay_fragments: u32,
}

impl Default for DmoParams {
    fn default() -> Self {
        Self {
            dsb_frames: 2,
            dt316: 2,
            dn316: 3,
            channels: 1,
            backoff_slots: 16,
            relay_fragments: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// Replication r uses the same seed at every point.
    #[default]
    Common,
    /// Every (point, replication) pair gets its own seed.
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: String,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub range: Option<RangeSpec>,
    #[serde(default = "one")]
    pub replications: u32,
    #[serde(default)]
    pub seeds: SeedPolicy,
}

fn one() -> u32 {
    1
}

impl SweepSpec {
    pub fn new(parameter: &str, values: Vec<f64>) -> Self {
        Self {
            parameter: parameter.to_string(),
            values: Some(values),
            range: None,
            replications: 1,
            seeds: SeedPolicy::Common,
        }
    }

    /// Sweep points in order. Ranges include `stop` when it lies on the grid.
    pub fn points(&self) -> Result<Vec<f64>, ConfigError> {
        let pts = match (&self.values, &self.range) {
            (Some(v), None) => v.clone(),
            (None, Some(r)) => {
                if !(r.step > 0.0 && r.step.is_finite()) {
                    return Err(ConfigError::invalid("sweep.range.step", "must be positive"));
                }
                if !(r.start.is_finite() && r.stop.is_finite()) || r.stop < r.start {
                    return Err(ConfigError::invalid("sweep.range", "need finite start <= stop"));
                }
                let n = ((r.stop - r.start) / r.step + 1e-9).floor() as usize;
                (0..=n).map(|k| r.start + k as f64 * r.step).collect()
            }
            (Some(_), Some(_)) => {
                return Err(ConfigError::invalid("sweep", "give either `values` or `range`, not both"))
            }
            (None, None) => return Err(ConfigError::invalid("sweep.values", "no sweep values given")),
        };
        if pts.is_empty() {
            return Err(ConfigError::invalid("sweep.values", "must not be empty"));
        }
        if let Some(bad) = pts.iter().find(|v| !v.is_finite()) {
            return Err(ConfigError::invalid("sweep.values", format!("non-finite value {bad}")));
        }
        Ok(pts)
    }

    pub fn validate(&self, base: &ScenarioConfig) -> Result<(), ConfigError> {
        if self.replications == 0 {
            return Err(ConfigError::invalid("sweep.replications", "must be at least 1"));
        }
        for v in self.points()? {
            base.with_param(&self.parameter, v)
                .map_err(|e| match e {
                    ConfigError::Invalid { path, message } if path == self.parameter => {
                        ConfigError::invalid("sweep.values", format!("{v} for `{path}`: {message}"))
                    }
                    other => other,
                })?;
        }
        Ok(())
    }
}

/// Grid for comparing the abstract simulation against the closed forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateSpec {
    pub lambda_f: Vec<f64>,
    pub alpha: Vec<f64>,
    pub mu: f64,
    pub disciplines: Vec<Discipline>,
    pub deliveries: u64,
}

impl Default for ValidateSpec {
    fn default() -> Self {
        Self {
            lambda_f: vec![0.06, 0.1, 0.3, 0.5, 0.9],
            alpha: vec![0.1, 0.4],
            mu: 1.0,
            disciplines: vec![Discipline::Pr, Discipline::Prrt, Discipline::Npr],
            deliveries: 1_000_000,
        }
    }
}

impl ValidateSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.lambda_f.is_empty() || self.lambda_f.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(ConfigError::invalid("validate.lambda_f", "need positive finite values"));
        }
        if self.alpha.is_empty() || self.alpha.iter().any(|a| !(0.0..1.0).contains(a)) {
            return Err(ConfigError::invalid("validate.alpha", "need values in [0, 1)"));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(ConfigError::invalid("validate.mu", "must be positive"));
        }
        if self.disciplines.is_empty() {
            return Err(ConfigError::invalid("validate.disciplines", "must not be empty"));
        }
        if let Some(d) = self
            .disciplines
            .iter()
            .find(|d| matches!(d, Discipline::Fcfs | Discipline::Replace2))
        {
            return Err(ConfigError::invalid(
                "validate.disciplines",
                format!("{d} has no closed form"),
            ));
        }
        if self.deliveries == 0 {
            return Err(ConfigError::invalid("validate.deliveries", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub mode: Mode,
    /// Background terminals.
    pub n_c: u32,
    /// First responders.
    pub n_f: u32,
    /// Status updates per second per first responder.
    pub lambda_f: f64,
    /// Short-data messages per second per background terminal.
    pub lambda_c: f64,
    /// Voice calls per second per background terminal.
    pub lambda_voice: f64,
    /// Uniform call duration range in seconds.
    pub call_dur: [f64; 2],
    /// Aggregate feedback messages per second; defaults to `n_f / 60`.
    pub feedback_rate: Option<f64>,
    /// DMO setting 1, 2 or 3 (DMO only; defaults to 1).
    pub setting: Option<u8>,
    pub fr_discipline: Option<Discipline>,
    /// Gateway relay queue discipline (DMO only).
    pub gw_discipline: Option<Discipline>,
    pub bg_discipline: Discipline,
    /// Per-burst error probability on the trunked channel.
    pub alpha_ch: f64,
    /// Per-burst error probability on the direct-mode channel; defaults to `alpha_ch`.
    pub alpha_ch_dmo: Option<f64>,
    /// Fragments per first-responder status update.
    pub n_fragments: u32,
    pub seed: u64,
    /// Simulated seconds.
    pub horizon: f64,
    pub frame_dur_ms: f64,
    pub max_events: Option<u64>,
    pub tmo: TmoParams,
    pub dmo: DmoParams,
    pub sweep: Option<SweepSpec>,
    pub validate: Option<ValidateSpec>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Tmo,
            n_c: 500,
            n_f: 10,
            lambda_f: 0.1,
            lambda_c: 10.0 / 3600.0,
            lambda_voice: 3.0 / 3600.0,
            call_dur: [20.0, 40.0],
            feedback_rate: None,
            setting: None,
            fr_discipline: None,
            gw_discipline: None,
            bg_discipline: Discipline::Fcfs,
            alpha_ch: 0.1,
            alpha_ch_dmo: None,
            n_fragments: 1,
            seed: 1,
            horizon: 3600.0,
            frame_dur_ms: DEFAULT_FRAME_DUR_MS,
            max_events: None,
            tmo: TmoParams::default(),
            dmo: DmoParams::default(),
            sweep: None,
            validate: None,
        }
    }
}

fn check_rate(path: &str, v: f64, strictly_positive: bool) -> Result<(), ConfigError> {
    let ok = v.is_finite() && if strictly_positive { v > 0.0 } else { v >= 0.0 };
    if ok {
        Ok(())
    } else if strictly_positive {
        Err(ConfigError::invalid(path, format!("must be positive and finite, got {v}")))
    } else {
        Err(ConfigError::invalid(path, format!("must be non-negative and finite, got {v}")))
    }
}

fn check_range(path: &str, v: u32, lo: u32, hi: u32) -> Result<(), ConfigError> {
    if (lo..=hi).contains(&v) {
        Ok(())
    } else {
        Err(ConfigError::invalid(path, format!("must lie in [{lo}, {hi}], got {v}")))
    }
}

fn check_prob(path: &str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ConfigError::invalid(path, format!("must lie in [0, 1], got {v}")))
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// TMO scenario with a single first responder and nothing else on the air.
    pub fn isolated_tmo(lambda_f: f64, discipline: Discipline) -> Self {
        Self {
            n_c: 0,
            n_f: 1,
            lambda_f,
            lambda_c: 0.0,
            lambda_voice: 0.0,
            feedback_rate: Some(0.0),
            fr_discipline: Some(discipline),
            alpha_ch: 0.0,
            ..Self::default()
        }
    }

    pub fn setting(&self) -> Option<u8> {
        match self.mode {
            Mode::Tmo => None,
            Mode::Dmo => Some(self.setting.unwrap_or(1)),
        }
    }

    pub fn fr_discipline(&self) -> Discipline {
        if let Some(d) = self.fr_discipline {
            return d;
        }
        match self.setting().and_then(setting_disciplines) {
            Some((fr, _)) => fr,
            None => Discipline::Prrt,
        }
    }

    pub fn gw_discipline(&self) -> Option<Discipline> {
        let s = self.setting()?;
        Some(
            self.gw_discipline
                .unwrap_or_else(|| setting_disciplines(s).map_or(Discipline::Fcfs, |(_, gw)| gw)),
        )
    }

    pub fn feedback_rate(&self) -> f64 {
        self.feedback_rate.unwrap_or(f64::from(self.n_f) / 60.0)
    }

    pub fn alpha_dmo(&self) -> f64 {
        self.alpha_ch_dmo.unwrap_or(self.alpha_ch)
    }

    /// Entities in the run: terminals, the remote agent, and the gateway in DMO.
    pub fn entity_count(&self) -> usize {
        let base = self.n_c as usize + self.n_f as usize + 1;
        match self.mode {
            Mode::Tmo => base,
            Mode::Dmo => base + 1,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_f == 0 {
            return Err(ConfigError::invalid("n_f", "need at least one first responder"));
        }
        check_rate("lambda_f", self.lambda_f, true)?;
        check_rate("lambda_c", self.lambda_c, false)?;
        check_rate("lambda_voice", self.lambda_voice, false)?;
        let [lo, hi] = self.call_dur;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(ConfigError::invalid("call_dur", format!("need 0 < lo <= hi, got [{lo}, {hi}]")));
        }
        if let Some(r) = self.feedback_rate {
            check_rate("feedback_rate", r, false)?;
        }
        match self.mode {
            Mode::Tmo => {
                if self.setting.is_some() {
                    return Err(ConfigError::invalid("setting", "only meaningful with mode = \"dmo\""));
                }
                if self.gw_discipline.is_some() {
                    return Err(ConfigError::invalid("gw_discipline", "only meaningful with mode = \"dmo\""));
                }
            }
            Mode::Dmo => {
                if let Some(s) = self.setting {
                    if setting_disciplines(s).is_none() {
                        return Err(ConfigError::invalid("setting", format!("must be 1, 2 or 3, got {s}")));
                    }
                }
                if let Some(d) = self.gw_discipline {
                    if !matches!(d, Discipline::Fcfs | Discipline::Replace2) {
                        return Err(ConfigError::invalid("gw_discipline", format!("must be FCFS or REPLACE2, got {d}")));
                    }
                }
            }
        }
        check_prob("alpha_ch", self.alpha_ch)?;
        if let Some(a) = self.alpha_ch_dmo {
            check_prob("alpha_ch_dmo", a)?;
        }
        if self.n_fragments == 0 {
            return Err(ConfigError::invalid("n_fragments", "must be at least 1"));
        }
        check_rate("horizon", self.horizon, true)?;
        check_rate("frame_dur_ms", self.frame_dur_ms, true)?;
        if self.max_events == Some(0) {
            return Err(ConfigError::invalid("max_events", "must be at least 1"));
        }
        let t = &self.tmo;
        check_range("tmo.wt", t.wt, 1, 15)?;
        check_range("tmo.nu", t.nu, 1, 15)?;
        check_range("tmo.ack_timeout_frames", t.ack_timeout_frames, 1, u32::MAX)?;
        check_range("tmo.first_fragment_bits", t.first_fragment_bits, 1, 86)?;
        check_range("tmo.voice_setup_exchanges", t.voice_setup_exchanges, 1, 15)?;
        let d = &self.dmo;
        check_range("dmo.dsb_frames", d.dsb_frames, 1, 4)?;
        check_range("dmo.dt316", d.dt316, 1, u32::MAX)?;
        check_range("dmo.channels", d.channels, 1, 64)?;
        check_range("dmo.backoff_slots", d.backoff_slots, 1, u32::MAX)?;
        check_range("dmo.relay_fragments", d.relay_fragments, 1, 64)?;
        if let Some(s) = &self.sweep {
            let mut base = self.clone();
            base.sweep = None;
            s.validate(&base)?;
        }
        if let Some(v) = &self.validate {
            v.validate()?;
        }
        Ok(())
    }

    /// Copy with one parameter replaced, validated.
    pub fn with_param(&self, path: &str, value: f64) -> Result<Self, ConfigError> {
        let mut c = self.clone();
        let as_u32 = |v: f64| -> Result<u32, ConfigError> {
            if v.fract() == 0.0 && v >= 0.0 && v <= f64::from(u32::MAX) {
                Ok(v as u32)
            } else {
                Err(ConfigError::invalid(path, format!("expects an integer, got {v}")))
            }
        };
        match path {
            "lambda_f" => c.lambda_f = value,
            "lambda_c" => c.lambda_c = value,
            "lambda_voice" => c.lambda_voice = value,
            "feedback_rate" => c.feedback_rate = Some(value),
            "alpha_ch" => c.alpha_ch = value,
            "alpha_ch_dmo" => c.alpha_ch_dmo = Some(value),
            "horizon" => c.horizon = value,
            "n_f" => c.n_f = as_u32(value)?,
            "n_c" => c.n_c = as_u32(value)?,
            "n_fragments" => c.n_fragments = as_u32(value)?,
            "setting" => c.setting = Some(u8::try_from(as_u32(value)?).unwrap_or(u8::MAX)),
            "tmo.wt" => c.tmo.wt = as_u32(value)?,
            "tmo.nu" => c.tmo.nu = as_u32(value)?,
            "tmo.sds_retx_limit" => c.tmo.sds_retx_limit = as_u32(value)?,
            "tmo.ack_timeout_frames" => c.tmo.ack_timeout_frames = as_u32(value)?,
            "dmo.dsb_frames" => c.dmo.dsb_frames = as_u32(value)?,
            "dmo.dt316" => c.dmo.dt316 = as_u32(value)?,
            "dmo.dn316" => c.dmo.dn316 = as_u32(value)?,
            "dmo.channels" => c.dmo.channels = as_u32(value)?,
            "dmo.backoff_slots" => c.dmo.backoff_slots = as_u32(value)?,
            "dmo.relay_fragments" => c.dmo.relay_fragments = as_u32(value)?,
            _ => return Err(ConfigError::invalid("sweep.parameter", format!("`{path}` cannot be swept"))),
        }
        c.sweep = None;
        c.validate()?;
        Ok(c)
    }
}
