//! Configuration files, defaults, and hashing.
//!
//! Configuration is TOML with one section per concern. Every field has a
//! default, so an empty file (or a missing section) yields the standard
//! benchmark setup, while unknown keys are rejected to catch typos early.
//! [`AppConfig::canonical_hash`] re-serializes the parsed config and hashes
//! it, so two files that differ only in formatting, comments, or key order
//! produce the same digest; run manifests embed that digest to tie every
//! output back to the exact configuration that produced it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// TOML syntax or unknown-key errors; the message carries the line and
    /// column of the offending input.
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleSection {
    /// Distance from the center of gravity to the front axle (m).
    pub l_f: f64,
    /// Distance from the center of gravity to the rear axle (m).
    pub l_r: f64,
}

impl Default for VehicleSection {
    fn default() -> Self {
        Self { l_f: 1.0, l_r: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitsSection {
    pub accel_min: f64,
    pub accel_max: f64,
    pub steer_min: f64,
    pub steer_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for LimitsSection {
    fn default() -> Self {
        Self {
            accel_min: -5.0,
            accel_max: 4.0,
            steer_min: -std::f64::consts::FRAC_PI_4,
            steer_max: std::f64::consts::FRAC_PI_4,
            v_min: 0.0,
            v_max: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcSection {
    pub horizon: usize,
    pub dt: f64,
    pub v_des: f64,
    /// Progress-proportional headway scale of the merging barrier.
    pub varphi: f64,
    /// Standstill clearance of the merging barrier (m).
    pub delta: f64,
    /// Speed-scaled ellipse semi-axes (per m/s) and the evaluation speed floor.
    pub ellipse_a: f64,
    pub ellipse_b: f64,
    pub ellipse_v_floor: f64,
    /// Tightening subtracted from the vehicle-coupled barrier rows. The rows
    /// hold at sample instants; between samples the held control lets them
    /// drift by O(dt), so a boundary-riding solution needs a small buffer to
    /// keep the barrier itself nonnegative along the continuous path.
    pub row_margin: f64,
    /// Maximum steering rate (rad/s); 0 disables the limit. Keeps the
    /// optimizer from weaving: saw-tooth steering cuts progress along the
    /// route at no acceleration cost, which a tight merging constraint would
    /// otherwise reward with an oscillatory "lateral braking" limit cycle.
    pub steer_slew_rate: f64,
}

impl Default for MpcSection {
    fn default() -> Self {
        Self {
            horizon: 5,
            dt: 0.2,
            v_des: 15.0,
            varphi: 1.2,
            delta: 3.74,
            ellipse_a: 1.8,
            ellipse_b: 0.6,
            ellipse_v_floor: 0.1,
            row_margin: 0.1,
            steer_slew_rate: 0.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConflictPolicy {
    /// Crossing order by control-zone entry time.
    Fifo,
    /// Crossing order by current distance to the merge point.
    Sdf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    /// Control-zone length of each road (m); the merge point sits at its end.
    pub road_length: f64,
    pub lane_width: f64,
    /// Angle between ramp and main road (radians).
    pub ramp_angle: f64,
    /// Poisson arrival rates (vehicles per second).
    pub arrival_rate_main: f64,
    pub arrival_rate_ramp: f64,
    pub spawn_speed_lo: f64,
    pub spawn_speed_hi: f64,
    /// Minimum rear-end barrier value required at the entry before a queued
    /// arrival is released.
    pub spawn_margin: f64,
    pub conflict_policy: ConflictPolicy,
    /// Episode ends after this many vehicles have crossed the merge point.
    pub cav_target: usize,
    /// Hard wall-clock limit inside the simulation (s).
    pub time_cap: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            road_length: 100.0,
            lane_width: 4.0,
            ramp_angle: 15f64.to_radians(),
            arrival_rate_main: 0.12,
            arrival_rate_ramp: 0.10,
            spawn_speed_lo: 8.0,
            spawn_speed_hi: 12.0,
            spawn_margin: 0.25,
            conflict_policy: ConflictPolicy::Fifo,
            cav_target: 15,
            time_cap: 300.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlSection {
    pub hidden: Vec<usize>,
    pub total_steps: usize,
    pub gamma: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Polyak averaging coefficient for the target critics.
    pub tau: f64,
    /// Fixed entropy temperature.
    pub alpha: f64,
    /// Environment steps taken with uniform random actions before learning.
    pub warmup_steps: usize,
    /// Training episode truncation horizon (s).
    pub episode_timeout: f64,
    // Reward shaping weights.
    pub beta_accel: f64,
    pub beta_steer: f64,
    pub beta_speed: f64,
    pub beta_heading: f64,
    pub beta_fuel: f64,
    pub infeasible_penalty: f64,
    // Training scene randomization: leader gap/speed and conflict progress gap.
    pub leader_gap_lo: f64,
    pub leader_gap_hi: f64,
    pub conflict_gap_lo: f64,
    pub conflict_gap_hi: f64,
    pub spawn_speed_lo: f64,
    pub spawn_speed_hi: f64,
}

impl Default for RlSection {
    fn default() -> Self {
        Self {
            hidden: vec![512, 512],
            total_steps: 300_000,
            gamma: 0.99,
            batch_size: 256,
            replay_capacity: 100_000,
            lr_actor: 1e-5,
            lr_critic: 1e-4,
            tau: 0.005,
            alpha: 0.2,
            warmup_steps: 1_000,
            episode_timeout: 25.0,
            beta_accel: 0.25,
            beta_steer: 0.25,
            beta_speed: 0.25,
            beta_heading: 0.1,
            beta_fuel: 0.15,
            infeasible_penalty: 1e3,
            leader_gap_lo: 8.0,
            leader_gap_hi: 35.0,
            conflict_gap_lo: 2.0,
            conflict_gap_hi: 30.0,
            spawn_speed_lo: 5.0,
            spawn_speed_hi: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    pub vehicle: VehicleSection,
    pub limits: LimitsSection,
    pub mpc: MpcSection,
    pub scenario: ScenarioSection,
    pub rl: RlSection,
}

impl AppConfig {
    /// Parse a TOML file. A missing or empty file yields the defaults; parse
    /// errors carry the file position, and semantic violations name the field.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => {
                return Err(ConfigError::Io { path: path.display().to_string(), source: e })
            }
        };
        Self::from_toml_str(&text).map_err(|message| match message {
            ConfigParseOrInvalid::Parse(message) => {
                ConfigError::Parse { path: path.display().to_string(), message }
            }
            ConfigParseOrInvalid::Invalid(e) => e,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigParseOrInvalid> {
        let cfg: AppConfig = if text.trim().is_empty() {
            AppConfig::default()
        } else {
            toml::from_str(text).map_err(|e| ConfigParseOrInvalid::Parse(e.to_string()))?
        };
        cfg.validate().map_err(ConfigParseOrInvalid::Invalid)?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let text = self.to_canonical_toml();
        std::fs::write(path, text)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })
    }

    /// Canonical serialization: fixed section and key order, normalized
    /// formatting. Parsing this text reproduces `self` exactly.
    pub fn to_canonical_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// SHA-256 of the canonical serialization, hex-encoded.
    pub fn canonical_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_canonical_toml().as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn invalid(field: &'static str, reason: String) -> Result<(), ConfigError> {
            Err(ConfigError::Invalid { field, reason })
        }
        let v = &self.vehicle;
        if v.l_f <= 0.0 || v.l_r <= 0.0 {
            return invalid("vehicle.l_f/l_r", "axle distances must be positive".into());
        }
        let l = &self.limits;
        if l.accel_min >= l.accel_max {
            return invalid("limits.accel_min", format!("{} must be below accel_max {}", l.accel_min, l.accel_max));
        }
        if l.steer_min >= l.steer_max {
            return invalid("limits.steer_min", format!("{} must be below steer_max {}", l.steer_min, l.steer_max));
        }
        if l.v_min < 0.0 || l.v_min >= l.v_max {
            return invalid("limits.v_min", format!("need 0 <= v_min < v_max, got [{}, {}]", l.v_min, l.v_max));
        }
        let m = &self.mpc;
        if m.horizon == 0 {
            return invalid("mpc.horizon", "horizon must be at least 1".into());
        }
        if !(m.dt > 0.0) {
            return invalid("mpc.dt", format!("step {} must be positive", m.dt));
        }
        if m.v_des <= 0.0 || m.v_des > l.v_max {
            return invalid("mpc.v_des", format!("{} must lie in (0, v_max]", m.v_des));
        }
        if m.varphi <= 0.0 || m.delta <= 0.0 {
            return invalid("mpc.varphi/delta", "merging headway parameters must be positive".into());
        }
        if m.ellipse_a <= 0.0 || m.ellipse_b <= 0.0 || m.ellipse_v_floor <= 0.0 {
            return invalid("mpc.ellipse_a/b/v_floor", "ellipse parameters must be positive".into());
        }
        if !(m.row_margin >= 0.0) {
            return invalid("mpc.row_margin", format!("{} must be nonnegative", m.row_margin));
        }
        if !(m.steer_slew_rate >= 0.0) {
            return invalid("mpc.steer_slew_rate", format!("{} must be nonnegative", m.steer_slew_rate));
        }
        let s = &self.scenario;
        if s.road_length <= 0.0 || s.lane_width <= 0.0 {
            return invalid("scenario.road_length/lane_width", "geometry must be positive".into());
        }
        if !(s.ramp_angle > 0.0 && s.ramp_angle < std::f64::consts::FRAC_PI_2) {
            return invalid("scenario.ramp_angle", format!("{} must lie in (0, pi/2)", s.ramp_angle));
        }
        if s.arrival_rate_main < 0.0 || s.arrival_rate_ramp < 0.0 {
            return invalid("scenario.arrival_rate_*", "arrival rates cannot be negative".into());
        }
        if s.spawn_speed_lo <= 0.0 || s.spawn_speed_lo > s.spawn_speed_hi || s.spawn_speed_hi > l.v_max {
            return invalid(
                "scenario.spawn_speed_lo/hi",
                format!("need 0 < lo <= hi <= v_max, got [{}, {}]", s.spawn_speed_lo, s.spawn_speed_hi),
            );
        }
        if s.cav_target == 0 {
            return invalid("scenario.cav_target", "must complete at least one vehicle".into());
        }
        if s.time_cap <= 0.0 {
            return invalid("scenario.time_cap", "time cap must be positive".into());
        }
        let r = &self.rl;
        if r.hidden.is_empty() || r.hidden.iter().any(|h| *h == 0) {
            return invalid("rl.hidden", "hidden layers must be nonempty and positive".into());
        }
        if !(r.gamma > 0.0 && r.gamma < 1.0) {
            return invalid("rl.gamma", format!("{} must lie in (0, 1)", r.gamma));
        }
        if r.batch_size == 0 || r.batch_size > r.replay_capacity {
            return invalid(
                "rl.batch_size",
                format!("{} must be positive and at most replay_capacity {}", r.batch_size, r.replay_capacity),
            );
        }
        if r.lr_actor <= 0.0 || r.lr_critic <= 0.0 {
            return invalid("rl.lr_actor/lr_critic", "learning rates must be positive".into());
        }
        if !(r.tau > 0.0 && r.tau <= 1.0) {
            return invalid("rl.tau", format!("{} must lie in (0, 1]", r.tau));
        }
        if r.alpha < 0.0 {
            return invalid("rl.alpha", "temperature cannot be negative".into());
        }
        if r.episode_timeout <= 0.0 {
            return invalid("rl.episode_timeout", "timeout must be positive".into());
        }
        if r.leader_gap_lo <= 0.0 || r.leader_gap_lo > r.leader_gap_hi {
            return invalid("rl.leader_gap_lo/hi", "need 0 < lo <= hi".into());
        }
        if r.conflict_gap_lo <= 0.0 || r.conflict_gap_lo > r.conflict_gap_hi {
            return invalid("rl.conflict_gap_lo/hi", "need 0 < lo <= hi".into());
        }
        if r.spawn_speed_lo <= 0.0 || r.spawn_speed_lo > r.spawn_speed_hi {
            return invalid("rl.spawn_speed_lo/hi", "need 0 < lo <= hi".into());
        }
        Ok(())
    }
}

/// Split error type for string-based parsing, so callers without a path can
/// still distinguish syntax from semantics.
#[derive(Debug)]
pub enum ConfigParseOrInvalid {
    Parse(String),
    Invalid(ConfigError),
}

impl std::fmt::Display for ConfigParseOrInvalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Parse(m) => write!(f, "{m}"),
            Self::Invalid(e) => write!(f, "{e}"),
        }
    }
}
