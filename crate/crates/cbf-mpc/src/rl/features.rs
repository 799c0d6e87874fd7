//! Observation, action, and reward maps between the merging world and the
//! learner.
//!
//! Observations are 14 physical quantities (ego pose/speed, previous control,
//! same-road leader, crossing conflict) affinely normalized to [-1, 1] and
//! clamped. Absent neighbors are encoded as "far away, matching the desired
//! speed" plus an explicit presence flag, so the network never sees a
//! spurious nearby vehicle.
//!
//! Actions are the policy's squashed outputs in (-1, 1)^16, mapped to the
//! controller parameter box log-uniformly: -1 is the lower bound, +1 the
//! upper, 0 the geometric mean. Parameters span two orders of magnitude, so
//! the log map gives the policy comparable sensitivity everywhere.

use nalgebra::DVector;

use crate::config::AppConfig;
use crate::controller::{theta_bounds, ControllerTheta, THETA_DIM};
use crate::sim::metrics::fuel_rate;
use crate::sim::world::{AgentStepInfo, SceneObs};

pub const OBS_DIM: usize = 14;

/// Wrap an angle difference into (-pi, pi].
fn wrap_angle(a: f64) -> f64 {
    a.sin().atan2(a.cos())
}

/// Affine normalizer for the observation vector. The ranges are frozen into
/// checkpoints so evaluation always matches training.
#[derive(Debug, Clone)]
pub struct Featurizer {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Featurizer {
    pub fn from_config(cfg: &AppConfig) -> Self {
        let l = cfg.scenario.road_length;
        let half = cfg.scenario.lane_width / 2.0;
        let v_hi = cfg.limits.v_max;
        let lo = vec![
            0.0,                   // ego progress
            -half,                 // ego lateral offset
            -0.8,                  // ego heading error (rad)
            0.0,                   // ego speed
            cfg.limits.accel_min,  // previous acceleration
            cfg.limits.steer_min,  // previous steering
            0.0,                   // leader gap
            -v_hi,                 // leader relative speed
            0.0,                   // leader speed
            0.0,                   // leader present
            -l,                    // conflict progress gap
            0.0,                   // conflict speed
            0.0,                   // conflict distance to merge
            0.0,                   // conflict present
        ];
        let hi = vec![
            l,
            half,
            0.8,
            v_hi,
            cfg.limits.accel_max,
            cfg.limits.steer_max,
            l,
            v_hi,
            v_hi,
            1.0,
            l,
            v_hi,
            l,
            1.0,
        ];
        Self { lo, hi }
    }

    pub fn from_ranges(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), OBS_DIM);
        assert_eq!(hi.len(), OBS_DIM);
        Self { lo, hi }
    }

    /// Raw physical features before normalization.
    pub fn raw_features(&self, obs: &SceneObs) -> [f64; OBS_DIM] {
        let l = obs.route.length;
        let s_ego = obs.route.progress(obs.ego.x, obs.ego.y);
        let lat = obs.route.lateral_offset(obs.ego.x, obs.ego.y);
        let head_err = wrap_angle(obs.ego.psi - obs.route.heading);

        let (gap, dv, lv, lpresent) = match &obs.leader {
            Some(lead) => {
                let s_l = obs.route.progress(lead.x, lead.y);
                (s_l - s_ego, lead.v - obs.ego.v, lead.v, 1.0)
            }
            None => (l, 0.0, obs.v_des, 0.0),
        };
        let (cgap, cv, cdist, cpresent) = match &obs.conflict {
            Some(c) => {
                let s_c = obs.other_route.progress(c.x, c.y);
                (s_c - s_ego, c.v, obs.other_route.length - s_c, 1.0)
            }
            None => (l, obs.v_des, l, 0.0),
        };

        [
            s_ego,
            lat,
            head_err,
            obs.ego.v,
            obs.prev_control.accel,
            obs.prev_control.steer,
            gap,
            dv,
            lv,
            lpresent,
            cgap,
            cv,
            cdist,
            cpresent,
        ]
    }

    /// Normalized observation in [-1, 1]^14.
    pub fn observe(&self, obs: &SceneObs) -> DVector<f64> {
        let raw = self.raw_features(obs);
        DVector::from_fn(OBS_DIM, |i, _| {
            let span = self.hi[i] - self.lo[i];
            let t = if span > 0.0 { 2.0 * (raw[i] - self.lo[i]) / span - 1.0 } else { 0.0 };
            t.clamp(-1.0, 1.0)
        })
    }
}

/// Log-uniform map from squashed actions to the controller parameter box.
#[derive(Debug, Clone)]
pub struct ActionMap {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Default for ActionMap {
    fn default() -> Self {
        let (lo, hi) = theta_bounds();
        Self { lo: lo.to_vec(), hi: hi.to_vec() }
    }
}

impl ActionMap {
    pub fn from_ranges(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), THETA_DIM);
        assert_eq!(hi.len(), THETA_DIM);
        Self { lo, hi }
    }

    pub fn theta(&self, raw: &DVector<f64>) -> ControllerTheta {
        assert_eq!(raw.len(), THETA_DIM);
        let mut flat = [0.0; THETA_DIM];
        for i in 0..THETA_DIM {
            let t = ((raw[i] + 1.0) / 2.0).clamp(0.0, 1.0);
            flat[i] = (self.lo[i].ln() * (1.0 - t) + self.hi[i].ln() * t).exp();
        }
        ControllerTheta::from_flat(&flat)
    }

    /// Inverse of [`ActionMap::theta`], for round-trip checks.
    pub fn raw_for(&self, theta: &ControllerTheta) -> DVector<f64> {
        let flat = theta.flatten();
        DVector::from_fn(THETA_DIM, |i, _| {
            let t = (flat[i].ln() - self.lo[i].ln()) / (self.hi[i].ln() - self.lo[i].ln());
            2.0 * t - 1.0
        })
    }
}

/// Per-step reward: quadratic comfort/tracking penalties, fuel, and a large
/// penalty whenever the step's horizon problem was infeasible.
#[derive(Debug, Clone, Copy)]
pub struct RewardParams {
    pub beta_accel: f64,
    pub beta_steer: f64,
    pub beta_speed: f64,
    pub beta_heading: f64,
    pub beta_fuel: f64,
    pub infeasible_penalty: f64,
    pub v_des: f64,
}

impl RewardParams {
    pub fn from_config(cfg: &AppConfig) -> Self {
        Self {
            beta_accel: cfg.rl.beta_accel,
            beta_steer: cfg.rl.beta_steer,
            beta_speed: cfg.rl.beta_speed,
            beta_heading: cfg.rl.beta_heading,
            beta_fuel: cfg.rl.beta_fuel,
            infeasible_penalty: cfg.rl.infeasible_penalty,
            v_des: cfg.mpc.v_des,
        }
    }

    pub fn reward(&self, road_heading: f64, info: &AgentStepInfo) -> f64 {
        let u = info.control.accel;
        let phi = info.control.steer;
        let v = info.post_state.v;
        let dpsi = wrap_angle(info.post_state.psi - road_heading);
        let infeasible = if info.feasible { 0.0 } else { 1.0 };
        -(self.beta_accel * u * u
            + self.beta_steer * phi * phi
            + self.beta_speed * (v - self.v_des) * (v - self.v_des)
            + self.beta_heading * dpsi * dpsi
            + self.beta_fuel * fuel_rate(v, u)
            + self.infeasible_penalty * infeasible)
    }
}
