//! Versioned JSON checkpoints for trained parameter policies.
//!
//! A checkpoint is self-contained: the actor network weights, the
//! observation normalization ranges, and the parameter box the action maps
//! into. Loading one therefore reproduces the exact evaluation-time policy
//! regardless of the current configuration; the hash of the training
//! configuration is stored for provenance.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControllerTheta, THETA_DIM};
use crate::sim::world::{SceneObs, ThetaPolicy};

use super::features::{ActionMap, Featurizer, OBS_DIM};
use super::mlp::{Layer, Mlp};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {found} (expected {CHECKPOINT_VERSION})")]
    Version { found: u32 },
    #[error("malformed checkpoint: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerData {
    pub rows: usize,
    pub cols: usize,
    /// Row-major weight entries.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub version: u32,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: Vec<usize>,
    pub layers: Vec<LayerData>,
    pub obs_lo: Vec<f64>,
    pub obs_hi: Vec<f64>,
    pub theta_lo: Vec<f64>,
    pub theta_hi: Vec<f64>,
    pub log_std_lo: f64,
    pub log_std_hi: f64,
    /// Hash of the configuration the policy was trained under.
    pub config_hash: String,
}

impl PolicyCheckpoint {
    pub fn from_parts(
        actor: &Mlp,
        featurizer: &Featurizer,
        map: &ActionMap,
        log_std_lo: f64,
        log_std_hi: f64,
        config_hash: String,
    ) -> Self {
        let sizes = actor.sizes();
        let obs_dim = sizes[0];
        let act_dim = sizes[sizes.len() - 1] / 2;
        let hidden = sizes[1..sizes.len() - 1].to_vec();
        let layers = actor
            .layers
            .iter()
            .map(|l| LayerData {
                rows: l.w.nrows(),
                cols: l.w.ncols(),
                w: (0..l.w.nrows())
                    .flat_map(|i| (0..l.w.ncols()).map(move |j| (i, j)))
                    .map(|(i, j)| l.w[(i, j)])
                    .collect(),
                b: l.b.as_slice().to_vec(),
            })
            .collect();
        Self {
            version: CHECKPOINT_VERSION,
            obs_dim,
            act_dim,
            hidden,
            layers,
            obs_lo: featurizer.lo.clone(),
            obs_hi: featurizer.hi.clone(),
            theta_lo: map.lo.clone(),
            theta_hi: map.hi.clone(),
            log_std_lo,
            log_std_hi,
            config_hash,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let text = serde_json::to_string_pretty(self)?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(text.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path)?;
        let ck: PolicyCheckpoint = serde_json::from_str(&text)?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn validate(&self) -> Result<(), CheckpointError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version { found: self.version });
        }
        if self.obs_dim != OBS_DIM {
            return Err(CheckpointError::Shape(format!(
                "observation dimension {} (expected {OBS_DIM})",
                self.obs_dim
            )));
        }
        if self.act_dim != THETA_DIM {
            return Err(CheckpointError::Shape(format!(
                "action dimension {} (expected {THETA_DIM})",
                self.act_dim
            )));
        }
        if self.obs_lo.len() != self.obs_dim || self.obs_hi.len() != self.obs_dim {
            return Err(CheckpointError::Shape("normalization range length".into()));
        }
        if self.theta_lo.len() != self.act_dim || self.theta_hi.len() != self.act_dim {
            return Err(CheckpointError::Shape("parameter box length".into()));
        }
        let mut expected = vec![self.obs_dim];
        expected.extend_from_slice(&self.hidden);
        expected.push(2 * self.act_dim);
        if self.layers.len() + 1 != expected.len() {
            return Err(CheckpointError::Shape(format!(
                "{} layers for {} declared sizes",
                self.layers.len(),
                expected.len()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.rows != expected[l + 1] || layer.cols != expected[l] {
                return Err(CheckpointError::Shape(format!(
                    "layer {l} is {}x{} (expected {}x{})",
                    layer.rows,
                    layer.cols,
                    expected[l + 1],
                    expected[l]
                )));
            }
            if layer.w.len() != layer.rows * layer.cols || layer.b.len() != layer.rows {
                return Err(CheckpointError::Shape(format!("layer {l} entry counts")));
            }
            if layer.w.iter().chain(&layer.b).any(|v| !v.is_finite()) {
                return Err(CheckpointError::Shape(format!("layer {l} has non-finite entries")));
            }
        }
        Ok(())
    }

    /// Rebuild the actor network.
    pub fn actor(&self) -> Mlp {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let w = DMatrix::from_fn(l.rows, l.cols, |i, j| l.w[i * l.cols + j]);
                Layer { w, b: DVector::from_column_slice(&l.b) }
            })
            .collect();
        Mlp { layers }
    }

    /// Deterministic evaluation policy (tanh of the policy mean).
    pub fn policy(&self) -> CheckpointPolicy {
        CheckpointPolicy {
            actor: self.actor(),
            featurizer: Featurizer::from_ranges(self.obs_lo.clone(), self.obs_hi.clone()),
            map: ActionMap::from_ranges(self.theta_lo.clone(), self.theta_hi.clone()),
            act_dim: self.act_dim,
        }
    }
}

pub struct CheckpointPolicy {
    actor: Mlp,
    featurizer: Featurizer,
    map: ActionMap,
    act_dim: usize,
}

impl ThetaPolicy for CheckpointPolicy {
    fn theta(&mut self, obs: &SceneObs) -> ControllerTheta {
        let x = self.featurizer.observe(obs);
        let out = self.actor.forward_one(&x);
        let raw = DVector::from_fn(self.act_dim, |i, _| out[i].tanh());
        self.map.theta(&raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AppConfig;
    use crate::controller::theta_bounds;
    use crate::dynamics::ControlInput;
    use crate::sim::scenario::{MergeGeometry, Road};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_checkpoint() -> PolicyCheckpoint {
        let cfg = AppConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let actor = Mlp::new(&[OBS_DIM, 16, 2 * THETA_DIM], &mut rng);
        PolicyCheckpoint::from_parts(
            &actor,
            &Featurizer::from_config(&cfg),
            &ActionMap::default(),
            -5.0,
            2.0,
            cfg.canonical_hash(),
        )
    }

    fn probe_obs() -> SceneObs {
        let cfg = AppConfig::default();
        let g = MergeGeometry::from_config(&cfg);
        SceneObs {
            cav_id: 0,
            ego: g.spawn_state(Road::Ramp, 30.0, 11.0),
            prev_control: ControlInput::new(0.5, 0.01),
            leader: Some(g.spawn_state(Road::Ramp, 55.0, 9.0)),
            conflict: Some(g.spawn_state(Road::Main, 42.0, 12.0)),
            road: Road::Ramp,
            v_des: cfg.mpc.v_des,
            route: *g.route(Road::Ramp),
            other_route: *g.route(Road::Main),
        }
    }

    #[test]
    fn save_load_round_trip_reproduces_the_policy() {
        let ck = sample_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        ck.save(&path).unwrap();
        let loaded = PolicyCheckpoint::load(&path).unwrap();

        let obs = probe_obs();
        let a = ck.policy().theta(&obs).flatten();
        let b = loaded.policy().theta(&obs).flatten();
        for i in 0..THETA_DIM {
            assert_eq!(a[i].to_bits(), b[i].to_bits(), "entry {i}");
        }
    }

    #[test]
    fn checkpoint_policy_stays_inside_the_parameter_box() {
        let ck = sample_checkpoint();
        let mut policy = ck.policy();
        let theta = policy.theta(&probe_obs()).flatten();
        let (lo, hi) = theta_bounds();
        for i in 0..THETA_DIM {
            assert!(theta[i] >= lo[i] && theta[i] <= hi[i], "entry {i} = {}", theta[i]);
        }
    }

    #[test]
    fn version_and_shape_are_validated() {
        let mut ck = sample_checkpoint();
        ck.version = 99;
        assert!(matches!(ck.validate(), Err(CheckpointError::Version { found: 99 })));

        let mut bad = sample_checkpoint();
        bad.layers[0].w.pop();
        assert!(matches!(bad.validate(), Err(CheckpointError::Shape(_))));

        let mut wrong_dim = sample_checkpoint();
        wrong_dim.obs_dim = 3;
        assert!(matches!(wrong_dim.validate(), Err(CheckpointError::Shape(_))));
    }

    #[test]
    fn load_rejects_corrupted_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.json");
        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(PolicyCheckpoint::load(&path), Err(CheckpointError::Parse(_))));
    }
}
