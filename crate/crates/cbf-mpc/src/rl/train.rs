//! Training loop: short randomized merging scenes driven by the learner.
//!
//! Each episode places the learning vehicle at the start of a random road,
//! usually gives it a same-road leader (random gap and speed ahead) and a
//! crossing vehicle on the other road (random progress head start), and runs
//! until the learner crosses the merge point or the episode times out.
//! Neighbors drive with fixed preset parameters drawn per episode, so the
//! learner faces a spread of conservative-to-aggressive traffic. Close
//! crossing gaps are sampled on purpose — including starts where the merging
//! constraint begins violated and must be recovered — because that is where
//! the infeasibility penalty carries signal.
//!
//! One environment step is one learner decision (0.2 s of simulated time).
//! The first `warmup_steps` actions are uniform in the squashed action box;
//! afterwards the policy samples, and every step triggers one SAC update.
//! All randomness flows from per-purpose streams of the master seed, so runs
//! are bit-reproducible.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::AppConfig;
use crate::controller::ControllerTheta;
use crate::sim::scenario::Road;
use crate::sim::world::{SceneObs, ThetaPolicy, World};

use super::features::{ActionMap, Featurizer, RewardParams, OBS_DIM};
use super::replay::{ReplayBuffer, Transition};
use super::sac::{SacAgent, SacConfig};

/// Snapshot handed to the progress callback every few hundred steps.
#[derive(Debug, Clone)]
pub struct ProgressSnapshot {
    pub env_steps: u64,
    pub total_steps: u64,
    pub episodes: u64,
    /// Mean return over the most recent completed episodes (up to 20).
    pub recent_return: f64,
    /// Infeasible-step fraction over the same window.
    pub recent_infeasible_rate: f64,
    /// Gradient updates applied so far; the losses below are NaN until the
    /// first one (warmup collects experience without updating).
    pub gradient_updates: u64,
    pub critic_loss: f64,
    pub actor_loss: f64,
}

pub struct TrainStats {
    pub env_steps: u64,
    pub episodes: u64,
    pub episode_returns: Vec<f64>,
    pub episode_infeasible: Vec<u64>,
    pub episode_lengths: Vec<u64>,
}

pub struct TrainOutput {
    pub agent: SacAgent,
    pub featurizer: Featurizer,
    pub action_map: ActionMap,
    pub stats: TrainStats,
}

/// Per-step policy adapter: the learner acts for the ego vehicle, everyone
/// else uses their episode preset.
struct EgoPolicy<'a> {
    ego_id: u64,
    warmup: bool,
    agent: &'a mut SacAgent,
    featurizer: &'a Featurizer,
    map: &'a ActionMap,
    neighbor_theta: &'a [(u64, ControllerTheta)],
    warmup_rng: &'a mut ChaCha8Rng,
    captured: Option<(DVector<f64>, DVector<f64>)>,
}

impl ThetaPolicy for EgoPolicy<'_> {
    fn theta(&mut self, obs: &SceneObs) -> ControllerTheta {
        if obs.cav_id != self.ego_id {
            return self
                .neighbor_theta
                .iter()
                .find(|(id, _)| *id == obs.cav_id)
                .map(|(_, t)| *t)
                .unwrap_or_else(ControllerTheta::moderately_conservative);
        }
        let x = self.featurizer.observe(obs);
        let a = if self.warmup {
            self.agent.random_action(self.warmup_rng)
        } else {
            self.agent.act_sample(&x)
        };
        let theta = self.map.theta(&a);
        self.captured = Some((x, a));
        theta
    }
}

fn random_preset(rng: &mut ChaCha8Rng) -> ControllerTheta {
    let names = ControllerTheta::PRESET_NAMES;
    ControllerTheta::preset(names[rng.gen_range(0..names.len())]).unwrap()
}

/// One randomized training scene. Returns the world, the learner's id, and
/// the neighbors' preset assignments.
fn build_scene(
    cfg: &AppConfig,
    rng: &mut ChaCha8Rng,
) -> (World, u64, Vec<(u64, ControllerTheta)>) {
    let mut scene_cfg = cfg.clone();
    scene_cfg.scenario.arrival_rate_main = 0.0;
    scene_cfg.scenario.arrival_rate_ramp = 0.0;
    let mut world = World::new(scene_cfg, 0);

    let ego_road = if rng.gen::<bool>() { Road::Main } else { Road::Ramp };
    let mut neighbor_theta = Vec::new();

    if rng.gen::<f64>() < 0.8 {
        let gap = rng.gen_range(cfg.rl.leader_gap_lo..cfg.rl.leader_gap_hi);
        let v = rng.gen_range(cfg.rl.spawn_speed_lo..cfg.rl.spawn_speed_hi);
        let id = world.insert_agent(ego_road, gap, v);
        neighbor_theta.push((id, random_preset(rng)));
    }
    if rng.gen::<f64>() < 0.8 {
        let gap = rng.gen_range(cfg.rl.conflict_gap_lo..cfg.rl.conflict_gap_hi);
        let v = rng.gen_range(cfg.rl.spawn_speed_lo..cfg.rl.spawn_speed_hi);
        let id = world.insert_agent(ego_road.other(), gap, v);
        neighbor_theta.push((id, random_preset(rng)));
    }
    let ego_v = rng.gen_range(cfg.rl.spawn_speed_lo..cfg.rl.spawn_speed_hi);
    let ego_id = world.insert_agent(ego_road, 0.0, ego_v);
    (world, ego_id, neighbor_theta)
}

/// Train a parameter policy for `total_steps` environment steps.
pub fn train_policy(
    cfg: &AppConfig,
    seed: u64,
    total_steps: u64,
    hidden: &[usize],
    mut progress: impl FnMut(&ProgressSnapshot),
) -> TrainOutput {
    let featurizer = Featurizer::from_config(cfg);
    let action_map = ActionMap::default();
    let reward = RewardParams::from_config(cfg);

    let mut sac_cfg = SacConfig::new(OBS_DIM, crate::controller::THETA_DIM, hidden.to_vec());
    sac_cfg.gamma = cfg.rl.gamma;
    sac_cfg.tau = cfg.rl.tau;
    sac_cfg.alpha = cfg.rl.alpha;
    sac_cfg.lr_actor = cfg.rl.lr_actor;
    sac_cfg.lr_critic = cfg.rl.lr_critic;
    let mut agent = SacAgent::new(sac_cfg, seed);
    let mut replay = ReplayBuffer::new(cfg.rl.replay_capacity, seed);

    let mut scene_rng = ChaCha8Rng::seed_from_u64(seed);
    scene_rng.set_stream(30);
    let mut warmup_rng = ChaCha8Rng::seed_from_u64(seed);
    warmup_rng.set_stream(31);

    let warmup = cfg.rl.warmup_steps as u64;
    let batch = cfg.rl.batch_size;
    let max_ep_steps = (cfg.rl.episode_timeout / cfg.mpc.dt).round() as u64;

    let mut stats = TrainStats {
        env_steps: 0,
        episodes: 0,
        episode_returns: Vec::new(),
        episode_infeasible: Vec::new(),
        episode_lengths: Vec::new(),
    };
    let mut last_critic_loss = f64::NAN;
    let mut last_actor_loss = f64::NAN;
    let mut gradient_updates = 0u64;

    'training: loop {
        let (mut world, ego_id, neighbor_theta) = build_scene(cfg, &mut scene_rng);
        let ego_road = world.agents.iter().find(|a| a.id == ego_id).unwrap().road;
        let road_heading = world.geometry.route(ego_road).heading;

        let mut ep_return = 0.0;
        let mut ep_infeasible = 0u64;
        let mut ep_len = 0u64;
        for step_in_ep in 0..max_ep_steps {
            let mut policy = EgoPolicy {
                ego_id,
                warmup: stats.env_steps < warmup,
                agent: &mut agent,
                featurizer: &featurizer,
                map: &action_map,
                neighbor_theta: &neighbor_theta,
                warmup_rng: &mut warmup_rng,
                captured: None,
            };
            let infos = world.step(&mut policy);
            let (obs_v, act_v) = policy.captured.take().expect("learner was stepped");
            let info = infos
                .iter()
                .find(|i| i.id == ego_id)
                .expect("learner is active until it exits");

            let r = reward.reward(road_heading, info);
            ep_return += r;
            ep_len += 1;
            if !info.feasible {
                ep_infeasible += 1;
            }
            let done = info.exited;
            let next_obs = if done {
                vec![0.0; OBS_DIM]
            } else {
                let obs = world.observe(ego_id).expect("learner still in the world");
                featurizer.observe(&obs).as_slice().to_vec()
            };
            replay.push(Transition {
                obs: obs_v.as_slice().to_vec(),
                act: act_v.as_slice().to_vec(),
                reward: r,
                next_obs,
                done,
            });
            stats.env_steps += 1;

            if stats.env_steps >= warmup && replay.len() >= batch {
                let update = agent.update(&replay.sample(batch));
                last_critic_loss = update.critic_loss;
                last_actor_loss = update.actor_loss;
                gradient_updates += 1;
            }

            if stats.env_steps % 500 == 0 || stats.env_steps == total_steps {
                let window = 20.min(stats.episode_returns.len());
                let (recent_return, recent_rate) = if window > 0 {
                    let rets = &stats.episode_returns[stats.episode_returns.len() - window..];
                    let infs = &stats.episode_infeasible[stats.episode_infeasible.len() - window..];
                    let lens = &stats.episode_lengths[stats.episode_lengths.len() - window..];
                    let steps: u64 = lens.iter().sum();
                    (
                        rets.iter().sum::<f64>() / window as f64,
                        infs.iter().sum::<u64>() as f64 / steps.max(1) as f64,
                    )
                } else {
                    (f64::NAN, f64::NAN)
                };
                progress(&ProgressSnapshot {
                    env_steps: stats.env_steps,
                    total_steps,
                    episodes: stats.episodes,
                    recent_return,
                    recent_infeasible_rate: recent_rate,
                    gradient_updates,
                    critic_loss: last_critic_loss,
                    actor_loss: last_actor_loss,
                });
            }

            if stats.env_steps >= total_steps {
                stats.episodes += 1;
                stats.episode_returns.push(ep_return);
                stats.episode_infeasible.push(ep_infeasible);
                stats.episode_lengths.push(ep_len);
                break 'training;
            }
            if done || step_in_ep + 1 == max_ep_steps {
                break;
            }
        }
        stats.episodes += 1;
        stats.episode_returns.push(ep_return);
        stats.episode_infeasible.push(ep_infeasible);
        stats.episode_lengths.push(ep_len);
    }

    TrainOutput { agent, featurizer, action_map, stats }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> AppConfig {
        let mut cfg = AppConfig::default();
        cfg.rl.warmup_steps = 20;
        cfg.rl.batch_size = 16;
        cfg.rl.episode_timeout = 5.0;
        cfg
    }

    #[test]
    fn scenes_place_the_learner_at_the_road_origin() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        rng.set_stream(30);
        for _ in 0..10 {
            let (world, ego_id, neighbors) = build_scene(&cfg, &mut rng);
            let ego = world.agents.iter().find(|a| a.id == ego_id).unwrap();
            let s = world.geometry.route(ego.road).progress(ego.state.x, ego.state.y);
            assert!(s.abs() < 1e-9);
            assert!(world.agents.len() >= 1 && world.agents.len() <= 3);
            assert_eq!(neighbors.len(), world.agents.len() - 1);
            // Neighbors sit strictly ahead on their own roads.
            for a in &world.agents {
                if a.id != ego_id {
                    let sa = world.geometry.route(a.road).progress(a.state.x, a.state.y);
                    assert!(sa > 0.0);
                }
            }
        }
    }

    #[test]
    fn short_training_run_collects_transitions_and_updates() {
        let cfg = tiny_cfg();
        let mut snapshots = Vec::new();
        let out = train_policy(&cfg, 9, 60, &[8, 8], |p| snapshots.push(p.clone()));
        assert_eq!(out.stats.env_steps, 60);
        assert!(out.stats.episodes >= 1);
        assert_eq!(
            out.stats.episode_lengths.iter().sum::<u64>(),
            60,
            "episode lengths must account for every env step"
        );
        for r in &out.stats.episode_returns {
            assert!(r.is_finite());
        }
    }

    #[test]
    fn training_is_deterministic_for_a_seed() {
        let cfg = tiny_cfg();
        let a = train_policy(&cfg, 4, 40, &[8], |_| {});
        let b = train_policy(&cfg, 4, 40, &[8], |_| {});
        assert_eq!(
            a.agent.actor.layers[0].w[(0, 0)].to_bits(),
            b.agent.actor.layers[0].w[(0, 0)].to_bits()
        );
        assert_eq!(a.stats.episode_returns, b.stats.episode_returns);
    }
}
