//! Soft actor-critic with twin Q networks, written directly against the MLP
//! layer (no autodiff framework).
//!
//! The policy is a tanh-squashed Gaussian: the actor network outputs a mean
//! and a pre-squash log standard deviation per action dimension; the log
//! standard deviation is soft-clamped into a fixed range with a tanh so the
//! whole policy stays smooth (hard clipping would create dead gradients at
//! the rails). Entropy temperature is fixed.
//!
//! Gradients are chained by hand:
//!
//! * critics: plain MSE toward the Bellman target built from the target
//!   networks, a fresh policy sample at the next state, and the entropy term;
//! * actor: reparameterized sample `a = tanh(mu + sigma * eps)` pushed through
//!   the minimum of the two critics (gradient routed per sample through
//!   whichever critic attains the minimum) plus the analytic gradient of the
//!   sample's log-probability.
//!
//! Every stochastic draw comes from a dedicated seeded stream, so training is
//! bit-reproducible.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mlp::{Adam, ForwardPass, Gradients, Mlp};
use super::replay::TransitionBatch;

/// Squash correction constant: keeps log(1 - a^2) finite at the rails.
const SQUASH_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct SacConfig {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub tau: f64,
    pub alpha: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub log_std_lo: f64,
    pub log_std_hi: f64,
}

impl SacConfig {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: Vec<usize>) -> Self {
        Self {
            obs_dim,
            act_dim,
            hidden,
            gamma: 0.99,
            tau: 0.005,
            alpha: 0.2,
            lr_actor: 1e-5,
            lr_critic: 1e-4,
            log_std_lo: -5.0,
            log_std_hi: 2.0,
        }
    }
}

pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub mean_q: f64,
    pub mean_log_prob: f64,
}

pub struct SacAgent {
    pub cfg: SacConfig,
    pub actor: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    opt_actor: Adam,
    opt_q1: Adam,
    opt_q2: Adam,
    noise_rng: ChaCha8Rng,
}

/// Cached policy head evaluation for one observation batch.
pub(crate) struct PolicyEval {
    fwd: ForwardPass,
    mu: DMatrix<f64>,
    log_std: DMatrix<f64>,
    std: DMatrix<f64>,
    /// tanh of the raw log-std head, kept for the soft-clamp chain rule.
    traw: DMatrix<f64>,
}

impl SacAgent {
    pub fn new(cfg: SacConfig, seed: u64) -> Self {
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        init_rng.set_stream(21);
        let mut actor_sizes = vec![cfg.obs_dim];
        actor_sizes.extend_from_slice(&cfg.hidden);
        actor_sizes.push(2 * cfg.act_dim);
        let mut critic_sizes = vec![cfg.obs_dim + cfg.act_dim];
        critic_sizes.extend_from_slice(&cfg.hidden);
        critic_sizes.push(1);

        let actor = Mlp::new(&actor_sizes, &mut init_rng);
        let q1 = Mlp::new(&critic_sizes, &mut init_rng);
        let q2 = Mlp::new(&critic_sizes, &mut init_rng);
        let q1_target = q1.clone();
        let q2_target = q2.clone();
        let opt_actor = Adam::new(&actor, cfg.lr_actor);
        let opt_q1 = Adam::new(&q1, cfg.lr_critic);
        let opt_q2 = Adam::new(&q2, cfg.lr_critic);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
        noise_rng.set_stream(22);
        Self { cfg, actor, q1, q2, q1_target, q2_target, opt_actor, opt_q1, opt_q2, noise_rng }
    }

    fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
        // Box-Muller; u1 in (0, 1] avoids ln(0).
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    fn draw_noise(&mut self, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| Self::standard_normal(&mut self.noise_rng))
    }

    pub(crate) fn eval_policy(&self, obs: &DMatrix<f64>) -> PolicyEval {
        let fwd = self.actor.forward(obs);
        let a = self.cfg.act_dim;
        let out = fwd.output();
        let mu = out.rows(0, a).clone_owned();
        let raw = out.rows(a, a).clone_owned();
        let traw = raw.map(|x| x.tanh());
        let mid = 0.5 * (self.cfg.log_std_lo + self.cfg.log_std_hi);
        let half = 0.5 * (self.cfg.log_std_hi - self.cfg.log_std_lo);
        let log_std = traw.map(|t| mid + half * t);
        let std = log_std.map(f64::exp);
        PolicyEval { fwd, mu, log_std, std, traw }
    }

    /// Squash a reparameterized sample and compute per-sample log-probability.
    pub(crate) fn squash(&self, pe: &PolicyEval, eps: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let pre = &pe.mu + pe.std.component_mul(eps);
        let act = pre.map(f64::tanh);
        let b = act.ncols();
        let mut logp = DVector::zeros(b);
        let half_ln_tau = 0.5 * std::f64::consts::TAU.ln();
        for j in 0..b {
            let mut s = 0.0;
            for i in 0..act.nrows() {
                let e = eps[(i, j)];
                let a = act[(i, j)];
                s += -pe.log_std[(i, j)] - 0.5 * e * e - half_ln_tau - (1.0 - a * a + SQUASH_EPS).ln();
            }
            logp[j] = s;
        }
        (act, logp)
    }

    /// Stochastic action for environment interaction.
    pub fn act_sample(&mut self, obs: &DVector<f64>) -> DVector<f64> {
        let batch = DMatrix::from_column_slice(obs.len(), 1, obs.as_slice());
        let pe = self.eval_policy(&batch);
        let eps = self.draw_noise(self.cfg.act_dim, 1);
        let (a, _) = self.squash(&pe, &eps);
        DVector::from_column_slice(a.as_slice())
    }

    /// Deterministic action (tanh of the mean) for evaluation.
    pub fn act_mean(&self, obs: &DVector<f64>) -> DVector<f64> {
        let batch = DMatrix::from_column_slice(obs.len(), 1, obs.as_slice());
        let pe = self.eval_policy(&batch);
        DVector::from_iterator(self.cfg.act_dim, pe.mu.column(0).iter().map(|m| m.tanh()))
    }

    fn stack(obs: &DMatrix<f64>, act: &DMatrix<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(obs.nrows() + act.nrows(), obs.ncols());
        m.view_mut((0, 0), (obs.nrows(), obs.ncols())).copy_from(obs);
        m.view_mut((obs.nrows(), 0), (act.nrows(), act.ncols())).copy_from(act);
        m
    }

    /// MSE loss and parameter gradients of one critic against fixed targets.
    pub(crate) fn critic_loss_and_grads(
        critic: &Mlp,
        input: &DMatrix<f64>,
        y: &DVector<f64>,
    ) -> (f64, Gradients) {
        let b = input.ncols();
        let fwd = critic.forward(input);
        let q = fwd.output();
        let mut dout = DMatrix::zeros(1, b);
        let mut loss = 0.0;
        for j in 0..b {
            let e = q[(0, j)] - y[j];
            loss += e * e;
            dout[(0, j)] = 2.0 * e / b as f64;
        }
        let (grads, _) = critic.backward(&fwd, &dout);
        (loss / b as f64, grads)
    }

    /// Actor loss `mean(alpha * log pi - min(Q1, Q2))` under fixed noise, with
    /// gradients for the actor parameters only. Exposed for gradient checks.
    pub(crate) fn actor_loss_and_grads(
        &self,
        obs: &DMatrix<f64>,
        eps: &DMatrix<f64>,
    ) -> (f64, Gradients) {
        let b = obs.ncols();
        let a_dim = self.cfg.act_dim;
        let alpha = self.cfg.alpha;
        let pe = self.eval_policy(obs);
        let (act, logp) = self.squash(&pe, eps);

        let qin = Self::stack(obs, &act);
        let f1 = self.q1.forward(&qin);
        let f2 = self.q2.forward(&qin);
        let q1v = f1.output();
        let q2v = f2.output();

        let mut loss = 0.0;
        let mut dq1 = DMatrix::zeros(1, b);
        let mut dq2 = DMatrix::zeros(1, b);
        let scale = 1.0 / b as f64;
        for j in 0..b {
            let (qmin, first) =
                if q1v[(0, j)] <= q2v[(0, j)] { (q1v[(0, j)], true) } else { (q2v[(0, j)], false) };
            loss += alpha * logp[j] - qmin;
            if first {
                dq1[(0, j)] = -scale;
            } else {
                dq2[(0, j)] = -scale;
            }
        }
        loss *= scale;

        // Q path: gradient with respect to the action slice of the critic
        // inputs (the observation slice is data, not a parameter).
        let (_, din1) = self.q1.backward(&f1, &dq1);
        let (_, din2) = self.q2.backward(&f2, &dq2);
        let da_q = din1.rows(self.cfg.obs_dim, a_dim) + din2.rows(self.cfg.obs_dim, a_dim);

        // Assemble dL/d(actor outputs): top half mean, bottom half raw
        // log-std head (before the tanh soft clamp).
        let half = 0.5 * (self.cfg.log_std_hi - self.cfg.log_std_lo);
        let mut dout = DMatrix::zeros(2 * a_dim, b);
        for j in 0..b {
            for i in 0..a_dim {
                let a = act[(i, j)];
                let tanh_der = 1.0 - a * a;
                // Entropy path also depends on the action through the squash
                // correction term of log pi.
                let dl_da = da_q[(i, j)] + scale * alpha * 2.0 * a / (1.0 - a * a + SQUASH_EPS);
                let dmu = dl_da * tanh_der;
                let dstd = dl_da * tanh_der * eps[(i, j)];
                let dlog_std = dstd * pe.std[(i, j)] - scale * alpha;
                let t = pe.traw[(i, j)];
                dout[(i, j)] = dmu;
                dout[(a_dim + i, j)] = dlog_std * half * (1.0 - t * t);
            }
        }
        let (grads, _) = self.actor.backward(&pe.fwd, &dout);
        (loss, grads)
    }

    /// One SAC step on a minibatch: both critics, the actor, then the Polyak
    /// target update.
    pub fn update(&mut self, batch: &TransitionBatch) -> UpdateStats {
        let b = batch.obs.ncols();
        let gamma = self.cfg.gamma;
        let alpha = self.cfg.alpha;

        // Bellman targets from the target critics and a fresh next-state sample.
        let pe_next = self.eval_policy(&batch.next_obs);
        let eps_next = self.draw_noise(self.cfg.act_dim, b);
        let (a_next, logp_next) = self.squash(&pe_next, &eps_next);
        let next_in = Self::stack(&batch.next_obs, &a_next);
        let q1t = self.q1_target.forward(&next_in);
        let q2t = self.q2_target.forward(&next_in);
        let mut y = DVector::zeros(b);
        for j in 0..b {
            let qmin = q1t.output()[(0, j)].min(q2t.output()[(0, j)]);
            y[j] = batch.reward[j]
                + gamma * (1.0 - batch.done[j]) * (qmin - alpha * logp_next[j]);
        }

        let cur_in = Self::stack(&batch.obs, &batch.act);
        let (loss1, g1) = Self::critic_loss_and_grads(&self.q1, &cur_in, &y);
        let (loss2, g2) = Self::critic_loss_and_grads(&self.q2, &cur_in, &y);
        self.opt_q1.step(&mut self.q1, &g1);
        self.opt_q2.step(&mut self.q2, &g2);

        let eps_act = self.draw_noise(self.cfg.act_dim, b);
        let (actor_loss, ga) = self.actor_loss_and_grads(&batch.obs, &eps_act);
        self.opt_actor.step(&mut self.actor, &ga);

        self.q1_target.polyak_from(&self.q1, self.cfg.tau);
        self.q2_target.polyak_from(&self.q2, self.cfg.tau);

        let mean_q = y.iter().sum::<f64>() / b as f64;
        let mean_log_prob = logp_next.iter().sum::<f64>() / b as f64;
        UpdateStats { critic_loss: 0.5 * (loss1 + loss2), actor_loss, mean_q, mean_log_prob }
    }

    /// Uniform random squashed action, for warmup exploration.
    pub fn random_action(&mut self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(self.cfg.act_dim, |_, _| rng.gen_range(-0.999..0.999))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_agent(seed: u64) -> SacAgent {
        let mut cfg = SacConfig::new(3, 2, vec![8, 8]);
        cfg.lr_actor = 1e-3;
        cfg.lr_critic = 3e-3;
        SacAgent::new(cfg, seed)
    }

    fn random_batch(agent: &SacAgent, b: usize, seed: u64) -> TransitionBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let od = agent.cfg.obs_dim;
        let ad = agent.cfg.act_dim;
        TransitionBatch {
            obs: DMatrix::from_fn(od, b, |_, _| rng.gen_range(-1.0..1.0)),
            act: DMatrix::from_fn(ad, b, |_, _| rng.gen_range(-0.9..0.9)),
            reward: DVector::from_fn(b, |_, _| rng.gen_range(-1.0..1.0)),
            next_obs: DMatrix::from_fn(od, b, |_, _| rng.gen_range(-1.0..1.0)),
            done: DVector::from_fn(b, |_, _| if rng.gen::<f64>() < 0.2 { 1.0 } else { 0.0 }),
        }
    }

    #[test]
    fn log_std_respects_the_configured_range() {
        let agent = tiny_agent(0);
        let obs = DMatrix::from_fn(3, 5, |i, j| (i as f64 - j as f64) * 10.0);
        let pe = agent.eval_policy(&obs);
        for v in pe.log_std.iter() {
            assert!(*v >= agent.cfg.log_std_lo && *v <= agent.cfg.log_std_hi);
        }
    }

    #[test]
    fn squashed_actions_stay_inside_the_unit_box() {
        let mut agent = tiny_agent(1);
        for k in 0..50 {
            let obs = DVector::from_vec(vec![k as f64, -(k as f64), 0.5]);
            let a = agent.act_sample(&obs);
            for v in a.iter() {
                assert!(v.abs() < 1.0);
            }
        }
    }

    #[test]
    fn log_prob_matches_direct_computation() {
        // One dimension, fixed noise: compare against the scalar formula.
        let agent = {
            let cfg = SacConfig::new(1, 1, vec![4]);
            SacAgent::new(cfg, 3)
        };
        let obs = DMatrix::from_element(1, 1, 0.3);
        let pe = agent.eval_policy(&obs);
        let eps = DMatrix::from_element(1, 1, 0.7);
        let (a, logp) = agent.squash(&pe, &eps);
        let mu = pe.mu[(0, 0)];
        let std = pe.std[(0, 0)];
        let pre = mu + std * 0.7;
        let expected_a = pre.tanh();
        assert!((a[(0, 0)] - expected_a).abs() < 1e-15);
        let gauss = -std.ln() - 0.5 * 0.7f64 * 0.7 - 0.5 * std::f64::consts::TAU.ln();
        let expected = gauss - (1.0 - expected_a * expected_a + 1e-6).ln();
        assert!((logp[0] - expected).abs() < 1e-12, "{} vs {expected}", logp[0]);
    }

    #[test]
    fn critic_gradients_match_finite_differences() {
        let mut agent = tiny_agent(2);
        let batch = random_batch(&agent, 6, 9);
        let input = SacAgent::stack(&batch.obs, &batch.act);
        let y = batch.reward.clone();

        let (_, grads) = SacAgent::critic_loss_and_grads(&agent.q1, &input, &y);
        let h = 1e-6;
        // Spot-check a spread of weights in every layer.
        for l in 0..agent.q1.layers.len() {
            let n = agent.q1.layers[l].w.len();
            for idx in [0, n / 3, n - 1] {
                let orig = agent.q1.layers[l].w[idx];
                agent.q1.layers[l].w[idx] = orig + h;
                let (up, _) = SacAgent::critic_loss_and_grads(&agent.q1, &input, &y);
                agent.q1.layers[l].w[idx] = orig - h;
                let (down, _) = SacAgent::critic_loss_and_grads(&agent.q1, &input, &y);
                agent.q1.layers[l].w[idx] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads.w[l][idx];
                let rel = (an - fd).abs() / fd.abs().max(1e-6);
                assert!(rel < 1e-4, "layer {l} w[{idx}]: analytic {an}, fd {fd}");
            }
        }
    }

    #[test]
    fn actor_gradients_match_finite_differences_under_fixed_noise() {
        let mut agent = tiny_agent(4);
        let batch = random_batch(&agent, 5, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let eps = DMatrix::from_fn(agent.cfg.act_dim, 5, |_, _| {
            SacAgent::standard_normal(&mut rng)
        });

        let (_, grads) = agent.actor_loss_and_grads(&batch.obs, &eps);
        let h = 1e-6;
        for l in 0..agent.actor.layers.len() {
            let n = agent.actor.layers[l].w.len();
            for idx in [0, n / 2, n - 1] {
                let orig = agent.actor.layers[l].w[idx];
                agent.actor.layers[l].w[idx] = orig + h;
                let (up, _) = agent.actor_loss_and_grads(&batch.obs, &eps);
                agent.actor.layers[l].w[idx] = orig - h;
                let (down, _) = agent.actor_loss_and_grads(&batch.obs, &eps);
                agent.actor.layers[l].w[idx] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads.w[l][idx];
                let rel = (an - fd).abs() / fd.abs().max(1e-7);
                assert!(rel < 1e-4, "layer {l} w[{idx}]: analytic {an}, fd {fd}");
            }
            for i in 0..agent.actor.layers[l].b.len().min(3) {
                let orig = agent.actor.layers[l].b[i];
                agent.actor.layers[l].b[i] = orig + h;
                let (up, _) = agent.actor_loss_and_grads(&batch.obs, &eps);
                agent.actor.layers[l].b[i] = orig - h;
                let (down, _) = agent.actor_loss_and_grads(&batch.obs, &eps);
                agent.actor.layers[l].b[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads.b[l][i];
                let rel = (an - fd).abs() / fd.abs().max(1e-7);
                assert!(rel < 1e-4, "layer {l} b[{i}]: analytic {an}, fd {fd}");
            }
        }
    }

    #[test]
    fn updates_are_deterministic_for_a_fixed_seed() {
        let run = || {
            let mut agent = tiny_agent(5);
            let batch = random_batch(&agent, 8, 21);
            for _ in 0..5 {
                agent.update(&batch);
            }
            agent.actor.layers[0].w[(0, 0)].to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn bandit_policy_mean_moves_toward_the_reward_peak() {
        // One-step bandit: observation is constant, reward -(a - 0.5)^2,
        // terminal immediately. The policy mean should approach 0.5.
        let mut cfg = SacConfig::new(1, 1, vec![32, 32]);
        cfg.lr_actor = 3e-4;
        cfg.lr_critic = 1e-3;
        cfg.alpha = 0.05;
        let mut agent = SacAgent::new(cfg, 11);
        let mut replay = super::super::replay::ReplayBuffer::new(5000, 11);
        let obs = DVector::from_vec(vec![0.0]);
        for step in 0..3000 {
            let a = agent.act_sample(&obs);
            let r = -(a[0] - 0.5) * (a[0] - 0.5);
            replay.push(super::super::replay::Transition {
                obs: vec![0.0],
                act: vec![a[0]],
                reward: r,
                next_obs: vec![0.0],
                done: true,
            });
            if step >= 100 {
                let batch = replay.sample(64);
                agent.update(&batch);
            }
        }
        let mean = agent.act_mean(&obs)[0];
        assert!((mean - 0.5).abs() < 0.2, "policy mean {mean}");
    }
}
