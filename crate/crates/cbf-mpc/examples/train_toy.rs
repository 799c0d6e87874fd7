//! Soft actor-critic on a one-action bandit: reward -(a - 0.5)^2, episode
//! length one. The squashed-Gaussian policy mean should approach 0.5. This is
//! the smallest end-to-end check of the actor/critic/temperature machinery.

use cbf_mpc::rl::{ReplayBuffer, SacAgent, SacConfig, Transition};
use nalgebra::DVector;

fn main() {
    let mut cfg = SacConfig::new(1, 1, vec![32, 32]);
    cfg.lr_actor = 3e-4;
    cfg.lr_critic = 1e-3;
    cfg.alpha = 0.05;
    let mut agent = SacAgent::new(cfg, 11);
    let mut replay = ReplayBuffer::new(5000, 11);
    let obs = DVector::from_vec(vec![0.0]);

    println!("{:>6} {:>12} {:>12} {:>12}", "step", "policy mean", "critic loss", "actor loss");
    for step in 0..3000u32 {
        let a = agent.act_sample(&obs);
        let r = -(a[0] - 0.5) * (a[0] - 0.5);
        replay.push(Transition {
            obs: vec![0.0],
            act: vec![a[0]],
            reward: r,
            next_obs: vec![0.0],
            done: true,
        });
        if step >= 100 {
            let stats = agent.update(&replay.sample(64));
            if step % 500 == 0 {
                println!(
                    "{:>6} {:>12.4} {:>12.4} {:>12.4}",
                    step,
                    agent.act_mean(&obs)[0],
                    stats.critic_loss,
                    stats.actor_loss
                );
            }
        }
    }
    let mean = agent.act_mean(&obs)[0];
    println!("\nfinal policy mean: {mean:.4} (reward peak at 0.5)");
}
