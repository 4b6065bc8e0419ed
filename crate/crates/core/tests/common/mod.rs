#![allow(dead_code)]

use fedaa::ddpg::{DdpgAgent, DdpgConfig, ReplayBuffer, Transition};
use fedaa::seed;

/// Stateless bandit: constant state, reward `a[target]`. Mirrors the
/// orchestrator's update cadence. Returns the greedy mass on `target`.
pub fn bandit(cfg: &DdpgConfig, arms: usize, target: usize, steps: usize, seed_value: u64) -> f64 {
    let mut rng = seed::rng(seed_value);
    let mut agent = DdpgAgent::new(1, arms, cfg.clone(), &mut rng).expect("agent");
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let state = vec![1.0];
    for t in 0..steps {
        agent.set_noise_sigma(cfg.noise_at(t, steps));
        let a = agent.act(&state, true, &mut rng).expect("act");
        buffer.push(Transition {
            state: state.clone(),
            reward: a[target],
            action: a,
            next_state: state.clone(),
        });
        if buffer.len() >= cfg.warmup {
            let batch = buffer.sample(cfg.batch_size.min(buffer.len()), &mut rng).expect("batch");
            agent.update_critic(&batch).expect("critic");
            agent.update_actor(&batch).expect("actor");
        }
        if t % 2 == 0 {
            agent.soft_update();
        }
    }
    agent.act(&state, false, &mut rng).expect("greedy")[target]
}

/// Exploration schedule under which the bandit check converges in 500 steps.
/// Same 10:1 decay as the default schedule, larger scale.
pub fn bandit_config() -> DdpgConfig {
    DdpgConfig {
        noise_sigma: 3.0,
        noise_sigma_final: 0.3,
        ..DdpgConfig::default()
    }
}

/// Largest relative error between `analytic` and central differences of `f`
/// over `coords`. Coordinates where both sides vanish count as exact.
pub fn max_fd_error(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], coords: &[usize]) -> f64 {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut p = x.to_vec();
    for &i in coords {
        let orig = p[i];
        p[i] = orig + h;
        let up = f(&p);
        p[i] = orig - h;
        let down = f(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs());
        if scale < 1e-9 {
            continue;
        }
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}

/// `count` distinct random coordinates out of `len` (all of them if fewer).
pub fn coords(len: usize, count: usize, seed_value: u64) -> Vec<usize> {
    let mut rng = seed::rng(seed_value);
    rand::seq::index::sample(&mut rng, len, count.min(len)).into_vec()
}
