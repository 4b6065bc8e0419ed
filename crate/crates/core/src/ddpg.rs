//! Deterministic policy-gradient agent that picks aggregation weights.
//!
//! The actor maps a state to a point on the probability simplex through a
//! softmax head; exploration noise is added to the pre-softmax logits so every
//! action, explored or not, stays on the simplex. The critic scores the
//! concatenation `[state | action]`.
//!
//! # Checkpoint layout
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes   "FEDAACK1"
//! counter      u64       update_counter
//! networks     4 x NET   actor, critic, target_actor, target_critic
//!
//! NET:
//!   input_dim  u32
//!   n_hidden   u32
//!   hidden     n_hidden x u32
//!   output_dim u32
//!   head       u8        0 = logits, 1 = softmax_simplex, 2 = scalar
//!   len        u64       number of parameters
//!   values     len x f64 flat parameters (layer order of `nn`)
//! ```

use std::collections::VecDeque;
use std::io::{Read, Write};

use ndarray::{s, Array2};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::nn::{hstack, sgd_step, softmax, softmax_backward, ArchSpec, FlatParams, MlpModel, OutputHead};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdpgConfig {
    pub gamma: f64,
    /// Soft-update rate for the target networks.
    pub epsilon_soft: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub weight_decay: f64,
    pub hidden: Vec<usize>,
    /// Std of the logit noise at the first step.
    pub noise_sigma: f64,
    /// Std of the logit noise at the last step (linear schedule).
    pub noise_sigma_final: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Transitions required before the first update.
    pub warmup: usize,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        DdpgConfig {
            gamma: 0.99,
            epsilon_soft: 0.001,
            actor_lr: 1e-2,
            critic_lr: 1e-2,
            weight_decay: 1e-5,
            hidden: vec![256],
            noise_sigma: 0.1,
            noise_sigma_final: 0.01,
            buffer_capacity: 10_000,
            batch_size: 64,
            warmup: 10,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(FedError::config("ddpg.gamma must lie in [0, 1]"));
        }
        if !(self.epsilon_soft > 0.0 && self.epsilon_soft <= 1.0) {
            return Err(FedError::config("ddpg.epsilon_soft must lie in (0, 1]"));
        }
        for (name, v) in [
            ("ddpg.actor_lr", self.actor_lr),
            ("ddpg.critic_lr", self.critic_lr),
            ("ddpg.weight_decay", self.weight_decay),
            ("ddpg.noise_sigma", self.noise_sigma),
            ("ddpg.noise_sigma_final", self.noise_sigma_final),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(FedError::config(format!("{name} must be finite and non-negative")));
            }
        }
        if self.buffer_capacity == 0 || self.batch_size == 0 {
            return Err(FedError::config("ddpg buffer capacity and batch size must be positive"));
        }
        Ok(())
    }

    /// Linearly decayed noise std for `step` of `total` steps.
    pub fn noise_at(&self, step: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.noise_sigma;
        }
        let frac = step as f64 / (total - 1) as f64;
        self.noise_sigma + (self.noise_sigma_final - self.noise_sigma) * frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

/// Bounded FIFO of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(1024)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.entries.iter()
    }

    /// `n` distinct entries chosen uniformly; `None` while fewer than `n` are stored.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Vec<Transition>> {
        if n == 0 || self.entries.len() < n {
            return None;
        }
        Some(
            index::sample(rng, self.entries.len(), n)
                .into_iter()
                .map(|i| self.entries[i].clone())
                .collect(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct DdpgAgent {
    pub actor: MlpModel,
    pub critic: MlpModel,
    pub target_actor: MlpModel,
    pub target_critic: MlpModel,
    pub cfg: DdpgConfig,
    noise_sigma: f64,
    pub update_counter: u64,
}

fn rows(batch: &[Transition], f: impl Fn(&Transition) -> &[f64]) -> Result<Array2<f64>> {
    let width = f(&batch[0]).len();
    let mut flat = Vec::with_capacity(batch.len() * width);
    for t in batch {
        let r = f(t);
        if r.len() != width {
            return Err(FedError::config("transitions in a batch differ in width"));
        }
        flat.extend_from_slice(r);
    }
    Array2::from_shape_vec((batch.len(), width), flat).map_err(|e| FedError::Internal(e.to_string()))
}

fn check_finite(values: &[f64], layer: usize, what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FedError::Numeric {
            layer,
            message: format!("{what} is not finite"),
        })
    }
}

impl DdpgAgent {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        cfg: DdpgConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let actor_arch = ArchSpec::new(state_dim, cfg.hidden.clone(), action_dim, OutputHead::SoftmaxSimplex)?;
        let critic_arch = ArchSpec::new(state_dim + action_dim, cfg.hidden.clone(), 1, OutputHead::Scalar)?;
        let actor = MlpModel::glorot(&actor_arch, rng);
        let critic = MlpModel::glorot(&critic_arch, rng);
        Ok(Self::from_networks(actor, critic, cfg))
    }

    /// Targets start as exact copies of the given mains.
    pub fn from_networks(actor: MlpModel, critic: MlpModel, cfg: DdpgConfig) -> Self {
        DdpgAgent {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            noise_sigma: cfg.noise_sigma,
            actor,
            critic,
            cfg,
            update_counter: 0,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.actor.arch().input_dim
    }

    pub fn action_dim(&self) -> usize {
        self.actor.arch().output_dim
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn set_noise_sigma(&mut self, sigma: f64) {
        self.noise_sigma = sigma.max(0.0);
    }

    /// Policy output for one state; with `explore`, Gaussian noise is added to the logits.
    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], explore: bool, rng: &mut R) -> Result<Vec<f64>> {
        if state.len() != self.state_dim() {
            return Err(FedError::config(format!(
                "state has length {}, actor expects {}",
                state.len(),
                self.state_dim()
            )));
        }
        let x = Array2::from_shape_vec((1, state.len()), state.to_vec()).expect("1 x n");
        let mut logits = self.actor.forward_raw(x.view())?.row(0).to_vec();
        if explore && self.noise_sigma > 0.0 {
            for l in &mut logits {
                let z: f64 = StandardNormal.sample(rng);
                *l += self.noise_sigma * z;
            }
        }
        let action = softmax(&logits);
        check_finite(&action, self.actor.arch().num_layers() - 1, "action")?;
        Ok(action)
    }

    /// `y = r + gamma * Q'(s', pi'(s'))`, using the target networks only.
    pub fn critic_target(&self, batch: &[Transition]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(FedError::config("empty batch"));
        }
        let next = rows(batch, |t| &t.next_state)?;
        let next_actions = self.target_actor.forward(next.view())?;
        let q_next = self.target_critic.forward(hstack(next.view(), next_actions.view()).view())?;
        Ok(batch
            .iter()
            .zip(q_next.column(0))
            .map(|(t, &q)| t.reward + self.cfg.gamma * q)
            .collect())
    }

    /// Critic loss `mean((y - Q(s, a))^2)` and its gradient for fixed targets `y`.
    pub fn critic_loss_grad(&self, batch: &[Transition], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        let states = rows(batch, |t| &t.state)?;
        let actions = rows(batch, |t| &t.action)?;
        let input = hstack(states.view(), actions.view());
        let trace = self.critic.forward_trace(input.view())?;
        let q = trace.raw_output();
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut grad_q = Array2::zeros((batch.len(), 1));
        for i in 0..batch.len() {
            let r = targets[i] - q[[i, 0]];
            loss += r * r;
            grad_q[[i, 0]] = -2.0 * r / n;
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(FedError::Numeric {
                layer: self.critic.arch().num_layers() - 1,
                message: format!("critic loss is {loss}"),
            });
        }
        let (grad, _) = self.critic.backward(&trace, grad_q.view());
        check_finite(&grad, 0, "critic gradient")?;
        Ok((loss, grad))
    }

    /// One SGD step on the critic. Returns the loss before the step.
    pub fn update_critic(&mut self, batch: &[Transition]) -> Result<f64> {
        let y = self.critic_target(batch)?;
        let (loss, grad) = self.critic_loss_grad(batch, &y)?;
        let (lr, wd) = (self.cfg.critic_lr, self.cfg.weight_decay);
        sgd_step(self.critic.params_mut().values_mut(), &grad, lr, wd);
        Ok(loss)
    }

    /// `J = mean Q(s, pi(s))` through the frozen critic, and `dJ/dtheta_actor`.
    pub fn actor_objective_grad(&self, batch: &[Transition]) -> Result<(f64, Vec<f64>)> {
        let states = rows(batch, |t| &t.state)?;
        let actor_trace = self.actor.forward_trace(states.view())?;
        let mut probs = actor_trace.raw_output().clone();
        crate::nn::softmax_rows(&mut probs);
        let input = hstack(states.view(), probs.view());
        let critic_trace = self.critic.forward_trace(input.view())?;
        let n = batch.len() as f64;
        let objective = critic_trace.raw_output().column(0).sum() / n;
        let grad_q = Array2::from_elem((batch.len(), 1), 1.0 / n);
        let (_, input_grad) = self.critic.backward(&critic_trace, grad_q.view());
        let grad_action = input_grad.slice(s![.., self.state_dim()..]).to_owned();
        let grad_logits = softmax_backward(&probs, &grad_action);
        let (grad, _) = self.actor.backward(&actor_trace, grad_logits.view());
        check_finite(&grad, 0, "actor gradient")?;
        Ok((objective, grad))
    }

    /// One gradient-ascent step on the actor. Returns `J` before the step.
    pub fn update_actor(&mut self, batch: &[Transition]) -> Result<f64> {
        let (objective, grad) = self.actor_objective_grad(batch)?;
        let ascent: Vec<f64> = grad.iter().map(|g| -g).collect();
        let (lr, wd) = (self.cfg.actor_lr, self.cfg.weight_decay);
        sgd_step(self.actor.params_mut().values_mut(), &ascent, lr, wd);
        self.update_counter += 1;
        Ok(objective)
    }

    /// `theta' <- eps * theta + (1 - eps) * theta'` for both target networks.
    pub fn soft_update(&mut self) {
        let eps = self.cfg.epsilon_soft;
        blend(&mut self.target_actor, &self.actor, eps);
        blend(&mut self.target_critic, &self.critic, eps);
    }

    pub fn save_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&self.update_counter.to_le_bytes())?;
        for net in [&self.actor, &self.critic, &self.target_actor, &self.target_critic] {
            write_net(&mut w, net)?;
        }
        Ok(())
    }

    /// Restores networks saved by [`save_checkpoint`](Self::save_checkpoint);
    /// hyperparameters come from `cfg`.
    pub fn load_checkpoint<R: Read>(mut r: R, cfg: DdpgConfig) -> Result<Self> {
        let bad = |m: &str| FedError::config(format!("invalid checkpoint: {m}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("wrong magic"));
        }
        let counter = read_u64(&mut r).map_err(|_| bad("truncated"))?;
        let mut nets = Vec::with_capacity(4);
        for _ in 0..4 {
            nets.push(read_net(&mut r)?);
        }
        let target_critic = nets.pop().expect("4 nets");
        let target_actor = nets.pop().expect("4 nets");
        let critic = nets.pop().expect("4 nets");
        let actor = nets.pop().expect("4 nets");
        if actor.arch() != target_actor.arch() || critic.arch() != target_critic.arch() {
            return Err(bad("target architecture differs from main"));
        }
        Ok(DdpgAgent {
            actor,
            critic,
            target_actor,
            target_critic,
            noise_sigma: cfg.noise_sigma,
            cfg,
            update_counter: counter,
        })
    }
}

fn blend(target: &mut MlpModel, main: &MlpModel, eps: f64) {
    for (t, m) in target
        .params_mut()
        .values_mut()
        .iter_mut()
        .zip(main.params().values())
    {
        *t = eps * m + (1.0 - eps) * *t;
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"FEDAACK1";

fn write_net<W: Write>(w: &mut W, net: &MlpModel) -> std::io::Result<()> {
    let arch = net.arch();
    w.write_all(&(arch.input_dim as u32).to_le_bytes())?;
    w.write_all(&(arch.hidden_dims.len() as u32).to_le_bytes())?;
    for &h in &arch.hidden_dims {
        w.write_all(&(h as u32).to_le_bytes())?;
    }
    w.write_all(&(arch.output_dim as u32).to_le_bytes())?;
    let head = match arch.output_head {
        OutputHead::Logits => 0u8,
        OutputHead::SoftmaxSimplex => 1,
        OutputHead::Scalar => 2,
    };
    w.write_all(&[head])?;
    let values = net.params().values();
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_net<R: Read>(r: &mut R) -> Result<MlpModel> {
    let trunc = |_| FedError::config("invalid checkpoint: truncated network");
    let input = read_u32(r).map_err(trunc)? as usize;
    let n_hidden = read_u32(r).map_err(trunc)? as usize;
    if n_hidden > 64 {
        return Err(FedError::config("invalid checkpoint: implausible layer count"));
    }
    let hidden = (0..n_hidden)
        .map(|_| read_u32(r).map(|h| h as usize))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(trunc)?;
    let output = read_u32(r).map_err(trunc)? as usize;
    let mut head = [0u8; 1];
    r.read_exact(&mut head).map_err(trunc)?;
    let head = match head[0] {
        0 => OutputHead::Logits,
        1 => OutputHead::SoftmaxSimplex,
        2 => OutputHead::Scalar,
        h => return Err(FedError::config(format!("invalid checkpoint: head tag {h}"))),
    };
    let arch = ArchSpec::new(input, hidden, output, head)?;
    let len = read_u64(r).map_err(trunc)? as usize;
    if len != arch.param_count() {
        return Err(FedError::config("invalid checkpoint: parameter count mismatch"));
    }
    let mut values = Vec::with_capacity(len);
    let mut b = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut b).map_err(trunc)?;
        values.push(f64::from_le_bytes(b));
    }
    Ok(MlpModel::from_params(FlatParams::new(arch, values)?))
}
