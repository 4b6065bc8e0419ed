//! The federated round loop for FedAA and the FedAvg baseline.
//!
//! Per step `t`: observe the selection state, act, aggregate the selected
//! uploads, score the aggregate on the validation set, broadcast it, train the
//! sampled participants locally, select again, store the transition and update
//! the agent. FedAvg runs the same loop with size-proportional weights over all
//! participants and no agent.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clients::{assign_malicious, local_update, ClientRecord};
use crate::config::{Aggregator, ExperimentConfig};
use crate::datasets::{prepare, LabeledDataset, PreparedData};
use crate::ddpg::{DdpgAgent, ReplayBuffer, Transition};
use crate::error::{FedError, Result};
use crate::nn::{ArchSpec, FlatParams, MlpModel, OutputHead};
use crate::seed::{self, Stream};
use crate::selection::{m_count, select_clients};

/// Tolerance on `sum(action) = 1` and `action >= 0`.
pub const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Validation accuracy of the aggregate, in `[0, 1]`.
    pub reward: f64,
    /// Mean test accuracy of benign participants' locally trained models.
    pub mean_benign_acc: f64,
    pub acc_std: f64,
    pub acc_var: f64,
    pub loss_std: f64,
    /// Mean test accuracy of the broadcast aggregate over benign participants.
    pub global_acc_mean: f64,
    /// Clients whose uploads were aggregated this step, ascending.
    pub selected_ids: Vec<usize>,
    /// Aggregation weights aligned with `selected_ids`.
    pub action: Vec<f64>,
    /// How many of `selected_ids` are malicious.
    pub malicious_selected: usize,
    /// Per-class validation accuracy; `None` for classes absent from the set.
    pub per_class_val_acc: Vec<Option<f64>>,
}

/// `sum_i action[i] * uploads[i]`.
pub fn aggregate(uploads: &[&FlatParams], action: &[f64]) -> Result<FlatParams> {
    if uploads.is_empty() || uploads.len() != action.len() {
        return Err(FedError::Internal(format!(
            "aggregate: {} uploads but {} weights",
            uploads.len(),
            action.len()
        )));
    }
    let sum: f64 = action.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL || action.iter().any(|&a| a.is_nan() || a < -SIMPLEX_TOL) {
        return Err(FedError::Internal(format!(
            "aggregation weights leave the simplex (sum {sum})"
        )));
    }
    let mut out = FlatParams::zeros(uploads[0].arch());
    for (u, &a) in uploads.iter().zip(action) {
        if !u.same_arch(uploads[0]) {
            return Err(FedError::Internal("aggregate: uploads disagree on architecture".into()));
        }
        for (o, v) in out.values_mut().iter_mut().zip(u.values()) {
            *o += a * v;
        }
    }
    Ok(out)
}

/// Overall and per-class accuracy of `global` on the validation set.
pub fn evaluate_reward(global: &FlatParams, val: &LabeledDataset) -> Result<(f64, Vec<Option<f64>>)> {
    if val.is_empty() {
        return Err(FedError::config("validation set is empty"));
    }
    let model = MlpModel::from_params(global.clone());
    let pred = model.predict(val.features.view())?;
    let k = val.num_classes;
    let (mut hit, mut total) = (vec![0usize; k], vec![0usize; k]);
    for (&p, &y) in pred.iter().zip(&val.labels) {
        total[y] += 1;
        if p == y {
            hit[y] += 1;
        }
    }
    let correct: usize = hit.iter().sum();
    let per_class = hit
        .iter()
        .zip(&total)
        .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
        .collect();
    Ok((correct as f64 / val.len() as f64, per_class))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fairness {
    pub mean_acc: f64,
    pub acc_std: f64,
    pub acc_var: f64,
    pub mean_loss: f64,
    pub loss_std: f64,
    /// Mean accuracy of the global model on the same test splits.
    pub global_acc_mean: f64,
}

/// Population mean and variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Scores each benign client's local model on its own test split.
pub fn evaluate_fairness(clients: &[&ClientRecord], global: &FlatParams) -> Result<Fairness> {
    let global_model = MlpModel::from_params(global.clone());
    let scores: Vec<(f64, f64, f64)> = clients
        .par_iter()
        .filter(|c| c.is_benign())
        .map(|c| {
            let (acc, loss) = c.local_model.evaluate(&c.data.test)?;
            let (gacc, _) = global_model.evaluate(&c.data.test)?;
            Ok((acc, loss, gacc))
        })
        .collect::<Result<_>>()?;
    if scores.is_empty() {
        return Err(FedError::Simulation("no benign client to evaluate".into()));
    }
    let accs: Vec<f64> = scores.iter().map(|s| s.0).collect();
    let losses: Vec<f64> = scores.iter().map(|s| s.1).collect();
    let gaccs: Vec<f64> = scores.iter().map(|s| s.2).collect();
    let (mean_acc, acc_var) = mean_var(&accs);
    let (mean_loss, loss_var) = mean_var(&losses);
    Ok(Fairness {
        mean_acc,
        acc_std: acc_var.sqrt(),
        acc_var,
        mean_loss,
        loss_std: loss_var.sqrt(),
        global_acc_mean: mean_var(&gaccs).0,
    })
}

/// `round(ratio * n)` distinct ids, ascending.
pub fn sample_participants<R: Rng + ?Sized>(n: usize, ratio: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(FedError::config(format!("participation ratio {ratio} outside (0, 1]")));
    }
    let k = (ratio * n as f64).round() as usize;
    if k == 0 {
        return Err(FedError::config("participation ratio selects no clients"));
    }
    if k >= n {
        return Ok((0..n).collect());
    }
    let mut ids = index::sample(rng, n, k).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Everything a run needs besides the loop state.
pub struct Setup {
    pub data: PreparedData,
    pub arch: ArchSpec,
    pub clients: Vec<ClientRecord>,
    pub initial: FlatParams,
}

pub fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    cfg.validate()?;
    let data = prepare(
        &cfg.dataset,
        &cfg.validation,
        cfg.num_clients,
        &mut seed::stream_rng(cfg.seed, Stream::Data),
    )?;
    let arch = ArchSpec::new(
        data.input_dim(),
        cfg.model_hidden.clone(),
        data.num_classes(),
        OutputHead::Logits,
    )?;
    let initial = MlpModel::glorot(&arch, &mut seed::stream_rng(cfg.seed, Stream::Init)).into_params();
    let n = data.partition.num_clients();
    let mut roles = seed::stream_rng(cfg.seed, Stream::Roles);
    let malicious = assign_malicious(n, cfg.malicious_fraction, &mut roles);
    let clients = data
        .partition
        .clients
        .iter()
        .enumerate()
        .map(|(id, d)| ClientRecord {
            id,
            attack: if malicious[id] { cfg.attack } else { None },
            data: d.clone(),
            local_model: MlpModel::from_params(initial.clone()),
        })
        .collect();
    Ok(Setup {
        data,
        arch,
        clients,
        initial,
    })
}

/// Local training for the given participants. Benign clients train first
/// (in parallel) so that IPM attackers can see the benign uploads.
fn train_participants(
    cfg: &ExperimentConfig,
    clients: &mut [ClientRecord],
    participants: &[usize],
    global: &FlatParams,
    round: usize,
) -> Result<Vec<(usize, FlatParams)>> {
    let mut active = vec![false; clients.len()];
    for &p in participants {
        active[p] = true;
    }
    let run = |c: &mut ClientRecord, benign: &[&FlatParams]| {
        let mut train = seed::rng(seed::derive_client_round(cfg.seed, Stream::LocalTraining, c.id, round));
        let mut atk = seed::rng(seed::derive_client_round(cfg.seed, Stream::Attack, c.id, round));
        local_update(c, global, &cfg.local, benign, &mut train, &mut atk).map(|u| (c.id, u))
    };
    let mut uploads: Vec<(usize, FlatParams)> = clients
        .par_iter_mut()
        .filter(|c| active[c.id] && c.is_benign())
        .map(|c| run(c, &[]))
        .collect::<Result<_>>()?;
    let mal: Vec<(usize, FlatParams)> = {
        let benign: Vec<&FlatParams> = uploads.iter().map(|(_, u)| u).collect();
        let fallback = [global];
        let benign = if benign.is_empty() { &fallback[..] } else { &benign[..] };
        clients
            .par_iter_mut()
            .filter(|c| active[c.id] && !c.is_benign())
            .map(|c| run(c, benign))
            .collect::<Result<_>>()?
    };
    uploads.extend(mal);
    uploads.sort_by_key(|(id, _)| *id);
    Ok(uploads)
}

/// The uploads chosen for aggregation and the state they induce.
struct Chosen {
    ids: Vec<usize>,
    params: Vec<FlatParams>,
    state: Vec<f64>,
}

fn choose(cfg: &ExperimentConfig, clients: &[ClientRecord], uploads: Vec<(usize, FlatParams)>) -> Result<Chosen> {
    match cfg.aggregator {
        Aggregator::Fedaa => {
            let refs: Vec<(usize, &FlatParams)> = uploads.iter().map(|(i, p)| (*i, p)).collect();
            let sel = select_clients(&refs, cfg.m_percent, cfg.scope, false)?;
            let mut params = Vec::with_capacity(sel.selected_ids.len());
            let mut uploads = uploads.into_iter().peekable();
            for id in &sel.selected_ids {
                let (_, p) = uploads
                    .by_ref()
                    .find(|(i, _)| i == id)
                    .ok_or_else(|| FedError::Internal(format!("selected id {id} has no upload")))?;
                params.push(p);
            }
            Ok(Chosen {
                ids: sel.selected_ids,
                params,
                state: sel.state,
            })
        }
        Aggregator::Fedavg => {
            let sizes: Vec<f64> = uploads.iter().map(|(i, _)| clients[*i].num_samples() as f64).collect();
            let total: f64 = sizes.iter().sum();
            let (ids, params) = uploads.into_iter().unzip();
            Ok(Chosen {
                ids,
                params,
                state: sizes.iter().map(|s| s / total).collect(),
            })
        }
    }
}

/// Runs the configured aggregator.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RoundRecord>> {
    let mut s = setup(cfg)?;
    run_loop(cfg, &mut s)
}

/// Runs the FedAvg baseline regardless of `cfg.aggregator`.
pub fn run_fedavg_baseline(cfg: &ExperimentConfig) -> Result<Vec<RoundRecord>> {
    let cfg = ExperimentConfig {
        aggregator: Aggregator::Fedavg,
        ..cfg.clone()
    };
    run_experiment(&cfg)
}

fn at_round<T>(round: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| FedError::Round {
        round,
        source: Box::new(e),
    })
}

/// The loop proper, over an already prepared [`Setup`].
pub fn run_loop(cfg: &ExperimentConfig, s: &mut Setup) -> Result<Vec<RoundRecord>> {
    let n = s.clients.len();
    let per_round = (cfg.participation * n as f64).round() as usize;
    let mut part_rng = seed::stream_rng(cfg.seed, Stream::Participation);
    let mut explore_rng = seed::stream_rng(cfg.seed, Stream::Exploration);
    let mut replay_rng = seed::stream_rng(cfg.seed, Stream::Replay);
    let mut agent = match cfg.aggregator {
        Aggregator::Fedaa => {
            let dim = m_count(cfg.m_percent, per_round);
            Some(DdpgAgent::new(
                dim,
                dim,
                cfg.ddpg.clone(),
                &mut seed::stream_rng(cfg.seed, Stream::Agent),
            )?)
        }
        Aggregator::Fedavg => None,
    };
    let mut buffer = ReplayBuffer::new(cfg.ddpg.buffer_capacity);

    // initial broadcast: every participant uploads the common model
    let first = at_round(0, sample_participants(n, cfg.participation, &mut part_rng))?;
    let uploads = first.iter().map(|&i| (i, s.initial.clone())).collect();
    let mut chosen = at_round(0, choose(cfg, &s.clients, uploads))?;

    let mut records = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds {
        let mut step = || -> Result<(RoundRecord, Chosen)> {
            let action = match &mut agent {
                Some(a) => {
                    a.set_noise_sigma(cfg.ddpg.noise_at(t, cfg.rounds));
                    a.act(&chosen.state, true, &mut explore_rng)?
                }
                None => chosen.state.clone(),
            };
            let refs: Vec<&FlatParams> = chosen.params.iter().collect();
            let global = aggregate(&refs, &action)?;
            let (reward, per_class) = evaluate_reward(&global, &s.data.validation)?;

            let participants = sample_participants(n, cfg.participation, &mut part_rng)?;
            let uploads = train_participants(cfg, &mut s.clients, &participants, &global, t)?;
            let members: Vec<&ClientRecord> = participants.iter().map(|&i| &s.clients[i]).collect();
            let fair = evaluate_fairness(&members, &global)?;
            let next = choose(cfg, &s.clients, uploads)?;

            if let Some(a) = &mut agent {
                buffer.push(Transition {
                    state: chosen.state.clone(),
                    action: action.clone(),
                    reward,
                    next_state: next.state.clone(),
                });
                if buffer.len() >= cfg.ddpg.warmup {
                    let size = cfg.ddpg.batch_size.min(buffer.len());
                    let batch = buffer.sample(size, &mut replay_rng).expect("buffer holds enough");
                    a.update_critic(&batch)?;
                    a.update_actor(&batch)?;
                }
                if t % 2 == 0 {
                    a.soft_update();
                }
            }

            let record = RoundRecord {
                round: t,
                reward,
                mean_benign_acc: fair.mean_acc,
                acc_std: fair.acc_std,
                acc_var: fair.acc_var,
                loss_std: fair.loss_std,
                global_acc_mean: fair.global_acc_mean,
                malicious_selected: chosen.ids.iter().filter(|&&i| !s.clients[i].is_benign()).count(),
                selected_ids: chosen.ids.clone(),
                action,
                per_class_val_acc: per_class,
            };
            Ok((record, next))
        };
        let (record, next) = at_round(t, step())?;
        records.push(record);
        chosen = next;
    }
    Ok(records)
}
