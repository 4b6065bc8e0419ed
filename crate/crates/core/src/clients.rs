//! Benign local training and Byzantine upload adapters.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datasets::ClientData;
use crate::error::{FedError, Result};
use crate::nn::{sgd_train, ArchSpec, FlatParams, MlpModel, SgdConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    SameValue,
    SignFlip,
    Gaussian,
    Ipm,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::SameValue => "same_value",
            AttackKind::SignFlip => "sign_flip",
            AttackKind::Gaussian => "gaussian",
            AttackKind::Ipm => "ipm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "same_value" => Some(AttackKind::SameValue),
            "sign_flip" => Some(AttackKind::SignFlip),
            "gaussian" => Some(AttackKind::Gaussian),
            "ipm" => Some(AttackKind::Ipm),
            _ => None,
        }
    }

    /// Attack intensity used when none is configured.
    pub fn default_tau(self) -> f64 {
        match self {
            AttackKind::SameValue => 100.0,
            AttackKind::SignFlip => 10.0,
            AttackKind::Gaussian => 100.0,
            AttackKind::Ipm => 1.0,
        }
    }

    /// Whether the attacker needs its own honestly trained parameters.
    pub fn needs_honest_update(self) -> bool {
        matches!(self, AttackKind::SignFlip | AttackKind::Ipm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub tau: f64,
    pub ipm_epsilon: f64,
}

pub const DEFAULT_IPM_EPSILON: f64 = 0.5;

impl AttackSpec {
    pub fn new(kind: AttackKind) -> Self {
        AttackSpec {
            kind,
            tau: kind.default_tau(),
            ipm_epsilon: DEFAULT_IPM_EPSILON,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Benign,
    Malicious,
}

#[derive(Debug, Clone)]
pub struct ClientRecord {
    pub id: usize,
    /// `None` for benign clients.
    pub attack: Option<AttackSpec>,
    pub data: ClientData,
    pub local_model: MlpModel,
}

impl ClientRecord {
    pub fn role(&self) -> Role {
        if self.attack.is_some() {
            Role::Malicious
        } else {
            Role::Benign
        }
    }

    pub fn is_benign(&self) -> bool {
        self.attack.is_none()
    }

    pub fn num_samples(&self) -> usize {
        self.data.train.len()
    }
}

/// Trains a fresh copy of `global` on the client's training split and stores
/// it as the client's local model.
pub fn honest_update<R: Rng + ?Sized>(
    client: &mut ClientRecord,
    global: &FlatParams,
    cfg: &SgdConfig,
    rng: &mut R,
) -> Result<FlatParams> {
    if global.arch() != client.local_model.arch() {
        return Err(FedError::config(format!(
            "client {}: global parameters do not match the client architecture",
            client.id
        )));
    }
    let mut model = MlpModel::from_params(global.clone());
    sgd_train(&mut model, &client.data.train, cfg, rng)?;
    client.local_model = model;
    Ok(client.local_model.params().clone())
}

/// Produces the vector a client uploads this round.
///
/// Benign clients return their trained parameters. Malicious clients train
/// only when their attack needs the honest result, then replace the upload.
/// `benign_uploads` is the set of this round's benign uploads, required by IPM.
pub fn local_update<R: Rng + ?Sized, A: Rng + ?Sized>(
    client: &mut ClientRecord,
    global: &FlatParams,
    cfg: &SgdConfig,
    benign_uploads: &[&FlatParams],
    train_rng: &mut R,
    attack_rng: &mut A,
) -> Result<FlatParams> {
    let Some(attack) = client.attack else {
        return honest_update(client, global, cfg, train_rng);
    };
    if global.arch() != client.local_model.arch() {
        return Err(FedError::config(format!(
            "client {}: global parameters do not match the client architecture",
            client.id
        )));
    }
    let honest = if attack.kind.needs_honest_update() {
        honest_update(client, global, cfg, train_rng)?
    } else {
        client.local_model = MlpModel::from_params(global.clone());
        global.clone()
    };
    match attack.kind {
        AttackKind::SameValue => Ok(attack_same_value(global.arch(), attack.tau, attack_rng)),
        AttackKind::SignFlip => Ok(attack_sign_flip(&honest, attack.tau, attack_rng)),
        AttackKind::Gaussian => Ok(attack_gaussian(global.arch(), attack.tau, attack_rng)),
        AttackKind::Ipm => attack_ipm(benign_uploads, attack.ipm_epsilon),
    }
}

fn draw_intensity<R: Rng + ?Sized>(tau: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    tau * z
}

/// `m * 1` with a single `m ~ N(0, tau^2)`.
pub fn attack_same_value<R: Rng + ?Sized>(arch: &ArchSpec, tau: f64, rng: &mut R) -> FlatParams {
    let m = draw_intensity(tau, rng);
    let mut out = FlatParams::zeros(arch);
    out.values_mut().fill(m);
    out
}

/// `-|m| * honest` with `m ~ N(0, tau^2)`.
pub fn attack_sign_flip<R: Rng + ?Sized>(honest: &FlatParams, tau: f64, rng: &mut R) -> FlatParams {
    let m = draw_intensity(tau, rng);
    sign_flip_with(honest, m)
}

pub fn sign_flip_with(honest: &FlatParams, m: f64) -> FlatParams {
    let scale = -m.abs();
    let mut out = honest.clone();
    out.values_mut().iter_mut().for_each(|v| *v *= scale);
    out
}

/// Entries i.i.d. `N(0, tau^2)`.
pub fn attack_gaussian<R: Rng + ?Sized>(arch: &ArchSpec, tau: f64, rng: &mut R) -> FlatParams {
    let mut out = FlatParams::zeros(arch);
    out.values_mut()
        .iter_mut()
        .for_each(|v| *v = draw_intensity(tau, rng));
    out
}

/// Inner product manipulation: `-epsilon * mean(benign)`, identical for all attackers.
pub fn attack_ipm(benign_uploads: &[&FlatParams], epsilon: f64) -> Result<FlatParams> {
    let first = benign_uploads
        .first()
        .ok_or_else(|| FedError::Simulation("IPM attack needs at least one benign upload".into()))?;
    let mut out = FlatParams::zeros(first.arch());
    for u in benign_uploads {
        if !u.same_arch(first) {
            return Err(FedError::Simulation("benign uploads disagree on architecture".into()));
        }
        for (o, v) in out.values_mut().iter_mut().zip(u.values()) {
            *o += v;
        }
    }
    let scale = -epsilon / benign_uploads.len() as f64;
    out.values_mut().iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}

/// Number of malicious clients: `floor(fraction * n)`.
pub fn malicious_count(num_clients: usize, fraction: f64) -> usize {
    ((fraction * num_clients as f64) + 1e-9).floor() as usize
}

/// Flags exactly `floor(fraction * n)` clients as malicious, uniformly at random.
pub fn assign_malicious<R: Rng + ?Sized>(num_clients: usize, fraction: f64, rng: &mut R) -> Vec<bool> {
    let count = malicious_count(num_clients, fraction).min(num_clients);
    let mut flags = vec![false; num_clients];
    for i in index::sample(rng, num_clients, count) {
        flags[i] = true;
    }
    flags
}
