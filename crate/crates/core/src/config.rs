//! Experiment configuration in a flat `key = value` text format.
//!
//! One entry per line, `#` starts a comment, nested settings use dotted
//! prefixes (`ddpg.gamma = 0.99`). Unknown or duplicate keys are errors, as
//! are keys that do not apply to the chosen dataset, attack or validation
//! kind. Every key is optional; see `docs/config.md` for the schema and
//! defaults. [`ExperimentConfig::to_text`] emits the canonical form, which
//! parses back to an identical config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clients::{AttackKind, AttackSpec};
use crate::datasets::{DatasetSpec, SizeDistribution, ValidationSpec};
use crate::ddpg::DdpgConfig;
use crate::error::{FedError, Result};
use crate::nn::SgdConfig;
use crate::selection::DistanceScope;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Fedaa,
    Fedavg,
}

impl Aggregator {
    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Fedaa => "fedaa",
            Aggregator::Fedavg => "fedavg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub num_clients: usize,
    pub malicious_fraction: f64,
    pub attack: Option<AttackSpec>,
    pub m_percent: f64,
    pub participation: f64,
    pub rounds: usize,
    pub aggregator: Aggregator,
    /// Hidden layer widths of client models; empty means logistic regression.
    pub model_hidden: Vec<usize>,
    pub local: SgdConfig,
    pub ddpg: DdpgConfig,
    pub scope: DistanceScope,
    pub validation: ValidationSpec,
    pub seed: u64,
}

pub const DEFAULT_M_PERCENT: f64 = 30.0;

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::Synthetic {
                alpha: 0.0,
                beta: 0.0,
                sizes: SizeDistribution::default(),
            },
            num_clients: 20,
            malicious_fraction: 0.0,
            attack: None,
            m_percent: DEFAULT_M_PERCENT,
            participation: 1.0,
            rounds: 50,
            aggregator: Aggregator::Fedaa,
            model_hidden: Vec::new(),
            local: SgdConfig::default(),
            ddpg: DdpgConfig::default(),
            scope: DistanceScope::AllLayers,
            validation: ValidationSpec::Upload { fraction: 0.1 },
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients < 2 {
            return Err(FedError::config("num_clients must be at least 2"));
        }
        if !(0.0..0.5).contains(&self.malicious_fraction) {
            return Err(FedError::config(format!(
                "malicious_fraction {} must be in [0, 0.5): the defense cannot tolerate a malicious majority",
                self.malicious_fraction
            )));
        }
        if self.malicious_fraction > 0.0 && self.attack.is_none() {
            return Err(FedError::config("malicious_fraction > 0 requires an attack"));
        }
        if !(self.m_percent > 0.0 && self.m_percent <= 100.0) {
            return Err(FedError::config("m_percent must be in (0, 100]"));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(FedError::config("participation must be in (0, 1]"));
        }
        if self.participants_per_round() < 2 {
            return Err(FedError::config("participation leaves fewer than 2 clients per round"));
        }
        if self.rounds == 0 {
            return Err(FedError::config("rounds must be positive"));
        }
        if let Some(a) = &self.attack {
            if !(a.tau >= 0.0 && a.tau.is_finite()) {
                return Err(FedError::config("attack.tau must be finite and non-negative"));
            }
            if !(a.ipm_epsilon >= 0.0 && a.ipm_epsilon.is_finite()) {
                return Err(FedError::config("attack.ipm_epsilon must be finite and non-negative"));
            }
        }
        if self.model_hidden.contains(&0) {
            return Err(FedError::config("model.hidden widths must be positive"));
        }
        if self.ddpg.hidden.contains(&0) {
            return Err(FedError::config("ddpg.hidden widths must be positive"));
        }
        self.local.validate()?;
        self.ddpg.validate()?;
        Ok(())
    }

    pub fn participants_per_round(&self) -> usize {
        (self.participation * self.num_clients as f64).round() as usize
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc = KvDoc::parse(text)?;
        build(&doc)
    }

    /// Applies `key = value` overrides on top of the canonical form. Overriding
    /// a kind key such as `validation` drops the inherited `validation.*` keys.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc = KvDoc::parse(&self.to_text())?;
        for (k, _) in overrides {
            let prefix = format!("{k}.");
            doc.entries
                .retain(|key, _| !key.starts_with(&prefix) || overrides.iter().any(|(o, _)| o == key));
        }
        for (k, v) in overrides {
            doc.set(k, v);
        }
        build(&doc)
    }

    /// Canonical text: fixed key order, only keys that apply, all values explicit.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        match &self.dataset {
            DatasetSpec::Synthetic { alpha, beta, sizes } => {
                kv("dataset", "synthetic".into());
                kv("dataset.synthetic_alpha", fmt_f(*alpha));
                kv("dataset.synthetic_beta", fmt_f(*beta));
                write_sizes(&mut kv, sizes);
            }
            DatasetSpec::SyntheticPooled {
                alpha,
                beta,
                sizes,
                components,
                concentration,
            } => {
                kv("dataset", "synthetic_pooled".into());
                kv("dataset.synthetic_alpha", fmt_f(*alpha));
                kv("dataset.synthetic_beta", fmt_f(*beta));
                write_sizes(&mut kv, sizes);
                kv("dataset.components", components.to_string());
                kv("dataset.dirichlet_concentration", fmt_f(*concentration));
            }
            DatasetSpec::Idx {
                images,
                labels,
                concentration,
            } => {
                kv("dataset", "idx".into());
                kv("dataset.images", images.display().to_string());
                kv("dataset.labels", labels.display().to_string());
                kv("dataset.dirichlet_concentration", fmt_f(*concentration));
            }
            DatasetSpec::Csv { path, concentration } => {
                kv("dataset", "csv".into());
                kv("dataset.path", path.display().to_string());
                kv("dataset.dirichlet_concentration", fmt_f(*concentration));
            }
        }
        kv("num_clients", self.num_clients.to_string());
        kv("malicious_fraction", fmt_f(self.malicious_fraction));
        match &self.attack {
            None => kv("attack", "none".into()),
            Some(a) => {
                kv("attack", a.kind.name().into());
                kv("attack.tau", fmt_f(a.tau));
                if a.kind == AttackKind::Ipm {
                    kv("attack.ipm_epsilon", fmt_f(a.ipm_epsilon));
                }
            }
        }
        kv("m_percent", fmt_f(self.m_percent));
        kv("participation", fmt_f(self.participation));
        kv("rounds", self.rounds.to_string());
        kv("aggregator", self.aggregator.name().into());
        kv("model.hidden", fmt_list(&self.model_hidden));
        kv("local.lr", fmt_f(self.local.learning_rate));
        kv("local.weight_decay", fmt_f(self.local.weight_decay));
        kv("local.batch_size", self.local.batch_size.to_string());
        kv("local.epochs", self.local.epochs.to_string());
        let d = &self.ddpg;
        kv("ddpg.gamma", fmt_f(d.gamma));
        kv("ddpg.epsilon_soft", fmt_f(d.epsilon_soft));
        kv("ddpg.actor_lr", fmt_f(d.actor_lr));
        kv("ddpg.critic_lr", fmt_f(d.critic_lr));
        kv("ddpg.weight_decay", fmt_f(d.weight_decay));
        kv("ddpg.hidden", fmt_list(&d.hidden));
        kv("ddpg.noise_sigma", fmt_f(d.noise_sigma));
        kv("ddpg.noise_sigma_final", fmt_f(d.noise_sigma_final));
        kv("ddpg.buffer_capacity", d.buffer_capacity.to_string());
        kv("ddpg.batch_size", d.batch_size.to_string());
        kv("ddpg.warmup", d.warmup.to_string());
        kv("selection.scope", self.scope.name().into());
        match &self.validation {
            ValidationSpec::Balanced { per_class } => {
                kv("validation", "balanced".into());
                kv("validation.per_class", per_class.to_string());
            }
            ValidationSpec::Unfair { major, minor } => {
                kv("validation", "unfair".into());
                kv("validation.major", major.to_string());
                kv("validation.minor", minor.to_string());
            }
            ValidationSpec::Counts { counts } => {
                kv("validation", "counts".into());
                kv("validation.counts", fmt_list(counts));
            }
            ValidationSpec::Upload { fraction } => {
                kv("validation", "upload".into());
                kv("validation.upload_fraction", fmt_f(*fraction));
            }
        }
        kv("seed", self.seed.to_string());
        out
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn dataset_name(&self) -> String {
        match &self.dataset {
            DatasetSpec::Synthetic { alpha, beta, .. } => format!("synthetic({},{})", fmt_f(*alpha), fmt_f(*beta)),
            DatasetSpec::SyntheticPooled { alpha, beta, .. } => {
                format!("synthetic_pooled({},{})", fmt_f(*alpha), fmt_f(*beta))
            }
            DatasetSpec::Idx { images, .. } => format!("idx:{}", file_stem(images)),
            DatasetSpec::Csv { path, .. } => format!("csv:{}", file_stem(path)),
        }
    }

    pub fn attack_name(&self) -> &'static str {
        self.attack.map_or("none", |a| a.kind.name())
    }
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

fn write_sizes(kv: &mut impl FnMut(&str, String), sizes: &SizeDistribution) {
    kv("dataset.size_log_mean", fmt_f(sizes.log_mean));
    kv("dataset.size_log_std", fmt_f(sizes.log_std));
    kv("dataset.size_min", sizes.min.to_string());
    kv("dataset.size_max", sizes.max.to_string());
}

/// Shortest representation that parses back to the same value.
fn fmt_f(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| FedError::io(path, e))?;
    ExperimentConfig::from_text(&text)
}

/// Parsed `key = value` lines with their line numbers.
#[derive(Debug, Clone, Default)]
pub struct KvDoc {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| FedError::Parse {
                line,
                message: format!("expected `key = value`, got {content:?}"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(FedError::Parse {
                    line,
                    message: "empty key".into(),
                });
            }
            if let Some((first, _)) = entries.insert(key.to_string(), (line, value.trim().to_string())) {
                return Err(FedError::Parse {
                    line,
                    message: format!("duplicate key {key:?} (first set on line {first})"),
                });
            }
        }
        Ok(KvDoc { entries })
    }

    pub fn set(&mut self, key: &str, value: &str) {
        // overrides report line 0
        self.entries.insert(key.to_string(), (0, value.to_string()));
    }
}

/// Consumes keys from a [`KvDoc`], tracking which ones were used.
struct Reader<'a> {
    doc: &'a KvDoc,
    used: BTreeMap<&'a str, ()>,
}

impl<'a> Reader<'a> {
    fn raw(&mut self, key: &str) -> Option<(usize, &'a str)> {
        let (k, (line, v)) = self.doc.entries.get_key_value(key)?;
        self.used.insert(k.as_str(), ());
        Some((*line, v.as_str()))
    }

    fn line_of(&self, key: &str) -> usize {
        self.doc.entries.get(key).map_or(0, |(l, _)| *l)
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some((line, v)) => v.parse().map_err(|_| FedError::Parse {
                line,
                message: format!("{key}: cannot parse {v:?} as {}", std::any::type_name::<T>()),
            }),
        }
    }

    fn list(&mut self, key: &str, default: Vec<usize>) -> Result<Vec<usize>> {
        match self.raw(key) {
            None => Ok(default),
            Some((line, v)) => {
                if v.is_empty() || v == "none" {
                    return Ok(Vec::new());
                }
                v.split(',')
                    .map(|p| {
                        p.trim().parse().map_err(|_| FedError::Parse {
                            line,
                            message: format!("{key}: {p:?} is not a non-negative integer"),
                        })
                    })
                    .collect()
            }
        }
    }

    fn string(&mut self, key: &str, default: &str) -> (usize, String) {
        match self.raw(key) {
            None => (0, default.to_string()),
            Some((line, v)) => (line, v.to_string()),
        }
    }

    fn path(&mut self, key: &str) -> Result<PathBuf> {
        match self.raw(key) {
            Some((_, v)) if !v.is_empty() => Ok(PathBuf::from(v)),
            _ => Err(FedError::Parse {
                line: 0,
                message: format!("{key} is required"),
            }),
        }
    }

    fn finish(&self) -> Result<()> {
        for (key, (line, _)) in &self.doc.entries {
            if !self.used.contains_key(key.as_str()) {
                return Err(FedError::Parse {
                    line: *line,
                    message: format!("unknown key {key:?} (or not applicable to the chosen kinds)"),
                });
            }
        }
        Ok(())
    }
}

fn sizes(r: &mut Reader) -> Result<SizeDistribution> {
    let d = SizeDistribution::default();
    Ok(SizeDistribution {
        log_mean: r.get("dataset.size_log_mean", d.log_mean)?,
        log_std: r.get("dataset.size_log_std", d.log_std)?,
        min: r.get("dataset.size_min", d.min)?,
        max: r.get("dataset.size_max", d.max)?,
    })
}

const DEFAULT_CONCENTRATION: f64 = 0.1;

fn build(doc: &KvDoc) -> Result<ExperimentConfig> {
    let mut r = Reader {
        doc,
        used: BTreeMap::new(),
    };
    let defaults = ExperimentConfig::default();

    let (line, kind) = r.string("dataset", "synthetic00");
    let preset = |alpha: f64, beta: f64, r: &mut Reader| -> Result<DatasetSpec> {
        Ok(DatasetSpec::Synthetic {
            alpha: r.get("dataset.synthetic_alpha", alpha)?,
            beta: r.get("dataset.synthetic_beta", beta)?,
            sizes: sizes(r)?,
        })
    };
    let dataset = match kind.as_str() {
        "synthetic" | "synthetic00" => preset(0.0, 0.0, &mut r)?,
        "synthetic11" => preset(1.0, 1.0, &mut r)?,
        "synthetic_pooled" => DatasetSpec::SyntheticPooled {
            alpha: r.get("dataset.synthetic_alpha", 0.0)?,
            beta: r.get("dataset.synthetic_beta", 0.0)?,
            sizes: sizes(&mut r)?,
            components: r.get("dataset.components", defaults.num_clients)?,
            concentration: r.get("dataset.dirichlet_concentration", DEFAULT_CONCENTRATION)?,
        },
        "idx" => DatasetSpec::Idx {
            images: r.path("dataset.images")?,
            labels: r.path("dataset.labels")?,
            concentration: r.get("dataset.dirichlet_concentration", DEFAULT_CONCENTRATION)?,
        },
        "csv" => DatasetSpec::Csv {
            path: r.path("dataset.path")?,
            concentration: r.get("dataset.dirichlet_concentration", DEFAULT_CONCENTRATION)?,
        },
        other => {
            return Err(FedError::Parse {
                line,
                message: format!("unknown dataset {other:?}"),
            })
        }
    };

    let num_clients = r.get("num_clients", defaults.num_clients)?;
    let malicious_fraction = r.get("malicious_fraction", defaults.malicious_fraction)?;
    let (line, attack_kind) = r.string("attack", "none");
    let attack = match attack_kind.as_str() {
        "none" => None,
        name => {
            let kind = AttackKind::parse(name).ok_or_else(|| FedError::Parse {
                line,
                message: format!("unknown attack {name:?}"),
            })?;
            let mut spec = AttackSpec::new(kind);
            spec.tau = r.get("attack.tau", spec.tau)?;
            if kind == AttackKind::Ipm {
                spec.ipm_epsilon = r.get("attack.ipm_epsilon", spec.ipm_epsilon)?;
            }
            Some(spec)
        }
    };
    let m_percent = r.get("m_percent", defaults.m_percent)?;
    let participation = r.get("participation", defaults.participation)?;
    let rounds = r.get("rounds", defaults.rounds)?;
    let (line, agg) = r.string("aggregator", "fedaa");
    let aggregator = match agg.as_str() {
        "fedaa" => Aggregator::Fedaa,
        "fedavg" => Aggregator::Fedavg,
        other => {
            return Err(FedError::Parse {
                line,
                message: format!("unknown aggregator {other:?}"),
            })
        }
    };
    let model_hidden = r.list("model.hidden", defaults.model_hidden.clone())?;
    let sd = SgdConfig::default();
    let local = SgdConfig {
        learning_rate: r.get("local.lr", sd.learning_rate)?,
        weight_decay: r.get("local.weight_decay", sd.weight_decay)?,
        batch_size: r.get("local.batch_size", sd.batch_size)?,
        epochs: r.get("local.epochs", sd.epochs)?,
    };
    let dd = DdpgConfig::default();
    let ddpg = DdpgConfig {
        gamma: r.get("ddpg.gamma", dd.gamma)?,
        epsilon_soft: r.get("ddpg.epsilon_soft", dd.epsilon_soft)?,
        actor_lr: r.get("ddpg.actor_lr", dd.actor_lr)?,
        critic_lr: r.get("ddpg.critic_lr", dd.critic_lr)?,
        weight_decay: r.get("ddpg.weight_decay", dd.weight_decay)?,
        hidden: r.list("ddpg.hidden", dd.hidden.clone())?,
        noise_sigma: r.get("ddpg.noise_sigma", dd.noise_sigma)?,
        noise_sigma_final: r.get("ddpg.noise_sigma_final", dd.noise_sigma_final)?,
        buffer_capacity: r.get("ddpg.buffer_capacity", dd.buffer_capacity)?,
        batch_size: r.get("ddpg.batch_size", dd.batch_size)?,
        warmup: r.get("ddpg.warmup", dd.warmup)?,
    };
    let (line, scope) = r.string("selection.scope", "all_layers");
    let scope = DistanceScope::parse(&scope).ok_or_else(|| FedError::Parse {
        line,
        message: format!("unknown selection.scope {scope:?}"),
    })?;
    let default_validation = match dataset {
        DatasetSpec::Synthetic { .. } => "upload",
        _ => "balanced",
    };
    let (line, vkind) = r.string("validation", default_validation);
    let validation = match vkind.as_str() {
        "balanced" => ValidationSpec::Balanced {
            per_class: r.get("validation.per_class", 100)?,
        },
        "unfair" => ValidationSpec::Unfair {
            major: r.get("validation.major", 100)?,
            minor: r.get("validation.minor", 10)?,
        },
        "counts" => ValidationSpec::Counts {
            counts: r.list("validation.counts", Vec::new())?,
        },
        "upload" => ValidationSpec::Upload {
            fraction: r.get("validation.upload_fraction", 0.1)?,
        },
        other => {
            return Err(FedError::Parse {
                line,
                message: format!("unknown validation {other:?}"),
            })
        }
    };
    let seed = r.get("seed", defaults.seed)?;
    r.finish()?;

    let cfg = ExperimentConfig {
        dataset,
        num_clients,
        malicious_fraction,
        attack,
        m_percent,
        participation,
        rounds,
        aggregator,
        model_hidden,
        local,
        ddpg,
        scope,
        validation,
        seed,
    };
    cfg.validate().map_err(|e| match e {
        FedError::Config(message) => FedError::Parse {
            line: constraint_line(&r, &message),
            message,
        },
        other => other,
    })?;
    Ok(cfg)
}

/// Best-effort line for a constraint violation: the first key named in the message.
fn constraint_line(r: &Reader, message: &str) -> usize {
    r.doc
        .entries
        .keys()
        .filter(|k| message.contains(k.as_str()))
        .max_by_key(|k| k.len())
        .map_or(0, |k| r.line_of(k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_text("dataset = synthetic00\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.m_percent, 30.0);
        assert_eq!(cfg.participation, 1.0);
        assert_eq!(cfg.ddpg.gamma, 0.99);
        assert_eq!(cfg.ddpg.epsilon_soft, 0.001);
        assert_eq!(cfg.ddpg.actor_lr, 1e-2);
        assert_eq!(cfg.ddpg.weight_decay, 1e-5);
        assert_eq!(cfg.local.learning_rate, 0.1);
        assert_eq!(cfg.local.batch_size, 64);
        assert_eq!(cfg.local.epochs, 20);
    }

    #[test]
    fn malicious_majority_rejected_with_line() {
        let err = ExperimentConfig::from_text("dataset = synthetic00\nattack = sign_flip\nmalicious_fraction = 0.6\n")
            .unwrap_err();
        match err {
            FedError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = ExperimentConfig::from_text("rounds = 3\nrounds = 4\n").unwrap_err();
        assert!(matches!(err, FedError::Parse { line: 2, .. }));
    }

    #[test]
    fn unknown_key_rejected() {
        let err = ExperimentConfig::from_text("dataset = synthetic00\nddpg.gama = 0.9\n").unwrap_err();
        assert!(matches!(err, FedError::Parse { line: 2, .. }));
    }

    #[test]
    fn inapplicable_key_rejected() {
        let err = ExperimentConfig::from_text("attack = gaussian\nattack.ipm_epsilon = 0.3\n").unwrap_err();
        assert!(matches!(err, FedError::Parse { line: 2, .. }));
    }

    #[test]
    fn type_mismatch_rejected() {
        let err = ExperimentConfig::from_text("\nrounds = many\n").unwrap_err();
        assert!(matches!(err, FedError::Parse { line: 2, .. }));
    }

    #[test]
    fn canonical_text_round_trips() {
        let text = "dataset = synthetic11\nattack = ipm\nmalicious_fraction = 0.2\nmodel.hidden = 100,100\n\
                    validation = unfair\nvalidation.minor = 5\nparticipation = 0.5\nseed = 42\n";
        let cfg = ExperimentConfig::from_text(text).unwrap();
        let again = ExperimentConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
    }

    #[test]
    fn overrides_apply() {
        let cfg = ExperimentConfig::default();
        let o = cfg
            .with_overrides(&[("m_percent".into(), "80".into()), ("seed".into(), "3".into())])
            .unwrap();
        assert_eq!(o.m_percent, 80.0);
        assert_eq!(o.seed, 3);
        let v = cfg.with_overrides(&[("validation".into(), "balanced".into())]).unwrap();
        assert_eq!(v.validation, ValidationSpec::Balanced { per_class: 100 });
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = ExperimentConfig::from_text("# header\n\nrounds = 7 # trailing\n").unwrap();
        assert_eq!(cfg.rounds, 7);
    }
}
