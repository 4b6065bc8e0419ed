//! Fast invariant checks, runnable from the command line.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::datasets::{dirichlet_partition, LabeledDataset};
use crate::ddpg::{DdpgAgent, DdpgConfig, ReplayBuffer, Transition};
use crate::nn::{param_count, ArchSpec, FlatParams, MlpModel, OutputHead};
use crate::orchestrator::aggregate;
use crate::seed;
use crate::selection::distance_matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: impl Into<String>) -> Check {
    Check {
        name,
        passed,
        detail: detail.into(),
    }
}

fn param_counts() -> Check {
    let a = ArchSpec::new(784, vec![100], 10, OutputHead::Logits).expect("arch");
    let b = ArchSpec::new(784, vec![100, 100], 62, OutputHead::Logits).expect("arch");
    let (x, y) = (param_count(&a), param_count(&b));
    check("param_count", x == 79_510 && y == 94_862, format!("{x}, {y}"))
}

fn simplex_actions() -> Check {
    let mut rng = seed::rng(11);
    let agent = DdpgAgent::new(6, 6, DdpgConfig::default(), &mut rng).expect("agent");
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let s: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
        let a = agent.act(&s, true, &mut rng).expect("act");
        let sum: f64 = a.iter().sum();
        worst = worst.max((sum - 1.0).abs());
        if a.iter().any(|&v| v < 0.0) {
            worst = f64::INFINITY;
        }
    }
    check("simplex_actions", worst < 1e-9, format!("max |sum - 1| = {worst:e}"))
}

fn soft_update() -> Check {
    let cfg = DdpgConfig {
        hidden: vec![],
        ..DdpgConfig::default()
    };
    let arch_a = ArchSpec::new(1, vec![], 1, OutputHead::SoftmaxSimplex).expect("arch");
    let arch_c = ArchSpec::new(2, vec![], 1, OutputHead::Scalar).expect("arch");
    let mut agent = DdpgAgent::from_networks(MlpModel::zeros(&arch_a), MlpModel::zeros(&arch_c), cfg);
    agent.actor.params_mut().values_mut().fill(1.0);
    agent.soft_update();
    let got = agent.target_actor.params().values()[0];
    check("soft_update", (got - 0.001).abs() < 1e-15, format!("target = {got}"))
}

fn buffer_fifo() -> Check {
    let mut buf = ReplayBuffer::new(3);
    for i in 0..5 {
        buf.push(Transition {
            state: vec![i as f64],
            action: vec![1.0],
            reward: 0.0,
            next_state: vec![0.0],
        });
    }
    let kept: Vec<f64> = buf.iter().map(|t| t.state[0]).collect();
    check("buffer_fifo", kept == [2.0, 3.0, 4.0], format!("{kept:?}"))
}

fn partition_complete() -> Check {
    let mut rng = seed::rng(5);
    let n = 600;
    let features = ndarray::Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let data = LabeledDataset::new(features, labels, 3).expect("dataset");
    let part = dirichlet_partition(&data, 10, 0.5, &mut rng).expect("partition");
    let mut ids = part.all_ids();
    ids.sort_unstable();
    let ok = ids == (0..n).collect::<Vec<_>>();
    check("partition_complete", ok, format!("{} ids", ids.len()))
}

fn distance_symmetry() -> Check {
    let mut rng = seed::rng(9);
    let normal = Normal::new(0.0, 1.0).expect("normal");
    let vs: Vec<Vec<f64>> = (0..8).map(|_| (0..20).map(|_| normal.sample(&mut rng)).collect()).collect();
    let refs: Vec<&[f64]> = vs.iter().map(Vec::as_slice).collect();
    let m = distance_matrix(&refs);
    let ok = (0..8).all(|i| m[i][i] == 0.0 && (0..8).all(|j| m[i][j] == m[j][i] && m[i][j] >= 0.0));
    check("distance_symmetry", ok, "8 x 8")
}

fn convex_hull() -> Check {
    let mut rng = seed::rng(3);
    let arch = ArchSpec::new(4, vec![], 1, OutputHead::Logits).expect("arch");
    let ups: Vec<FlatParams> = (0..4)
        .map(|_| {
            let v = (0..5).map(|_| rng.random_range(-5.0..5.0)).collect();
            FlatParams::new(arch.clone(), v).expect("params")
        })
        .collect();
    let refs: Vec<&FlatParams> = ups.iter().collect();
    let mut raw: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter_mut().for_each(|w| *w /= total);
    let out = aggregate(&refs, &raw).expect("aggregate");
    let ok = (0..5).all(|j| {
        let lo = ups.iter().map(|u| u.values()[j]).fold(f64::INFINITY, f64::min);
        let hi = ups.iter().map(|u| u.values()[j]).fold(f64::NEG_INFINITY, f64::max);
        let v = out.values()[j];
        v >= lo - 1e-12 && v <= hi + 1e-12
    });
    check("convex_hull", ok, "4 uploads")
}

pub fn run_all() -> Vec<Check> {
    vec![
        param_counts(),
        simplex_actions(),
        soft_update(),
        buffer_fifo(),
        partition_complete(),
        distance_symmetry(),
        convex_hull(),
    ]
}
