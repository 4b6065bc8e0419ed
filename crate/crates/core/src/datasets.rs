//! Data generation, partitioning and ingestion.
//!
//! Every sample carries a provenance id (`LabeledDataset::ids`) that is unique
//! within one experiment, which is what the partition-completeness and
//! validation-disjointness checks operate on.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::nn::argmax;

pub const SYNTHETIC_INPUT_DIM: usize = 60;
pub const SYNTHETIC_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Provenance id of each row.
    pub ids: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let ids = (0..labels.len()).collect();
        Self::with_ids(features, labels, num_classes, ids)
    }

    pub fn with_ids(
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        ids: Vec<usize>,
    ) -> Result<Self> {
        if features.nrows() != labels.len() || ids.len() != labels.len() {
            return Err(FedError::config(format!(
                "{} feature rows, {} labels, {} ids",
                features.nrows(),
                labels.len(),
                ids.len()
            )));
        }
        if num_classes == 0 {
            return Err(FedError::config("num_classes must be positive"));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(FedError::config(format!("label {y} outside [0, {num_classes})")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(FedError::config("features contain NaN or infinite values"));
        }
        Ok(LabeledDataset {
            features,
            labels,
            num_classes,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Rows at the given positions (not ids), keeping provenance.
    pub fn subset(&self, rows: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            ids: rows.iter().map(|&i| self.ids[i]).collect(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Row positions grouped by class.
    pub fn rows_by_class(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            rows[y].push(i);
        }
        rows
    }

    pub fn concat(parts: &[&LabeledDataset]) -> Result<LabeledDataset> {
        let first = parts
            .first()
            .ok_or_else(|| FedError::config("nothing to concatenate"))?;
        let views: Vec<_> = parts.iter().map(|p| p.features.view()).collect();
        let features = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| FedError::config(format!("feature width mismatch: {e}")))?;
        Ok(LabeledDataset {
            features,
            labels: parts.iter().flat_map(|p| p.labels.iter().copied()).collect(),
            num_classes: first.num_classes,
            ids: parts.iter().flat_map(|p| p.ids.iter().copied()).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum PartitionScheme {
    Synthetic { alpha: f64, beta: f64 },
    Dirichlet { concentration: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientPartition {
    pub clients: Vec<ClientData>,
    pub scheme: PartitionScheme,
}

impl ClientPartition {
    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    /// Every provenance id held by any client, train then test, in client order.
    pub fn all_ids(&self) -> Vec<usize> {
        self.clients
            .iter()
            .flat_map(|c| c.train.ids.iter().chain(&c.test.ids).copied())
            .collect()
    }
}

/// Heterogeneous per-client sample sizes: log-normal, rounded and clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeDistribution {
    pub log_mean: f64,
    pub log_std: f64,
    pub min: usize,
    pub max: usize,
}

impl Default for SizeDistribution {
    fn default() -> Self {
        SizeDistribution {
            log_mean: 4.5,
            log_std: 1.0,
            min: 20,
            max: 1000,
        }
    }
}

impl SizeDistribution {
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.min > self.max {
            return Err(FedError::config("size distribution min exceeds max"));
        }
        let dist = LogNormal::new(self.log_mean, self.log_std)
            .map_err(|e| FedError::config(format!("invalid log-normal size distribution: {e}")))?;
        Ok((0..n)
            .map(|_| (dist.sample(rng).round() as usize).clamp(self.min, self.max))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Standard deviation of the per-client model mean `u_k`.
    pub alpha: f64,
    /// Standard deviation of the per-client feature mean `mu_k`.
    pub beta: f64,
    pub samples_per_client: Vec<usize>,
}

impl SyntheticSpec {
    pub fn num_clients(&self) -> usize {
        self.samples_per_client.len()
    }
}

/// One client's generative model: labels are `argmax(W x + b)`, features are
/// independent with `x_j ~ N(v_j, j^-1.2)` for `j = 1..=60`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticModel {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub feature_mean: Array1<f64>,
    pub u: f64,
    pub mu: f64,
}

impl SyntheticModel {
    pub fn draw<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> Result<Self> {
        let u = normal(0.0, alpha)?.sample(rng);
        let mu = normal(0.0, beta)?.sample(rng);
        let around_u = normal(u, 1.0)?;
        let weights = Array2::from_shape_fn((SYNTHETIC_CLASSES, SYNTHETIC_INPUT_DIM), |_| {
            around_u.sample(rng)
        });
        let bias = Array1::from_shape_fn(SYNTHETIC_CLASSES, |_| around_u.sample(rng));
        let around_mu = normal(mu, 1.0)?;
        let feature_mean = Array1::from_shape_fn(SYNTHETIC_INPUT_DIM, |_| around_mu.sample(rng));
        Ok(SyntheticModel {
            weights,
            bias,
            feature_mean,
            u,
            mu,
        })
    }

    pub fn feature_std(j: usize) -> f64 {
        // variance j^-1.2 with j counted from 1
        ((j + 1) as f64).powf(-0.6)
    }

    pub fn sample_features<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        let mut x = Array2::zeros((n, SYNTHETIC_INPUT_DIM));
        for mut row in x.outer_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(rng);
                *v = self.feature_mean[j] + Self::feature_std(j) * z;
            }
        }
        x
    }

    pub fn logits(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights.t());
        z += &self.bias;
        z
    }

    pub fn label(&self, x: &Array2<f64>) -> Vec<usize> {
        self.logits(x).outer_iter().map(argmax).collect()
    }
}

fn normal(mean: f64, std: f64) -> Result<Normal<f64>> {
    Normal::new(mean, std).map_err(|e| FedError::config(format!("invalid normal({mean}, {std}): {e}")))
}

/// Assigns consecutive provenance ids starting at `next_id`.
fn labeled_with_fresh_ids(
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    next_id: &mut usize,
) -> Result<LabeledDataset> {
    let ids = (*next_id..*next_id + labels.len()).collect();
    *next_id += labels.len();
    LabeledDataset::with_ids(features, labels, num_classes, ids)
}

/// Output of the synthetic generator, including the per-client models so a
/// server pool can be drawn from their mixture.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub partition: ClientPartition,
    pub models: Vec<SyntheticModel>,
    /// First provenance id not used by the generated clients.
    pub next_id: usize,
}

pub fn generate_synthetic<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<ClientPartition> {
    Ok(generate_synthetic_full(spec, rng)?.partition)
}

pub fn generate_synthetic_full<R: Rng + ?Sized>(
    spec: &SyntheticSpec,
    rng: &mut R,
) -> Result<SyntheticData> {
    if spec.samples_per_client.is_empty() {
        return Err(FedError::config("synthetic data needs at least one client"));
    }
    if let Some((k, &n)) = spec.samples_per_client.iter().enumerate().find(|(_, &n)| n < 5) {
        return Err(FedError::config(format!(
            "client {k} has {n} samples; at least 5 are needed for a train/test split"
        )));
    }
    if !(spec.alpha >= 0.0 && spec.beta >= 0.0) {
        return Err(FedError::config("synthetic alpha and beta must be non-negative"));
    }
    let mut next_id = 0;
    let mut clients = Vec::with_capacity(spec.num_clients());
    let mut models = Vec::with_capacity(spec.num_clients());
    for &n in &spec.samples_per_client {
        let model = SyntheticModel::draw(spec.alpha, spec.beta, rng)?;
        let x = model.sample_features(n, rng);
        let y = model.label(&x);
        let data = labeled_with_fresh_ids(x, y, SYNTHETIC_CLASSES, &mut next_id)?;
        clients.push(split_train_test(&data, rng)?);
        models.push(model);
    }
    Ok(SyntheticData {
        partition: ClientPartition {
            clients,
            scheme: PartitionScheme::Synthetic {
                alpha: spec.alpha,
                beta: spec.beta,
            },
        },
        models,
        next_id,
    })
}

/// Test share of every per-client split.
pub const TEST_FRACTION: f64 = 0.2;

/// Shuffled, class-stratified 80/20 split with at least one sample on each side.
pub fn split_train_test<R: Rng + ?Sized>(data: &LabeledDataset, rng: &mut R) -> Result<ClientData> {
    if data.len() < 2 {
        return Err(FedError::config(format!(
            "cannot split {} samples into train and test",
            data.len()
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut rows in data.rows_by_class() {
        rows.shuffle(rng);
        let n_test = (rows.len() as f64 * TEST_FRACTION).round() as usize;
        test.extend_from_slice(&rows[..n_test]);
        train.extend_from_slice(&rows[n_test..]);
    }
    if test.is_empty() {
        let i = rng.random_range(0..train.len());
        test.push(train.swap_remove(i));
    }
    if train.is_empty() {
        let i = rng.random_range(0..test.len());
        train.push(test.swap_remove(i));
    }
    train.shuffle(rng);
    test.shuffle(rng);
    Ok(ClientData {
        train: data.subset(&train),
        test: data.subset(&test),
    })
}

/// Label-skewed partition: per class, client shares are drawn from a
/// symmetric Dirichlet and the class's samples are dealt out accordingly.
pub fn dirichlet_partition<R: Rng + ?Sized>(
    source: &LabeledDataset,
    num_clients: usize,
    concentration: f64,
    rng: &mut R,
) -> Result<ClientPartition> {
    if num_clients == 0 {
        return Err(FedError::config("num_clients must be positive"));
    }
    if !(concentration > 0.0 && concentration.is_finite()) {
        return Err(FedError::config("dirichlet concentration must be positive"));
    }
    if source.len() < num_clients * 10 {
        return Err(FedError::config(format!(
            "{} samples cannot be partitioned over {} clients (need at least {})",
            source.len(),
            num_clients,
            num_clients * 10
        )));
    }
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|e| FedError::config(format!("invalid concentration: {e}")))?;
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
    for mut rows in source.rows_by_class() {
        if rows.is_empty() {
            continue;
        }
        rows.shuffle(rng);
        let mut shares: Vec<f64> = (0..num_clients).map(|_| gamma.sample(rng)).collect();
        let total: f64 = shares.iter().sum();
        if total > 0.0 && total.is_finite() {
            shares.iter_mut().for_each(|s| *s /= total);
        } else {
            // every gamma draw underflowed; give the class to one client
            shares.iter_mut().for_each(|s| *s = 0.0);
            shares[rng.random_range(0..num_clients)] = 1.0;
        }
        let n = rows.len();
        let mut start = 0;
        let mut cumulative = 0.0;
        for (k, share) in shares.iter().enumerate() {
            cumulative += share;
            let end = if k + 1 == num_clients {
                n
            } else {
                ((cumulative * n as f64).round() as usize).clamp(start, n)
            };
            assigned[k].extend_from_slice(&rows[start..end]);
            start = end;
        }
    }
    repair_small_clients(&mut assigned, 2)?;
    let clients = assigned
        .iter()
        .map(|rows| split_train_test(&source.subset(rows), rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClientPartition {
        clients,
        scheme: PartitionScheme::Dirichlet { concentration },
    })
}

/// Moves samples from the currently largest client until every client holds
/// at least `minimum`.
fn repair_small_clients(assigned: &mut [Vec<usize>], minimum: usize) -> Result<()> {
    let total: usize = assigned.iter().map(Vec::len).sum();
    if total < minimum * assigned.len() {
        return Err(FedError::config(format!(
            "{total} samples cannot give {} clients {minimum} samples each",
            assigned.len()
        )));
    }
    for k in 0..assigned.len() {
        while assigned[k].len() < minimum {
            let donor = (0..assigned.len())
                .max_by_key(|&j| (assigned[j].len(), std::cmp::Reverse(j)))
                .expect("non-empty");
            let row = assigned[donor].pop().expect("donor holds samples");
            assigned[k].push(row);
        }
    }
    Ok(())
}

/// Picks exactly `per_class_counts[c]` samples of each class `c` from
/// `source`. Returns the validation set and the remaining samples.
pub fn reserve_validation<R: Rng + ?Sized>(
    source: &LabeledDataset,
    per_class_counts: &[usize],
    rng: &mut R,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if per_class_counts.len() != source.num_classes {
        return Err(FedError::config(format!(
            "{} per-class counts for {} classes",
            per_class_counts.len(),
            source.num_classes
        )));
    }
    if let Some(c) = per_class_counts.iter().position(|&n| n == 0) {
        return Err(FedError::config(format!(
            "validation set requests zero samples of class {c}"
        )));
    }
    let mut chosen = Vec::new();
    let mut rest = Vec::new();
    for (c, mut rows) in source.rows_by_class().into_iter().enumerate() {
        let want = per_class_counts[c];
        if rows.len() < want {
            return Err(FedError::config(format!(
                "class {c} has {} samples, validation set needs {want}",
                rows.len()
            )));
        }
        rows.shuffle(rng);
        chosen.extend_from_slice(&rows[..want]);
        rest.extend_from_slice(&rows[want..]);
    }
    rest.sort_unstable();
    Ok((source.subset(&chosen), source.subset(&rest)))
}

pub fn build_validation_set<R: Rng + ?Sized>(
    source: &LabeledDataset,
    per_class_counts: &[usize],
    rng: &mut R,
) -> Result<LabeledDataset> {
    reserve_validation(source, per_class_counts, rng).map(|(v, _)| v)
}

/// `[major, major, minor, ...]`: the first two classes over-represented.
pub fn unfair_counts(num_classes: usize, major: usize, minor: usize) -> Vec<usize> {
    (0..num_classes).map(|c| if c < 2 { major } else { minor }).collect()
}

/// Draws a labeled pool from the size-weighted mixture of client generative
/// models until each class reaches its requested count (or `max_draws` runs out).
pub fn synthetic_mixture_pool<R: Rng + ?Sized>(
    models: &[SyntheticModel],
    weights: &[usize],
    per_class_counts: &[usize],
    max_draws: usize,
    first_id: usize,
    rng: &mut R,
) -> Result<LabeledDataset> {
    if models.is_empty() || models.len() != weights.len() {
        return Err(FedError::config("mixture needs one weight per model"));
    }
    let total: usize = weights.iter().sum();
    if total == 0 {
        return Err(FedError::config("mixture weights sum to zero"));
    }
    let mut have = [0usize; SYNTHETIC_CLASSES];
    let mut rows: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    let mut draws = 0;
    while (0..SYNTHETIC_CLASSES).any(|c| have[c] < per_class_counts[c]) && draws < max_draws {
        let mut pick = rng.random_range(0..total);
        let k = weights
            .iter()
            .position(|&w| {
                if pick < w {
                    true
                } else {
                    pick -= w;
                    false
                }
            })
            .expect("pick below total");
        let x = models[k].sample_features(1, rng);
        let y = models[k].label(&x)[0];
        draws += 1;
        if have[y] < per_class_counts[y] {
            have[y] += 1;
            rows.extend(x.iter());
            labels.push(y);
        }
    }
    if let Some(c) = (0..SYNTHETIC_CLASSES).find(|&c| have[c] < per_class_counts[c]) {
        return Err(FedError::config(format!(
            "class {c}: only {} of {} validation samples found after {max_draws} mixture draws",
            have[c], per_class_counts[c]
        )));
    }
    let n = labels.len();
    let features = Array2::from_shape_vec((n, SYNTHETIC_INPUT_DIM), rows)
        .map_err(|e| FedError::Internal(e.to_string()))?;
    let ids = (first_id..first_id + n).collect();
    LabeledDataset::with_ids(features, labels, SYNTHETIC_CLASSES, ids)
}

/// Removes `count` random samples from each client's training set and pools
/// them at the server.
pub fn collect_uploads<R: Rng + ?Sized>(
    partition: &mut ClientPartition,
    count: usize,
    rng: &mut R,
) -> Result<LabeledDataset> {
    let mut uploads = Vec::with_capacity(partition.num_clients());
    for (k, client) in partition.clients.iter_mut().enumerate() {
        if client.train.len() <= count {
            return Err(FedError::config(format!(
                "client {k} has {} training samples and cannot upload {count}",
                client.train.len()
            )));
        }
        let mut rows: Vec<usize> = (0..client.train.len()).collect();
        rows.shuffle(rng);
        let (up, keep) = rows.split_at(count);
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        uploads.push(client.train.subset(up));
        client.train = client.train.subset(&keep);
    }
    let refs: Vec<&LabeledDataset> = uploads.iter().collect();
    LabeledDataset::concat(&refs)
}

fn ingest_err(path: &Path, offset: u64, message: impl Into<String>) -> FedError {
    FedError::Ingest {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| ingest_err(path, offset as u64, "truncated header"))
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Reads an IDX image/label file pair. Pixels are scaled to `[0, 1]` and each
/// image flattened row-major.
pub fn load_idx_images(images: &Path, labels: &Path) -> Result<LabeledDataset> {
    let img = fs::read(images).map_err(|e| FedError::io(images, e))?;
    let lab = fs::read(labels).map_err(|e| FedError::io(labels, e))?;

    let magic = read_u32_be(&img, 0, images)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(ingest_err(images, 0, format!("bad image magic {magic:#010x}")));
    }
    let n = read_u32_be(&img, 4, images)? as usize;
    let rows = read_u32_be(&img, 8, images)? as usize;
    let cols = read_u32_be(&img, 12, images)? as usize;
    let width = rows * cols;
    let needed = 16 + n * width;
    if img.len() < needed {
        return Err(ingest_err(
            images,
            img.len() as u64,
            format!("truncated pixel data: expected {needed} bytes"),
        ));
    }

    let magic = read_u32_be(&lab, 0, labels)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(ingest_err(labels, 0, format!("bad label magic {magic:#010x}")));
    }
    let n_labels = read_u32_be(&lab, 4, labels)? as usize;
    if n_labels != n {
        return Err(ingest_err(
            labels,
            4,
            format!("{n_labels} labels for {n} images"),
        ));
    }
    if lab.len() < 8 + n {
        return Err(ingest_err(labels, lab.len() as u64, "truncated label data"));
    }

    let features = Array2::from_shape_fn((n, width), |(i, j)| img[16 + i * width + j] as f64 / 255.0);
    let ys: Vec<usize> = lab[8..8 + n].iter().map(|&b| b as usize).collect();
    let num_classes = ys.iter().max().map_or(1, |m| m + 1);
    LabeledDataset::new(features, ys, num_classes)
}

/// Writes an IDX pair; pixels are `u8` row-major, `rows x cols` per image.
pub fn write_idx(
    images: &Path,
    labels: &Path,
    pixels: &[Vec<u8>],
    ys: &[u8],
    rows: u32,
    cols: u32,
) -> Result<()> {
    let mut img = Vec::with_capacity(16 + pixels.len() * (rows * cols) as usize);
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(pixels.len() as u32).to_be_bytes());
    img.extend_from_slice(&rows.to_be_bytes());
    img.extend_from_slice(&cols.to_be_bytes());
    for p in pixels {
        img.extend_from_slice(p);
    }
    let mut lab = Vec::with_capacity(8 + ys.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(ys.len() as u32).to_be_bytes());
    lab.extend_from_slice(ys);
    fs::write(images, img).map_err(|e| FedError::io(images, e))?;
    fs::write(labels, lab).map_err(|e| FedError::io(labels, e))?;
    Ok(())
}

/// Numeric CSV with a header row; the last column is an integer class label.
pub fn load_csv(path: &Path) -> Result<LabeledDataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let width = reader.headers().map_err(|e| csv_err(path, e))?.len();
    if width < 2 {
        return Err(ingest_err(path, 0, "need at least one feature and a label column"));
    }
    let mut values = Vec::new();
    let mut ys = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let offset = record.position().map_or(0, |p| p.byte());
        if record.len() != width {
            return Err(ingest_err(path, offset, format!("expected {width} fields")));
        }
        for field in record.iter().take(width - 1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| ingest_err(path, offset, format!("non-numeric feature {field:?}")))?;
            values.push(v);
        }
        let label = record[width - 1].trim();
        let y: usize = label
            .parse()
            .map_err(|_| ingest_err(path, offset, format!("label {label:?} is not a class index")))?;
        ys.push(y);
    }
    if ys.is_empty() {
        return Err(ingest_err(path, 0, "no data rows"));
    }
    let features = Array2::from_shape_vec((ys.len(), width - 1), values)
        .map_err(|e| FedError::Internal(e.to_string()))?;
    let num_classes = ys.iter().max().map_or(1, |m| m + 1);
    LabeledDataset::new(features, ys, num_classes)
}

fn csv_err(path: &Path, e: csv::Error) -> FedError {
    let offset = e.position().map_or(0, |p| p.byte());
    ingest_err(path, offset, e.to_string())
}

/// Where client data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// One generative model per client.
    Synthetic {
        alpha: f64,
        beta: f64,
        sizes: SizeDistribution,
    },
    /// `components` generative models pooled, then Dirichlet-partitioned.
    SyntheticPooled {
        alpha: f64,
        beta: f64,
        sizes: SizeDistribution,
        components: usize,
        concentration: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        concentration: f64,
    },
    Csv {
        path: PathBuf,
        concentration: f64,
    },
}

/// Server-side held-out set used for the reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationSpec {
    Balanced { per_class: usize },
    /// Classes 0 and 1 get `major` samples, all others `minor`.
    Unfair { major: usize, minor: usize },
    Counts { counts: Vec<usize> },
    /// Every client hands over `fraction * n_min` training samples.
    Upload { fraction: f64 },
}

impl ValidationSpec {
    pub fn counts(&self, num_classes: usize) -> Option<Vec<usize>> {
        match self {
            ValidationSpec::Balanced { per_class } => Some(vec![*per_class; num_classes]),
            ValidationSpec::Unfair { major, minor } => Some(unfair_counts(num_classes, *major, *minor)),
            ValidationSpec::Counts { counts } => Some(counts.clone()),
            ValidationSpec::Upload { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub partition: ClientPartition,
    pub validation: LabeledDataset,
}

impl PreparedData {
    pub fn input_dim(&self) -> usize {
        self.validation.dim()
    }

    pub fn num_classes(&self) -> usize {
        self.validation.num_classes
    }
}

const MIXTURE_MAX_DRAWS: usize = 2_000_000;

/// Builds client partitions and the server validation set. The validation set
/// never shares a provenance id with any client sample.
pub fn prepare<R: Rng + ?Sized>(
    dataset: &DatasetSpec,
    validation: &ValidationSpec,
    num_clients: usize,
    rng: &mut R,
) -> Result<PreparedData> {
    match dataset {
        DatasetSpec::Synthetic { alpha, beta, sizes } => {
            let spec = SyntheticSpec {
                alpha: *alpha,
                beta: *beta,
                samples_per_client: sizes.sample(num_clients, rng)?,
            };
            let SyntheticData {
                mut partition,
                models,
                next_id,
            } = generate_synthetic_full(&spec, rng)?;
            let validation = match validation.counts(SYNTHETIC_CLASSES) {
                Some(counts) => {
                    let weights: Vec<usize> =
                        partition.clients.iter().map(|c| c.train.len() + c.test.len()).collect();
                    synthetic_mixture_pool(&models, &weights, &counts, MIXTURE_MAX_DRAWS, next_id, rng)?
                }
                None => {
                    let ValidationSpec::Upload { fraction } = validation else {
                        unreachable!("only upload has no per-class counts")
                    };
                    let n_min = *spec.samples_per_client.iter().min().expect("clients");
                    let count = ((fraction * n_min as f64).round() as usize).max(1);
                    collect_uploads(&mut partition, count, rng)?
                }
            };
            Ok(PreparedData { partition, validation })
        }
        DatasetSpec::SyntheticPooled {
            alpha,
            beta,
            sizes,
            components,
            concentration,
        } => {
            let spec = SyntheticSpec {
                alpha: *alpha,
                beta: *beta,
                samples_per_client: sizes.sample(*components, rng)?,
            };
            let data = generate_synthetic_full(&spec, rng)?;
            let parts: Vec<&LabeledDataset> = data
                .partition
                .clients
                .iter()
                .flat_map(|c| [&c.train, &c.test])
                .collect();
            let pool = LabeledDataset::concat(&parts)?;
            partition_with_validation(&pool, validation, num_clients, *concentration, rng)
        }
        DatasetSpec::Idx {
            images,
            labels,
            concentration,
        } => {
            let source = load_idx_images(images, labels)?;
            partition_with_validation(&source, validation, num_clients, *concentration, rng)
        }
        DatasetSpec::Csv { path, concentration } => {
            let source = load_csv(path)?;
            partition_with_validation(&source, validation, num_clients, *concentration, rng)
        }
    }
}

fn partition_with_validation<R: Rng + ?Sized>(
    source: &LabeledDataset,
    validation: &ValidationSpec,
    num_clients: usize,
    concentration: f64,
    rng: &mut R,
) -> Result<PreparedData> {
    match validation.counts(source.num_classes) {
        Some(counts) => {
            let (val, rest) = reserve_validation(source, &counts, rng)?;
            let partition = dirichlet_partition(&rest, num_clients, concentration, rng)?;
            Ok(PreparedData {
                partition,
                validation: val,
            })
        }
        None => {
            let ValidationSpec::Upload { fraction } = validation else {
                unreachable!("only upload has no per-class counts")
            };
            let mut partition = dirichlet_partition(source, num_clients, concentration, rng)?;
            let n_min = partition
                .clients
                .iter()
                .map(|c| c.train.len() + c.test.len())
                .min()
                .expect("clients");
            let count = ((fraction * n_min as f64).round() as usize).max(1);
            let val = collect_uploads(&mut partition, count, rng)?;
            Ok(PreparedData {
                partition,
                validation: val,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use ndarray::array;

    fn balanced_source(per_class: usize, classes: usize) -> LabeledDataset {
        let n = per_class * classes;
        let features = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        let labels = (0..n).map(|i| i % classes).collect();
        LabeledDataset::new(features, labels, classes).unwrap()
    }

    #[test]
    fn zero_alpha_beta_gives_zero_means() {
        let spec = SyntheticSpec {
            alpha: 0.0,
            beta: 0.0,
            samples_per_client: vec![20; 4],
        };
        let data = generate_synthetic_full(&spec, &mut seed::rng(1)).unwrap();
        for m in &data.models {
            assert_eq!(m.u, 0.0);
            assert_eq!(m.mu, 0.0);
        }
    }

    #[test]
    fn too_few_samples_rejected() {
        let spec = SyntheticSpec {
            alpha: 0.0,
            beta: 0.0,
            samples_per_client: vec![20, 4],
        };
        assert!(matches!(
            generate_synthetic(&spec, &mut seed::rng(1)),
            Err(FedError::Config(_))
        ));
    }

    #[test]
    fn synthetic_split_is_eighty_twenty() {
        let spec = SyntheticSpec {
            alpha: 1.0,
            beta: 1.0,
            samples_per_client: vec![100, 50],
        };
        let p = generate_synthetic(&spec, &mut seed::rng(5)).unwrap();
        for (c, &n) in p.clients.iter().zip(&spec.samples_per_client) {
            assert_eq!(c.train.len() + c.test.len(), n);
            let share = c.test.len() as f64 / n as f64;
            assert!((share - 0.2).abs() < 0.06, "test share {share}");
        }
    }

    #[test]
    fn labels_agree_with_softmax_argmax() {
        let model = SyntheticModel::draw(1.0, 1.0, &mut seed::rng(2)).unwrap();
        let x = model.sample_features(200, &mut seed::rng(3));
        let mut probs = model.logits(&x);
        crate::nn::softmax_rows(&mut probs);
        let via_softmax: Vec<usize> = probs.outer_iter().map(argmax).collect();
        assert_eq!(via_softmax, model.label(&x));
    }

    #[test]
    fn validation_counts_exact() {
        let source = balanced_source(150, 10);
        let v = build_validation_set(&source, &[100; 10], &mut seed::rng(0)).unwrap();
        assert_eq!(v.len(), 1000);
        assert!(v.class_counts().iter().all(|&c| c == 100));
        let unfair = build_validation_set(&source, &unfair_counts(10, 100, 10), &mut seed::rng(0)).unwrap();
        assert_eq!(unfair.len(), 280);
    }

    #[test]
    fn validation_zero_class_is_error() {
        let source = balanced_source(20, 3);
        assert!(build_validation_set(&source, &[5, 0, 5], &mut seed::rng(0)).is_err());
    }

    #[test]
    fn validation_shortage_names_class() {
        let source = balanced_source(20, 3);
        let err = build_validation_set(&source, &[5, 50, 5], &mut seed::rng(0)).unwrap_err();
        assert!(err.to_string().contains("class 1"), "{err}");
    }

    #[test]
    fn dirichlet_assigns_every_sample_once() {
        let source = balanced_source(60, 10);
        let p = dirichlet_partition(&source, 20, 0.1, &mut seed::rng(4)).unwrap();
        let mut ids = p.all_ids();
        ids.sort_unstable();
        assert_eq!(ids, (0..600).collect::<Vec<_>>());
        assert!(p.clients.iter().all(|c| !c.train.is_empty() && !c.test.is_empty()));
    }

    #[test]
    fn dirichlet_rejects_small_source() {
        let source = balanced_source(3, 10);
        assert!(dirichlet_partition(&source, 10, 1.0, &mut seed::rng(0)).is_err());
        let source = balanced_source(30, 10);
        assert!(dirichlet_partition(&source, 10, 0.0, &mut seed::rng(0)).is_err());
    }

    #[test]
    fn repair_moves_from_largest() {
        let mut a = vec![vec![1, 2, 3, 4, 5], vec![], vec![6]];
        repair_small_clients(&mut a, 2).unwrap();
        assert!(a.iter().all(|c| c.len() >= 2));
        assert_eq!(a.iter().map(Vec::len).sum::<usize>(), 6);
        let mut b = vec![vec![1], vec![]];
        assert!(repair_small_clients(&mut b, 2).is_err());
    }

    #[test]
    fn uploads_are_removed_from_clients() {
        let spec = SyntheticSpec {
            alpha: 0.0,
            beta: 0.0,
            samples_per_client: vec![30, 40, 50],
        };
        let mut p = generate_synthetic(&spec, &mut seed::rng(8)).unwrap();
        let val = collect_uploads(&mut p, 3, &mut seed::rng(9)).unwrap();
        assert_eq!(val.len(), 9);
        let client_ids = p.all_ids();
        assert!(val.ids.iter().all(|id| !client_ids.contains(id)));
    }

    #[test]
    fn concat_keeps_ids() {
        let a = LabeledDataset::with_ids(array![[1.0]], vec![0], 2, vec![7]).unwrap();
        let b = LabeledDataset::with_ids(array![[2.0]], vec![1], 2, vec![9]).unwrap();
        let c = LabeledDataset::concat(&[&a, &b]).unwrap();
        assert_eq!(c.ids, vec![7, 9]);
        assert_eq!(c.labels, vec![0, 1]);
    }

    #[test]
    fn non_finite_features_rejected() {
        assert!(LabeledDataset::new(array![[f64::NAN]], vec![0], 1).is_err());
    }
}
