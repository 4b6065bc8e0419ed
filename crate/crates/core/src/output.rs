//! Result emission: per-round CSV/JSON, run manifests, summary tables and SVG curves.
//!
//! All floats are rounded to 6 significant digits before writing, so a fixed
//! seed always produces the same bytes. A non-finite value anywhere aborts the
//! write.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{FedError, Result};
use crate::orchestrator::{mean_var, RoundRecord};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Stable CSV column order for round records.
pub const ROUND_COLUMNS: [&str; 12] = [
    "round",
    "reward",
    "mean_benign_acc",
    "acc_std",
    "acc_var",
    "loss_std",
    "global_acc_mean",
    "malicious_selected",
    "num_selected",
    "selected_ids",
    "action",
    "per_class_val_acc",
];

/// Rounds to 6 significant digits.
pub fn round_sig(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.5e}").parse().expect("formatted float parses")
}

/// Shortest text of a 6-significant-digit value.
pub fn fmt_sig(v: f64) -> String {
    format!("{}", round_sig(v))
}

fn check_finite(round: usize, field: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(FedError::Simulation(format!(
            "round {round}: field {field} is {v}, refusing to emit"
        )))
    }
}

fn checked(r: &RoundRecord) -> Result<RoundRecord> {
    let scalars = [
        ("reward", r.reward),
        ("mean_benign_acc", r.mean_benign_acc),
        ("acc_std", r.acc_std),
        ("acc_var", r.acc_var),
        ("loss_std", r.loss_std),
        ("global_acc_mean", r.global_acc_mean),
    ];
    for (name, v) in scalars {
        check_finite(r.round, name, v)?;
    }
    for &a in &r.action {
        check_finite(r.round, "action", a)?;
    }
    for a in r.per_class_val_acc.iter().flatten() {
        check_finite(r.round, "per_class_val_acc", *a)?;
    }
    Ok(RoundRecord {
        round: r.round,
        reward: round_sig(r.reward),
        mean_benign_acc: round_sig(r.mean_benign_acc),
        acc_std: round_sig(r.acc_std),
        acc_var: round_sig(r.acc_var),
        loss_std: round_sig(r.loss_std),
        global_acc_mean: round_sig(r.global_acc_mean),
        selected_ids: r.selected_ids.clone(),
        action: r.action.iter().map(|&a| round_sig(a)).collect(),
        malicious_selected: r.malicious_selected,
        per_class_val_acc: r.per_class_val_acc.iter().map(|a| a.map(round_sig)).collect(),
    })
}

fn join<T>(xs: &[T], f: impl Fn(&T) -> String) -> String {
    xs.iter().map(f).collect::<Vec<_>>().join(";")
}

/// Writes round records as CSV or a JSON array.
pub fn write_records<W: Write>(records: &[RoundRecord], w: W, format: Format) -> Result<()> {
    let rows: Vec<RoundRecord> = records.iter().map(checked).collect::<Result<_>>()?;
    match format {
        Format::Csv => {
            let mut out = csv::Writer::from_writer(w);
            let err = |e: csv::Error| FedError::Simulation(format!("csv write failed: {e}"));
            out.write_record(ROUND_COLUMNS).map_err(err)?;
            for r in &rows {
                out.write_record([
                    r.round.to_string(),
                    fmt_sig(r.reward),
                    fmt_sig(r.mean_benign_acc),
                    fmt_sig(r.acc_std),
                    fmt_sig(r.acc_var),
                    fmt_sig(r.loss_std),
                    fmt_sig(r.global_acc_mean),
                    r.malicious_selected.to_string(),
                    r.selected_ids.len().to_string(),
                    join(&r.selected_ids, usize::to_string),
                    join(&r.action, |a| fmt_sig(*a)),
                    join(&r.per_class_val_acc, |a| a.map_or_else(String::new, fmt_sig)),
                ])
                .map_err(err)?;
            }
            out.flush().map_err(|e| FedError::Simulation(format!("csv flush failed: {e}")))?;
        }
        Format::Json => {
            let mut w = w;
            serde_json::to_writer_pretty(&mut w, &rows)
                .map_err(|e| FedError::Simulation(format!("json write failed: {e}")))?;
            writeln!(w).map_err(|e| FedError::Simulation(format!("json write failed: {e}")))?;
        }
    }
    Ok(())
}

/// Writes round records to `path`.
pub fn emit_results(records: &[RoundRecord], path: &Path, format: Format) -> Result<()> {
    let file = File::create(path).map_err(|e| FedError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_records(records, &mut w, format)?;
    w.flush().map_err(|e| FedError::io(path, e))
}

pub fn read_json_records(path: &Path) -> Result<Vec<RoundRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| FedError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| FedError::Ingest {
        path: path.to_path_buf(),
        offset: 0,
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub stream: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub master_seed: u64,
    pub seeds: Vec<SeedEntry>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub artifacts: Vec<PathBuf>,
    pub version: String,
}

impl RunManifest {
    pub fn new(cfg: &ExperimentConfig, started_unix: f64, finished_unix: f64, artifacts: Vec<PathBuf>) -> Self {
        let streams = [
            ("data", Stream::Data),
            ("roles", Stream::Roles),
            ("init", Stream::Init),
            ("participation", Stream::Participation),
            ("local_training", Stream::LocalTraining),
            ("attack", Stream::Attack),
            ("agent", Stream::Agent),
            ("exploration", Stream::Exploration),
            ("replay", Stream::Replay),
        ];
        RunManifest {
            config_hash: cfg.hash(),
            master_seed: cfg.seed,
            seeds: streams
                .iter()
                .map(|(name, s)| SeedEntry {
                    stream: (*name).into(),
                    seed: seed::derive(cfg.seed, *s),
                })
                .collect(),
            started_unix,
            finished_unix,
            artifacts,
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| FedError::Internal(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| FedError::io(path, e))
    }
}

pub fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// One summary line per (config, seed) run, or an aggregate over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub dataset: String,
    pub attack: String,
    pub malicious_percent: f64,
    pub m_percent: f64,
    pub participation_percent: f64,
    /// Grid point label in a sweep (its overrides, seed excluded); empty otherwise.
    pub variant: String,
    /// `None` on aggregate rows.
    pub seed: Option<u64>,
    pub mean_acc: f64,
    pub acc_std: f64,
    pub acc_var: f64,
    pub runtime_seconds: f64,
    pub aggregate: bool,
}

pub const TABLE_COLUMNS: [&str; 13] = [
    "row_kind",
    "variant",
    "method",
    "dataset",
    "attack",
    "malicious_percent",
    "m_percent",
    "participation_percent",
    "seed",
    "mean_acc",
    "acc_std",
    "acc_var",
    "runtime_seconds",
];

impl ResultRow {
    /// Summary of the final round of a run.
    pub fn from_run(cfg: &ExperimentConfig, records: &[RoundRecord], runtime_seconds: f64) -> Result<Self> {
        let last = records
            .last()
            .ok_or_else(|| FedError::Simulation("run produced no rounds".into()))?;
        Ok(ResultRow {
            method: cfg.aggregator.name().into(),
            dataset: cfg.dataset_name(),
            attack: cfg.attack_name().into(),
            malicious_percent: cfg.malicious_fraction * 100.0,
            m_percent: cfg.m_percent,
            participation_percent: cfg.participation * 100.0,
            seed: Some(cfg.seed),
            mean_acc: last.mean_benign_acc,
            acc_std: last.acc_std,
            acc_var: last.acc_var,
            runtime_seconds,
            aggregate: false,
            variant: String::new(),
        })
    }

    fn key(&self) -> (&str, &str, &str, &str, u64, u64, u64) {
        (
            &self.variant,
            &self.method,
            &self.dataset,
            &self.attack,
            self.malicious_percent.to_bits(),
            self.m_percent.to_bits(),
            self.participation_percent.to_bits(),
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    /// Appends one aggregate row (seed-mean of every metric) per distinct
    /// configuration, in order of first appearance.
    pub fn with_aggregates(mut self) -> Self {
        let runs: Vec<ResultRow> = self.rows.iter().filter(|r| !r.aggregate).cloned().collect();
        let mut seen: Vec<(&str, &str, &str, &str, u64, u64, u64)> = Vec::new();
        let mut extra = Vec::new();
        for r in &runs {
            if seen.contains(&r.key()) {
                continue;
            }
            seen.push(r.key());
            let group: Vec<&ResultRow> = runs.iter().filter(|o| o.key() == r.key()).collect();
            let mean = |f: fn(&ResultRow) -> f64| mean_var(&group.iter().map(|g| f(g)).collect::<Vec<_>>()).0;
            extra.push(ResultRow {
                seed: None,
                mean_acc: mean(|g| g.mean_acc),
                acc_std: mean(|g| g.acc_std),
                acc_var: mean(|g| g.acc_var),
                runtime_seconds: mean(|g| g.runtime_seconds),
                aggregate: true,
                ..r.clone()
            });
        }
        self.rows.extend(extra);
        self
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| FedError::Simulation(format!("csv write failed: {e}"));
        out.write_record(TABLE_COLUMNS).map_err(err)?;
        for r in &self.rows {
            for (name, v) in [("mean_acc", r.mean_acc), ("acc_std", r.acc_std), ("acc_var", r.acc_var)] {
                if !v.is_finite() {
                    return Err(FedError::Simulation(format!("table field {name} is {v}")));
                }
            }
            out.write_record([
                if r.aggregate { "aggregate" } else { "run" }.to_string(),
                r.variant.clone(),
                r.method.clone(),
                r.dataset.clone(),
                r.attack.clone(),
                fmt_sig(r.malicious_percent),
                fmt_sig(r.m_percent),
                fmt_sig(r.participation_percent),
                r.seed.map_or_else(String::new, |s| s.to_string()),
                fmt_sig(r.mean_acc),
                fmt_sig(r.acc_std),
                fmt_sig(r.acc_var),
                fmt_sig(r.runtime_seconds),
            ])
            .map_err(err)?;
        }
        out.flush().map_err(|e| FedError::Simulation(format!("csv flush failed: {e}")))
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, &self.rows).map_err(|e| FedError::Internal(e.to_string()))?;
        writeln!(w).map_err(|e| FedError::Internal(e.to_string()))
    }
}

/// A named curve for [`render_svg`].
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Static line plot: axes with min/max ticks, one polyline per series, legend.
pub fn render_svg(title: &str, series: &[Series]) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n\
         <line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>\n",
        w / 2.0,
        escape(title),
        h - pad,
        w - pad,
        h - pad,
        h - pad,
    );
    for (v, x, y, anchor) in [
        (x0, sx(x0), h - pad + 16.0, "middle"),
        (x1, sx(x1), h - pad + 16.0, "middle"),
    ] {
        out += &format!(
            "<text x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"{anchor}\" font-family=\"sans-serif\" font-size=\"10\">{}</text>\n",
            fmt_sig(v)
        );
    }
    for v in [y0, y1] {
        out += &format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{}</text>\n",
            pad - 4.0,
            sy(v) + 3.0,
            fmt_sig(v)
        );
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        out += &format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            coords.join(" ")
        );
        let ly = pad + 14.0 * i as f64;
        out += &format!(
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\">{}</text>\n",
            w - pad - 110.0,
            w - pad - 90.0,
            w - pad - 85.0,
            ly + 3.0,
            escape(&s.name)
        );
    }
    out += "</svg>\n";
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Series for `columns` of a round CSV, plotted against its first column.
pub fn series_from_csv(path: &Path, columns: &[&str]) -> Result<Vec<Series>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| FedError::Ingest {
        path: path.to_path_buf(),
        offset: 0,
        message: e.to_string(),
    })?;
    let header = reader
        .headers()
        .map_err(|e| FedError::Ingest {
            path: path.to_path_buf(),
            offset: 0,
            message: e.to_string(),
        })?
        .clone();
    let wanted: Vec<&str> = if columns.is_empty() {
        header.iter().skip(1).collect()
    } else {
        columns.to_vec()
    };
    let mut idx = Vec::new();
    for c in &wanted {
        let i = header.iter().position(|h| h == *c).ok_or_else(|| FedError::Ingest {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("no column {c:?}"),
        })?;
        idx.push(i);
    }
    let mut series: Vec<Series> = wanted
        .iter()
        .map(|c| Series {
            name: (*c).to_string(),
            points: Vec::new(),
        })
        .collect();
    for rec in reader.records() {
        let rec = rec.map_err(|e| FedError::Ingest {
            path: path.to_path_buf(),
            offset: e.position().map_or(0, |p| p.byte()),
            message: e.to_string(),
        })?;
        let offset = rec.position().map_or(0, |p| p.byte());
        let parse = |i: usize| -> Result<f64> {
            rec.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| FedError::Ingest {
                path: path.to_path_buf(),
                offset,
                message: format!("column {i} is not numeric"),
            })
        };
        let x = parse(0)?;
        for (s, &i) in series.iter_mut().zip(&idx) {
            s.points.push((x, parse(i)?));
        }
    }
    Ok(series)
}

/// Reward and mean benign accuracy against round index.
pub fn series_from_records(records: &[RoundRecord]) -> Vec<Series> {
    let curve = |name: &str, f: fn(&RoundRecord) -> f64| Series {
        name: name.into(),
        points: records.iter().map(|r| (r.round as f64, f(r))).collect(),
    };
    vec![
        curve("reward", |r| r.reward),
        curve("mean_benign_acc", |r| r.mean_benign_acc),
    ]
}

/// Default curves of a round CSV: reward and mean benign accuracy.
pub const DEFAULT_PLOT_COLUMNS: [&str; 2] = ["reward", "mean_benign_acc"];

pub fn plot_csv(csv_path: &Path, svg_path: &Path, columns: &[&str]) -> Result<()> {
    let series = series_from_csv(csv_path, columns)?;
    let title = csv_path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    std::fs::write(svg_path, render_svg(&title, &series)).map_err(|e| FedError::io(svg_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_sig(0.123456789), "0.123457");
        assert_eq!(fmt_sig(123456789.0), "123457000");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(0.0), "0");
    }

    #[test]
    fn empty_records_header_only() {
        let mut buf = Vec::new();
        write_records(&[], &mut buf, Format::Csv).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), ROUND_COLUMNS.join(",") + "\n");
    }

    #[test]
    fn svg_has_points() {
        let svg = render_svg(
            "t",
            &[Series {
                name: "a".into(),
                points: vec![(0.0, 0.0), (1.0, 1.0)],
            }],
        );
        assert!(svg.contains("<polyline"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
