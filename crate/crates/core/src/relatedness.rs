//! Class relatedness across annotation schemes.
//!
//! Every task model labels every sentence of every dataset. For a gold class
//! `l`, its semantic vector holds the fraction of `l`'s sentences assigned to
//! each class of the union label space, summed over tasks.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{Read, Write};

use indexmap::IndexMap;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::model::{Model, PreparedDoc};
use crate::scalar::Scalar;

/// `"DATASET:Class"`.
pub fn qualify(scheme: &str, class: &str) -> String {
    format!("{scheme}:{class}")
}

/// One line of a prediction dump.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub dataset: String,
    pub doc_id: String,
    pub sent_idx: usize,
    pub gold_label: String,
    pub task_id: String,
    pub pred_label: String,
}

pub fn write_predictions<W: Write>(records: &[PredictionRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions<R: Read>(input: R) -> Result<Vec<PredictionRecord>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(|e| Error::Format(e.to_string())))
        .collect()
}

/// Runs task `task` of `model` over a dataset and emits one record per sentence.
pub fn predict_records<T: Scalar>(model: &Model<T>, task: usize, ds: &Dataset, docs: &[PreparedDoc<T>]) -> Result<Vec<PredictionRecord>> {
    let spec = &model.tasks()[task].spec;
    let mut out = Vec::new();
    for (doc, prepared) in ds.documents.iter().zip(docs) {
        let pred = model.predict(task, prepared)?;
        for (i, (s, p)) in doc.sentences.iter().zip(pred).enumerate() {
            out.push(PredictionRecord {
                dataset: ds.name.clone(),
                doc_id: doc.id.clone(),
                sent_idx: i,
                gold_label: ds.scheme.class(s.label).to_string(),
                task_id: spec.task_id.clone(),
                pred_label: spec.scheme.class(p).to_string(),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticVector {
    pub label: String,
    /// Prediction counts per column, summed over tasks.
    pub counts: Vec<u64>,
    /// Number of sentences gold-labeled with `label`.
    pub sentences: u64,
    pub v: Vec<f64>,
}

/// Semantic vectors over a dump.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticSpace {
    /// Union label space (`task:class`), one column per entry.
    pub columns: Vec<String>,
    pub tasks: Vec<String>,
    pub vectors: Vec<SemanticVector>,
}

/// Gold sentence count per qualified label, in first-seen order.
pub fn gold_label_counts(records: &[PredictionRecord]) -> IndexMap<String, u64> {
    let mut seen: HashMap<(&str, &str, usize), ()> = HashMap::new();
    let mut counts = IndexMap::new();
    for r in records {
        if seen.insert((&r.dataset, &r.doc_id, r.sent_idx), ()).is_none() {
            *counts.entry(qualify(&r.dataset, &r.gold_label)).or_insert(0) += 1;
        }
    }
    counts
}

/// Builds vectors for `rows` (qualified gold labels) over `columns`
/// (qualified `task:class` labels). Every sentence must carry exactly one
/// prediction from every task in the dump.
pub fn semantic_vectors(records: &[PredictionRecord], rows: &[String], columns: &[String]) -> Result<SemanticSpace> {
    let col_index: HashMap<&str, usize> = columns.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut tasks: Vec<String> = Vec::new();
    for r in records {
        if !tasks.contains(&r.task_id) {
            tasks.push(r.task_id.clone());
        }
    }
    // sentence -> (gold, per-task predicted column)
    let mut sentences: BTreeMap<(&str, &str, usize), (&str, Vec<Option<usize>>)> = BTreeMap::new();
    for r in records {
        let t = tasks.iter().position(|x| *x == r.task_id).unwrap_or(0);
        let entry = sentences
            .entry((&r.dataset, &r.doc_id, r.sent_idx))
            .or_insert_with(|| (r.gold_label.as_str(), vec![None; tasks.len()]));
        if entry.0 != r.gold_label {
            return Err(Error::InvalidArgument(format!(
                "conflicting gold labels for {}/{}#{}",
                r.dataset, r.doc_id, r.sent_idx
            )));
        }
        entry.1.resize(tasks.len(), None);
        let col = *col_index
            .get(qualify(&r.task_id, &r.pred_label).as_str())
            .ok_or_else(|| Error::InvalidArgument(format!("prediction {}:{} outside the label space", r.task_id, r.pred_label)))?;
        if entry.1[t].replace(col).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate prediction by {} for {}/{}#{}",
                r.task_id, r.dataset, r.doc_id, r.sent_idx
            )));
        }
    }
    let mut gaps = Vec::new();
    for ((ds, doc, i), (_, preds)) in &sentences {
        for (t, p) in tasks.iter().zip(preds.iter().chain(std::iter::repeat(&None))) {
            if p.is_none() {
                gaps.push(format!("{t} on {ds}/{doc}#{i}"));
            }
        }
    }
    if !gaps.is_empty() {
        let shown: Vec<&str> = gaps.iter().take(10).map(String::as_str).collect();
        return Err(Error::IncompletePredictions(format!("{} missing: {}", gaps.len(), shown.join(", "))));
    }

    let row_index: HashMap<&str, usize> = rows.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect();
    let mut counts = vec![vec![0u64; columns.len()]; rows.len()];
    let mut n = vec![0u64; rows.len()];
    for ((ds, _, _), (gold, preds)) in &sentences {
        let Some(&row) = row_index.get(qualify(ds, gold).as_str()) else { continue };
        n[row] += 1;
        for p in preds.iter().flatten() {
            counts[row][*p] += 1;
        }
    }
    let vectors = rows
        .iter()
        .zip(counts)
        .zip(n)
        .map(|((label, counts), sentences)| {
            if sentences == 0 {
                return Err(Error::EmptyClass(label.clone()));
            }
            let v = counts.iter().map(|&c| c as f64 / sentences as f64).collect();
            Ok(SemanticVector { label: label.clone(), counts, sentences, v })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SemanticSpace { columns: columns.to_vec(), tasks, vectors })
}

/// Cosine similarity.
pub fn relatedness(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

pub fn relatedness_matrix(vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    vectors.iter().map(|a| vectors.iter().map(|b| relatedness(a, b)).collect()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SilhouetteReport {
    pub per_point: Vec<f64>,
    /// Cluster means, in first-seen cluster order.
    pub per_cluster: IndexMap<String, f64>,
    pub overall: f64,
}

/// Silhouette with distance `1 - cos`; members of singleton clusters score 0.
pub fn silhouette(vectors: &[Vec<f64>], clusters: &[String]) -> Result<SilhouetteReport> {
    if vectors.len() != clusters.len() {
        return Err(Error::LengthMismatch { left: vectors.len(), right: clusters.len() });
    }
    let mut names: IndexMap<String, Vec<usize>> = IndexMap::new();
    for (i, c) in clusters.iter().enumerate() {
        names.entry(c.clone()).or_default().push(i);
    }
    if names.len() < 2 {
        return Err(Error::SingleCluster);
    }
    let sim = relatedness_matrix(vectors)?;
    let d = |i: usize, j: usize| 1.0 - sim[i][j];
    let mean_to = |i: usize, members: &[usize]| {
        let others: Vec<usize> = members.iter().copied().filter(|&j| j != i).collect();
        others.iter().map(|&j| d(i, j)).sum::<f64>() / others.len() as f64
    };
    let per_point: Vec<f64> = (0..vectors.len())
        .map(|i| {
            let own = &names[&clusters[i]];
            if own.len() == 1 {
                return 0.0;
            }
            let a = mean_to(i, own);
            let b = names
                .iter()
                .filter(|(c, _)| **c != clusters[i])
                .map(|(_, m)| mean_to(i, m))
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect();
    let per_cluster =
        names.iter().map(|(c, m)| (c.clone(), m.iter().map(|&i| per_point[i]).sum::<f64>() / m.len() as f64)).collect();
    let overall = per_point.iter().sum::<f64>() / per_point.len() as f64;
    Ok(SilhouetteReport { per_point, per_cluster, overall })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Covariance eigenvalues in descending order (divided by `n - 1`).
    pub eigenvalues: Vec<f64>,
    /// The two leading unit directions.
    pub components: [Vec<f64>; 2],
    pub points: Vec<[f64; 2]>,
}

/// Projects mean-centered vectors onto the two leading principal directions.
/// Each direction's largest-magnitude loading is made positive.
pub fn pca(vectors: &[Vec<f64>]) -> Result<Pca> {
    let n = vectors.len();
    if n < 3 {
        return Err(Error::DegenerateRank(n.saturating_sub(1)));
    }
    let p = vectors[0].len();
    if vectors.iter().any(|v| v.len() != p) {
        return Err(Error::ShapeMismatch("vectors differ in length".into()));
    }
    let mean: Vec<f64> = (0..p).map(|j| vectors.iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, p, |i, j| vectors[i][j] - mean[j]);
    let cov = x.transpose() * &x / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let top = eigenvalues.first().copied().unwrap_or(0.0);
    let rank = eigenvalues.iter().filter(|&&l| l > 1e-12 * top.max(1e-300)).count();
    if rank < 2 || top <= 0.0 {
        return Err(Error::DegenerateRank(rank));
    }
    let direction = |k: usize| {
        let mut c: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
        let pivot = c.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            c.iter_mut().for_each(|x| *x = -*x);
        }
        c
    };
    let components = [direction(0), direction(1)];
    let points = (0..n)
        .map(|i| {
            let row = x.row(i);
            let proj = |c: &[f64]| row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [proj(&components[0]), proj(&components[1])]
        })
        .collect();
    Ok(Pca { mean, eigenvalues, components, points })
}

pub fn pca_2d(vectors: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    Ok(pca(vectors)?.points)
}

/// Cluster file: cluster name to its qualified labels, in file order.
pub fn parse_clusters(text: &str) -> Result<IndexMap<String, Vec<String>>> {
    let clusters: IndexMap<String, Vec<String>> = serde_json::from_str(text)?;
    let mut seen = HashMap::new();
    for (c, labels) in &clusters {
        for l in labels {
            if let Some(prev) = seen.insert(l.clone(), c.clone()) {
                return Err(Error::InvalidArgument(format!("{l} is in both {prev} and {c}")));
            }
        }
    }
    Ok(clusters)
}

pub fn relatedness_csv(labels: &[String], matrix: &[Vec<f64>]) -> String {
    let mut s = String::from("label");
    for l in labels {
        let _ = write!(s, ",{l}");
    }
    s.push('\n');
    for (l, row) in labels.iter().zip(matrix) {
        s.push_str(l);
        for x in row {
            let _ = write!(s, ",{x:.6}");
        }
        s.push('\n');
    }
    s
}

pub fn silhouette_table(report: &SilhouetteReport) -> String {
    let mut s = String::from("cluster,silhouette\n");
    for (c, v) in &report.per_cluster {
        let _ = writeln!(s, "{c},{v:.2}");
    }
    let _ = writeln!(s, "Overall,{:.2}", report.overall);
    s
}

pub fn pca_csv(labels: &[String], clusters: &[String], points: &[[f64; 2]]) -> String {
    let mut s = String::from("label,cluster,x,y\n");
    for ((l, c), p) in labels.iter().zip(clusters).zip(points) {
        let _ = writeln!(s, "{l},{c},{:.6},{:.6}", p[0], p[1]);
    }
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Grayscale heatmap; darker cells are more related.
pub fn heatmap_svg(labels: &[String], matrix: &[Vec<f64>]) -> String {
    let (cell, margin) = (18.0, 160.0);
    let size = margin + cell * labels.len() as f64;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" font-family=\"sans-serif\" font-size=\"10\">\n"
    );
    for (i, l) in labels.iter().enumerate() {
        let y = margin + cell * i as f64;
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>", margin - 4.0, y + 13.0, escape(l));
        let _ = writeln!(
            s,
            "<text transform=\"translate({},{}) rotate(-90)\">{}</text>",
            y + 13.0,
            margin - 4.0,
            escape(l)
        );
        for (j, v) in matrix[i].iter().enumerate() {
            let g = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
            let _ = writeln!(
                s,
                "<rect x=\"{}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({g},{g},{g})\"><title>{} / {}: {v:.3}</title></rect>",
                margin + cell * j as f64,
                escape(l),
                escape(&labels[j])
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

pub fn scatter_svg(labels: &[String], clusters: &[String], points: &[[f64; 2]]) -> String {
    let (w, h, pad) = (640.0, 480.0, 40.0);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let sx = |x: f64| pad + (x - x0) / (x1 - x0).max(1e-12) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0).max(1e-12) * (h - 2.0 * pad);
    let mut names: Vec<&String> = Vec::new();
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"10\">\n"
    );
    for ((l, c), p) in labels.iter().zip(clusters).zip(points) {
        let k = names.iter().position(|n| *n == c).unwrap_or_else(|| {
            names.push(c);
            names.len() - 1
        });
        let (x, y) = (sx(p[0]), sy(p[1]));
        let _ = writeln!(s, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"4\" fill=\"{}\"/>", PALETTE[k % PALETTE.len()]);
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>", x + 6.0, y + 3.0, escape(l));
    }
    for (k, c) in names.iter().enumerate() {
        let y = 14.0 + 14.0 * k as f64;
        let _ = writeln!(s, "<rect x=\"{}\" y=\"{}\" width=\"8\" height=\"8\" fill=\"{}\"/>", w - 120.0, y - 8.0, PALETTE[k % PALETTE.len()]);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{y}\">{}</text>", w - 108.0, escape(c));
    }
    s.push_str("</svg>\n");
    s
}
