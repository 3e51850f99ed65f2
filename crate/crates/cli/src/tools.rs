//! Data preparation and analysis subcommands.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hsln::corpus::{collapse_labels, parse_canonical_jsonl, parse_fraction, parse_pubmed_rct, truncate_fraction, LabelMapping, LabelScheme, TextType};
use hsln::embeddings::{EmbeddingProvider, PrecomputedStore};
use hsln::metrics::{report, MetricsRecord};
use hsln::relatedness::{
    gold_label_counts, heatmap_svg, parse_clusters, pca_2d, pca_csv, predict_records, qualify, read_predictions,
    relatedness_csv, relatedness_matrix, scatter_svg, semantic_vectors, silhouette, silhouette_table,
    write_predictions, PredictionRecord,
};
use hsln::trainer::evaluate as eval_task;
use hsln::{checkpoint, Model32};

use crate::error::CliError;
use crate::io::{load_dataset, save_dataset};

pub enum InputFormat {
    PubmedRct,
    Canonical,
}

impl std::str::FromStr for InputFormat {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "pubmed-rct" => Ok(Self::PubmedRct),
            "canonical" => Ok(Self::Canonical),
            _ => Err(CliError::input(format!("unknown input format {s:?}; expected pubmed-rct or canonical"))),
        }
    }
}

pub struct IngestArgs {
    pub input: PathBuf,
    pub format: String,
    pub name: Option<String>,
    pub classes: Option<String>,
    pub text_type: TextType,
    pub output: PathBuf,
}

pub fn ingest(a: &IngestArgs) -> Result<usize, CliError> {
    let text = fs::read_to_string(&a.input).map_err(|e| CliError::input(format!("{}: {e}", a.input.display())))?;
    let ds = match a.format.parse::<InputFormat>()? {
        InputFormat::Canonical => parse_canonical_jsonl(text.as_bytes())?,
        InputFormat::PubmedRct => {
            let name = a.name.clone().ok_or_else(|| CliError::input("pubmed-rct input needs --name"))?;
            let classes = a.classes.as_deref().ok_or_else(|| CliError::input("pubmed-rct input needs --classes"))?;
            let classes = classes.split(',').map(|c| c.trim().to_string()).collect();
            let mut ds = parse_pubmed_rct(&text, &LabelScheme::new(name.clone(), classes)?)?;
            ds.name = name;
            ds.text_type = a.text_type;
            ds
        }
    };
    ds.validate()?;
    save_dataset(&ds, &a.output)?;
    Ok(ds.num_sentences())
}

pub struct EvaluateArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub task: Option<String>,
    pub embeddings: Option<PathBuf>,
    pub max_tokens: usize,
    pub predictions: Option<PathBuf>,
}

pub fn evaluate(a: &EvaluateArgs) -> Result<MetricsRecord, CliError> {
    let mut model: Model32 =
        checkpoint::load_file(&a.checkpoint).map_err(|e| CliError::input(format!("{}: {e}", a.checkpoint.display())))?;
    let ds = load_dataset(&a.data)?;
    if let Some(p) = &a.embeddings {
        let store = PrecomputedStore::open(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
        let d_w = model.dims().d_w;
        *model.embeddings_mut() = EmbeddingProvider::PrecomputedFile { d_w, stores: Arc::new(HashMap::from([(ds.name.clone(), store)])) };
    }
    let task = match &a.task {
        Some(t) => model.task_index(t)?,
        None => 0,
    };
    let spec = model.tasks()[task].spec.clone();
    if spec.scheme.classes() != ds.scheme.classes() {
        return Err(CliError::input(format!("{} does not use the label scheme of task {}", a.data.display(), spec.task_id)));
    }
    let docs = model.prepare(&ds, a.max_tokens)?;
    let (cm, _) = eval_task(&model, task, &docs)?;
    if let Some(p) = &a.predictions {
        let records = predict_records(&model, task, &ds, &docs)?;
        write_predictions(&records, fs::File::create(p)?)?;
    }
    Ok(MetricsRecord::new(&spec.task_id, None, None, spec.scheme.classes(), &report(&cm)?))
}

pub struct CompileArgs {
    pub mapping: PathBuf,
    pub datasets: Vec<PathBuf>,
    pub fraction: Option<String>,
    pub seed: u64,
    pub out_dir: PathBuf,
}

/// Collapses each dataset onto the generic scheme. Returns per-dataset class counts.
pub fn compile_generic(a: &CompileArgs) -> Result<Vec<(String, Vec<(String, usize)>)>, CliError> {
    let text = fs::read_to_string(&a.mapping).map_err(|e| CliError::input(format!("{}: {e}", a.mapping.display())))?;
    let mapping = LabelMapping::from_json(&text).map_err(|e| CliError::config(format!("{}: {e}", a.mapping.display())))?;
    let fraction = a.fraction.as_deref().map(parse_fraction).transpose()?;
    let mut out = Vec::new();
    for p in &a.datasets {
        let ds = load_dataset(p)?;
        let mut g = collapse_labels(&ds, &mapping)?;
        if let Some(f) = fraction {
            g = truncate_fraction(&g, f, a.seed)?;
        }
        save_dataset(&g, &a.out_dir.join(format!("{}.jsonl", g.name)))?;
        let counts = g.scheme.classes().iter().cloned().zip(g.class_counts()).collect();
        out.push((g.name.clone(), counts));
    }
    Ok(out)
}

pub struct AnalyzeArgs {
    pub dumps: Vec<PathBuf>,
    pub clusters: PathBuf,
    pub out_dir: PathBuf,
}

/// Writes relatedness, silhouette and PCA outputs. Returns warnings.
pub fn analyze(a: &AnalyzeArgs) -> Result<Vec<String>, CliError> {
    let mut records: Vec<PredictionRecord> = Vec::new();
    for p in &a.dumps {
        let f = fs::File::open(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
        records.extend(read_predictions(f).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?);
    }
    let text = fs::read_to_string(&a.clusters).map_err(|e| CliError::input(format!("{}: {e}", a.clusters.display())))?;
    let clusters = parse_clusters(&text).map_err(|e| CliError::config(format!("{}: {e}", a.clusters.display())))?;

    let gold = gold_label_counts(&records);
    let mut warnings = Vec::new();
    let (mut rows, mut row_clusters) = (Vec::new(), Vec::new());
    for (c, labels) in &clusters {
        for l in labels {
            if gold.get(l).copied().unwrap_or(0) == 0 {
                warnings.push(format!("{l} has no sentences in the dump; skipped"));
                continue;
            }
            rows.push(l.clone());
            row_clusters.push(c.clone());
        }
    }
    if rows.len() < 2 {
        return Err(CliError::input("fewer than two clustered labels occur in the dump"));
    }
    // Union label space: clustered labels, then any other predicted label.
    let mut columns: Vec<String> = clusters.values().flatten().cloned().collect();
    for r in &records {
        let q = qualify(&r.task_id, &r.pred_label);
        if !columns.contains(&q) {
            columns.push(q);
        }
    }
    let space = semantic_vectors(&records, &rows, &columns)?;
    let vectors: Vec<Vec<f64>> = space.vectors.iter().map(|v| v.v.clone()).collect();
    let matrix = relatedness_matrix(&vectors)?;
    let sil = silhouette(&vectors, &row_clusters)?;
    let points = pca_2d(&vectors)?;

    fs::create_dir_all(&a.out_dir)?;
    fs::write(a.out_dir.join("relatedness.csv"), relatedness_csv(&rows, &matrix))?;
    fs::write(a.out_dir.join("relatedness.svg"), heatmap_svg(&rows, &matrix))?;
    fs::write(a.out_dir.join("silhouette.csv"), silhouette_table(&sil))?;
    fs::write(a.out_dir.join("pca.csv"), pca_csv(&rows, &row_clusters, &points))?;
    fs::write(a.out_dir.join("pca.svg"), scatter_svg(&rows, &row_clusters, &points))?;
    Ok(warnings)
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let header = r.headers().map_err(|e| CliError::input(e.to_string()))?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|x| x.iter().map(str::to_string).collect()).map_err(|e| CliError::input(format!("{}: {e}", path.display()))))
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

fn number(s: &str, path: &Path) -> Result<f64, CliError> {
    s.trim().parse().map_err(|_| CliError::input(format!("{}: not a number: {s:?}", path.display())))
}

/// Heatmap from a relatedness CSV.
pub fn plot_heatmap(csv_path: &Path, out: &Path) -> Result<(), CliError> {
    let (header, rows) = read_csv(csv_path)?;
    let labels: Vec<String> = header.into_iter().skip(1).collect();
    let mut matrix = Vec::with_capacity(rows.len());
    for r in &rows {
        if r.len() != labels.len() + 1 {
            return Err(CliError::input(format!("{}: ragged row", csv_path.display())));
        }
        matrix.push(r[1..].iter().map(|x| number(x, csv_path)).collect::<Result<Vec<_>, _>>()?);
    }
    if matrix.len() != labels.len() {
        return Err(CliError::input(format!("{}: matrix is not square", csv_path.display())));
    }
    fs::write(out, heatmap_svg(&labels, &matrix))?;
    Ok(())
}

/// Scatter plot from a PCA CSV.
pub fn plot_scatter(csv_path: &Path, out: &Path) -> Result<(), CliError> {
    let (_, rows) = read_csv(csv_path)?;
    let (mut labels, mut clusters, mut points) = (Vec::new(), Vec::new(), Vec::new());
    for r in &rows {
        let [l, c, x, y] = r.as_slice() else {
            return Err(CliError::input(format!("{}: expected label,cluster,x,y", csv_path.display())));
        };
        labels.push(l.clone());
        clusters.push(c.clone());
        points.push([number(x, csv_path)?, number(y, csv_path)?]);
    }
    fs::write(out, scatter_svg(&labels, &clusters, &points))?;
    Ok(())
}
