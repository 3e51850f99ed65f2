//! Acceptance criteria 1-14, one pass/fail line each.
//!
//! Criterion 13 runs only when `HSLN_CORPORA_DIR` holds `PMD.jsonl`,
//! `NIC.jsonl`, `DRI.jsonl` and `ART.jsonl` (canonical JSONL of the
//! compiled subsets). Criterion 14 runs only when `HSLN_MUPMD_DIR` holds
//! `train.jsonl`, `dev.jsonl`, `test.jsonl` and `embeddings.bin`; it never
//! fails the suite.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use hsln::corpus::{collapse_labels, parse_canonical_jsonl, split_folds, LabelMapping, TextType};
use hsln::crf::{log_partition, score_sequence, viterbi_decode, CrfParams};
use hsln::embeddings::{EmbeddingProvider, PrecomputedStore};
use hsln::encoder::{Dropout, ModelDims};
use hsln::metrics::{report, ConfusionMatrix};
use hsln::model::{Model, SharingMode, TaskSpec};
use hsln::optim::AdamW;
use hsln::relatedness::{qualify, relatedness, relatedness_matrix, semantic_vectors, silhouette, PredictionRecord};
use hsln::trainer::{evaluate, train_single_task, train_step, TrainConfig};
use hsln::transfer::{build_multitask, init_transfer, proportional_schedule, InitMode};
use hsln::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{all_sequences, spec, synthetic, tiny_dims, trainable_model};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_instance(rng: &mut ChaCha8Rng) -> (CrfParams<f64>, Vec<Vec<f64>>) {
    let l = rng.gen_range(2..=4);
    let n = rng.gen_range(1..=6);
    let mut p = CrfParams::<f64>::zeros(l);
    for t in [&mut p.transitions, &mut p.begin, &mut p.end] {
        t.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-2.0..=2.0));
    }
    let logits = (0..n).map(|_| (0..l).map(|_| rng.gen_range(-2.0..=2.0)).collect()).collect();
    (p, logits)
}

fn c1_crf_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut unique = 0;
    for case in 0..200 {
        let (p, logits) = random_instance(&mut rng);
        let l = p.num_labels();
        let scores: Vec<(Vec<usize>, f64)> = all_sequences(l, logits.len())
            .into_iter()
            .map(|y| {
                let s = score_sequence(&p, &logits, &y).unwrap();
                (y, s)
            })
            .collect();
        let max = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let brute_z = max + scores.iter().map(|s| (s.1 - max).exp()).sum::<f64>().ln();
        let z = log_partition(&p, &logits).unwrap();
        ensure((z - brute_z).abs() <= 1e-6 * brute_z.abs().max(1.0), || format!("case {case}: logZ {z} vs {brute_z}"))?;
        let (path, best) = viterbi_decode(&p, &logits).unwrap();
        ensure((best - max).abs() < 1e-9, || format!("case {case}: viterbi {best} vs {max}"))?;
        let argmaxes: Vec<&Vec<usize>> = scores.iter().filter(|s| s.1 == max).map(|s| &s.0).collect();
        let runner_up = scores.iter().filter(|s| s.1 < max).map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        if argmaxes.len() == 1 && max - runner_up > 1e-12 {
            unique += 1;
            ensure(&path == argmaxes[0], || format!("case {case}: path {path:?} vs {:?}", argmaxes[0]))?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 5.0, || format!("took {secs:.2}s"))?;
    Ok(format!("200 instances, {unique} unique argmaxes, {secs:.2}s"))
}

fn c2_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let (p, logits) = random_instance(&mut rng);
        let z = log_partition(&p, &logits).unwrap();
        let total: f64 = all_sequences(p.num_labels(), logits.len())
            .iter()
            .map(|y| (score_sequence(&p, &logits, y).unwrap() - z).exp())
            .sum();
        worst = worst.max((total - 1.0).abs());
        ensure((total - 1.0).abs() <= 1e-6, || format!("case {case}: total probability {total}"))?;
    }
    Ok(format!("max |sum - 1| = {worst:.1e}"))
}

fn c3_gradients() -> Outcome {
    let start = Instant::now();
    let dims = ModelDims { d_w: 5, d_lstm: 4, d_u: 3, r: 2 };
    let mut ds = synthetic("grad", 1, 5);
    let doc = &mut ds.documents[0];
    doc.sentences.resize(4, doc.sentences[0].clone());
    for (i, s) in doc.sentences.iter_mut().enumerate() {
        s.text = s.text.split_whitespace().take(6).collect::<Vec<_>>().join(" ");
        s.label = [0, 2, 1, 2][i];
    }
    let mut model = trainable_model(&ds, dims, 11);
    // Non-trivial CRF parameters so their gradients are informative.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (name, t) in model.named_arrays_mut() {
        if name.contains(".crf.") || name.ends_with(".b_O") {
            t.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-0.5..0.5));
        }
    }
    let docs = model.prepare(&ds, 128).unwrap();
    let d = &docs[0];
    let mut grads = model.new_grads(0);
    model.loss_and_grad(0, d, Dropout { rate: 0.0 }, None, 1.0, &mut grads).unwrap();
    let analytic: Vec<Tensor<f64>> = grads.arrays().into_iter().cloned().collect();
    let names: Vec<String> = model.task_arrays_mut(0).into_iter().map(|(n, _)| n).collect();

    let h = 1e-4;
    let mut worst = (0.0f64, String::new());
    for (k, name) in names.iter().enumerate() {
        let len = analytic[k].len();
        let mut fd = vec![0.0; len];
        for i in 0..len {
            let orig = model.task_arrays_mut(0)[k].1.data()[i];
            model.task_arrays_mut(0)[k].1.data_mut()[i] = orig + h;
            let plus = model.loss(0, d).unwrap();
            model.task_arrays_mut(0)[k].1.data_mut()[i] = orig - h;
            let minus = model.loss(0, d).unwrap();
            model.task_arrays_mut(0)[k].1.data_mut()[i] = orig;
            fd[i] = (plus - minus) / (2.0 * h);
        }
        let a = analytic[k].data();
        let diff = a.iter().zip(&fd).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(fd.iter().map(|x| x * x).sum::<f64>().sqrt());
        let rel = if scale == 0.0 { 0.0 } else { diff / scale };
        ensure(scale > 0.0 || name.contains("embeddings"), || format!("{name}: zero gradient"))?;
        ensure(rel < 1e-4, || format!("{name}: relative error {rel:.2e}"))?;
        if rel >= worst.0 {
            worst = (rel, name.clone());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{} groups, worst {:.1e} ({}), {secs:.2}s", names.len(), worst.0, worst.1))
}

fn c4_overfit() -> Outcome {
    let start = Instant::now();
    let ds = synthetic("synth", 50, 7);
    let model = trainable_model(&ds, tiny_dims(), 3);
    let docs = model.prepare(&ds, 128).unwrap();
    let cfg = TrainConfig { lr: 1e-2, dropout: 0.0, epochs: 30, seed: 5, ..TrainConfig::default() };
    let out = train_single_task(model, &docs, &docs, &cfg).map_err(|e| e.to_string())?;
    let (cm, _) = evaluate(&out.final_model, 0, &docs).map_err(|e| e.to_string())?;
    let acc = report(&cm).unwrap().accuracy;
    let secs = start.elapsed().as_secs_f64();
    ensure(acc >= 0.99, || format!("training accuracy {acc:.4}"))?;
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!("training accuracy {acc:.4} after 30 epochs, {secs:.1}s"))
}

fn four_tasks(shared: bool) -> Vec<TaskSpec> {
    let c = |own: &'static [&'static str]| if shared { &["g1", "g2", "g3"][..] } else { own };
    vec![
        spec("A1", TextType::Abstract, c(&["x", "y"])),
        spec("A2", TextType::Abstract, c(&["x", "y", "z"])),
        spec("F1", TextType::FullPaper, c(&["p", "q"])),
        spec("F2", TextType::FullPaper, c(&["u", "v", "w"])),
    ]
}

fn c5_topology() -> Outcome {
    let dims = ModelDims { d_w: 4, d_lstm: 3, d_u: 2, r: 2 };
    let emb = || EmbeddingProvider::<f64>::HashingRandom { d_w: 4, seed: 0 };
    let mut got = Vec::new();
    for (mode, want) in [
        (SharingMode::MultAll, (1, 1, 4)),
        (SharingMode::MultGrp, (1, 2, 4)),
        (SharingMode::MultAllSho, (1, 1, 1)),
        (SharingMode::MultGrpSho, (1, 2, 2)),
    ] {
        let tasks = four_tasks(mode.shares_output());
        let m = build_multitask(dims, &tasks, mode, emb(), 1).map_err(|e| e.to_string())?;
        let c = m.parameter_set_counts();
        ensure(c == want, || format!("{mode:?}: {c:?} != {want:?}"))?;
        got.push(format!("{mode:?}={c:?}"));
    }
    Ok(got.join(" "))
}

fn c6_update_isolation() -> Outcome {
    let dims = ModelDims { d_w: 4, d_lstm: 3, d_u: 2, r: 2 };
    let mut changed_total = 0;
    for mode in [SharingMode::MultAll, SharingMode::MultGrp] {
        let tasks = four_tasks(false);
        let vocab = common::vocab_of(&[&synthetic("A1", 4, 1)]);
        let mut model = build_multitask(dims, &tasks, mode, EmbeddingProvider::trainable(vocab, 4, 2), 3).unwrap();
        let mut ds = synthetic("A1", 4, 1);
        ds.scheme = tasks[0].scheme.clone();
        for d in &mut ds.documents {
            d.sentences.iter_mut().for_each(|s| s.label %= 2);
        }
        let docs = model.prepare(&ds, 128).unwrap();
        let before: Vec<(String, Tensor<f64>)> = model.named_arrays().into_iter().map(|(n, t)| (n, t.clone())).collect();
        let own: Vec<String> = model.task_arrays_mut(0).into_iter().map(|(n, _)| n).collect();
        let cfg = TrainConfig { lr: 1e-2, ..TrainConfig::default() };
        let batch: Vec<_> = docs.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        train_step(&mut model, &mut AdamW::new(), 0, &batch, &cfg, 1e-2, &mut rng).map_err(|e| e.to_string())?;
        for ((name, old), (_, new)) in before.iter().zip(model.named_arrays()) {
            if old != new {
                changed_total += 1;
                ensure(own.contains(name), || format!("{mode:?}: {name} changed but is not wired to task A1"))?;
            } else {
                ensure(!name.starts_with("sentence_encoder"), || format!("{mode:?}: {name} did not change"))?;
            }
        }
    }
    Ok(format!("{changed_total} arrays changed, all wired to the stepped task"))
}

fn c7_init_semantics() -> Outcome {
    let dims = ModelDims { d_w: 4, d_lstm: 3, d_u: 2, r: 2 };
    let emb = || EmbeddingProvider::<f64>::HashingRandom { d_w: 4, seed: 0 };
    let t = spec("S", TextType::Abstract, &["a", "b", "c"]);
    let source = Model::single_task(dims, t.clone(), emb(), 1).unwrap();
    let snapshot = source.clone();
    let fresh = Model::single_task(dims, spec("T", TextType::FullPaper, &["a", "b"]), emb(), 2).unwrap();
    for (mode, copied) in [(InitMode::Init2, vec!["sentence_encoder"]), (InitMode::Init1, vec!["sentence_encoder", "context_encoder"])] {
        let out = init_transfer(&source, fresh.clone(), mode).map_err(|e| e.to_string())?;
        let src: std::collections::HashMap<String, &Tensor<f64>> = source.named_arrays().into_iter().collect();
        // Group name -> whether every array of the group equals the source.
        let mut groups: std::collections::BTreeMap<String, bool> = Default::default();
        for (name, t) in out.named_arrays() {
            let group = name.split('.').next().unwrap().to_string();
            let equal = src.get(&name).is_some_and(|s| *s == t);
            if copied.contains(&group.as_str()) {
                ensure(equal, || format!("{mode:?}: {name} not copied"))?;
            }
            *groups.entry(group).or_insert(true) &= equal;
        }
        for (group, equal) in groups {
            ensure(copied.contains(&group.as_str()) || !equal, || format!("{mode:?}: group {group} equals the source"))?;
        }
        ensure(out.outputs() == fresh.outputs(), || format!("{mode:?}: output layer touched"))?;
    }
    ensure(source.named_arrays() == snapshot.named_arrays(), || "source mutated".into())?;
    Ok("INIT2 copies sentence encoder, INIT1 adds context encoder, outputs fresh".into())
}

fn c8_schedule() -> Outcome {
    let mut all = Vec::new();
    for epoch in 0..100u64 {
        let s = proportional_schedule(&[80, 20], 1000 + epoch);
        let a = s.iter().filter(|(t, _)| *t == 0).count();
        ensure(s.len() == 100 && a == 80, || format!("epoch {epoch}: {} entries, {a} from A", s.len()))?;
        let mut seen = s.clone();
        seen.sort_unstable();
        seen.dedup();
        ensure(seen.len() == 100, || format!("epoch {epoch}: repeated batch"))?;
        all.extend(s.into_iter().map(|(t, _)| t == 0));
    }
    let mut window: usize = all[..1000].iter().filter(|&&a| a).count();
    let (mut lo, mut hi) = (window, window);
    for i in 1000..all.len() {
        window += all[i] as usize;
        window -= all[i - 1000] as usize;
        lo = lo.min(window);
        hi = hi.max(window);
    }
    ensure(lo >= 750 && hi <= 850, || format!("A-fraction range [{lo}, {hi}] per 1000"))?;
    Ok(format!("100 epochs exact; window A-fraction in [{:.3}, {:.3}]", lo as f64 / 1000.0, hi as f64 / 1000.0))
}

fn rec(ds: &str, doc: &str, i: usize, gold: &str, task: &str, pred: &str) -> PredictionRecord {
    PredictionRecord {
        dataset: ds.into(),
        doc_id: doc.into(),
        sent_idx: i,
        gold_label: gold.into(),
        task_id: task.into(),
        pred_label: pred.into(),
    }
}

fn c9_semantic_vectors() -> Outcome {
    // Dataset A (x, y), dataset B (p, q); tasks A and B each label all five sentences.
    //   sentence  gold  task A  task B
    //   A/d#0     A:x   x       p
    //   A/d#1     A:y   x       q
    //   A/d#2     A:x   y       q
    //   B/e#0     B:p   y       p
    //   B/e#1     B:q   y       p
    // Columns (A:x, A:y, B:p, B:q):
    //   v(A:x) = (1,1,1,1)/2   v(A:y) = (1,0,0,1)   v(B:p) = (0,1,1,0)   v(B:q) = (0,1,1,0)
    let recs = vec![
        rec("A", "d", 0, "x", "A", "x"),
        rec("A", "d", 0, "x", "B", "p"),
        rec("A", "d", 1, "y", "A", "x"),
        rec("A", "d", 1, "y", "B", "q"),
        rec("A", "d", 2, "x", "A", "y"),
        rec("A", "d", 2, "x", "B", "q"),
        rec("B", "e", 0, "p", "A", "y"),
        rec("B", "e", 0, "p", "B", "p"),
        rec("B", "e", 1, "q", "A", "y"),
        rec("B", "e", 1, "q", "B", "p"),
    ];
    let labels: Vec<String> = [("A", "x"), ("A", "y"), ("B", "p"), ("B", "q")].iter().map(|(d, c)| qualify(d, c)).collect();
    let space = semantic_vectors(&recs, &labels, &labels).map_err(|e| e.to_string())?;
    let want = [[0.5, 0.5, 0.5, 0.5], [1.0, 0.0, 0.0, 1.0], [0.0, 1.0, 1.0, 0.0], [0.0, 1.0, 1.0, 0.0]];
    for (v, w) in space.vectors.iter().zip(want) {
        ensure(v.counts.iter().sum::<u64>() == 2 * v.sentences, || format!("{}: row sum != |T|", v.label))?;
        ensure(v.v.iter().zip(w).all(|(a, b)| (a - b).abs() < 1e-9), || format!("{}: {:?} vs {w:?}", v.label, v.v))?;
    }
    let vs: Vec<Vec<f64>> = space.vectors.iter().map(|v| v.v.clone()).collect();
    let r = relatedness_matrix(&vs).map_err(|e| e.to_string())?;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let want_r = [[1.0, h, h, h], [h, 1.0, 0.0, 0.0], [h, 0.0, 1.0, 1.0], [h, 0.0, 1.0, 1.0]];
    for (row, w) in r.iter().zip(want_r) {
        ensure(row.iter().zip(w).all(|(a, b)| (a - b).abs() < 1e-9), || format!("relatedness row {row:?} vs {w:?}"))?;
    }
    ensure((relatedness(&[1.0, 1.0, 0.0], &[1.0, 0.0, 1.0]).unwrap() - 0.5).abs() < 1e-12, || "cos((1,1,0),(1,0,1)) != 0.5".into())?;

    // Random three-task dump: integer row sums are exactly |T| per sentence.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let classes = ["a", "b", "c"];
    let tasks = ["T1", "T2", "T3"];
    let mut random = Vec::new();
    for i in 0..60 {
        let gold = classes[rng.gen_range(0..3)];
        for t in tasks {
            random.push(rec("T1", "doc", i, gold, t, classes[rng.gen_range(0..3)]));
        }
    }
    let cols: Vec<String> = tasks.iter().flat_map(|t| classes.iter().map(move |c| qualify(t, c))).collect();
    let rows: Vec<String> = classes.iter().map(|c| qualify("T1", c)).collect();
    let s = semantic_vectors(&random, &rows, &cols).map_err(|e| e.to_string())?;
    for v in &s.vectors {
        ensure(v.counts.iter().sum::<u64>() == 3 * v.sentences, || format!("{}: counts do not sum to |T|", v.label))?;
    }

    // Perfect single task: identity relatedness.
    let perfect: Vec<PredictionRecord> =
        (0..9).map(|i| rec("P", "d", i, classes[i % 3], "P", classes[i % 3])).collect();
    let pl: Vec<String> = classes.iter().map(|c| qualify("P", c)).collect();
    let s = semantic_vectors(&perfect, &pl, &pl).map_err(|e| e.to_string())?;
    let m = relatedness_matrix(&s.vectors.iter().map(|v| v.v.clone()).collect::<Vec<_>>()).unwrap();
    for (i, row) in m.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            ensure(*x == if i == j { 1.0 } else { 0.0 }, || format!("perfect relatedness[{i}][{j}] = {x}"))?;
        }
    }
    Ok("hand fixture, row sums and identity case match".into())
}

fn c10_silhouette() -> Outcome {
    let v = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
    let c: Vec<String> = ["X", "X", "Y", "Y"].iter().map(|s| s.to_string()).collect();
    let r = silhouette(&v, &c).map_err(|e| e.to_string())?;
    ensure((r.overall - 1.0).abs() < 1e-9, || format!("overall {}", r.overall))?;
    let v2 = vec![vec![1.0, 0.0, 0.0], vec![0.9, 0.1, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
    let c2: Vec<String> = ["X", "X", "Y", "FutureWork"].iter().map(|s| s.to_string()).collect();
    let r2 = silhouette(&v2, &c2).map_err(|e| e.to_string())?;
    ensure(r2.per_cluster["FutureWork"] == 0.0 && r2.per_cluster["Y"] == 0.0, || format!("{:?}", r2.per_cluster))?;
    Ok(format!("orthogonal overall {:.9}, singleton cluster 0", r.overall))
}

fn c11_weighted_f1() -> Outcome {
    let r = report(&ConfusionMatrix::from_rows(&[vec![5, 5], vec![0, 10]]).unwrap()).unwrap();
    ensure((r.weighted_f1 - 11.0 / 15.0).abs() < 1e-9, || format!("weighted F1 {}", r.weighted_f1))?;
    ensure(r.accuracy == 0.75, || format!("accuracy {}", r.accuracy))?;
    Ok(format!("weighted F1 {:.10}, accuracy {}", r.weighted_f1, r.accuracy))
}

fn c12_folds() -> Outcome {
    let ds = synthetic("folds", 40, 2);
    let plan = split_folds(&ds, 10, 8).map_err(|e| e.to_string())?;
    let mut tested = std::collections::HashMap::new();
    for f in 0..10 {
        let s = plan.split(&ds, f).map_err(|e| e.to_string())?;
        let sizes = (s.train.documents.len(), s.val.documents.len(), s.test.documents.len());
        ensure(sizes == (32, 4, 4), || format!("fold {f}: {sizes:?}"))?;
        for d in &s.test.documents {
            *tested.entry(d.id.clone()).or_insert(0) += 1;
        }
    }
    ensure(tested.len() == 40 && tested.values().all(|&n| n == 1), || "a document was not tested exactly once".into())?;
    Ok("10 folds of 32/4/4, each document tested once".into())
}

fn mapping_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/generic_mapping.json")
}

fn c13_table6() -> Option<Outcome> {
    let dir = PathBuf::from(std::env::var_os("HSLN_CORPORA_DIR")?);
    Some((|| {
        let mapping = LabelMapping::from_json(&std::fs::read_to_string(mapping_path()).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        // Background, Problem, Methods, Results, Conclusions, FutureWork
        let table: [(&str, [usize; 6]); 4] = [
            ("PMD", [1220, 953, 3927, 3760, 1878, 0]),
            ("NIC", [2548, 0, 2700, 4523, 0, 0]),
            ("DRI", [1760, 449, 5038, 1394, 0, 136]),
            ("ART", [1657, 529, 2752, 3672, 918, 0]),
        ];
        for (name, want) in table {
            let f = std::fs::File::open(dir.join(format!("{name}.jsonl"))).map_err(|e| format!("{name}: {e}"))?;
            let ds = parse_canonical_jsonl(std::io::BufReader::new(f)).map_err(|e| format!("{name}: {e}"))?;
            let g = collapse_labels(&ds, &mapping).map_err(|e| format!("{name}: {e}"))?;
            let got = g.class_counts();
            ensure(got == want, || format!("G-{name}: {got:?} vs {want:?}"))?;
        }
        Ok("per-class counts match for G-PMD, G-NIC, G-DRI, G-ART".into())
    })())
}

fn c14_mupmd() -> Option<Outcome> {
    let dir = PathBuf::from(std::env::var_os("HSLN_MUPMD_DIR")?);
    Some((|| {
        let load = |f: &str| {
            let file = std::fs::File::open(dir.join(f)).map_err(|e| format!("{f}: {e}"))?;
            parse_canonical_jsonl(std::io::BufReader::new(file)).map_err(|e| format!("{f}: {e}"))
        };
        let (train, dev, test) = (load("train.jsonl")?, load("dev.jsonl")?, load("test.jsonl")?);
        let store = PrecomputedStore::open(&dir.join("embeddings.bin")).map_err(|e| e.to_string())?;
        let dims = ModelDims { d_w: store.d_w(), ..ModelDims::default() };
        let emb = EmbeddingProvider::<f32>::PrecomputedFile { d_w: store.d_w(), stores: std::sync::Arc::new([(train.name.clone(), store)].into()) };
        let model = Model::single_task(dims, TaskSpec::from_dataset(&train), emb, 0).map_err(|e| e.to_string())?;
        let cfg = TrainConfig::default();
        let prep = |d| model.prepare(d, cfg.max_tokens).map_err(|e| e.to_string());
        let (tr, dv, te) = (prep(&train)?, prep(&dev)?, prep(&test)?);
        let out = train_single_task(model.clone(), &tr, &dv, &cfg).map_err(|e| e.to_string())?;
        let (cm, _) = evaluate(&out.tasks[0].model, 0, &te).map_err(|e| e.to_string())?;
        let f1 = report(&cm).unwrap().weighted_f1 * 100.0;
        ensure(f1 >= 88.0, || format!("weighted F1 {f1:.1}"))?;
        Ok(format!("weighted F1 {f1:.1}"))
    })())
}

fn run(id: usize, f: impl FnOnce() -> Outcome) -> bool {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(detail)) => {
            println!("criterion {id:>2}: PASS  {detail}");
            true
        }
        Ok(Err(detail)) => {
            println!("criterion {id:>2}: FAIL  {detail}");
            false
        }
        Err(_) => {
            println!("criterion {id:>2}: FAIL  panicked");
            false
        }
    }
}

fn main() {
    // The harness passes filter arguments through; this suite always runs whole.
    let gating: Vec<(usize, fn() -> Outcome)> = vec![
        (1, c1_crf_oracle),
        (2, c2_normalization),
        (3, c3_gradients),
        (4, c4_overfit),
        (5, c5_topology),
        (6, c6_update_isolation),
        (7, c7_init_semantics),
        (8, c8_schedule),
        (9, c9_semantic_vectors),
        (10, c10_silhouette),
        (11, c11_weighted_f1),
        (12, c12_folds),
    ];
    println!("running acceptance criteria");
    let mut ok = true;
    for (id, f) in gating {
        ok &= run(id, f);
    }
    match catch_unwind(c13_table6) {
        Ok(Some(r)) => ok &= run(13, || r),
        Ok(None) => println!("criterion 13: SKIP  set HSLN_CORPORA_DIR to the compiled corpora"),
        Err(_) => ok &= run(13, || Err("panicked".into())),
    }
    match catch_unwind(c14_mupmd) {
        Ok(Some(r)) => {
            run(14, || r);
        }
        Ok(None) => println!("criterion 14: SKIP  optional; set HSLN_MUPMD_DIR to run"),
        Err(_) => println!("criterion 14: FAIL  panicked (not gating)"),
    }
    if !ok {
        std::process::exit(1);
    }
    println!("acceptance: all gating criteria passed");
}
