use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::config::RunConfig;
use super::pipeline::{classifier, evaluate_indices, prepare, train_pair, Prepared};
use crate::balance::{
    assign_weights, default_anchor, is_balanced, node_covariance, polarity_objective, tree_polarity,
    update_polarities, FeatureDistanceField, WeightScheme,
};
use crate::classify::{metrics_table, MetricsReport, Prediction};
use crate::data::{
    load_dataset, loso_splits, manifest_topology_path, save_dataset, split_ratio, synth_two_class, LabeledDataset,
    Split, SplitMode,
};
use crate::error::{Error, Result};
use crate::graph::{build_laplacian, normalize_weights, CsrMatrix, LaplacianKind, SignedGraph};
use crate::spectral::{apply_spectral_filter, eigh, lp_filter_lanczos, Backend, FilterSpec};
use crate::train::EpochRecord;
use crate::unrolled::{bgl_block, block_forward, mahalanobis_distances, DenoiserModel, MetricFactor};

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config: &'a RunConfig,
    /// Files written by the command, relative to the output directory.
    outputs: Vec<String>,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    write_text(path, &text)
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            list_files(root, &path, out)?;
        } else if let Ok(rel) = path.strip_prefix(root) {
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

fn finish(cfg: &RunConfig, out: &Path, command: &str, summary: &str) -> Result<()> {
    write_text(&out.join("summary.txt"), summary)?;
    let mut outputs = Vec::new();
    list_files(out, out, &mut outputs)?;
    outputs.retain(|p| p != "run_manifest.json");
    outputs.sort();
    let manifest = RunManifest {
        tool: "balgraph",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: cfg.seed,
        config: cfg,
        outputs,
    };
    write_json(&out.join("run_manifest.json"), &manifest)?;
    print!("{summary}");
    Ok(())
}

/// Loads the configured dataset and maps it onto the node topology.
pub fn load_prepared(cfg: &RunConfig) -> Result<(LabeledDataset, Prepared)> {
    let manifest_path = cfg
        .data
        .manifest
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("data.manifest is required for this command".into()))?;
    let (ds, manifest) = load_dataset(manifest_path)?;
    let topo_path: PathBuf = match (&cfg.data.topology.path, manifest_topology_path(manifest_path, &manifest)) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => p,
        (None, None) => {
            return Err(Error::InvalidConfig(
                "no topology: set data.topology.path or list one in the dataset manifest".into(),
            ))
        }
    };
    let primary = SignedGraph::load(&topo_path)?;
    let prep = prepare(&ds, &primary, &cfg.data.chunk, &cfg.data.topology)?;
    Ok((ds, prep))
}

/// Named splits: one for ratio mode, one per subject for LOSO.
pub fn run_splits(cfg: &RunConfig, ds: &LabeledDataset) -> Result<Vec<(String, Split)>> {
    match cfg.split {
        SplitMode::Ratio => Ok(vec![("ratio".to_string(), split_ratio(ds.len(), cfg.seed)?)]),
        SplitMode::Loso => Ok(loso_splits(ds, cfg.seed)?
            .into_iter()
            .map(|(s, split)| (format!("subject_{s:03}"), split))
            .collect()),
    }
}

fn run_dir(root: &Path, mode: SplitMode, name: &str) -> PathBuf {
    match mode {
        SplitMode::Ratio => root.to_path_buf(),
        SplitMode::Loso => root.join(name),
    }
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (ds, truth) = synth_two_class(&cfg.synth, cfg.seed)?;
    create_dir(out)?;
    let manifest = save_dataset(out, &ds, Some(&truth.topology))?;
    #[derive(Serialize)]
    struct Truth<'a> {
        polarities: [&'a [i8]; 2],
        omega: [usize; 2],
        noise_sigma: f64,
        graphs: [&'static str; 2],
    }
    for (c, g) in truth.graphs.iter().enumerate() {
        g.save(&out.join(format!("class{c}_graph.txt")))?;
    }
    write_json(
        &out.join("truth.json"),
        &Truth {
            polarities: [truth.betas[0].as_slice(), truth.betas[1].as_slice()],
            omega: cfg.synth.omega,
            noise_sigma: cfg.synth.noise_sigma(),
            graphs: ["class0_graph.txt", "class1_graph.txt"],
        },
    )?;
    let mut s = String::new();
    let _ = writeln!(s, "synthetic dataset: {} samples, {} channels x {} samples", ds.len(), ds.n_channels(), ds.n_times());
    let _ = writeln!(s, "topology: {} nodes, {} edges", truth.topology.n_nodes(), truth.topology.n_edges());
    let _ = writeln!(s, "manifest entries: {}", manifest.samples.len());
    finish(cfg, out, "synth", &s)
}

#[derive(Serialize)]
struct ClassSummary {
    class: u8,
    best_epoch: Option<usize>,
    best_val_loss: f64,
    epochs_run: usize,
    n_shape_params: usize,
    cutoffs: Vec<f64>,
}

#[derive(Serialize)]
struct TrainRun {
    name: String,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    classes: Vec<ClassSummary>,
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (ds, prep) = load_prepared(cfg)?;
    create_dir(out)?;
    let mut runs = Vec::new();
    for (name, split) in run_splits(cfg, &ds)? {
        let dir = run_dir(out, cfg.split, &name);
        create_dir(&dir)?;
        let outcomes = train_pair(cfg, &prep, &split, cfg.seed)?;
        let mut classes = Vec::new();
        for (c, o) in outcomes.iter().enumerate() {
            o.model.save(&dir.join(format!("psi{c}.json")))?;
            write_jsonl::<EpochRecord>(&dir.join(format!("log_class{c}.jsonl")), &o.log)?;
            classes.push(ClassSummary {
                class: c as u8,
                best_epoch: o.best_epoch,
                best_val_loss: o.best_val_loss,
                epochs_run: o.log.len(),
                n_shape_params: o.model.n_shape_params(),
                cutoffs: o.model.blocks.iter().map(|b| b.filter.omega).collect(),
            });
        }
        write_json(&dir.join("split.json"), &split)?;
        runs.push(TrainRun {
            name,
            n_train: split.train.len(),
            n_val: split.val.len(),
            n_test: split.test.len(),
            classes,
        });
    }
    write_json(&out.join("train_summary.json"), &runs)?;
    let mut s = String::new();
    for r in &runs {
        for c in &r.classes {
            let _ = writeln!(
                s,
                "{}: class {} best val loss {:.6} (epoch {}), {} epochs, {} shape parameters",
                r.name,
                c.class,
                c.best_val_loss,
                c.best_epoch.map_or("init".to_string(), |e| e.to_string()),
                c.epochs_run,
                c.n_shape_params
            );
        }
    }
    finish(cfg, out, "train", &s)
}

#[derive(Serialize)]
struct EvalRow {
    name: String,
    metrics: MetricsReport,
}

#[derive(Serialize)]
struct EvalReport {
    split: SplitMode,
    positive_class: u8,
    rows: Vec<EvalRow>,
    /// Metrics over all test samples of every run.
    pooled: MetricsReport,
}

#[derive(Serialize)]
struct AuditRow {
    run: String,
    sample: usize,
    label: u8,
    class: u8,
    err0: f64,
    err1: f64,
}

fn load_checkpoint(path: &Path) -> Result<DenoiserModel> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found"),
        ));
    }
    DenoiserModel::load(path)
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path, checkpoints: Option<&Path>, audit: bool) -> Result<()> {
    let ck_root: PathBuf = checkpoints
        .map(Path::to_path_buf)
        .or_else(|| cfg.eval.checkpoints.clone())
        .unwrap_or_else(|| out.to_path_buf());
    let (ds, prep) = load_prepared(cfg)?;
    let mut rows = Vec::new();
    let mut audit_rows = Vec::new();
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (name, split) in run_splits(cfg, &ds)? {
        let dir = run_dir(&ck_root, cfg.split, &name);
        let psi0 = load_checkpoint(&dir.join("psi0.json"))?;
        let psi1 = load_checkpoint(&dir.join("psi1.json"))?;
        let pair = classifier(cfg, psi0, psi1)?;
        let (metrics, preds): (MetricsReport, Vec<Prediction>) = evaluate_indices(&pair, &prep, &split.test)?;
        tp += metrics.tp;
        fp += metrics.fp;
        tn += metrics.tn;
        fn_ += metrics.fn_;
        if audit {
            for (&k, p) in split.test.iter().zip(&preds) {
                audit_rows.push(AuditRow {
                    run: name.clone(),
                    sample: k,
                    label: prep.labels[k],
                    class: p.class,
                    err0: p.err0,
                    err1: p.err1,
                });
            }
        }
        rows.push(EvalRow { name, metrics });
    }
    let report = EvalReport {
        split: cfg.split,
        positive_class: 1,
        rows,
        pooled: MetricsReport::from_counts(tp, fp, tn, fn_)?,
    };
    create_dir(out)?;
    write_json(&out.join("report.json"), &report)?;
    if audit {
        write_jsonl(&out.join("predictions.jsonl"), &audit_rows)?;
    }
    let mut table: Vec<(String, &MetricsReport)> = report.rows.iter().map(|r| (r.name.clone(), &r.metrics)).collect();
    if cfg.split == SplitMode::Loso {
        table.push(("pooled".to_string(), &report.pooled));
    }
    let text = metrics_table(&table);
    write_text(&out.join("report.txt"), &text)?;
    finish(cfg, out, "eval", &text)
}

/// Connected random graph: a ring plus `chords` random chords, weights
/// uniform in [0.5, 1.5].
fn bench_graph(n: usize, chords: usize, rng: &mut ChaCha8Rng) -> Result<SignedGraph> {
    let mut pairs: std::collections::BTreeSet<(usize, usize)> =
        (0..n).map(|i| (i.min((i + 1) % n), i.max((i + 1) % n))).collect();
    let target = (pairs.len() + chords).min(n * (n - 1) / 2);
    while pairs.len() < target {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    }
    let edges: Vec<(usize, usize, f64)> = pairs.into_iter().map(|(i, j)| (i, j, rng.random_range(0.5..1.5))).collect();
    SignedGraph::new(n, edges)
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub m: usize,
    pub n_edges: usize,
    /// Worst absolute error against the exact filter; `None` when the exact
    /// filter was not computed.
    pub err_inf: Option<f64>,
    /// Median wall time of one filter application.
    pub wall_ms: f64,
}

/// Lanczos filter error and timing over the configured size ladder.
pub fn lanczos_bench(cfg: &RunConfig) -> Result<Vec<BenchRow>> {
    let b = &cfg.bench;
    if b.trials == 0 || b.m == 0 {
        return Err(Error::InvalidConfig("bench.trials and bench.m must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for &n in &b.ladder {
        if n < 3 {
            return Err(Error::InvalidConfig(format!("bench ladder sizes must be at least 3, got {n}")));
        }
        let g = normalize_weights(&bench_graph(n, b.chords_per_node * n, &mut rng)?)?;
        let csr = CsrMatrix::laplacian(&g, LaplacianKind::Combinatorial);
        let exact = if n <= b.exact_max {
            Some(eigh(&build_laplacian(&g, LaplacianKind::Combinatorial))?)
        } else {
            None
        };
        let ys: Vec<Vec<f64>> = (0..b.trials)
            .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let mut ms = vec![b.m.min(n)];
        if n <= b.full_krylov_max && !ms.contains(&n) {
            ms.push(n);
        }
        for m in ms {
            let spec = FilterSpec::sigmoid(b.omega).with_backend(Backend::Lanczos { m });
            let mut times = Vec::with_capacity(ys.len());
            let mut err: Option<f64> = None;
            for y in &ys {
                let yv = ndarray::ArrayView1::from(y.as_slice());
                let started = Instant::now();
                let approx = lp_filter_lanczos(&csr, yv, &spec)?;
                times.push(started.elapsed().as_secs_f64() * 1e3);
                if let Some(eig) = &exact {
                    let x = apply_spectral_filter(eig, yv.insert_axis(Axis(1)), &spec)?;
                    let e = x
                        .column(0)
                        .iter()
                        .zip(approx.iter())
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    err = Some(err.map_or(e, |v: f64| v.max(e)));
                }
            }
            times.sort_by(f64::total_cmp);
            rows.push(BenchRow {
                n,
                m,
                n_edges: g.n_edges(),
                err_inf: err,
                wall_ms: times[times.len() / 2],
            });
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("n,m,err_inf,wall_ms\n");
    for r in rows {
        let err = r.err_inf.map_or("nan".to_string(), |e| format!("{e:e}"));
        let _ = writeln!(s, "{},{},{},{:.4}", r.n, r.m, err, r.wall_ms);
    }
    s
}

pub fn cmd_lanczos_bench(cfg: &RunConfig, out: &Path) -> Result<()> {
    let rows = lanczos_bench(cfg)?;
    create_dir(out)?;
    let csv = bench_csv(&rows);
    write_text(&out.join("lanczos_bench.csv"), &csv)?;
    write_json(&out.join("lanczos_bench.json"), &rows)?;
    finish(cfg, out, "lanczos-bench", &csv)
}

#[derive(Serialize)]
struct BlockInfo {
    block: usize,
    omega: f64,
    alpha: f64,
    mode: crate::spectral::FilterMode,
    backend: Backend,
    n_shape_params: usize,
    negative_polarities: usize,
    polarity: Vec<i8>,
}

#[derive(Serialize)]
struct ModelInfo {
    graph: crate::unrolled::GraphKind,
    n_nodes: usize,
    n_edges: usize,
    chunking: crate::unrolled::Chunking,
    embedding_len: usize,
    n_shape_params: usize,
    blocks: Vec<BlockInfo>,
}

pub fn cmd_inspect(cfg: &RunConfig, out: &Path, model_path: &Path) -> Result<()> {
    let model = load_checkpoint(model_path)?;
    let info = ModelInfo {
        graph: model.graph,
        n_nodes: model.n_nodes(),
        n_edges: model.topology.n_edges(),
        chunking: model.chunking,
        embedding_len: model.embedding_len(),
        n_shape_params: model.n_shape_params(),
        blocks: model
            .blocks
            .iter()
            .enumerate()
            .map(|(t, b)| BlockInfo {
                block: t,
                omega: b.filter.omega,
                alpha: b.filter.alpha,
                mode: b.filter.mode,
                backend: b.filter.backend,
                n_shape_params: b.n_shape_params(),
                negative_polarities: b.beta.as_slice().iter().filter(|&&v| v < 0).count(),
                polarity: b.beta.as_slice().to_vec(),
            })
            .collect(),
    };
    create_dir(out)?;
    write_json(&out.join("inspect.json"), &info)?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:?} model: {} nodes, {} edges, {} shape parameters",
        info.graph, info.n_nodes, info.n_edges, info.n_shape_params
    );
    for b in &info.blocks {
        let _ = writeln!(
            s,
            "block {}: omega {:.6} alpha {} {:?} {:?}, {} negative polarities",
            b.block, b.omega, b.alpha, b.mode, b.backend, b.negative_polarities
        );
    }
    finish(cfg, out, "inspect", &s)
}

#[derive(Serialize)]
struct LearnedGraph {
    name: String,
    n_edges: usize,
    negative_edges: usize,
    negative_polarities: usize,
    balanced: bool,
    polarity: Vec<i8>,
    sweeps: Option<usize>,
    converged: Option<bool>,
    objective: Option<f64>,
    delta: Option<f64>,
}

fn describe(name: String, g: &SignedGraph, polarity: &[i8]) -> LearnedGraph {
    LearnedGraph {
        name,
        n_edges: g.n_edges(),
        negative_edges: g.edges().iter().filter(|e| e.w < 0.0).count(),
        negative_polarities: polarity.iter().filter(|&&v| v < 0).count(),
        balanced: is_balanced(g).is_balanced(),
        polarity: polarity.to_vec(),
        sweeps: None,
        converged: None,
        objective: None,
        delta: None,
    }
}

/// Class graphs from raw embedding distances: polarities propagated from
/// the class covariance and refined greedily, weights from the mean
/// normalised distance over the class.
fn learn_class_graph(prep: &Prepared, class: u8, sweeps: usize) -> Result<(SignedGraph, LearnedGraph)> {
    let xs: Vec<&Array2<f64>> = prep
        .signals
        .iter()
        .zip(&prep.labels)
        .filter(|(_, &l)| l == class)
        .map(|(x, _)| x)
        .collect();
    if xs.is_empty() {
        return Err(Error::EmptyPartition(format!("class {class}")));
    }
    let n = prep.topology.n_nodes();
    let metric = MetricFactor::identity(prep.chunking.chunk_len);
    let mut mean = Array2::<f64>::zeros((n, n));
    for x in &xs {
        mean += mahalanobis_distances(x.view(), &metric)?.matrix();
    }
    mean /= xs.len() as f64;
    let field = FeatureDistanceField::new(mean)?;
    let cov = node_covariance(xs.iter().map(|x| x.view())).expect("nonempty class");
    let beta0 = tree_polarity(&prep.topology, cov.view(), default_anchor(cov.view()))?;
    let g0 = assign_weights(&field, &beta0, WeightScheme::BalancedCht, &prep.topology)?;
    let views: Vec<_> = xs.iter().map(|x| x.view()).collect();
    let upd = update_polarities(&g0, &beta0, &views, sweeps)?;
    let graph = assign_weights(&field, &upd.beta, WeightScheme::BalancedCht, &prep.topology)?;
    let mut info = describe(format!("class{class}"), &graph, upd.beta.as_slice());
    info.sweeps = Some(upd.sweeps);
    info.converged = Some(upd.converged);
    info.objective = Some(polarity_objective(&graph, &upd.beta, &views));
    Ok((graph, info))
}

pub fn cmd_learn_graph(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (_, prep) = load_prepared(cfg)?;
    create_dir(out)?;
    let mut learned = Vec::new();
    match &cfg.learn_graph.model {
        None => {
            for class in 0..2u8 {
                let (g, info) = learn_class_graph(&prep, class, cfg.learn_graph.polarity_sweeps)?;
                g.save(&out.join(format!("class{class}_graph.txt")))?;
                learned.push(info);
            }
        }
        Some(path) => {
            let model = load_checkpoint(path)?;
            if model.n_nodes() != prep.topology.n_nodes() || model.chunking != prep.chunking {
                return Err(Error::InvalidModel("checkpoint does not match the dataset's chunking".into()));
            }
            create_dir(&out.join("graphs"))?;
            for k in 0..cfg.learn_graph.max_samples.min(prep.signals.len()) {
                let mut x = prep.signals[k].clone();
                for (t, block) in model.blocks.iter().enumerate() {
                    let bg = bgl_block(&model, block, x.view())?;
                    let name = format!("sample_{k:05}_block_{t}");
                    bg.weights.save(&out.join("graphs").join(format!("{name}.txt")))?;
                    let mut info = describe(name, &bg.weights, bg.beta.as_slice());
                    info.delta = Some(bg.delta);
                    learned.push(info);
                    x = block_forward(&model, block, x.view())?;
                }
            }
        }
    }
    write_json(&out.join("learned_graphs.json"), &learned)?;
    let mut s = String::new();
    for l in &learned {
        let _ = writeln!(
            s,
            "{}: {} edges ({} negative), {} negative polarities, balanced: {}",
            l.name, l.n_edges, l.negative_edges, l.negative_polarities, l.balanced
        );
    }
    finish(cfg, out, "learn-graph", &s)
}
