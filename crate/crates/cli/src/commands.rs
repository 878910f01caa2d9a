use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use kgrelpred::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use kgrelpred::encoder::Mechanism;
use kgrelpred::eval::{
    evaluate as run_eval, ConfusionMatrix, Evaluation, Metrics, MetricsReport, EVAL_STREAM,
};
use kgrelpred::graph::{load_dataset, Direction, KnowledgeGraph, PathToken, Split};
use kgrelpred::model::stream_rng;
use kgrelpred::tensor::softmax_slice;
use kgrelpred::trainer::{
    train_with_paths, EpochLog, TrainConfig, TrainOptions, TrainOutcome, TrainingPaths,
};
use kgrelpred::walk::PathFinder;
use log::info;

use crate::config::Options;

/// Marks errors caused by invalid flag values.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| UsageError(format!("{e:#}")).into())
}

fn setup(opts: Options) -> Result<Options> {
    let opts = usage(opts.resolve())?;
    if let Some(n) = opts.workers {
        if n == 0 {
            return Err(UsageError("--workers must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(opts)
}

fn load_graph(opts: &Options) -> Result<KnowledgeGraph> {
    let dir = usage(opts.data_dir().map(Path::to_path_buf))?;
    let graph = load_dataset(&dir).with_context(|| format!("loading {}", dir.display()))?;
    info!(
        "{}: {} entities, {} relations, {}/{}/{} triples",
        dir.display(),
        graph.num_entities(),
        graph.num_relations(),
        graph.split(Split::Train).len(),
        graph.split(Split::Valid).len(),
        graph.split(Split::Test).len()
    );
    Ok(graph)
}

/// Writes through a temporary sibling so a failed write leaves no partial file.
fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}

fn epoch_line(log: &EpochLog) -> String {
    let mut s = format!("epoch={} train_loss={:.6}", log.epoch, log.train_loss);
    if let Some(v) = &log.valid {
        let _ = write!(
            s,
            " valid_mrr={:.4} valid_mr={:.4} valid_hit1={:.4} valid_hit3={:.4}",
            v.mrr, v.mr, v.hit1, v.hit3
        );
    }
    let _ = write!(s, " seconds={:.1}", log.seconds);
    s
}

fn metrics_line(m: &Metrics) -> String {
    format!(
        "mrr={:.4} mr={:.4} hit1={:.4} hit3={:.4} triples={}",
        m.mrr, m.mr, m.hit1, m.hit3, m.count
    )
}

/// Path counts per path length, shared by every run on the same graph.
#[derive(Default)]
struct PathCache(BTreeMap<usize, TrainingPaths>);

impl PathCache {
    fn get(&mut self, graph: &KnowledgeGraph, cfg: &TrainConfig) -> Result<Option<&TrainingPaths>> {
        if !cfg.model.use_paths {
            return Ok(None);
        }
        let len = cfg.model.path_len;
        Ok(Some(match self.0.entry(len) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(TrainingPaths::compute(graph, len)?),
        }))
    }
}

fn train_seed(
    graph: &KnowledgeGraph,
    cfg: &TrainConfig,
    cache: &mut PathCache,
) -> Result<(TrainOutcome, String)> {
    let mut log = String::new();
    let paths = cache.get(graph, cfg)?;
    let outcome = train_with_paths(graph, cfg, TrainOptions::default(), paths, |e| {
        let line = epoch_line(e);
        info!("seed {} {line}", cfg.seed);
        log.push_str(&line);
        log.push('\n');
    })?;
    let _ = writeln!(log, "best_epoch={}", outcome.best_epoch);
    Ok((outcome, log))
}

fn test_metrics(
    graph: &KnowledgeGraph,
    cfg: &TrainConfig,
    out: &TrainOutcome,
) -> Result<Option<Evaluation>> {
    if graph.split(Split::Test).is_empty() {
        return Ok(None);
    }
    Ok(Some(run_eval(
        &out.best_model,
        graph,
        Split::Test,
        cfg.seed,
        cfg.batch_size,
    )?))
}

pub fn train(opts: Options) -> Result<()> {
    let opts = setup(opts)?;
    let base = usage(opts.train_config())?;
    let seeds = usage(opts.seed_list())?;
    let graph = load_graph(&opts)?;
    let out = opts.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
    let started = Instant::now();
    let mut runs = Vec::new();
    let mut cache = PathCache::default();
    for &seed in &seeds {
        let cfg = TrainConfig {
            seed,
            ..base.clone()
        };
        let dir = if seeds.len() > 1 {
            out.join(format!("seed-{seed}"))
        } else {
            out.clone()
        };
        let (outcome, mut log) = train_seed(&graph, &cfg, &mut cache)?;
        let final_ckpt = Checkpoint::new(cfg.clone(), &graph, outcome.final_model.clone());
        let best_ckpt = Checkpoint::new(cfg.clone(), &graph, outcome.best_model.clone());
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        save_checkpoint(&final_ckpt, dir.join("model.final.ckpt"))?;
        save_checkpoint(&best_ckpt, dir.join("model.best.ckpt"))?;
        if let Some(ev) = test_metrics(&graph, &cfg, &outcome)? {
            let line = metrics_line(&ev.metrics);
            println!(
                "seed {seed} test (best epoch {}): {line}",
                outcome.best_epoch
            );
            let _ = writeln!(log, "test {line}");
            runs.push(ev.metrics);
        }
        write_file(&dir.join("train.log"), log.as_bytes())?;
    }
    if runs.len() > 1 {
        let report = MetricsReport::from_runs(&runs, started.elapsed().as_secs_f64());
        print!("{}", report.to_key_value());
        write_file(&out.join("summary.txt"), report.to_key_value().as_bytes())?;
    }
    Ok(())
}

fn checkpoint_path(opts: &Options, seed: u64) -> Result<PathBuf> {
    let p = usage(opts.checkpoint.clone().context("--checkpoint is required"))?;
    Ok(PathBuf::from(
        p.to_string_lossy().replace("{seed}", &seed.to_string()),
    ))
}

fn open_checkpoint(opts: &Options, graph: &KnowledgeGraph, seed: u64) -> Result<Checkpoint> {
    let path = checkpoint_path(opts, seed)?;
    let ckpt = load_checkpoint(&path).with_context(|| format!("loading {}", path.display()))?;
    ckpt.check_graph(graph)?;
    ckpt.check_use_paths(opts.use_paths)?;
    Ok(ckpt)
}

pub fn evaluate(opts: Options) -> Result<()> {
    let opts = setup(opts)?;
    let split = usage(opts.split(Split::Test))?;
    let seeds = usage(opts.seed_list())?;
    let graph = load_graph(&opts)?;
    let started = Instant::now();
    let mut runs = Vec::new();
    for (i, &seed) in seeds.iter().enumerate() {
        let ckpt = open_checkpoint(&opts, &graph, seed)?;
        let batch = opts.batch.unwrap_or(ckpt.config.batch_size);
        let ev = run_eval(&ckpt.model, &graph, split, seed, batch)?;
        if seeds.len() > 1 {
            println!("seed {seed}: {}", metrics_line(&ev.metrics));
        }
        if ev.path_stats.found > 0 {
            info!(
                "paths: {} found, {} dropped as unseen in training",
                ev.path_stats.found,
                ev.path_stats.dropped()
            );
        }
        if i == 0 {
            if let Some(path) = &opts.confusion {
                let freq = graph.relation_frequencies(Split::Train);
                let m = ConfusionMatrix::new(&ev.results, &freq);
                write_file(path, m.to_csv(graph.relations.names()).as_bytes())?;
            }
        }
        runs.push(ev.metrics);
    }
    let report = MetricsReport::from_runs(&runs, started.elapsed().as_secs_f64());
    print!("{}", report.to_key_value());
    if let Some(path) = &opts.out {
        write_file(path, report.to_key_value().as_bytes())?;
    }
    Ok(())
}

fn entity(graph: &KnowledgeGraph, name: Option<&str>, flag: &str) -> Result<usize> {
    let name = usage(name.with_context(|| format!("{flag} is required")))?;
    graph
        .entities
        .get(name)
        .ok_or_else(|| kgrelpred::Error::UnknownEntity(name.to_string()).into())
}

pub fn predict(opts: Options) -> Result<()> {
    let opts = setup(opts)?;
    let graph = load_graph(&opts)?;
    let seed = opts.seed.unwrap_or(1);
    let head = entity(&graph, opts.head.as_deref(), "--head")?;
    let tail = entity(&graph, opts.tail.as_deref(), "--tail")?;
    let ckpt = open_checkpoint(&opts, &graph, seed)?;
    let finder = ckpt.model.path_finder(&graph)?;
    let mut rng = stream_rng(seed, EVAL_STREAM);
    let logits = ckpt
        .model
        .score(&graph, finder.as_ref(), head, tail, None, &mut rng)?;
    let probs = softmax_slice(&logits);
    let k = opts.topk.unwrap_or(5).min(probs.len());
    for (rank, r) in kgrelpred::eval::top_k(&logits, k).into_iter().enumerate() {
        println!("{}\t{}\t{:.6}", rank + 1, graph.relations.name(r), probs[r]);
    }
    Ok(())
}

fn render_path(graph: &KnowledgeGraph, tokens: &[PathToken]) -> String {
    tokens
        .iter()
        .map(|t| {
            let name = graph.relations.name(t.relation);
            match t.direction {
                Direction::Forward => name.to_string(),
                Direction::Reverse => format!("{name}^-1"),
            }
        })
        .collect::<Vec<_>>()
        .join(" -> ")
}

/// Key-value summary of the training path vocabulary.
fn vocabulary_stats(graph: &KnowledgeGraph, finder: &PathFinder) -> Result<String> {
    let len = finder.max_len();
    let tp = TrainingPaths::compute(graph, len)?;
    let mut by_length = vec![0usize; len + 1];
    for p in tp.vocabulary.paths(finder.packer()) {
        by_length[p.len()] += 1;
    }
    let distinct: Vec<usize> = tp.train.iter().map(|c| c.len()).collect();
    let walks: Vec<u64> = tp
        .train
        .iter()
        .map(|c| c.iter().map(|&(_, n)| n as u64).sum())
        .collect();
    let pairs = distinct.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(out, "vocabulary_size = {}", tp.vocabulary.len());
    for (l, n) in by_length.iter().enumerate().skip(1) {
        let _ = writeln!(out, "paths_of_length_{l} = {n}");
    }
    let _ = writeln!(out, "training_pairs = {}", distinct.len());
    let _ = writeln!(
        out,
        "pairs_without_paths = {}",
        distinct.iter().filter(|&&n| n == 0).count()
    );
    let _ = writeln!(
        out,
        "distinct_paths_per_pair_mean = {:.4}",
        distinct.iter().sum::<usize>() as f64 / pairs
    );
    let _ = writeln!(
        out,
        "distinct_paths_per_pair_max = {}",
        distinct.iter().max().unwrap_or(&0)
    );
    let _ = writeln!(
        out,
        "walks_per_pair_mean = {:.4}",
        walks.iter().sum::<u64>() as f64 / pairs
    );
    let _ = writeln!(
        out,
        "walks_per_pair_max = {}",
        walks.iter().max().unwrap_or(&0)
    );
    Ok(out)
}

/// With `--head` and `--tail`, the paths between them with walk counts;
/// otherwise statistics of the training vocabulary.
pub fn paths(opts: Options) -> Result<()> {
    let opts = setup(opts)?;
    let graph = load_graph(&opts)?;
    let finder = usage(PathFinder::new(&graph, opts.path_len.unwrap_or(3)).map_err(Into::into))?;
    if opts.head.is_none() && opts.tail.is_none() {
        print!("{}", vocabulary_stats(&graph, &finder)?);
        return Ok(());
    }
    let head = entity(&graph, opts.head.as_deref(), "--head")?;
    let tail = entity(&graph, opts.tail.as_deref(), "--tail")?;
    let counts = finder.path_counts(head, tail, &[]);
    for (key, n) in &counts {
        println!(
            "{n}\t{}",
            render_path(&graph, &finder.packer().unpack(*key))
        );
    }
    info!("{} distinct paths", counts.len());
    Ok(())
}

struct Cell {
    mechanisms: Vec<Mechanism>,
    use_paths: bool,
    hops: usize,
    path_len: usize,
    runs: Vec<Metrics>,
}

fn run_cell(
    graph: &KnowledgeGraph,
    base: &TrainConfig,
    seeds: &[u64],
    confusion: Option<&Path>,
    cell: &mut Cell,
    cache: &mut PathCache,
) -> Result<()> {
    for (i, &seed) in seeds.iter().enumerate() {
        let mut cfg = TrainConfig {
            seed,
            ..base.clone()
        };
        cfg.model.encoder.mechanisms = cell.mechanisms.clone();
        cfg.model.encoder.hops = cell.hops;
        cfg.model.use_paths = cell.use_paths;
        cfg.model.path_len = cell.path_len;
        let (outcome, _) = train_seed(graph, &cfg, cache)?;
        let ev = test_metrics(graph, &cfg, &outcome)?.context("ablation needs a test split")?;
        info!(
            "{} paths={} hops={} len={} seed {seed}: {}",
            Mechanism::label(&cell.mechanisms),
            cell.use_paths,
            cell.hops,
            cell.path_len,
            metrics_line(&ev.metrics)
        );
        if let (0, Some(path)) = (i, confusion) {
            let m = ConfusionMatrix::new(&ev.results, &graph.relation_frequencies(Split::Train));
            write_file(path, m.to_csv(graph.relations.names()).as_bytes())?;
        }
        cell.runs.push(ev.metrics);
    }
    Ok(())
}

fn cell_row(c: &Cell, with_grid: bool) -> String {
    let r = MetricsReport::from_runs(&c.runs, 0.0);
    let mut s = format!("{},{}", Mechanism::label(&c.mechanisms), c.use_paths);
    if with_grid {
        let _ = write!(s, ",{},{}", c.hops, c.path_len);
    }
    let _ = write!(
        s,
        ",{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
        r.hit1.mean, r.hit1.std, r.mrr.mean, r.mrr.std, r.hit3.mean, r.mr.mean, r.runs
    );
    s
}

const METRIC_COLUMNS: &str = "hit1_mean,hit1_std,mrr_mean,mrr_std,hit3_mean,mr_mean,runs";

pub fn ablate(opts: Options) -> Result<()> {
    let opts = setup(opts)?;
    let base = usage(opts.train_config())?;
    let seeds = usage(opts.seed_list())?;
    let graph = load_graph(&opts)?;
    let out = opts
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("ablation"));
    let variants = match usage(opts.mechanisms())? {
        Some(m) => vec![m],
        None => Mechanism::subsets(),
    };
    let path_settings = match opts.use_paths {
        Some(p) => vec![p],
        None => vec![true, false],
    };
    if seeds.is_empty() {
        bail!("no seeds");
    }
    let mut cache = PathCache::default();
    let mut csv = format!("mechanisms,use_paths,{METRIC_COLUMNS}\n");
    for m in &variants {
        for &p in &path_settings {
            let mut cell = Cell {
                mechanisms: m.clone(),
                use_paths: p,
                hops: base.model.encoder.hops,
                path_len: base.model.path_len,
                runs: Vec::new(),
            };
            let name = format!(
                "confusion-{}-{}.csv",
                Mechanism::label(m).replace('+', ""),
                if p { "paths" } else { "nopaths" }
            );
            run_cell(
                &graph,
                &base,
                &seeds,
                Some(&out.join(name)),
                &mut cell,
                &mut cache,
            )?;
            csv.push_str(&cell_row(&cell, false));
            csv.push('\n');
            write_file(&out.join("ablation.csv"), csv.as_bytes())?;
        }
    }
    print!("{csv}");
    if opts.grid.unwrap_or(false) {
        let p = path_settings[0];
        let mut grid = format!("mechanisms,use_paths,hops,path_len,{METRIC_COLUMNS}\n");
        for m in &variants {
            for hops in 1..=3 {
                for path_len in 1..=3 {
                    let mut cell = Cell {
                        mechanisms: m.clone(),
                        use_paths: p,
                        hops,
                        path_len,
                        runs: Vec::new(),
                    };
                    run_cell(&graph, &base, &seeds, None, &mut cell, &mut cache)?;
                    grid.push_str(&cell_row(&cell, true));
                    grid.push('\n');
                    write_file(&out.join("grid.csv"), grid.as_bytes())?;
                }
            }
        }
        print!("{grid}");
    }
    Ok(())
}
