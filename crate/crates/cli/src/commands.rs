use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use simplem::data::{
    detect_task_kind, f1, load_ground_truth, load_labeling_matrix, load_probabilities, majority_vote, write_ground_truth,
    write_labeling_matrix, write_probabilities, LabelingMatrix, ProbAssignment, TaskKind,
};
use simplem::dupfree::{detect_dupfree, dupfree_test, DetectConfig, Direction, DupFreeInput, DupFreeReport};
use simplem::harness::{gen_synth, DuplicateSpec, LfSpec, SynthSpec};
use simplem::lfdeps::{infer_dependency_graph, write_dependency_report, DepConfig};
use simplem::simple::{dawid_skene, simple_em_infer_traced, simple_infer_traced, EmConfig, EmOutcome, TransitivityMode};
use simplem::trans_ml::{gen_dataset, read_dataset, write_dataset, NetDims, TrainConfig, TrainGenConfig, TransitivityNet};

use crate::config::{ConfigFile, List};
use crate::{CliError, DiagArgs, EvalArgs, InferArgs, SynthArgs, TransDataArgs, TransTrainArgs};

const DS_MAX_ITERATIONS: usize = 100;
const DS_TOLERANCE: f64 = 1e-6;

fn existing_input(path: PathBuf) -> Result<PathBuf, CliError> {
    if !path.is_file() {
        return Err(CliError::usage(format!("input file {} does not exist", path.display())));
    }
    Ok(path)
}

fn writable_output(path: PathBuf) -> Result<PathBuf, CliError> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(CliError::usage(format!(
            "output directory {} does not exist",
            parent.display()
        )));
    }
    if path.is_dir() {
        return Err(CliError::usage(format!("output {} is a directory", path.display())));
    }
    Ok(path)
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::usage(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", path.display())))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush()
        .map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
}

fn read_matrix(path: &Path) -> Result<LabelingMatrix, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let kind = detect_task_kind(&bytes).map_err(|e| in_file(path, e))?;
    load_labeling_matrix(bytes.as_slice(), kind).map_err(|e| in_file(path, e))
}

fn read_probs(path: &Path) -> Result<ProbAssignment, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let kind = detect_task_kind(&bytes).map_err(|e| in_file(path, e))?;
    load_probabilities(bytes.as_slice(), kind).map_err(|e| in_file(path, e))
}

fn in_file(path: &Path, e: simplem::Error) -> CliError {
    let mut err = CliError::from(e);
    err.message = format!("{}: {}", path.display(), err.message);
    err
}

/// Probabilities from `probs` reordered to the matrix's pairs.
fn aligned_probs(x: &LabelingMatrix, probs: &ProbAssignment) -> Result<ProbAssignment, CliError> {
    let mut out = Vec::with_capacity(x.n_pairs());
    for pair in x.pairs() {
        let p = probs.get(pair).ok_or_else(|| {
            CliError::usage(format!("probability file lacks pair ({}, {})", pair.a.id, pair.b.id))
        })?;
        out.push(p);
    }
    Ok(ProbAssignment::new(x.pair_set().clone(), out)?)
}

fn parse_transitivity(s: &str) -> Result<TransitivityMode, CliError> {
    Ok(match s {
        "none" => TransitivityMode::None,
        "left" => TransitivityMode::ExactOneSideLeft,
        "right" => TransitivityMode::ExactOneSideRight,
        "two-side" => TransitivityMode::ExactTwoSide,
        "learned" => TransitivityMode::LearnedSingleTable,
        "auto" => TransitivityMode::Auto,
        other => {
            return Err(CliError::usage(format!(
                "unknown transitivity `{other}`; expected none, left, right, two-side, learned or auto"
            )))
        }
    })
}

fn mode_name(m: TransitivityMode) -> &'static str {
    match m {
        TransitivityMode::None => "none",
        TransitivityMode::ExactOneSideLeft => "left",
        TransitivityMode::ExactOneSideRight => "right",
        TransitivityMode::ExactTwoSide => "two-side",
        TransitivityMode::LearnedSingleTable => "learned",
        TransitivityMode::Auto => "auto",
    }
}

fn em_config(cfg: &ConfigFile, a: &InferArgs, seed: u64) -> Result<EmConfig, CliError> {
    let d = EmConfig::default();
    let mut em = EmConfig {
        max_iterations: cfg.or(a.max_iterations, "max_iterations", d.max_iterations)?,
        convergence_flip_fraction: cfg.or(
            a.convergence_flip_fraction,
            "convergence_flip_fraction",
            d.convergence_flip_fraction,
        )?,
        prob_clamp_epsilon: cfg.or(a.prob_clamp_epsilon, "prob_clamp_epsilon", d.prob_clamp_epsilon)?,
        seed,
        cv_folds: cfg.or(a.cv_folds, "cv_folds", d.cv_folds)?,
        smote_neighbors: cfg.or(a.smote_neighbors, "smote_neighbors", d.smote_neighbors)?,
        ..d
    };
    em.forest.n_trees = cfg.or(a.n_trees, "n_trees", em.forest.n_trees)?;
    em.dupfree = detect_config(cfg, a.dupfree_c, a.sim_repeats, seed)?;
    em.validate()?;
    Ok(em)
}

fn detect_config(cfg: &ConfigFile, c: Option<f64>, repeats: Option<usize>, seed: u64) -> Result<DetectConfig, CliError> {
    let d = DetectConfig::default();
    Ok(DetectConfig {
        c: cfg.or(c, "dupfree_c", d.c)?,
        sim_repeats: cfg.or(repeats, "sim_repeats", d.sim_repeats)?,
        seed,
    })
}

fn log_iterations(out: &EmOutcome) {
    for r in &out.iterations {
        log::info!(
            "iteration {} flip_fraction {:.6} d_max {} ccp_alpha {} smote_added {}",
            r.iteration,
            r.flip_fraction,
            r.d_max,
            r.ccp_alpha,
            r.smote_added
        );
    }
    if out.converged {
        log::info!("converged after {} iterations", out.iterations.len());
    } else {
        log::warn!("stopped at the iteration cap without converging");
    }
}

#[derive(Serialize)]
struct DupFreeSidecar {
    seed: u64,
    /// `detection`, `hints` or `none` when there were no predicted matches.
    source: &'static str,
    resolved_transitivity: &'static str,
    left: Option<DupFreeReport>,
    right: Option<DupFreeReport>,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    writeln!(w).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    finish(w, path)
}

pub fn infer(cfg: &ConfigFile, a: InferArgs) -> Result<(), CliError> {
    let input = existing_input(cfg.required(a.input.clone(), "input")?)?;
    let output = writable_output(cfg.required(a.output.clone(), "output")?)?;
    let mode = cfg.or(a.mode.clone(), "mode", "simple".to_owned())?;
    let seed = cfg.or(a.seed, "seed", 0)?;
    let model = cfg.pick(a.model.clone(), "model")?.map(existing_input).transpose()?;
    let transitivity = match mode.as_str() {
        "simple-em" => Some(parse_transitivity(&cfg.or(a.transitivity.clone(), "transitivity", "auto".to_owned())?)?),
        "simple" | "mv" | "ds" => {
            if cfg.pick(a.transitivity.clone(), "transitivity")?.is_some() {
                return Err(CliError::usage("--transitivity needs --mode simple-em"));
            }
            None
        }
        other => {
            return Err(CliError::usage(format!(
                "unknown mode `{other}`; expected simple, simple-em, mv or ds"
            )))
        }
    };
    let hints = match cfg.pick(a.dupfree_hints.clone(), "dupfree_hints")? {
        None => None,
        Some(List(v)) if v.len() == 2 => Some((v[0], v[1])),
        Some(_) => return Err(CliError::usage("--dupfree-hints takes exactly two booleans")),
    };
    let report_path = match transitivity {
        Some(TransitivityMode::Auto) => {
            let p = cfg.pick(a.report.clone(), "report")?.unwrap_or_else(|| {
                let mut s = output.clone().into_os_string();
                s.push(".dupfree.json");
                PathBuf::from(s)
            });
            Some(writable_output(p)?)
        }
        _ => None,
    };
    let em = em_config(cfg, &a, seed)?;
    let net = match &model {
        Some(p) => Some(TransitivityNet::load(open(p)?).map_err(|e| in_file(p, e))?),
        None => None,
    };

    let x = read_matrix(&input)?;
    log::info!("{}: {} pairs, {} labeling functions", input.display(), x.n_pairs(), x.n_lfs());
    let mut comments = vec![format!("seed={seed}"), format!("mode={mode}")];
    let gamma = match (mode.as_str(), transitivity) {
        ("mv", _) => majority_vote(&x),
        ("ds", _) => dawid_skene(&x, DS_MAX_ITERATIONS, DS_TOLERANCE),
        (_, None) => {
            let out = simple_infer_traced(&x, &em)?;
            log_iterations(&out);
            out.gamma
        }
        (_, Some(t)) => {
            let em = EmConfig {
                transitivity_mode: t,
                ..em
            };
            let out = simple_em_infer_traced(&x, &em, hints, net.as_ref())?;
            log_iterations(&out);
            comments.push(format!(
                "transitivity={} resolved={}",
                mode_name(t),
                mode_name(out.resolved_mode)
            ));
            if let Some(path) = &report_path {
                if x.task_kind() == TaskKind::TwoTable {
                    let source = match (&out.dupfree, hints) {
                        (Some(_), _) => "detection",
                        (None, Some(_)) => "hints",
                        (None, None) => "none",
                    };
                    let (left, right) = out.dupfree.clone().map_or((None, None), |(l, r)| (Some(l), Some(r)));
                    write_json(
                        &DupFreeSidecar {
                            seed,
                            source,
                            resolved_transitivity: mode_name(out.resolved_mode),
                            left,
                            right,
                        },
                        path,
                    )?;
                }
            }
            out.gamma
        }
    };
    let mut w = create(&output)?;
    write_probabilities(&gamma, &comments, &mut w)?;
    finish(w, &output)
}

pub fn trans_data(cfg: &ConfigFile, a: TransDataArgs) -> Result<(), CliError> {
    let output = writable_output(cfg.required(a.output.clone(), "output")?)?;
    let count: usize = cfg.required(a.count, "count")?;
    if count == 0 {
        return Err(CliError::usage("--count must be at least 1"));
    }
    let d = TrainGenConfig::default();
    let gen = TrainGenConfig {
        alpha: cfg.or(a.alpha, "alpha", d.alpha)?,
        steps: cfg.or(a.steps, "steps", d.steps)?,
        matrix_count: count,
        cluster_fraction: cfg.or(a.cluster_fraction, "cluster_fraction", d.cluster_fraction)?,
        padded_fraction: cfg.or(a.padded_fraction, "padded_fraction", d.padded_fraction)?,
        max_clusters: cfg.or(a.max_clusters, "max_clusters", d.max_clusters)?,
        seed: cfg.or(a.seed, "seed", 0)?,
        ..d
    };
    log::info!("generating {count} training pairs with seed {}", gen.seed);
    let reports = gen_dataset(&gen)?;
    let worst = reports.iter().map(|r| r.transitivity_target).fold(0.0, f64::max);
    log::info!("largest transitivity violation among targets {worst:.3e}");
    let pairs: Vec<_> = reports.into_iter().map(|r| r.pair).collect();
    let mut w = create(&output)?;
    write_dataset(&pairs, &mut w)?;
    finish(w, &output)
}

pub fn trans_train(cfg: &ConfigFile, a: TransTrainArgs) -> Result<(), CliError> {
    let data_path = existing_input(cfg.required(a.data.clone(), "data")?)?;
    let output = writable_output(cfg.required(a.output.clone(), "output")?)?;
    let d = TrainConfig::default();
    let dims = NetDims {
        encoder: cfg.pick(a.encoder.clone(), "encoder")?.map_or(d.dims.encoder.clone(), |l| l.0),
        head: cfg.pick(a.head.clone(), "head")?.map_or(d.dims.head.clone(), |l| l.0),
    };
    if dims.encoder.is_empty() || dims.encoder.contains(&0) || dims.head.contains(&0) {
        return Err(CliError::usage("layer widths must be positive and the encoder non-empty"));
    }
    let tc = TrainConfig {
        dims,
        epochs: cfg.or(a.epochs, "epochs", d.epochs)?,
        lr: cfg.or(a.lr, "lr", d.lr)?,
        batch_matrices: cfg.or(a.batch_matrices, "batch_matrices", d.batch_matrices)?,
        cells_per_matrix: cfg.or(a.cells_per_matrix, "cells_per_matrix", d.cells_per_matrix)?,
        seed: cfg.or(a.seed, "seed", 0)?,
    };
    let data = read_dataset(open(&data_path)?).map_err(|e| in_file(&data_path, e))?;
    if data.is_empty() {
        return Err(CliError::usage(format!("dataset {} is empty", data_path.display())));
    }
    log::info!("training on {} pairs for {} epochs, seed {}", data.len(), tc.epochs, tc.seed);
    let (net, report) = simplem::trans_ml::train_net(&data, &tc)?;
    for (e, l) in report.epoch_losses.iter().enumerate() {
        log::info!("epoch {} loss {l:.6}", e + 1);
    }
    if !net.is_finite() {
        return Err(CliError {
            code: 3,
            message: "training diverged to non-finite weights".into(),
        });
    }
    let mut w = create(&output)?;
    net.save(&mut w)?;
    finish(w, &output)
}

#[derive(Serialize)]
struct DupFreeDiag {
    seed: u64,
    left: DupFreeReport,
    right: DupFreeReport,
}

/// `left_id,right_id[,..]` rows; a `prob` column, when present, keeps rows
/// above 0.5.
fn read_matches(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes).map_err(|_| CliError::usage(format!("{} is not UTF-8", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    if header.len() < 2 || header[0] != "left_id" || header[1] != "right_id" {
        return Err(CliError::usage(format!("{}: header must start with left_id,right_id", path.display())));
    }
    let prob_col = header.iter().position(|&h| h == "prob");
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != header.len() || f[0].is_empty() || f[1].is_empty() {
            return Err(CliError::usage(format!("{}: malformed row {}", path.display(), n + 2)));
        }
        if let Some(c) = prob_col {
            let p: f64 = f[c]
                .parse()
                .map_err(|_| CliError::usage(format!("{}: bad probability on row {}", path.display(), n + 2)))?;
            if p <= 0.5 {
                continue;
            }
        }
        if seen.insert((f[0], f[1])) {
            out.push((f[0].to_owned(), f[1].to_owned()));
        }
    }
    Ok(out)
}

pub fn diag(cfg: &ConfigFile, a: DiagArgs) -> Result<(), CliError> {
    let what: String = cfg.required(a.what.clone(), "what")?;
    let seed = cfg.or(a.seed, "seed", 0)?;
    let output = cfg.pick(a.output.clone(), "output")?.map(writable_output).transpose()?;
    let input = cfg.pick(a.input.clone(), "input")?.map(existing_input).transpose()?;
    let probs = cfg.pick(a.probs.clone(), "probs")?.map(existing_input).transpose()?;
    let mut sink: Box<dyn Write> = match &output {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let io_err = |e: std::io::Error| CliError::usage(format!("cannot write report: {e}"));
    match what.as_str() {
        "dupfree" => {
            let det = detect_config(cfg, a.dupfree_c, a.sim_repeats, seed)?;
            let reports = if let Some(m) = cfg.pick(a.matches.clone(), "matches")? {
                let m = existing_input(m)?;
                let n_left: usize = cfg.required(a.n_left, "n_left")?;
                let n_right: usize = cfg.required(a.n_right, "n_right")?;
                let matches = read_matches(&m)?;
                let run = |direction, n_opposite| {
                    dupfree_test(&DupFreeInput {
                        matches: matches.clone(),
                        direction,
                        n_opposite,
                        c: det.c,
                        sim_repeats: det.sim_repeats,
                        seed: det.seed,
                    })
                };
                (run(Direction::TestLeft, n_right)?, run(Direction::TestRight, n_left)?)
            } else {
                let gamma = match (&probs, &input) {
                    (Some(p), _) => read_probs(p)?,
                    (None, Some(i)) => {
                        let x = read_matrix(i)?;
                        let em = EmConfig {
                            seed,
                            ..EmConfig::default()
                        };
                        simple_infer_traced(&x, &em)?.gamma
                    }
                    (None, None) => return Err(CliError::usage("dupfree needs --matches, --probs or --input")),
                };
                detect_dupfree(&gamma, &det)?.ok_or_else(|| CliError::usage("no predicted matches to test"))?
            };
            let body = serde_json::to_string_pretty(&DupFreeDiag {
                seed,
                left: reports.0,
                right: reports.1,
            })
            .map_err(|e| CliError::usage(e.to_string()))?;
            writeln!(sink, "{body}").map_err(io_err)?;
        }
        "lfdeps" => {
            let input = input.ok_or_else(|| CliError::usage("lfdeps needs --input"))?;
            let x = read_matrix(&input)?;
            let gamma = match &probs {
                Some(p) => aligned_probs(&x, &read_probs(p)?)?,
                None => {
                    let em = EmConfig {
                        seed,
                        ..EmConfig::default()
                    };
                    simple_infer_traced(&x, &em)?.gamma
                }
            };
            let d = DepConfig::default();
            let dep = DepConfig {
                c: cfg.or(a.lfdeps_c, "lfdeps_c", d.c)?,
                max_rounds: cfg.or(a.max_rounds, "max_rounds", d.max_rounds)?,
                pair_mask: None,
            };
            let graph = infer_dependency_graph(&x, &gamma, &dep)?;
            log::info!(
                "{} tests, {} edges, {} removed for chordality, {} rounds",
                graph.tests.len(),
                graph.edges.len(),
                graph.removed.len(),
                graph.rounds
            );
            writeln!(sink, "# seed={seed}").map_err(io_err)?;
            write_dependency_report(&graph, &mut sink)?;
        }
        other => return Err(CliError::usage(format!("unknown --what `{other}`; expected dupfree or lfdeps"))),
    }
    sink.flush().map_err(io_err)
}

pub fn eval(cfg: &ConfigFile, a: EvalArgs) -> Result<(), CliError> {
    let pred = existing_input(cfg.required(a.pred.clone(), "pred")?)?;
    let truth = existing_input(cfg.required(a.truth.clone(), "truth")?)?;
    let partial = cfg.or(a.partial.then_some(true), "partial", false)?;
    let gamma = read_probs(&pred)?;
    let gt = load_ground_truth(open(&truth)?, gamma.pair_set().kind(), partial).map_err(|e| in_file(&truth, e))?;
    let s = f1(&gamma, &gt)?;
    println!("precision={:.6}", s.precision);
    println!("recall={:.6}", s.recall);
    println!("f1={:.6}", s.f1);
    println!("evaluated={}", s.evaluated);
    Ok(())
}

fn parse_duplicates(s: &str) -> Result<Vec<DuplicateSpec>, CliError> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|item| {
            let f: Vec<&str> = item.trim().split(':').collect();
            let bad = || CliError::usage(format!("bad duplicate `{item}`; expected TARGET:SOURCE:FLIP"));
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(DuplicateSpec {
                target: f[0].parse().map_err(|_| bad())?,
                source: f[1].parse().map_err(|_| bad())?,
                flip: f[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn synth(cfg: &ConfigFile, a: SynthArgs) -> Result<(), CliError> {
    let output = writable_output(cfg.required(a.output.clone(), "output")?)?;
    let truth_output = writable_output(cfg.required(a.truth_output.clone(), "truth_output")?)?;
    let task_kind = match cfg.or(a.task.clone(), "task", "two-table".to_owned())?.as_str() {
        "two-table" => TaskKind::TwoTable,
        "single-table" => TaskKind::SingleTable,
        other => return Err(CliError::usage(format!("unknown task `{other}`"))),
    };
    let default_sizes = match task_kind {
        TaskKind::TwoTable => vec![1.0],
        TaskKind::SingleTable => vec![0.0, 1.0],
    };
    let accuracies = cfg
        .pick(a.lf_accuracies.clone(), "lf_accuracies")?
        .map_or(vec![0.9, 0.85, 0.8, 0.7, 0.6, 0.6], |l| l.0);
    let abstain = cfg.or(a.abstain, "abstain", 0.3)?;
    let seed = cfg.or(a.seed, "seed", 0)?;
    let spec = SynthSpec {
        task_kind,
        n_pairs: cfg.or(a.n_pairs, "n_pairs", 2000)?,
        positive_rate: cfg.or(a.positive_rate, "positive_rate", 0.1)?,
        cluster_sizes: cfg.pick(a.cluster_sizes.clone(), "cluster_sizes")?.map_or(default_sizes, |l| l.0),
        unmatched_tuples: None,
        lfs: accuracies.iter().map(|&accuracy| LfSpec { accuracy, abstain }).collect(),
        duplicates: parse_duplicates(&cfg.or(a.duplicates.clone(), "duplicates", String::new())?)?,
        seed,
    };
    let (x, gt) = gen_synth(&spec)?;
    log::info!("generated {} pairs, {} matches", x.n_pairs(), gt.labels().values().filter(|l| l.is_match()).count());
    let mut w = create(&output)?;
    writeln!(w, "# seed={seed}").map_err(|e| CliError::usage(e.to_string()))?;
    write_labeling_matrix(&x, &mut w)?;
    finish(w, &output)?;
    let mut w = create(&truth_output)?;
    writeln!(w, "# seed={seed}").map_err(|e| CliError::usage(e.to_string()))?;
    write_ground_truth(&gt, x.pair_set(), &mut w)?;
    finish(w, &truth_output)
}
