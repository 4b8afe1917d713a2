//! Training/evaluation harness: meta-training with validation-based model
//! selection, episodic evaluation, and the imbalance-condition matrix.
//!
//! Seeding layout: every cell of a matrix derives its streams from the run
//! seed and the *content* of the learner and condition (not their position or
//! display name), so two conditions with identical specs produce identical
//! results regardless of labeling, and any cell can be reproduced in
//! isolation. Evaluation streams do not depend on the condition, so
//! conditions are compared on the same test episodes.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::{induce_imbalance, ClassPool};
use crate::episodes::{derive_seed, sample_episode, sample_minibatch, Episode, ShotSpec, TaskSpec};
use crate::error::{Error, Result};
use crate::imbalance::ImbalanceSpec;
use crate::learners::{simpleshot, LearnerConfig, LearnerKind, LearnerState};
use crate::optim::Optimizer;
use crate::scalar::Scalar;

/// Reserved condition names understood by the reporting layer.
pub const COND_BALANCED: &str = "balanced";
pub const COND_DATASET: &str = "dataset_imbalance";
pub const COND_TASK: &str = "task_imbalance";
pub const COND_COMBINED: &str = "combined";

/// Stream tags for seed derivation.
const STREAM_TRAIN: u64 = 1;
const STREAM_VAL: u64 = 2;
const STREAM_EVAL: u64 = 3;
const STREAM_INIT: u64 = 4;
const STREAM_INDUCE: u64 = 5;
const STREAM_PREDICT: u64 = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Tasks (or mini-batches, for pretraining kinds) consumed in total.
    pub total_tasks: u64,
    /// Validate every this many consumed tasks.
    pub val_every: u64,
    /// Episodes per validation round.
    pub val_tasks: usize,
    /// `(threshold, lr)` pairs: the learning rate applies while
    /// `task_index < threshold`; thresholds strictly increasing.
    pub lr_schedule: Vec<(u64, f64)>,
    /// Overrides the learner's own meta-batch when set.
    pub meta_batch: Option<usize>,
    /// Episodes per test evaluation.
    pub eval_tasks: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_tasks == 0 || self.val_every == 0 || self.total_tasks < self.val_every {
            return Err(Error::InvalidInput(format!(
                "train config requires total_tasks >= val_every >= 1, got {}/{}",
                self.total_tasks, self.val_every
            )));
        }
        if self.val_tasks == 0 || self.eval_tasks == 0 {
            return Err(Error::InvalidInput("val_tasks and eval_tasks must be >= 1".into()));
        }
        if self.lr_schedule.is_empty() {
            return Err(Error::InvalidInput("lr schedule must not be empty".into()));
        }
        if !self.lr_schedule.windows(2).all(|w| w[0].0 < w[1].0) {
            return Err(Error::InvalidInput("lr schedule thresholds must strictly increase".into()));
        }
        Ok(())
    }

    /// Learning rate for a 0-based task index; indexes past the last
    /// threshold keep the final rate.
    pub fn lr_at(&self, task_index: u64) -> f64 {
        for &(threshold, lr) in &self.lr_schedule {
            if task_index < threshold {
                return lr;
            }
        }
        self.lr_schedule.last().expect("validated non-empty").1
    }
}

/// One experimental condition: how the training dataset is imbalanced and
/// how training-episode support sets are sized. Evaluation tasks are always
/// the balanced evaluation task.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: String,
    pub dataset_spec: ImbalanceSpec,
    pub shot: ShotSpec,
}

/// Per-run accuracy report.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub learner: String,
    pub condition: String,
    pub seed: u64,
    pub episode_acc: Vec<f64>,
    pub mean_acc: f64,
    /// Population standard deviation of the per-episode accuracies.
    pub std: f64,
    /// 95% half-width, `1.96 * std / sqrt(n)`.
    pub ci95: f64,
}

impl RunReport {
    pub fn from_accuracies(learner: String, condition: String, seed: u64, episode_acc: Vec<f64>) -> Result<Self> {
        if episode_acc.is_empty() {
            return Err(Error::InvalidInput("report needs at least one episode".into()));
        }
        let (mean, std) = mean_and_population_std(&episode_acc);
        let ci95 = 1.96 * std / (episode_acc.len() as f64).sqrt();
        Ok(RunReport { learner, condition, seed, episode_acc, mean_acc: mean, std, ci95 })
    }
}

pub fn mean_and_population_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Anything that can predict an episode's query labels. Learner states
/// implement it; tests use stubs.
pub trait EpisodePredictor<T: Scalar>: Sync {
    fn predict_episode(&self, ep: &Episode<T>, seed: u64) -> Result<Vec<usize>>;
}

impl<T: Scalar> EpisodePredictor<T> for LearnerState<T> {
    fn predict_episode(&self, ep: &Episode<T>, seed: u64) -> Result<Vec<usize>> {
        self.predict(ep, seed)
    }
}

/// Evaluate over `n_episodes` freshly sampled episodes; per-episode seeds
/// derive from `seed`, so the stream is identical no matter how many threads
/// run it. The returned report carries empty learner/condition labels.
pub fn evaluate<T: Scalar, P: EpisodePredictor<T>>(
    predictor: &P,
    pool: &ClassPool<T>,
    task: &TaskSpec,
    n_episodes: usize,
    seed: u64,
) -> Result<RunReport> {
    let accs: Result<Vec<f64>> = (0..n_episodes)
        .into_par_iter()
        .map(|i| {
            let ep_seed = derive_seed(seed, i as u64);
            let ep = sample_episode(pool, task, ep_seed)?;
            let preds = predictor.predict_episode(&ep, derive_seed(ep_seed, STREAM_PREDICT))?;
            let correct = preds.iter().zip(&ep.query_y).filter(|(a, b)| a == b).count();
            Ok(correct as f64 / ep.query_y.len() as f64)
        })
        .collect();
    RunReport::from_accuracies(String::new(), String::new(), seed, accs?)
}

#[derive(Debug, Clone)]
pub struct MetaTrainOutcome<T> {
    pub state: LearnerState<T>,
    /// (consumed tasks, validation accuracy) per validation round.
    pub val_history: Vec<(u64, f64)>,
    pub best_val: f64,
}

/// Meta-train (or pretrain) with periodic validation and best-model
/// selection. Episodic learners consume sampled tasks; pretraining learners
/// consume mini-batches but are still validated episodically on `val_task`.
pub fn meta_train<T: Scalar>(
    mut state: LearnerState<T>,
    train_pool: &ClassPool<T>,
    val_pool: &ClassPool<T>,
    train_task: &TaskSpec,
    val_task: &TaskSpec,
    cfg: &TrainConfig,
    stream_seed: u64,
) -> Result<MetaTrainOutcome<T>> {
    cfg.validate()?;
    let episodic = state.kind().is_episodic();
    let train_stream = derive_seed(stream_seed, STREAM_TRAIN);
    let val_stream = derive_seed(stream_seed, STREAM_VAL);
    let batch = if episodic {
        cfg.meta_batch.unwrap_or(state.config.meta_batch).max(1)
    } else {
        1
    };
    let minibatch_size = state.config.pretrain_batch.min(train_pool.n_samples());

    let mut opt = Optimizer::adam();
    let mut best: Option<(f64, LearnerState<T>)> = None;
    let mut val_history = Vec::new();
    let mut consumed = 0u64;
    let mut next_val = cfg.val_every;

    while consumed < cfg.total_tasks {
        let lr = cfg.lr_at(consumed);
        let loss = if episodic {
            let take = (batch as u64).min(cfg.total_tasks - consumed) as usize;
            let episodes: Vec<Episode<T>> = (0..take)
                .map(|j| sample_episode(train_pool, train_task, derive_seed(train_stream, consumed + j as u64)))
                .collect::<Result<_>>()?;
            let loss = state.accumulate_meta_batch(&episodes)?;
            opt.step(&mut state.params, T::of(lr))?;
            consumed += take as u64;
            loss.as_f64()
        } else {
            let (x, y) = sample_minibatch(train_pool, minibatch_size, derive_seed(train_stream, consumed))?;
            let loss = state.pretrain_accumulate(&x, &y)?;
            opt.step(&mut state.params, T::of(lr))?;
            consumed += 1;
            loss.as_f64()
        };
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite training loss {loss} after {consumed} tasks ({})",
                state.config.kind
            )));
        }

        let due = consumed >= next_val || consumed >= cfg.total_tasks;
        if due {
            while next_val <= consumed {
                next_val += cfg.val_every;
            }
            if state.kind() == LearnerKind::SimpleShot {
                simpleshot::update_feature_mean(&mut state, train_pool)?;
            }
            let round = val_history.len() as u64;
            let report = evaluate(&state, val_pool, val_task, cfg.val_tasks, derive_seed(val_stream, round))?;
            val_history.push((consumed, report.mean_acc));
            if best.as_ref().is_none_or(|(b, _)| report.mean_acc > *b) {
                best = Some((report.mean_acc, state.clone()));
            }
        }
    }

    let (best_val, best_state) = best.expect("at least one validation round ran");
    Ok(MetaTrainOutcome { state: best_state, val_history, best_val })
}

/// Everything needed to run a learner x condition x seed matrix.
pub struct MatrixSpec<'a, T> {
    pub learners: &'a [LearnerConfig],
    pub conditions: &'a [Condition],
    pub seeds: &'a [u64],
    /// Balanced base training pool; per-condition pools are induced from it.
    pub base_train: &'a ClassPool<T>,
    pub val: &'a ClassPool<T>,
    pub test: &'a ClassPool<T>,
    /// The balanced evaluation (and validation) task.
    pub eval_task: &'a TaskSpec,
    pub train: &'a TrainConfig,
}

fn fnv64(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn learner_content_tag(cfg: &LearnerConfig) -> String {
    format!("{}|{:?}|{:?}", cfg.kind, cfg.train_n_way, cfg.train_query)
}

/// Report label for a learner configuration.
pub fn learner_label(cfg: &LearnerConfig) -> String {
    match cfg.train_n_way {
        Some(w) => format!("{}_{w}way", cfg.kind),
        None => cfg.kind.to_string(),
    }
}

/// Train and evaluate one cell of the matrix. Deterministic in
/// (run seed, learner content, condition content, cell seed).
pub fn run_cell<T: Scalar>(
    m: &MatrixSpec<'_, T>,
    learner_cfg: &LearnerConfig,
    cond: &Condition,
    cell_seed: u64,
) -> Result<RunReport> {
    run_cell_full(m, learner_cfg, cond, cell_seed).map(|(report, _)| report)
}

/// Like [`run_cell`] but also returns the selected state (for
/// checkpointing).
pub fn run_cell_full<T: Scalar>(
    m: &MatrixSpec<'_, T>,
    learner_cfg: &LearnerConfig,
    cond: &Condition,
    cell_seed: u64,
) -> Result<(RunReport, LearnerState<T>)> {
    let lh = fnv64(&learner_content_tag(learner_cfg));
    let dh = fnv64(&cond.dataset_spec.to_string());
    let base = m.train.seed;

    let induce_seed = derive_seed(derive_seed(derive_seed(base, STREAM_INDUCE), dh), cell_seed);
    let train_pool = induce_imbalance(m.base_train, &cond.dataset_spec, induce_seed)?;

    let train_task = TaskSpec {
        n_way: learner_cfg.train_n_way.unwrap_or(m.eval_task.n_way),
        shot: cond.shot.clone(),
        query_per_class: learner_cfg.train_query.unwrap_or(m.eval_task.query_per_class),
    };

    // Streams are shared across conditions (common random numbers): the same
    // learner and cell seed see the same initialization, the same training
    // class sequences and the same evaluation episodes under every
    // condition, so condition differences are paired comparisons. Identical
    // condition *content* under two names therefore reproduces identically.
    let stream_seed = derive_seed(derive_seed(base, lh), cell_seed);
    let init_seed = derive_seed(stream_seed, STREAM_INIT);
    let state = LearnerState::new(
        learner_cfg.clone(),
        train_task.n_way,
        train_pool.n_classes(),
        init_seed,
    )?;

    let outcome = meta_train(state, &train_pool, m.val, &train_task, m.eval_task, m.train, stream_seed)?;

    // Evaluation stream is condition-independent: same test episodes across
    // conditions for a given learner and cell seed.
    let eval_seed = derive_seed(derive_seed(derive_seed(base, STREAM_EVAL), lh), cell_seed);
    let mut report = evaluate(&outcome.state, m.test, m.eval_task, m.train.eval_tasks, eval_seed)?;
    report.learner = learner_label(learner_cfg);
    report.condition = cond.name.clone();
    report.seed = cell_seed;
    Ok((report, outcome.state))
}

/// Run the full learner x condition x seed cross product. Cells run in
/// parallel; any failure aborts with the failing cell named.
pub fn run_condition_matrix<T: Scalar>(m: &MatrixSpec<'_, T>) -> Result<Vec<RunReport>> {
    let cells: Vec<(usize, usize, u64)> = m
        .learners
        .iter()
        .enumerate()
        .flat_map(|(li, _)| {
            m.conditions.iter().enumerate().flat_map(move |(ci, _)| {
                m.seeds.iter().map(move |&s| (li, ci, s))
            })
        })
        .collect();

    let results: Vec<Result<RunReport>> = cells
        .par_iter()
        .map(|&(li, ci, seed)| {
            run_cell(m, &m.learners[li], &m.conditions[ci], seed).map_err(|e| {
                Error::Numeric(format!(
                    "cell (learner={}, condition={}, seed={seed}) failed: {e}",
                    learner_label(&m.learners[li]),
                    m.conditions[ci].name
                ))
            })
        })
        .collect();

    results.into_iter().collect()
}

/// Mean accuracy difference to the balanced condition, in accuracy points
/// (x100), averaged over learners and seeds, per condition. Every
/// (learner, seed) must have a balanced partner report.
pub fn diff_to_balanced(reports: &[RunReport]) -> Result<Vec<(String, f64)>> {
    let balanced_of = |learner: &str, seed: u64| -> Result<f64> {
        reports
            .iter()
            .find(|r| r.condition == COND_BALANCED && r.learner == learner && r.seed == seed)
            .map(|r| r.mean_acc)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "no balanced partner for learner {learner} seed {seed}"
                ))
            })
    };
    let mut order: Vec<String> = Vec::new();
    let mut sums: std::collections::BTreeMap<String, (f64, usize)> = Default::default();
    for r in reports {
        let bal = balanced_of(&r.learner, r.seed)?;
        let delta = (r.mean_acc - bal) * 100.0;
        if !sums.contains_key(&r.condition) {
            order.push(r.condition.clone());
        }
        let e = sums.entry(r.condition.clone()).or_insert((0.0, 0));
        e.0 += delta;
        e.1 += 1;
    }
    Ok(order
        .into_iter()
        .map(|c| {
            let (sum, n) = sums[&c];
            (c, sum / n as f64)
        })
        .collect())
}

/// Deterministic CSV rendering of reports (fixed-width float formatting so
/// reruns are byte-identical). The header comment embeds provenance.
pub fn reports_to_csv(reports: &[RunReport], config_hash: &str, seed: u64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# config={config_hash} seed={seed}");
    let _ = writeln!(out, "learner,condition,seed,n_episodes,mean_acc,std,ci95");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.6}",
            r.learner,
            r.condition,
            r.seed,
            r.episode_acc.len(),
            r.mean_acc,
            r.std,
            r.ci95
        );
    }
    out
}

/// JSON-lines log with the per-episode accuracies of every report.
pub fn reports_to_jsonl(reports: &[RunReport], config_hash: &str, seed: u64) -> String {
    let mut out = String::new();
    for r in reports {
        let accs: Vec<String> = r.episode_acc.iter().map(|a| format!("{a}")).collect();
        let _ = writeln!(
            out,
            "{{\"learner\":\"{}\",\"condition\":\"{}\",\"seed\":{},\"config\":\"{config_hash}\",\"run_seed\":{seed},\"episode_acc\":[{}]}}",
            r.learner,
            r.condition,
            r.seed,
            accs.join(",")
        );
    }
    out
}

/// Parse a CSV produced by [`reports_to_csv`] (per-episode accuracies are
/// not recoverable; `episode_acc` is left empty and statistics are taken
/// from the row).
pub fn reports_from_csv(text: &str) -> Result<Vec<RunReport>> {
    let mut reports = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.starts_with("learner,") || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Parse { line: i + 1, message: format!("expected 7 fields, got {}", fields.len()) });
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse { line: i + 1, message: format!("bad float {s:?}") })
        };
        reports.push(RunReport {
            learner: fields[0].to_string(),
            condition: fields[1].to_string(),
            seed: fields[2].parse().map_err(|_| Error::Parse { line: i + 1, message: "bad seed".into() })?,
            episode_acc: Vec::new(),
            mean_acc: parse_f(fields[4])?,
            std: parse_f(fields[5])?,
            ci95: parse_f(fields[6])?,
        });
    }
    Ok(reports)
}
