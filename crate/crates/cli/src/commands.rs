//! Implementations of the CLI subcommands. Every command writes
//! deterministic artifacts that embed the config hash and run seed.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use fsl_core::data::{induce_imbalance, load_manifest, write_manifest_commented, ClassPool};
use fsl_core::harness::{
    diff_to_balanced, evaluate, learner_label, reports_from_csv, reports_to_csv, reports_to_jsonl,
    run_cell_full, MatrixSpec, RunReport,
};
use fsl_core::imbalance::ImbalanceSpec;
use fsl_core::learners::LearnerState;
use fsl_core::stats::{markdown_table, ordering_check, plot_data_csv, summarize, DEFAULT_DATASET_DROP_TOLERANCE};
use fsl_core::{Error, Result};
use rayon::prelude::*;

use crate::config::Experiment;

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)?;
    Ok(())
}

fn provenance(hash: &str, seed: u64) -> Vec<String> {
    vec![format!("config={hash}"), format!("seed={seed}")]
}

fn save_pool(pool: &ClassPool<f64>, path: &Path, hash: &str, seed: u64) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_manifest_commented(pool, &mut w, &provenance(hash, seed))
}

/// Generate the configured pool and its class-disjoint splits as manifests.
pub fn cmd_gen(exp: &Experiment, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let pool = exp.pool()?;
    let (train, val, test) = exp.pools()?;
    save_pool(&pool, &out.join("pool.manifest"), &exp.config_hash, exp.file.seed)?;
    save_pool(&train, &out.join("train.manifest"), &exp.config_hash, exp.file.seed)?;
    save_pool(&val, &out.join("val.manifest"), &exp.config_hash, exp.file.seed)?;
    save_pool(&test, &out.join("test.manifest"), &exp.config_hash, exp.file.seed)?;
    println!(
        "wrote pool ({} classes, {} samples) and splits to {}",
        pool.n_classes(),
        pool.n_samples(),
        out.display()
    );
    Ok(())
}

/// Induce an imbalance profile onto a manifest.
pub fn cmd_induce(manifest: &Path, spec_text: &str, seed: u64, out: &Path) -> Result<()> {
    let pool: ClassPool<f64> = load_manifest(manifest)?;
    let spec: ImbalanceSpec = spec_text.parse()?;
    let induced = induce_imbalance(&pool, &spec, seed)?;
    write_induced(&induced, out, &[format!("spec={spec}"), format!("seed={seed}")])?;
    println!("induced {spec} -> {} ({} samples)", out.display(), induced.n_samples());
    Ok(())
}

/// Group-targeted step imbalance: the named group's classes drop to k_min.
pub fn cmd_induce_group(manifest: &Path, group: &str, k_min: usize, k_max: usize, out: &Path) -> Result<()> {
    let pool: ClassPool<f64> = load_manifest(manifest)?;
    let induced = fsl_core::data::induce_group_step(&pool, group, k_min, k_max)?;
    write_induced(&induced, out, &[format!("group={group} k_min={k_min} k_max={k_max}")])?;
    println!(
        "stepped group {group:?} to {k_min} -> {} ({} samples)",
        out.display(),
        induced.n_samples()
    );
    Ok(())
}

fn write_induced(pool: &ClassPool<f64>, out: &Path, comments: &[String]) -> Result<()> {
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    let mut w = BufWriter::new(fs::File::create(out)?);
    write_manifest_commented(pool, &mut w, comments)
}

fn matrix_parts<'a>(
    exp: &'a Experiment,
    pools: &'a (ClassPool<f64>, ClassPool<f64>, ClassPool<f64>),
) -> Result<(
    Vec<fsl_core::learners::LearnerConfig>,
    Vec<fsl_core::harness::Condition>,
    fsl_core::episodes::TaskSpec,
    fsl_core::harness::TrainConfig,
)> {
    let dim = pools.0.dim();
    Ok((exp.learners(dim)?, exp.conditions()?, exp.eval_task(), exp.train_config()))
}

/// Train one learner under one condition for every configured seed; writes a
/// checkpoint per seed plus a report CSV/JSONL.
pub fn cmd_train(exp: &Experiment, learner_name: &str, condition_name: &str, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let pools = exp.pools()?;
    let (learners, conditions, eval_task, train_cfg) = matrix_parts(exp, &pools)?;
    let learner = learners
        .iter()
        .find(|l| learner_label(l) == learner_name || l.kind.name() == learner_name)
        .ok_or_else(|| Error::InvalidInput(format!("learner {learner_name:?} not in config")))?;
    let condition = conditions
        .iter()
        .find(|c| c.name == condition_name)
        .ok_or_else(|| Error::InvalidInput(format!("condition {condition_name:?} not in config")))?;
    let m = MatrixSpec {
        learners: std::slice::from_ref(learner),
        conditions: std::slice::from_ref(condition),
        seeds: &exp.file.train.seeds,
        base_train: &pools.0,
        val: &pools.1,
        test: &pools.2,
        eval_task: &eval_task,
        train: &train_cfg,
    };
    let mut reports = Vec::new();
    for &seed in &exp.file.train.seeds {
        let (report, state) = run_cell_full(&m, learner, condition, seed)?;
        let name = format!("{}_{}_s{}.ckpt", report.learner, condition.name, seed);
        let mut w = BufWriter::new(fs::File::create(out.join(&name))?);
        let provenance = [
            ("config".to_string(), exp.config_hash.clone()),
            ("run_seed".to_string(), exp.file.seed.to_string()),
        ];
        state.save_checkpoint_with(&mut w, &provenance)?;
        println!(
            "seed {seed}: acc {:.4} ±{:.4} -> {}",
            report.mean_acc, report.ci95, name
        );
        reports.push(report);
    }
    write_reports(&reports, exp, out, "train_reports")?;
    Ok(())
}

/// Evaluate a checkpoint on the configured test split.
pub fn cmd_eval(exp: &Experiment, checkpoint: &Path, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let mut r = std::io::BufReader::new(fs::File::open(checkpoint)?);
    let state = LearnerState::<f64>::load_checkpoint(&mut r)?;
    let (_, _, test) = exp.pools()?;
    let eval_task = exp.eval_task();
    let seed = fsl_core::episodes::derive_seed(exp.file.seed, 0xE7A1);
    let mut report = evaluate(&state, &test, &eval_task, exp.file.train.eval_tasks, seed)?;
    report.learner = learner_label(&state.config);
    report.condition = "eval".into();
    report.seed = exp.file.seed;
    println!("accuracy {:.4} ±{:.4} over {} episodes", report.mean_acc, report.ci95, report.episode_acc.len());
    write_reports(std::slice::from_ref(&report), exp, out, "eval_reports")?;
    Ok(())
}

/// Run the full learner x condition x seed matrix and emit results, summary
/// and plot data.
pub fn cmd_matrix(exp: &Experiment, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let pools = exp.pools()?;
    let (learners, conditions, eval_task, train_cfg) = matrix_parts(exp, &pools)?;
    let m = MatrixSpec {
        learners: &learners,
        conditions: &conditions,
        seeds: &exp.file.train.seeds,
        base_train: &pools.0,
        val: &pools.1,
        test: &pools.2,
        eval_task: &eval_task,
        train: &train_cfg,
    };
    let cells: Vec<(usize, usize, u64)> = learners
        .iter()
        .enumerate()
        .flat_map(|(li, _)| {
            conditions
                .iter()
                .enumerate()
                .flat_map(move |(ci, _)| exp.file.train.seeds.iter().map(move |&s| (li, ci, s)))
        })
        .collect();
    let results: Vec<Result<RunReport>> = cells
        .par_iter()
        .map(|&(li, ci, seed)| {
            run_cell_full(&m, &learners[li], &conditions[ci], seed)
                .map(|(r, _)| r)
                .map_err(|e| {
                    Error::Numeric(format!(
                        "cell (learner={}, condition={}, seed={seed}) failed: {e}",
                        learner_label(&learners[li]),
                        conditions[ci].name
                    ))
                })
        })
        .collect();
    let reports: Vec<RunReport> = results.into_iter().collect::<Result<_>>()?;

    write_reports(&reports, exp, out, "results")?;
    write_summary(&reports, exp, out)?;
    for r in &reports {
        println!("{} {} seed={} acc={:.4} ±{:.4}", r.learner, r.condition, r.seed, r.mean_acc, r.ci95);
    }
    print_diffs(&reports)?;
    Ok(())
}

/// Summarize an existing results directory.
pub fn cmd_report(results_dir: &Path, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let csv_path = results_dir.join("results.csv");
    let text = fs::read_to_string(&csv_path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", csv_path.display())))?;
    let reports = reports_from_csv(&text)?;
    if reports.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no data rows", csv_path.display())));
    }
    // Provenance comes from the results file itself.
    let header = text.lines().next().unwrap_or_default();
    let (hash, seed) = parse_provenance(header);

    let summaries = summarize(&reports)?;
    let mut md = markdown_table(&summaries);
    md.push_str(&format!("\n_config {hash}, seed {seed}_\n"));
    fs::write(out.join("summary.md"), &md)?;
    let plot = format!("# config={hash} seed={seed}\n{}", plot_data_csv(&summaries));
    fs::write(out.join("plot_data.csv"), plot)?;
    print!("{md}");
    print_diffs(&reports)?;
    Ok(())
}

fn parse_provenance(header: &str) -> (String, String) {
    let mut hash = "unknown".to_string();
    let mut seed = "unknown".to_string();
    for tok in header.trim_start_matches('#').split_whitespace() {
        if let Some(v) = tok.strip_prefix("config=") {
            hash = v.to_string();
        }
        if let Some(v) = tok.strip_prefix("seed=") {
            seed = v.to_string();
        }
    }
    (hash, seed)
}

fn write_reports(reports: &[RunReport], exp: &Experiment, out: &Path, stem: &str) -> Result<()> {
    let csv = reports_to_csv(reports, &exp.config_hash, exp.file.seed);
    fs::write(out.join(format!("{stem}.csv")), csv)?;
    let jsonl = reports_to_jsonl(reports, &exp.config_hash, exp.file.seed);
    fs::write(out.join(format!("{stem}.jsonl")), jsonl)?;
    Ok(())
}

fn write_summary(reports: &[RunReport], exp: &Experiment, out: &Path) -> Result<()> {
    let summaries = summarize(reports)?;
    let mut md = markdown_table(&summaries);
    md.push_str(&format!("\n_config {}, seed {}_\n", exp.config_hash, exp.file.seed));
    fs::write(out.join("summary.md"), md)?;
    let plot = format!(
        "# config={} seed={}\n{}",
        exp.config_hash,
        exp.file.seed,
        plot_data_csv(&summaries)
    );
    fs::write(out.join("plot_data.csv"), plot)?;
    Ok(())
}

fn print_diffs(reports: &[RunReport]) -> Result<()> {
    match diff_to_balanced(reports) {
        Ok(diffs) => {
            for (c, d) in &diffs {
                println!("diff to balanced [{c}]: {d:+.2} points");
            }
        }
        Err(_) => return Ok(()), // no balanced condition present
    }
    if let Ok(summaries) = summarize(reports) {
        if let Ok(v) = ordering_check(&summaries, DEFAULT_DATASET_DROP_TOLERANCE) {
            println!(
                "ordering: task_exceeds_dataset={} dataset_within_{}pt={} combined_compounds={:?} holds={}",
                v.task_exceeds_dataset,
                DEFAULT_DATASET_DROP_TOLERANCE,
                v.dataset_within_threshold,
                v.combined_compounds,
                v.holds
            );
        }
    }
    Ok(())
}
