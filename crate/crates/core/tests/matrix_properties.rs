//! Harness matrix properties: cardinality, content-based determinism across
//! condition labels, and single-cell reproducibility.

use fsl_core::backbone::BackboneConfig;
use fsl_core::data::{gen_synthetic, split_classes, ClassPool, SplitSpec, SyntheticSpec};
use fsl_core::episodes::{ShotSpec, TaskSpec};
use fsl_core::harness::{run_cell, run_condition_matrix, Condition, MatrixSpec, TrainConfig};
use fsl_core::imbalance::ImbalanceSpec;
use fsl_core::learners::{LearnerConfig, LearnerKind};

struct Fixture {
    train: ClassPool<f64>,
    val: ClassPool<f64>,
    test: ClassPool<f64>,
    eval_task: TaskSpec,
    cfg: TrainConfig,
}

fn fixture() -> Fixture {
    let pool = gen_synthetic(&SyntheticSpec {
        n_classes: 16,
        samples_per_class: 30,
        dim: 5,
        class_separation: 1.2,
        n_groups: 1,
        group_shift: 0.0,
        seed: 4,
    })
    .unwrap();
    let (train, val, test) =
        split_classes(&pool, &SplitSpec { n_train: 8, n_val: 4, n_test: 4, seed: 1 }).unwrap();
    Fixture {
        train,
        val,
        test,
        eval_task: TaskSpec::balanced(3, 2, 3),
        cfg: TrainConfig {
            total_tasks: 20,
            val_every: 10,
            val_tasks: 8,
            lr_schedule: vec![(20, 1e-3)],
            meta_batch: None,
            eval_tasks: 15,
            seed: 33,
        },
    }
}

fn learner() -> LearnerConfig {
    LearnerConfig::new(
        LearnerKind::ProtoNet,
        BackboneConfig {
            input_dim: 5,
            hidden_dims: vec![8],
            embed_dim: 4,
            activation: fsl_core::backbone::Activation::Relu,
        },
    )
}

fn balanced_condition(name: &str) -> Condition {
    Condition {
        name: name.to_string(),
        dataset_spec: ImbalanceSpec::balanced(20, 8),
        shot: ShotSpec::Fixed(2),
    }
}

#[test]
fn one_by_one_matrix_yields_one_report() {
    let f = fixture();
    let learners = [learner()];
    let conditions = [balanced_condition("balanced")];
    let seeds = [0u64];
    let m = MatrixSpec {
        learners: &learners,
        conditions: &conditions,
        seeds: &seeds,
        base_train: &f.train,
        val: &f.val,
        test: &f.test,
        eval_task: &f.eval_task,
        train: &f.cfg,
    };
    let reports = run_condition_matrix(&m).unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].learner, "protonet");
    assert_eq!(reports[0].episode_acc.len(), 15);
}

#[test]
fn duplicated_condition_content_gives_identical_means() {
    let f = fixture();
    let learners = [learner()];
    let conditions = [balanced_condition("balanced"), balanced_condition("balanced_again")];
    let seeds = [0u64, 1];
    let m = MatrixSpec {
        learners: &learners,
        conditions: &conditions,
        seeds: &seeds,
        base_train: &f.train,
        val: &f.val,
        test: &f.test,
        eval_task: &f.eval_task,
        train: &f.cfg,
    };
    let reports = run_condition_matrix(&m).unwrap();
    for &seed in &seeds {
        let a = reports.iter().find(|r| r.condition == "balanced" && r.seed == seed).unwrap();
        let b = reports.iter().find(|r| r.condition == "balanced_again" && r.seed == seed).unwrap();
        assert_eq!(a.episode_acc, b.episode_acc, "seed {seed}");
    }
}

#[test]
fn single_cell_rerun_matches_matrix_report() {
    let f = fixture();
    let learners = [learner()];
    let conditions = [
        balanced_condition("balanced"),
        Condition {
            name: "task_imbalance".into(),
            dataset_spec: ImbalanceSpec::balanced(20, 8),
            shot: ShotSpec::Imbalanced(ImbalanceSpec::linear(1, 3, 3)),
        },
    ];
    let seeds = [0u64, 1];
    let m = MatrixSpec {
        learners: &learners,
        conditions: &conditions,
        seeds: &seeds,
        base_train: &f.train,
        val: &f.val,
        test: &f.test,
        eval_task: &f.eval_task,
        train: &f.cfg,
    };
    let reports = run_condition_matrix(&m).unwrap();
    let lone = run_cell(&m, &learners[0], &conditions[1], 1).unwrap();
    let stored = reports
        .iter()
        .find(|r| r.condition == "task_imbalance" && r.seed == 1)
        .unwrap();
    assert_eq!(&lone, stored);
}

#[test]
fn train_n_way_override_trains_wider_episodes() {
    // The 20-way prototypical variant is a config override, not a separate
    // learner; here a 4-way training override evaluates on the 3-way task.
    let f = fixture();
    let mut wide = learner();
    wide.train_n_way = Some(4);
    wide.train_query = Some(2);
    let learners = [wide];
    let conditions = [balanced_condition("balanced")];
    let seeds = [0u64];
    let m = MatrixSpec {
        learners: &learners,
        conditions: &conditions,
        seeds: &seeds,
        base_train: &f.train,
        val: &f.val,
        test: &f.test,
        eval_task: &f.eval_task,
        train: &f.cfg,
    };
    let reports = run_condition_matrix(&m).unwrap();
    assert_eq!(reports[0].learner, "protonet_4way");
    assert_eq!(reports[0].episode_acc.len(), 15);
}

#[test]
fn diverging_loss_aborts_with_diagnostic() {
    use fsl_core::harness::meta_train;
    use fsl_core::learners::LearnerState;

    let f = fixture();
    // A learning rate large enough to overflow the logits to infinity makes
    // the loss non-finite; training must abort rather than select a garbage
    // model. (The stable softmax keeps merely-huge finite logits finite.)
    let cfg = TrainConfig { lr_schedule: vec![(100, 1e200)], total_tasks: 100, ..f.cfg.clone() };
    let state = LearnerState::new(learner(), 3, f.train.n_classes(), 1).unwrap();
    let err = meta_train(state, &f.train, &f.val, &f.eval_task, &f.eval_task, &cfg, 5).unwrap_err();
    assert!(matches!(err, fsl_core::Error::Numeric(_)), "{err:?}");
    assert!(err.to_string().contains("training loss"), "{err}");
}

#[test]
fn failing_cell_is_identified() {
    let f = fixture();
    let learners = [learner()];
    // Capacity violation: 25 > 30-sample classes still fine, but shots of 20
    // exceed what a 20-sample induced class can provide with 3 queries.
    let conditions = [Condition {
        name: "impossible".into(),
        dataset_spec: ImbalanceSpec::balanced(20, 8),
        shot: ShotSpec::Fixed(20),
    }];
    let seeds = [0u64];
    let m = MatrixSpec {
        learners: &learners,
        conditions: &conditions,
        seeds: &seeds,
        base_train: &f.train,
        val: &f.val,
        test: &f.test,
        eval_task: &f.eval_task,
        train: &f.cfg,
    };
    let err = run_condition_matrix(&m).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("impossible") && msg.contains("protonet"), "{msg}");
}
