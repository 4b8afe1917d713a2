//! Experiment configuration file (TOML) and its mapping onto the core types.
//!
//! See `docs/config.md` in the repository root for the key reference.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use fsl_core::backbone::{Activation, BackboneConfig};
use fsl_core::data::{gen_synthetic, load_manifest, split_classes, ClassPool, SplitSpec, SyntheticSpec};
use fsl_core::episodes::{ShotSpec, TaskSpec};
use fsl_core::harness::{Condition, TrainConfig};
use fsl_core::imbalance::ImbalanceSpec;
use fsl_core::learners::{LearnerConfig, LearnerKind};
use fsl_core::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: u64,
    pub out_dir: Option<String>,
    /// Path to an existing manifest; mutually exclusive with `[synthetic]`.
    pub manifest: Option<String>,
    pub synthetic: Option<SyntheticSection>,
    pub split: SplitSection,
    pub task: TaskSection,
    pub train: TrainSection,
    pub backbone: Option<BackboneSection>,
    pub conditions: Vec<ConditionSection>,
    pub learners: Vec<LearnerSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub dim: usize,
    pub class_separation: f64,
    #[serde(default = "one")]
    pub n_groups: usize,
    #[serde(default)]
    pub group_shift: f64,
    pub seed: u64,
}

fn one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub n_way: usize,
    pub shot: usize,
    pub query_per_class: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub total_tasks: u64,
    pub val_every: u64,
    pub val_tasks: usize,
    pub eval_tasks: usize,
    pub lr_schedule: Vec<(u64, f64)>,
    pub meta_batch: Option<usize>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSection {
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSection {
    pub name: String,
    pub dataset: String,
    /// Fixed shot count (e.g. `"5"`) or an imbalance spec over shots
    /// (e.g. `"linear(1,9,5)"`).
    pub shot: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSection {
    pub kind: String,
    pub inner_lr: Option<f64>,
    pub inner_steps: Option<usize>,
    pub meta_batch: Option<usize>,
    pub finetune_steps: Option<usize>,
    pub finetune_lr: Option<f64>,
    pub train_n_way: Option<usize>,
    pub train_query: Option<usize>,
    pub relation_hidden: Option<usize>,
    pub cosine_scale: Option<f64>,
    pub pretrain_batch: Option<usize>,
}

/// A parsed configuration plus the hash of its on-disk bytes (embedded into
/// every artifact for provenance).
pub struct Experiment {
    pub file: FileConfig,
    pub config_hash: String,
    pub config_dir: PathBuf,
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let config_hash = hex12(&hasher.finalize());
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::InvalidInput(format!("{}: not utf-8", path.display())))?;
        let file: FileConfig = toml::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        if file.manifest.is_some() == file.synthetic.is_some() {
            return Err(Error::InvalidInput(
                "config needs exactly one of `manifest` or `[synthetic]`".into(),
            ));
        }
        if file.learners.is_empty() || file.conditions.is_empty() {
            return Err(Error::InvalidInput("config needs at least one learner and one condition".into()));
        }
        if file.train.seeds.is_empty() {
            return Err(Error::InvalidInput("train.seeds must not be empty".into()));
        }
        let config_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(Experiment { file, config_hash, config_dir })
    }

    /// Build the full pool described by the config (synthetic or manifest).
    pub fn pool(&self) -> Result<ClassPool<f64>> {
        if let Some(s) = &self.file.synthetic {
            gen_synthetic(&SyntheticSpec {
                n_classes: s.n_classes,
                samples_per_class: s.samples_per_class,
                dim: s.dim,
                class_separation: s.class_separation,
                n_groups: s.n_groups,
                group_shift: s.group_shift,
                seed: s.seed,
            })
        } else {
            let rel = self.file.manifest.as_ref().expect("validated");
            let path = self.config_dir.join(rel);
            load_manifest(&path)
        }
    }

    /// Class-disjoint train/val/test pools.
    pub fn pools(&self) -> Result<(ClassPool<f64>, ClassPool<f64>, ClassPool<f64>)> {
        let pool = self.pool()?;
        let s = &self.file.split;
        split_classes(&pool, &SplitSpec { n_train: s.n_train, n_val: s.n_val, n_test: s.n_test, seed: s.seed })
    }

    pub fn eval_task(&self) -> TaskSpec {
        let t = &self.file.task;
        TaskSpec::balanced(t.n_way, t.shot, t.query_per_class)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.file.train;
        TrainConfig {
            total_tasks: t.total_tasks,
            val_every: t.val_every,
            val_tasks: t.val_tasks,
            lr_schedule: t.lr_schedule.clone(),
            meta_batch: t.meta_batch,
            eval_tasks: t.eval_tasks,
            seed: self.file.seed,
        }
    }

    pub fn backbone(&self, input_dim: usize) -> BackboneConfig {
        match &self.file.backbone {
            Some(b) => BackboneConfig {
                input_dim,
                hidden_dims: b.hidden_dims.clone(),
                embed_dim: b.embed_dim,
                activation: Activation::Relu,
            },
            None => BackboneConfig::desk(input_dim),
        }
    }

    pub fn conditions(&self) -> Result<Vec<Condition>> {
        self.file
            .conditions
            .iter()
            .map(|c| {
                Ok(Condition {
                    name: c.name.clone(),
                    dataset_spec: c.dataset.parse()?,
                    shot: parse_shot(&c.shot)?,
                })
            })
            .collect()
    }

    pub fn learners(&self, input_dim: usize) -> Result<Vec<LearnerConfig>> {
        self.file
            .learners
            .iter()
            .map(|l| {
                let kind: LearnerKind = l.kind.parse()?;
                let mut cfg = LearnerConfig::new(kind, self.backbone(input_dim));
                if let Some(v) = l.inner_lr {
                    cfg.inner_lr = v;
                }
                if let Some(v) = l.inner_steps {
                    cfg.inner_steps = v;
                }
                if let Some(v) = l.meta_batch {
                    cfg.meta_batch = v;
                }
                if let Some(v) = l.finetune_steps {
                    cfg.finetune_steps = v;
                }
                if let Some(v) = l.finetune_lr {
                    cfg.finetune_lr = v;
                }
                cfg.train_n_way = l.train_n_way;
                cfg.train_query = l.train_query;
                if let Some(v) = l.relation_hidden {
                    cfg.relation_hidden = v;
                }
                if let Some(v) = l.cosine_scale {
                    cfg.cosine_scale = v;
                }
                if let Some(v) = l.pretrain_batch {
                    cfg.pretrain_batch = v;
                }
                cfg.validate()?;
                Ok(cfg)
            })
            .collect()
    }
}

pub fn parse_shot(text: &str) -> Result<ShotSpec> {
    let text = text.trim();
    if let Ok(k) = text.parse::<usize>() {
        if k == 0 {
            return Err(Error::InvalidInput("shot must be >= 1".into()));
        }
        return Ok(ShotSpec::Fixed(k));
    }
    let spec: ImbalanceSpec = text.parse()?;
    Ok(ShotSpec::Imbalanced(spec))
}

fn hex12(digest: &[u8]) -> String {
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}
