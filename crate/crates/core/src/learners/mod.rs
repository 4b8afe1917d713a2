//! The few-shot learners.
//!
//! All methods share the same embedding backbone; they differ in how they
//! turn a support set into a classifier for the episode's query set and in
//! how they are trained (episodic meta-training vs. mini-batch pretraining).

pub mod baseline;
pub mod maml;
pub mod matching;
pub mod protomaml;
pub mod protonet;
pub mod relation;
pub mod simpleshot;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{init_backbone, init_linear, BackboneConfig};
use crate::episodes::{derive_seed, Episode};
use crate::error::{Error, Result};
use crate::params::{bind, harvest, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::{argmax_rows, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LearnerKind {
    Baseline,
    BaselinePp,
    Matching,
    ProtoNet,
    Relation,
    SimpleShot,
    Maml,
    ProtoMaml,
}

pub const ALL_KINDS: [LearnerKind; 8] = [
    LearnerKind::Baseline,
    LearnerKind::BaselinePp,
    LearnerKind::Matching,
    LearnerKind::ProtoNet,
    LearnerKind::Relation,
    LearnerKind::SimpleShot,
    LearnerKind::Maml,
    LearnerKind::ProtoMaml,
];

impl LearnerKind {
    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Baseline => "baseline",
            LearnerKind::BaselinePp => "baseline_pp",
            LearnerKind::Matching => "matching",
            LearnerKind::ProtoNet => "protonet",
            LearnerKind::Relation => "relation",
            LearnerKind::SimpleShot => "simpleshot",
            LearnerKind::Maml => "maml",
            LearnerKind::ProtoMaml => "protomaml",
        }
    }

    /// Episodic kinds meta-train on sampled tasks; the rest pretrain on
    /// mini-batches over the whole training pool.
    pub fn is_episodic(self) -> bool {
        !matches!(self, LearnerKind::Baseline | LearnerKind::BaselinePp | LearnerKind::SimpleShot)
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_KINDS
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown learner kind {s:?}")))
    }
}

/// Per-learner hyperparameters. `new` fills in the per-kind defaults; every
/// field stays overridable from experiment configs.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub kind: LearnerKind,
    pub backbone: BackboneConfig,
    /// Inner-loop step size (MAML family).
    pub inner_lr: f64,
    /// Inner-loop gradient steps (MAML family).
    pub inner_steps: usize,
    /// Episodes per meta-update.
    pub meta_batch: usize,
    /// Head-only fine-tuning steps at meta-test (baselines).
    pub finetune_steps: usize,
    pub finetune_lr: f64,
    /// Overrides the evaluation n_way during meta-training (e.g. 20-way
    /// prototypical training); None trains at the evaluation task.
    pub train_n_way: Option<usize>,
    /// Queries per class during meta-training when `train_n_way` is set.
    pub train_query: Option<usize>,
    /// Hidden width of the relation module.
    pub relation_hidden: usize,
    /// Softmax temperature multiplier for cosine-similarity heads.
    pub cosine_scale: f64,
    /// Mini-batch size for pretraining kinds.
    pub pretrain_batch: usize,
}

impl LearnerConfig {
    pub fn new(kind: LearnerKind, backbone: BackboneConfig) -> Self {
        let (inner_lr, inner_steps, meta_batch) = match kind {
            LearnerKind::Maml => (0.1, 10, 4),
            LearnerKind::ProtoMaml => (0.01, 5, 1),
            _ => (0.0, 0, 1),
        };
        LearnerConfig {
            kind,
            backbone,
            inner_lr,
            inner_steps,
            meta_batch,
            finetune_steps: 100,
            finetune_lr: 0.01,
            train_n_way: None,
            train_query: None,
            relation_hidden: 64,
            cosine_scale: 10.0,
            pretrain_batch: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if matches!(self.kind, LearnerKind::Maml | LearnerKind::ProtoMaml)
            && (self.inner_lr <= 0.0 || self.inner_steps == 0)
        {
            return Err(Error::InvalidInput(format!(
                "{} requires inner_lr > 0 and inner_steps >= 1",
                self.kind
            )));
        }
        if self.meta_batch == 0 {
            return Err(Error::InvalidInput("meta_batch must be >= 1".into()));
        }
        Ok(())
    }
}

/// Method-specific state carried alongside the parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Aux<T> {
    None,
    /// Pretraining head over this many global classes.
    Pretrain { n_classes: usize },
    /// Pretraining head plus the training-set feature mean used by CL2N.
    SimpleShot { n_classes: usize, feature_mean: Option<Vec<T>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState<T> {
    pub config: LearnerConfig,
    pub params: ParamSet<T>,
    pub aux: Aux<T>,
}

impl<T: Scalar> LearnerState<T> {
    /// Initialize parameters for a learner.
    ///
    /// `train_n_way` sizes the persistent episodic head (MAML);
    /// `n_pretrain_classes` sizes the global pretraining head (baselines,
    /// SimpleShot). Each is ignored by kinds that do not use it.
    pub fn new(
        config: LearnerConfig,
        train_n_way: usize,
        n_pretrain_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut params = init_backbone(&config.backbone, derive_seed(seed, 0))?;
        let embed = config.backbone.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
        let aux = match config.kind {
            LearnerKind::Maml => {
                if train_n_way < 2 {
                    return Err(Error::InvalidInput("maml needs a train n_way >= 2".into()));
                }
                params.insert("head.w", init_linear(&mut rng, embed, train_n_way));
                params.insert("head.b", Tensor::zeros(vec![train_n_way]));
                Aux::None
            }
            LearnerKind::Relation => {
                let hidden = config.relation_hidden;
                params.insert("relation.0.w", init_linear(&mut rng, 2 * embed, hidden));
                params.insert("relation.0.b", Tensor::zeros(vec![hidden]));
                params.insert("relation.1.w", init_linear(&mut rng, hidden, 1));
                params.insert("relation.1.b", Tensor::zeros(vec![1]));
                Aux::None
            }
            LearnerKind::Baseline | LearnerKind::BaselinePp | LearnerKind::SimpleShot => {
                if n_pretrain_classes < 2 {
                    return Err(Error::InvalidInput(format!(
                        "{} needs at least 2 pretraining classes",
                        config.kind
                    )));
                }
                match config.kind {
                    LearnerKind::BaselinePp => {
                        // Cosine head: one weight row per class, no bias.
                        let w: Tensor<T> = init_linear(&mut rng, embed, n_pretrain_classes);
                        let mut rows = vec![T::zero(); n_pretrain_classes * embed];
                        for d in 0..embed {
                            for c in 0..n_pretrain_classes {
                                rows[c * embed + d] = w.values()[d * n_pretrain_classes + c];
                            }
                        }
                        params.insert(
                            "head.w",
                            Tensor::new(vec![n_pretrain_classes, embed], rows).expect("sized"),
                        );
                    }
                    _ => {
                        params.insert("head.w", init_linear(&mut rng, embed, n_pretrain_classes));
                        params.insert("head.b", Tensor::zeros(vec![n_pretrain_classes]));
                    }
                }
                if config.kind == LearnerKind::SimpleShot {
                    Aux::SimpleShot { n_classes: n_pretrain_classes, feature_mean: None }
                } else {
                    Aux::Pretrain { n_classes: n_pretrain_classes }
                }
            }
            _ => Aux::None,
        };
        Ok(LearnerState { config, params, aux })
    }

    pub fn kind(&self) -> LearnerKind {
        self.config.kind
    }

    /// Predict local labels for an episode's query set. `seed` feeds the
    /// seeded pieces of test-time adaptation (fresh fine-tuning heads); pure
    /// methods ignore it.
    pub fn predict(&self, ep: &Episode<T>, seed: u64) -> Result<Vec<usize>> {
        match self.config.kind {
            LearnerKind::ProtoNet => {
                let mut tape = Tape::new();
                let bound = bind(&mut tape, &self.params);
                let logits = protonet::protonet_logits(&mut tape, &bound, &self.config.backbone, ep)?;
                Ok(argmax_of(&tape, logits, ep))
            }
            LearnerKind::Matching => {
                let mut tape = Tape::new();
                let bound = bind(&mut tape, &self.params);
                let scores = matching::matching_logits(&mut tape, &bound, &self.config.backbone, ep)?;
                Ok(argmax_of(&tape, scores, ep))
            }
            LearnerKind::Relation => {
                let mut tape = Tape::new();
                let bound = bind(&mut tape, &self.params);
                let scores = relation::relation_logits(&mut tape, &bound, &self.config, ep)?;
                Ok(argmax_of(&tape, scores, ep))
            }
            LearnerKind::SimpleShot => simpleshot::simpleshot_classify(self, ep),
            LearnerKind::Maml => maml::maml_predict(self, ep),
            LearnerKind::ProtoMaml => protomaml::protomaml_predict(self, ep),
            LearnerKind::Baseline | LearnerKind::BaselinePp => {
                baseline::baseline_finetune(self, ep, seed)
            }
        }
    }

    /// One meta-training update's worth of gradients from a batch of
    /// episodes, accumulated into the parameter gradient buffers (scaled by
    /// 1/batch). Returns the mean episode loss. Only episodic kinds.
    pub fn accumulate_meta_batch(&mut self, episodes: &[Episode<T>]) -> Result<T> {
        if episodes.is_empty() {
            return Err(Error::Contract("empty meta batch".into()));
        }
        if !self.config.kind.is_episodic() {
            return Err(Error::Contract(format!(
                "{} pretrains on mini-batches, not episodes",
                self.config.kind
            )));
        }
        let inv = T::of(1.0 / episodes.len() as f64);
        let mut total = T::zero();
        for ep in episodes {
            let loss = match self.config.kind {
                LearnerKind::Maml => maml::maml_meta_step(self, ep, inv)?,
                LearnerKind::ProtoMaml => protomaml::protomaml_meta_step(self, ep, inv)?,
                _ => self.metric_episode_step(ep, inv)?,
            };
            total = total + loss;
        }
        Ok(total * inv)
    }

    /// Query loss and gradients of the metric-based learners (scaled by
    /// `inv` before backward).
    fn metric_episode_step(&mut self, ep: &Episode<T>, inv: T) -> Result<T> {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &self.params);
        let loss = match self.config.kind {
            LearnerKind::ProtoNet => {
                let logits = protonet::protonet_logits(&mut tape, &bound, &self.config.backbone, ep)?;
                tape.cross_entropy_mean(logits, &ep.query_y)?
            }
            LearnerKind::Matching => {
                // Matching scores are already class probabilities.
                let probs = matching::matching_logits(&mut tape, &bound, &self.config.backbone, ep)?;
                tape.nll_mean_rows(probs, &ep.query_y)?
            }
            LearnerKind::Relation => {
                let logits = relation::relation_logits(&mut tape, &bound, &self.config, ep)?;
                tape.cross_entropy_mean(logits, &ep.query_y)?
            }
            other => return Err(Error::Contract(format!("{other} is not metric-based"))),
        };
        let scaled = tape.scale(loss, inv);
        tape.backward(scaled)?;
        harvest(&tape, &bound, &mut self.params)?;
        Ok(tape.value(loss)[0])
    }

    /// One pretraining step's gradients from a labeled mini-batch (global
    /// labels), accumulated into the parameter gradients. Returns the loss.
    pub fn pretrain_accumulate(&mut self, x: &[T], y: &[usize]) -> Result<T> {
        baseline::pretrain_accumulate(self, x, y)
    }

    pub fn pretrain_classes(&self) -> Option<usize> {
        match &self.aux {
            Aux::Pretrain { n_classes } => Some(*n_classes),
            Aux::SimpleShot { n_classes, .. } => Some(*n_classes),
            Aux::None => None,
        }
    }

    /// Serialize as a parameter checkpoint with the learner configuration and
    /// aux state carried in the meta section (the feature mean travels as an
    /// extra tensor).
    pub fn save_checkpoint<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        self.save_checkpoint_with(w, &[])
    }

    /// [`save_checkpoint`] with extra meta entries (provenance such as the
    /// config hash); unknown keys are ignored on load.
    pub fn save_checkpoint_with<W: std::io::Write>(
        &self,
        w: &mut W,
        extra_meta: &[(String, String)],
    ) -> Result<()> {
        let c = &self.config;
        let mut meta: Vec<(String, String)> = vec![
            ("kind".into(), c.kind.to_string()),
            ("input_dim".into(), c.backbone.input_dim.to_string()),
            (
                "hidden_dims".into(),
                c.backbone
                    .hidden_dims
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("embed_dim".into(), c.backbone.embed_dim.to_string()),
            (
                "activation".into(),
                match c.backbone.activation {
                    crate::backbone::Activation::Relu => "relu".into(),
                    crate::backbone::Activation::Identity => "identity".into(),
                },
            ),
            ("inner_lr".into(), format!("{}", c.inner_lr)),
            ("inner_steps".into(), c.inner_steps.to_string()),
            ("meta_batch".into(), c.meta_batch.to_string()),
            ("finetune_steps".into(), c.finetune_steps.to_string()),
            ("finetune_lr".into(), format!("{}", c.finetune_lr)),
            ("relation_hidden".into(), c.relation_hidden.to_string()),
            ("cosine_scale".into(), format!("{}", c.cosine_scale)),
            ("pretrain_batch".into(), c.pretrain_batch.to_string()),
        ];
        if let Some(w) = c.train_n_way {
            meta.push(("train_n_way".into(), w.to_string()));
        }
        if let Some(q) = c.train_query {
            meta.push(("train_query".into(), q.to_string()));
        }
        match &self.aux {
            Aux::None => meta.push(("aux".into(), "none".into())),
            Aux::Pretrain { n_classes } => {
                meta.push(("aux".into(), "pretrain".into()));
                meta.push(("aux_classes".into(), n_classes.to_string()));
            }
            Aux::SimpleShot { n_classes, .. } => {
                meta.push(("aux".into(), "simpleshot".into()));
                meta.push(("aux_classes".into(), n_classes.to_string()));
            }
        }
        meta.extend(extra_meta.iter().cloned());
        let mut to_write = self.params.clone();
        if let Aux::SimpleShot { feature_mean: Some(mean), .. } = &self.aux {
            to_write.insert("aux.feature_mean", Tensor::new(vec![mean.len()], mean.clone())?);
        }
        to_write.write_checkpoint(w, &meta)
    }

    pub fn load_checkpoint<R: std::io::BufRead>(r: &mut R) -> Result<Self> {
        let (mut params, meta) = ParamSet::read_checkpoint(r)?;
        let get = |key: &str| -> Result<&str> {
            meta.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::InvalidInput(format!("checkpoint missing meta key {key:?}")))
        };
        let parse_num = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad meta value for {key:?}")))
        };
        let parse_f = |key: &str| -> Result<f64> {
            get(key)?
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad meta value for {key:?}")))
        };
        let kind: LearnerKind = get("kind")?.parse()?;
        let hidden_dims: Vec<usize> = get("hidden_dims")?
            .split(',')
            .map(|t| t.parse().map_err(|_| Error::InvalidInput("bad hidden_dims".into())))
            .collect::<Result<_>>()?;
        let backbone = BackboneConfig {
            input_dim: parse_num("input_dim")?,
            hidden_dims,
            embed_dim: parse_num("embed_dim")?,
            activation: match get("activation")? {
                "relu" => crate::backbone::Activation::Relu,
                "identity" => crate::backbone::Activation::Identity,
                other => return Err(Error::InvalidInput(format!("unknown activation {other:?}"))),
            },
        };
        let opt_num = |key: &str| -> Option<usize> {
            meta.iter().find(|(k, _)| k == key).and_then(|(_, v)| v.parse().ok())
        };
        let config = LearnerConfig {
            kind,
            backbone,
            inner_lr: parse_f("inner_lr")?,
            inner_steps: parse_num("inner_steps")?,
            meta_batch: parse_num("meta_batch")?,
            finetune_steps: parse_num("finetune_steps")?,
            finetune_lr: parse_f("finetune_lr")?,
            train_n_way: opt_num("train_n_way"),
            train_query: opt_num("train_query"),
            relation_hidden: parse_num("relation_hidden")?,
            cosine_scale: parse_f("cosine_scale")?,
            pretrain_batch: parse_num("pretrain_batch")?,
        };
        let feature_mean = params
            .get("aux.feature_mean")
            .ok()
            .map(|t| t.values().to_vec());
        if feature_mean.is_some() {
            params.remove("aux.feature_mean");
        }
        let aux = match get("aux")? {
            "none" => Aux::None,
            "pretrain" => Aux::Pretrain { n_classes: parse_num("aux_classes")? },
            "simpleshot" => Aux::SimpleShot { n_classes: parse_num("aux_classes")?, feature_mean },
            other => return Err(Error::InvalidInput(format!("unknown aux kind {other:?}"))),
        };
        Ok(LearnerState { config, params, aux })
    }
}

/// Argmax over the query logits of an episode.
fn argmax_of<T: Scalar>(tape: &Tape<T>, logits: Var, ep: &Episode<T>) -> Vec<usize> {
    argmax_rows(tape.value(logits), ep.n_query(), ep.n_way())
}

/// Support and query leaves for an episode.
pub(crate) fn episode_vars<T: Scalar>(tape: &mut Tape<T>, ep: &Episode<T>) -> Result<(Var, Var)> {
    let s = tape.leaf_matrix(ep.n_support(), ep.dim, ep.support_x.clone())?;
    let q = tape.leaf_matrix(ep.n_query(), ep.dim, ep.query_x.clone())?;
    Ok((s, q))
}

/// Constant averaging matrix `M[n_way, n_support]` with `M[c, s] = 1/|c|`
/// for support rows `s` of class `c`; `M @ support_emb` yields prototypes.
pub(crate) fn prototype_matrix<T: Scalar>(tape: &mut Tape<T>, ep: &Episode<T>) -> Result<Var> {
    let counts = ep.support_counts();
    let n_way = ep.n_way();
    let ns = ep.n_support();
    let mut m = vec![T::zero(); n_way * ns];
    for (s, &c) in ep.support_y.iter().enumerate() {
        m[c * ns + s] = T::of(1.0 / counts[c] as f64);
    }
    tape.leaf_matrix(n_way, ns, m)
}

/// Constant one-hot label matrix `Y[n_support, n_way]`.
pub(crate) fn support_onehot<T: Scalar>(tape: &mut Tape<T>, ep: &Episode<T>) -> Result<Var> {
    let n_way = ep.n_way();
    let ns = ep.n_support();
    let mut y = vec![T::zero(); ns * n_way];
    for (s, &c) in ep.support_y.iter().enumerate() {
        y[s * n_way + c] = T::one();
    }
    tape.leaf_matrix(ns, n_way, y)
}

/// `x @ w + b` with `b` broadcast over rows.
pub(crate) fn linear_logits<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let z = tape.matmul(x, w)?;
    tape.add_row_vec(z, b)
}
