//! Episode and mini-batch sampling.
//!
//! An episode is one few-shot task: a support set the learner adapts on and
//! a disjoint query set it is scored on, over a small subset of the pool's
//! classes relabeled 0..n_way. Support shots are either a fixed count per
//! class or follow an imbalance profile; the query set is always balanced.
//!
//! Sampling is a pure function of (pool, task, seed). Capacity violations are
//! hard errors, never silent resampling, so experiment configs must keep
//! class sizes at or above `max_shot + query_per_class`.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{ClassId, ClassPool};
use crate::error::{Error, Result};
use crate::imbalance::ImbalanceSpec;
use crate::scalar::Scalar;

/// Per-class support size: fixed K-shot or an imbalance profile over the
/// episode's classes.
#[derive(Debug, Clone, PartialEq)]
pub enum ShotSpec {
    Fixed(usize),
    Imbalanced(ImbalanceSpec),
}

impl ShotSpec {
    pub fn max_shot(&self) -> usize {
        match self {
            ShotSpec::Fixed(k) => *k,
            ShotSpec::Imbalanced(spec) => spec.k_max,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ShotSpec::Fixed(k) => k.to_string(),
            ShotSpec::Imbalanced(spec) => spec.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub n_way: usize,
    pub shot: ShotSpec,
    pub query_per_class: usize,
}

impl TaskSpec {
    pub fn balanced(n_way: usize, shot: usize, query_per_class: usize) -> Self {
        TaskSpec { n_way, shot: ShotSpec::Fixed(shot), query_per_class }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 {
            return Err(Error::InvalidInput(format!("n_way must be >= 2, got {}", self.n_way)));
        }
        if self.query_per_class == 0 {
            return Err(Error::InvalidInput("query_per_class must be >= 1".into()));
        }
        match &self.shot {
            ShotSpec::Fixed(k) if *k == 0 => {
                Err(Error::InvalidInput("shot must be >= 1".into()))
            }
            ShotSpec::Fixed(_) => Ok(()),
            ShotSpec::Imbalanced(spec) => {
                spec.validate()?;
                if spec.n_classes != self.n_way {
                    return Err(Error::InvalidInput(format!(
                        "shot profile covers {} classes but the task is {}-way",
                        spec.n_classes, self.n_way
                    )));
                }
                Ok(())
            }
        }
    }
}

/// One sampled few-shot task. Rows of `support_x`/`query_x` are feature
/// vectors; labels are local (0..n_way) with `class_map` giving the pool
/// class id of each local label.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode<T> {
    pub dim: usize,
    pub support_x: Vec<T>,
    pub support_y: Vec<usize>,
    pub query_x: Vec<T>,
    pub query_y: Vec<usize>,
    pub class_map: Vec<ClassId>,
    /// (class id, sample index) provenance of each support row.
    pub support_src: Vec<(ClassId, usize)>,
    /// (class id, sample index) provenance of each query row.
    pub query_src: Vec<(ClassId, usize)>,
}

impl<T> Episode<T> {
    pub fn n_way(&self) -> usize {
        self.class_map.len()
    }

    pub fn n_support(&self) -> usize {
        self.support_y.len()
    }

    pub fn n_query(&self) -> usize {
        self.query_y.len()
    }

    /// Support row count per local label.
    pub fn support_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_way()];
        for &y in &self.support_y {
            counts[y] += 1;
        }
        counts
    }

    /// Textual debug record: class map plus support/query sample ids.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "class_map=");
        for (i, id) in self.class_map.iter().enumerate() {
            let _ = write!(out, "{}{}:{}", if i > 0 { "," } else { "" }, i, id);
        }
        let refs = |items: &[(ClassId, usize)]| {
            items
                .iter()
                .map(|(c, s)| format!("{c}#{s}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let _ = write!(out, " support={}", refs(&self.support_src));
        let _ = write!(out, " query={}", refs(&self.query_src));
        out
    }
}

/// Sample one episode. Classes are chosen uniformly without replacement;
/// support/query rows are disjoint samples of each chosen class.
pub fn sample_episode<T: Scalar>(
    pool: &ClassPool<T>,
    task: &TaskSpec,
    seed: u64,
) -> Result<Episode<T>> {
    task.validate()?;
    if pool.n_classes() < task.n_way {
        return Err(Error::InvalidInput(format!(
            "task is {}-way but the pool holds {} classes",
            task.n_way,
            pool.n_classes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut ids = pool.class_ids();
    ids.shuffle(&mut rng);
    let chosen = &ids[..task.n_way];

    let shots: Vec<usize> = match &task.shot {
        ShotSpec::Fixed(k) => vec![*k; task.n_way],
        ShotSpec::Imbalanced(spec) => {
            let mut sizes = spec.sizes()?.into_sizes();
            sizes.shuffle(&mut rng);
            sizes
        }
    };

    let dim = pool.dim();
    let mut ep = Episode {
        dim,
        support_x: Vec::new(),
        support_y: Vec::new(),
        query_x: Vec::new(),
        query_y: Vec::new(),
        class_map: chosen.to_vec(),
        support_src: Vec::new(),
        query_src: Vec::new(),
    };

    for (local, (&id, &shot)) in chosen.iter().zip(&shots).enumerate() {
        let available = pool.class_len(id).expect("chosen from pool");
        let need = shot + task.query_per_class;
        if available < need {
            return Err(Error::Capacity { class_id: id, available, required: need });
        }
        let mut order: Vec<usize> = (0..available).collect();
        order.shuffle(&mut rng);
        for &i in order.iter().take(shot) {
            ep.support_x.extend_from_slice(pool.sample(id, i).expect("index in range"));
            ep.support_y.push(local);
            ep.support_src.push((id, i));
        }
        for &i in order[shot..need].iter() {
            ep.query_x.extend_from_slice(pool.sample(id, i).expect("index in range"));
            ep.query_y.push(local);
            ep.query_src.push((id, i));
        }
    }
    Ok(ep)
}

/// Draw `batch_size` distinct (class, sample) pairs uniformly from the pool.
/// Labels are global class indices (position in the sorted class-id order).
pub fn sample_minibatch<T: Scalar>(
    pool: &ClassPool<T>,
    batch_size: usize,
    seed: u64,
) -> Result<(Vec<T>, Vec<usize>)> {
    let total = pool.n_samples();
    if batch_size == 0 || batch_size > total {
        return Err(Error::InvalidInput(format!(
            "batch size {batch_size} outside 1..={total}"
        )));
    }
    let ids = pool.class_ids();
    // Flat enumeration boundaries: sample t belongs to the class whose
    // cumulative range contains t.
    let mut bounds = Vec::with_capacity(ids.len());
    let mut acc = 0usize;
    for &id in &ids {
        acc += pool.class_len(id).expect("id from pool");
        bounds.push(acc);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, total, batch_size);

    let dim = pool.dim();
    let mut x = Vec::with_capacity(batch_size * dim);
    let mut y = Vec::with_capacity(batch_size);
    for flat in picked {
        let class_pos = bounds.partition_point(|&b| b <= flat);
        let before = if class_pos == 0 { 0 } else { bounds[class_pos - 1] };
        let id = ids[class_pos];
        x.extend_from_slice(pool.sample(id, flat - before).expect("in range"));
        y.push(class_pos);
    }
    Ok((x, y))
}

/// Deterministic per-stream seed derivation (splitmix64 finalizer over the
/// base seed and a stream index), so parallel and serial execution see the
/// same episode streams.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
