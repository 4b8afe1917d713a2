//! Class pools: synthetic generation, manifest I/O, class-disjoint splits and
//! imbalance induction.
//!
//! Samples are fixed-dimension feature vectors grouped by class; each class
//! carries a group tag so group-targeted imbalance (e.g. shrinking one domain
//! of classes) can be expressed. Pools are immutable once built.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::imbalance::ImbalanceSpec;
use crate::scalar::Scalar;

pub type ClassId = u32;

#[derive(Debug, Clone, PartialEq)]
struct ClassEntry<T> {
    id: ClassId,
    group: String,
    /// Row-major `[n_samples, dim]`.
    samples: Vec<T>,
}

/// A class-indexed store of feature vectors; the meta-dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPool<T> {
    dim: usize,
    /// Sorted by class id.
    classes: Vec<ClassEntry<T>>,
}

impl<T: Scalar> ClassPool<T> {
    pub fn new(dim: usize) -> Self {
        ClassPool { dim, classes: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Total number of samples across classes.
    pub fn n_samples(&self) -> usize {
        self.classes.iter().map(|c| c.samples.len() / self.dim).sum()
    }

    /// Class ids in ascending order.
    pub fn class_ids(&self) -> Vec<ClassId> {
        self.classes.iter().map(|c| c.id).collect()
    }

    pub fn group_of(&self, id: ClassId) -> Option<&str> {
        self.entry(id).map(|e| e.group.as_str())
    }

    pub fn class_len(&self, id: ClassId) -> Option<usize> {
        self.entry(id).map(|e| e.samples.len() / self.dim)
    }

    /// One sample vector of a class.
    pub fn sample(&self, id: ClassId, index: usize) -> Option<&[T]> {
        let e = self.entry(id)?;
        let start = index * self.dim;
        e.samples.get(start..start + self.dim)
    }

    fn entry(&self, id: ClassId) -> Option<&ClassEntry<T>> {
        self.classes
            .binary_search_by_key(&id, |e| e.id)
            .ok()
            .map(|i| &self.classes[i])
    }

    /// Insert a class; `samples` is row-major `[n, dim]`, must be non-empty.
    pub fn insert_class(&mut self, id: ClassId, group: impl Into<String>, samples: Vec<T>) -> Result<()> {
        if samples.is_empty() || !samples.len().is_multiple_of(self.dim) {
            return Err(Error::InvalidInput(format!(
                "class {id}: sample buffer of {} values is not a non-empty multiple of dim {}",
                samples.len(),
                self.dim
            )));
        }
        match self.classes.binary_search_by_key(&id, |e| e.id) {
            Ok(_) => Err(Error::InvalidInput(format!("duplicate class id {id}"))),
            Err(pos) => {
                self.classes.insert(pos, ClassEntry { id, group: group.into(), samples });
                Ok(())
            }
        }
    }

    /// Distinct group tags present in the pool.
    pub fn groups(&self) -> BTreeSet<String> {
        self.classes.iter().map(|c| c.group.clone()).collect()
    }
}

/// Parameters for the synthetic class-conditional Gaussian generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub dim: usize,
    /// Scale of class means relative to the unit within-class noise.
    pub class_separation: f64,
    /// Classes are assigned to groups round-robin.
    pub n_groups: usize,
    /// Extra mean offset shared by all classes of a group.
    pub group_shift: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.samples_per_class == 0 || self.dim == 0 || self.n_groups == 0 {
            return Err(Error::InvalidInput(format!("degenerate synthetic spec {self:?}")));
        }
        if self.class_separation < 0.0 || self.group_shift < 0.0 {
            return Err(Error::InvalidInput(
                "class_separation and group_shift must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Generate a pool where class `c` draws from an isotropic unit-variance
/// Gaussian around `separation * z_c + group_shift * u_g`, with `z_c` and
/// `u_g` themselves standard normal draws. Fully determined by the seed.
pub fn gen_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<ClassPool<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = StandardNormal;
    let draw = |rng: &mut ChaCha8Rng| -> f64 { normal.sample(rng) };

    let group_dirs: Vec<Vec<f64>> = (0..spec.n_groups)
        .map(|_| (0..spec.dim).map(|_| draw(&mut rng)).collect())
        .collect();

    let mut pool = ClassPool::new(spec.dim);
    for c in 0..spec.n_classes {
        let g = c % spec.n_groups;
        let mean: Vec<f64> = (0..spec.dim)
            .map(|d| spec.class_separation * draw(&mut rng) + spec.group_shift * group_dirs[g][d])
            .collect();
        let mut samples = Vec::with_capacity(spec.samples_per_class * spec.dim);
        for _ in 0..spec.samples_per_class {
            for m in &mean {
                samples.push(T::of(m + draw(&mut rng)));
            }
        }
        pool.insert_class(c as ClassId, format!("g{g}"), samples)?;
    }
    Ok(pool)
}

/// Class-count split; classes are disjoint between the three pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

pub fn split_classes<T: Scalar>(
    pool: &ClassPool<T>,
    split: &SplitSpec,
) -> Result<(ClassPool<T>, ClassPool<T>, ClassPool<T>)> {
    let total = split.n_train + split.n_val + split.n_test;
    if total > pool.n_classes() {
        return Err(Error::InvalidInput(format!(
            "split needs {total} classes but the pool holds {}",
            pool.n_classes()
        )));
    }
    let mut ids = pool.class_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(split.seed);
    ids.shuffle(&mut rng);

    let take = |ids: &[ClassId]| -> Result<ClassPool<T>> {
        let mut out = ClassPool::new(pool.dim);
        for &id in ids {
            let e = pool.entry(id).expect("id from pool");
            out.insert_class(id, e.group.clone(), e.samples.clone())?;
        }
        Ok(out)
    };
    let train = take(&ids[..split.n_train])?;
    let val = take(&ids[split.n_train..split.n_train + split.n_val])?;
    let test = take(&ids[split.n_train + split.n_val..total])?;
    Ok((train, val, test))
}

/// Subsample every class of the pool to the sizes of `spec`'s profile.
///
/// Profile entries are assigned to classes by a seeded permutation, so the
/// size a given class receives varies between seeds while the multiset of
/// sizes stays fixed. Every class must hold at least `k_max` samples.
pub fn induce_imbalance<T: Scalar>(
    pool: &ClassPool<T>,
    spec: &ImbalanceSpec,
    seed: u64,
) -> Result<ClassPool<T>> {
    if spec.n_classes != pool.n_classes() {
        return Err(Error::InvalidInput(format!(
            "imbalance spec covers {} classes but the pool holds {}",
            spec.n_classes,
            pool.n_classes()
        )));
    }
    for e in &pool.classes {
        let have = e.samples.len() / pool.dim;
        if have < spec.k_max {
            return Err(Error::Capacity {
                class_id: e.id,
                available: have,
                required: spec.k_max,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assigned = spec.sizes()?.into_sizes();
    assigned.shuffle(&mut rng);

    let mut out = ClassPool::new(pool.dim);
    for (e, &target) in pool.classes.iter().zip(&assigned) {
        let samples = subsample(e, pool.dim, target, &mut rng);
        out.insert_class(e.id, e.group.clone(), samples)?;
    }
    Ok(out)
}

/// Group-targeted step imbalance: classes of `group` are subsampled to
/// `k_min`, all others to `k_max`. Group membership itself is the assignment,
/// so no shuffling is involved; subsampling takes each class's leading
/// samples, which is unbiased because pool samples carry no order semantics.
pub fn induce_group_step<T: Scalar>(
    pool: &ClassPool<T>,
    group: &str,
    k_min: usize,
    k_max: usize,
) -> Result<ClassPool<T>> {
    if k_min == 0 || k_min > k_max {
        return Err(Error::InvalidInput(format!(
            "group step requires 0 < k_min <= k_max, got ({k_min}, {k_max})"
        )));
    }
    if !pool.classes.iter().any(|e| e.group == group) {
        return Err(Error::InvalidInput(format!(
            "unknown group {group:?}; pool has {:?}",
            pool.groups()
        )));
    }
    let mut out = ClassPool::new(pool.dim);
    for e in &pool.classes {
        let target = if e.group == group { k_min } else { k_max };
        let have = e.samples.len() / pool.dim;
        if have < target {
            return Err(Error::Capacity { class_id: e.id, available: have, required: target });
        }
        out.insert_class(e.id, e.group.clone(), e.samples[..target * pool.dim].to_vec())?;
    }
    Ok(out)
}

/// First `target` entries of a seeded permutation of the class's samples;
/// without replacement by construction.
fn subsample<T: Scalar>(e: &ClassEntry<T>, dim: usize, target: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let n = e.samples.len() / dim;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut out = Vec::with_capacity(target * dim);
    for &i in order.iter().take(target) {
        out.extend_from_slice(&e.samples[i * dim..(i + 1) * dim]);
    }
    out
}

const MANIFEST_HEADER: &str = "fsl-manifest v1";

/// Write the pool as a line-oriented manifest:
///
/// ```text
/// fsl-manifest v1 dim=<d>
/// # <comment>                               (optional, ignored on load)
/// <class_id> <group> <v1>,<v2>,...,<vd>     (one line per sample)
/// ```
///
/// Values use the shortest round-trip decimal form, so load/save cycles are
/// bit-exact.
pub fn write_manifest<T: Scalar + Display, W: Write>(pool: &ClassPool<T>, w: &mut W) -> Result<()> {
    write_manifest_commented(pool, w, &[])
}

/// [`write_manifest`] with `#` comment lines after the header (used to embed
/// provenance such as the generating config hash and seed).
pub fn write_manifest_commented<T: Scalar + Display, W: Write>(
    pool: &ClassPool<T>,
    w: &mut W,
    comments: &[String],
) -> Result<()> {
    writeln!(w, "{MANIFEST_HEADER} dim={}", pool.dim)?;
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    for e in &pool.classes {
        for row in e.samples.chunks_exact(pool.dim) {
            write!(w, "{} {} ", e.id, e.group)?;
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    write!(w, ",")?;
                }
                write!(w, "{v}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

pub fn save_manifest<T: Scalar + Display>(pool: &ClassPool<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_manifest(pool, &mut w)
}

pub fn read_manifest<T: Scalar, R: BufRead>(r: &mut R) -> Result<ClassPool<T>> {
    let mut lines = r.lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse { line: line + 1, message };

    let (n0, header) = lines
        .next()
        .ok_or_else(|| parse_err(0, "empty manifest".into()))?;
    let header = header?;
    let dim: usize = header
        .strip_prefix(MANIFEST_HEADER)
        .and_then(|rest| rest.trim().strip_prefix("dim="))
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| parse_err(n0, format!("bad header {header:?}")))?;
    if dim == 0 {
        return Err(parse_err(n0, "dim must be positive".into()));
    }

    struct Building<T> {
        id: ClassId,
        group: String,
        samples: Vec<T>,
    }
    let mut building: Vec<Building<T>> = Vec::new();
    for (n, line) in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.splitn(3, ' ');
        let id: ClassId = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| parse_err(n, "bad class id".into()))?;
        let group = fields
            .next()
            .ok_or_else(|| parse_err(n, "missing group field".into()))?
            .to_string();
        let values_text = fields
            .next()
            .ok_or_else(|| parse_err(n, "missing values field".into()))?;
        let values: Vec<T> = values_text
            .split(',')
            .map(|tok| tok.trim().parse::<T>().map_err(|e| parse_err(n, format!("bad value {tok:?}: {e}"))))
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(parse_err(n, format!("expected {dim} values, got {}", values.len())));
        }
        match building.iter_mut().find(|b| b.id == id) {
            Some(b) => {
                if b.group != group {
                    return Err(parse_err(
                        n,
                        format!("class {id} group changed from {:?} to {group:?}", b.group),
                    ));
                }
                b.samples.extend(values);
            }
            None => building.push(Building { id, group, samples: values }),
        }
    }
    let mut pool = ClassPool::new(dim);
    for b in building {
        pool.insert_class(b.id, b.group, b.samples)?;
    }
    Ok(pool)
}

pub fn load_manifest<T: Scalar>(path: &Path) -> Result<ClassPool<T>> {
    let mut r = BufReader::new(File::open(path)?);
    read_manifest(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            n_classes: 10,
            samples_per_class: 40,
            dim: 4,
            class_separation: 2.0,
            n_groups: 2,
            group_shift: 0.0,
            seed: 11,
        }
    }

    /// Nearest-class-mean classifier on raw features, independent of any
    /// learner code: fit means on the first half of each class, score the
    /// second half.
    fn nearest_mean_holdout_accuracy(pool: &ClassPool<f64>) -> f64 {
        let ids = pool.class_ids();
        let dim = pool.dim();
        let mut means: Vec<Vec<f64>> = Vec::new();
        for &id in &ids {
            let n = pool.class_len(id).unwrap();
            let half = n / 2;
            let mut m = vec![0.0; dim];
            for i in 0..half {
                for (d, v) in pool.sample(id, i).unwrap().iter().enumerate() {
                    m[d] += v;
                }
            }
            for v in &mut m {
                *v /= half as f64;
            }
            means.push(m);
        }
        let mut correct = 0usize;
        let mut total = 0usize;
        for (ci, &id) in ids.iter().enumerate() {
            let n = pool.class_len(id).unwrap();
            for i in n / 2..n {
                let x = pool.sample(id, i).unwrap();
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (mi, m) in means.iter().enumerate() {
                    let d: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d < best_d {
                        best_d = d;
                        best = mi;
                    }
                }
                if best == ci {
                    correct += 1;
                }
                total += 1;
            }
        }
        correct as f64 / total as f64
    }

    #[test]
    fn generation_is_deterministic() {
        let a: ClassPool<f64> = gen_synthetic(&small_spec()).unwrap();
        let b: ClassPool<f64> = gen_synthetic(&small_spec()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_separation_is_chance_level() {
        let spec = SyntheticSpec {
            class_separation: 0.0,
            n_classes: 5,
            samples_per_class: 400,
            ..small_spec()
        };
        let pool: ClassPool<f64> = gen_synthetic(&spec).unwrap();
        let acc = nearest_mean_holdout_accuracy(&pool);
        // 5 classes, chance 0.2; 1000 held-out points give sigma ~ 0.013.
        assert!((acc - 0.2).abs() < 0.05, "accuracy {acc}");
    }

    #[test]
    fn high_separation_is_nearly_perfect() {
        let spec = SyntheticSpec { class_separation: 10.0, ..small_spec() };
        let pool: ClassPool<f64> = gen_synthetic(&spec).unwrap();
        let acc = nearest_mean_holdout_accuracy(&pool);
        assert!(acc > 0.99, "accuracy {acc}");
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let pool: ClassPool<f64> = gen_synthetic(&SyntheticSpec { n_classes: 100, samples_per_class: 3, ..small_spec() }).unwrap();
        let (tr, va, te) = split_classes(&pool, &SplitSpec { n_train: 64, n_val: 16, n_test: 20, seed: 5 }).unwrap();
        assert_eq!((tr.n_classes(), va.n_classes(), te.n_classes()), (64, 16, 20));
        let a: BTreeSet<_> = tr.class_ids().into_iter().collect();
        let b: BTreeSet<_> = va.class_ids().into_iter().collect();
        let c: BTreeSet<_> = te.class_ids().into_iter().collect();
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
    }

    #[test]
    fn split_all_to_train_and_seed_sensitivity() {
        let pool: ClassPool<f64> = gen_synthetic(&SyntheticSpec { n_classes: 30, samples_per_class: 2, ..small_spec() }).unwrap();
        let (tr, va, te) = split_classes(&pool, &SplitSpec { n_train: 30, n_val: 0, n_test: 0, seed: 1 }).unwrap();
        assert_eq!(tr.n_classes(), 30);
        assert_eq!(va.n_classes() + te.n_classes(), 0);

        let (a, _, _) = split_classes(&pool, &SplitSpec { n_train: 10, n_val: 10, n_test: 10, seed: 1 }).unwrap();
        let (b, _, _) = split_classes(&pool, &SplitSpec { n_train: 10, n_val: 10, n_test: 10, seed: 2 }).unwrap();
        assert_eq!(a.n_classes(), b.n_classes());
        assert_ne!(
            a.class_ids(),
            b.class_ids(),
            "different seeds should pick different memberships"
        );

        let err = split_classes(&pool, &SplitSpec { n_train: 25, n_val: 5, n_test: 5, seed: 0 });
        assert!(err.is_err());
    }

    #[test]
    fn induce_balanced_gives_uniform_sizes() {
        let pool: ClassPool<f64> = gen_synthetic(&SyntheticSpec { n_classes: 8, samples_per_class: 20, ..small_spec() }).unwrap();
        let out = induce_imbalance(&pool, &ImbalanceSpec::balanced(12, 8), 3).unwrap();
        for id in out.class_ids() {
            assert_eq!(out.class_len(id).unwrap(), 12);
        }
    }

    #[test]
    fn induce_step_matches_profile_multiset() {
        let pool: ClassPool<f64> = gen_synthetic(&SyntheticSpec { n_classes: 8, samples_per_class: 30, ..small_spec() }).unwrap();
        let spec = ImbalanceSpec::step(5, 25, 8, 3);
        let out = induce_imbalance(&pool, &spec, 9).unwrap();
        let mut sizes: Vec<usize> = out.class_ids().iter().map(|&id| out.class_len(id).unwrap()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![5, 5, 5, 25, 25, 25, 25, 25]);
    }

    #[test]
    fn induce_seeds_change_assignment_not_multiset() {
        let pool: ClassPool<f64> = gen_synthetic(&SyntheticSpec { n_classes: 12, samples_per_class: 40, ..small_spec() }).unwrap();
        let spec = ImbalanceSpec::linear(3, 30, 12);
        let a = induce_imbalance(&pool, &spec, 1).unwrap();
        let b = induce_imbalance(&pool, &spec, 1).unwrap();
        let c = induce_imbalance(&pool, &spec, 2).unwrap();
        assert_eq!(a, b, "same seed, identical induction");

        let sizes = |p: &ClassPool<f64>| -> Vec<usize> {
            p.class_ids().iter().map(|&id| p.class_len(id).unwrap()).collect()
        };
        assert_ne!(sizes(&a), sizes(&c), "different seed should reassign sizes");
        let mut sa = sizes(&a);
        let mut sc = sizes(&c);
        sa.sort_unstable();
        sc.sort_unstable();
        assert_eq!(sa, sc, "size multiset is seed-independent");
    }

    #[test]
    fn induce_never_duplicates_samples() {
        let pool: ClassPool<f64> = gen_synthetic(&SyntheticSpec { n_classes: 4, samples_per_class: 25, ..small_spec() }).unwrap();
        let out = induce_imbalance(&pool, &ImbalanceSpec::linear(5, 20, 4), 7).unwrap();
        for id in out.class_ids() {
            let n = out.class_len(id).unwrap();
            let mut seen = BTreeSet::new();
            for i in 0..n {
                let key: Vec<u64> = out.sample(id, i).unwrap().iter().map(|v| v.to_bits()).collect();
                assert!(seen.insert(key), "duplicate sample in class {id}");
            }
        }
    }

    #[test]
    fn induce_errors() {
        let pool: ClassPool<f64> = gen_synthetic(&SyntheticSpec { n_classes: 4, samples_per_class: 10, ..small_spec() }).unwrap();
        let err = induce_imbalance(&pool, &ImbalanceSpec::balanced(11, 4), 0).unwrap_err();
        assert!(matches!(err, Error::Capacity { required: 11, .. }), "{err:?}");

        let err = induce_imbalance(&pool, &ImbalanceSpec::balanced(5, 6), 0).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)), "{err:?}");
    }

    #[test]
    fn group_step_shapes() {
        // 2 groups round-robin over 6 classes -> g0 covers ids 0,2,4.
        let pool: ClassPool<f64> = gen_synthetic(&SyntheticSpec { n_classes: 6, samples_per_class: 20, ..small_spec() }).unwrap();
        let out = induce_group_step(&pool, "g0", 4, 15).unwrap();
        for id in out.class_ids() {
            let expect = if out.group_of(id).unwrap() == "g0" { 4 } else { 15 };
            assert_eq!(out.class_len(id).unwrap(), expect);
        }

        assert_eq!(out.n_samples(), 3 * 4 + 3 * 15);

        let err = induce_group_step(&pool, "nope", 4, 15).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)), "{err:?}");
    }

    #[test]
    fn group_step_covering_all_classes() {
        let pool: ClassPool<f64> = gen_synthetic(&SyntheticSpec { n_groups: 1, n_classes: 5, samples_per_class: 20, ..small_spec() }).unwrap();
        let out = induce_group_step(&pool, "g0", 7, 15).unwrap();
        for id in out.class_ids() {
            assert_eq!(out.class_len(id).unwrap(), 7);
        }
    }

    #[test]
    fn manifest_round_trip_is_bit_identical() {
        let pool: ClassPool<f64> = gen_synthetic(&small_spec()).unwrap();
        let mut buf = Vec::new();
        write_manifest(&pool, &mut buf).unwrap();
        let loaded: ClassPool<f64> = read_manifest(&mut buf.as_slice()).unwrap();
        assert_eq!(pool, loaded);

        let mut buf2 = Vec::new();
        write_manifest(&loaded, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn manifest_fixture_loads_as_expected() {
        let text = "fsl-manifest v1 dim=2\n\
                    0 ga 1.5,-2\n\
                    0 ga 0.25,3\n\
                    7 gb -1,0.125\n\
                    7 gb 4,5\n";
        let pool: ClassPool<f64> = read_manifest(&mut text.as_bytes()).unwrap();
        assert_eq!(pool.dim(), 2);
        assert_eq!(pool.class_ids(), vec![0, 7]);
        assert_eq!(pool.sample(0, 1).unwrap(), &[0.25, 3.0]);
        assert_eq!(pool.sample(7, 0).unwrap(), &[-1.0, 0.125]);
        assert_eq!(pool.group_of(7).unwrap(), "gb");
    }

    mod manifest_props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn round_trip_arbitrary_pools(
                dim in 1usize..5,
                class_sizes in proptest::collection::vec(1usize..6, 1..5),
                values in proptest::collection::vec(-1e6f64..1e6, 120),
            ) {
                let mut pool: ClassPool<f64> = ClassPool::new(dim);
                let mut cursor = values.iter().cycle();
                for (c, &n) in class_sizes.iter().enumerate() {
                    let samples: Vec<f64> = (0..n * dim).map(|_| *cursor.next().unwrap()).collect();
                    pool.insert_class(c as ClassId, format!("g{}", c % 2), samples).unwrap();
                }
                let mut buf = Vec::new();
                write_manifest(&pool, &mut buf).unwrap();
                let loaded: ClassPool<f64> = read_manifest(&mut buf.as_slice()).unwrap();
                prop_assert_eq!(pool, loaded);
            }
        }
    }

    #[test]
    fn manifest_rejects_malformed_lines() {
        let text = "fsl-manifest v1 dim=3\n0 ga 1.0,2.0\n";
        let err = read_manifest::<f64, _>(&mut text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");

        let text = "fsl-manifest v1 dim=2\n0 ga 1.0,2.0\n0 gb 1.0,2.0\n";
        let err = read_manifest::<f64, _>(&mut text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");

        let err = read_manifest::<f64, _>(&mut "nope\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err:?}");
    }
}
