//! Deterministic synthetic fine-grained datasets with planted attribute
//! structure.
//!
//! Every attribute `k` owns a unit direction `u_k` in the first half of the
//! region-feature space; the other half carries only noise. A class is a set
//! of "present" attributes, each scored by a fixed per-attribute strength.
//! Each region of a sample picks one attribute with probability proportional
//! to the class scores and emits `a_c^k · u_k` plus isotropic Gaussian noise.
//!
//! Present-attribute sets are built from disjoint attribute blocks: every
//! class is a pair of blocks. Source classes are chosen so that they cover
//! every block and the block graph they span is connected with an odd cycle.
//! That makes every target class a combination of blocks already seen on the
//! source side, with at least half of its attributes shared with some source
//! class.

use serde::{Deserialize, Serialize};

use super::{AttributeSemantics, ClassSemantics, Dataset, FeatureBundle, Split};
use crate::error::{Error, Result};
use crate::numcore::{gaussian, Rng, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_source: usize,
    pub n_target: usize,
    pub n_attributes: usize,
    pub regions: usize,
    pub dim: usize,
    pub attr_dim: usize,
    pub samples_per_class: usize,
    pub noise: f64,
    pub seed: u64,
    /// Fraction of each source class held out as the test-source split.
    pub source_test_fraction: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_source: 8,
            n_target: 4,
            n_attributes: 12,
            regions: 9,
            dim: 64,
            attr_dim: 16,
            samples_per_class: 40,
            noise: 0.1,
            seed: 0,
            source_test_fraction: 0.3,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_source", self.n_source),
            ("n_target", self.n_target),
            ("regions", self.regions),
            ("dim", self.dim),
            ("samples_per_class", self.samples_per_class),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.n_attributes < 2 || self.attr_dim < 2 {
            return Err(Error::Config("need at least 2 attributes and attr_dim >= 2".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("noise must be a finite value >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.source_test_fraction) {
            return Err(Error::Config("source_test_fraction must lie in [0, 1)".into()));
        }
        let train = self.train_per_class();
        if train == 0 || (self.source_test_fraction > 0.0 && train == self.samples_per_class) {
            return Err(Error::Config(
                "samples_per_class too small for the requested source split".into(),
            ));
        }
        Ok(())
    }

    pub fn train_per_class(&self) -> usize {
        let held = (self.samples_per_class as f64 * self.source_test_fraction).round() as usize;
        self.samples_per_class - held
    }
}

/// Ground truth kept alongside generated data for attention diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTruth<T = f64> {
    /// Attribute emitted by each region, `N·r` entries in sample-major order.
    pub region_attributes: Vec<usize>,
    /// Unit directions `u_k`, `[A, d]`.
    pub directions: Tensor<T>,
    /// Present-attribute set of every class, indexed by `class - 1`.
    pub class_attributes: Vec<Vec<usize>>,
}

impl<T: Scalar> PlantedTruth<T> {
    /// Attribute with the highest score in the given class.
    pub fn top_attribute(&self, class_sem: &ClassSemantics<T>, class: usize) -> usize {
        let a = class_sem.vector(class);
        let mut best = 0;
        for k in 1..a.len() {
            if a[k] > a[best] {
                best = k;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData<T = f64> {
    pub dataset: Dataset<T>,
    pub truth: PlantedTruth<T>,
}

/// Groups attribute indices into `floor(A/2)` blocks (the last absorbs a leftover).
fn attribute_blocks(rng: &mut Rng, n_attr: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n_attr).collect();
    rng.shuffle(&mut order);
    let n_blocks = (n_attr / 2).max(1);
    let mut blocks: Vec<Vec<usize>> = order.chunks(2).map(<[usize]>::to_vec).collect();
    if blocks.len() > n_blocks {
        let extra = blocks.pop().unwrap();
        blocks.last_mut().unwrap().extend(extra);
    }
    for b in &mut blocks {
        b.sort_unstable();
    }
    blocks
}

/// True when the edge set touches every vertex in `0..n`, is connected and
/// contains an odd cycle, i.e. edge indicators span all vertex indicators.
fn spans_all_blocks(n: usize, edges: &[(usize, usize)]) -> bool {
    // Two-colour BFS per component.
    let mut colour = vec![usize::MAX; n];
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    if adj.iter().any(Vec::is_empty) {
        return false;
    }
    colour[0] = 0;
    let mut queue = vec![0];
    let mut odd = false;
    while let Some(v) = queue.pop() {
        for &w in &adj[v] {
            if colour[w] == usize::MAX {
                colour[w] = 1 - colour[v];
                queue.push(w);
            } else if colour[w] == colour[v] {
                odd = true;
            }
        }
    }
    odd && colour.iter().all(|&c| c != usize::MAX)
}

fn class_attribute_sets(rng: &mut Rng, spec: &SynthSpec) -> Vec<Vec<usize>> {
    let n_classes = spec.n_source + spec.n_target;
    let blocks = attribute_blocks(rng, spec.n_attributes);
    let nb = blocks.len();
    let mut pairs = Vec::new();
    for a in 0..nb {
        for b in a + 1..nb {
            pairs.push((a, b));
        }
    }
    if nb >= 3 && pairs.len() >= n_classes {
        let mut chosen = pairs.clone();
        for _ in 0..1000 {
            rng.shuffle(&mut pairs);
            chosen.clone_from(&pairs);
            if spec.n_source < nb || spans_all_blocks(nb, &pairs[..spec.n_source]) {
                break;
            }
        }
        return chosen[..n_classes]
            .iter()
            .map(|&(a, b)| {
                let mut s = [blocks[a].clone(), blocks[b].clone()].concat();
                s.sort_unstable();
                s
            })
            .collect();
    }
    // Too few blocks for distinct pairs: random sets, each target class
    // inheriting half of its attributes from a random source class.
    let size = (spec.n_attributes / 3).max(1);
    let mut sets: Vec<Vec<usize>> = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let mut set = Vec::with_capacity(size);
        if c >= spec.n_source {
            let parent = &sets[rng.below(spec.n_source)];
            set.extend(parent.iter().take(size.div_ceil(2)));
        }
        while set.len() < size {
            let k = rng.below(spec.n_attributes);
            if !set.contains(&k) {
                set.push(k);
            }
        }
        set.sort_unstable();
        sets.push(set);
    }
    sets
}

pub fn generate_synthetic<T: Scalar>(spec: &SynthSpec) -> Result<SyntheticData<T>> {
    spec.validate()?;
    let (n_attr, r, d) = (spec.n_attributes, spec.regions, spec.dim);
    let n_classes = spec.n_source + spec.n_target;
    let mut rng = Rng::new(spec.seed, 0);

    // Per-attribute strengths: evenly spaced in [0.5, 1], randomly assigned.
    let mut strengths: Vec<f64> = (0..n_attr)
        .map(|j| 0.5 + 0.5 * j as f64 / (n_attr - 1) as f64)
        .collect();
    rng.shuffle(&mut strengths);

    let class_sets = class_attribute_sets(&mut rng, spec);
    let mut scores = vec![T::zero(); n_classes * n_attr];
    for (c, set) in class_sets.iter().enumerate() {
        for &k in set {
            scores[c * n_attr + k] = T::lit(strengths[k]);
        }
    }
    let class_sem = ClassSemantics {
        source: Tensor::new([spec.n_source, n_attr], scores[..spec.n_source * n_attr].to_vec())?,
        target: Tensor::new([spec.n_target, n_attr], scores[spec.n_source * n_attr..].to_vec())?,
    };

    let planted_dims = (d / 2).max(1);
    let mut directions = vec![T::zero(); n_attr * d];
    for k in 0..n_attr {
        let u: Tensor<T> = gaussian(&mut rng, [planted_dims]);
        let norm = u.data().iter().map(|&x| x * x).sum::<T>().sqrt();
        for (j, &x) in u.data().iter().enumerate() {
            directions[k * d + j] = x / norm;
        }
    }
    let directions = Tensor::new([n_attr, d], directions)?;

    let inv_sqrt_g = T::lit(1.0 / (spec.attr_dim as f64).sqrt());
    let attr_sem = AttributeSemantics {
        vectors: gaussian::<T>(&mut rng, [n_attr, spec.attr_dim]).map(|v| v * inv_sqrt_g),
    };

    let mut sample_rng = rng.fork(1);
    let noise = T::lit(spec.noise);
    let n = n_classes * spec.samples_per_class;
    let mut feats = Vec::with_capacity(n * r * d);
    let mut labels = Vec::with_capacity(n);
    let mut split = Vec::with_capacity(n);
    let mut region_attributes = Vec::with_capacity(n * r);
    let train_per_class = spec.train_per_class();
    for c in 0..n_classes {
        let a = &scores[c * n_attr..(c + 1) * n_attr];
        let total: T = a.iter().copied().sum();
        for s in 0..spec.samples_per_class {
            for _ in 0..r {
                let k = draw_proportional(&mut sample_rng, a, total);
                region_attributes.push(k);
                for j in 0..d {
                    let e: T = sample_rng.normal();
                    feats.push(a[k] * directions.get2(k, j) + noise * e);
                }
            }
            labels.push(c + 1);
            split.push(if c >= spec.n_source {
                Split::TestTarget
            } else if s < train_per_class {
                Split::TrainSource
            } else {
                Split::TestSource
            });
        }
    }
    let features = FeatureBundle::new(Tensor::new([n, r, d], feats)?, labels, split)?;
    Ok(SyntheticData {
        dataset: Dataset {
            features,
            class_sem,
            attr_sem,
        },
        truth: PlantedTruth {
            region_attributes,
            directions,
            class_attributes: class_sets,
        },
    })
}

fn draw_proportional<T: Scalar>(rng: &mut Rng, weights: &[T], total: T) -> usize {
    let u = rng.uniform(T::zero(), total);
    let mut acc = T::zero();
    let mut last = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w <= T::zero() {
            continue;
        }
        acc += w;
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}
