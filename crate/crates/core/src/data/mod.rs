//! Feature bundles, class/attribute semantics, validation and the
//! synthetic dataset generator.
//!
//! Class indices are 1-based throughout: source classes are `1..=C^s`,
//! target classes `C^s+1..=C^s+C^t`.

pub mod bundle;
pub mod synth;
mod validate;

use std::fmt;
use std::path::Path;

pub use bundle::{Bundle, DType};
pub use synth::{generate_synthetic, PlantedTruth, SynthSpec, SyntheticData};
pub use validate::{validate, ValidationReport, Violation, ViolationKind};

use crate::error::{shape_err, Error, Result};
use crate::numcore::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    TrainSource,
    TestSource,
    TestTarget,
}

impl Split {
    pub fn code(self) -> u32 {
        match self {
            Split::TrainSource => 0,
            Split::TestSource => 1,
            Split::TestTarget => 2,
        }
    }

    pub fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(Split::TrainSource),
            1 => Ok(Split::TestSource),
            2 => Ok(Split::TestTarget),
            _ => Err(Error::Format(format!("unknown split code {c}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::TrainSource => "train-source",
            Split::TestSource => "test-source",
            Split::TestTarget => "test-target",
        })
    }
}

/// Region features of `N` samples, shape `[N, r, d]`, with labels and split tags.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle<T = f64> {
    pub features: Tensor<T>,
    pub labels: Vec<usize>,
    pub split: Vec<Split>,
}

impl<T: Scalar> FeatureBundle<T> {
    pub fn new(features: Tensor<T>, labels: Vec<usize>, split: Vec<Split>) -> Result<Self> {
        if features.rank() != 3 {
            return Err(shape_err!("features must be [N, r, d], got {:?}", features.shape()));
        }
        let n = features.shape()[0];
        if labels.len() != n || split.len() != n {
            return Err(shape_err!(
                "{n} samples but {} labels and {} split tags",
                labels.len(),
                split.len()
            ));
        }
        Ok(Self {
            features,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn regions(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[2]
    }

    /// Region features of one sample as an `r × d` slice.
    pub fn sample(&self, i: usize) -> &[T] {
        let block = self.regions() * self.dim();
        &self.features.data()[i * block..(i + 1) * block]
    }

    /// Stacks the region features of `indices` into a `[len·r, d]` matrix.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(indices.len() * self.regions() * self.dim());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Tensor::new([indices.len() * self.regions(), self.dim()], data)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }
}

/// Per-class attribute scores, source rows then target rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSemantics<T = f64> {
    pub source: Tensor<T>,
    pub target: Tensor<T>,
}

impl<T: Scalar> ClassSemantics<T> {
    pub fn n_source(&self) -> usize {
        self.source.shape()[0]
    }

    pub fn n_target(&self) -> usize {
        self.target.shape()[0]
    }

    pub fn n_classes(&self) -> usize {
        self.n_source() + self.n_target()
    }

    pub fn n_attributes(&self) -> usize {
        self.source.shape()[1]
    }

    pub fn is_source(&self, class: usize) -> bool {
        (1..=self.n_source()).contains(&class)
    }

    pub fn is_target(&self, class: usize) -> bool {
        (self.n_source() + 1..=self.n_classes()).contains(&class)
    }

    /// Attribute scores of a 1-based class index.
    pub fn vector(&self, class: usize) -> &[T] {
        let cs = self.n_source();
        if class <= cs {
            self.source.row(class - 1)
        } else {
            self.target.row(class - cs - 1)
        }
    }

    /// All classes stacked, `[C^s + C^t, A]`.
    pub fn all(&self) -> Result<Tensor<T>> {
        let mut data = self.source.data().to_vec();
        data.extend_from_slice(self.target.data());
        Tensor::new([self.n_classes(), self.n_attributes()], data)
    }
}

/// One embedding vector per attribute, `[A, g]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeSemantics<T = f64> {
    pub vectors: Tensor<T>,
}

impl<T: Scalar> AttributeSemantics<T> {
    pub fn n_attributes(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }
}

/// Features together with both semantics tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T = f64> {
    pub features: FeatureBundle<T>,
    pub class_sem: ClassSemantics<T>,
    pub attr_sem: AttributeSemantics<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn to_bundle(&self) -> Result<Bundle> {
        let mut b = Bundle::new();
        b.meta.insert("kind".into(), "dataset".into());
        b.put_f32("features", &self.features.features)?;
        b.put_u32(
            "labels",
            vec![self.features.len()],
            self.features.labels.iter().map(|&l| l as u32).collect(),
        )?;
        b.put_u32(
            "split",
            vec![self.features.len()],
            self.features.split.iter().map(|s| s.code()).collect(),
        )?;
        b.put_f32("class_sem_source", &self.class_sem.source)?;
        b.put_f32("class_sem_target", &self.class_sem.target)?;
        b.put_f32("attr_sem", &self.attr_sem.vectors)?;
        Ok(b)
    }

    pub fn from_bundle(b: &Bundle) -> Result<Self> {
        let features: Tensor<T> = b.tensor("features")?;
        let (_, labels) = b.u32s("labels")?;
        let (_, split) = b.u32s("split")?;
        let split = split.iter().map(|&c| Split::from_code(c)).collect::<Result<_>>()?;
        let features = FeatureBundle::new(
            features,
            labels.iter().map(|&l| l as usize).collect(),
            split,
        )?;
        let class_sem = ClassSemantics {
            source: matrix(b, "class_sem_source")?,
            target: matrix(b, "class_sem_target")?,
        };
        let attr_sem = AttributeSemantics {
            vectors: matrix(b, "attr_sem")?,
        };
        Ok(Self {
            features,
            class_sem,
            attr_sem,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.to_bundle()?.save(dir)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        Self::from_bundle(&Bundle::load(dir)?)
    }
}

fn matrix<T: Scalar>(b: &Bundle, name: &str) -> Result<Tensor<T>> {
    let t: Tensor<T> = b.tensor(name)?;
    t.dims2()?;
    Ok(t)
}

/// Writes features and semantics into one bundle directory.
pub fn save_bundle<T: Scalar>(dataset: &Dataset<T>, dir: impl AsRef<Path>) -> Result<()> {
    dataset.save(dir)
}

pub fn load_bundle<T: Scalar>(dir: impl AsRef<Path>) -> Result<Dataset<T>> {
    Dataset::load(dir)
}
