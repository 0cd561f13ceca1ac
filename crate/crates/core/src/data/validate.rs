use std::fmt;

use super::{Dataset, Split};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    LabelSplitMismatch,
    AttributeCountMismatch,
    NonFinite,
    Shape,
    Empty,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::LabelSplitMismatch => "label/split mismatch",
            ViolationKind::AttributeCountMismatch => "attribute count mismatch",
            ViolationKind::NonFinite => "non-finite values",
            ViolationKind::Shape => "shape",
            ViolationKind::Empty => "empty",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, kind: ViolationKind, detail: impl Into<String>) {
        self.violations.push(Violation {
            kind,
            detail: detail.into(),
        });
    }
}

/// Checks every dataset invariant; violations are collected, never raised.
pub fn validate<T: Scalar>(ds: &Dataset<T>) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let fb = &ds.features;
    let cs = &ds.class_sem;

    if fb.is_empty() {
        rep.push(ViolationKind::Empty, "no samples");
    }
    if !fb.features.is_finite() {
        rep.push(ViolationKind::NonFinite, "region features");
    }
    if !cs.source.is_finite() || !cs.target.is_finite() {
        rep.push(ViolationKind::NonFinite, "class semantics");
    }
    if !ds.attr_sem.vectors.is_finite() {
        rep.push(ViolationKind::NonFinite, "attribute semantics");
    }

    if cs.source.rank() != 2 || cs.target.rank() != 2 || ds.attr_sem.vectors.rank() != 2 {
        rep.push(ViolationKind::Shape, "semantics tables must be matrices");
        return rep;
    }
    let a_src = cs.source.shape()[1];
    let a_tgt = cs.target.shape()[1];
    let a_attr = ds.attr_sem.n_attributes();
    if a_src != a_tgt || a_src != a_attr {
        rep.push(
            ViolationKind::AttributeCountMismatch,
            format!("class semantics have A={a_src}/{a_tgt}, attribute semantics A={a_attr}"),
        );
    }
    if a_src < 2 {
        rep.push(ViolationKind::Shape, format!("A={a_src} < 2"));
    }
    if ds.attr_sem.dim() < 2 {
        rep.push(ViolationKind::Shape, format!("attribute embedding dim {} < 2", ds.attr_sem.dim()));
    }

    let n_src = cs.n_source();
    let n_all = cs.n_classes();
    let mut bad = 0;
    let mut first = None;
    for (i, (&label, &split)) in fb.labels.iter().zip(&fb.split).enumerate() {
        let ok = match split {
            Split::TrainSource | Split::TestSource => (1..=n_src).contains(&label),
            Split::TestTarget => (n_src + 1..=n_all).contains(&label),
        };
        if !ok {
            bad += 1;
            first.get_or_insert((i, label, split));
        }
    }
    if let Some((i, label, split)) = first {
        rep.push(
            ViolationKind::LabelSplitMismatch,
            format!("{bad} sample(s), first #{i}: label {label} tagged {split}"),
        );
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AttributeSemantics, ClassSemantics, FeatureBundle};
    use crate::numcore::Tensor;

    fn toy(a_class: usize, a_attr: usize) -> Dataset<f64> {
        let features = Tensor::full([3, 2, 4], 0.5).unwrap();
        Dataset {
            features: FeatureBundle::new(
                features,
                vec![1, 2, 3],
                vec![Split::TrainSource, Split::TestSource, Split::TestTarget],
            )
            .unwrap(),
            class_sem: ClassSemantics {
                source: Tensor::full([2, a_class], 1.0).unwrap(),
                target: Tensor::full([1, a_class], 0.5).unwrap(),
            },
            attr_sem: AttributeSemantics {
                vectors: Tensor::full([a_attr, 3], 0.1).unwrap(),
            },
        }
    }

    #[test]
    fn consistent_toy_passes() {
        assert!(validate(&toy(4, 4)).passed());
    }

    #[test]
    fn target_label_in_source_range() {
        let mut ds = toy(4, 4);
        ds.features.labels[2] = 1;
        let rep = validate(&ds);
        assert!(rep.has(ViolationKind::LabelSplitMismatch));
        assert!(rep.violations[0].to_string().starts_with("label/split mismatch"));
    }

    #[test]
    fn attribute_count_mismatch() {
        let rep = validate(&toy(12, 10));
        assert!(rep.has(ViolationKind::AttributeCountMismatch));
        assert!(rep.violations[0].to_string().starts_with("attribute count mismatch"));
    }
}
