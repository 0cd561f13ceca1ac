//! Source/target class similarity by pointwise mutual information.
//!
//! Class attribute scores are turned into distributions over attributes by a
//! row softmax. The joint over (target, source) class pairs is the product
//! of those distributions summed over attributes, normalised to total mass
//! one; the marginals are its row and column sums.

use crate::data::ClassSemantics;
use crate::error::{shape_err, Error, Result};
use crate::numcore::{softmax_axis, Tensor};
use crate::scalar::Scalar;

pub const DEFAULT_FLOOR: f64 = -30.0;

/// Normalised joint `[C^t, C^s]` with its marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct Joint<T = f64> {
    pub joint: Tensor<T>,
    pub target_marginal: Vec<T>,
    pub source_marginal: Vec<T>,
}

/// PMI values indexed `[source, target]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PmiMatrix<T = f64> {
    pub values: Tensor<T>,
    pub floor: T,
}

/// Soft labels in `[0, 1]`, indexed `[source, target]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTargets<T = f64> {
    pub targets: Tensor<T>,
}

impl<T: Scalar> SoftTargets<T> {
    /// Target row for a 1-based source class.
    pub fn row(&self, source_class: usize) -> &[T] {
        self.targets.row(source_class - 1)
    }
}

pub fn class_distributions<T: Scalar>(class_sem: &Tensor<T>) -> Result<Tensor<T>> {
    class_sem.dims2()?;
    softmax_axis(class_sem, 1)
}

pub fn joint_distribution<T: Scalar>(z_target: &Tensor<T>, z_source: &Tensor<T>) -> Result<Joint<T>> {
    let (ct, a) = z_target.dims2()?;
    let (cs, a2) = z_source.dims2()?;
    if a != a2 {
        return Err(shape_err!("attribute counts differ: {a} vs {a2}"));
    }
    let raw = z_target.matmul(&z_source.transpose2()?)?;
    let total = raw.sum();
    if total <= T::zero() {
        return Err(Error::Domain("joint distribution has zero total mass".into()));
    }
    let joint = raw.map(|v| v / total);
    let target_marginal = (0..ct).map(|j| joint.row(j).iter().copied().sum()).collect();
    let source_marginal = (0..cs)
        .map(|i| (0..ct).map(|j| joint.get2(j, i)).sum())
        .collect();
    Ok(Joint {
        joint,
        target_marginal,
        source_marginal,
    })
}

pub fn pmi_matrix<T: Scalar>(joint: &Joint<T>, floor: T) -> Result<PmiMatrix<T>> {
    let (ct, cs) = joint.joint.dims2()?;
    let mut values = Vec::with_capacity(cs * ct);
    for i in 0..cs {
        for j in 0..ct {
            let pj = joint.joint.get2(j, i);
            let denom = joint.source_marginal[i] * joint.target_marginal[j];
            let v = if pj > T::zero() && denom > T::zero() {
                (pj / denom).ln().max(floor)
            } else {
                floor
            };
            values.push(v);
        }
    }
    Ok(PmiMatrix {
        values: Tensor::new([cs, ct], values)?,
        floor,
    })
}

/// Positive part, then scaled by the largest entry when that is positive.
pub fn soft_targets<T: Scalar>(pmi: &PmiMatrix<T>) -> SoftTargets<T> {
    let pos = pmi.values.map(|v| v.max(T::zero()));
    let mx = pos.data().iter().copied().fold(T::zero(), T::max);
    let targets = if mx > T::zero() { pos.map(|v| v / mx) } else { pos };
    SoftTargets { targets }
}

/// Full pipeline from class semantics.
pub fn pmi_targets<T: Scalar>(class_sem: &ClassSemantics<T>) -> Result<(PmiMatrix<T>, SoftTargets<T>)> {
    let zs = class_distributions(&class_sem.source)?;
    let zt = class_distributions(&class_sem.target)?;
    let joint = joint_distribution(&zt, &zs)?;
    let pmi = pmi_matrix(&joint, T::lit(DEFAULT_FLOOR))?;
    let targets = soft_targets(&pmi);
    Ok((pmi, targets))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn distributions_are_row_softmax() {
        let z = class_distributions(&m(&[&[2.0, 2.0, 2.0], &[0.0, 1.0, 5.0]])).unwrap();
        for k in 0..3 {
            assert!((z.get2(0, k) - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((z.row(1).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let shifted = class_distributions(&m(&[&[2.0, 2.0, 2.0], &[7.0, 8.0, 12.0]])).unwrap();
        assert!(z.max_abs_diff(&shifted).unwrap() < 1e-15);
    }

    #[test]
    fn single_class_joint_and_pmi() {
        let j = joint_distribution(&m(&[&[0.3, 0.7]]), &m(&[&[0.6, 0.4]])).unwrap();
        assert_eq!(j.joint.data(), &[1.0]);
        let p = pmi_matrix(&j, -30.0).unwrap();
        assert!(p.values.item().unwrap().abs() < 1e-15);
    }

    #[test]
    fn orthogonal_identity_case() {
        let eye = Tensor::eye(2).unwrap();
        let j = joint_distribution(&eye, &eye).unwrap();
        assert_eq!(j.joint.data(), &[0.5, 0.0, 0.0, 0.5]);
        let p = pmi_matrix(&j, -30.0).unwrap();
        assert!((p.values.get2(0, 0) - 2f64.ln()).abs() < 1e-15);
        assert!((p.values.get2(1, 1) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(p.values.get2(0, 1), -30.0);
        assert_eq!(p.values.get2(1, 0), -30.0);
    }

    #[test]
    fn independence_gives_zero_pmi_and_zero_targets() {
        let j = joint_distribution(&m(&[&[0.5, 0.5], &[0.5, 0.5]]), &m(&[&[0.2, 0.8], &[0.2, 0.8], &[0.2, 0.8]]))
            .unwrap();
        let p = pmi_matrix(&j, -30.0).unwrap();
        assert!(p.values.data().iter().all(|v| v.abs() < 1e-15));
        let t = soft_targets(&p);
        assert!(t.targets.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn targets_scale_and_order() {
        let p = PmiMatrix {
            values: m(&[&[0.4, -1.0], &[0.1, 0.8]]),
            floor: -30.0,
        };
        let t = soft_targets(&p);
        assert_eq!(t.targets.get2(1, 1), 1.0);
        assert_eq!(t.targets.get2(0, 1), 0.0);
        assert!(t.targets.get2(0, 0) > t.targets.get2(1, 0));
        assert!(t.targets.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
