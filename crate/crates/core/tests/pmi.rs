use dzsl::data::ClassSemantics;
use dzsl::numcore::{uniform, Rng, Tensor};
use dzsl::pmi::{class_distributions, joint_distribution, pmi_matrix, pmi_targets, soft_targets, DEFAULT_FLOOR};
use proptest::prelude::*;

/// Scalar oracle: `[source][target]` pmi and soft targets.
fn brute_force(source: &[Vec<f64>], target: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let softmax = |row: &Vec<f64>| -> Vec<f64> {
        let mx = row.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    };
    let zs: Vec<Vec<f64>> = source.iter().map(softmax).collect();
    let zt: Vec<Vec<f64>> = target.iter().map(softmax).collect();
    let (cs, ct, a) = (zs.len(), zt.len(), zs[0].len());
    let mut joint = vec![vec![0.0; cs]; ct];
    let mut total = 0.0;
    for j in 0..ct {
        for i in 0..cs {
            for k in 0..a {
                joint[j][i] += zt[j][k] * zs[i][k];
            }
            total += joint[j][i];
        }
    }
    let mut ps = vec![0.0; cs];
    let mut pt = vec![0.0; ct];
    for j in 0..ct {
        for i in 0..cs {
            joint[j][i] /= total;
            ps[i] += joint[j][i];
            pt[j] += joint[j][i];
        }
    }
    let pmi: Vec<Vec<f64>> = (0..cs)
        .map(|i| (0..ct).map(|j| (joint[j][i] / (ps[i] * pt[j])).ln()).collect())
        .collect();
    let mx = pmi.iter().flatten().cloned().fold(0.0, f64::max);
    let soft = pmi
        .iter()
        .map(|row| row.iter().map(|&v| if mx > 0.0 { v.max(0.0) / mx } else { v.max(0.0) }).collect())
        .collect();
    (pmi, soft)
}

fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.shape()[0]).map(|i| t.row(i).to_vec()).collect()
}

#[test]
fn pipeline_matches_brute_force_on_all_small_sizes() {
    let mut rng = Rng::new(9, 0);
    for cs in 1..=5 {
        for ct in 1..=5 {
            for a in [2, 3, 5] {
                let sem = ClassSemantics {
                    source: uniform(&mut rng, [cs, a], 0.0, 3.0),
                    target: uniform(&mut rng, [ct, a], 0.0, 3.0),
                };
                let (pmi, soft) = pmi_targets(&sem).unwrap();
                let (want_pmi, want_soft) = brute_force(&to_rows(&sem.source), &to_rows(&sem.target));
                for i in 0..cs {
                    for j in 0..ct {
                        assert!((pmi.values.get2(i, j) - want_pmi[i][j]).abs() <= 1e-12, "{cs}x{ct} pmi");
                        assert!((soft.targets.get2(i, j) - want_soft[i][j]).abs() <= 1e-12, "{cs}x{ct} soft");
                    }
                }
            }
        }
    }
}

#[test]
fn single_pair_has_zero_pmi() {
    let sem: ClassSemantics = ClassSemantics {
        source: Tensor::from_rows(&[vec![1.0, 0.0, 2.0]]).unwrap(),
        target: Tensor::from_rows(&[vec![0.5, 0.5, 0.0]]).unwrap(),
    };
    let (pmi, soft) = pmi_targets(&sem).unwrap();
    assert!(pmi.values.get2(0, 0).abs() < 1e-15);
    assert_eq!(soft.targets.get2(0, 0), 0.0);
}

#[test]
fn zero_joint_cells_take_the_floor() {
    let joint = dzsl::pmi::Joint {
        joint: Tensor::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap(),
        target_marginal: vec![0.5, 0.5],
        source_marginal: vec![0.5, 0.5],
    };
    let pmi = pmi_matrix(&joint, DEFAULT_FLOOR).unwrap();
    assert_eq!(pmi.values.get2(0, 1), DEFAULT_FLOOR);
    assert!((pmi.values.get2(0, 0) - 2f64.ln()).abs() < 1e-15);
}

fn semantics(cs: usize, ct: usize, a: usize, seed: u64) -> ClassSemantics {
    let mut rng = Rng::new(seed, 0);
    ClassSemantics {
        source: uniform(&mut rng, [cs, a], 0.0, 4.0),
        target: uniform(&mut rng, [ct, a], 0.0, 4.0),
    }
}

proptest! {
    #[test]
    fn swapping_roles_transposes(cs in 1usize..6, ct in 1usize..6, a in 2usize..6, seed in 0u64..500) {
        let sem = semantics(cs, ct, a, seed);
        let zs = class_distributions(&sem.source).unwrap();
        let zt = class_distributions(&sem.target).unwrap();
        let forward = pmi_matrix(&joint_distribution(&zt, &zs).unwrap(), DEFAULT_FLOOR).unwrap();
        let swapped = pmi_matrix(&joint_distribution(&zs, &zt).unwrap(), DEFAULT_FLOOR).unwrap();
        let diff = forward.values.transpose2().unwrap().max_abs_diff(&swapped.values).unwrap();
        prop_assert!(diff <= 1e-12);
    }

    #[test]
    fn soft_targets_are_bounded_and_order_preserving(cs in 1usize..6, ct in 1usize..6, a in 2usize..6, seed in 0u64..500) {
        let sem = semantics(cs, ct, a, seed);
        let (pmi, soft) = pmi_targets(&sem).unwrap();
        let p = pmi.values.data();
        let s = soft.targets.data();
        prop_assert!(s.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let best = (0..p.len()).fold(0, |b, k| if p[k] > p[b] { k } else { b });
        if p[best] > 0.0 {
            prop_assert_eq!(s[best], 1.0);
        }
        for x in 0..p.len() {
            for y in 0..p.len() {
                if p[x] > p[y] && p[y] > 0.0 {
                    prop_assert!(s[x] > s[y]);
                }
            }
        }
        let again = soft_targets(&pmi);
        prop_assert_eq!(again, soft);
    }
}
