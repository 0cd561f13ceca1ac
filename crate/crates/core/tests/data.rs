use dzsl::data::{
    generate_synthetic, load_bundle, save_bundle, validate, Dataset, Split, SynthSpec, ViolationKind,
};
use dzsl::numcore::Tensor;
use dzsl::Error;
use proptest::prelude::*;

fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        samples_per_class: 10,
        seed,
        ..SynthSpec::default()
    }
}

/// Solves `m x = y` for a small dense system by Gaussian elimination with
/// partial pivoting.
fn solve(mut m: Vec<Vec<f64>>, mut y: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = m.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        m.swap(col, piv);
        y.swap(col, piv);
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = m[row][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            for k in 0..y[row].len() {
                y[row][k] -= f * y[col][k];
            }
        }
    }
    for row in 0..n {
        let d = m[row][row];
        for v in &mut y[row] {
            *v /= d;
        }
    }
    y
}

#[test]
fn generated_shapes_follow_the_spec() {
    let spec = SynthSpec::default();
    let data = generate_synthetic::<f64>(&spec).unwrap().dataset;
    let n = (spec.n_source + spec.n_target) * spec.samples_per_class;
    assert_eq!(data.features.features.shape(), &[n, spec.regions, spec.dim]);
    assert_eq!(data.features.labels.len(), n);
    assert_eq!(data.class_sem.source.shape(), &[8, 12]);
    assert_eq!(data.class_sem.target.shape(), &[4, 12]);
    assert_eq!(data.attr_sem.vectors.shape(), &[12, 16]);
    assert!(validate(&data).passed());
}

#[test]
fn same_seed_same_data() {
    let a = generate_synthetic::<f64>(&small_spec(5)).unwrap();
    let b = generate_synthetic::<f64>(&small_spec(5)).unwrap();
    let c = generate_synthetic::<f64>(&small_spec(6)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.dataset, c.dataset);
}

#[test]
fn splits_partition_and_respect_labels() {
    let data = generate_synthetic::<f64>(&SynthSpec::default()).unwrap().dataset;
    let cs = data.class_sem.n_source();
    let mut seen = vec![0usize; data.features.len()];
    for split in [Split::TrainSource, Split::TestSource, Split::TestTarget] {
        for i in data.features.indices(split) {
            seen[i] += 1;
            let y = data.features.labels[i];
            match split {
                Split::TestTarget => assert!(y > cs),
                _ => assert!((1..=cs).contains(&y)),
            }
        }
    }
    assert!(seen.iter().all(|&k| k == 1));
}

#[test]
fn noiseless_regions_are_scaled_attribute_directions() {
    let spec = SynthSpec {
        noise: 0.0,
        ..small_spec(3)
    };
    let synth = generate_synthetic::<f64>(&spec).unwrap();
    let (data, truth) = (&synth.dataset, &synth.truth);
    let d = spec.dim;
    let feats = data.features.features.data();
    for (row, &k) in truth.region_attributes.iter().enumerate() {
        let x = &feats[row * d..(row + 1) * d];
        let u = truth.directions.row(k);
        let proj: f64 = x.iter().zip(u).map(|(a, b)| a * b).sum();
        let resid: f64 = x
            .iter()
            .zip(u)
            .map(|(a, b)| (a - proj * b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(resid < 1e-9, "row {row}: residual {resid}");
        let label = data.features.labels[row / spec.regions];
        assert!((proj - data.class_sem.vector(label)[k]).abs() < 1e-9);
    }
}

#[test]
fn target_classes_share_attributes_with_some_source_class() {
    for seed in 0..10 {
        let data = generate_synthetic::<f64>(&small_spec(seed)).unwrap().dataset;
        let cs = data.class_sem.n_source();
        let present = |c: usize| -> Vec<usize> {
            let a = data.class_sem.vector(c);
            (0..a.len()).filter(|&k| a[k] > 0.0).collect()
        };
        for t in cs + 1..=data.class_sem.n_classes() {
            let pt = present(t);
            let best = (1..=cs)
                .map(|s| present(s).iter().filter(|k| pt.contains(k)).count())
                .max()
                .unwrap();
            assert!(2 * best >= pt.len(), "seed {seed}, class {t}");
        }
    }
}

#[test]
fn least_squares_probe_on_planted_channels_separates_source_classes() {
    let synth = generate_synthetic::<f64>(&SynthSpec::default()).unwrap();
    let data = &synth.dataset;
    let (r, d) = (data.features.regions(), data.features.dim());
    let n_attr = data.class_sem.n_attributes();
    let cs = data.class_sem.n_source();
    let train = data.features.indices(Split::TrainSource);
    // Features: region-summed projections onto every planted direction, plus a bias.
    let phi = |i: usize| -> Vec<f64> {
        let x = data.features.sample(i);
        let mut f = vec![0.0; n_attr + 1];
        for reg in 0..r {
            let xr = &x[reg * d..(reg + 1) * d];
            for (k, fk) in f.iter_mut().take(n_attr).enumerate() {
                *fk += xr.iter().zip(synth.truth.directions.row(k)).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        f[n_attr] = 1.0;
        f
    };
    let p = n_attr + 1;
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![vec![0.0; cs]; p];
    for &i in &train {
        let f = phi(i);
        let y = data.features.labels[i] - 1;
        for a in 0..p {
            for b in 0..p {
                xtx[a][b] += f[a] * f[b];
            }
            xty[a][y] += f[a];
        }
    }
    for (a, row) in xtx.iter_mut().enumerate() {
        row[a] += 1e-6;
    }
    let w = solve(xtx, xty);
    let correct = train
        .iter()
        .filter(|&&i| {
            let f = phi(i);
            let scores: Vec<f64> = (0..cs).map(|c| (0..p).map(|a| f[a] * w[a][c]).sum()).collect();
            let arg = (0..cs).fold(0, |b, c| if scores[c] > scores[b] { c } else { b });
            arg + 1 == data.features.labels[i]
        })
        .count();
    let acc = correct as f64 / train.len() as f64;
    assert!(acc >= 0.95, "probe accuracy {acc}");
}

#[test]
fn validation_reports_mismatches() {
    let data = generate_synthetic::<f64>(&small_spec(1)).unwrap().dataset;
    let mut bad = data.clone();
    let i = bad.features.indices(Split::TestTarget)[0];
    bad.features.labels[i] = 1;
    assert!(validate(&bad).has(ViolationKind::LabelSplitMismatch));

    let mut bad = data;
    bad.attr_sem.vectors = Tensor::zeros([10, 16]).unwrap();
    assert!(validate(&bad).has(ViolationKind::AttributeCountMismatch));
}

#[test]
fn dataset_round_trip_is_lossless_at_storage_precision() {
    let data = generate_synthetic::<f64>(&small_spec(2)).unwrap().dataset;
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&data, dir.path()).unwrap();
    let back: Dataset<f64> = load_bundle(dir.path()).unwrap();
    assert_eq!(back.features.labels, data.features.labels);
    assert_eq!(back.features.split, data.features.split);
    let diff = back.features.features.max_abs_diff(&data.features.features).unwrap();
    assert!(diff <= 1e-6, "{diff}");
    // A second trip is exact: values already sit on the storage grid.
    let dir2 = tempfile::tempdir().unwrap();
    save_bundle(&back, dir2.path()).unwrap();
    assert_eq!(load_bundle::<f64>(dir2.path()).unwrap(), back);
}

#[test]
fn corrupted_payload_is_refused() {
    let data = generate_synthetic::<f64>(&small_spec(2)).unwrap().dataset;
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&data, dir.path()).unwrap();
    let path = dir.path().join("features.bin");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(load_bundle::<f64>(dir.path()), Err(Error::Format(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn any_small_spec_round_trips(
        seed in 0u64..1000,
        cs in 1usize..4,
        ct in 1usize..3,
        attrs in 2usize..7,
        regions in 1usize..4,
        noise in 0.0f64..0.5,
    ) {
        let spec = SynthSpec {
            n_source: cs,
            n_target: ct,
            n_attributes: attrs,
            regions,
            dim: 6,
            attr_dim: 3,
            samples_per_class: 4,
            noise,
            seed,
            source_test_fraction: 0.25,
        };
        let data = generate_synthetic::<f32>(&spec).unwrap().dataset;
        prop_assert!(validate(&data).passed());
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&data, dir.path()).unwrap();
        let back: Dataset<f32> = load_bundle(dir.path()).unwrap();
        prop_assert_eq!(back, data);
    }
}
