use dzsl::data::{generate_synthetic, SynthSpec};
use dzsl::eval::{
    attention_maps, evaluate_agan, export_attention, harmonic_mean, per_class_top1, score_gzsl, score_zsl,
    test_samples, EvalReport, ProtocolTag,
};
use dzsl::numcore::{uniform, Rng, Tensor};
use dzsl::trainer::{TrainConfig, Trainer};
use proptest::prelude::*;

#[test]
fn gzsl_and_zsl_predictions_on_a_fixed_row() {
    let s = Tensor::new([1, 4], vec![3.0, 1.0, 0.0, 2.0]).unwrap();
    assert_eq!(score_gzsl(&s).unwrap(), vec![1]);
    assert_eq!(score_zsl(&s, 2).unwrap(), vec![4]);
}

#[test]
fn ties_go_to_the_lowest_class() {
    let s = Tensor::new([2, 4], vec![1.0, 2.0, 2.0, 0.0, 0.5, 0.5, 0.5, 0.5]).unwrap();
    assert_eq!(score_gzsl(&s).unwrap(), vec![2, 1]);
    assert_eq!(score_zsl(&s, 1).unwrap(), vec![2, 2]);
}

#[test]
fn per_class_accuracy_is_not_pooled() {
    let acc = per_class_top1(&[1, 2, 1, 1], &[1, 2, 2, 2], &[1, 2]).unwrap();
    assert!((acc.mean - (100.0 + 100.0 / 3.0) / 2.0).abs() < 1e-12);
    assert!(per_class_top1(&[1], &[1], &[1, 2]).is_err());
}

#[test]
fn harmonic_mean_edge_cases() {
    assert_eq!(harmonic_mean(0.0, 80.0), 0.0);
    assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
    assert!((harmonic_mean(42.0, 42.0) - 42.0).abs() < 1e-12);
    assert!((harmonic_mean(64.8, 81.4) - 72.2).abs() <= 0.1);
}

#[test]
fn report_text_round_trips() {
    let mut rng = Rng::new(1, 0);
    let scores: Tensor = uniform(&mut rng, [12, 5], 0.0, 1.0);
    let labels = [1, 2, 3, 1, 2, 3, 4, 5, 4, 5, 4, 5];
    for tag in [ProtocolTag::AganGzsl, ProtocolTag::AfgnZsl] {
        let rep = EvalReport::from_scores(tag, &scores, &labels, 3, 2).unwrap();
        assert_eq!(EvalReport::from_text(&rep.to_text()).unwrap(), rep);
        assert_eq!(rep.s.is_some(), tag.is_gzsl());
        if let (Some(s), Some(h)) = (rep.s, rep.h) {
            assert!((h - harmonic_mean(s, rep.t)).abs() < 1e-12);
        }
    }
}

#[test]
fn untrained_model_reports_are_reproducible() {
    let spec = SynthSpec {
        samples_per_class: 10,
        ..SynthSpec::default()
    };
    let data = generate_synthetic(&spec).unwrap().dataset;
    let t = Trainer::for_data(TrainConfig::default(), &data).unwrap();
    let a = evaluate_agan(&t.agan, &data, true, false).unwrap();
    let b = evaluate_agan(&t.agan, &data, true, false).unwrap();
    assert_eq!(a.to_text(), b.to_text());
    assert_eq!(a.classes.len(), 12);
    assert!(a.per_class.iter().all(|v| (0.0..=100.0).contains(v)));

    let samples = test_samples(&data);
    let maps = attention_maps(&t.agan, &data, &samples[..5]).unwrap();
    for m in &maps {
        assert!((m.alpha2.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(m.alpha2.len(), spec.regions);
    }
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    export_attention(&maps, d1.path()).unwrap();
    export_attention(&attention_maps(&t.agan, &data, &samples[..5]).unwrap(), d2.path()).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(d1.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.iter().any(|n| n == "attention.tsv"));
    for n in names {
        assert_eq!(std::fs::read(d1.path().join(&n)).unwrap(), std::fs::read(d2.path().join(&n)).unwrap());
    }
}

proptest! {
    #[test]
    fn per_class_matches_a_brute_force_tally(
        pairs in prop::collection::vec((1usize..5, 1usize..5), 1..60),
    ) {
        let (preds, labels): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let mut classes: Vec<usize> = labels.clone();
        classes.sort();
        classes.dedup();
        let got = per_class_top1(&preds, &labels, &classes).unwrap();
        let mut sum = 0.0;
        for (k, &c) in classes.iter().enumerate() {
            let total = labels.iter().filter(|&&y| y == c).count();
            let hit = preds.iter().zip(&labels).filter(|(&p, &y)| y == c && p == c).count();
            let acc = 100.0 * hit as f64 / total as f64;
            prop_assert!((got.accuracies[k] - acc).abs() < 1e-12);
            sum += acc;
        }
        prop_assert!((got.mean - sum / classes.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn zsl_agrees_with_gzsl_when_gzsl_picks_a_target(seed in 0u64..1000, ns in 1usize..4, nt in 1usize..4) {
        let scores: Tensor = uniform(&mut Rng::new(seed, 0), [8, ns + nt], -1.0, 1.0);
        let g = score_gzsl(&scores).unwrap();
        let z = score_zsl(&scores, ns).unwrap();
        for (a, b) in g.iter().zip(&z) {
            prop_assert!(*b > ns);
            if *a > ns {
                prop_assert_eq!(a, b);
            }
        }
    }
}
