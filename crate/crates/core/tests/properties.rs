//! Property tests over the public API.

use proptest::prelude::*;

use xlmeta::autodiff::{params_from_str, params_to_string, sgd_step, GradSet, ParamSet, Tensor};
use xlmeta::corpus::{cap, Corpus, Sample, Split};
use xlmeta::eval::{macro_f1, mean, sample_std};
use xlmeta::text::{featurize, FeaturizerConfig};

fn labels(n: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (
        prop::collection::vec(0usize..2, n),
        prop::collection::vec(0usize..2, n),
    )
}

fn corpus(sizes: &[(usize, usize)]) -> Corpus {
    let mut samples = Vec::new();
    for (li, &(train, other)) in sizes.iter().enumerate() {
        for i in 0..train + other {
            samples.push(Sample {
                id: format!("l{li}-{i}"),
                text: format!("t{i}"),
                label: (i % 2) as u8,
                language: format!("l{li}"),
                split: if i < train {
                    Split::Train
                } else {
                    Split::Validation
                },
            });
        }
    }
    Corpus::new(samples).unwrap()
}

proptest! {
    #[test]
    fn macro_f1_is_bounded_and_relabeling_invariant((p, g) in (1usize..150).prop_flat_map(labels)) {
        let f = macro_f1(&p, &g).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        let flip = |v: &[usize]| v.iter().map(|x| 1 - x).collect::<Vec<_>>();
        prop_assert_eq!(f, macro_f1(&flip(&p), &flip(&g)).unwrap());
        prop_assert_eq!(macro_f1(&g, &g).unwrap() == 1.0, g.contains(&0) && g.contains(&1));
    }

    #[test]
    fn seed_statistics_ignore_order(mut v in prop::collection::vec(0.0f64..1.0, 1..12), k in 0usize..12) {
        let (m, s) = (mean(&v), sample_std(&v));
        let len = v.len();
        v.rotate_left(k % len);
        prop_assert_eq!(m, mean(&v));
        prop_assert_eq!(s, sample_std(&v));
    }

    #[test]
    fn cap_bounds_training_data(sizes in prop::collection::vec((0usize..60, 0usize..10), 1..4), n in 1usize..50, seed: u64) {
        let c = corpus(&sizes);
        let capped = cap(&c, n, seed).unwrap();
        for (li, &(train, other)) in sizes.iter().enumerate() {
            let l = format!("l{li}");
            prop_assert_eq!(capped.select(&l, Split::Train).len(), train.min(n));
            prop_assert_eq!(capped.select(&l, Split::Validation).len(), other);
        }
        prop_assert_eq!(cap(&capped, n, seed).unwrap().digest(), capped.digest());
    }

    #[test]
    fn featurizer_is_deterministic_and_sorted(text in "[a-z ]{0,60}", seed: u64) {
        let cfg = FeaturizerConfig { dim: 257, hash_seed: seed, ..FeaturizerConfig::default() };
        let a = featurize(&text, &cfg);
        prop_assert_eq!(&a, &featurize(&text, &cfg));
        prop_assert!(a.entries.windows(2).all(|w| w[0].0 < w[1].0));
        prop_assert!(a.entries.iter().all(|&(i, v)| i < 257 && v != 0.0));
    }

    #[test]
    fn sgd_step_is_exact_per_entry(
        w in prop::collection::vec(-10.0f64..10.0, 1..20),
        lr in 0.0f64..1.0,
    ) {
        let n = w.len();
        let g: Vec<f64> = w.iter().map(|x| x * 0.5 - 1.0).collect();
        let params = ParamSet::new().with("w", Tensor::new(vec![n], w.clone()).unwrap()).unwrap();
        let grads = GradSet::new().with("w", Tensor::new(vec![n], g.clone()).unwrap()).unwrap();
        let next = sgd_step(&params, &grads, lr).unwrap();
        for i in 0..n {
            prop_assert_eq!(next.get("w").unwrap().data()[i], w[i] - lr * g[i]);
        }
        let text = params_to_string(&next);
        prop_assert_eq!(params_from_str(&text, std::path::Path::new("mem")).unwrap(), next);
    }
}
