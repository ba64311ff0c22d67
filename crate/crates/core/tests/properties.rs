mod common;

use std::f64::consts::PI;

use common::{is_unimodal_at, rel_err};
use cpl::data::{read_csv, split, write_csv, LabeledDataset, Provenance, Sample, SplitSpec};
use cpl::distributions::{
    argmax, proxy_distribution, similarity_logits, softmax, unimodal_target, SmoothingFunction,
    SmoothingKind,
};
use cpl::geometry::{gen_linear_proxies, gen_semicircular_proxies, norm, ProxySet, Similarity};
use cpl::losses::{loss_basic, loss_cross_entropy, loss_unimodal};
use cpl::geometry::LayoutKind;
use proptest::prelude::*;
use std::path::Path;

fn vector(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, d)
}

/// Two vectors of dimension `d` that span a plane.
fn plane(d: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (vector(d), vector(d)).prop_filter("v0, v1 must span a plane", |(a, b)| {
        let (na, nb) = (norm(a), norm(b));
        na > 1e-3 && nb > 1e-3 && (cpl::geometry::dot(a, b) / (na * nb)).abs() < 0.999
    })
}

fn similarity() -> impl Strategy<Value = Similarity> {
    prop_oneof![
        Just(Similarity::EuclideanT),
        (1.01..20.0f64).prop_map(|scale| Similarity::Cosine { scale }),
        Just(Similarity::NegEuclidean),
    ]
}

fn smoothing() -> impl Strategy<Value = SmoothingKind> {
    prop_oneof![
        (0.05..1.0f64).prop_map(|tau| SmoothingFunction::Poisson { tau }),
        (0.05..1.0f64).prop_map(|tau| SmoothingFunction::Binomial { tau }),
        (0.1..50.0f64).prop_map(|tau| SmoothingFunction::Exponential { tau }),
        (0.01..1.0f64, 0.01..1.0f64)
            .prop_filter("a > b", |(a, b)| a > b)
            .prop_map(|(a, b)| SmoothingFunction::Triangular { a, b }),
    ]
    .prop_map(SmoothingKind::new)
}

proptest! {
    #[test]
    fn softmax_is_shift_invariant(z in prop::collection::vec(-50.0..50.0f64, 1..12), c in -1e3..1e3f64) {
        let a = softmax(&z).unwrap();
        let shifted: Vec<f64> = z.iter().map(|x| x + c).collect();
        let b = softmax(&shifted).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_a_distribution(z in prop::collection::vec(-30.0..30.0f64, 1..12)) {
        let p = softmax(&z).unwrap();
        prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.probs().iter().all(|x| *x > 0.0));
    }

    #[test]
    fn smoothing_targets_are_unimodal(kind in smoothing(), k in 2usize..=32, pick in 0.0..1.0f64) {
        let k_star = ((pick * k as f64) as usize).min(k - 1);
        let u = unimodal_target(k_star, kind, k).unwrap();
        prop_assert!((u.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(is_unimodal_at(u.probs(), k_star), "{:?} K={} k*={}: {:?}", kind, k, k_star, u.probs());
    }

    #[test]
    fn target_entropy_grows_with_tau(binomial in any::<bool>(), k in 3usize..=16, pick in 0.0..1.0f64) {
        let k_star = ((pick * k as f64) as usize).min(k - 1);
        let entropies: Vec<f64> = [0.07, 0.09, 0.11, 0.13, 0.15, 0.17]
            .iter()
            .map(|&tau| {
                let f = if binomial {
                    SmoothingFunction::Binomial { tau }
                } else {
                    SmoothingFunction::Poisson { tau }
                };
                unimodal_target(k_star, SmoothingKind::new(f), k).unwrap().entropy()
            })
            .collect();
        prop_assert!(entropies.windows(2).all(|w| w[0] < w[1]), "{:?}", entropies);
    }

    #[test]
    fn linear_layout_targets_are_unimodal(v0 in vector(3), k in 2usize..=16, pick in 0.0..1.0f64) {
        prop_assume!(norm(&v0) > 1e-3);
        let k_star = ((pick * k as f64) as usize).min(k - 1);
        let proxies = gen_linear_proxies(&v0, k).unwrap();
        let logits = similarity_logits(proxies.get(k_star), &proxies, Similarity::EuclideanT).unwrap();
        for j in 0..k {
            for i in 0..k {
                if i.abs_diff(k_star) < j.abs_diff(k_star) {
                    prop_assert!(logits[i] > logits[j]);
                }
            }
        }
        let q = proxy_distribution(k_star, &proxies, Similarity::EuclideanT).unwrap();
        prop_assert!(is_unimodal_at(q.probs(), k_star));
    }

    #[test]
    fn semicircle_similarities_follow_the_angle(
        (v0, v1) in plane(4),
        k in 2usize..=16,
        scale in 1.01..20.0f64,
        pick in 0.0..1.0f64,
    ) {
        let k_star = ((pick * k as f64) as usize).min(k - 1);
        let proxies = gen_semicircular_proxies(&v0, &v1, k).unwrap();
        let kind = Similarity::Cosine { scale };
        let logits = similarity_logits(proxies.get(k_star), &proxies, kind).unwrap();
        let beta = PI / (k - 1) as f64;
        for (j, z) in logits.iter().enumerate() {
            let expected = scale * (j.abs_diff(k_star) as f64 * beta).cos();
            prop_assert!((z - expected).abs() < 1e-9);
        }
        let q = proxy_distribution(k_star, &proxies, kind).unwrap();
        prop_assert!(is_unimodal_at(q.probs(), k_star));
    }

    #[test]
    fn semicircle_is_unit_evenly_spaced_and_scale_free(
        (v0, v1) in plane(5),
        k in 2usize..=16,
        a in 1e-3..1e3f64,
        b in 1e-3..1e3f64,
    ) {
        let proxies = gen_semicircular_proxies(&v0, &v1, k).unwrap();
        let beta = PI / (k - 1) as f64;
        for (i, p) in proxies.iter().enumerate() {
            prop_assert!((norm(p) - 1.0).abs() < 1e-9);
            if i > 0 {
                let q = proxies.get(i - 1);
                let diff: Vec<f64> = p.iter().zip(q).map(|(x, y)| x - y).collect();
                let sum: Vec<f64> = p.iter().zip(q).map(|(x, y)| x + y).collect();
                let angle = 2.0 * norm(&diff).atan2(norm(&sum));
                prop_assert!((angle - beta).abs() < 1e-9);
            }
        }
        let sa: Vec<f64> = v0.iter().map(|x| a * x).collect();
        let sb: Vec<f64> = v1.iter().map(|x| b * x).collect();
        let rescaled = gen_semicircular_proxies(&sa, &sb, k).unwrap();
        for (p, q) in proxies.iter().zip(rescaled.iter()) {
            for (x, y) in p.iter().zip(q) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn similarity_gradients_match_finite_differences(kind in similarity(), f in vector(4), p in vector(4)) {
        let gap: Vec<f64> = f.iter().zip(&p).map(|(a, b)| a - b).collect();
        prop_assume!(norm(&gap) > 1e-3 && norm(&f) > 1e-2 && norm(&p) > 1e-2);
        let g = kind.grad(&f, &p).unwrap();
        let h = 1e-5;
        let fd = |x: &[f64], wrt_f: bool| -> Vec<f64> {
            (0..x.len())
                .map(|i| {
                    let mut up = x.to_vec();
                    let mut down = x.to_vec();
                    up[i] += h;
                    down[i] -= h;
                    let (a, b) = if wrt_f {
                        (kind.eval(&up, &p).unwrap(), kind.eval(&down, &p).unwrap())
                    } else {
                        (kind.eval(&f, &up).unwrap(), kind.eval(&f, &down).unwrap())
                    };
                    (a - b) / (2.0 * h)
                })
                .collect()
        };
        prop_assert!(rel_err(&g.wrt_feature, &fd(&f, true)) < 1e-6);
        prop_assert!(rel_err(&g.wrt_proxy, &fd(&p, false)) < 1e-6);
    }

    #[test]
    fn argmax_survives_monotone_transforms(z in prop::collection::vec(-10.0..10.0f64, 1..12), a in 0.01..10.0f64, c in -5.0..5.0f64) {
        let affine: Vec<f64> = z.iter().map(|x| a * x + c).collect();
        let exp: Vec<f64> = z.iter().map(|x| x.exp()).collect();
        prop_assert_eq!(argmax(&z), argmax(&affine));
        prop_assert_eq!(argmax(&z), argmax(&exp));
        prop_assert_eq!(argmax(&z), softmax(&z).unwrap().mode());
    }

    #[test]
    fn cosine_prediction_ignores_feature_scale(
        f in vector(3),
        vs in prop::collection::vec(vector(3), 2..8),
        c in 1e-3..1e3f64,
        scale in 1.01..20.0f64,
    ) {
        prop_assume!(norm(&f) > 1e-3 && vs.iter().all(|v| norm(v) > 1e-3));
        let proxies = ProxySet::new(vs).unwrap();
        let kind = Similarity::Cosine { scale };
        let scaled: Vec<f64> = f.iter().map(|x| c * x).collect();
        let a = similarity_logits(&f, &proxies, kind).unwrap();
        let b = similarity_logits(&scaled, &proxies, kind).unwrap();
        prop_assert_eq!(argmax(&a), argmax(&b));
    }

    #[test]
    fn losses_are_finite_and_non_negative(
        kind in similarity(),
        smooth in smoothing(),
        f in vector(3),
        vs in prop::collection::vec(vector(3), 2..8),
        pick in 0.0..1.0f64,
    ) {
        prop_assume!(norm(&f) > 1e-3 && vs.iter().all(|v| norm(v) > 1e-3));
        let k = vs.len();
        let k_star = ((pick * k as f64) as usize).min(k - 1);
        let proxies = ProxySet::new(vs).unwrap();
        for value in [
            loss_basic(&f, k_star, &proxies, kind).unwrap().value,
            loss_cross_entropy(&f, k_star, &proxies, kind).unwrap().value,
            loss_unimodal(k_star, &proxies, kind, smooth, LayoutKind::SoftFree).unwrap().value,
        ] {
            prop_assert!(value.is_finite() && value >= -1e-15, "{}", value);
        }
    }

    #[test]
    fn split_is_a_stratified_partition(
        counts in prop::collection::vec(1usize..30, 2..6),
        seed in any::<u64>(),
    ) {
        let k = counts.len();
        let samples: Vec<Sample> = counts
            .iter()
            .enumerate()
            .flat_map(|(label, &n)| (0..n).map(move |i| Sample { x: vec![i as f64, label as f64], label }))
            .collect();
        let n = samples.len();
        let dataset = LabeledDataset::new(samples, k, 2, Provenance::SyntheticLinear).unwrap();
        let spec = SplitSpec { train: 0.75, val: 0.05, test: 0.2, seed };
        prop_assume!(((0.05 * n as f64).round() as usize) > 0);
        let (train, val, test) = split(&dataset, &spec).unwrap();
        prop_assert_eq!(train.len() + val.len() + test.len(), n);
        let mut all: Vec<(Vec<u64>, usize)> = [&train, &val, &test]
            .iter()
            .flat_map(|d| d.samples.iter().map(|s| (s.x.iter().map(|v| v.to_bits()).collect(), s.label)))
            .collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), n);
        for (part, frac) in [(&train, 0.75), (&val, 0.05), (&test, 0.2)] {
            for (c, &total) in part.class_counts().iter().zip(&counts) {
                let expected = frac * total as f64;
                prop_assert!((*c as f64 - expected).abs() <= 1.0 + 1e-9, "class share {} vs {}", c, expected);
            }
        }
        let again = split(&dataset, &spec).unwrap();
        prop_assert_eq!(train.samples, again.0.samples);
    }

    #[test]
    fn csv_round_trip(
        rows in prop::collection::vec((prop::collection::vec(-1e6..1e6f64, 3), 0usize..4), 1..20),
    ) {
        let samples: Vec<Sample> = rows.into_iter().map(|(x, label)| Sample { x, label }).collect();
        let dataset = LabeledDataset::new(samples, 4, 3, Provenance::SyntheticLinear).unwrap();
        let mut buf = Vec::new();
        write_csv(&dataset, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), Path::new("mem.csv"), Some(4)).unwrap();
        prop_assert_eq!(back.samples, dataset.samples);
    }
}
