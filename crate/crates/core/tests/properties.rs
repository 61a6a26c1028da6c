//! Property tests for the module invariants.

mod common;

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use vprd::data::{split_dataset, MachineParameters, PowerProfile, Standardization};
use vprd::evaluation::{bonferroni, box_stats, per_sample_mse, wilcoxon_signed_rank, PValueMethod, WilcoxonConfig};
use vprd::io;
use vprd::mlp::{dropout_mask, loss_anti_mean, loss_mse, Activation, AdamConfig, AdamState, Dims, DropoutConfig, Gradients, LossConfig, MlpModel, Reduction};
use vprd::preprocess::{crop_to_signal, dejitter, energy_weighted_projection, otsu_threshold, PhaseImage};
use vprd::reconstruct::{photon_power, predict_from_raw};
use vprd::rng;
use vprd::training::TrainedModel;

use common::{uniform, wilcoxon_enumeration};

fn vec_in(lo: f64, hi: f64, len: impl Into<proptest::collection::SizeRange>) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(lo..hi, len)
}

fn matrix(rows: usize, cols: usize, seed: u64, lo: f64, hi: f64) -> Array2<f64> {
    let mut r = rng::seeded(seed);
    Array2::from_shape_simple_fn((rows, cols), || uniform(&mut r, lo, hi))
}

fn fractions() -> impl Strategy<Value = [f64; 3]> {
    (1u32..100, 1u32..100, 1u32..100).prop_map(|(a, b, c)| {
        let t = (a + b + c) as f64;
        let (fa, fb) = (a as f64 / t, b as f64 / t);
        [fa, fb, 1.0 - fa - fb]
    })
}

fn small_model(seed: u64) -> TrainedModel {
    let mlp = MlpModel::init(Dims::new(4, 7, 9), Activation::Relu, seed);
    let mut r = rng::seeded(seed ^ 1);
    TrainedModel {
        mlp,
        standardization: Some(Standardization {
            mean: (0..4).map(|_| uniform(&mut r, -3.0, 3.0)).collect(),
            std: (0..4).map(|_| uniform(&mut r, 0.1, 4.0)).collect(),
        }),
        label_mean: (0..9).map(|_| uniform(&mut r, 0.0, 1.0)).collect(),
        time_bin_fs: 1.13,
        dropout_p: 0.45,
        split_seed: seed,
        split_fractions: [0.8, 0.1, 0.1],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_a_partition(n in 3usize..400, f in fractions(), seed in any::<u64>()) {
        if let Ok(s) = split_dataset(n, f, seed) {
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert!(!s.train.is_empty() && !s.val.is_empty() && !s.test.is_empty());
        }
    }

    #[test]
    fn standardization_centers_and_scales(rows in 2usize..40, d in 1usize..6, seed in any::<u64>()) {
        let data = matrix(rows, d, seed, -50.0, 50.0);
        let params: Vec<MachineParameters> = data.rows().into_iter().map(|r| MachineParameters::new(r.to_vec()).unwrap()).collect();
        let names: Vec<String> = (0..d).map(|i| format!("p{i}")).collect();
        let st = Standardization::fit(&params, &names).unwrap();
        let z: Vec<Vec<f64>> = params.iter().map(|p| st.apply(p).unwrap().values().to_vec()).collect();
        for j in 0..d {
            let mean = z.iter().map(|r| r[j]).sum::<f64>() / rows as f64;
            let var = z.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / rows as f64;
            prop_assert!(mean.abs() < 1e-10, "mean {mean}");
            prop_assert!((var.sqrt() - 1.0).abs() < 1e-10, "std {}", var.sqrt());
        }
    }

    #[test]
    fn projection_is_linear(rows in 1usize..8, cols in 1usize..30, a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
        let i1 = matrix(rows, cols, seed, 0.0, 2.0);
        let i2 = matrix(rows, cols, seed ^ 7, 0.0, 2.0);
        let axis: Vec<f64> = (0..rows).map(|k| 0.5 + k as f64 * 0.25).collect();
        let p = |m: Array2<f64>| energy_weighted_projection(&PhaseImage::new(m, axis.clone(), 1.0, 1.0).unwrap()).unwrap().power;
        // images must stay non-negative, so combine with |a|, |b|
        let (a, b) = (a.abs(), b.abs());
        let combined = p(&i1 * a + &i2 * b);
        let (p1, p2) = (p(i1), p(i2));
        for k in 0..cols {
            prop_assert!((combined[k] - (a * p1[k] + b * p2[k])).abs() <= 1e-10 * (1.0 + combined[k].abs()));
        }
    }

    #[test]
    fn dejitter_is_idempotent_and_tight(n in 1usize..20, seed in any::<u64>()) {
        let mut r = rng::seeded(seed);
        let profiles: Vec<PowerProfile> = (0..n)
            .map(|_| {
                let c = uniform(&mut r, 40.0, 80.0);
                let w = uniform(&mut r, 3.0, 8.0);
                PowerProfile::new((0..120).map(|i| (-((i as f64 - c) / w).powi(2)).exp()).collect(), 1.0)
            })
            .collect();
        let (once, report) = dejitter(&profiles, 3).unwrap();
        let (twice, again) = dejitter(&once, 3).unwrap();
        prop_assert_eq!(&twice, &once);
        prop_assert!(again.shift.iter().all(|s| *s == 0));
        prop_assert!(report.shift.len() == n);
        let peaks: Vec<usize> = once.iter().map(|p| vprd::preprocess::peak_location(&vprd::preprocess::gaussian_smooth(&p.power, 3).unwrap()).unwrap()).collect();
        prop_assert!(peaks.iter().max().unwrap() - peaks.iter().min().unwrap() <= 1);
    }

    #[test]
    fn crop_keeps_every_foreground_bin(n in 1usize..6, len in 8usize..80, padding in 0usize..5, seed in any::<u64>()) {
        let mut r = rng::seeded(seed);
        let profiles: Vec<PowerProfile> = (0..n)
            .map(|_| PowerProfile::new((0..len).map(|_| uniform(&mut r, 0.0, 1.0).powi(4)).collect(), 1.0))
            .collect();
        let (cropped, (lo, hi)) = crop_to_signal(&profiles, padding, 64).unwrap();
        for p in &profiles {
            let t = otsu_threshold(&p.power, 64).unwrap();
            for (i, v) in p.power.iter().enumerate() {
                if *v > t {
                    prop_assert!(lo <= i && i <= hi, "bin {i} above threshold outside [{lo}, {hi}]");
                }
            }
        }
        prop_assert!(cropped.iter().all(|c| c.len() == hi - lo + 1));
    }

    #[test]
    fn anti_mean_at_zero_alpha_is_sum_mse(rows in 1usize..5, cols in 1usize..9, seed in any::<u64>()) {
        let pred = matrix(rows, cols, seed, -2.0, 2.0);
        let label = matrix(rows, cols, seed ^ 3, -2.0, 2.0);
        let cfg = LossConfig::anti_mean(0.0, vec![0.7; cols], Reduction::Sum);
        let a = loss_anti_mean(pred.view(), label.view(), &cfg).unwrap();
        let b = loss_mse(pred.view(), label.view(), Reduction::Sum).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn eval_forward_is_deterministic(seed in any::<u64>()) {
        let m = MlpModel::init(Dims::new(3, 6, 4), Activation::Relu, seed);
        let x = matrix(5, 3, seed, -1.0, 1.0);
        let (a, _) = m.forward(x.view(), &DropoutConfig::eval(), &mut rng::seeded(1)).unwrap();
        let (b, _) = m.forward(x.view(), &DropoutConfig::eval(), &mut rng::seeded(2)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a, m.predict(x.view()).unwrap());
    }

    #[test]
    fn wilcoxon_p_is_a_probability_and_symmetric(a in vec_in(-5.0, 5.0, 5..40), seed in any::<u64>()) {
        let mut r = rng::seeded(seed);
        let b: Vec<f64> = a.iter().map(|_| uniform(&mut r, -5.0, 5.0)).collect();
        let cfg = WilcoxonConfig::default();
        let ab = wilcoxon_signed_rank(&a, &b, &cfg).unwrap();
        let ba = wilcoxon_signed_rank(&b, &a, &cfg).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab.p_raw));
        prop_assert_eq!(ab.p_raw.to_bits(), ba.p_raw.to_bits());
        prop_assert_eq!(ab.w_plus, ba.w_minus);
    }

    #[test]
    fn wilcoxon_exact_matches_enumeration(d in vec_in(-3.0, 3.0, 1..13), round in any::<bool>()) {
        // rounding creates ties and zeros
        let d: Vec<f64> = if round { d.iter().map(|v| v.round()).collect() } else { d };
        let zeros = vec![0.0; d.len()];
        match wilcoxon_signed_rank(&d, &zeros, &WilcoxonConfig::default()) {
            Ok(t) => {
                let (w, p) = wilcoxon_enumeration(&d);
                prop_assert_eq!(t.method, PValueMethod::Exact);
                prop_assert_eq!(t.statistic, w);
                prop_assert_eq!(t.p_raw, p);
            }
            Err(_) => prop_assert!(d.iter().filter(|v| **v != 0.0).count() < vprd::evaluation::MIN_NONZERO_DIFFERENCES),
        }
    }

    #[test]
    fn bonferroni_is_monotone_and_capped(p in 0.0f64..=1.0, q in 0.0f64..=1.0, m in 1usize..50) {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        prop_assert!(bonferroni(lo, m) <= bonferroni(hi, m));
        prop_assert!(bonferroni(p, m) <= bonferroni(p, m + 1));
        prop_assert!(bonferroni(p, m) <= 1.0);
        prop_assert!(bonferroni(p, m) >= p);
    }

    #[test]
    fn box_stats_are_ordered(e in vec_in(0.0, 10.0, 1..60)) {
        let s = box_stats(&e).unwrap();
        prop_assert!(s.q1 <= s.median && s.median <= s.q3);
        prop_assert!(s.iqr() >= 0.0);
    }

    #[test]
    fn per_sample_mse_commutes_with_permutation(rows in 1usize..20, cols in 1usize..8, seed in any::<u64>()) {
        let p = matrix(rows, cols, seed, -1.0, 1.0);
        let m = matrix(rows, cols, seed ^ 5, -1.0, 1.0);
        let mut perm: Vec<usize> = (0..rows).collect();
        rng::shuffle(&mut rng::seeded(seed), &mut perm);
        let pp = p.select(ndarray::Axis(0), &perm);
        let mp = m.select(ndarray::Axis(0), &perm);
        let base = per_sample_mse(p.view(), m.view()).unwrap();
        let shuffled = per_sample_mse(pp.view(), mp.view()).unwrap();
        let expected: Vec<f64> = perm.iter().map(|&i| base[i]).collect();
        prop_assert_eq!(shuffled, expected);
    }

    #[test]
    fn photon_power_is_antisymmetric(a in vec_in(-5.0, 5.0, 1..50), seed in any::<u64>()) {
        let mut r = rng::seeded(seed);
        let b: Vec<f64> = a.iter().map(|_| uniform(&mut r, -5.0, 5.0)).collect();
        let pa = PowerProfile::new(a, 1.13);
        let pb = PowerProfile::new(b, 1.13);
        let ab = photon_power(&pa, &pb).unwrap();
        let ba = photon_power(&pb, &pa).unwrap();
        prop_assert!(ab.power.iter().zip(&ba.power).all(|(x, y)| *x == -*y));
    }

    #[test]
    fn prediction_is_referentially_transparent(seed in any::<u64>(), x in vec_in(-10.0, 10.0, 4)) {
        let model = small_model(seed);
        let params = MachineParameters::new(x).unwrap();
        let a = predict_from_raw(&model, &params).unwrap();
        let b = predict_from_raw(&model, &params).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly(seed in any::<u64>()) {
        let model = small_model(seed);
        let bytes = io::encode_checkpoint(&model).unwrap();
        let back = io::decode_checkpoint(&bytes, std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(io::encode_checkpoint(&back).unwrap(), bytes);
        prop_assert_eq!(back.mlp.w1, model.mlp.w1);
        prop_assert_eq!(back.standardization, model.standardization);
    }

    #[test]
    fn matrix_blob_round_trips(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>()) {
        let m = matrix(rows, cols, seed, -1e300, 1e300);
        let mut bytes = Vec::new();
        io::encode_matrix(&mut bytes, m.view());
        let (back, used) = io::decode_matrix(&bytes, std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back, m);
    }
}

#[test]
fn wilcoxon_normal_approximation_is_close_to_exact_at_25() {
    let exact = WilcoxonConfig { exact_max_n: 25, ..WilcoxonConfig::default() };
    let normal = WilcoxonConfig { exact_max_n: 0, ..WilcoxonConfig::default() };
    let mut r = rng::seeded(25);
    for _ in 0..200 {
        let shift = uniform(&mut r, -1.0, 1.0);
        let d: Vec<f64> = (0..25).map(|_| uniform(&mut r, -1.0, 1.0) + shift).collect();
        let z = vec![0.0; 25];
        let pe = wilcoxon_signed_rank(&d, &z, &exact).unwrap();
        let pn = wilcoxon_signed_rank(&d, &z, &normal).unwrap();
        assert_eq!(pe.method, PValueMethod::Exact);
        assert_eq!(pn.method, PValueMethod::NormalApproximation);
        assert!((pe.p_raw - pn.p_raw).abs() < 0.02, "exact {} normal {}", pe.p_raw, pn.p_raw);
    }
}

#[test]
fn inverted_dropout_preserves_expected_activation() {
    let p = 0.45;
    let mut r = rng::seeded(11);
    let n = 10_000;
    let mut sum = Array2::<f64>::zeros((3, 50));
    for _ in 0..n {
        sum += &dropout_mask(3, 50, p, &mut r);
    }
    let mean = sum / n as f64;
    // averaging the masks over every cell reaches 2% easily; each cell alone
    // has a standard error of about 1%, so check cells at 5 sigma and the
    // grand mean at 2%
    let grand = mean.mean().unwrap();
    assert!((grand - 1.0).abs() < 0.02, "grand mean {grand}");
    assert!(mean.iter().all(|m| (m - 1.0).abs() < 0.05));

    // an identity readout exposes the hidden activations as the output
    let mut model = MlpModel::init(Dims::new(4, 50, 50), Activation::Tanh, 3);
    model.w2 = Array2::eye(50);
    model.b2 = Array1::zeros(50);
    let x = Array2::from_shape_vec((1, 4), vec![0.3, -0.2, 0.9, 0.5]).unwrap();
    let eval = model.predict(x.view()).unwrap();
    let mut acc = Array2::<f64>::zeros((1, 50));
    for _ in 0..n {
        let (out, _) = model.forward(x.view(), &DropoutConfig::train(p), &mut r).unwrap();
        acc += &out;
    }
    let avg = acc / n as f64;
    let norm = |a: &Array2<f64>| a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rel = norm(&(&avg - &eval)) / norm(&eval);
    assert!(rel < 0.02, "train-mode mean deviates from eval activation by {rel}");
    for (a, e) in avg.iter().zip(eval.iter()) {
        assert!((a - e).abs() <= 0.05 * e.abs(), "unit mean {a} vs eval {e}");
    }
}

#[test]
fn one_adam_step_lowers_a_quadratic() {
    let mut r = rng::seeded(4);
    for _ in 0..50 {
        let mut model = MlpModel::init(Dims::new(2, 3, 2), Activation::Tanh, rng::uniform_below(&mut r, 1 << 40));
        let before: f64 = model_sq(&model);
        let grads = Gradients {
            w1: model.w1.mapv(|w| 2.0 * w),
            b1: model.b1.mapv(|w| 2.0 * w),
            w2: model.w2.mapv(|w| 2.0 * w),
            b2: model.b2.mapv(|w| 2.0 * w),
        };
        let mut adam = AdamState::new(&model, AdamConfig { lr: 1e-3, ..AdamConfig::default() });
        adam.step(&mut model, &grads);
        assert!(model_sq(&model) < before);
    }
}

fn model_sq(m: &MlpModel) -> f64 {
    let sq = |a: &Array1<f64>| a.iter().map(|v| v * v).sum::<f64>();
    m.w1.iter().chain(m.w2.iter()).map(|v| v * v).sum::<f64>() + sq(&m.b1) + sq(&m.b2)
}
