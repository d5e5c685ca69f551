use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::embeddings::EmbeddedGroups;
use crate::nn::grad_check;

fn toy_config(variant: Variant, m: usize, d: usize) -> ModelConfig {
    ModelConfig {
        variant,
        attributes: m,
        embedding_dim: d,
        sim_dif_dim: 5,
        hidden_dim: 7,
        trainable_query_dim: 3,
        context_dim: 4,
        value_dim: 4,
        pooling: AttributePooling::Concat,
        seed: 11,
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Array2<f64> {
    Array2::from_shape_fn((d, n), |_| rng.random_range(-1.0..1.0))
}

fn random_pair(rng: &mut ChaCha8Rng, m: usize, d: usize, sizes: (usize, usize, usize)) -> EmbeddedPair {
    EmbeddedPair {
        per_attribute: (0..m)
            .map(|_| EmbeddedGroups {
                shared: random_matrix(rng, d, sizes.0),
                unique_left: random_matrix(rng, d, sizes.1),
                unique_right: random_matrix(rng, d, sizes.2),
            })
            .collect(),
    }
}

fn random_twin(rng: &mut ChaCha8Rng, m: usize, d: usize) -> TwinEmbeddedPair {
    TwinEmbeddedPair {
        per_attribute: (0..m)
            .map(|_| (random_matrix(rng, d, 3), random_matrix(rng, d, 2)))
            .collect(),
    }
}

fn features_for(variant: Variant, rng: &mut ChaCha8Rng, m: usize, d: usize) -> PairFeatures {
    match variant {
        Variant::TwinSum => PairFeatures::Twin(random_twin(rng, m, d)),
        _ => PairFeatures::Contrasted(random_pair(rng, m, d, (2, 2, 1))),
    }
}

fn set_param(model: &mut Model, name: &str, values: &[f64]) {
    let p = model.params_mut().by_name_mut(name).unwrap();
    assert_eq!(p.data.len(), values.len(), "{name}");
    p.data.copy_from_slice(values);
}

fn gradient_error(model: &Model, features: &PairFeatures, label: bool, eps: f64) -> f64 {
    check_gradients(model, features, label, eps, 0.0).unwrap().max_rel_error
}

#[test]
fn parameter_counts_match_closed_forms() {
    // Hand-expanded oracle: 2m·(d·64+64) + (2·64·m·256+256) + (256·2+2).
    let sum = |m: usize, d: usize| 2 * m * (d * 64 + 64) + (128 * m * 256 + 256) + (256 * 2 + 2);
    assert_eq!(sum(10, 300), 713_730);
    assert_eq!(sum(1, 300), 72_066);
    for m in [1, 10] {
        let model = Model::new(ModelConfig::new(Variant::Sum, m, 300)).unwrap();
        assert_eq!(model.num_parameters(), sum(m, 300));
    }
    assert_eq!(ModelConfig::new(Variant::Sum, 10, 300).parameter_count(), 713_730);
    assert_eq!(ModelConfig::new(Variant::Sum, 1, 300).parameter_count(), 72_066);

    // psi, phi: (4+64)·300+4 each; Ω: 3·64·128; MLP: 640·256+256, 256·2+2
    assert_eq!(ModelConfig::new(Variant::Attention, 10, 300).parameter_count(), 597_266);
    // phi: (64+64)·300, no trainable query
    assert_eq!(ModelConfig::new(Variant::ContextAttention, 10, 300).parameter_count(), 777_226);
    // one shared encoder per attribute: 300·64+64; MLP input 640
    assert_eq!(ModelConfig::new(Variant::TwinSum, 10, 300).parameter_count(), 357_250);
}

#[test]
fn registry_enumeration_equals_closed_form() {
    for variant in Variant::ALL {
        for m in [1, 2, 5] {
            for d in [1, 7, 300] {
                for pooling in [AttributePooling::Concat, AttributePooling::Mean] {
                    let mut cfg = ModelConfig::new(variant, m, d);
                    cfg.pooling = pooling;
                    let model = Model::new(cfg.clone()).unwrap();
                    assert_eq!(model.num_parameters(), cfg.parameter_count(), "{variant} m={m} d={d}");
                    let names: std::collections::HashSet<_> =
                        model.params().iter().map(|p| p.name.clone()).collect();
                    assert_eq!(names.len(), model.params().len());
                }
            }
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = ModelConfig::new(Variant::Sum, 0, 300);
    assert!(matches!(Model::new(cfg.clone()), Err(Error::InvalidConfig(_))));
    cfg.attributes = 2;
    cfg.hidden_dim = 0;
    assert!(Model::new(cfg).is_err());
    let mut cfg = ModelConfig::new(Variant::ContextAttention, 2, 10);
    cfg.context_dim = 32;
    assert!(matches!(Model::new(cfg.clone()), Err(Error::InvalidConfig(_))));
    cfg.variant = Variant::Attention;
    assert!(Model::new(cfg).is_ok());
}

#[test]
fn initialization_is_deterministic() {
    for variant in Variant::ALL {
        let cfg = toy_config(variant, 2, 6);
        let a = Model::new(cfg.clone()).unwrap();
        let b = Model::new(cfg.clone()).unwrap();
        assert_eq!(a.params().flatten(), b.params().flatten());
        let c = Model::new(cfg.with_seed(12)).unwrap();
        assert_ne!(a.params().flatten(), c.params().flatten());
    }
}

#[test]
fn variant_names_round_trip() {
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
    }
    assert!("siamese".parse::<Variant>().is_err());
}

#[test]
fn psi_sum_conventions() {
    let mut model = Model::new(toy_config(Variant::Sum, 2, 6)).unwrap();
    set_param(&mut model, "attr1.psi.bias", &[0.3, -0.2, 0.0, 1.5, -4.0]);
    let empty = Array2::<f64>::zeros((6, 0));
    assert_eq!(model.psi_sum(1, empty.view()).unwrap(), array![0.3, 0.0, 0.0, 1.5, 0.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_matrix(&mut rng, 6, 1);
    let w = model.params().by_name("attr1.psi.weight").unwrap();
    let w = Array2::from_shape_vec((5, 6), w.data.clone()).unwrap();
    let b = array![0.3, -0.2, 0.0, 1.5, -4.0];
    let expected = (w.dot(&x.column(0)) + &b).mapv(|v| v.max(0.0));
    let got = model.psi_sum(1, x.view()).unwrap();
    assert!((got - expected).iter().all(|v| v.abs() < 1e-15));

    let xs = random_matrix(&mut rng, 6, 4);
    let mut shuffled = xs.clone();
    for (dst, src) in [3, 0, 2, 1].into_iter().enumerate() {
        shuffled.column_mut(dst).assign(&xs.column(src));
    }
    let a = model.psi_sum(0, xs.view()).unwrap();
    let b = model.psi_sum(0, shuffled.view()).unwrap();
    assert!((a - b).iter().all(|v| v.abs() < 1e-14));

    let bad = Array2::<f64>::zeros((5, 2));
    assert!(model.psi_sum(0, bad.view()).is_err());
}

#[test]
fn phi_sum_conventions() {
    let mut model = Model::new(toy_config(Variant::Sum, 2, 6)).unwrap();
    set_param(&mut model, "attr0.phi.bias", &[-1.0, 2.0, 0.5, 0.0, 0.25]);
    let empty = Array2::<f64>::zeros((6, 0));
    assert_eq!(
        model.phi_sum(0, empty.view(), empty.view()).unwrap(),
        array![0.0, 2.0, 0.5, 0.0, 0.25]
    );
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let l = random_matrix(&mut rng, 6, 2);
    let r = random_matrix(&mut rng, 6, 3);
    let a = model.phi_sum(0, l.view(), r.view()).unwrap();
    let b = model.phi_sum(0, r.view(), l.view()).unwrap();
    assert!((&a - &b).iter().all(|v| v.abs() < 1e-14));

    // e1 on one side and e2 on the other equals (e1+e2) as a single vector
    let e1 = random_matrix(&mut rng, 6, 1);
    let e2 = random_matrix(&mut rng, 6, 1);
    let merged = &e1 + &e2;
    let split = model.phi_sum(0, e1.view(), e2.view()).unwrap();
    let joined = model.phi_sum(0, merged.view(), empty.view()).unwrap();
    assert!((split - joined).iter().all(|v| v.abs() < 1e-14));
}

#[test]
fn psi_attention_conventions() {
    let model = Model::new(toy_config(Variant::Attention, 2, 6)).unwrap();
    let empty = Array2::<f64>::zeros((6, 0));
    assert_eq!(model.psi_attention(0, empty.view()).unwrap(), Array1::<f64>::zeros(4));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_matrix(&mut rng, 6, 1);
    let wv = model.params().by_name("attr0.psi.w_value").unwrap();
    let wv = Array2::from_shape_vec((4, 6), wv.data.clone()).unwrap();
    let got = model.psi_attention(0, x.view()).unwrap();
    assert!((got - wv.dot(&x.column(0))).iter().all(|v| v.abs() < 1e-15));

    // two-vector oracle, written out term by term
    let x = random_matrix(&mut rng, 6, 2);
    let p = model.params();
    let wk = p.by_name("attr0.psi.w_key").unwrap().data.clone();
    let q = p.by_name("attr0.psi.query").unwrap().data.clone();
    let wvd = p.by_name("attr0.psi.w_value").unwrap().data.clone();
    let mut scores = [0.0; 2];
    for (n, score) in scores.iter_mut().enumerate() {
        for r in 0..3 {
            let mut key = 0.0;
            for c in 0..6 {
                key += wk[r * 6 + c] * x[[c, n]];
            }
            *score += key * q[r];
        }
        *score /= 3f64.sqrt();
    }
    let z = scores[0].exp() + scores[1].exp();
    let alpha = [scores[0].exp() / z, scores[1].exp() / z];
    let got = model.psi_attention(0, x.view()).unwrap();
    for r in 0..4 {
        let mut expected = 0.0;
        for (n, a) in alpha.iter().enumerate() {
            let mut value = 0.0;
            for c in 0..6 {
                value += wvd[r * 6 + c] * x[[c, n]];
            }
            expected += a * value;
        }
        assert!((got[r] - expected).abs() < 1e-14);
    }
}

#[test]
fn phi_attention_conventions() {
    let model = Model::new(toy_config(Variant::Attention, 2, 6)).unwrap();
    let empty = Array2::<f64>::zeros((6, 0));
    assert_eq!(
        model.phi_attention(1, empty.view(), empty.view(), None).unwrap(),
        Array1::<f64>::zeros(4)
    );
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let l = random_matrix(&mut rng, 6, 3);
    let one_side = model.phi_attention(1, l.view(), empty.view(), None).unwrap();
    let other_side = model.phi_attention(1, empty.view(), l.view(), None).unwrap();
    let Arch::Attention { phi, .. } = &model.arch else { unreachable!() };
    let (single, _) = phi[1].forward(model.params(), l.view(), None).unwrap();
    assert_eq!(one_side, single);
    assert_eq!(other_side, single);

    let ctx = Array1::<f64>::zeros(4);
    assert!(matches!(
        model.phi_attention(1, l.view(), empty.view(), Some(ctx.view())),
        Err(Error::QueryMode(_))
    ));
}

#[test]
fn context_attention_with_zero_query_averages_values() {
    let model = Model::new(toy_config(Variant::ContextAttention, 1, 6)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let l = random_matrix(&mut rng, 6, 3);
    let r = random_matrix(&mut rng, 6, 2);
    let zero = Array1::<f64>::zeros(4);
    let got = model.phi_attention(0, l.view(), r.view(), Some(zero.view())).unwrap();
    let wv = model.params().by_name("attr0.phi.w_value").unwrap();
    let wv = Array2::from_shape_vec((4, 6), wv.data.clone()).unwrap();
    let mean = |x: &Array2<f64>| x.mean_axis(Axis(1)).unwrap();
    let expected = wv.dot(&mean(&l)) + wv.dot(&mean(&r));
    assert!((got - expected).iter().all(|v| v.abs() < 1e-14));
    assert!(matches!(
        model.phi_attention(0, l.view(), r.view(), None),
        Err(Error::QueryMode(_))
    ));
}

#[test]
fn omega_concat_mlp_hand_instance() {
    let mut cfg = ModelConfig::new(Variant::Sum, 1, 3);
    cfg.sim_dif_dim = 1;
    cfg.hidden_dim = 2;
    let mut model = Model::new(cfg).unwrap();
    set_param(&mut model, "omega.mlp.hidden.weight", &[1.0, 2.0, -1.0, 1.0]);
    set_param(&mut model, "omega.mlp.hidden.bias", &[0.5, -0.5]);
    set_param(&mut model, "omega.mlp.output.weight", &[1.0, -1.0, 2.0, 0.0]);
    set_param(&mut model, "omega.mlp.output.bias", &[0.1, 0.2]);
    // hidden = ReLU([1+4+0.5, -1+2-0.5]) = [5.5, 0.5]; logits = [5.5-0.5+0.1, 11+0.2]
    let logits = model.omega_concat_mlp(&[array![1.0, 2.0]]).unwrap();
    assert!((logits - array![5.1, 11.2]).iter().all(|v| v.abs() < 1e-12));
    // hidden = ReLU([2-2+0.5, -2-1-0.5]) = [0.5, 0]; logits = [0.6, 1.2]
    let logits = model.omega_concat_mlp(&[array![2.0, -1.0]]).unwrap();
    assert!((logits - array![0.6, 1.2]).iter().all(|v| v.abs() < 1e-12));
    // zero input: logits = W2 ReLU(b1) + b2 = [0.5+0.1, 1.0+0.2]
    let logits = model.omega_concat_mlp(&[array![0.0, 0.0]]).unwrap();
    assert!((logits - array![0.6, 1.2]).iter().all(|v| v.abs() < 1e-12));

    assert!(model.omega_concat_mlp(&[]).is_err());
    assert!(model.omega_self_attention(&[array![0.0, 0.0]]).is_err());
}

#[test]
fn omega_self_attention_single_attribute() {
    let model = Model::new(toy_config(Variant::Attention, 1, 6)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let r = Array1::from_shape_fn(8, |_| rng.random_range(-1.0..1.0));
    let Arch::Attention { omega, mlp, .. } = &model.arch else { unreachable!() };
    let rm = r.clone().insert_axis(Axis(1));
    let (out, cache) = omega.forward(model.params(), rm.view()).unwrap();
    assert_eq!(cache.weights, array![[1.0]]);
    let wv = model.params().matrix(omega.w_value);
    assert!((out.column(0).to_owned() - wv.dot(&r)).iter().all(|v| v.abs() < 1e-15));
    let (_, _, expected) = model.mlp_forward(mlp, out.column(0)).unwrap();
    assert_eq!(model.omega_self_attention(&[r]).unwrap(), expected);
    assert!(model.omega_self_attention(&[]).unwrap_err().to_string().contains("shape"));
}

#[test]
fn omega_self_attention_permutes_with_attributes() {
    let model = Model::new(toy_config(Variant::Attention, 3, 6)).unwrap();
    let Arch::Attention { omega, .. } = &model.arch else { unreachable!() };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let r = random_matrix(&mut rng, 8, 3);
    let perm = [2, 0, 1];
    let mut rp = r.clone();
    for (dst, &src) in perm.iter().enumerate() {
        rp.column_mut(dst).assign(&r.column(src));
    }
    let (out, _) = omega.forward(model.params(), r.view()).unwrap();
    let (outp, _) = omega.forward(model.params(), rp.view()).unwrap();
    for (dst, &src) in perm.iter().enumerate() {
        let diff = &outp.column(dst) - &out.column(src);
        assert!(diff.iter().all(|v| v.abs() < 1e-14));
    }
}

#[test]
fn zero_parameters_score_one_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for variant in Variant::ALL {
        let mut model = Model::new(toy_config(variant, 2, 6)).unwrap();
        let n = model.num_parameters();
        model.params_mut().set_flat(&vec![0.0; n]).unwrap();
        let features = features_for(variant, &mut rng, 2, 6);
        assert_eq!(model.score(&features).unwrap(), 0.5, "{variant}");
    }
}

#[test]
fn identical_records_hit_bias_paths() {
    let mut model = Model::new(toy_config(Variant::Sum, 2, 6)).unwrap();
    set_param(&mut model, "attr0.phi.bias", &[0.1, -0.1, 0.2, 0.3, -0.3]);
    set_param(&mut model, "attr1.phi.bias", &[-1.0, 1.0, 0.0, 0.5, 0.7]);
    let store = EmbeddingStore::hashed(6, 1);
    let rec = Record::new(vec!["coca cola 12 oz", "beverages"]);
    let features = model.featurize(&store, &rec, &rec).unwrap();
    let (score, cache) = model.forward(&features).unwrap();
    assert!((0.0..=1.0).contains(&score));
    assert_eq!(cache.summaries()[0].1, array![0.1, 0.0, 0.2, 0.3, 0.0]);
    assert_eq!(cache.summaries()[1].1, array![0.0, 1.0, 0.0, 0.5, 0.7]);

    let twin = Model::new(toy_config(Variant::TwinSum, 2, 6)).unwrap();
    let features = twin.featurize(&store, &rec, &rec).unwrap();
    let (score, cache) = twin.forward(&features).unwrap();
    assert!((0.0..=1.0).contains(&score));
    assert!(cache.mlp_input.iter().all(|v| *v == 0.0));
}

#[test]
fn contrast_consistency_under_perturbation() {
    let model = Model::new(toy_config(Variant::Sum, 1, 6)).unwrap();
    let store = EmbeddingStore::hashed(6, 2);
    let left = Record::new(vec!["apple iphone 8 64gb"]);
    let right = Record::new(vec!["apple iphone 8 64gb"]);
    let moved = Record::new(vec!["apple iphone 6 64gb"]);
    let base = model.featurize(&store, &left, &right).unwrap();
    let perturbed = model.featurize(&store, &left, &moved).unwrap();
    let (_, c0) = model.forward(&base).unwrap();
    let (_, c1) = model.forward(&perturbed).unwrap();
    let (AttributeCache::Sum { shared_sum: s0, unique_sum: u0, .. }, AttributeCache::Sum { shared_sum: s1, unique_sum: u1, .. }) =
        (&c0.attributes[0], &c1.attributes[0])
    else {
        unreachable!()
    };
    let eight = store.embed_token("8");
    let six = store.embed_token("6");
    assert!((s0 - &eight - s1).iter().all(|v| v.abs() < 1e-12));
    assert!((u1 - &eight - &six - u0).iter().all(|v| v.abs() < 1e-12));
    assert_ne!(c0.summaries()[0].1, c1.summaries()[0].1);
}

#[test]
fn featurize_checks_shapes() {
    let model = Model::new(toy_config(Variant::Sum, 2, 6)).unwrap();
    let rec2 = Record::new(vec!["a", "b"]);
    let rec1 = Record::new(vec!["a"]);
    assert!(model.featurize(&EmbeddingStore::hashed(5, 0), &rec2, &rec2).is_err());
    assert!(model.featurize(&EmbeddingStore::hashed(6, 0), &rec1, &rec2).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let wrong_d = random_pair(&mut rng, 2, 5, (1, 1, 1));
    assert!(matches!(model.forward_score(&wrong_d), Err(Error::Shape { .. })));
    let wrong_m = random_pair(&mut rng, 3, 6, (1, 1, 1));
    assert!(model.forward_score(&wrong_m).is_err());
    let twin = random_twin(&mut rng, 2, 6);
    assert!(matches!(model.twin_sum_baseline_forward(&twin), Err(Error::VariantMismatch { .. })));
}

#[test]
fn gradients_match_finite_differences_for_every_variant() {
    for variant in Variant::ALL {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut cfg = toy_config(variant, 2, 6);
            cfg.seed = seed;
            let model = Model::new(cfg).unwrap();
            let features = features_for(variant, &mut rng, 2, 6);
            for label in [false, true] {
                let err = gradient_error(&model, &features, label, gradcheck_eps(variant));
                assert!(err < 1e-4, "{variant} seed {seed} label {label}: {err}");
            }
        }
    }
}

#[test]
fn gradients_with_empty_groups_and_mean_pooling() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for variant in [Variant::Attention, Variant::ContextAttention] {
        let mut cfg = toy_config(variant, 3, 6);
        cfg.pooling = AttributePooling::Mean;
        let model = Model::new(cfg).unwrap();
        let mut pair = random_pair(&mut rng, 3, 6, (2, 1, 2));
        pair.per_attribute[1].shared = Array2::zeros((6, 0));
        pair.per_attribute[2].unique_left = Array2::zeros((6, 0));
        let features = PairFeatures::Contrasted(pair);
        let err = gradient_error(&model, &features, true, 1e-5);
        assert!(err < 1e-4, "{variant}: {err}");
    }
}

#[test]
fn phi_gradients_accumulate_both_sides() {
    let model = Model::new(toy_config(Variant::Attention, 1, 6)).unwrap();
    let Arch::Attention { phi, .. } = &model.arch else { unreachable!() };
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let l = random_matrix(&mut rng, 6, 2);
    let r = random_matrix(&mut rng, 6, 3);
    let c = Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0));
    let p = model.params();
    let (_, cl) = phi[0].forward(p, l.view(), None).unwrap();
    let (_, cr) = phi[0].forward(p, r.view(), None).unwrap();
    let mut both = p.zero_gradients();
    phi[0].backward(p, &cl, c.view(), &mut both);
    phi[0].backward(p, &cr, c.view(), &mut both);
    let mut left_only = p.zero_gradients();
    phi[0].backward(p, &cl, c.view(), &mut left_only);

    let mut probe = model.clone();
    let objective = |probe: &mut Model, theta: &[f64]| {
        probe.params_mut().set_flat(theta).unwrap();
        c.dot(&probe.phi_attention(0, l.view(), r.view(), None).unwrap())
    };
    let point = p.flatten();
    let report = grad_check(|t| objective(&mut probe, t), &point, &both.flatten(), 1e-6);
    assert!(report.max_rel_error < 1e-6, "{}", report.max_rel_error);
    let report = grad_check(|t| objective(&mut probe, t), &point, &left_only.flatten(), 1e-6);
    assert!(report.max_rel_error > 1e-2);
}

#[test]
fn saturated_prediction_has_vanishing_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut model = Model::new(toy_config(Variant::Sum, 2, 6)).unwrap();
    set_param(&mut model, "omega.mlp.output.bias", &[-60.0, 60.0]);
    let features = features_for(Variant::Sum, &mut rng, 2, 6);
    let (_, cache) = model.forward(&features).unwrap();
    let (loss, grads) = model.backward(&cache, true).unwrap();
    assert!(loss < 1e-40);
    assert!(grads.norm() < 1e-40);
    let (loss, grads) = model.backward(&cache, false).unwrap();
    assert!(loss > 100.0);
    assert!(grads.norm() > 1e-3);
}

#[test]
fn stale_cache_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut model = Model::new(toy_config(Variant::Sum, 2, 6)).unwrap();
    let features = features_for(Variant::Sum, &mut rng, 2, 6);
    let (_, cache) = model.forward(&features).unwrap();
    assert!(model.backward(&cache, true).is_ok());
    model.params_mut();
    assert!(matches!(model.backward(&cache, true), Err(Error::StaleCache)));
}

#[test]
fn attention_weights_are_exposed() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let model = Model::new(toy_config(Variant::ContextAttention, 2, 6)).unwrap();
    let pair = random_pair(&mut rng, 2, 6, (3, 2, 0));
    let (_, cache) = model.forward_score(&pair).unwrap();
    let [s, l, r] = cache.attention_weights(1).unwrap();
    assert_eq!((s.len(), l.len(), r.len()), (3, 2, 0));
    assert!((s.sum() - 1.0).abs() < 1e-12);
    assert_eq!(cache.attribute_attention().unwrap().dim(), (2, 2));
    assert!(cache.attention_weights(2).is_none());
}

fn checkpoint_meta() -> CheckpointMeta {
    CheckpointMeta {
        epoch: Some(3),
        validation_f1: Some(0.875),
        train_seed: Some(9),
        threshold: 0.5,
        schema: vec!["title".into(), "price".into()],
        embeddings: Some(crate::embeddings::EmbeddingSource::Hashed { dim: 6, seed: 1 }),
        dataset: Some("toy".into()),
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for variant in Variant::ALL {
        let model = Model::new(toy_config(variant, 2, 6)).unwrap();
        let path = dir.path().join(format!("{variant}.ckpt"));
        save_checkpoint(&path, &model, &checkpoint_meta()).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.metadata, checkpoint_meta());
        assert_eq!(loaded.model.config(), model.config());
        let features = features_for(variant, &mut rng, 2, 6);
        assert_eq!(
            loaded.model.score(&features).unwrap().to_bits(),
            model.score(&features).unwrap().to_bits()
        );
        let again = Checkpoint::to_bytes(&loaded.model, &loaded.metadata).unwrap();
        assert_eq!(again, std::fs::read(&path).unwrap());
    }
}

#[test]
fn checkpoint_errors() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::new(toy_config(Variant::Sum, 2, 6)).unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &model, &checkpoint_meta()).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    assert!(matches!(
        load_checkpoint_expecting(&path, Variant::Attention),
        Err(Error::VariantMismatch { .. })
    ));
    assert!(load_checkpoint_expecting(&path, Variant::Sum).is_ok());

    for cut in [0, 5, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))),
            "cut at {cut}"
        );
    }
    let mut flipped = bytes.clone();
    let mid = bytes.len() - 100;
    flipped[mid] ^= 0x40;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::CorruptCheckpoint(_))));

    let mut future = bytes.clone();
    future[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    assert!(matches!(
        Checkpoint::from_bytes(&future),
        Err(Error::CheckpointVersion { found, .. }) if found == FORMAT_VERSION + 1
    ));
    assert!(matches!(
        load_checkpoint(&dir.path().join("absent.ckpt")),
        Err(Error::MissingFile(_))
    ));
}

fn swap_case(variant: Variant, seed: u64, sizes: (usize, usize, usize)) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = toy_config(variant, 2, 6);
    cfg.seed = seed;
    let model = Model::new(cfg).unwrap();
    let pair = random_pair(&mut rng, 2, 6, sizes);
    (
        model.forward_score(&pair).unwrap().0,
        model.forward_score(&pair.swapped()).unwrap().0,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn record_swap_leaves_score_unchanged(
        seed in any::<u64>(),
        shared in 0usize..4,
        left in 0usize..4,
        right in 0usize..4,
        variant in prop::sample::select(vec![Variant::Sum, Variant::Attention, Variant::ContextAttention]),
    ) {
        let (a, b) = swap_case(variant, seed, (shared, left, right));
        prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
        prop_assert!((0.0..=1.0).contains(&a));
    }
}


#[test]
fn toy_gradient_check_passes_and_detects_faults() {
    for variant in Variant::ALL {
        for seed in 0..5 {
            let clean = toy_gradient_check(variant, seed, 0.0).unwrap();
            assert!(clean.max_rel_error < 1e-4, "{variant} seed {seed}: {clean:?}");
            let faulty = toy_gradient_check(variant, seed, 0.1).unwrap();
            assert!((faulty.max_rel_error - 0.1 / 1.1).abs() < 1e-3, "{variant} seed {seed}: {faulty:?}");
        }
    }
}
