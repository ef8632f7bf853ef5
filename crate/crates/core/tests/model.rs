mod common;

use common::*;
use mabn_autograd::{softmax, ParamSet, Tensor};
use mabn_core::{Ablation, Decoder, ModelConfig, MultiAbn, SampleInputs};
use mabn_dataset::BOS;
use proptest::prelude::*;

#[test]
fn whole_model_gradients_match_finite_differences() {
    for (k, ablation) in [Ablation::Full, Ablation::VabOnly, Ablation::LabOnly].into_iter().enumerate() {
        let cfg = gradcheck_config(ablation);
        let mut m = model(cfg.clone(), 10 + k as u64);
        let inputs = random_inputs(&cfg, 3, &mut rng(20 + k as u64));
        let (err, name) = model_gradient_error(&mut m, &inputs);
        assert!(err < 1e-3, "{ablation:?}: relative error {err} at {name}");
    }
}

#[test]
fn gradient_variants_match_finite_differences() {
    let variants = [
        ModelConfig { static_attention: true, ..ModelConfig::gradcheck() },
        ModelConfig { average_visual_loss: true, literal_relation: true, ..ModelConfig::gradcheck() },
        ModelConfig { lstm_layers: 1, views: 3, ..ModelConfig::gradcheck() },
    ];
    for (k, cfg) in variants.into_iter().enumerate() {
        let mut m = model(cfg.clone(), 30 + k as u64);
        let inputs = random_inputs(&cfg, 2, &mut rng(40 + k as u64));
        let (err, name) = model_gradient_error(&mut m, &inputs);
        assert!(err < 1e-3, "variant {k}: relative error {err} at {name}");
    }
}

#[test]
fn loss_is_sum_of_its_parts() {
    let cfg = ModelConfig::gradcheck();
    for seed in 0..10 {
        let m = model(cfg.clone(), seed);
        let inputs = random_inputs(&cfg, 1 + seed as usize % 3, &mut rng(100 + seed));
        let l = m.loss(&inputs).unwrap();
        assert_eq!(l.total, l.perception + l.attention);
        assert!(l.perception >= 0.0 && l.attention >= 0.0);
        let (lg, _) = m.loss_and_grad(&inputs).unwrap();
        assert_eq!(lg, l);
    }
}

#[test]
fn initial_loss_is_near_uniform() {
    let ds = small_dataset(3, 12);
    let cfg = ModelConfig::toy(ds.vocab.len());
    let m = model(cfg.clone(), 5);
    let ln_v = (ds.vocab.len() as f64).ln();
    let (mut per, mut att) = (0.0, 0.0);
    let n = 16.min(ds.samples.len());
    for i in 0..n {
        let l = m.loss(&SampleInputs::from_dataset(&ds, i, Some(0), &cfg).unwrap()).unwrap();
        per += l.perception / n as f64;
        att += l.attention / n as f64;
    }
    assert!((per - ln_v).abs() < 0.1 * ln_v, "L_per {per} vs ln|V| {ln_v}");
    // one linguistic and M visual heads, each near uniform
    let heads = (cfg.views + 1) as f64;
    assert!((att - heads * ln_v).abs() < 0.1 * heads * ln_v, "L_att {att}");
}

#[test]
fn attention_of_zeroed_branches_is_exactly_one_half() {
    let cfg = ModelConfig { max_len: 5, ..ModelConfig::gradcheck() };
    let mut m = model(cfg.clone(), 8);
    m.zero_attention();
    let inputs = random_inputs(&cfg, 3, &mut rng(9));
    let mut dec = Decoder::new(&m, &inputs).unwrap();
    let mut prev = BOS;
    for _ in 0..4 {
        let step = dec.step(prev).unwrap();
        assert_eq!(step.attention.visual.len(), 2);
        for map in &step.attention.visual {
            assert_eq!(map.shape(), [4, 4]);
            assert!(map.data().iter().all(|&a| a == 0.5));
        }
        let l = step.attention.linguistic.unwrap();
        assert_eq!(l.len(), cfg.hidden);
        assert!(l.data().iter().all(|&a| a == 0.5));
        prev = 4 + prev % 5;
    }
}

#[test]
fn output_distribution_sums_to_one() {
    let cfg = ModelConfig::gradcheck();
    let m = model(cfg.clone(), 12);
    let inputs = random_inputs(&cfg, 2, &mut rng(13));
    let mut dec = Decoder::new(&m, &inputs).unwrap();
    let step = dec.step(BOS).unwrap();
    assert_eq!(step.log_probs.len(), cfg.vocab_size);
    let total: f64 = step.log_probs.iter().map(|l| l.exp()).sum();
    assert!((total - 1.0).abs() < 1e-12);

    let mut s = m.session(false);
    let feats = s.encode_views(&inputs).unwrap();
    let state = s.perception_init(&inputs.target_crop, &inputs.source_crop, &inputs.relation).unwrap();
    let out = s.step(&feats, &state, BOS).unwrap();
    for logits in out.visual.iter().map(|b| b.logits).chain(out.linguistic.map(|b| b.logits)) {
        let p = softmax(s.tape.value(logits).data());
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn hidden_state_timeline() {
    // h_1 comes from the crops and relation; every step advances the LSTM once
    let cfg = ModelConfig::gradcheck();
    let m = model(cfg.clone(), 14);
    let inputs = random_inputs(&cfg, 2, &mut rng(15));
    let mut dec = Decoder::new(&m, &inputs).unwrap();
    assert_eq!(dec.state().advances, 1);
    let h1 = dec.hidden().clone();
    dec.step(BOS).unwrap();
    assert_eq!(dec.state().advances, 2);
    assert_ne!(dec.hidden(), &h1);
    assert_eq!(dec.hidden().len(), cfg.hidden);
}

fn swap_views(model: &MultiAbn) -> MultiAbn {
    let cfg = model.config().clone();
    let cf = cfg.feature_channels();
    let mut params = ParamSet::new();
    for (name, t) in model.params().iter() {
        let mut t = t.clone();
        let name = if let Some(rest) = name.strip_prefix("vab1.") {
            format!("vab2.{rest}")
        } else if let Some(rest) = name.strip_prefix("vab2.") {
            format!("vab1.{rest}")
        } else {
            name.to_string()
        };
        if name == "perception.context.weight" {
            let cols = t.shape()[1];
            for row in t.data_mut().chunks_mut(cols) {
                let (a, b) = row.split_at_mut(cf);
                a.swap_with_slice(&mut b[..cf]);
            }
        }
        params.insert(name, t);
    }
    MultiAbn::from_params(cfg, params).unwrap()
}

#[test]
fn swapping_views_and_branches_leaves_the_loss_unchanged() {
    let cfg = ModelConfig::gradcheck();
    for seed in 0..5 {
        let m = model(cfg.clone(), 50 + seed);
        let inputs = random_inputs(&cfg, 3, &mut rng(60 + seed));
        let mut swapped = inputs.clone();
        swapped.views.swap(0, 1);
        let a = m.loss(&inputs).unwrap();
        let b = swap_views(&m).loss(&swapped).unwrap();
        for (x, y) in [(a.total, b.total), (a.perception, b.perception), (a.attention, b.attention)] {
            assert!((x - y).abs() <= 1e-12 * x.abs(), "{x} vs {y}");
        }
    }
}

#[test]
fn ablations_own_only_their_branches() {
    let names = |a: Ablation| -> Vec<String> {
        let m = model(gradcheck_config(a), 1);
        m.params().iter().map(|(n, _)| n.to_string()).collect()
    };
    let full = names(Ablation::Full);
    assert!(full.iter().any(|n| n.starts_with("lab.")) && full.iter().any(|n| n.starts_with("vab")));
    let vab = names(Ablation::VabOnly);
    assert!(vab.iter().all(|n| !n.starts_with("lab.")));
    assert!(vab.iter().any(|n| n.starts_with("vab2.")));
    let lab = names(Ablation::LabOnly);
    assert!(lab.iter().all(|n| !n.starts_with("vab")));
    assert!(lab.iter().any(|n| n.starts_with("lab.")));
    // the shared trunk is identical in all three
    let trunk = |v: &[String]| -> Vec<String> {
        v.iter().filter(|n| !n.starts_with("lab.") && !n.starts_with("vab")).cloned().collect()
    };
    assert_eq!(trunk(&full), trunk(&vab));
    assert_eq!(trunk(&full), trunk(&lab));
}

#[test]
fn ablated_steps_read_the_right_tensors() {
    let inputs_for = |cfg: &ModelConfig| random_inputs(cfg, 2, &mut rng(70));
    // VAB-only: the output head reads h' directly
    let cfg = gradcheck_config(Ablation::VabOnly);
    let m = model(cfg.clone(), 71);
    let inputs = inputs_for(&cfg);
    let mut s = m.session(false);
    let feats = s.encode_views(&inputs).unwrap();
    let state = s.perception_init(&inputs.target_crop, &inputs.source_crop, &inputs.relation).unwrap();
    let out = s.step(&feats, &state, BOS).unwrap();
    assert!(out.linguistic.is_none());
    assert_eq!(out.visual.len(), 2);
    let direct = s.predict_token(out.state.top()).unwrap();
    assert_eq!(s.tape.value(direct), s.tape.value(out.output_logits));

    // LAB-only: the context pools unmasked features
    let cfg = gradcheck_config(Ablation::LabOnly);
    let m = model(cfg.clone(), 72);
    let inputs = inputs_for(&cfg);
    let mut s = m.session(false);
    let feats = s.encode_views(&inputs).unwrap();
    assert!(feats.iter().all(|f| f.pre.is_none()));
    let state = s.perception_init(&inputs.target_crop, &inputs.source_crop, &inputs.relation).unwrap();
    let out = s.step(&feats, &state, BOS).unwrap();
    assert!(out.visual.is_empty());
    let pooled: Vec<_> = feats.iter().map(|f| s.tape.global_avg_pool(f.map).unwrap()).collect();
    let c = s.tape.concat(&pooled, 0).unwrap();
    let again = s.perception_step(c, BOS, &state).unwrap();
    assert_eq!(s.tape.value(again.top()), s.tape.value(out.state.top()));
    assert!(s.visual_attention_branch(0, &feats[0], state.top()).is_err());
}

#[test]
fn contract_violations_are_rejected() {
    let cfg = ModelConfig::gradcheck();
    let m = model(cfg.clone(), 80);
    let mut inputs = random_inputs(&cfg, 2, &mut rng(81));
    let mut bad = inputs.clone();
    bad.views.pop();
    assert!(m.loss(&bad).is_err());
    let mut bad = inputs.clone();
    bad.target_crop = Tensor::zeros([3, 4, 4]);
    assert!(m.loss(&bad).is_err());
    let mut bad = inputs.clone();
    bad.reference = Some(vec![4, cfg.vocab_size]);
    assert!(m.loss(&bad).is_err());
    inputs.reference = Some(Vec::new());
    assert!(m.loss(&inputs).is_err());
    inputs.reference = None;
    assert!(m.loss(&inputs).is_err());
    assert!(m.decode_greedy(&inputs, 3).is_ok());
}

#[test]
fn full_scale_shapes() {
    let cfg = ModelConfig::full_scale();
    assert_eq!(cfg.feature_size(), 14);
    assert_eq!(cfg.feature_channels(), 512);
    let m = model(cfg.clone(), 0);
    let mlp1 = m.params().id("vab1.mlp1.weight").unwrap();
    assert_eq!(m.params().get(mlp1).shape()[0], 1024);
    let mlp2 = m.params().id("vab3.mlp2.weight").unwrap();
    assert_eq!(m.params().get(mlp2).shape(), [1024, 1024]);
    assert!(m.params().id("perception.lstm3.weight").is_some());

    let mut r = rng(1);
    let inputs = random_inputs(&cfg, 1, &mut r);
    let mut s = m.session(false);
    let f = s.extract_visual_features(&inputs.views[0]).unwrap();
    assert_eq!(s.tape.shape(f), [512, 14, 14]);
    let feats = s.encode_views(&inputs).unwrap();
    let state = s.perception_init(&inputs.target_crop, &inputs.source_crop, &inputs.relation).unwrap();
    assert_eq!(s.tape.shape(state.top()), [1024]);
    assert_eq!(state.h.len(), 3);
    let out = s.step(&feats, &state, BOS).unwrap();
    assert_eq!(s.tape.shape(out.output_logits), [233]);
    assert_eq!(out.visual.len(), 3);
    for b in &out.visual {
        assert_eq!(s.tape.shape(b.attention), [14, 14]);
        assert_eq!(s.tape.shape(b.logits), [233]);
    }
    let l = out.linguistic.unwrap();
    assert_eq!(s.tape.shape(l.attention), [1024]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attention_stays_strictly_inside_unit_interval(seed in 0u64..1000, gain in 0.5f64..8.0) {
        let cfg = ModelConfig { max_len: 4, ..ModelConfig::gradcheck() };
        let mut m = model(cfg.clone(), seed);
        for id in m.params().ids().collect::<Vec<_>>() {
            m.params_mut().get_mut(id).data_mut().iter_mut().for_each(|v| *v *= gain);
        }
        let inputs = random_inputs(&cfg, 2, &mut rng(seed + 1));
        let d = m.decode_greedy(&inputs, cfg.max_len).unwrap();
        let mut dec = Decoder::new(&m, &inputs).unwrap();
        let step = dec.step(BOS).unwrap();
        let maps = d.attention.iter().chain([&step.attention]);
        for a in maps {
            for v in a.visual.iter().flat_map(|t| t.data()).chain(a.linguistic.iter().flat_map(|t| t.data())) {
                prop_assert!(*v > 0.0 && *v < 1.0, "{v}");
            }
        }
    }
}
