#![allow(dead_code)]

use mabn_autograd::gradcheck::{central_differences, max_relative_error};
use mabn_autograd::Tensor;
use mabn_core::{relation_features, Ablation, ModelConfig, MultiAbn, SampleInputs};
use mabn_dataset::{Dataset, GenConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn image(size: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let n = 3 * size * size;
    Tensor::new(vec![3, size, size], (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap()
}

/// Random views, crops and boxes; a random reference of `len` ordinary words.
pub fn random_inputs(cfg: &ModelConfig, len: usize, rng: &mut ChaCha8Rng) -> SampleInputs {
    let s = cfg.image_size;
    let rbox = |rng: &mut ChaCha8Rng| {
        let w = rng.gen_range(2..=s / 2) as f64;
        let h = rng.gen_range(2..=s / 2) as f64;
        [rng.gen_range(0..s / 2) as f64, rng.gen_range(0..s / 2) as f64, w, h]
    };
    let (t, src) = (rbox(rng), rbox(rng));
    SampleInputs {
        views: (0..cfg.views).map(|_| image(s, rng)).collect(),
        target_crop: image(s, rng),
        source_crop: image(s, rng),
        relation: relation_features(t, src, (s as f64, s as f64), cfg.literal_relation).unwrap(),
        reference: Some((0..len).map(|_| rng.gen_range(4..cfg.vocab_size)).collect()),
    }
}

pub fn model(cfg: ModelConfig, seed: u64) -> MultiAbn {
    MultiAbn::new(cfg, &mut rng(seed)).unwrap()
}

pub fn gradcheck_config(ablation: Ablation) -> ModelConfig {
    ModelConfig { ablation, ..ModelConfig::gradcheck() }
}

pub fn small_dataset(seed: u64, scenes: usize) -> Dataset {
    Dataset::generate(seed, &GenConfig::default(), scenes).unwrap()
}

pub const FD_STEP: f64 = 1e-5;
// Central differences of an O(10) loss carry ~1e-10 of rounding noise at this
// step, so gradient entries below the floor are compared absolutely.
pub const FD_FLOOR: f64 = 1e-6;

/// Worst relative error between autodiff and central differences over every
/// parameter coordinate, with the offending parameter's name.
pub fn model_gradient_error(model: &mut MultiAbn, inputs: &SampleInputs) -> (f64, String) {
    let (_, grads) = model.loss_and_grad(inputs).unwrap();
    let ids: Vec<_> = model.params().ids().collect();
    let mut worst = (0.0, String::new());
    for id in ids {
        let mut x = model.params().get(id).data().to_vec();
        let numeric = central_differences(&mut x, FD_STEP, |xs| {
            model.params_mut().get_mut(id).data_mut().copy_from_slice(xs);
            model.loss(inputs).unwrap().total
        });
        model.params_mut().get_mut(id).data_mut().copy_from_slice(&x);
        let err = max_relative_error(grads.get(id), &numeric, FD_FLOOR);
        if err > worst.0 {
            worst = (err, model.params().name(id).to_string());
        }
    }
    worst
}
