use mabn_autograd::Tensor;
use mabn_dataset::{BoundingBox, Dataset, Image, BOS, EOS};

use crate::config::{ModelConfig, REL_DIM};
use crate::error::{CoreError, Result};

/// Everything the network consumes for one target.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleInputs {
    /// One `[3, S, S]` tensor per view, view 1 first.
    pub views: Vec<Tensor>,
    pub target_crop: Tensor,
    pub source_crop: Tensor,
    pub relation: Tensor,
    /// Reference word ids without `<bos>`/`<eos>`.
    pub reference: Option<Vec<usize>>,
}

/// Pixels scaled to [-0.5, 0.5], channel-major.
pub fn image_tensor(img: &Image, size: usize) -> Tensor {
    let img = if img.width == size && img.height == size { img.clone() } else { img.resize(size, size) };
    let mut data = vec![0.0; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let px = img.get(x, y);
            for c in 0..3 {
                data[c * size * size + y * size + x] = px[c] as f64 / 255.0 - 0.5;
            }
        }
    }
    Tensor::new(vec![3, size, size], data).expect("image tensor shape")
}

fn ratios(m: [f64; 4], n: [f64; 4], literal: bool) -> Result<[f64; 5]> {
    let [xm, ym, wm, hm] = m;
    let [_, _, wn, hn] = n;
    if !(wn > 0.0 && hn > 0.0) {
        return Err(CoreError::Contract(format!("reference region has zero area: {n:?}")));
    }
    let fifth = if literal {
        // w_m h_n / (W_m H_n) with W_m = w_m and h_n = H_n cancels to 1
        1.0
    } else {
        (wm * hm) / (wn * hn)
    };
    Ok([xm / wn, ym / hn, wm / wn, hm / hn, fifth])
}

/// The 15-vector r_{targ/src} ⊕ r_{targ/v} ⊕ r_{src/v}; each part is
/// `[x_m/W_n, y_m/H_n, w_m/W_n, h_m/H_n, w_m h_m/(W_n H_n)]`.
pub fn relation_features(target: [f64; 4], source: [f64; 4], image: (f64, f64), literal: bool) -> Result<Tensor> {
    if !(target[2] > 0.0 && target[3] > 0.0 && source[2] > 0.0 && source[3] > 0.0) {
        return Err(CoreError::Contract("boxes must have positive width and height".into()));
    }
    let frame = [0.0, 0.0, image.0, image.1];
    let mut out = Vec::with_capacity(REL_DIM);
    out.extend(ratios(target, source, literal)?);
    out.extend(ratios(target, frame, literal)?);
    out.extend(ratios(source, frame, literal)?);
    Ok(Tensor::from_vec(out))
}

fn box_f64(b: &BoundingBox) -> [f64; 4] {
    [b.x as f64, b.y as f64, b.w as f64, b.h as f64]
}

impl SampleInputs {
    /// Inputs for one dataset sample. `reference` picks which reference
    /// sentence (if any) is attached for teacher forcing.
    pub fn from_dataset(ds: &Dataset, sample: usize, reference: Option<usize>, cfg: &ModelConfig) -> Result<Self> {
        let s = ds
            .samples
            .get(sample)
            .ok_or_else(|| CoreError::Contract(format!("sample {sample} does not exist")))?;
        let scene = ds.scene_of(s);
        if scene.images.len() != cfg.views {
            return Err(CoreError::Config(format!(
                "model expects {} views, scene {} has {}",
                cfg.views,
                scene.id,
                scene.images.len()
            )));
        }
        let (tb, sb) = (scene.objects[s.target].boxes[0], scene.furniture[s.source].boxes[0]);
        let mut inputs = SampleInputs::from_images(&scene.images, box_f64(&tb), box_f64(&sb), cfg)?;
        if let Some(r) = reference {
            let toks = s
                .tokens
                .get(r)
                .ok_or_else(|| CoreError::Contract(format!("sample {sample} has no reference {r}")))?;
            inputs.reference = Some(ds.vocab.encode(toks));
        }
        Ok(inputs)
    }

    /// Inputs from raw views plus target and source boxes `[x, y, w, h]` in
    /// view-1 pixels. Crops are cut from view 1.
    pub fn from_images(images: &[Image], target: [f64; 4], source: [f64; 4], cfg: &ModelConfig) -> Result<Self> {
        if images.len() != cfg.views {
            return Err(CoreError::Config(format!("model expects {} views, got {}", cfg.views, images.len())));
        }
        let main = &images[0];
        let crop = |b: [f64; 4], what: &str| {
            let [x, y, w, h] = b.map(|v| v as usize);
            let fits = b.iter().all(|v| *v >= 0.0 && v.fract() == 0.0) && w > 0 && h > 0;
            if !fits || x + w > main.width || y + h > main.height {
                return Err(CoreError::Contract(format!(
                    "{what} box {b:?} is not inside the {}x{} image",
                    main.width, main.height
                )));
            }
            Ok(image_tensor(&main.crop(x, y, w, h), cfg.image_size))
        };
        let (target_crop, source_crop) = (crop(target, "target")?, crop(source, "source")?);
        let relation = relation_features(target, source, (main.width as f64, main.height as f64), cfg.literal_relation)?;
        let views = images.iter().map(|img| image_tensor(img, cfg.image_size)).collect();
        Ok(SampleInputs { views, target_crop, source_crop, relation, reference: None })
    }

    /// `<bos> y_1 .. y_T` as decoder inputs and `y_1 .. y_T <eos>` as targets.
    pub fn teacher_forcing(&self) -> Result<(Vec<usize>, Vec<usize>)> {
        let r = self
            .reference
            .as_ref()
            .filter(|r| !r.is_empty())
            .ok_or_else(|| CoreError::Contract("teacher forcing needs a non-empty reference".into()))?;
        let mut inputs = vec![BOS];
        inputs.extend_from_slice(r);
        let mut targets = r.clone();
        targets.push(EOS);
        Ok((inputs, targets))
    }

    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let img = [3, cfg.image_size, cfg.image_size];
        if self.views.len() != cfg.views {
            return Err(CoreError::Contract(format!("expected {} views, got {}", cfg.views, self.views.len())));
        }
        for (name, t) in self.views.iter().map(|t| ("view", t)).chain([("target crop", &self.target_crop), ("source crop", &self.source_crop)]) {
            if t.shape() != img {
                return Err(CoreError::Contract(format!("{name} has shape {:?}, expected {img:?}", t.shape())));
            }
        }
        if self.relation.shape() != [REL_DIM] || !self.relation.is_finite() {
            return Err(CoreError::Contract(format!("relation vector must be {REL_DIM} finite values")));
        }
        if let Some(r) = &self.reference {
            if let Some(&bad) = r.iter().find(|&&t| t >= cfg.vocab_size) {
                return Err(CoreError::Contract(format!("reference token {bad} outside vocabulary")));
            }
        }
        Ok(())
    }
}
