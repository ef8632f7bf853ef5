use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, DatasetError, Result};
use crate::grammar::generate_instruction;
use crate::image::Image;
use crate::scene::{generate_scene, GenConfig, Scene};
use crate::vocab::{tokenize, Vocabulary};

pub const MANIFEST_VERSION: u32 = 1;

/// One annotated target.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub scene: usize,
    pub target: usize,
    pub source: usize,
    pub references: Vec<String>,
    pub tokens: Vec<Vec<String>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            _ => Err(format!("unknown split {s:?} (expected train or val)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub master_seed: u64,
    pub config: GenConfig,
    pub scenes: Vec<Scene>,
    pub samples: Vec<Sample>,
    pub vocab: Vocabulary,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub scenes: usize,
    pub samples: usize,
    pub references: usize,
    pub targets_per_image: f64,
    pub words_per_instruction: f64,
    pub vocab_size: usize,
}

#[derive(Serialize, Deserialize)]
struct SplitCounts {
    train_scenes: usize,
    val_scenes: usize,
    train_samples: usize,
    val_samples: usize,
}

#[derive(Serialize, Deserialize)]
struct Splits {
    train: Vec<usize>,
    val: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct SceneRecord {
    #[serde(flatten)]
    scene: Scene,
    images: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    id: usize,
    scene: usize,
    target: usize,
    source: usize,
    target_box: [u32; 4],
    source_box: [u32; 4],
    references: Vec<String>,
    token_ids: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    master_seed: u64,
    config: GenConfig,
    vocab_size: usize,
    counts: SplitCounts,
    splits: Splits,
    scenes: Vec<SceneRecord>,
    samples: Vec<SampleRecord>,
}

fn image_name(scene: usize, view: usize) -> String {
    format!("images/scene{scene:05}_view{}.ppm", view + 1)
}

/// Scene plus its annotations, or the last error after all attempts failed.
fn annotated_scene(master_seed: u64, index: usize, cfg: &GenConfig) -> Result<(Scene, Vec<(usize, Vec<String>)>)> {
    let mut seeds = ChaCha8Rng::seed_from_u64(master_seed);
    seeds.set_stream(index as u64);
    let mut last = None;
    'attempt: for _ in 0..cfg.max_attempts {
        let seed = seeds.next_u64();
        let scene = match generate_scene(seed, index, cfg) {
            Ok(s) => s,
            Err(e) => {
                last = Some(e);
                continue;
            }
        };
        let mut notes = Vec::new();
        for target in 0..scene.objects.len() {
            let mut refs = Vec::new();
            for r in 0..cfg.references_per_target {
                let style = seed ^ ((target as u64) << 32 | r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                match generate_instruction(&scene, target, style) {
                    Ok(s) => refs.push(s),
                    Err(e) => {
                        last = Some(e);
                        continue 'attempt;
                    }
                }
            }
            notes.push((target, refs));
        }
        return Ok((scene, notes));
    }
    Err(last.expect("at least one attempt"))
}

impl Dataset {
    /// Generates `scenes` scenes; a pure function of the seed and config.
    pub fn generate(master_seed: u64, config: &GenConfig, scenes: usize) -> Result<Dataset> {
        config.validate()?;
        if scenes < 2 {
            return Err(DatasetError::Config("at least two scenes are needed for a train/val split".into()));
        }
        let built: Vec<_> = (0..scenes)
            .into_par_iter()
            .map(|i| annotated_scene(master_seed, i, config))
            .collect::<Result<_>>()?;

        let mut order: Vec<usize> = (0..scenes).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(master_seed ^ 0x5EED_5911));
        let n_val = ((scenes as f64 * config.val_fraction).round() as usize).clamp(1, scenes - 1);
        let mut is_val = vec![false; scenes];
        for &i in &order[..n_val] {
            is_val[i] = true;
        }

        let mut all_scenes = Vec::with_capacity(scenes);
        let mut samples = Vec::new();
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for (scene, notes) in built {
            for (target, references) in notes {
                let id = samples.len();
                if is_val[scene.id] { &mut val } else { &mut train }.push(id);
                let tokens = references.iter().map(|r| tokenize(r)).collect();
                let source = scene.objects[target].furniture;
                samples.push(Sample { id, scene: scene.id, target, source, references, tokens });
            }
            all_scenes.push(scene);
        }
        let corpus: Vec<&Vec<String>> = train.iter().flat_map(|&i| samples[i].tokens.iter()).collect();
        let vocab = Vocabulary::build(&corpus.into_iter().cloned().collect::<Vec<_>>());
        Ok(Dataset { master_seed, config: config.clone(), scenes: all_scenes, samples, vocab, train, val })
    }

    pub fn split(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    pub fn scene_of(&self, sample: &Sample) -> &Scene {
        &self.scenes[sample.scene]
    }

    /// A copy that keeps only the given samples, all placed in the train
    /// split, each with at most `max_refs` references. Scenes and vocabulary
    /// are kept as they are.
    pub fn restrict(&self, samples: &[usize], max_refs: usize) -> Dataset {
        let mut out = self.clone();
        out.samples = samples
            .iter()
            .enumerate()
            .map(|(id, &i)| {
                let mut s = self.samples[i].clone();
                s.id = id;
                s.references.truncate(max_refs.max(1));
                s.tokens.truncate(max_refs.max(1));
                s
            })
            .collect();
        out.train = (0..samples.len()).collect();
        out.val = Vec::new();
        out
    }

    pub fn stats(&self) -> DatasetStats {
        let refs: Vec<&Vec<String>> = self.samples.iter().flat_map(|s| s.tokens.iter()).collect();
        let words: usize = refs.iter().map(|t| t.len()).sum();
        DatasetStats {
            scenes: self.scenes.len(),
            samples: self.samples.len(),
            references: refs.len(),
            targets_per_image: self.samples.len() as f64 / self.scenes.len().max(1) as f64,
            words_per_instruction: words as f64 / refs.len().max(1) as f64,
            vocab_size: self.vocab.len(),
        }
    }

    fn manifest(&self) -> Manifest {
        let scene_split = |ids: &[usize]| {
            let mut s: Vec<usize> = ids.iter().map(|&i| self.samples[i].scene).collect();
            s.sort_unstable();
            s.dedup();
            s.len()
        };
        Manifest {
            version: MANIFEST_VERSION,
            master_seed: self.master_seed,
            config: self.config.clone(),
            vocab_size: self.vocab.len(),
            counts: SplitCounts {
                train_scenes: scene_split(&self.train),
                val_scenes: scene_split(&self.val),
                train_samples: self.train.len(),
                val_samples: self.val.len(),
            },
            splits: Splits { train: self.train.clone(), val: self.val.clone() },
            scenes: self
                .scenes
                .iter()
                .map(|s| SceneRecord { scene: s.clone(), images: (0..s.views.len()).map(|v| image_name(s.id, v)).collect() })
                .collect(),
            samples: self
                .samples
                .iter()
                .map(|s| {
                    let scene = &self.scenes[s.scene];
                    SampleRecord {
                        id: s.id,
                        scene: s.scene,
                        target: s.target,
                        source: s.source,
                        target_box: scene.objects[s.target].boxes[0].as_array(),
                        source_box: scene.furniture[s.source].boxes[0].as_array(),
                        references: s.references.clone(),
                        token_ids: s.tokens.iter().map(|t| self.vocab.encode(t)).collect(),
                    }
                })
                .collect(),
        }
    }

    fn manifest_bytes(&self) -> Vec<u8> {
        let mut b = serde_json::to_vec_pretty(&self.manifest()).expect("manifest serializes");
        b.push(b'\n');
        b
    }

    /// SHA-256 over the manifest, the vocabulary and every image, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.manifest_bytes());
        h.update(self.vocab.to_text());
        for s in &self.scenes {
            for img in &s.images {
                h.update(img.to_ppm());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Writes manifest.json, vocab.txt and images/; returns the digest.
    pub fn save(&self, dir: &Path) -> Result<String> {
        std::fs::create_dir_all(dir.join("images")).map_err(io_err(dir))?;
        for s in &self.scenes {
            for (v, img) in s.images.iter().enumerate() {
                img.save(&dir.join(image_name(s.id, v)))?;
            }
        }
        self.vocab.save(&dir.join("vocab.txt"))?;
        let path = dir.join("manifest.json");
        std::fs::write(&path, self.manifest_bytes()).map_err(io_err(&path))?;
        Ok(self.digest())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| DatasetError::Manifest(e.to_string()))?;
        let bad = |msg: String| Err(DatasetError::Manifest(msg));
        if m.version != MANIFEST_VERSION {
            return bad(format!("version {} is not supported (expected {MANIFEST_VERSION})", m.version));
        }
        let vocab = Vocabulary::load(&dir.join("vocab.txt"))?;
        if vocab.len() != m.vocab_size {
            return Err(DatasetError::Vocab(format!(
                "vocab.txt has {} entries, manifest records {}",
                vocab.len(),
                m.vocab_size
            )));
        }
        let mut scenes = Vec::with_capacity(m.scenes.len());
        for (i, rec) in m.scenes.into_iter().enumerate() {
            let mut scene = rec.scene;
            let views = scene.views.len();
            if scene.id != i {
                return bad(format!("scene {i} has id {}", scene.id));
            }
            if rec.images.len() != views {
                return bad(format!("scene {i} lists {} images for {views} views", rec.images.len()));
            }
            for boxes in scene.objects.iter_mut().map(|o| &mut o.boxes).chain(scene.furniture.iter_mut().map(|f| &mut f.boxes)) {
                if boxes.len() != views {
                    return bad(format!("scene {i} has a box list of length {} for {views} views", boxes.len()));
                }
                for (v, b) in boxes.iter_mut().enumerate() {
                    b.frame = v;
                    if !b.inside(scene.width, scene.height) {
                        return bad(format!("scene {i} has a box outside view {}", v + 1));
                    }
                }
            }
            for name in &rec.images {
                let img = Image::load(&dir.join(name))?;
                if img.width != scene.width || img.height != scene.height {
                    return bad(format!("{name} is {}x{}, expected {}x{}", img.width, img.height, scene.width, scene.height));
                }
                scene.images.push(img);
            }
            scenes.push(scene);
        }
        let mut samples = Vec::with_capacity(m.samples.len());
        for (i, rec) in m.samples.into_iter().enumerate() {
            if rec.id != i || rec.scene >= scenes.len() {
                return bad(format!("sample {i} has inconsistent ids"));
            }
            let scene = &scenes[rec.scene];
            if rec.target >= scene.objects.len() || rec.source >= scene.furniture.len() {
                return bad(format!("sample {i} refers to a missing object"));
            }
            if rec.references.is_empty() || rec.references.len() != rec.token_ids.len() {
                return bad(format!("sample {i} has mismatched references and token ids"));
            }
            let tokens: Vec<Vec<String>> = rec.references.iter().map(|r| tokenize(r)).collect();
            for (t, ids) in tokens.iter().zip(&rec.token_ids) {
                if &vocab.encode(t) != ids {
                    return Err(DatasetError::Vocab(format!("token ids of sample {i} disagree with vocab.txt")));
                }
            }
            samples.push(Sample { id: i, scene: rec.scene, target: rec.target, source: rec.source, references: rec.references, tokens });
        }
        let n = samples.len();
        if m.splits.train.iter().chain(&m.splits.val).any(|&i| i >= n) {
            return bad("split lists refer to missing samples".into());
        }
        if m.counts.train_samples != m.splits.train.len() || m.counts.val_samples != m.splits.val.len() {
            return bad("split counts disagree with split lists".into());
        }
        Ok(Dataset { master_seed: m.master_seed, config: m.config, scenes, samples, vocab, train: m.splits.train, val: m.splits.val })
    }
}
