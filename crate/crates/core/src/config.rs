use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Length of the relation vector: three box pairs, five ratios each.
pub const REL_DIM: usize = 15;

/// Which attention branches the network has.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    Full,
    /// Visual branches only; the output head reads the hidden state directly.
    VabOnly,
    /// Linguistic branch only; the context is pooled from unmasked features.
    LabOnly,
}

impl Ablation {
    pub fn has_visual(self) -> bool {
        self != Ablation::LabOnly
    }

    pub fn has_linguistic(self) -> bool {
        self != Ablation::VabOnly
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::VabOnly => "vab-only",
            Ablation::LabOnly => "lab-only",
        }
    }

    /// Row label in score tables.
    pub fn method_label(self) -> String {
        match self {
            Ablation::Full => "Multi-ABN".into(),
            a => format!("Multi-ABN ({})", a.name()),
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(Ablation::Full),
            "vab-only" => Ok(Ablation::VabOnly),
            "lab-only" => Ok(Ablation::LabOnly),
            _ => Err(format!("unknown ablation {s:?} (expected full, vab-only or lab-only)")),
        }
    }
}

/// One 3×3, padding-1 convolution of the feature extractor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of views M.
    pub views: usize,
    pub vocab_size: usize,
    /// LSTM cell size d.
    pub hidden: usize,
    pub lstm_layers: usize,
    /// Side of the square RGB input; crops are resized to it as well.
    pub image_size: usize,
    pub extractor: Vec<ConvSpec>,
    /// Channels of the attention-branch convolutions.
    pub branch_channels: usize,
    /// Channels of the hidden-state projection tiled into the visual branch.
    pub cond_channels: usize,
    /// Hidden widths of the visual branch MLP.
    pub mlp_hidden: usize,
    /// Width of each of the target, source and relation embeddings.
    pub crop_embed: usize,
    pub word_embed: usize,
    pub max_len: usize,
    pub ablation: Ablation,
    /// Attention that ignores the hidden state (one map per image).
    pub static_attention: bool,
    /// Fifth relation component as printed (w_m h_n / W_m H_n) instead of the area ratio.
    pub literal_relation: bool,
    /// Average the visual auxiliary losses over views instead of summing them.
    pub average_visual_loss: bool,
}

impl ModelConfig {
    /// Small network used for training runs on a CPU.
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            views: 3,
            vocab_size,
            hidden: 64,
            lstm_layers: 2,
            image_size: 32,
            extractor: vec![
                ConvSpec { channels: 8, stride: 2 },
                ConvSpec { channels: 16, stride: 2 },
                ConvSpec { channels: 32, stride: 2 },
            ],
            branch_channels: 8,
            cond_channels: 8,
            mlp_hidden: 64,
            crop_embed: 32,
            word_embed: 32,
            max_len: 16,
            ablation: Ablation::Full,
            static_attention: false,
            literal_relation: false,
            average_visual_loss: false,
        }
    }

    /// Full-size shapes: 224 input, 14×14×512 features, 3×1024 LSTM, |V| = 233.
    pub fn full_scale() -> Self {
        ModelConfig {
            views: 3,
            vocab_size: 233,
            hidden: 1024,
            lstm_layers: 3,
            image_size: 224,
            extractor: vec![
                ConvSpec { channels: 16, stride: 2 },
                ConvSpec { channels: 32, stride: 2 },
                ConvSpec { channels: 64, stride: 2 },
                ConvSpec { channels: 512, stride: 2 },
            ],
            branch_channels: 233,
            cond_channels: 8,
            mlp_hidden: 1024,
            crop_embed: 256,
            word_embed: 256,
            max_len: 30,
            ablation: Ablation::Full,
            static_attention: false,
            literal_relation: false,
            average_visual_loss: false,
        }
    }

    /// Tiny network for whole-model finite-difference checks.
    pub fn gradcheck() -> Self {
        ModelConfig {
            views: 2,
            vocab_size: 12,
            hidden: 8,
            lstm_layers: 2,
            image_size: 8,
            extractor: vec![ConvSpec { channels: 4, stride: 2 }],
            branch_channels: 12,
            cond_channels: 2,
            mlp_hidden: 6,
            crop_embed: 3,
            word_embed: 4,
            max_len: 3,
            ablation: Ablation::Full,
            static_attention: false,
            literal_relation: false,
            average_visual_loss: false,
        }
    }

    pub fn preset(name: &str, vocab_size: usize) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy(vocab_size)),
            "paper-shape" => Ok(ModelConfig { vocab_size, ..Self::full_scale() }),
            "gradcheck" => Ok(ModelConfig { vocab_size, ..Self::gradcheck() }),
            _ => Err(CoreError::Config(format!("unknown preset {name:?} (expected toy, paper-shape or gradcheck)"))),
        }
    }

    /// Channels C_f of the feature maps.
    pub fn feature_channels(&self) -> usize {
        self.extractor.last().map_or(3, |c| c.channels)
    }

    /// Side S_f of the feature maps.
    pub fn feature_size(&self) -> usize {
        self.extractor.iter().fold(self.image_size, |s, c| (s + 2 - 3) / c.stride + 1)
    }

    /// Size of a pooled crop feature.
    pub fn crop_dim(&self) -> usize {
        self.feature_channels()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.views == 0 {
            return bad("views must be at least 1".into());
        }
        if self.vocab_size < 5 {
            return bad(format!("vocab_size {} leaves no room for words after the 4 specials", self.vocab_size));
        }
        for (name, v) in [
            ("hidden", self.hidden),
            ("lstm_layers", self.lstm_layers),
            ("branch_channels", self.branch_channels),
            ("cond_channels", self.cond_channels),
            ("mlp_hidden", self.mlp_hidden),
            ("crop_embed", self.crop_embed),
            ("word_embed", self.word_embed),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.extractor.is_empty() {
            return bad("extractor needs at least one convolution".into());
        }
        let mut s = self.image_size;
        for (i, c) in self.extractor.iter().enumerate() {
            if c.channels == 0 || c.stride == 0 {
                return bad(format!("extractor layer {i} has zero channels or stride"));
            }
            if s == 0 {
                return bad(format!("image_size {} collapses before extractor layer {i}", self.image_size));
            }
            s = (s + 2 - 3) / c.stride + 1;
        }
        Ok(())
    }
}
