//! The Multi-ABN network.
//!
//! A shared convolutional extractor turns every view into a feature map f^j.
//! At each decoding step k:
//!
//! 1. visual branch j reads f^j and the current hidden state h, produces a
//!    spatial attention map a^j, the masked map v^j = a^j ⊙ f^j and an
//!    auxiliary word distribution p_v^j;
//! 2. the pooled masked maps form the context c, which is embedded with the
//!    previous word and advances the LSTM to h';
//! 3. the linguistic branch masks h' into l = a_l ⊙ h' and predicts p_l;
//! 4. the output head predicts p_o from l.
//!
//! The LSTM starts from x_f, the embedding of the two crops and the relation
//! vector.

use mabn_autograd::{lstm_cell, Binding, Gradients, ParamId, ParamSet, Tape, Tensor, Var};
use rand::Rng;

use crate::config::{ModelConfig, REL_DIM};
use crate::error::{CoreError, Result};
use crate::inputs::SampleInputs;

#[derive(Clone, Copy, Debug)]
struct Affine {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct VisualIds {
    cond: Option<Affine>,
    /// First convolution, split by input: the feature-map channels (with
    /// the bias) and the tiled hidden-state channels (weights only).
    feature_conv: Affine,
    state_conv: Option<ParamId>,
    convs: [Affine; 3],
    attention: Affine,
    mlp: [Affine; 2],
    output: Affine,
}

#[derive(Clone, Debug)]
struct LinguisticIds {
    convs: [Affine; 3],
    attention: Affine,
    output: Affine,
}

#[derive(Clone, Debug)]
struct Ids {
    extractor: Vec<Affine>,
    crop: Vec<Affine>,
    embed_target: Affine,
    embed_source: Affine,
    embed_relation: Affine,
    fuse: Affine,
    words: ParamId,
    context: Affine,
    lstm: Vec<Affine>,
    visual: Vec<VisualIds>,
    linguistic: Option<LinguisticIds>,
    output: Affine,
}

/// Parameters plus the bookkeeping to address them.
#[derive(Clone, Debug)]
pub struct MultiAbn {
    config: ModelConfig,
    params: ParamSet,
    ids: Ids,
}

struct Builder<'r, R: Rng> {
    params: ParamSet,
    rng: &'r mut R,
}

impl<R: Rng> Builder<'_, R> {
    fn tensor(&mut self, name: String, shape: Vec<usize>, fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let t = Tensor::uniform(shape, bound, self.rng);
        self.params.insert(name, t)
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Affine {
        Affine {
            w: self.tensor(format!("{name}.weight"), vec![fan_out, fan_in], fan_in),
            b: self.tensor(format!("{name}.bias"), vec![fan_out], fan_in),
        }
    }

    fn conv2d(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Affine {
        let fan_in = cin * k * k;
        Affine {
            w: self.tensor(format!("{name}.weight"), vec![cout, cin, k, k], fan_in),
            b: self.tensor(format!("{name}.bias"), vec![cout], fan_in),
        }
    }

    fn conv1d(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Affine {
        let fan_in = cin * k;
        Affine {
            w: self.tensor(format!("{name}.weight"), vec![cout, cin, k], fan_in),
            b: self.tensor(format!("{name}.bias"), vec![cout], fan_in),
        }
    }
}

impl MultiAbn {
    /// Fresh parameters: uniform(±1/√fan_in), LSTM forget-gate bias 1.
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut b = Builder { params: ParamSet::new(), rng };
        let extractor_stack = |b: &mut Builder<R>, prefix: &str| {
            let mut cin = 3;
            let mut out = Vec::new();
            for (i, spec) in c.extractor.iter().enumerate() {
                out.push(b.conv2d(&format!("{prefix}.conv{}", i + 1), cin, spec.channels, 3));
                cin = spec.channels;
            }
            out
        };
        let extractor = extractor_stack(&mut b, "extractor");
        let crop = extractor_stack(&mut b, "crop");
        let (cf, d, bc) = (c.feature_channels(), c.hidden, c.branch_channels);
        let embed_target = b.linear("perception.embed_target", c.crop_dim(), c.crop_embed);
        let embed_source = b.linear("perception.embed_source", c.crop_dim(), c.crop_embed);
        let embed_relation = b.linear("perception.embed_relation", REL_DIM, c.crop_embed);
        let fuse = b.linear("perception.fuse", 3 * c.crop_embed, d);
        let words = b.tensor("perception.word_embedding".into(), vec![c.vocab_size, c.word_embed], 1);
        let context = b.linear("perception.context", c.views * cf + c.word_embed, d);
        let lstm = (0..c.lstm_layers)
            .map(|l| {
                let a = b.linear(&format!("perception.lstm{}", l + 1), 2 * d, 4 * d);
                let bias = b.params.get_mut(a.b).data_mut();
                bias[d..2 * d].fill(1.0);
                a
            })
            .collect();
        let visual = if c.ablation.has_visual() {
            (0..c.views)
                .map(|j| {
                    let p = format!("vab{}", j + 1);
                    let cond = (!c.static_attention).then(|| b.linear(&format!("{p}.cond"), d, c.cond_channels));
                    let feature_conv = b.conv2d(&format!("{p}.conv1"), cf, bc, 3);
                    let fan_in = (cf + c.cond_channels) * 9;
                    let state_conv = (!c.static_attention).then(|| {
                        b.tensor(format!("{p}.conv1_state.weight"), vec![bc, c.cond_channels, 3, 3], fan_in)
                    });
                    VisualIds {
                        cond,
                        feature_conv,
                        state_conv,
                        convs: [
                            b.conv2d(&format!("{p}.conv2"), bc, bc, 3),
                            b.conv2d(&format!("{p}.conv3"), bc, bc, 3),
                            b.conv2d(&format!("{p}.conv4"), bc, bc, 3),
                        ],
                        attention: b.conv2d(&format!("{p}.attention"), bc, 1, 1),
                        mlp: [
                            b.linear(&format!("{p}.mlp1"), bc + d, c.mlp_hidden),
                            b.linear(&format!("{p}.mlp2"), c.mlp_hidden, c.mlp_hidden),
                        ],
                        output: b.linear(&format!("{p}.output"), c.mlp_hidden, c.vocab_size),
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        let linguistic = c.ablation.has_linguistic().then(|| LinguisticIds {
            convs: [
                b.conv1d("lab.conv1", 1, bc, 3),
                b.conv1d("lab.conv2", bc, bc, 3),
                b.conv1d("lab.conv3", bc, bc, 3),
            ],
            attention: b.conv1d("lab.attention", bc, 1, 1),
            output: b.linear("lab.output", bc, c.vocab_size),
        });
        let output = b.linear("perception.output", d, c.vocab_size);
        let ids = Ids {
            extractor,
            crop,
            embed_target,
            embed_source,
            embed_relation,
            fuse,
            words,
            context,
            lstm,
            visual,
            linguistic,
            output,
        };
        Ok(MultiAbn { config, params: b.params, ids })
    }

    /// Rebuilds a model around saved parameters; names and shapes must match
    /// the configuration exactly.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut model = MultiAbn::new(config, &mut rng)?;
        if params.len() != model.params.len() {
            return Err(CoreError::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id).to_string();
            let src = params
                .id(&name)
                .ok_or_else(|| CoreError::Checkpoint(format!("missing parameter {name}")))?;
            let value = params.get(src);
            if value.shape() != model.params.get(id).shape() {
                return Err(CoreError::Checkpoint(format!(
                    "{name} has shape {:?}, expected {:?}",
                    value.shape(),
                    model.params.get(id).shape()
                )));
            }
            *model.params.get_mut(id) = value.clone();
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Zeroes every attention convolution, so all masks start at exactly 0.5.
    pub fn zero_attention(&mut self) {
        let mut ids: Vec<Affine> = self.ids.visual.iter().map(|v| v.attention).collect();
        ids.extend(self.ids.linguistic.as_ref().map(|l| l.attention));
        for a in ids {
            self.params.get_mut(a.w).data_mut().fill(0.0);
            self.params.get_mut(a.b).data_mut().fill(0.0);
        }
    }

    /// Sets every bias to zero (weights untouched).
    pub fn zero_biases(&mut self) {
        for id in self.params.ids().collect::<Vec<_>>() {
            if self.params.name(id).ends_with(".bias") {
                self.params.get_mut(id).data_mut().fill(0.0);
            }
        }
    }

    pub fn session(&self, requires_grad: bool) -> Session<'_> {
        Session { model: self, tape: Tape::new(), binding: Binding::new(&self.params, requires_grad) }
    }

    /// Teacher-forced losses without gradients.
    pub fn loss(&self, inputs: &SampleInputs) -> Result<LossValues> {
        let mut s = self.session(false);
        let vars = s.forward_loss(inputs)?;
        Ok(vars.values(&s.tape))
    }

    /// Teacher-forced losses and the gradient of L with respect to every parameter.
    pub fn loss_and_grad(&self, inputs: &SampleInputs) -> Result<(LossValues, Gradients)> {
        let mut s = self.session(true);
        let vars = s.forward_loss(inputs)?;
        let values = vars.values(&s.tape);
        s.tape.backward(vars.total)?;
        Ok((values, s.binding.gradients(&s.tape, &self.params)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub perception: f64,
    pub attention: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub perception: Var,
    pub attention: Var,
}

impl LossVars {
    pub fn values(&self, tape: &Tape) -> LossValues {
        LossValues {
            total: tape.value(self.total).item(),
            perception: tape.value(self.perception).item(),
            attention: tape.value(self.attention).item(),
        }
    }
}

/// LSTM state for every layer; the top layer's hidden state is h_k.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
    /// LSTM advances so far (the same for every layer).
    pub advances: usize,
}

impl DecoderState {
    pub fn top(&self) -> Var {
        *self.h.last().expect("at least one layer")
    }
}

/// A view's feature map f^j and, with visual branches, the hidden-state-free
/// part of the branch's first convolution.
#[derive(Clone, Copy, Debug)]
pub struct ViewFeatures {
    pub map: Var,
    pub pre: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct BranchOut {
    /// `[S, S]` for a visual branch, `[d]` for the linguistic branch.
    pub attention: Var,
    pub masked: Var,
    pub logits: Var,
}

#[derive(Clone, Debug)]
pub struct StepVars {
    pub visual: Vec<BranchOut>,
    pub linguistic: Option<BranchOut>,
    pub output_logits: Var,
    pub state: DecoderState,
}

/// One forward pass recorded on its own tape.
pub struct Session<'m> {
    pub model: &'m MultiAbn,
    pub tape: Tape,
    binding: Binding,
}

impl Session<'_> {
    fn p(&mut self, id: ParamId) -> Var {
        self.binding.var(&mut self.tape, &self.model.params, id)
    }

    fn linear(&mut self, a: Affine, x: Var) -> Result<Var> {
        let (w, b) = (self.p(a.w), self.p(a.b));
        Ok(self.tape.linear(x, w, Some(b))?)
    }

    fn dense_tanh(&mut self, a: Affine, x: Var) -> Result<Var> {
        let y = self.linear(a, x)?;
        Ok(self.tape.tanh(y)?)
    }

    fn conv2d(&mut self, a: Affine, x: Var, stride: usize, padding: usize) -> Result<Var> {
        let (w, b) = (self.p(a.w), self.p(a.b));
        Ok(self.tape.conv2d(x, w, b, stride, padding)?)
    }

    fn conv1d(&mut self, a: Affine, x: Var, padding: usize) -> Result<Var> {
        let (w, b) = (self.p(a.w), self.p(a.b));
        Ok(self.tape.conv1d(x, w, b, 1, padding)?)
    }

    fn stack(&mut self, layers: &[Affine], image: &Tensor) -> Result<Var> {
        let cfg = &self.model.config;
        let want = [3, cfg.image_size, cfg.image_size];
        if image.shape() != want {
            return Err(CoreError::Contract(format!("image has shape {:?}, expected {want:?}", image.shape())));
        }
        let mut x = self.tape.constant(image.clone());
        for (a, spec) in layers.iter().zip(&cfg.extractor) {
            let y = self.conv2d(*a, x, spec.stride, 1)?;
            x = self.tape.tanh(y)?;
        }
        Ok(x)
    }

    /// Feature map f = `[C_f, S_f, S_f]` of one view.
    pub fn extract_visual_features(&mut self, image: &Tensor) -> Result<Var> {
        let layers = self.model.ids.extractor.clone();
        self.stack(&layers, image)
    }

    /// Pooled `[C_f]` crop feature.
    pub fn extract_crop_features(&mut self, crop: &Tensor) -> Result<Var> {
        let layers = self.model.ids.crop.clone();
        let f = self.stack(&layers, crop)?;
        Ok(self.tape.global_avg_pool(f)?)
    }

    fn advance(&mut self, x: Var, prev: Option<&DecoderState>) -> Result<DecoderState> {
        let d = self.model.config.hidden;
        let layers = self.model.ids.lstm.clone();
        let mut state = DecoderState { h: Vec::new(), c: Vec::new(), advances: prev.map_or(0, |p| p.advances) + 1 };
        let mut input = x;
        for (l, a) in layers.iter().enumerate() {
            let (h0, c0) = match prev {
                Some(p) => (p.h[l], p.c[l]),
                None => (self.tape.constant(Tensor::zeros([d])), self.tape.constant(Tensor::zeros([d]))),
            };
            let (w, b) = (self.p(a.w), self.p(a.b));
            let (h, c) = lstm_cell(&mut self.tape, input, h0, c0, w, b)?;
            state.h.push(h);
            state.c.push(c);
            input = h;
        }
        Ok(state)
    }

    /// x_f from the crops and relation vector, then one LSTM advance from zero state.
    pub fn perception_init(&mut self, target: &Tensor, source: &Tensor, relation: &Tensor) -> Result<DecoderState> {
        if relation.shape() != [REL_DIM] {
            return Err(CoreError::Contract(format!("relation vector has shape {:?}", relation.shape())));
        }
        let ids = self.model.ids.clone();
        let t = self.extract_crop_features(target)?;
        let s = self.extract_crop_features(source)?;
        let r = self.tape.constant(relation.clone());
        let et = self.dense_tanh(ids.embed_target, t)?;
        let es = self.dense_tanh(ids.embed_source, s)?;
        let er = self.dense_tanh(ids.embed_relation, r)?;
        let joined = self.tape.concat(&[et, es, er], 0)?;
        let x_f = self.dense_tanh(ids.fuse, joined)?;
        self.advance(x_f, None)
    }

    /// h' = LSTM(E(c ⊕ embed(y_prev))).
    pub fn perception_step(&mut self, context: Var, y_prev: usize, state: &DecoderState) -> Result<DecoderState> {
        let ids = self.model.ids.clone();
        let table = self.p(ids.words);
        let word = self.tape.embedding(table, y_prev)?;
        let joined = self.tape.concat(&[context, word], 0)?;
        let e = self.dense_tanh(ids.context, joined)?;
        self.advance(e, Some(state))
    }

    fn visual_ids(&self, j: usize) -> Result<VisualIds> {
        self.model.ids.visual.get(j).cloned().ok_or_else(|| {
            CoreError::Contract(format!("the model has no visual branch {}", j + 1))
        })
    }

    /// Feature map of view j plus the part of branch j's first convolution
    /// that does not depend on the hidden state.
    pub fn prepare_view(&mut self, j: usize, map: Var) -> Result<ViewFeatures> {
        let pre = if self.model.config.ablation.has_visual() {
            let ids = self.visual_ids(j)?;
            Some(self.conv2d(ids.feature_conv, map, 1, 1)?)
        } else {
            None
        };
        Ok(ViewFeatures { map, pre })
    }

    pub fn visual_attention_branch(&mut self, j: usize, view: &ViewFeatures, h: Var) -> Result<BranchOut> {
        let ids = self.visual_ids(j)?;
        let s = self.model.config.feature_size();
        let f = view.map;
        let pre = match view.pre {
            Some(p) => p,
            None => self.conv2d(ids.feature_conv, f, 1, 1)?,
        };
        let y1 = match (ids.cond, ids.state_conv) {
            (Some(cond), Some(w)) => {
                let q = self.dense_tanh(cond, h)?;
                let tiled = self.tape.expand(q, &[s, s])?;
                let w = self.p(w);
                let zero = self.tape.constant(Tensor::zeros([self.model.config.branch_channels]));
                let from_state = self.tape.conv2d(tiled, w, zero, 1, 1)?;
                self.tape.add(pre, from_state)?
            }
            _ => pre,
        };
        let mut z = self.tape.tanh(y1)?;
        for a in &ids.convs[..2] {
            let y = self.conv2d(*a, z, 1, 1)?;
            z = self.tape.tanh(y)?;
        }
        let third = z;
        let logit = self.conv2d(ids.attention, third, 1, 0)?;
        let a = self.tape.sigmoid(logit)?;
        let attention = self.tape.reshape(a, [s, s])?;
        let masked = self.tape.hadamard(f, attention)?;
        let y = self.conv2d(ids.convs[2], third, 1, 1)?;
        let z4 = self.tape.tanh(y)?;
        let pooled = self.tape.global_avg_pool(z4)?;
        let joined = self.tape.concat(&[pooled, h], 0)?;
        let m1 = self.dense_tanh(ids.mlp[0], joined)?;
        let m2 = self.dense_tanh(ids.mlp[1], m1)?;
        let logits = self.linear(ids.output, m2)?;
        Ok(BranchOut { attention, masked, logits })
    }

    pub fn linguistic_attention_branch(&mut self, h: Var) -> Result<BranchOut> {
        let ids = self.model.ids.linguistic.clone().ok_or_else(|| {
            CoreError::Contract("the model has no linguistic branch".into())
        })?;
        let d = self.model.config.hidden;
        let x = self.tape.reshape(h, [1, d])?;
        let y1 = self.conv1d(ids.convs[0], x, 1)?;
        let z1 = self.tape.tanh(y1)?;
        let y2 = self.conv1d(ids.convs[1], z1, 1)?;
        let z2 = self.tape.tanh(y2)?;
        let logit = self.conv1d(ids.attention, z2, 0)?;
        let a = self.tape.sigmoid(logit)?;
        let attention = self.tape.reshape(a, [d])?;
        let masked = self.tape.hadamard(h, attention)?;
        let y3 = self.conv1d(ids.convs[2], z2, 1)?;
        let z3 = self.tape.tanh(y3)?;
        let pooled = self.tape.global_avg_pool(z3)?;
        let logits = self.linear(ids.output, pooled)?;
        Ok(BranchOut { attention, masked, logits })
    }

    pub fn predict_token(&mut self, l: Var) -> Result<Var> {
        let out = self.model.ids.output;
        self.linear(out, l)
    }

    /// Feature maps of every view, prepared for the visual branches.
    pub fn encode_views(&mut self, inputs: &SampleInputs) -> Result<Vec<ViewFeatures>> {
        inputs.check(&self.model.config)?;
        let mut out = Vec::with_capacity(inputs.views.len());
        for (j, v) in inputs.views.iter().enumerate() {
            let map = self.extract_visual_features(v)?;
            out.push(self.prepare_view(j, map)?);
        }
        Ok(out)
    }

    /// One decoding step reading `state` and the previous word.
    pub fn step(&mut self, feats: &[ViewFeatures], state: &DecoderState, y_prev: usize) -> Result<StepVars> {
        let cfg = &self.model.config;
        let h = state.top();
        let mut visual = Vec::new();
        let mut pooled = Vec::with_capacity(feats.len());
        if cfg.ablation.has_visual() {
            for (j, f) in feats.iter().enumerate() {
                let out = self.visual_attention_branch(j, f, h)?;
                pooled.push(self.tape.global_avg_pool(out.masked)?);
                visual.push(out);
            }
        } else {
            for f in feats {
                pooled.push(self.tape.global_avg_pool(f.map)?);
            }
        }
        let context = self.tape.concat(&pooled, 0)?;
        let next = self.perception_step(context, y_prev, state)?;
        let h_next = next.top();
        let (linguistic, l) = if self.model.config.ablation.has_linguistic() {
            let out = self.linguistic_attention_branch(h_next)?;
            (Some(out), out.masked)
        } else {
            (None, h_next)
        };
        let output_logits = self.predict_token(l)?;
        Ok(StepVars { visual, linguistic, output_logits, state: next })
    }

    fn sum_scalars(&mut self, terms: &[Var]) -> Result<Var> {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.tape.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Teacher-forced L = L_per + L_att, each averaged over steps.
    pub fn forward_loss(&mut self, inputs: &SampleInputs) -> Result<LossVars> {
        let (words_in, targets) = inputs.teacher_forcing()?;
        let feats = self.encode_views(inputs)?;
        let mut state = self.perception_init(&inputs.target_crop, &inputs.source_crop, &inputs.relation)?;
        let visual_weight = if self.model.config.average_visual_loss { 1.0 / feats.len() as f64 } else { 1.0 };
        let (mut per, mut att) = (Vec::new(), Vec::new());
        for (&y_prev, &target) in words_in.iter().zip(&targets) {
            let out = self.step(&feats, &state, y_prev)?;
            per.push(self.tape.softmax_cross_entropy(out.output_logits, target)?);
            if let Some(l) = out.linguistic {
                att.push(self.tape.softmax_cross_entropy(l.logits, target)?);
            }
            for v in &out.visual {
                let ce = self.tape.softmax_cross_entropy(v.logits, target)?;
                att.push(if visual_weight == 1.0 { ce } else { self.tape.scale(ce, visual_weight)? });
            }
            state = out.state;
        }
        let steps = targets.len() as f64;
        let per_sum = self.sum_scalars(&per)?;
        let att_sum = self.sum_scalars(&att)?;
        let perception = self.tape.scale(per_sum, 1.0 / steps)?;
        let attention = self.tape.scale(att_sum, 1.0 / steps)?;
        let total = self.tape.add(perception, attention)?;
        Ok(LossVars { total, perception, attention })
    }
}
