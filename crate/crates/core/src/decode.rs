use mabn_autograd::{argmax, log_softmax, Tensor};
use mabn_dataset::{BOS, EOS, PAD, UNK};

use crate::error::{CoreError, Result};
use crate::inputs::SampleInputs;
use crate::model::{DecoderState, MultiAbn, Session, ViewFeatures};

/// Attention maps of one generated word.
#[derive(Clone, Debug, PartialEq)]
pub struct StepAttention {
    /// One `[S_f, S_f]` map per view (empty without visual branches).
    pub visual: Vec<Tensor>,
    /// Length-d map (absent without the linguistic branch).
    pub linguistic: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    /// Word ids with special tokens removed.
    pub tokens: Vec<usize>,
    /// log p_o of each kept word.
    pub log_probs: Vec<f64>,
    /// Attention of each kept word, aligned with `tokens`.
    pub attention: Vec<StepAttention>,
    /// Every emitted id, including `<eos>` when it was reached.
    pub raw: Vec<usize>,
}

fn is_special(t: usize) -> bool {
    matches!(t, PAD | BOS | EOS | UNK)
}

/// Step-by-step decoder over one sample's features.
pub struct Decoder<'m> {
    session: Session<'m>,
    feats: Vec<ViewFeatures>,
    state: DecoderState,
    finished: bool,
}

/// Result of one decoder step.
pub struct DecoderStep {
    pub log_probs: Vec<f64>,
    pub attention: StepAttention,
}

impl<'m> Decoder<'m> {
    pub fn new(model: &'m MultiAbn, inputs: &SampleInputs) -> Result<Self> {
        let mut session = model.session(false);
        let feats = session.encode_views(inputs)?;
        let state = session.perception_init(&inputs.target_crop, &inputs.source_crop, &inputs.relation)?;
        Ok(Decoder { session, feats, state, finished: false })
    }

    pub fn state(&self) -> &DecoderState {
        &self.state
    }

    pub fn hidden(&self) -> &Tensor {
        self.session.tape.value(self.state.top())
    }

    /// Advances on `y_prev`. Feeding `<eos>` ends the sequence; any step
    /// after that is a contract error.
    pub fn step(&mut self, y_prev: usize) -> Result<DecoderStep> {
        if self.finished {
            return Err(CoreError::Contract("decoder stepped after <eos>".into()));
        }
        if y_prev == EOS {
            self.finished = true;
            return Err(CoreError::Contract("decoder stepped after <eos>".into()));
        }
        let out = self.session.step(&self.feats, &self.state, y_prev)?;
        let tape = &self.session.tape;
        let log_probs = log_softmax(tape.value(out.output_logits).data());
        let attention = StepAttention {
            visual: out.visual.iter().map(|b| tape.value(b.attention).clone()).collect(),
            linguistic: out.linguistic.map(|b| tape.value(b.attention).clone()),
        };
        self.state = out.state;
        Ok(DecoderStep { log_probs, attention })
    }
}

impl MultiAbn {
    /// Greedy decoding from `<bos>` until `<eos>` or `max_len` words.
    pub fn decode_greedy(&self, inputs: &SampleInputs, max_len: usize) -> Result<Decoded> {
        let mut dec = Decoder::new(self, inputs)?;
        let mut out = Decoded { tokens: Vec::new(), log_probs: Vec::new(), attention: Vec::new(), raw: Vec::new() };
        let mut prev = BOS;
        for _ in 0..max_len {
            let step = dec.step(prev)?;
            let tok = argmax(&step.log_probs);
            out.raw.push(tok);
            if tok == EOS {
                break;
            }
            if !is_special(tok) {
                out.tokens.push(tok);
                out.log_probs.push(step.log_probs[tok]);
                out.attention.push(step.attention);
            }
            prev = tok;
        }
        Ok(out)
    }

    /// Length-normalized beam search; width 1 is greedy decoding.
    pub fn decode_beam(&self, inputs: &SampleInputs, width: usize, max_len: usize) -> Result<Hypothesis> {
        let mut scorer = ModelScorer::new(self, inputs)?;
        beam_search(&mut scorer, width, max_len)
    }
}

/// Anything that scores the next token given a decoding state.
pub trait StepScorer {
    type State: Clone;

    fn start(&mut self) -> Result<Self::State>;

    /// Log-probabilities of the next token after `prev`, and the new state.
    fn score(&mut self, state: &Self::State, prev: usize) -> Result<(Vec<f64>, Self::State)>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Emitted ids without the final `<eos>`.
    pub raw: Vec<usize>,
    /// Log-probability of every scored step, `<eos>` included when reached.
    pub log_probs: Vec<f64>,
    pub finished: bool,
}

impl Hypothesis {
    pub fn log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }

    /// Mean log-probability per scored step.
    pub fn normalized(&self) -> f64 {
        if self.log_probs.is_empty() {
            return f64::NEG_INFINITY;
        }
        self.log_prob() / self.log_probs.len() as f64
    }

    /// Words with special tokens removed.
    pub fn tokens(&self) -> Vec<usize> {
        self.raw.iter().copied().filter(|&t| !is_special(t)).collect()
    }
}

pub fn greedy_search<S: StepScorer>(scorer: &mut S, max_len: usize) -> Result<Hypothesis> {
    let mut state = scorer.start()?;
    let mut hyp = Hypothesis { raw: Vec::new(), log_probs: Vec::new(), finished: false };
    let mut prev = BOS;
    for _ in 0..max_len {
        let (lp, next) = scorer.score(&state, prev)?;
        let tok = argmax(&lp);
        hyp.log_probs.push(lp[tok]);
        if tok == EOS {
            hyp.finished = true;
            break;
        }
        hyp.raw.push(tok);
        prev = tok;
        state = next;
    }
    Ok(hyp)
}

/// Indices of the `k` largest values, ties broken by lower index.
fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Beam search ranking complete hypotheses by mean log-probability per
/// step. The greedy hypothesis always competes, so the result never scores
/// below it.
pub fn beam_search<S: StepScorer>(scorer: &mut S, width: usize, max_len: usize) -> Result<Hypothesis> {
    if width == 0 {
        return Err(CoreError::Contract("beam width must be at least 1".into()));
    }
    let greedy = greedy_search(scorer, max_len)?;
    let start = scorer.start()?;
    let mut beams = vec![(Hypothesis { raw: Vec::new(), log_probs: Vec::new(), finished: false }, start)];
    let mut done: Vec<Hypothesis> = Vec::new();
    for step in 0..max_len {
        let mut next = Vec::new();
        for (hyp, state) in &beams {
            let prev = hyp.raw.last().copied().unwrap_or(BOS);
            let (lp, new_state) = scorer.score(state, prev)?;
            for tok in top_k(&lp, width) {
                let mut h = hyp.clone();
                h.log_probs.push(lp[tok]);
                if tok == EOS {
                    h.finished = true;
                    done.push(h);
                } else {
                    h.raw.push(tok);
                    next.push((h, new_state.clone()));
                }
            }
        }
        next.sort_by(|a, b| b.0.normalized().total_cmp(&a.0.normalized()));
        next.truncate(width);
        if next.is_empty() {
            break;
        }
        if step + 1 == max_len {
            done.extend(next.iter().map(|(h, _)| h.clone()));
        }
        beams = next;
    }
    let mut best = greedy;
    for h in done {
        if h.normalized() > best.normalized() {
            best = h;
        }
    }
    Ok(best)
}

/// Adapts the network to [`StepScorer`]; every hypothesis shares one tape.
pub struct ModelScorer<'m> {
    session: Session<'m>,
    feats: Vec<ViewFeatures>,
    init: DecoderState,
}

impl<'m> ModelScorer<'m> {
    pub fn new(model: &'m MultiAbn, inputs: &SampleInputs) -> Result<Self> {
        let mut session = model.session(false);
        let feats = session.encode_views(inputs)?;
        let init = session.perception_init(&inputs.target_crop, &inputs.source_crop, &inputs.relation)?;
        Ok(ModelScorer { session, feats, init })
    }
}

impl StepScorer for ModelScorer<'_> {
    type State = DecoderState;

    fn start(&mut self) -> Result<DecoderState> {
        Ok(self.init.clone())
    }

    fn score(&mut self, state: &DecoderState, prev: usize) -> Result<(Vec<f64>, DecoderState)> {
        let out = self.session.step(&self.feats, state, prev)?;
        Ok((log_softmax(self.session.tape.value(out.output_logits).data()), out.state))
    }
}
