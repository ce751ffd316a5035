//! Grammar-constrained generation. A small automaton tracks where the stream
//! is inside the response grammar and yields the set of ids that keep it a
//! valid prefix; sampling is restricted to that set.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm_core::LmModel;
use crate::motion_codec::{MotionCodec, MotionTokenGrid};
use crate::rotgeom::PoseSequence;
use crate::token_space::{parse_response_with, ResponseStructure, SectionOrder, Special, TokenKind, VocabLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecodeState {
    AwaitResponseOpen,
    AwaitThinkOpen,
    InThink,
    InText,
    AwaitSpeechOpen,
    InSpeech,
    AwaitMotionOpen,
    /// Next motion token must come from this residual layer.
    InMotion(usize),
    AwaitResponseClose,
    Done,
}

/// Hard length limits per section; motion is counted in timesteps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SectionCaps {
    pub think: usize,
    pub text: usize,
    pub speech: usize,
    pub motion_timesteps: usize,
}

impl Default for SectionCaps {
    fn default() -> Self {
        Self {
            think: 96,
            text: 48,
            speech: 128,
            motion_timesteps: 32,
        }
    }
}

impl SectionCaps {
    /// Upper bound on response length for these caps and `layers` motion layers.
    pub fn max_response_len(&self, layers: usize) -> usize {
        8 + self.think + self.text + self.speech + self.motion_timesteps * layers
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodePolicy {
    pub temperature: f64,
    pub top_k: usize,
    /// Greedy decoding (the temperature → 0 limit).
    pub argmax: bool,
    pub caps: SectionCaps,
    /// When set, motion may not exceed `ceil(speech_tokens × ratio)` timesteps.
    pub motion_per_speech: Option<f64>,
    pub seed: u64,
}

impl Default for DecodePolicy {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_k: usize::MAX,
            argmax: false,
            caps: SectionCaps::default(),
            motion_per_speech: None,
            seed: 0,
        }
    }
}

impl DecodePolicy {
    pub fn validate(&self) -> Result<()> {
        if !self.argmax && !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive unless argmax is set".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be ≥ 1".into()));
        }
        if let Some(r) = self.motion_per_speech {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::Config("motion_per_speech must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Response-grammar automaton with section counters.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Automaton {
    pub state: DecodeState,
    pub order: SectionOrder,
    pub caps: SectionCaps,
    pub motion_ratio_cap: Option<(u64, u64)>,
    pub think: usize,
    pub text: usize,
    pub speech: usize,
    pub motion_timesteps: usize,
    layers: usize,
}

impl Automaton {
    pub fn new(order: SectionOrder, caps: SectionCaps, layers: usize) -> Self {
        Self {
            state: DecodeState::AwaitResponseOpen,
            order,
            caps,
            motion_ratio_cap: None,
            think: 0,
            text: 0,
            speech: 0,
            motion_timesteps: 0,
            layers,
        }
    }

    pub fn for_policy(order: SectionOrder, policy: &DecodePolicy, layers: usize) -> Self {
        let mut a = Self::new(order, policy.caps, layers);
        // Stored as a rational with 1e6 resolution so the automaton stays `Eq + Hash`.
        a.motion_ratio_cap = policy.motion_per_speech.map(|r| ((r * 1e6).round() as u64, 1_000_000));
        a
    }

    pub fn is_done(&self) -> bool {
        self.state == DecodeState::Done
    }

    fn motion_cap(&self) -> usize {
        match self.motion_ratio_cap {
            Some((num, den)) => {
                let prop = (self.speech as u64 * num).div_ceil(den) as usize;
                self.caps.motion_timesteps.min(prop)
            }
            None => self.caps.motion_timesteps,
        }
    }

    /// True when a cap currently forces the section to close.
    pub fn at_cap(&self) -> bool {
        match self.state {
            DecodeState::InThink => self.think >= self.caps.think,
            DecodeState::InText => self.text >= self.caps.text,
            DecodeState::InSpeech => self.speech >= self.caps.speech,
            DecodeState::InMotion(0) => self.motion_timesteps >= self.motion_cap(),
            _ => false,
        }
    }

    /// Ids permitted in the current state.
    pub fn allowed_mask(&self, layout: &VocabLayout) -> Vec<bool> {
        let mut mask = vec![false; layout.vocab_size()];
        let mut allow_special = |s: Special| mask[layout.special(s) as usize] = true;
        let text_first = self.order == SectionOrder::TextFirst;
        let capped = self.at_cap();
        let mut ranges = Vec::new();
        match self.state {
            DecodeState::AwaitResponseOpen => allow_special(Special::ResponseOpen),
            DecodeState::AwaitThinkOpen => allow_special(Special::ThinkOpen),
            DecodeState::InThink => {
                allow_special(Special::ThinkClose);
                if !capped {
                    ranges.push(layout.text_range());
                }
            }
            DecodeState::InText => {
                allow_special(if text_first { Special::SpeechOpen } else { Special::ResponseClose });
                if !capped {
                    ranges.push(layout.text_range());
                }
            }
            DecodeState::AwaitSpeechOpen => allow_special(Special::SpeechOpen),
            DecodeState::InSpeech => {
                allow_special(Special::SpeechClose);
                if !capped {
                    ranges.push(layout.speech_range());
                }
            }
            DecodeState::AwaitMotionOpen => allow_special(Special::MotionOpen),
            DecodeState::InMotion(phase) => {
                if phase == 0 {
                    allow_special(Special::MotionClose);
                }
                if !capped {
                    ranges.push(layout.motion_range(phase));
                }
            }
            DecodeState::AwaitResponseClose => allow_special(Special::ResponseClose),
            DecodeState::Done => {}
        }
        for r in ranges {
            for id in r {
                mask[id as usize] = true;
            }
        }
        mask
    }

    /// Advances on `id`; ids outside the mask are a grammar violation.
    pub fn advance(&mut self, id: u32, layout: &VocabLayout, position: usize) -> Result<()> {
        let mask = self.allowed_mask(layout);
        if !mask.get(id as usize).copied().unwrap_or(false) {
            let expected = mask
                .iter()
                .enumerate()
                .filter(|(_, &ok)| ok)
                .filter_map(|(i, _)| layout.classify(i as u32).ok().map(|k| k.to_string()))
                .fold(Vec::<String>::new(), |mut acc, k| {
                    if !acc.contains(&k) {
                        acc.push(k);
                    }
                    acc
                });
            return Err(Error::GrammarViolation {
                position,
                expected,
                found: layout.classify(id).map(|k| k.to_string()).unwrap_or_else(|_| format!("id {id}")),
            });
        }
        let kind = layout.classify(id)?;
        let text_first = self.order == SectionOrder::TextFirst;
        self.state = match (self.state, kind) {
            (DecodeState::AwaitResponseOpen, _) => DecodeState::AwaitThinkOpen,
            (DecodeState::AwaitThinkOpen, _) => DecodeState::InThink,
            (DecodeState::InThink, TokenKind::Text) => {
                self.think += 1;
                DecodeState::InThink
            }
            (DecodeState::InThink, _) => {
                if text_first {
                    DecodeState::InText
                } else {
                    DecodeState::AwaitSpeechOpen
                }
            }
            (DecodeState::InText, TokenKind::Text) => {
                self.text += 1;
                DecodeState::InText
            }
            (DecodeState::InText, _) => {
                if text_first {
                    DecodeState::InSpeech
                } else {
                    DecodeState::Done
                }
            }
            (DecodeState::AwaitSpeechOpen, _) => DecodeState::InSpeech,
            (DecodeState::InSpeech, TokenKind::Speech) => {
                self.speech += 1;
                DecodeState::InSpeech
            }
            (DecodeState::InSpeech, _) => DecodeState::AwaitMotionOpen,
            (DecodeState::AwaitMotionOpen, _) => DecodeState::InMotion(0),
            (DecodeState::InMotion(phase), TokenKind::Motion { .. }) => {
                let next = (phase + 1) % self.layers;
                if next == 0 {
                    self.motion_timesteps += 1;
                }
                DecodeState::InMotion(next)
            }
            (DecodeState::InMotion(_), _) => {
                if text_first {
                    DecodeState::AwaitResponseClose
                } else {
                    DecodeState::InText
                }
            }
            (DecodeState::AwaitResponseClose, _) => DecodeState::Done,
            (DecodeState::Done, _) => unreachable!("Done admits no token"),
        };
        Ok(())
    }
}

/// Sampling distribution over the vocabulary: `softmax(logits / T)`
/// restricted to the mask and then to its `top_k` highest logits.
/// Ties at the top-k boundary keep the lower ids.
pub fn masked_distribution(logits: &[f32], mask: &[bool], temperature: f64, top_k: usize) -> Vec<f64> {
    let mut allowed: Vec<usize> = (0..logits.len()).filter(|&i| mask[i]).collect();
    allowed.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    allowed.truncate(top_k.max(1));
    let mut probs = vec![0.0; logits.len()];
    if allowed.is_empty() {
        return probs;
    }
    let max = logits[allowed[0]] as f64 / temperature;
    let mut z = 0.0;
    for &i in &allowed {
        let e = (logits[i] as f64 / temperature - max).exp();
        probs[i] = e;
        z += e;
    }
    for p in &mut probs {
        *p /= z;
    }
    probs
}

/// Picks the next id under the automaton's mask and advances it.
pub fn step(automaton: &mut Automaton, logits: &[f32], policy: &DecodePolicy, layout: &VocabLayout, rng: &mut ChaCha8Rng, position: usize) -> Result<u32> {
    if logits.len() != layout.vocab_size() {
        return Err(Error::ShapeMismatch(format!(
            "{} logits for a vocabulary of {}",
            logits.len(),
            layout.vocab_size()
        )));
    }
    let mask = automaton.allowed_mask(layout);
    if !mask.iter().any(|&m| m) {
        return Err(Error::AutomatonBug(format!("{:?}", automaton.state)));
    }
    let id = if policy.argmax {
        (0..logits.len())
            .filter(|&i| mask[i])
            .fold(None::<usize>, |best, i| match best {
                Some(b) if logits[b] >= logits[i] => Some(b),
                _ => Some(i),
            })
            .expect("mask is non-empty") as u32
    } else {
        let probs = masked_distribution(logits, &mask, policy.temperature, policy.top_k);
        let dist = WeightedIndex::new(&probs).map_err(|e| Error::Numerical(format!("sampling weights: {e}")))?;
        dist.sample(rng) as u32
    };
    automaton.advance(id, layout, position)?;
    Ok(id)
}

/// Anything that scores the next token of a sequence.
pub trait LogitSource {
    fn next_logits(&self, seq: &[u32]) -> Result<Vec<f32>>;
    fn context_length(&self) -> usize;
}

impl LogitSource for LmModel {
    fn next_logits(&self, seq: &[u32]) -> Result<Vec<f32>> {
        LmModel::next_logits(self, seq)
    }

    fn context_length(&self) -> usize {
        self.config().context_length
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionLengths {
    pub think: usize,
    pub text: usize,
    pub speech: usize,
    /// Motion tokens, i.e. timesteps × layers.
    pub motion: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub prompt: Vec<u32>,
    /// Generated response stream, `RESPONSE_OPEN … RESPONSE_CLOSE`.
    pub raw: Vec<u32>,
    pub order: SectionOrder,
    pub response: ResponseStructure,
    pub lengths: SectionLengths,
}

impl GenerationResult {
    /// Motion section regrouped as a `(timesteps, layers)` grid.
    pub fn motion_grid(&self, layout: &VocabLayout) -> Result<MotionTokenGrid> {
        let layers = layout.motion_layers();
        let idx = self.response.motion_indices(layout)?;
        MotionTokenGrid::new(idx.len() / layers, layers, layout.motion_codebook_size(), idx)
    }

    /// Decoded motion; an empty motion section gives a zero-frame sequence.
    pub fn decode_motion(&self, codec: &MotionCodec, layout: &VocabLayout) -> Result<PoseSequence> {
        if self.response.motion.is_empty() {
            let c = codec.config();
            return PoseSequence::new(0, c.joints, c.fps, vec![]);
        }
        codec.decode(&self.motion_grid(layout)?)
    }
}

/// Runs the model from `[BOS] + prompt` until the automaton reaches Done.
pub fn generate(
    model: &dyn LogitSource,
    prompt: &[u32],
    policy: &DecodePolicy,
    layout: &VocabLayout,
    order: SectionOrder,
) -> Result<GenerationResult> {
    policy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut automaton = Automaton::for_policy(order, policy, layout.motion_layers());
    let mut seq = Vec::with_capacity(1 + prompt.len() + policy.caps.max_response_len(layout.motion_layers()));
    seq.push(layout.special(Special::Bos));
    seq.extend_from_slice(prompt);
    let start = seq.len();
    let limit = policy.caps.max_response_len(layout.motion_layers()) + 10;
    while !automaton.is_done() {
        if seq.len() >= model.context_length() || seq.len() - start > limit {
            return Err(Error::GenerationTruncated {
                partial: seq[start..].to_vec(),
            });
        }
        let logits = model.next_logits(&seq)?;
        let id = step(&mut automaton, &logits, policy, layout, &mut rng, seq.len() - start)?;
        seq.push(id);
    }
    let raw = seq[start..].to_vec();
    let response = parse_response_with(&raw, layout, order)?;
    let lengths = SectionLengths {
        think: response.think.len(),
        text: response.text.len(),
        speech: response.speech.len(),
        motion: response.motion.len(),
    };
    Ok(GenerationResult {
        prompt: prompt.to_vec(),
        raw,
        order,
        response,
        lengths,
    })
}

/// JSON transcript of one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub prompt_ids: Vec<u32>,
    pub output_ids: Vec<u32>,
    pub sections: ResponseStructure,
    /// Reasoning is internal; shown only on request.
    pub think_visible: bool,
    pub seed: u64,
    pub policy: DecodePolicy,
}

impl Transcript {
    pub fn new(result: &GenerationResult, policy: &DecodePolicy, show_think: bool) -> Self {
        let mut sections = result.response.clone();
        let mut output_ids = result.raw.clone();
        if !show_think {
            // The stream opens with RESPONSE_OPEN THINK_OPEN, then the think content.
            let n = sections.think.len();
            if n > 0 && output_ids.len() >= 2 + n {
                output_ids.drain(2..2 + n);
            }
            sections.think.clear();
        }
        Self {
            prompt_ids: result.prompt.clone(),
            output_ids,
            sections,
            think_visible: show_think,
            seed: policy.seed,
            policy: policy.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::token_space::is_viable_prefix;
    use std::collections::{HashSet, VecDeque};

    fn toy() -> VocabLayout {
        VocabLayout::build(100, 50, 8, 4).unwrap()
    }

    /// Uniform-ish pseudo-model with seeded fixed logits per position.
    struct Noise {
        vocab: usize,
        context: usize,
    }

    impl LogitSource for Noise {
        fn next_logits(&self, seq: &[u32]) -> Result<Vec<f32>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seq.len() as u64 * 31 + *seq.last().unwrap() as u64);
            Ok((0..self.vocab).map(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0)).collect())
        }
        fn context_length(&self) -> usize {
            self.context
        }
    }

    fn representatives(layout: &VocabLayout) -> Vec<u32> {
        let mut ids = vec![layout.text_range().start, layout.speech_range().start];
        ids.extend((0..layout.motion_layers()).map(|l| layout.motion_range(l).start));
        ids.extend(layout.special_range());
        ids
    }

    /// Breadth-first walk over automaton configurations; at every reached
    /// prefix the mask is compared with the parser on all one-step extensions.
    fn cross_check(order: SectionOrder, caps: SectionCaps) -> usize {
        let layout = toy();
        let start = Automaton::new(order, caps, 4);
        let mut seen = HashSet::new();
        let mut queue = VecDeque::from([(start, Vec::<u32>::new())]);
        let mut visited = 0;
        while let Some((a, prefix)) = queue.pop_front() {
            if !seen.insert(a.clone()) {
                continue;
            }
            visited += 1;
            let mask = a.allowed_mask(&layout);
            for id in 0..layout.vocab_size() as u32 {
                let mut ext = prefix.clone();
                ext.push(id);
                let viable = is_viable_prefix(&ext, &layout, order);
                if mask[id as usize] {
                    assert!(viable, "{:?}: mask allows {id} but parser rejects", a.state);
                } else if !a.at_cap() {
                    assert!(!viable, "{:?}: parser accepts {id} but mask forbids", a.state);
                }
            }
            if !a.is_done() {
                assert!(mask.iter().any(|&m| m), "empty mask in {:?}", a.state);
            }
            for id in representatives(&layout) {
                if mask[id as usize] {
                    let mut next = a.clone();
                    next.advance(id, &layout, prefix.len()).unwrap();
                    let mut p = prefix.clone();
                    p.push(id);
                    queue.push_back((next, p));
                }
            }
        }
        visited
    }

    #[test]
    fn mask_agrees_with_parser_exhaustively() {
        let caps = SectionCaps {
            think: 2,
            text: 2,
            speech: 2,
            motion_timesteps: 2,
        };
        assert!(cross_check(SectionOrder::TextFirst, caps) > 20);
        assert!(cross_check(SectionOrder::TextLast, caps) > 20);
    }

    #[test]
    fn motion_phase_and_caps() {
        let layout = toy();
        let mut a = Automaton::new(SectionOrder::TextFirst, SectionCaps { think: 0, ..Default::default() }, 4);
        a.state = DecodeState::InMotion(2);
        let mask = a.allowed_mask(&layout);
        let allowed: Vec<u32> = (0..196u32).filter(|&i| mask[i as usize]).collect();
        assert_eq!(allowed, layout.motion_range(2).collect::<Vec<_>>());

        a.state = DecodeState::InThink;
        let mask = a.allowed_mask(&layout);
        let allowed: Vec<u32> = (0..196u32).filter(|&i| mask[i as usize]).collect();
        assert_eq!(allowed, vec![layout.special(Special::ThinkClose)]);
    }

    #[test]
    fn distribution_matches_hand_computation() {
        // Five-id vocabulary, ids 1 and 3 forbidden, T = 1.
        let logits = [0.0f32, 5.0, 1.0, 7.0, 2.0];
        let mask = [true, false, true, false, true];
        let p = masked_distribution(&logits, &mask, 1.0, usize::MAX);
        let z = 1.0 + 1f64.exp() + 2f64.exp();
        let expect = [1.0 / z, 0.0, 1f64.exp() / z, 0.0, 2f64.exp() / z];
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let top1 = masked_distribution(&logits, &mask, 1.0, 1);
        assert_eq!(top1, vec![0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn disallowed_ids_never_sampled() {
        let layout = toy();
        let mut a = Automaton::new(SectionOrder::TextFirst, SectionCaps::default(), 4);
        a.state = DecodeState::InSpeech;
        let mask = a.allowed_mask(&layout);
        // Heavily favour a forbidden id.
        let mut logits = vec![0.0f32; 196];
        logits[5] = 50.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let policy = DecodePolicy::default();
        for i in 0..10_000 {
            let mut b = a.clone();
            let id = step(&mut b, &logits, &policy, &layout, &mut rng, i).unwrap();
            assert!(mask[id as usize]);
        }
    }

    #[test]
    fn argmax_picks_best_allowed() {
        let layout = toy();
        let mut a = Automaton::new(SectionOrder::TextFirst, SectionCaps::default(), 4);
        a.state = DecodeState::InMotion(1);
        let mut logits = vec![0.0f32; 196];
        logits[0] = 9.0; // text, forbidden
        let r = layout.motion_range(1);
        logits[(r.start + 3) as usize] = 4.0;
        let policy = DecodePolicy { argmax: true, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(step(&mut a, &logits, &policy, &layout, &mut rng, 0).unwrap(), r.start + 3);
        assert_eq!(a.state, DecodeState::InMotion(2));
    }

    #[test]
    fn random_model_always_parses_and_terminates() {
        let layout = toy();
        let model = Noise { vocab: 196, context: 512 };
        let caps = SectionCaps {
            think: 6,
            text: 6,
            speech: 6,
            motion_timesteps: 3,
        };
        for seed in 0..200 {
            let policy = DecodePolicy { caps, seed, ..Default::default() };
            let r = generate(&model, &[], &policy, &layout, SectionOrder::TextFirst).unwrap();
            assert!(r.raw.len() <= caps.max_response_len(4));
            assert_eq!(r.response.motion.len() % 4, 0);
            r.motion_grid(&layout).unwrap();
        }
    }

    #[test]
    fn zero_motion_cap_and_determinism() {
        let layout = toy();
        let model = Noise { vocab: 196, context: 512 };
        let policy = DecodePolicy {
            caps: SectionCaps { motion_timesteps: 0, ..Default::default() },
            seed: 4,
            ..Default::default()
        };
        let a = generate(&model, &[], &policy, &layout, SectionOrder::TextFirst).unwrap();
        assert!(a.response.motion.is_empty());
        assert_eq!(a, generate(&model, &[], &policy, &layout, SectionOrder::TextFirst).unwrap());
    }

    #[test]
    fn proportional_motion_cap() {
        let layout = toy();
        let model = Noise { vocab: 196, context: 512 };
        for seed in 0..20 {
            let policy = DecodePolicy { motion_per_speech: Some(0.5), seed, ..Default::default() };
            let r = generate(&model, &[], &policy, &layout, SectionOrder::TextFirst).unwrap();
            assert!(r.lengths.motion / 4 <= r.lengths.speech.div_ceil(2));
        }
    }

    #[test]
    fn context_overflow_returns_partial() {
        let layout = toy();
        let model = Noise { vocab: 196, context: 6 };
        match generate(&model, &[], &DecodePolicy::default(), &layout, SectionOrder::TextFirst) {
            Err(Error::GenerationTruncated { partial }) => {
                assert_eq!(partial.len(), 5);
                assert!(is_viable_prefix(&partial, &layout, SectionOrder::TextFirst));
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn transcript_hides_think_by_default() {
        let layout = toy();
        let model = Noise { vocab: 196, context: 512 };
        let policy = DecodePolicy { seed: 1, ..Default::default() };
        let r = generate(&model, &[], &policy, &layout, SectionOrder::TextFirst).unwrap();
        assert!(!r.response.think.is_empty());
        let hidden = Transcript::new(&r, &policy, false);
        assert!(hidden.sections.think.is_empty());
        let think_open = layout.special(Special::ThinkOpen);
        let think_close = layout.special(Special::ThinkClose);
        let at = hidden.output_ids.iter().position(|&id| id == think_open).unwrap();
        assert_eq!(hidden.output_ids[at + 1], think_close);
        assert_eq!(hidden.output_ids.len() + r.response.think.len(), r.raw.len());
        parse_response_with(&hidden.output_ids, &layout, SectionOrder::TextFirst).unwrap();
        let shown = Transcript::new(&r, &policy, true);
        assert_eq!(shown.sections.think, r.response.think);
        assert_eq!(shown.output_ids, r.raw);
    }
}
