//! Task-weighted curriculum: stage-1 modality-alignment tasks mixed with
//! text rehearsal, stage-2 reasoning-wrapped instruction examples.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::token_space::{
    build_prompt, serialize_response_with, CharTokenizer, ResponseStructure, SectionOrder, UserTurn, VocabLayout,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    T2m,
    S2m,
    T2s,
    TextRehearsal,
    Instruct,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::T2m,
        TaskKind::S2m,
        TaskKind::T2s,
        TaskKind::TextRehearsal,
        TaskKind::Instruct,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::T2m => "T2M",
            TaskKind::S2m => "S2M",
            TaskKind::T2s => "T2S",
            TaskKind::TextRehearsal => "TEXT_REHEARSAL",
            TaskKind::Instruct => "INSTRUCT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub stage: u8,
    pub weights: BTreeMap<TaskKind, f64>,
}

impl MixtureSpec {
    pub fn new(stage: u8, weights: &[(TaskKind, f64)]) -> Result<Self> {
        let spec = Self {
            stage,
            weights: weights.iter().copied().collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// T2M:S2M:T2S:rehearsal = 0.25:0.25:0.2:0.3.
    pub fn stage1_default() -> Self {
        Self::new(
            1,
            &[
                (TaskKind::T2m, 0.25),
                (TaskKind::S2m, 0.25),
                (TaskKind::T2s, 0.2),
                (TaskKind::TextRehearsal, 0.3),
            ],
        )
        .expect("default weights are valid")
    }

    pub fn stage2_default() -> Self {
        Self::new(
            2,
            &[
                (TaskKind::Instruct, 0.5),
                (TaskKind::T2m, 0.15),
                (TaskKind::S2m, 0.15),
                (TaskKind::T2s, 0.1),
                (TaskKind::TextRehearsal, 0.1),
            ],
        )
        .expect("default weights are valid")
    }

    pub fn weight(&self, task: TaskKind) -> f64 {
        self.weights.get(&task).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.values().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("mixture weights must be finite and non-negative".into()));
        }
        let sum: f64 = self.weights.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mixture weights sum to {sum}, not 1")));
        }
        match self.stage {
            1 if self.weight(TaskKind::Instruct) != 0.0 => {
                Err(Error::Config("stage-1 mixture cannot contain INSTRUCT".into()))
            }
            2 if self.weight(TaskKind::Instruct) == 0.0 => {
                Err(Error::Config("stage-2 mixture needs a nonzero INSTRUCT weight".into()))
            }
            1 | 2 => Ok(()),
            s => Err(Error::Config(format!("unknown stage {s}"))),
        }
    }

    /// Same spec with `task` removed and the remaining weights renormalized.
    pub fn without(&self, task: TaskKind) -> Result<Self> {
        let rest: f64 = self.weights.iter().filter(|(k, _)| **k != task).map(|(_, w)| w).sum();
        if rest <= 0.0 {
            return Err(Error::Config(format!("removing {} leaves an empty mixture", task.name())));
        }
        let weights: Vec<(TaskKind, f64)> = self
            .weights
            .iter()
            .filter(|(k, _)| **k != task)
            .map(|(k, w)| (*k, w / rest))
            .collect();
        // Renormalized weights may miss 1 by a few ulps; fold the slack into the largest.
        let mut spec = Self {
            stage: self.stage,
            weights: weights.into_iter().collect(),
        };
        let slack = 1.0 - spec.weights.values().sum::<f64>();
        if let Some(w) = spec.weights.values_mut().max_by(|a, b| a.total_cmp(b)) {
            *w += slack;
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Categorical draw over the spec's tasks.
pub fn sample_task<R: Rng + ?Sized>(spec: &MixtureSpec, rng: &mut R) -> TaskKind {
    let tasks: Vec<TaskKind> = spec.weights.keys().copied().collect();
    let weights: Vec<f64> = tasks.iter().map(|t| spec.weights[t]).collect();
    let dist = WeightedIndex::new(&weights).expect("validated spec has positive total weight");
    tasks[dist.sample(rng)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureReport {
    pub total: usize,
    pub counts: BTreeMap<TaskKind, usize>,
    pub frequencies: BTreeMap<TaskKind, f64>,
}

pub fn mixture_report(draws: &[TaskKind]) -> Result<MixtureReport> {
    if draws.is_empty() {
        return Err(Error::InsufficientData("no draws to report".into()));
    }
    let mut counts = BTreeMap::new();
    for &t in draws {
        *counts.entry(t).or_insert(0) += 1;
    }
    let frequencies = counts
        .iter()
        .map(|(k, c)| (*k, *c as f64 / draws.len() as f64))
        .collect();
    Ok(MixtureReport {
        total: draws.len(),
        counts,
        frequencies,
    })
}

/// An aligned sample after tokenization: text as characters, speech and
/// motion as local indices (motion flattened layer-major).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModalSample {
    pub text: String,
    pub speech: Vec<u32>,
    pub motion: Vec<u32>,
    pub sources: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructSample {
    pub question: String,
    pub cot: String,
    pub answer: String,
    pub speech: Vec<u32>,
    pub motion: Vec<u32>,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub task: TaskKind,
    pub prompt: Vec<u32>,
    pub target: Vec<u32>,
    pub order: SectionOrder,
    pub sources: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Stage2Flags {
    pub wo_cot: bool,
    pub wo_text_first: bool,
}

/// What a stage-1 example is built from.
#[derive(Debug, Clone, Copy)]
pub enum Stage1Source<'a> {
    Aligned(&'a ModalSample),
    Text { question: &'a str, answer: &'a str },
}

/// Turns samples into prompt/target token streams under one layout.
#[derive(Debug, Clone)]
pub struct ExampleBuilder {
    pub layout: VocabLayout,
    pub tokenizer: CharTokenizer,
    pub t2m_prefix: String,
    pub t2s_prefix: String,
}

impl ExampleBuilder {
    pub fn new(layout: VocabLayout, tokenizer: CharTokenizer) -> Self {
        Self {
            layout,
            tokenizer,
            t2m_prefix: "move: ".into(),
            t2s_prefix: "say: ".into(),
        }
    }

    fn text(&self, s: &str) -> Result<Vec<u32>> {
        self.tokenizer.encode(s, &self.layout)
    }

    pub fn speech_ids(&self, local: &[u32]) -> Result<Vec<u32>> {
        let n = self.layout.speech_size() as u32;
        local
            .iter()
            .map(|&i| {
                if i < n {
                    Ok(self.layout.speech_id(i))
                } else {
                    Err(Error::InvalidToken(format!("speech index {i} outside block of {n}")))
                }
            })
            .collect()
    }

    pub fn motion_ids(&self, local: &[u32]) -> Result<Vec<u32>> {
        let layers = self.layout.motion_layers();
        let n = self.layout.motion_codebook_size() as u32;
        if local.len() % layers != 0 {
            return Err(Error::InvalidToken(format!(
                "{} motion indices do not fill whole {layers}-layer timesteps",
                local.len()
            )));
        }
        local
            .iter()
            .enumerate()
            .map(|(i, &idx)| {
                if idx < n {
                    Ok(self.layout.motion_id(i % layers, idx))
                } else {
                    Err(Error::InvalidToken(format!("motion index {idx} outside codebook of {n}")))
                }
            })
            .collect()
    }

    fn finish(
        &self,
        task: TaskKind,
        turns: &[UserTurn],
        response: ResponseStructure,
        order: SectionOrder,
        sources: Vec<String>,
    ) -> Result<TrainingExample> {
        Ok(TrainingExample {
            task,
            prompt: build_prompt(turns, &self.layout)?,
            target: serialize_response_with(&response, &self.layout, order)?,
            order,
            sources,
        })
    }

    pub fn stage1(&self, task: TaskKind, source: Stage1Source<'_>) -> Result<TrainingExample> {
        match (task, source) {
            (TaskKind::TextRehearsal, Stage1Source::Text { question, answer }) => {
                if answer.is_empty() {
                    return Err(Error::InvalidRecord("rehearsal answer is empty".into()));
                }
                let response = ResponseStructure {
                    text: self.text(answer)?,
                    ..Default::default()
                };
                self.finish(task, &[UserTurn::Text(self.text(question)?)], response, SectionOrder::TextFirst, vec![])
            }
            (TaskKind::TextRehearsal, Stage1Source::Aligned(_)) => Err(Error::ModalityMissing("question/answer text")),
            (TaskKind::Instruct, _) => Err(Error::InvalidArgument("INSTRUCT examples belong to stage 2".into())),
            (_, Stage1Source::Text { .. }) => Err(Error::ModalityMissing("aligned speech/motion")),
            (_, Stage1Source::Aligned(s)) => {
                let need = |ok: bool, what: &'static str| if ok { Ok(()) } else { Err(Error::ModalityMissing(what)) };
                let (turn, response) = match task {
                    TaskKind::T2m => {
                        need(!s.text.is_empty(), "text")?;
                        need(!s.motion.is_empty(), "motion")?;
                        (
                            UserTurn::Text(self.text(&format!("{}{}", self.t2m_prefix, s.text))?),
                            ResponseStructure {
                                motion: self.motion_ids(&s.motion)?,
                                ..Default::default()
                            },
                        )
                    }
                    TaskKind::S2m => {
                        need(!s.speech.is_empty(), "speech")?;
                        need(!s.motion.is_empty(), "motion")?;
                        (
                            UserTurn::Speech(self.speech_ids(&s.speech)?),
                            ResponseStructure {
                                motion: self.motion_ids(&s.motion)?,
                                ..Default::default()
                            },
                        )
                    }
                    TaskKind::T2s => {
                        need(!s.text.is_empty(), "text")?;
                        need(!s.speech.is_empty(), "speech")?;
                        (
                            UserTurn::Text(self.text(&format!("{}{}", self.t2s_prefix, s.text))?),
                            ResponseStructure {
                                speech: self.speech_ids(&s.speech)?,
                                ..Default::default()
                            },
                        )
                    }
                    TaskKind::TextRehearsal | TaskKind::Instruct => unreachable!("handled above"),
                };
                self.finish(task, &[turn], response, SectionOrder::TextFirst, s.sources.clone())
            }
        }
    }

    pub fn stage2(&self, record: &InstructSample, flags: Stage2Flags) -> Result<TrainingExample> {
        if record.answer.is_empty() {
            return Err(Error::InvalidRecord("instruction answer is empty".into()));
        }
        if record.cot.is_empty() && !flags.wo_cot {
            return Err(Error::InvalidRecord("instruction record has no reasoning".into()));
        }
        let response = ResponseStructure {
            think: if flags.wo_cot { vec![] } else { self.text(&record.cot)? },
            text: self.text(&record.answer)?,
            speech: self.speech_ids(&record.speech)?,
            motion: self.motion_ids(&record.motion)?,
        };
        let order = if flags.wo_text_first {
            SectionOrder::TextLast
        } else {
            SectionOrder::TextFirst
        };
        self.finish(
            TaskKind::Instruct,
            &[UserTurn::Text(self.text(&record.question)?)],
            response,
            order,
            vec![record.source.clone()],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::token_space::{parse_prompt, parse_response, parse_response_with, TokenKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn builder() -> ExampleBuilder {
        ExampleBuilder::new(VocabLayout::build(48, 16, 8, 4).unwrap(), CharTokenizer::default())
    }

    fn sample() -> ModalSample {
        ModalSample {
            text: "ba ko.".into(),
            speech: vec![3, 4, 0, 5],
            motion: vec![1, 2, 3, 4, 5, 6, 7, 0],
            sources: vec!["c0".into()],
        }
    }

    fn freq_check(spec: &MixtureSpec, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws: Vec<TaskKind> = (0..100_000).map(|_| sample_task(spec, &mut rng)).collect();
        let report = mixture_report(&draws).unwrap();
        for (task, w) in &spec.weights {
            let f = report.frequencies.get(task).copied().unwrap_or(0.0);
            assert!((f - w).abs() <= 0.01, "{task:?}: {f} vs {w}");
            if *w == 0.0 {
                assert_eq!(f, 0.0);
            }
        }
    }

    #[test]
    fn single_task_spec_always_draws_it() {
        let spec = MixtureSpec::new(1, &[(TaskKind::T2m, 1.0), (TaskKind::S2m, 0.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| sample_task(&spec, &mut rng) == TaskKind::T2m));
        let draws = vec![TaskKind::T2m; 10];
        assert_eq!(mixture_report(&draws).unwrap().frequencies[&TaskKind::T2m], 1.0);
    }

    #[test]
    fn frequencies_converge() {
        let uniform = MixtureSpec::new(
            1,
            &[
                (TaskKind::T2m, 0.25),
                (TaskKind::S2m, 0.25),
                (TaskKind::T2s, 0.25),
                (TaskKind::TextRehearsal, 0.25),
            ],
        )
        .unwrap();
        freq_check(&uniform, 3);
        freq_check(&MixtureSpec::stage1_default(), 4);
        freq_check(&MixtureSpec::stage2_default(), 5);
    }

    #[test]
    fn empty_report_is_error() {
        assert!(matches!(mixture_report(&[]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn stage_gating() {
        assert!(MixtureSpec::new(1, &[(TaskKind::Instruct, 0.5), (TaskKind::T2m, 0.5)]).is_err());
        assert!(MixtureSpec::new(2, &[(TaskKind::T2m, 1.0)]).is_err());
        assert!(MixtureSpec::new(1, &[(TaskKind::T2m, 0.5)]).is_err());
        let wo = MixtureSpec::stage1_default().without(TaskKind::TextRehearsal).unwrap();
        assert_eq!(wo.weight(TaskKind::TextRehearsal), 0.0);
        assert!((wo.weight(TaskKind::T2m) - 0.25 / 0.7).abs() < 1e-12);
    }

    #[test]
    fn stage1_templates() {
        let b = builder();
        let s = sample();
        let t2m = b.stage1(TaskKind::T2m, Stage1Source::Aligned(&s)).unwrap();
        let r = parse_response(&t2m.target, &b.layout).unwrap();
        assert!(r.speech.is_empty() && r.text.is_empty() && r.think.is_empty());
        assert_eq!(r.motion_indices(&b.layout).unwrap(), s.motion);

        let s2m = b.stage1(TaskKind::S2m, Stage1Source::Aligned(&s)).unwrap();
        match parse_prompt(&s2m.prompt, &b.layout).unwrap().as_slice() {
            [UserTurn::Speech(ids)] => {
                assert!(ids.iter().all(|&id| b.layout.classify(id).unwrap() == TokenKind::Speech));
            }
            other => panic!("unexpected prompt {other:?}"),
        }

        let t2s = b.stage1(TaskKind::T2s, Stage1Source::Aligned(&s)).unwrap();
        let r = parse_response(&t2s.target, &b.layout).unwrap();
        assert!(r.motion.is_empty());
        assert_eq!(r.speech.len(), 4);

        let qa = Stage1Source::Text {
            question: "what is 1 plus 1?",
            answer: "2.",
        };
        let reh = b.stage1(TaskKind::TextRehearsal, qa).unwrap();
        let r = parse_response(&reh.target, &b.layout).unwrap();
        assert_eq!(b.tokenizer.decode(&r.text, &b.layout), "2.");
    }

    #[test]
    fn stage1_missing_modalities() {
        let b = builder();
        let mut s = sample();
        s.motion.clear();
        assert!(matches!(
            b.stage1(TaskKind::T2m, Stage1Source::Aligned(&s)),
            Err(Error::ModalityMissing("motion"))
        ));
        s.speech.clear();
        assert!(matches!(
            b.stage1(TaskKind::T2s, Stage1Source::Aligned(&s)),
            Err(Error::ModalityMissing("speech"))
        ));
    }

    fn record() -> InstructSample {
        InstructSample {
            question: "show ba".into(),
            cot: "the prompt asks for ba; plan ba".into(),
            answer: "ba.".into(),
            speech: vec![1, 2],
            motion: vec![0, 1, 2, 3],
            source: "r0".into(),
        }
    }

    #[test]
    fn stage2_variants() {
        let b = builder();
        let rec = record();
        let full = b.stage2(&rec, Stage2Flags::default()).unwrap();
        let r = parse_response(&full.target, &b.layout).unwrap();
        assert_eq!(b.tokenizer.decode(&r.think, &b.layout), rec.cot);

        let wo_cot = b.stage2(&rec, Stage2Flags { wo_cot: true, ..Default::default() }).unwrap();
        let r2 = parse_response(&wo_cot.target, &b.layout).unwrap();
        assert!(r2.think.is_empty());
        assert_eq!((r2.text, r2.speech, r2.motion), (r.text.clone(), r.speech.clone(), r.motion.clone()));

        let wo_tf = b.stage2(&rec, Stage2Flags { wo_text_first: true, ..Default::default() }).unwrap();
        assert!(parse_response(&wo_tf.target, &b.layout).is_err());
        assert_eq!(parse_response_with(&wo_tf.target, &b.layout, SectionOrder::TextLast).unwrap(), r);

        let mut empty = record();
        empty.answer.clear();
        assert!(matches!(b.stage2(&empty, Stage2Flags::default()), Err(Error::InvalidRecord(_))));
    }

    #[test]
    fn thousand_examples_parse() {
        let b = builder();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = MixtureSpec::stage1_default();
        for i in 0..1000 {
            let steps = rng.gen_range(1..6);
            let s = ModalSample {
                text: "ab cd".into(),
                speech: (0..rng.gen_range(1..10)).map(|_| rng.gen_range(0..16)).collect(),
                motion: (0..steps * 4).map(|_| rng.gen_range(0..8)).collect(),
                sources: vec![format!("s{i}")],
            };
            let task = sample_task(&spec, &mut rng);
            let ex = match task {
                TaskKind::TextRehearsal => b.stage1(task, Stage1Source::Text { question: "q", answer: "a" }),
                _ => b.stage1(task, Stage1Source::Aligned(&s)),
            }
            .unwrap();
            parse_response(&ex.target, &b.layout).unwrap();
            parse_prompt(&ex.prompt, &b.layout).unwrap();
        }
    }
}
