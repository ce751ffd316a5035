//! Segment-wise alignment: split aligned text/speech/motion clips at
//! punctuation and pause boundaries, then recombine segments into new samples.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion_codec::CodecConfig;
use crate::rotgeom::PoseSequence;
use crate::token_space::{serialize_response, ResponseStructure, VocabLayout};

/// Boundary cues closer than this (seconds) merge into one.
pub const MERGE_WINDOW: f64 = 0.05;
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeechToken {
    /// Local speech id (index within the speech block).
    pub id: u32,
    /// Seconds from clip start.
    pub t: f64,
}

/// Word-level alignment: characters `[char_start, char_end)` of the text are
/// spoken over `[start, end)` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordTiming {
    pub char_start: usize,
    pub char_end: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedClip {
    pub id: String,
    pub text: String,
    pub words: Vec<WordTiming>,
    pub speech: Vec<SpeechToken>,
    pub motion: PoseSequence,
    pub duration: f64,
}

impl AlignedClip {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::EmptyClip(self.id.clone()));
        }
        let mut prev = 0.0;
        for tok in &self.speech {
            if tok.t < prev - TIME_EPS || tok.t > self.duration + TIME_EPS {
                return Err(Error::InvalidArgument(format!(
                    "clip {}: speech timestamp {} out of order or outside [0, {}]",
                    self.id, tok.t, self.duration
                )));
            }
            prev = tok.t;
        }
        let expected = (self.duration * self.motion.fps()).round() as usize;
        if self.motion.frames() != expected {
            return Err(Error::ShapeMismatch(format!(
                "clip {}: {} motion frames, duration implies {expected}",
                self.id,
                self.motion.frames()
            )));
        }
        let chars = self.text.chars().count();
        for w in &self.words {
            if w.char_start > w.char_end || w.char_end > chars || w.start > w.end {
                return Err(Error::InvalidArgument(format!("clip {}: malformed word timing", self.id)));
            }
        }
        Ok(())
    }

    fn frame_at(&self, t: f64) -> usize {
        ((t * self.motion.fps() + TIME_EPS).floor() as usize).min(self.motion.frames())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub clip_id: String,
    /// Character span in the parent text.
    pub text_span: (usize, usize),
    /// Index span into the parent's speech tokens.
    pub speech_span: (usize, usize),
    /// Frame span into the parent's motion.
    pub frame_span: (usize, usize),
    pub start: f64,
    pub end: f64,
    pub text: String,
    /// Speech tokens re-timed relative to `start`.
    pub speech: Vec<SpeechToken>,
    pub motion: PoseSequence,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn frames(&self) -> usize {
        self.frame_span.1 - self.frame_span.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    /// Minimum gap (seconds) between consecutive voiced speech tokens that counts as a pause.
    pub pause_threshold: f64,
    pub punctuation: String,
    /// Speech id that encodes silence; ignored when measuring gaps.
    pub silence_id: Option<u32>,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            pause_threshold: 0.4,
            punctuation: ".,;:?!".to_string(),
            silence_id: Some(0),
        }
    }
}

/// Splits a clip at every punctuation mark that is followed by another word
/// (boundary at that word's start) and wherever voiced speech resumes after a
/// gap of at least `pause_threshold` (boundary at the resuming token).
pub fn segment_clip(clip: &AlignedClip, cfg: &SegmentConfig) -> Result<Vec<Segment>> {
    clip.validate()?;
    if !(cfg.pause_threshold > 0.0) {
        return Err(Error::InvalidArgument("pause_threshold must be positive".into()));
    }
    let chars: Vec<char> = clip.text.chars().collect();
    let mut cues: Vec<f64> = Vec::new();
    for (pos, c) in chars.iter().enumerate() {
        if cfg.punctuation.contains(*c) {
            if let Some(w) = clip.words.iter().find(|w| w.char_start > pos) {
                cues.push(w.start);
            }
        }
    }
    let voiced: Vec<&SpeechToken> = clip
        .speech
        .iter()
        .filter(|t| Some(t.id) != cfg.silence_id)
        .collect();
    for pair in voiced.windows(2) {
        if pair[1].t - pair[0].t >= cfg.pause_threshold - TIME_EPS {
            cues.push(pair[1].t);
        }
    }
    cues.retain(|&b| b > TIME_EPS && b < clip.duration - TIME_EPS);
    cues.sort_by(f64::total_cmp);
    let mut bounds: Vec<f64> = vec![0.0];
    for b in cues {
        if b - bounds.last().copied().unwrap_or(0.0) > MERGE_WINDOW {
            bounds.push(b);
        }
    }
    bounds.push(clip.duration);

    let mut segments = Vec::with_capacity(bounds.len() - 1);
    let mut char_cursor = 0;
    let mut speech_cursor = 0;
    for (i, win) in bounds.windows(2).enumerate() {
        let (start, end) = (win[0], win[1]);
        let last = i == bounds.len() - 2;
        let char_end = if last {
            chars.len()
        } else {
            clip.words
                .iter()
                .find(|w| w.start >= end - MERGE_WINDOW)
                .map(|w| w.char_start)
                .unwrap_or(chars.len())
                .max(char_cursor)
        };
        let speech_end = if last {
            clip.speech.len()
        } else {
            speech_cursor + clip.speech[speech_cursor..].iter().take_while(|t| t.t < end - TIME_EPS).count()
        };
        let frame_start = clip.frame_at(start);
        let frame_end = if last { clip.motion.frames() } else { clip.frame_at(end) };
        segments.push(Segment {
            clip_id: clip.id.clone(),
            text_span: (char_cursor, char_end),
            speech_span: (speech_cursor, speech_end),
            frame_span: (frame_start, frame_end),
            start,
            end,
            text: chars[char_cursor..char_end].iter().collect(),
            speech: clip.speech[speech_cursor..speech_end]
                .iter()
                .map(|t| SpeechToken { id: t.id, t: t.t - start })
                .collect(),
            motion: clip.motion.slice(frame_start, frame_end)?,
        });
        char_cursor = char_end;
        speech_cursor = speech_end;
    }
    Ok(segments)
}

/// Whole clip as a single segment (no segmentation).
pub fn whole_clip_segment(clip: &AlignedClip) -> Result<Segment> {
    clip.validate()?;
    Ok(Segment {
        clip_id: clip.id.clone(),
        text_span: (0, clip.text.chars().count()),
        speech_span: (0, clip.speech.len()),
        frame_span: (0, clip.motion.frames()),
        start: 0.0,
        end: clip.duration,
        text: clip.text.clone(),
        speech: clip.speech.clone(),
        motion: clip.motion.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedSample {
    pub segments: Vec<Segment>,
    pub text: String,
    pub speech: Vec<SpeechToken>,
    pub motion: PoseSequence,
}

impl SegmentedSample {
    pub fn from_segments(segments: Vec<Segment>) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::InvalidArgument("sample needs at least one segment".into()))?;
        let text = segments
            .iter()
            .map(|s| s.text.trim())
            .filter(|t| !t.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        let mut speech = Vec::new();
        let mut offset = 0.0;
        for s in &segments {
            speech.extend(s.speech.iter().map(|t| SpeechToken { id: t.id, t: t.t + offset }));
            offset += s.duration();
        }
        let parts: Vec<&PoseSequence> = segments.iter().map(|s| &s.motion).collect();
        let motion = if parts.iter().all(|p| p.frames() == 0) {
            PoseSequence::new(0, first.motion.joints(), first.motion.fps(), vec![])?
        } else {
            PoseSequence::concat(&parts)?
        };
        Ok(Self {
            segments,
            text,
            speech,
            motion,
        })
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(Segment::duration).sum()
    }

    pub fn speech_ids(&self) -> Vec<u32> {
        self.speech.iter().map(|t| t.id).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecombineMode {
    /// Segments drawn from the whole pool.
    #[default]
    CrossClip,
    /// Segments drawn from a single randomly chosen clip, kept in order.
    WithinClip,
}

/// Draws `k` segments without replacement. Deterministic in `(pool, k, seed)`.
pub fn recombine(pool: &[Segment], k: usize, seed: u64) -> Result<SegmentedSample> {
    recombine_with(pool, k, seed, RecombineMode::CrossClip)
}

pub fn recombine_with(pool: &[Segment], k: usize, seed: u64, mode: RecombineMode) -> Result<SegmentedSample> {
    if pool.is_empty() {
        return Err(Error::InsufficientPool { requested: k, available: 0 });
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<Segment> = match mode {
        RecombineMode::CrossClip => {
            if k > pool.len() {
                return Err(Error::InsufficientPool {
                    requested: k,
                    available: pool.len(),
                });
            }
            sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i].clone()).collect()
        }
        RecombineMode::WithinClip => {
            let clips: Vec<&str> = pool
                .iter()
                .map(|s| s.clip_id.as_str())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let eligible: Vec<&str> = clips
                .into_iter()
                .filter(|c| pool.iter().filter(|s| s.clip_id == *c).count() >= k)
                .collect();
            if eligible.is_empty() {
                let most = pool.iter().map(|s| pool.iter().filter(|o| o.clip_id == s.clip_id).count()).max().unwrap_or(0);
                return Err(Error::InsufficientPool {
                    requested: k,
                    available: most,
                });
            }
            let clip = eligible[sample(&mut rng, eligible.len(), 1).index(0)];
            let own: Vec<&Segment> = pool.iter().filter(|s| s.clip_id == clip).collect();
            let mut picks = sample(&mut rng, own.len(), k).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|i| own[i].clone()).collect()
        }
    };
    SegmentedSample::from_segments(chosen)
}

/// Context length the serialized samples are checked against by default.
pub const DEFAULT_MAX_LEN: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub text: usize,
    pub speech: usize,
    pub motion: usize,
    /// Length of the serialized response carrying all three modalities.
    pub total: usize,
    pub over_budget: bool,
}

/// Token counts for a sample serialized as one response (empty think,
/// character-level text). Motion counts come from the codec's grid shape.
pub fn budget_check(s: &SegmentedSample, layout: &VocabLayout, codec: &CodecConfig, max_len: usize) -> Result<TokenBudget> {
    let text = s.text.chars().count();
    let speech = s.speech.len();
    let motion = if s.motion.frames() == 0 {
        0
    } else {
        codec.timesteps_for(s.motion.frames()) * codec.num_residual_layers
    };
    let layers = layout.motion_layers();
    let placeholder = ResponseStructure {
        think: vec![],
        text: vec![layout.text_id(0); text],
        speech: vec![layout.speech_id(0); speech],
        motion: (0..motion).map(|i| layout.motion_id(i % layers, 0)).collect(),
    };
    let total = serialize_response(&placeholder, layout)?.len();
    Ok(TokenBudget {
        text,
        speech,
        motion,
        total,
        over_budget: total > max_len,
    })
}
