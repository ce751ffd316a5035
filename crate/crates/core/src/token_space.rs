//! Unified vocabulary over text, speech, motion, and special tokens, plus the
//! response-stream grammar.
//!
//! Id layout (half-open blocks, contiguous from 0):
//!
//! ```text
//! [text][speech][motion layer 0]...[motion layer L-1][special]
//! ```
//!
//! Response grammar (text-first order):
//!
//! ```text
//! response := RESPONSE_OPEN think text speech motion RESPONSE_CLOSE
//! think    := THINK_OPEN text_id* THINK_CLOSE
//! text     := text_id*
//! speech   := SPEECH_OPEN speech_id* SPEECH_CLOSE
//! motion   := MOTION_OPEN (m_0 m_1 ... m_{L-1})* MOTION_CLOSE
//! ```
//!
//! where `m_l` is any id of motion layer `l`. The text-last order used for
//! ablations moves the undelimited text section after `motion`.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named special tokens, in id order within the special block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Special {
    Bos,
    Pad,
    ResponseOpen,
    ResponseClose,
    ThinkOpen,
    ThinkClose,
    SpeechOpen,
    SpeechClose,
    MotionOpen,
    MotionClose,
    UserTextOpen,
    UserTextClose,
    UserSpeechOpen,
    UserSpeechClose,
}

impl Special {
    pub const ALL: [Special; 14] = [
        Special::Bos,
        Special::Pad,
        Special::ResponseOpen,
        Special::ResponseClose,
        Special::ThinkOpen,
        Special::ThinkClose,
        Special::SpeechOpen,
        Special::SpeechClose,
        Special::MotionOpen,
        Special::MotionClose,
        Special::UserTextOpen,
        Special::UserTextClose,
        Special::UserSpeechOpen,
        Special::UserSpeechClose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Special::Bos => "BOS",
            Special::Pad => "PAD",
            Special::ResponseOpen => "RESPONSE_OPEN",
            Special::ResponseClose => "RESPONSE_CLOSE",
            Special::ThinkOpen => "THINK_OPEN",
            Special::ThinkClose => "THINK_CLOSE",
            Special::SpeechOpen => "SPEECH_OPEN",
            Special::SpeechClose => "SPEECH_CLOSE",
            Special::MotionOpen => "MOTION_OPEN",
            Special::MotionClose => "MOTION_CLOSE",
            Special::UserTextOpen => "USER_TEXT_OPEN",
            Special::UserTextClose => "USER_TEXT_CLOSE",
            Special::UserSpeechOpen => "USER_SPEECH_OPEN",
            Special::UserSpeechClose => "USER_SPEECH_CLOSE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Text,
    Speech,
    Motion { layer: usize },
    Special(Special),
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Text => write!(f, "text"),
            TokenKind::Speech => write!(f, "speech"),
            TokenKind::Motion { layer } => write!(f, "motion layer {layer}"),
            TokenKind::Special(s) => write!(f, "{}", s.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabLayout {
    text: Range<u32>,
    speech: Range<u32>,
    motion: Vec<Range<u32>>,
    special: Range<u32>,
}

impl VocabLayout {
    /// Builds the standard contiguous layout.
    pub fn build(
        text_size: usize,
        speech_size: usize,
        motion_codebook_size: usize,
        motion_layers: usize,
    ) -> Result<Self> {
        if text_size == 0 || speech_size == 0 || motion_codebook_size == 0 || motion_layers == 0 {
            return Err(Error::Config(format!(
                "vocabulary sizes must be ≥ 1 (text {text_size}, speech {speech_size}, \
                 codebook {motion_codebook_size}, layers {motion_layers})"
            )));
        }
        let mut next = 0u32;
        let mut block = |n: usize| {
            let r = next..next + n as u32;
            next = r.end;
            r
        };
        let text = block(text_size);
        let speech = block(speech_size);
        let motion = (0..motion_layers).map(|_| block(motion_codebook_size)).collect();
        let special = block(Special::ALL.len());
        Self::from_ranges(text, speech, motion, special)
    }

    /// Validates explicitly supplied blocks: pairwise disjoint, jointly
    /// contiguous from 0, equal-size motion blocks, room for every special.
    pub fn from_ranges(
        text: Range<u32>,
        speech: Range<u32>,
        motion: Vec<Range<u32>>,
        special: Range<u32>,
    ) -> Result<Self> {
        let mut blocks: Vec<(&str, Range<u32>)> = vec![("text", text.clone()), ("speech", speech.clone())];
        blocks.extend(motion.iter().map(|r| ("motion", r.clone())));
        blocks.push(("special", special.clone()));
        if blocks.iter().any(|(_, r)| r.is_empty()) {
            return Err(Error::Config("vocabulary blocks must be non-empty".into()));
        }
        for (i, (na, a)) in blocks.iter().enumerate() {
            for (nb, b) in &blocks[i + 1..] {
                if a.start < b.end && b.start < a.end {
                    return Err(Error::Config(format!("{na} block {a:?} overlaps {nb} block {b:?}")));
                }
            }
        }
        let mut sorted: Vec<Range<u32>> = blocks.iter().map(|(_, r)| r.clone()).collect();
        sorted.sort_by_key(|r| r.start);
        let mut expect = 0;
        for r in &sorted {
            if r.start != expect {
                return Err(Error::Config(format!("vocabulary has a gap before id {}", r.start)));
            }
            expect = r.end;
        }
        if motion.is_empty() || motion.iter().any(|r| r.len() != motion[0].len()) {
            return Err(Error::Config("motion blocks must be non-empty and equal-sized".into()));
        }
        if special.len() != Special::ALL.len() {
            return Err(Error::Config(format!(
                "special block must hold exactly {} ids",
                Special::ALL.len()
            )));
        }
        Ok(Self {
            text,
            speech,
            motion,
            special,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.special.end.max(self.text.end).max(self.speech.end) as usize
    }

    pub fn text_size(&self) -> usize {
        self.text.len()
    }

    pub fn speech_size(&self) -> usize {
        self.speech.len()
    }

    pub fn motion_layers(&self) -> usize {
        self.motion.len()
    }

    pub fn motion_codebook_size(&self) -> usize {
        self.motion[0].len()
    }

    pub fn text_range(&self) -> Range<u32> {
        self.text.clone()
    }

    pub fn speech_range(&self) -> Range<u32> {
        self.speech.clone()
    }

    pub fn motion_range(&self, layer: usize) -> Range<u32> {
        self.motion[layer].clone()
    }

    pub fn special_range(&self) -> Range<u32> {
        self.special.clone()
    }

    pub fn special(&self, s: Special) -> u32 {
        self.special.start + Special::ALL.iter().position(|&x| x == s).expect("listed") as u32
    }

    pub fn text_id(&self, local: u32) -> u32 {
        debug_assert!((local as usize) < self.text.len());
        self.text.start + local
    }

    pub fn speech_id(&self, local: u32) -> u32 {
        debug_assert!((local as usize) < self.speech.len());
        self.speech.start + local
    }

    pub fn motion_id(&self, layer: usize, index: u32) -> u32 {
        debug_assert!((index as usize) < self.motion[layer].len());
        self.motion[layer].start + index
    }

    pub fn classify(&self, id: u32) -> Result<TokenKind> {
        if self.text.contains(&id) {
            return Ok(TokenKind::Text);
        }
        if self.speech.contains(&id) {
            return Ok(TokenKind::Speech);
        }
        if let Some(layer) = self.motion.iter().position(|r| r.contains(&id)) {
            return Ok(TokenKind::Motion { layer });
        }
        if self.special.contains(&id) {
            return Ok(TokenKind::Special(Special::ALL[(id - self.special.start) as usize]));
        }
        Err(Error::InvalidId {
            id,
            vocab_size: self.vocab_size() as u32,
        })
    }

    /// Local (within-block) index of a speech or motion id.
    pub fn local_index(&self, id: u32) -> Result<u32> {
        match self.classify(id)? {
            TokenKind::Text => Ok(id - self.text.start),
            TokenKind::Speech => Ok(id - self.speech.start),
            TokenKind::Motion { layer } => Ok(id - self.motion[layer].start),
            TokenKind::Special(_) => Ok(id - self.special.start),
        }
    }

    fn describe(&self, id: u32) -> String {
        match self.classify(id) {
            Ok(k) => k.to_string(),
            Err(_) => format!("out-of-range id {id}"),
        }
    }
}

/// Order of the sections inside a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionOrder {
    /// think → text → speech → motion.
    #[default]
    TextFirst,
    /// think → speech → motion → text.
    TextLast,
}

/// The four response sections as global token ids. Motion is flattened
/// layer-major per timestep: `t0ℓ0, t0ℓ1, …, t1ℓ0, …`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ResponseStructure {
    pub think: Vec<u32>,
    pub text: Vec<u32>,
    pub speech: Vec<u32>,
    pub motion: Vec<u32>,
}

impl ResponseStructure {
    fn check(&self, layout: &VocabLayout) -> Result<()> {
        let kind_err = |section: &'static str, id: u32| Error::SectionKind {
            section,
            found: layout.describe(id),
            id,
        };
        for (section, ids) in [("think", &self.think), ("text", &self.text)] {
            if let Some(&id) = ids.iter().find(|&&id| layout.classify(id).ok() != Some(TokenKind::Text)) {
                return Err(kind_err(section, id));
            }
        }
        if let Some(&id) = self.speech.iter().find(|&&id| layout.classify(id).ok() != Some(TokenKind::Speech)) {
            return Err(kind_err("speech", id));
        }
        let layers = layout.motion_layers();
        for (i, &id) in self.motion.iter().enumerate() {
            if layout.classify(id).ok() != Some(TokenKind::Motion { layer: i % layers }) {
                return Err(kind_err("motion", id));
            }
        }
        if self.motion.len() % layers != 0 {
            return Err(Error::SectionKind {
                section: "motion",
                found: format!("{} tokens, not a multiple of {layers} layers", self.motion.len()),
                id: *self.motion.last().unwrap_or(&0),
            });
        }
        Ok(())
    }

    /// Motion section regrouped as `(timestep, layer)` local codebook indices.
    pub fn motion_indices(&self, layout: &VocabLayout) -> Result<Vec<u32>> {
        self.motion.iter().map(|&id| layout.local_index(id)).collect()
    }
}

pub fn serialize_response(r: &ResponseStructure, layout: &VocabLayout) -> Result<Vec<u32>> {
    serialize_response_with(r, layout, SectionOrder::TextFirst)
}

pub fn serialize_response_with(
    r: &ResponseStructure,
    layout: &VocabLayout,
    order: SectionOrder,
) -> Result<Vec<u32>> {
    r.check(layout)?;
    let s = |x| layout.special(x);
    let mut out = Vec::with_capacity(r.think.len() + r.text.len() + r.speech.len() + r.motion.len() + 8);
    out.push(s(Special::ResponseOpen));
    out.push(s(Special::ThinkOpen));
    out.extend_from_slice(&r.think);
    out.push(s(Special::ThinkClose));
    if order == SectionOrder::TextFirst {
        out.extend_from_slice(&r.text);
    }
    out.push(s(Special::SpeechOpen));
    out.extend_from_slice(&r.speech);
    out.push(s(Special::SpeechClose));
    out.push(s(Special::MotionOpen));
    out.extend_from_slice(&r.motion);
    out.push(s(Special::MotionClose));
    if order == SectionOrder::TextLast {
        out.extend_from_slice(&r.text);
    }
    out.push(s(Special::ResponseClose));
    Ok(out)
}

/// Linear-time recursive-descent parser over a token cursor.
struct Parser<'a> {
    layout: &'a VocabLayout,
    stream: &'a [u32],
    pos: usize,
}

impl Parser<'_> {
    fn violation(&self, expected: &[&str]) -> Error {
        let found = match self.stream.get(self.pos) {
            Some(&id) => self.layout.describe(id),
            None => "end of stream".to_string(),
        };
        Error::GrammarViolation {
            position: self.pos,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found,
        }
    }

    fn peek_kind(&self) -> Option<TokenKind> {
        self.stream.get(self.pos).and_then(|&id| self.layout.classify(id).ok())
    }

    fn expect(&mut self, s: Special) -> Result<()> {
        if self.peek_kind() == Some(TokenKind::Special(s)) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.violation(&[s.name()]))
        }
    }

    /// Consumes ids of `kind`, stopping at the first other token.
    fn run(&mut self, kind: TokenKind) -> Vec<u32> {
        let start = self.pos;
        while self.peek_kind() == Some(kind) {
            self.pos += 1;
        }
        self.stream[start..self.pos].to_vec()
    }

    fn delimited(&mut self, open: Special, kind: TokenKind, close: Special) -> Result<Vec<u32>> {
        self.expect(open)?;
        let body = self.run(kind);
        if self.peek_kind() == Some(TokenKind::Special(close)) {
            self.pos += 1;
            Ok(body)
        } else {
            Err(self.violation(&[&kind.to_string(), close.name()]))
        }
    }

    fn motion(&mut self) -> Result<Vec<u32>> {
        self.expect(Special::MotionOpen)?;
        let layers = self.layout.motion_layers();
        let start = self.pos;
        loop {
            let phase = (self.pos - start) % layers;
            match self.peek_kind() {
                Some(TokenKind::Motion { layer }) if layer == phase => self.pos += 1,
                Some(TokenKind::Special(Special::MotionClose)) if phase == 0 => {
                    self.pos += 1;
                    return Ok(self.stream[start..self.pos - 1].to_vec());
                }
                _ => {
                    let want = format!("motion layer {phase}");
                    return Err(if phase == 0 {
                        self.violation(&[&want, Special::MotionClose.name()])
                    } else {
                        self.violation(&[&want])
                    });
                }
            }
        }
    }

    /// Undelimited text ending at `next` (which is not consumed).
    fn open_text(&mut self, next: Special) -> Result<Vec<u32>> {
        let body = self.run(TokenKind::Text);
        if self.peek_kind() == Some(TokenKind::Special(next)) {
            Ok(body)
        } else {
            Err(self.violation(&["text", next.name()]))
        }
    }

    fn response(&mut self, order: SectionOrder) -> Result<ResponseStructure> {
        self.expect(Special::ResponseOpen)?;
        let think = self.delimited(Special::ThinkOpen, TokenKind::Text, Special::ThinkClose)?;
        let mut text = Vec::new();
        if order == SectionOrder::TextFirst {
            text = self.open_text(Special::SpeechOpen)?;
        }
        let speech = self.delimited(Special::SpeechOpen, TokenKind::Speech, Special::SpeechClose)?;
        let motion = self.motion()?;
        if order == SectionOrder::TextLast {
            text = self.open_text(Special::ResponseClose)?;
        }
        self.expect(Special::ResponseClose)?;
        if self.pos != self.stream.len() {
            return Err(self.violation(&["end of stream"]));
        }
        Ok(ResponseStructure {
            think,
            text,
            speech,
            motion,
        })
    }
}

/// Parses a complete response stream. A violation reports the first offending
/// position; a stream that is a proper prefix of a valid response fails at
/// position `stream.len()` with `found = "end of stream"`.
pub fn parse_response(stream: &[u32], layout: &VocabLayout) -> Result<ResponseStructure> {
    parse_response_with(stream, layout, SectionOrder::TextFirst)
}

pub fn parse_response_with(stream: &[u32], layout: &VocabLayout, order: SectionOrder) -> Result<ResponseStructure> {
    Parser {
        layout,
        stream,
        pos: 0,
    }
    .response(order)
}

/// True when `prefix` can still be extended to a valid response.
pub fn is_viable_prefix(prefix: &[u32], layout: &VocabLayout, order: SectionOrder) -> bool {
    match parse_response_with(prefix, layout, order) {
        Ok(_) => true,
        Err(Error::GrammarViolation { position, .. }) => position == prefix.len(),
        Err(_) => false,
    }
}

/// One user-side prompt segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum UserTurn {
    Text(Vec<u32>),
    Speech(Vec<u32>),
}

/// Wraps user segments in their user-side delimiters.
pub fn build_prompt(turns: &[UserTurn], layout: &VocabLayout) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for turn in turns {
        let (open, close, kind, ids) = match turn {
            UserTurn::Text(ids) => (Special::UserTextOpen, Special::UserTextClose, TokenKind::Text, ids),
            UserTurn::Speech(ids) => (Special::UserSpeechOpen, Special::UserSpeechClose, TokenKind::Speech, ids),
        };
        if let Some(&bad) = ids.iter().find(|&&id| layout.classify(id).ok() != Some(kind)) {
            return Err(Error::SectionKind {
                section: if kind == TokenKind::Text { "user text" } else { "user speech" },
                found: layout.describe(bad),
                id: bad,
            });
        }
        out.push(layout.special(open));
        out.extend_from_slice(ids);
        out.push(layout.special(close));
    }
    Ok(out)
}

pub fn parse_prompt(stream: &[u32], layout: &VocabLayout) -> Result<Vec<UserTurn>> {
    let mut p = Parser {
        layout,
        stream,
        pos: 0,
    };
    let mut turns = Vec::new();
    while p.pos < stream.len() {
        match p.peek_kind() {
            Some(TokenKind::Special(Special::UserTextOpen)) => turns.push(UserTurn::Text(p.delimited(
                Special::UserTextOpen,
                TokenKind::Text,
                Special::UserTextClose,
            )?)),
            Some(TokenKind::Special(Special::UserSpeechOpen)) => turns.push(UserTurn::Speech(p.delimited(
                Special::UserSpeechOpen,
                TokenKind::Speech,
                Special::UserSpeechClose,
            )?)),
            _ => return Err(p.violation(&["USER_TEXT_OPEN", "USER_SPEECH_OPEN"])),
        }
    }
    Ok(turns)
}

/// Character-level text tokenizer over a declared alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharTokenizer {
    alphabet: Vec<char>,
}

pub const DEFAULT_ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz0123456789 .,?!:;'-";

impl Default for CharTokenizer {
    fn default() -> Self {
        Self::new(DEFAULT_ALPHABET).expect("default alphabet is valid")
    }
}

impl CharTokenizer {
    pub fn new(alphabet: &str) -> Result<Self> {
        let chars: Vec<char> = alphabet.chars().collect();
        let mut sorted = chars.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != chars.len() || chars.is_empty() {
            return Err(Error::Config("alphabet must be non-empty without duplicates".into()));
        }
        Ok(Self { alphabet: chars })
    }

    pub fn len(&self) -> usize {
        self.alphabet.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphabet.is_empty()
    }

    /// Global text ids; characters outside the alphabet are an error.
    pub fn encode(&self, text: &str, layout: &VocabLayout) -> Result<Vec<u32>> {
        if self.alphabet.len() > layout.text_size() {
            return Err(Error::Config(format!(
                "alphabet of {} characters exceeds text block of {}",
                self.alphabet.len(),
                layout.text_size()
            )));
        }
        text.chars()
            .map(|c| {
                self.alphabet
                    .iter()
                    .position(|&a| a == c)
                    .map(|i| layout.text_id(i as u32))
                    .ok_or_else(|| Error::InvalidArgument(format!("character {c:?} is not in the alphabet")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[u32], layout: &VocabLayout) -> String {
        ids.iter()
            .filter(|&&id| layout.classify(id).ok() == Some(TokenKind::Text))
            .filter_map(|&id| self.alphabet.get((id - layout.text_range().start) as usize))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> VocabLayout {
        VocabLayout::build(100, 50, 8, 4).unwrap()
    }

    #[test]
    fn toy_vocab_size() {
        let l = toy();
        assert_eq!(l.vocab_size(), 196);
        assert_eq!(l.special_range().len(), 14);
        for s in Special::ALL {
            assert!(l.special_range().contains(&l.special(s)));
        }
    }

    #[test]
    fn zero_sizes_rejected() {
        assert!(matches!(VocabLayout::build(0, 1, 1, 1), Err(Error::Config(_))));
        assert!(matches!(VocabLayout::build(1, 1, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn overlapping_manual_ranges_rejected() {
        let r = VocabLayout::from_ranges(0..10, 5..20, vec![20..24], 24..38);
        assert!(matches!(r, Err(Error::Config(_))));
        let gap = VocabLayout::from_ranges(0..10, 11..20, vec![20..24], 24..38);
        assert!(matches!(gap, Err(Error::Config(_))));
        assert!(VocabLayout::from_ranges(0..10, 10..20, vec![20..24], 24..38).is_ok());
    }

    #[test]
    fn classification_by_enumeration() {
        let l = toy();
        // Oracle: walk the declared block sizes in order.
        let mut expected = Vec::new();
        expected.extend(std::iter::repeat(TokenKind::Text).take(100));
        expected.extend(std::iter::repeat(TokenKind::Speech).take(50));
        for layer in 0..4 {
            expected.extend(std::iter::repeat(TokenKind::Motion { layer }).take(8));
        }
        expected.extend(Special::ALL.iter().map(|&s| TokenKind::Special(s)));
        for (id, kind) in expected.iter().enumerate() {
            assert_eq!(l.classify(id as u32).unwrap(), *kind, "id {id}");
        }
        assert_eq!(l.classify(99).unwrap(), TokenKind::Text);
        assert_eq!(l.classify(100).unwrap(), TokenKind::Speech);
        assert_eq!(l.classify(150 + 2 * 8 + 3).unwrap(), TokenKind::Motion { layer: 2 });
        assert_eq!(l.classify(150 + 3 * 8).unwrap(), TokenKind::Motion { layer: 3 });
        assert_eq!(l.classify(195).unwrap(), TokenKind::Special(Special::UserSpeechClose));
        assert!(matches!(l.classify(196), Err(Error::InvalidId { id: 196, .. })));
    }

    #[test]
    fn minimal_response_is_eight_tokens() {
        let l = toy();
        let r = ResponseStructure {
            text: vec![3, 4],
            ..Default::default()
        };
        let s = serialize_response(&r, &l).unwrap();
        assert_eq!(s.len(), 10);
        let empty = serialize_response(&ResponseStructure::default(), &l).unwrap();
        assert_eq!(empty.len(), 8);
        assert_eq!(parse_response(&s, &l).unwrap(), r);
    }

    #[test]
    fn wrong_kind_in_section_rejected() {
        let l = toy();
        let r = ResponseStructure {
            speech: vec![l.motion_id(0, 1)],
            ..Default::default()
        };
        assert!(matches!(
            serialize_response(&r, &l),
            Err(Error::SectionKind { section: "speech", .. })
        ));
        let r = ResponseStructure {
            motion: vec![l.motion_id(1, 0), l.motion_id(0, 0), l.motion_id(2, 0), l.motion_id(3, 0)],
            ..Default::default()
        };
        assert!(serialize_response(&r, &l).is_err());
    }

    #[test]
    fn misordered_sections_report_position() {
        let l = toy();
        let s = |x| l.special(x);
        let stream = vec![
            s(Special::ResponseOpen),
            s(Special::ThinkOpen),
            s(Special::ThinkClose),
            s(Special::MotionOpen),
            s(Special::MotionClose),
            s(Special::SpeechOpen),
            s(Special::SpeechClose),
            s(Special::ResponseClose),
        ];
        match parse_response(&stream, &l) {
            Err(Error::GrammarViolation { position, found, .. }) => {
                assert_eq!(position, 3);
                assert_eq!(found, "MOTION_OPEN");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn trailing_garbage_and_truncation() {
        let l = toy();
        let mut s = serialize_response(&ResponseStructure::default(), &l).unwrap();
        let n = s.len();
        assert!(matches!(
            parse_response(&s[..n - 1], &l),
            Err(Error::GrammarViolation { position, .. }) if position == n - 1
        ));
        s.push(0);
        assert!(matches!(
            parse_response(&s, &l),
            Err(Error::GrammarViolation { position, .. }) if position == n
        ));
    }

    #[test]
    fn text_last_order_round_trip() {
        let l = toy();
        let r = ResponseStructure {
            think: vec![1],
            text: vec![2, 3],
            speech: vec![l.speech_id(4)],
            motion: (0..4).map(|layer| l.motion_id(layer, 7)).collect(),
        };
        let s = serialize_response_with(&r, &l, SectionOrder::TextLast).unwrap();
        assert_eq!(parse_response_with(&s, &l, SectionOrder::TextLast).unwrap(), r);
        assert!(parse_response(&s, &l).is_err());
    }

    #[test]
    fn prompt_round_trip_and_kind_check() {
        let l = toy();
        let turns = vec![UserTurn::Text(vec![1, 2]), UserTurn::Speech(vec![l.speech_id(0)])];
        let p = build_prompt(&turns, &l).unwrap();
        assert_eq!(parse_prompt(&p, &l).unwrap(), turns);
        assert!(build_prompt(&[UserTurn::Speech(vec![1])], &l).is_err());
    }

    #[test]
    fn char_tokenizer_round_trip() {
        let l = VocabLayout::build(64, 8, 4, 2).unwrap();
        let tok = CharTokenizer::default();
        let ids = tok.encode("hello, world.", &l).unwrap();
        assert_eq!(tok.decode(&ids, &l), "hello, world.");
        assert!(tok.encode("Ü", &l).is_err());
    }

    fn structure_strategy() -> impl Strategy<Value = ResponseStructure> {
        let l = toy();
        let text = prop::collection::vec(0u32..100, 0..12);
        let think = prop::collection::vec(0u32..100, 0..12);
        let speech = prop::collection::vec(100u32..150, 0..12);
        let motion = prop::collection::vec(prop::array::uniform4(0u32..8), 0..4);
        (think, text, speech, motion).prop_map(move |(think, text, speech, motion)| ResponseStructure {
            think,
            text,
            speech,
            motion: motion
                .iter()
                .flat_map(|step| step.iter().enumerate().map(|(layer, &i)| l.motion_id(layer, i)).collect::<Vec<_>>())
                .collect(),
        })
    }

    proptest! {
        #[test]
        fn parse_inverts_serialize(r in structure_strategy(), last in any::<bool>()) {
            let l = toy();
            let order = if last { SectionOrder::TextLast } else { SectionOrder::TextFirst };
            let s = serialize_response_with(&r, &l, order).unwrap();
            let back = parse_response_with(&s, &l, order).unwrap();
            prop_assert_eq!(&back, &r);
            prop_assert_eq!(serialize_response_with(&back, &l, order).unwrap(), s);
        }

        #[test]
        fn parser_is_total(stream in prop::collection::vec(0u32..200, 0..40)) {
            let l = toy();
            match parse_response(&stream, &l) {
                Ok(r) => prop_assert_eq!(serialize_response(&r, &l).unwrap(), stream),
                Err(Error::GrammarViolation { position, .. }) => prop_assert!(position <= stream.len()),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
