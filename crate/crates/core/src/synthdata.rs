//! Deterministic synthetic corpus: pseudo-words, each bound to one sinusoidal
//! motion primitive and one speech-token template, composed into aligned
//! clips. Also the on-disk corpus format (`manifest.json`, `motion/*.f32`,
//! `speech/*.json`).

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_f32_file, write_f32_file};
use crate::error::{Error, Result};
use crate::rotgeom::{axis_angle_to_matrix, matrix_to_6d, AxisAngle, PoseSequence};
use crate::segmenter::{AlignedClip, SpeechToken, WordTiming};

/// Speech id reserved for silence.
pub const SILENCE: u32 = 0;

const STREAM_CLIPS: u64 = 1;
const STREAM_INSTRUCT: u64 = 1 << 40;
const STREAM_REHEARSAL: u64 = 2 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_clips: usize,
    /// The last `heldout_clips` clips form the test split.
    pub heldout_clips: usize,
    pub fps: f64,
    pub joints: usize,
    pub lexicon_size: usize,
    /// Speech tokens per second.
    pub speech_rate: f64,
    /// Local speech ids available (id 0 is silence).
    pub speech_size: usize,
    /// Word durations are drawn from these frame counts.
    pub word_frames: Vec<usize>,
    pub words_per_clip: (usize, usize),
    /// Candidate silences (seconds) between words; 0 means none.
    pub pause_choices: Vec<f64>,
    pub punctuation_prob: f64,
    pub num_instruct: usize,
    pub num_rehearsal: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_clips: 64,
            heldout_clips: 16,
            fps: 20.0,
            joints: 6,
            lexicon_size: 12,
            speech_rate: 25.0,
            speech_size: 64,
            word_frames: vec![8, 12, 16],
            words_per_clip: (2, 5),
            pause_choices: vec![0.0, 0.0, 0.2, 0.4, 0.6],
            punctuation_prob: 0.3,
            num_instruct: 256,
            num_rehearsal: 256,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.lexicon_size == 0 || self.joints == 0 || self.word_frames.is_empty() {
            return bad("lexicon, joints and word_frames must be non-empty");
        }
        if self.word_frames.contains(&0) {
            return bad("word durations must be positive");
        }
        if !(self.fps > 0.0 && self.speech_rate > 0.0) {
            return bad("fps and speech_rate must be positive");
        }
        if self.speech_size < 2 {
            return bad("speech_size must leave room for silence plus one voiced id");
        }
        let (lo, hi) = self.words_per_clip;
        if lo == 0 || lo > hi {
            return bad("words_per_clip must be a non-empty range starting at 1 or more");
        }
        if self.heldout_clips > self.num_clips {
            return bad("heldout_clips exceeds num_clips");
        }
        if self.pause_choices.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || self.pause_choices.is_empty() {
            return bad("pause_choices must be non-negative and non-empty");
        }
        if !(0.0..=1.0).contains(&self.punctuation_prob) {
            return bad("punctuation_prob must lie in [0, 1]");
        }
        if self.lexicon_size > 14 * 5 * 14 * 5 {
            return bad("lexicon_size exceeds the number of distinct spellings");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointWave {
    pub axis: [f64; 3],
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub spelling: String,
    pub frames: usize,
    pub waves: Vec<JointWave>,
    /// Voiced speech ids, one per token slot of the word.
    pub speech: Vec<u32>,
}

impl Word {
    pub fn duration(&self, fps: f64) -> f64 {
        self.frames as f64 / fps
    }

    /// Renders the primitive: joint `j` rotates about its axis by
    /// `amplitude · sin(2π·frequency·t + phase)`.
    pub fn motion(&self, fps: f64) -> Result<PoseSequence> {
        let joints = self.waves.len();
        let mut data = Vec::with_capacity(self.frames * joints * 6);
        for f in 0..self.frames {
            let t = f as f64 / fps;
            for w in &self.waves {
                let angle = w.amplitude * (2.0 * PI * w.frequency * t + w.phase).sin();
                let v = Vector3::from(w.axis) * angle;
                let r = axis_angle_to_matrix(&AxisAngle(v))?;
                data.extend_from_slice(&matrix_to_6d(&r)?.to_f32());
            }
        }
        PoseSequence::new(self.frames, joints, fps, data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub words: Vec<Word>,
    pub fps: f64,
    pub speech_rate: f64,
}

impl Lexicon {
    pub fn generate(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
        const VOWELS: &[u8] = b"aeiou";
        let mut spellings: Vec<String> = Vec::with_capacity(cfg.lexicon_size);
        while spellings.len() < cfg.lexicon_size {
            let s: String = (0..2)
                .flat_map(|_| {
                    [
                        CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char,
                        VOWELS[rng.gen_range(0..VOWELS.len())] as char,
                    ]
                })
                .collect();
            if !spellings.contains(&s) {
                spellings.push(s);
            }
        }
        let slots = |frames: usize| ((frames as f64 / cfg.fps) * cfg.speech_rate).ceil() as usize;
        let words = spellings
            .into_iter()
            .map(|spelling| {
                let frames = *cfg.word_frames.choose(&mut rng).expect("validated non-empty");
                let waves = (0..cfg.joints)
                    .map(|_| {
                        let axis = Vector3::new(
                            rng.gen_range(-1.0..1.0),
                            rng.gen_range(-1.0..1.0),
                            rng.gen_range(-1.0..1.0),
                        );
                        let axis = if axis.norm() < 1e-3 { Vector3::z() } else { axis.normalize() };
                        JointWave {
                            axis: [axis.x, axis.y, axis.z],
                            amplitude: rng.gen_range(0.3..0.9),
                            frequency: rng.gen_range(0.5..2.5),
                            phase: rng.gen_range(0.0..2.0 * PI),
                        }
                    })
                    .collect();
                let speech = (0..slots(frames).max(1))
                    .map(|_| rng.gen_range(1..cfg.speech_size as u32))
                    .collect();
                Word {
                    spelling,
                    frames,
                    waves,
                    speech,
                }
            })
            .collect();
        Ok(Self {
            words,
            fps: cfg.fps,
            speech_rate: cfg.speech_rate,
        })
    }

    pub fn lookup(&self, spelling: &str) -> Option<usize> {
        self.words.iter().position(|w| w.spelling == spelling)
    }

    /// Motion of several words played back to back.
    pub fn motion_for(&self, words: &[usize]) -> Result<PoseSequence> {
        let parts = words
            .iter()
            .map(|&w| self.words[w].motion(self.fps))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&PoseSequence> = parts.iter().collect();
        PoseSequence::concat(&refs)
    }

    /// Voiced speech ids of several words, back to back.
    pub fn speech_for(&self, words: &[usize]) -> Vec<u32> {
        words.iter().flat_map(|&w| self.words[w].speech.iter().copied()).collect()
    }
}

/// One placed word inside a clip: lexicon index and frame span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub word: usize,
    pub start_frame: usize,
    pub end_frame: usize,
}

/// Lays words out on the frame grid with optional silences, then renders the
/// fixed-rate speech stream (silence id between words) and the motion (rest
/// pose during silences).
pub fn render_clip(
    lexicon: &Lexicon,
    id: String,
    words: &[usize],
    pauses_after: &[usize],
    punct_after: &[Option<char>],
) -> Result<(AlignedClip, Vec<Placement>)> {
    let fps = lexicon.fps;
    let joints = lexicon.words.first().map(|w| w.waves.len()).unwrap_or(1);
    let mut placements = Vec::with_capacity(words.len());
    let mut motion_parts = Vec::new();
    let mut frame = 0;
    let mut text = String::new();
    let mut timings = Vec::new();
    for (i, &w) in words.iter().enumerate() {
        let word = &lexicon.words[w];
        placements.push(Placement {
            word: w,
            start_frame: frame,
            end_frame: frame + word.frames,
        });
        if i > 0 {
            text.push(' ');
        }
        let cs = text.chars().count();
        text.push_str(&word.spelling);
        timings.push(WordTiming {
            char_start: cs,
            char_end: cs + word.spelling.chars().count(),
            start: frame as f64 / fps,
            end: (frame + word.frames) as f64 / fps,
        });
        if let Some(Some(p)) = punct_after.get(i) {
            text.push(*p);
        }
        motion_parts.push(word.motion(fps)?);
        frame += word.frames;
        let pause = pauses_after.get(i).copied().unwrap_or(0);
        if pause > 0 {
            motion_parts.push(PoseSequence::rest(pause, joints, fps)?);
            frame += pause;
        }
    }
    let total_frames = frame;
    let duration = total_frames as f64 / fps;
    let refs: Vec<&PoseSequence> = motion_parts.iter().collect();
    let motion = PoseSequence::concat(&refs)?;
    let n_tokens = (duration * lexicon.speech_rate - 1e-9).ceil().max(0.0) as usize;
    let speech = (0..n_tokens)
        .map(|k| {
            let t = k as f64 / lexicon.speech_rate;
            let f = t * fps;
            let id = placements
                .iter()
                .find(|p| f + 1e-9 >= p.start_frame as f64 && f + 1e-9 < p.end_frame as f64)
                .map(|p| {
                    let tmpl = &lexicon.words[p.word].speech;
                    let slot = ((t - p.start_frame as f64 / fps) * lexicon.speech_rate + 1e-9).floor() as usize;
                    tmpl[slot.min(tmpl.len() - 1)]
                })
                .unwrap_or(SILENCE);
            SpeechToken { id, t }
        })
        .collect();
    let clip = AlignedClip {
        id,
        text,
        words: timings,
        speech,
        motion,
        duration,
    };
    Ok((clip, placements))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedClip {
    pub clip: AlignedClip,
    pub placements: Vec<Placement>,
}

/// Clip `index` of the corpus; a pure function of `(cfg, index)`.
pub fn gen_clip(cfg: &SynthConfig, lexicon: &Lexicon, index: usize) -> Result<GeneratedClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_CLIPS + index as u64);
    let (lo, hi) = cfg.words_per_clip;
    let n = rng.gen_range(lo..=hi);
    let words: Vec<usize> = (0..n).map(|_| rng.gen_range(0..lexicon.words.len())).collect();
    let mut pauses = Vec::with_capacity(n);
    let mut punct = Vec::with_capacity(n);
    for i in 0..n {
        let last = i + 1 == n;
        let p = if last { 0.0 } else { *cfg.pause_choices.choose(&mut rng).expect("validated") };
        pauses.push((p * cfg.fps).round() as usize);
        let mark = if last {
            Some('.')
        } else if rng.gen_bool(cfg.punctuation_prob) {
            Some(*[',', '.', ';', '?'].choose(&mut rng).expect("non-empty"))
        } else {
            None
        };
        punct.push(mark);
    }
    let (clip, placements) = render_clip(lexicon, format!("clip{index:05}"), &words, &pauses, &punct)?;
    Ok(GeneratedClip { clip, placements })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: SynthConfig,
    pub lexicon: Lexicon,
    pub clips: Vec<AlignedClip>,
    pub splits: Vec<Split>,
}

impl Corpus {
    pub fn generate(cfg: &SynthConfig) -> Result<Self> {
        let lexicon = Lexicon::generate(cfg)?;
        let clips = (0..cfg.num_clips)
            .map(|i| gen_clip(cfg, &lexicon, i).map(|g| g.clip))
            .collect::<Result<Vec<_>>>()?;
        let train = cfg.num_clips - cfg.heldout_clips;
        let splits = (0..cfg.num_clips)
            .map(|i| if i < train { Split::Train } else { Split::Test })
            .collect();
        Ok(Self {
            config: cfg.clone(),
            lexicon,
            clips,
            splits,
        })
    }

    pub fn split(&self, which: Split) -> Vec<&AlignedClip> {
        self.clips
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == which)
            .map(|(c, _)| c)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    pub text: String,
    pub split: Split,
    pub speech_token_file: String,
    pub motion_file: String,
    pub fps: f64,
    pub frames: usize,
    pub joints: usize,
    pub duration: f64,
    /// Word-level alignment.
    pub timestamps: Vec<WordTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format: String,
    pub seed: u64,
    pub config: SynthConfig,
    pub lexicon: Option<Lexicon>,
    pub clips: Vec<ClipRecord>,
}

pub const CORPUS_FORMAT: &str = "umind-corpus-v1";

pub fn export_corpus(corpus: &Corpus, dir: &Path) -> Result<CorpusManifest> {
    fs::create_dir_all(dir.join("motion"))?;
    fs::create_dir_all(dir.join("speech"))?;
    let mut records = Vec::with_capacity(corpus.clips.len());
    for (clip, split) in corpus.clips.iter().zip(&corpus.splits) {
        let motion_file = format!("motion/{}.f32", clip.id);
        let speech_file = format!("speech/{}.json", clip.id);
        write_f32_file(&dir.join(&motion_file), clip.motion.data())?;
        fs::write(dir.join(&speech_file), serde_json::to_vec(&clip.speech)?)?;
        records.push(ClipRecord {
            id: clip.id.clone(),
            text: clip.text.clone(),
            split: *split,
            speech_token_file: speech_file,
            motion_file,
            fps: clip.motion.fps(),
            frames: clip.motion.frames(),
            joints: clip.motion.joints(),
            duration: clip.duration,
            timestamps: clip.words.clone(),
        });
    }
    let manifest = CorpusManifest {
        format: CORPUS_FORMAT.to_string(),
        seed: corpus.config.seed,
        config: corpus.config.clone(),
        lexicon: Some(corpus.lexicon.clone()),
        clips: records,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads a corpus directory; any file disagreeing with its manifest record
/// is a corrupt-corpus error.
pub fn import_corpus(dir: &Path) -> Result<(CorpusManifest, Vec<AlignedClip>)> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::InputMissing(manifest_path));
    }
    let manifest: CorpusManifest = serde_json::from_slice(&fs::read(&manifest_path)?)
        .map_err(|e| Error::CorruptCorpus(format!("{}: {e}", manifest_path.display())))?;
    if manifest.format != CORPUS_FORMAT {
        return Err(Error::CorruptCorpus(format!("unknown corpus format {:?}", manifest.format)));
    }
    let mut clips = Vec::with_capacity(manifest.clips.len());
    for rec in &manifest.clips {
        let corrupt = |detail: String| Error::CorruptCorpus(format!("clip {}: {detail}", rec.id));
        let motion_path: PathBuf = dir.join(&rec.motion_file);
        if !motion_path.exists() {
            return Err(Error::InputMissing(motion_path));
        }
        let data = read_f32_file(&motion_path).map_err(|e| corrupt(e.to_string()))?;
        if data.len() != rec.frames * rec.joints * 6 {
            return Err(corrupt(format!(
                "motion file holds {} floats, manifest declares ({}, {}, 6)",
                data.len(),
                rec.frames,
                rec.joints
            )));
        }
        let motion = PoseSequence::new(rec.frames, rec.joints, rec.fps, data).map_err(|e| corrupt(e.to_string()))?;
        let speech: Vec<SpeechToken> = serde_json::from_slice(&fs::read(dir.join(&rec.speech_token_file))?)
            .map_err(|e| corrupt(e.to_string()))?;
        let clip = AlignedClip {
            id: rec.id.clone(),
            text: rec.text.clone(),
            words: rec.timestamps.clone(),
            speech,
            motion,
            duration: rec.duration,
        };
        clip.validate().map_err(|e| corrupt(e.to_string()))?;
        clips.push(clip);
    }
    Ok((manifest, clips))
}

/// Question/reasoning/answer triplet with the answer's speech and motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructRecord {
    pub question: String,
    pub cot: String,
    pub answer: String,
    /// Local speech ids.
    pub speech: Vec<u32>,
    /// Lexicon indices the answer performs.
    pub words: Vec<usize>,
}

impl InstructRecord {
    pub fn motion(&self, lexicon: &Lexicon) -> Result<PoseSequence> {
        lexicon.motion_for(&self.words)
    }
}

pub fn gen_instruct_records(cfg: &SynthConfig, lexicon: &Lexicon) -> Vec<InstructRecord> {
    let verbs = ["show", "perform", "do"];
    (0..cfg.num_instruct)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(STREAM_INSTRUCT + i as u64);
            let n = rng.gen_range(1..=2);
            let words: Vec<usize> = (0..n).map(|_| rng.gen_range(0..lexicon.words.len())).collect();
            let names: Vec<&str> = words.iter().map(|&w| lexicon.words[w].spelling.as_str()).collect();
            let verb = verbs[rng.gen_range(0..verbs.len())];
            let joined = names.join(" ");
            InstructRecord {
                question: format!("{verb} {joined}"),
                cot: format!("the prompt asks for {joined}; plan {}", names.join(" then ")),
                answer: format!("{joined}."),
                speech: lexicon.speech_for(&words),
                words,
            }
        })
        .collect()
}

/// Pure-text question/answer pair used for rehearsal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub question: String,
    pub answer: String,
}

pub fn gen_rehearsal_records(cfg: &SynthConfig, lexicon: &Lexicon) -> Vec<TextRecord> {
    (0..cfg.num_rehearsal)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(STREAM_REHEARSAL + i as u64);
            match rng.gen_range(0..3) {
                0 => {
                    let (a, b) = (rng.gen_range(0..10), rng.gen_range(0..10));
                    TextRecord {
                        question: format!("what is {a} plus {b}?"),
                        answer: format!("{}.", a + b),
                    }
                }
                1 => {
                    let w = &lexicon.words[rng.gen_range(0..lexicon.words.len())].spelling;
                    TextRecord {
                        question: format!("how many letters in {w}?"),
                        answer: format!("{}.", w.chars().count()),
                    }
                }
                _ => {
                    let w = &lexicon.words[rng.gen_range(0..lexicon.words.len())].spelling;
                    let rev: String = w.chars().rev().collect();
                    TextRecord {
                        question: format!("reverse {w}"),
                        answer: format!("{rev}."),
                    }
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::{segment_clip, SegmentConfig};

    fn small() -> SynthConfig {
        SynthConfig {
            num_clips: 50,
            heldout_clips: 10,
            num_instruct: 40,
            num_rehearsal: 40,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn one_word_clip_duration() {
        let cfg = small();
        let lex = Lexicon::generate(&cfg).unwrap();
        let (clip, _) = render_clip(&lex, "x".into(), &[3], &[0], &[None]).unwrap();
        assert_eq!(clip.motion.frames(), lex.words[3].frames);
        assert_eq!(clip.duration, lex.words[3].duration(cfg.fps));
        assert_eq!(clip.motion, lex.words[3].motion(cfg.fps).unwrap());
    }

    #[test]
    fn clips_are_deterministic() {
        let cfg = small();
        let lex = Lexicon::generate(&cfg).unwrap();
        for i in [0, 7, 49] {
            assert_eq!(gen_clip(&cfg, &lex, i).unwrap(), gen_clip(&cfg, &lex, i).unwrap());
        }
        assert_ne!(gen_clip(&cfg, &lex, 0).unwrap(), gen_clip(&cfg, &lex, 1).unwrap());
    }

    #[test]
    fn five_word_boundaries_match_primitives() {
        let cfg = small();
        let lex = Lexicon::generate(&cfg).unwrap();
        let words = [0, 1, 2, 3, 4];
        let pauses = [0, 8, 0, 4, 0];
        let (clip, placements) = render_clip(&lex, "b".into(), &words, &pauses, &[None; 5]).unwrap();
        // Independent bookkeeping: running sum of word frames plus pauses.
        let mut frame = 0;
        for (i, &w) in words.iter().enumerate() {
            let frames = lex.words[w].frames;
            assert_eq!((placements[i].start_frame, placements[i].end_frame), (frame, frame + frames));
            assert_eq!(clip.words[i].start, frame as f64 / cfg.fps);
            assert_eq!(clip.words[i].end, (frame + frames) as f64 / cfg.fps);
            let prim = lex.words[w].motion(cfg.fps).unwrap();
            assert_eq!(clip.motion.slice(frame, frame + frames).unwrap(), prim);
            frame += frames + pauses[i];
        }
        assert_eq!(clip.motion.frames(), frame);
        clip.validate().unwrap();
    }

    #[test]
    fn frequencies_below_nyquist() {
        let cfg = small();
        let lex = Lexicon::generate(&cfg).unwrap();
        assert!(lex.words.iter().flat_map(|w| &w.waves).all(|w| w.frequency < cfg.fps / 2.0));
        let mut names: Vec<&str> = lex.words.iter().map(|w| w.spelling.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), cfg.lexicon_size);
    }

    #[test]
    fn segmenter_recovers_known_boundaries() {
        let cfg = small();
        let lex = Lexicon::generate(&cfg).unwrap();
        let words = [0, 1, 2, 3];
        // Comma after word 0; a 0.4 s pause after word 2.
        let (clip, placements) =
            render_clip(&lex, "s".into(), &words, &[0, 0, 8, 0], &[Some(','), None, None, Some('.')]).unwrap();
        let segs = segment_clip(&clip, &SegmentConfig::default()).unwrap();
        let starts: Vec<usize> = segs.iter().map(|s| s.frame_span.0).collect();
        assert_eq!(starts, vec![0, placements[1].start_frame, placements[3].start_frame]);
    }

    #[test]
    fn export_import_round_trip() {
        let cfg = small();
        let corpus = Corpus::generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = export_corpus(&corpus, dir.path()).unwrap();
        assert_eq!(manifest.clips.len(), 50);
        let (m2, clips) = import_corpus(dir.path()).unwrap();
        assert_eq!(m2, manifest);
        assert_eq!(clips, corpus.clips);
        assert_eq!(corpus.split(Split::Test).len(), 10);
    }

    #[test]
    fn tampered_motion_file_is_corrupt() {
        let mut cfg = small();
        cfg.num_clips = 3;
        cfg.heldout_clips = 1;
        let corpus = Corpus::generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = export_corpus(&corpus, dir.path()).unwrap();
        let path = dir.path().join(&manifest.clips[1].motion_file);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 24]).unwrap();
        assert!(matches!(import_corpus(dir.path()), Err(Error::CorruptCorpus(_))));
    }

    #[test]
    fn instruct_records_reference_words() {
        let cfg = small();
        let lex = Lexicon::generate(&cfg).unwrap();
        for r in gen_instruct_records(&cfg, &lex) {
            assert!(!r.cot.is_empty());
            for &w in &r.words {
                assert!(r.cot.contains(&lex.words[w].spelling));
            }
            assert_eq!(r.speech, lex.speech_for(&r.words));
        }
        let single = gen_instruct_records(&cfg, &lex).into_iter().find(|r| r.words.len() == 1).unwrap();
        assert_eq!(single.motion(&lex).unwrap(), lex.words[single.words[0]].motion(cfg.fps).unwrap());
    }
}
