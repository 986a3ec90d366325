//! Deterministic stand-in for the neural models.
//!
//! Token layout (13 bits, MSB first):
//!
//! ```text
//! | word code (10) | slot parity (1) | style (2) |
//! ```
//!
//! The word code is a seeded permutation of the word's lexicon index, the
//! parity bit alternates with the word's position in the utterance so that
//! repeated words stay separate, and the style bits carry the clip's emotion
//! class. Every token of one word slot is identical, so decoding groups runs
//! of equal (code, parity) back into words. A single flipped bit can only
//! disturb the run it lands in.

use super::{stable_hash, AudioHandle, Backend, BackendError, Clip, Style, TimbreRef};
use crate::bits::SemanticToken;
use crate::sender::quantize_embedding;
use crate::wire::{CodecId, EMBED_DIM};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

const CODE_BITS: u32 = 10;
const CODE_SPACE: usize = 1 << CODE_BITS;
pub const TOKENS_PER_SECOND: f64 = 50.0;

pub const MOCK_LEXICON: &[&str] = &[
    "a",
    "about",
    "after",
    "again",
    "air",
    "all",
    "always",
    "an",
    "and",
    "animal",
    "answer",
    "any",
    "are",
    "around",
    "as",
    "ask",
    "at",
    "away",
    "back",
    "be",
    "because",
    "been",
    "before",
    "began",
    "below",
    "between",
    "big",
    "boat",
    "book",
    "both",
    "boy",
    "bring",
    "but",
    "by",
    "call",
    "came",
    "can",
    "car",
    "carry",
    "change",
    "children",
    "city",
    "close",
    "cold",
    "come",
    "could",
    "country",
    "cut",
    "day",
    "did",
    "different",
    "do",
    "does",
    "dog",
    "done",
    "door",
    "down",
    "draw",
    "each",
    "early",
    "earth",
    "eat",
    "end",
    "enough",
    "even",
    "every",
    "eye",
    "face",
    "family",
    "far",
    "father",
    "feet",
    "few",
    "find",
    "fire",
    "first",
    "fish",
    "follow",
    "food",
    "for",
    "form",
    "found",
    "four",
    "friend",
    "from",
    "game",
    "gave",
    "get",
    "girl",
    "give",
    "go",
    "good",
    "got",
    "great",
    "green",
    "group",
    "grow",
    "had",
    "hand",
    "hard",
    "has",
    "have",
    "he",
    "head",
    "hear",
    "help",
    "her",
    "here",
    "high",
    "him",
    "his",
    "home",
    "horse",
    "house",
    "how",
    "i",
    "idea",
    "if",
    "important",
    "in",
    "into",
    "is",
    "it",
    "just",
    "keep",
    "kind",
    "know",
    "land",
    "large",
    "last",
    "later",
    "learn",
    "leave",
    "left",
    "let",
    "letter",
    "life",
    "light",
    "like",
    "line",
    "list",
    "little",
    "live",
    "long",
    "look",
    "made",
    "make",
    "man",
    "many",
    "map",
    "may",
    "me",
    "mean",
    "men",
    "might",
    "mile",
    "miss",
    "more",
    "most",
    "mother",
    "mountain",
    "move",
    "much",
    "music",
    "must",
    "my",
    "name",
    "near",
    "need",
    "never",
    "new",
    "next",
    "night",
    "no",
    "not",
    "now",
    "number",
    "of",
    "off",
    "often",
    "old",
    "on",
    "once",
    "one",
    "only",
    "open",
    "or",
    "other",
    "our",
    "out",
    "over",
    "own",
    "page",
    "paper",
    "part",
    "people",
    "picture",
    "place",
    "plant",
    "play",
    "point",
    "put",
    "question",
    "quick",
    "read",
    "real",
    "really",
    "right",
    "river",
    "road",
    "room",
    "run",
    "said",
    "same",
    "saw",
    "say",
    "school",
    "sea",
    "second",
    "see",
    "seem",
    "sentence",
    "set",
    "she",
    "should",
    "show",
    "side",
    "small",
    "so",
    "some",
    "something",
    "sometimes",
    "song",
    "soon",
    "sound",
    "spell",
    "stand",
    "start",
    "state",
    "still",
    "stop",
    "story",
    "study",
    "such",
    "sun",
    "take",
    "talk",
    "tell",
    "than",
    "that",
    "the",
    "their",
    "them",
    "then",
    "there",
    "these",
    "they",
    "thing",
    "think",
    "this",
    "those",
    "thought",
    "three",
    "through",
    "time",
    "to",
    "together",
    "too",
    "took",
    "tree",
    "try",
    "turn",
    "two",
    "under",
    "until",
    "up",
    "us",
    "use",
    "very",
    "walk",
    "want",
    "was",
    "watch",
    "water",
    "way",
    "we",
    "well",
    "went",
    "were",
    "what",
    "when",
    "where",
    "which",
    "while",
    "white",
    "who",
    "why",
    "will",
    "with",
    "without",
    "word",
    "work",
    "world",
    "would",
    "write",
    "year",
    "you",
    "young",
    "your",
];

/// Words and dominant style recovered from a token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockTranscript {
    pub words: Vec<String>,
    pub style: Style,
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
    lexicon: Vec<String>,
    code_of: HashMap<String, u16>,
    word_of: Vec<Option<usize>>,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self::with_lexicon(seed, MOCK_LEXICON.iter().map(|w| w.to_string()).collect())
    }

    /// Panics if the lexicon has more than 1024 entries or duplicates.
    pub fn with_lexicon(seed: u64, lexicon: Vec<String>) -> Self {
        assert!(lexicon.len() <= CODE_SPACE, "mock lexicon holds at most {CODE_SPACE} words");
        let mut codes: Vec<u16> = (0..CODE_SPACE as u16).collect();
        codes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut code_of = HashMap::with_capacity(lexicon.len());
        let mut word_of = vec![None; CODE_SPACE];
        for (i, w) in lexicon.iter().enumerate() {
            let prev = code_of.insert(w.clone(), codes[i]);
            assert!(prev.is_none(), "duplicate lexicon word {w:?}");
            word_of[codes[i] as usize] = Some(i);
        }
        MockBackend { seed, lexicon, code_of, word_of }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn lexicon(&self) -> &[String] {
        &self.lexicon
    }

    /// Tokens for a clip: 50 per second, words spread uniformly.
    pub fn tokenize_clip(&self, clip: &Clip) -> Result<Vec<SemanticToken>, BackendError> {
        if !(clip.duration_s.is_finite() && clip.duration_s > 0.0) {
            return Err(BackendError::Domain(format!("utterance duration must be positive, got {}", clip.duration_s)));
        }
        let n = (clip.duration_s * TOKENS_PER_SECOND).round() as usize;
        let w = clip.words.len();
        if n == 0 || w > n {
            return Err(BackendError::Domain(format!("{w} words do not fit in {n} token slots")));
        }
        let mut tokens = Vec::with_capacity(n);
        if w == 0 {
            // Silence: an unassigned code keeps the slot empty after decoding.
            let silent = self.silent_code();
            tokens.resize(n, self.token(silent, 0, clip.style));
            return Ok(tokens);
        }
        for (j, word) in clip.words.iter().enumerate() {
            let code = *self
                .code_of
                .get(word)
                .ok_or_else(|| BackendError::Domain(format!("word {word:?} is not in the mock lexicon")))?;
            let slot = (j + 1) * n / w - j * n / w;
            tokens.extend(std::iter::repeat_n(self.token(code, j, clip.style), slot));
        }
        Ok(tokens)
    }

    fn token(&self, code: u16, word_index: usize, style: Style) -> SemanticToken {
        let v = (code << 3) | (((word_index & 1) as u16) << 2) | u16::from(style.index());
        SemanticToken::new(v).expect("13-bit layout")
    }

    fn silent_code(&self) -> u16 {
        self.word_of.iter().position(Option::is_none).unwrap_or(0) as u16
    }

    /// Groups runs of equal (code, parity) into words; style is the majority
    /// over all tokens (ties go to the lower class index).
    pub fn transcribe(&self, tokens: &[SemanticToken]) -> MockTranscript {
        let mut words = Vec::new();
        let mut votes = [0usize; 4];
        let mut prev: Option<u16> = None;
        for t in tokens {
            let v = t.value();
            votes[(v & 3) as usize] += 1;
            let key = v >> 2;
            if prev != Some(key) {
                prev = Some(key);
                let code = (key >> 1) as usize;
                match self.word_of[code] {
                    Some(i) => words.push(self.lexicon[i].clone()),
                    None if code as u16 == self.silent_code() => {}
                    None => words.push("<unk>".to_string()),
                }
            }
        }
        let best = (0..4).max_by_key(|&i| (votes[i], std::cmp::Reverse(i))).unwrap_or(0);
        MockTranscript { words, style: Style::from_index(best as u8) }
    }

    fn fingerprint(&self, speaker: &str) -> u64 {
        stable_hash(&[b"speaker", &self.seed.to_be_bytes(), speaker.as_bytes()])
    }

    fn clip<'a>(&self, audio: &'a AudioHandle, op: &str) -> Result<&'a Clip, BackendError> {
        match audio {
            AudioHandle::Clip(c) => Ok(c),
            AudioHandle::File(p) => {
                Err(BackendError::Unsupported(format!("mock {op} needs a labeled clip, got file {}", p.display())))
            }
        }
    }
}

impl Backend for MockBackend {
    fn tokenize(&self, audio: &AudioHandle) -> Result<Vec<SemanticToken>, BackendError> {
        self.tokenize_clip(self.clip(audio, "tokenize")?)
    }

    fn extract_embedding(&self, audio: &AudioHandle) -> Result<Vec<f64>, BackendError> {
        let clip = self.clip(audio, "extract_embedding")?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.fingerprint(&clip.speaker));
        Ok((0..EMBED_DIM).map(|_| rng.gen_range(-1.0..=1.0)).collect())
    }

    fn codec_encode(&self, audio: &AudioHandle, codec: CodecId) -> Result<Vec<u8>, BackendError> {
        let clip = self.clip(audio, "codec_encode")?;
        let nominal =
            codec.nominal_bps().ok_or_else(|| BackendError::Domain(format!("unknown codec id {}", codec.0)))?;
        let len = (clip.duration_s * f64::from(nominal) / 8.0).round() as usize;
        let fp = self.fingerprint(&clip.speaker);
        let mut bytes: Vec<u8> = fp.to_be_bytes().into_iter().take(len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(fp ^ 0x5eed);
        bytes.extend((bytes.len()..len).map(|_| rng.gen::<u8>()));
        Ok(bytes)
    }

    fn codec_decode(&self, bytes: &[u8], codec: CodecId) -> Result<AudioHandle, BackendError> {
        let nominal =
            codec.nominal_bps().ok_or_else(|| BackendError::Domain(format!("unknown codec id {}", codec.0)))?;
        if bytes.is_empty() {
            return Err(BackendError::Domain("empty codec stream".into()));
        }
        let id: String = bytes.iter().take(8).map(|b| format!("{b:02x}")).collect();
        Ok(AudioHandle::Clip(Clip {
            speaker: format!("codec:{id}"),
            words: Vec::new(),
            style: Style::Neutral,
            duration_s: bytes.len() as f64 * 8.0 / f64::from(nominal),
        }))
    }

    fn timbre_from_audio(&self, audio: &AudioHandle) -> Result<TimbreRef, BackendError> {
        let clip = self.clip(audio, "timbre_from_audio")?;
        Ok(TimbreRef(format!("audio:{}", clip.speaker)))
    }

    fn timbre_from_embedding(&self, embedding: &[f64]) -> Result<TimbreRef, BackendError> {
        let q = quantize_embedding(embedding).map_err(|e| BackendError::Domain(e.to_string()))?;
        Ok(TimbreRef(format!("embed:{:016x}", stable_hash(&[q.codes()]))))
    }

    fn synthesize(&self, tokens: &[SemanticToken], timbre: &TimbreRef) -> Result<AudioHandle, BackendError> {
        let t = self.transcribe(tokens);
        Ok(AudioHandle::Clip(Clip {
            speaker: timbre.0.clone(),
            words: t.words,
            style: t.style,
            duration_s: tokens.len() as f64 / TOKENS_PER_SECOND,
        }))
    }
}
