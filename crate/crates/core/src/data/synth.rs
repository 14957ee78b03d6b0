//! Seeded two-language synthetic speech.
//!
//! Both pseudo-languages draw on one inventory of 20 acoustic symbols, each
//! an 80 ms tone or chirp. A word is a short symbol sequence and is spelled
//! with one letter per symbol (`a` for symbol 0, `b` for symbol 1, ...), so
//! transcripts are plain lowercase strings. The two lexicons and intent
//! grammars are disjoint; only the acoustics are shared.
//!
//! Language A is the rich-resource side: 40 words, 8 intents, each intent
//! expressed by one of two word pairs. Language B is the low-resource side:
//! 16 words, where the intent is the (action, object) pair spoken, with 4
//! actions, 2 objects and 10 filler words.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::path::Path;

use super::manifest::{write_manifest, ManifestEntry, Source};
use crate::error::{Error, Result};
use crate::features::{write_wav, Waveform};
use crate::models::{joint_intent, IntentLabelSet, Vocabulary};
use crate::rng::SeededRng;

pub const SYMBOL_COUNT: usize = 20;
pub const SAMPLE_RATE: u32 = 16_000;
/// 80 ms.
pub const SEGMENT_SAMPLES: usize = 1280;
pub const TEMPLATE_AMPLITUDE: f64 = 0.5;
const FADE_SAMPLES: usize = 80;

const LEXICON_SEED_A: u64 = 0xA11CE;
const LEXICON_SEED_B: u64 = 0xB0B;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Language {
    A,
    B,
}

impl Language {
    pub fn tag(self) -> &'static str {
        match self {
            Self::A => "a",
            Self::B => "b",
        }
    }
}

/// Template for symbol `i`. Centre frequencies are log-spaced over
/// 300–5000 Hz; the shape cycles through steady tone, rising chirp, falling
/// chirp and tone-plus-octave.
pub fn symbol_template(i: usize) -> Vec<f32> {
    let ratio = (5000.0f64 / 300.0).powf(i as f64 / (SYMBOL_COUNT - 1) as f64);
    let c = 300.0 * ratio;
    let sr = SAMPLE_RATE as f64;
    let dur = SEGMENT_SAMPLES as f64 / sr;
    (0..SEGMENT_SAMPLES)
        .map(|n| {
            let t = n as f64 / sr;
            let chirp = |f0: f64, f1: f64| (2.0 * PI * (f0 * t + (f1 - f0) * t * t / (2.0 * dur))).sin();
            let s = match i % 4 {
                0 => (2.0 * PI * c * t).sin(),
                1 => chirp(0.85 * c, 1.15 * c),
                2 => chirp(1.15 * c, 0.85 * c),
                _ => ((2.0 * PI * c * t).sin() + 0.5 * (4.0 * PI * c * t).sin()) / 1.5,
            };
            let edge = n.min(SEGMENT_SAMPLES - 1 - n);
            let fade = if edge < FADE_SAMPLES {
                0.5 - 0.5 * (PI * edge as f64 / FADE_SAMPLES as f64).cos()
            } else {
                1.0
            };
            (TEMPLATE_AMPLITUDE * s * fade) as f32
        })
        .collect()
}

pub fn symbol_inventory() -> Vec<Vec<f32>> {
    (0..SYMBOL_COUNT).map(symbol_template).collect()
}

pub fn spell(symbols: &[usize]) -> String {
    symbols.iter().map(|&s| (b'a' + s as u8) as char).collect()
}

/// Character vocabulary covering every synthetic transcript: the 20 symbol
/// letters and the word separator.
pub fn synthetic_vocabulary() -> Vocabulary {
    let mut symbols: Vec<String> = (0..SYMBOL_COUNT).map(|s| spell(&[s])).collect();
    symbols.push(" ".into());
    Vocabulary::new(symbols).expect("distinct symbols")
}

/// One intent and the words that express it: one alternative is chosen
/// per slot, in slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentTemplate {
    pub intent: String,
    pub slots: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTaskSpec {
    pub language: Language,
    /// Per-symbol waveforms, all of equal length.
    pub inventory: Vec<Vec<f32>>,
    pub lexicon: BTreeMap<String, Vec<usize>>,
    pub grammar: Vec<IntentTemplate>,
    /// Words that may be inserted anywhere without changing the intent.
    pub fillers: Vec<String>,
    pub max_fillers: usize,
    /// Silence inserted after every word.
    pub word_gap: usize,
    /// Leading silence is drawn uniformly from `0..max_lead`.
    pub max_lead: usize,
    /// Noise standard deviation relative to the template amplitude.
    pub noise_level: f64,
    pub seed: u64,
}

fn random_words(rng: &mut SeededRng, n: usize, taken: &BTreeSet<Vec<usize>>, len: (usize, usize)) -> Vec<Vec<usize>> {
    let all: Vec<usize> = (0..SYMBOL_COUNT).collect();
    words_over(rng, &all, n, taken, len)
}

/// `n` distinct words over `alphabet` with no symbol repeated back to back.
fn words_over(
    rng: &mut SeededRng,
    alphabet: &[usize],
    n: usize,
    taken: &BTreeSet<Vec<usize>>,
    len: (usize, usize),
) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::with_capacity(n);
    while out.len() < n {
        let l = len.0 + rng.below(len.1 - len.0 + 1);
        let mut w: Vec<usize> = Vec::with_capacity(l);
        while w.len() < l {
            let s = alphabet[rng.below(alphabet.len())];
            if w.last() != Some(&s) {
                w.push(s);
            }
        }
        if !taken.contains(&w) && !out.contains(&w) {
            out.push(w);
        }
    }
    out
}

fn lexicon_a_words() -> Vec<Vec<usize>> {
    random_words(&mut SeededRng::new(LEXICON_SEED_A), 40, &BTreeSet::new(), (2, 4))
}

impl SyntheticTaskSpec {
    /// Rich-resource language: 8 intents × 2 phrasings × 2 words, plus 8
    /// fillers.
    pub fn language_a(noise_level: f64, seed: u64) -> Self {
        let words: Vec<String> = lexicon_a_words().iter().map(|w| spell(w)).collect();
        let grammar = (0..8)
            .map(|k| IntentTemplate {
                intent: format!("task{k}"),
                slots: vec![
                    vec![words[4 * k].clone(), words[4 * k + 1].clone()],
                    vec![words[4 * k + 2].clone(), words[4 * k + 3].clone()],
                ],
            })
            .collect();
        Self::assemble(Language::A, &words, grammar, words[32..].to_vec(), 2, noise_level, seed)
    }

    /// Low-resource language: intent = (action, object) with 4 action
    /// words, 2 object words and 10 fillers, disjoint from language A.
    pub fn language_b(noise_level: f64, seed: u64) -> Self {
        let taken: BTreeSet<Vec<usize>> = lexicon_a_words().into_iter().collect();
        let mut rng = SeededRng::new(LEXICON_SEED_B);
        let (keys, fillers) = loop {
            let mut symbols: Vec<usize> = (0..SYMBOL_COUNT).collect();
            rng.shuffle(&mut symbols);
            let mut keys: Vec<Vec<usize>> = symbols[..12].chunks(3).map(<[usize]>::to_vec).collect();
            keys.extend(symbols[12..16].chunks(2).map(<[usize]>::to_vec));
            if keys.iter().any(|k| taken.contains(k)) {
                continue;
            }
            let fillers = words_over(&mut rng, &symbols[16..], 10, &taken, (2, 3));
            break (keys, fillers);
        };
        let words: Vec<String> = keys.iter().chain(&fillers).map(|w| spell(w)).collect();
        let mut grammar = Vec::new();
        for a in 0..4 {
            for o in 0..2 {
                grammar.push(IntentTemplate {
                    intent: joint_intent(&format!("act{a}"), &format!("obj{o}"), "none"),
                    slots: vec![vec![words[a].clone()], vec![words[4 + o].clone()]],
                });
            }
        }
        Self::assemble(Language::B, &words, grammar, words[6..].to_vec(), 3, noise_level, seed)
    }

    fn assemble(
        language: Language,
        words: &[String],
        grammar: Vec<IntentTemplate>,
        fillers: Vec<String>,
        max_fillers: usize,
        noise_level: f64,
        seed: u64,
    ) -> Self {
        let lexicon = words
            .iter()
            .map(|w| (w.clone(), w.bytes().map(|b| (b - b'a') as usize).collect()))
            .collect();
        Self {
            language,
            inventory: symbol_inventory(),
            lexicon,
            grammar,
            fillers,
            max_fillers,
            word_gap: 0,
            max_lead: SEGMENT_SAMPLES,
            noise_level,
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.lexicon.is_empty() {
            return bad("empty lexicon".into());
        }
        if self.grammar.is_empty() {
            return bad("empty intent grammar".into());
        }
        let seg = self.inventory.first().map_or(0, Vec::len);
        if seg == 0 || self.inventory.iter().any(|t| t.len() != seg) {
            return bad("inventory templates must be nonempty and of equal length".into());
        }
        for (w, syms) in &self.lexicon {
            if syms.is_empty() || syms.iter().any(|&s| s >= self.inventory.len()) {
                return bad(format!("word `{w}` has an invalid symbol sequence"));
            }
        }
        let words = self
            .grammar
            .iter()
            .flat_map(|g| g.slots.iter().flatten())
            .chain(&self.fillers);
        for w in words {
            if !self.lexicon.contains_key(w) {
                return bad(format!("word `{w}` is not in the lexicon"));
            }
        }
        if self
            .grammar
            .iter()
            .any(|g| g.slots.is_empty() || g.slots.iter().any(Vec::is_empty))
        {
            return bad("every intent needs at least one word per slot".into());
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return bad(format!("noise level {}", self.noise_level));
        }
        Ok(())
    }

    /// Intent names in grammar order.
    pub fn intent_labels(&self) -> Result<IntentLabelSet> {
        IntentLabelSet::new(self.grammar.iter().map(|g| g.intent.clone()).collect())
    }

    /// Word sequence for utterance `u`; intents cycle through the grammar.
    fn sample_words(&self, u: usize, rng: &mut SeededRng) -> (usize, Vec<String>) {
        let g = u % self.grammar.len();
        let mut words: Vec<String> = self.grammar[g]
            .slots
            .iter()
            .map(|alts| alts[rng.below(alts.len())].clone())
            .collect();
        if !self.fillers.is_empty() {
            for _ in 0..rng.below(self.max_fillers + 1) {
                let f = self.fillers[rng.below(self.fillers.len())].clone();
                let at = rng.below(words.len() + 1);
                words.insert(at, f);
            }
        }
        (g, words)
    }
}

/// Position of one symbol occurrence in a generated waveform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub symbol: usize,
    pub start: usize,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub waveforms: Vec<Waveform>,
    /// Entries point at `<id>.wav`, relative to wherever the corpus is written.
    pub entries: Vec<ManifestEntry>,
    pub alignments: Vec<Vec<Segment>>,
}

impl SyntheticCorpus {
    /// Write `<id>.wav` files and `manifest.jsonl` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<ManifestEntry>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.entries.len());
        for (w, e) in self.waveforms.iter().zip(&self.entries) {
            let path = dir.join(format!("{}.wav", e.id));
            write_wav(&path, w)?;
            entries.push(ManifestEntry {
                source: Source::Audio(path),
                ..e.clone()
            });
        }
        write_manifest(&dir.join("manifest.jsonl"), &entries)?;
        Ok(entries)
    }
}

/// Generate `n` utterances. A pure function of `(spec, n)`; the spec's seed
/// drives word choice, timing, gain and noise.
pub fn synth_generate(spec: &SyntheticTaskSpec, n: usize) -> Result<SyntheticCorpus> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("synthetic corpus size must be at least 1".into()));
    }
    let mut rng = SeededRng::derived(spec.seed, &format!("synth-{}", spec.language.tag()));
    let noise_std = spec.noise_level * TEMPLATE_AMPLITUDE;
    let mut out = SyntheticCorpus {
        waveforms: Vec::with_capacity(n),
        entries: Vec::with_capacity(n),
        alignments: Vec::with_capacity(n),
    };
    for u in 0..n {
        let (g, words) = spec.sample_words(u, &mut rng);
        let gain = rng.uniform(0.7, 1.0) as f32;
        let mut samples = vec![0.0f32; rng.below(spec.max_lead.max(1))];
        let mut segments = Vec::new();
        for w in &words {
            for &s in &spec.lexicon[w] {
                segments.push(Segment {
                    symbol: s,
                    start: samples.len(),
                });
                samples.extend(spec.inventory[s].iter().map(|&v| v * gain));
            }
            samples.extend(std::iter::repeat_n(0.0, spec.word_gap));
        }
        if noise_std > 0.0 {
            for v in &mut samples {
                *v += rng.normal(0.0, noise_std) as f32;
            }
        }
        let id = format!("{}{}-{u:05}", spec.language.tag(), spec.seed);
        out.entries.push(ManifestEntry {
            source: Source::Audio(format!("{id}.wav").into()),
            id,
            text: words.join(" "),
            intent: spec.grammar[g].intent.clone(),
        });
        out.waveforms.push(Waveform::new(samples, SAMPLE_RATE)?);
        out.alignments.push(segments);
    }
    Ok(out)
}

/// Transcripts only, from a stream independent of [`synth_generate`]'s.
pub fn synth_transcripts(spec: &SyntheticTaskSpec, n: usize) -> Result<Vec<String>> {
    spec.validate()?;
    let mut rng = SeededRng::derived(spec.seed, &format!("text-{}", spec.language.tag()));
    Ok((0..n).map(|u| spec.sample_words(u, &mut rng).1.join(" ")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicon_sizes_and_disjointness() {
        let a = SyntheticTaskSpec::language_a(0.1, 1);
        let b = SyntheticTaskSpec::language_b(0.1, 1);
        assert_eq!(a.lexicon.len(), 40);
        assert_eq!(b.lexicon.len(), 16);
        assert_eq!(a.grammar.len(), 8);
        assert_eq!(b.grammar.len(), 8);
        assert!(a.lexicon.keys().all(|w| !b.lexicon.contains_key(w)));
        assert!(a
            .intent_labels()
            .unwrap()
            .names()
            .iter()
            .all(|n| b.intent_labels().unwrap().id(n).is_none()));
        a.validate().unwrap();
        b.validate().unwrap();
    }

    #[test]
    fn lexicons_do_not_depend_on_the_sampling_seed() {
        assert_eq!(
            SyntheticTaskSpec::language_b(0.1, 1).lexicon,
            SyntheticTaskSpec::language_b(0.3, 9).lexicon
        );
    }

    #[test]
    fn empty_lexicon_is_a_config_error() {
        let mut s = SyntheticTaskSpec::language_a(0.1, 1);
        s.lexicon.clear();
        assert!(matches!(synth_generate(&s, 3), Err(Error::Config(_))));
    }

    #[test]
    fn transcripts_tokenize_and_intents_cycle() {
        let s = SyntheticTaskSpec::language_b(0.0, 3);
        let c = synth_generate(&s, 16).unwrap();
        let vocab = synthetic_vocabulary();
        let labels = s.intent_labels().unwrap();
        for (u, e) in c.entries.iter().enumerate() {
            vocab.encode(&e.text).unwrap();
            assert_eq!(labels.id(&e.intent), Some(u % 8));
        }
    }
}
