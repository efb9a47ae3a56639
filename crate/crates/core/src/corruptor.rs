//! Rule-based corruption of clean captions into labeled training pairs.
//!
//! Five rules produce "false-repetition" errors, each inserting one
//! contiguous span into a clean sentence:
//!
//! * verb repetition — repeat a verb after a conjunction ("a baby is
//!   crying *and crying*");
//! * adverb repetition — duplicate an adverb in place ("baby cries loudly
//!   *loudly*");
//! * partial repetition — append a conjunction plus a suffix clause;
//! * sentence repetition — append a conjunction plus the whole sentence;
//! * extra tails — append a dangling function-word tail ("... *and a*").
//!
//! Inserted tokens are labeled 0 (delete), original tokens 1 (keep), so
//! filtering by label recovers the clean sentence exactly.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{Caption, LabeledCaption, RuleKind, ALL_RULES};
use crate::{Error, Result};

const DEFAULT_STOPLIST: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/data/verb_stoplist.txt"));

/// Parameters for the corruption rules.
///
/// The defaults mirror the conjunction and tail inventories used by the
/// shipped presets; the verb stoplist filters common non-verb words that
/// happen to end in a verb suffix (plural nouns, "this", "was", ...).
#[derive(Debug, Clone, Serialize)]
pub struct RuleConfig {
    /// Conjunction phrases drawn when a rule joins a repetition.
    pub conjunctions: Vec<Vec<String>>,
    /// Tail phrases appended by the extra-tails rule.
    pub tails: Vec<Vec<String>>,
    /// Suffixes that mark a token as a verb candidate.
    pub verb_suffixes: Vec<String>,
    /// Tokens never treated as verbs despite a matching suffix.
    pub verb_stoplist: BTreeSet<String>,
    /// Suffix that marks a token as an adverb candidate.
    pub adverb_suffix: String,
    /// Minimum repeated-suffix length for partial repetition.
    pub partial_min_len: usize,
    /// Maximum repeated-suffix length for partial repetition.
    pub partial_max_len: usize,
    /// Clean-clean pairs emitted per clean sentence.
    pub clean_pairs_per_sentence: usize,
}

fn phrases(items: &[&str]) -> Vec<Vec<String>> {
    items
        .iter()
        .map(|p| p.split_whitespace().map(str::to_owned).collect())
        .collect()
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            conjunctions: phrases(&["and", "while", "as", "and then"]),
            tails: phrases(&["and", "and a", "and then", "with a", "in the"]),
            verb_suffixes: vec!["ing".into(), "es".into(), "ed".into(), "s".into()],
            verb_stoplist: parse_stoplist(DEFAULT_STOPLIST),
            adverb_suffix: "ly".into(),
            partial_min_len: 3,
            partial_max_len: 7,
            clean_pairs_per_sentence: 1,
        }
    }
}

fn parse_stoplist(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

impl RuleConfig {
    /// Replaces the verb stoplist with one loaded from a plain-text file,
    /// one token per line (`#` comments allowed).
    pub fn load_stoplist(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.verb_stoplist = parse_stoplist(&text);
        Ok(())
    }

    /// Stable hex fingerprint of the full configuration, recorded in
    /// generation manifests.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("RuleConfig serializes");
        format!("{:016x}", fnv1a64(json.as_bytes()))
    }

    fn validate(&self) -> Result<()> {
        if self.partial_min_len < 2 {
            return Err(Error::Config("partial_min_len must be >= 2".into()));
        }
        if self.partial_max_len < self.partial_min_len {
            return Err(Error::Config(
                "partial_max_len must be >= partial_min_len".into(),
            ));
        }
        for (name, set) in [("conjunctions", &self.conjunctions), ("tails", &self.tails)] {
            if set.is_empty() || set.iter().any(|p| p.is_empty()) {
                return Err(Error::Config(format!("{name} must be nonempty phrases")));
            }
        }
        if self.verb_suffixes.is_empty() {
            return Err(Error::Config("verb_suffixes must be nonempty".into()));
        }
        Ok(())
    }
}

/// Indices of verb candidates: tokens ending in a verb suffix and not in
/// the stoplist. Suffix-only matches ("s" itself) are excluded.
pub fn find_verbs(tokens: &[String], cfg: &RuleConfig) -> Vec<usize> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, tok)| {
            !cfg.verb_stoplist.contains(tok.as_str())
                && cfg
                    .verb_suffixes
                    .iter()
                    .any(|suf| tok.len() > suf.len() && tok.ends_with(suf))
        })
        .map(|(i, _)| i)
        .collect()
}

/// Indices of adverb candidates: tokens ending in the adverb suffix.
pub fn find_adverbs(tokens: &[String], cfg: &RuleConfig) -> Vec<usize> {
    let suf = cfg.adverb_suffix.as_str();
    tokens
        .iter()
        .enumerate()
        .filter(|(_, tok)| tok.len() > suf.len() && tok.ends_with(suf))
        .map(|(i, _)| i)
        .collect()
}

fn pick<'a, T>(rng: &mut impl Rng, items: &'a [T]) -> &'a T {
    &items[rng.gen_range(0..items.len())]
}

/// Builds the corrupted pair: clean tokens with `span` inserted at
/// position `at` (tokens[..at] ++ span ++ tokens[at..]), span labeled 0.
fn insert_span(clean: &Caption, at: usize, span: Vec<String>, rule: RuleKind) -> LabeledCaption {
    let mut tokens = Vec::with_capacity(clean.tokens.len() + span.len());
    let mut labels = Vec::with_capacity(clean.tokens.len() + span.len());
    tokens.extend_from_slice(&clean.tokens[..at]);
    labels.extend(std::iter::repeat(1).take(at));
    labels.extend(std::iter::repeat(0).take(span.len()));
    tokens.extend(span);
    tokens.extend_from_slice(&clean.tokens[at..]);
    labels.extend(std::iter::repeat(1).take(clean.tokens.len() - at));
    LabeledCaption {
        source_id: clean.id.clone(),
        tokens,
        labels,
        rule: Some(rule),
    }
}

/// Applies one corruption rule to a clean caption.
///
/// Returns `None` when the rule is inapplicable: no verb/adverb candidate
/// exists, or the sentence is too short for partial repetition. All
/// randomness (candidate, conjunction, suffix length) comes from `rng`.
pub fn corrupt(
    clean: &Caption,
    rule: RuleKind,
    cfg: &RuleConfig,
    rng: &mut impl Rng,
) -> Option<LabeledCaption> {
    let tokens = &clean.tokens;
    debug_assert!(!tokens.is_empty());
    match rule {
        RuleKind::VerbRepetition => {
            let verbs = find_verbs(tokens, cfg);
            if verbs.is_empty() {
                return None;
            }
            let i = *pick(rng, &verbs);
            let mut span = pick(rng, &cfg.conjunctions).clone();
            span.push(tokens[i].clone());
            Some(insert_span(clean, i + 1, span, rule))
        }
        RuleKind::AdverbRepetition => {
            let adverbs = find_adverbs(tokens, cfg);
            if adverbs.is_empty() {
                return None;
            }
            let i = *pick(rng, &adverbs);
            Some(insert_span(clean, i + 1, vec![tokens[i].clone()], rule))
        }
        RuleKind::PartialRepetition => {
            let max_k = cfg.partial_max_len.min(tokens.len().saturating_sub(1));
            if max_k < cfg.partial_min_len {
                return None;
            }
            let k = rng.gen_range(cfg.partial_min_len..=max_k);
            let mut span = pick(rng, &cfg.conjunctions).clone();
            span.extend_from_slice(&tokens[tokens.len() - k..]);
            Some(insert_span(clean, tokens.len(), span, rule))
        }
        RuleKind::SentenceRepetition => {
            let mut span = pick(rng, &cfg.conjunctions).clone();
            span.extend_from_slice(tokens);
            Some(insert_span(clean, tokens.len(), span, rule))
        }
        RuleKind::ExtraTails => {
            let span = pick(rng, &cfg.tails).clone();
            Some(insert_span(clean, tokens.len(), span, rule))
        }
    }
}

/// Labeled pairs partitioned into train/validation/test.
#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub train: Vec<LabeledCaption>,
    pub validation: Vec<LabeledCaption>,
    pub test: Vec<LabeledCaption>,
    pub split_seed: u64,
}

impl DatasetSplits {
    pub fn total_pairs(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Split {
    Train,
    Validation,
    Test,
}

/// 64-bit FNV-1a; stable across builds, used for split assignment and
/// per-sentence rng streams.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn sentence_rng(seed: u64, id: &str) -> ChaCha8Rng {
    let mut key = seed.to_le_bytes().to_vec();
    key.extend_from_slice(b"/corrupt/");
    key.extend_from_slice(id.as_bytes());
    ChaCha8Rng::seed_from_u64(fnv1a64(&key))
}

/// Assigns each caption id to a split by ranking ids on a seeded hash and
/// cutting at the configured fractions. Counts land within one sentence of
/// the exact ratios, and every pair derived from a sentence follows it.
fn assign_splits(corpus: &[Caption], ratios: (f64, f64, f64), seed: u64) -> Vec<Split> {
    let n = corpus.len();
    let mut ranked: Vec<(u64, usize)> = corpus
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut key = seed.to_le_bytes().to_vec();
            key.extend_from_slice(b"/split/");
            key.extend_from_slice(c.id.as_bytes());
            (fnv1a64(&key), i)
        })
        .collect();
    ranked.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| corpus[a.1].id.cmp(&corpus[b.1].id)));

    let n_train = (ratios.0 * n as f64).round() as usize;
    let n_val = ((ratios.0 + ratios.1) * n as f64).round() as usize - n_train;
    let mut assignment = vec![Split::Test; n];
    for (rank, &(_, idx)) in ranked.iter().enumerate() {
        assignment[idx] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
    }
    assignment
}

/// Generates the parallel dataset: per clean sentence, one corruption
/// attempt per rule (inapplicable rules fall back to sentence repetition,
/// which always applies) plus clean-clean pairs, assigned to splits by a
/// seeded hash of the sentence id. Fully deterministic given
/// `(corpus, cfg, ratios, seed)`.
pub fn generate_dataset(
    corpus: &[Caption],
    cfg: &RuleConfig,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplits> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyInput("caption corpus"));
    }
    if ratios.0 <= 0.0 || ratios.1 <= 0.0 || ratios.2 <= 0.0 {
        return Err(Error::Config("split ratios must be positive".into()));
    }
    if (ratios.0 + ratios.1 + ratios.2 - 1.0).abs() > 1e-9 {
        return Err(Error::Config("split ratios must sum to 1".into()));
    }
    for caption in corpus {
        if caption.tokens.is_empty() {
            return Err(Error::EmptyCaption {
                id: caption.id.clone(),
            });
        }
    }

    let assignment = assign_splits(corpus, ratios, seed);
    let mut splits = DatasetSplits {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        split_seed: seed,
    };

    for (caption, &split) in corpus.iter().zip(&assignment) {
        let mut rng = sentence_rng(seed, &caption.id);
        let out = match split {
            Split::Train => &mut splits.train,
            Split::Validation => &mut splits.validation,
            Split::Test => &mut splits.test,
        };
        for rule in ALL_RULES {
            let pair = corrupt(caption, rule, cfg, &mut rng).unwrap_or_else(|| {
                corrupt(caption, RuleKind::SentenceRepetition, cfg, &mut rng)
                    .expect("sentence repetition always applies")
            });
            out.push(pair);
        }
        for _ in 0..cfg.clean_pairs_per_sentence {
            out.push(LabeledCaption {
                source_id: caption.id.clone(),
                tokens: caption.tokens.clone(),
                labels: vec![1; caption.tokens.len()],
                rule: None,
            });
        }
    }
    Ok(splits)
}
