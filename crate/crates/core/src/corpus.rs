//! Tokenization, vocabulary construction, and caption/labeled-pair files.
//!
//! Two JSONL schemas are defined here:
//!
//! * clean captions: `{"id": string, "caption": string}`
//! * labeled pairs:  `{"source_id": string, "tokens": [string],
//!   "labels": [0|1], "rule": string|null}`
//!
//! A label of 1 keeps a token, 0 marks it for deletion; filtering a pair's
//! tokens by `label == 1` must recover the clean sentence it came from.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Reserved padding token, always index 0.
pub const PAD_TOKEN: &str = "<pad>";
/// Reserved unknown token, always index 1.
pub const UNK_TOKEN: &str = "<unk>";

/// Index of [`PAD_TOKEN`] in every vocabulary.
pub const PAD_INDEX: usize = 0;
/// Index of [`UNK_TOKEN`] in every vocabulary.
pub const UNK_INDEX: usize = 1;

/// A clean caption: a unique id and its lowercase tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caption {
    pub id: String,
    pub tokens: Vec<String>,
}

impl Caption {
    /// Tokenizes `raw` and wraps it as a caption. Fails if nothing survives
    /// tokenization.
    pub fn from_raw(id: impl Into<String>, raw: &str) -> Result<Self> {
        let id = id.into();
        let tokens = tokenize(raw);
        if tokens.is_empty() {
            return Err(Error::EmptyCaption { id });
        }
        Ok(Caption { id, tokens })
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Which corruption rule produced a labeled pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    VerbRepetition,
    AdverbRepetition,
    PartialRepetition,
    SentenceRepetition,
    ExtraTails,
}

/// All rule kinds, in the order corruptions are attempted.
pub const ALL_RULES: [RuleKind; 5] = [
    RuleKind::VerbRepetition,
    RuleKind::AdverbRepetition,
    RuleKind::PartialRepetition,
    RuleKind::SentenceRepetition,
    RuleKind::ExtraTails,
];

impl RuleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleKind::VerbRepetition => "verb-repetition",
            RuleKind::AdverbRepetition => "adverb-repetition",
            RuleKind::PartialRepetition => "partial-repetition",
            RuleKind::SentenceRepetition => "sentence-repetition",
            RuleKind::ExtraTails => "extra-tails",
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RuleKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "verb-repetition" => Ok(RuleKind::VerbRepetition),
            "adverb-repetition" => Ok(RuleKind::AdverbRepetition),
            "partial-repetition" => Ok(RuleKind::PartialRepetition),
            "sentence-repetition" => Ok(RuleKind::SentenceRepetition),
            "extra-tails" => Ok(RuleKind::ExtraTails),
            other => Err(format!("unknown rule kind {other:?}")),
        }
    }
}

/// A token sequence paired with keep(1)/delete(0) labels.
///
/// `rule` is `None` for clean-clean pairs (labels all ones).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledCaption {
    pub source_id: String,
    pub tokens: Vec<String>,
    pub labels: Vec<u8>,
    pub rule: Option<RuleKind>,
}

impl LabeledCaption {
    /// The tokens that survive the deletion mask.
    pub fn kept_tokens(&self) -> Vec<String> {
        self.tokens
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == 1)
            .map(|(t, _)| t.clone())
            .collect()
    }

    pub fn is_clean(&self) -> bool {
        self.labels.iter().all(|&l| l == 1)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.tokens.is_empty() {
            return Err("tokens must be nonempty".into());
        }
        if self.tokens.len() != self.labels.len() {
            return Err(format!(
                "{} tokens vs {} labels",
                self.tokens.len(),
                self.labels.len()
            ));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l > 1) {
            return Err(format!("label {bad} is not 0 or 1"));
        }
        Ok(())
    }
}

/// Lowercases, strips punctuation, and splits on whitespace runs.
///
/// Anything that is neither alphanumeric nor whitespace is dropped, so
/// `"The audience laughed, and applauded."` becomes
/// `[the, audience, laughed, and, applauded]`. Whitespace-only input yields
/// an empty sequence.
pub fn tokenize(raw: &str) -> Vec<String> {
    let cleaned: String = raw
        .chars()
        .flat_map(|c| c.to_lowercase())
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// Bidirectional token/index map with reserved `<pad>` and `<unk>` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_index: HashMap<String, usize>,
    index_to_token: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary over `corpus`, keeping tokens whose frequency is
    /// at least `min_count`.
    ///
    /// Index order is deterministic: specials first, then tokens by
    /// descending frequency with lexicographic tie-breaking.
    pub fn build<'a, I>(corpus: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for tokens in corpus {
            for tok in tokens {
                *freq.entry(tok).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = freq
            .into_iter()
            .filter(|&(_, n)| n >= min_count.max(1))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut index_to_token = Vec::with_capacity(ranked.len() + 2);
        index_to_token.push(PAD_TOKEN.to_owned());
        index_to_token.push(UNK_TOKEN.to_owned());
        index_to_token.extend(ranked.into_iter().map(|(t, _)| t.to_owned()));

        Self::from_tokens(index_to_token)
    }

    /// Rebuilds a vocabulary from an already-ordered token list (e.g. a
    /// checkpoint). The first two entries must be the reserved specials.
    pub fn from_tokens(index_to_token: Vec<String>) -> Self {
        debug_assert!(index_to_token.len() >= 2);
        debug_assert_eq!(index_to_token[PAD_INDEX], PAD_TOKEN);
        debug_assert_eq!(index_to_token[UNK_INDEX], UNK_TOKEN);
        let token_to_index = index_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            token_to_index,
            index_to_token,
        }
    }

    pub fn len(&self) -> usize {
        self.index_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // specials are always present
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_index.contains_key(token)
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.token_to_index.get(token).copied().unwrap_or(UNK_INDEX)
    }

    /// Tokens in index order; the exact serialization order for checkpoints.
    pub fn tokens(&self) -> &[String] {
        &self.index_to_token
    }

    /// Maps tokens to indices; unknown tokens map to [`UNK_INDEX`].
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.index_of(t)).collect()
    }

    /// Maps indices back to tokens; fails on out-of-range indices.
    pub fn decode(&self, indices: &[usize]) -> Result<Vec<String>> {
        indices
            .iter()
            .map(|&i| {
                self.index_to_token
                    .get(i)
                    .cloned()
                    .ok_or(Error::IndexOutOfRange {
                        index: i,
                        size: self.index_to_token.len(),
                    })
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct CaptionRecord {
    id: String,
    caption: String,
}

#[derive(Serialize, Deserialize)]
struct LabeledRecord {
    source_id: String,
    tokens: Vec<String>,
    labels: Vec<u8>,
    rule: Option<String>,
}

/// Reads a clean-caption JSONL file, preserving record order.
pub fn load_captions(path: impl AsRef<Path>) -> Result<Vec<Caption>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut captions = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CaptionRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                path: path.into(),
                line: lineno,
                message: e.to_string(),
            })?;
        if seen.insert(rec.id.clone(), lineno).is_some() {
            return Err(Error::DuplicateId {
                path: path.into(),
                line: lineno,
                id: rec.id,
            });
        }
        captions.push(Caption::from_raw(rec.id, &rec.caption)?);
    }
    Ok(captions)
}

/// Writes `(id, caption text)` records as clean-caption JSONL.
pub fn save_captions<'a, I>(path: impl AsRef<Path>, records: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, String)>,
{
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (id, caption) in records {
        let rec = CaptionRecord {
            id: id.to_owned(),
            caption,
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes labeled pairs as JSONL, one record per line, in order.
pub fn save_labeled(path: impl AsRef<Path>, pairs: &[LabeledCaption]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for pair in pairs {
        let rec = LabeledRecord {
            source_id: pair.source_id.clone(),
            tokens: pair.tokens.clone(),
            labels: pair.labels.clone(),
            rule: pair.rule.map(|r| r.as_str().to_owned()),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a labeled-pair JSONL file written by [`save_labeled`].
pub fn load_labeled(path: impl AsRef<Path>) -> Result<Vec<LabeledCaption>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedLine {
            path: path.into(),
            line: lineno,
            message,
        };
        let rec: LabeledRecord =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let rule = match rec.rule {
            None => None,
            Some(name) => Some(name.parse::<RuleKind>().map_err(malformed)?),
        };
        let pair = LabeledCaption {
            source_id: rec.source_id,
            tokens: rec.tokens,
            labels: rec.labels,
            rule,
        };
        pair.validate().map_err(malformed)?;
        pairs.push(pair);
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_lowercases_and_splits() {
        assert_eq!(tokenize("A baby is crying"), ["a", "baby", "is", "crying"]);
    }

    #[test]
    fn tokenize_empty_input() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("  \t \n").is_empty());
    }

    #[test]
    fn tokenize_strips_punctuation() {
        assert_eq!(
            tokenize("The audience laughed, and applauded."),
            ["the", "audience", "laughed", "and", "applauded"]
        );
    }

    #[test]
    fn vocab_orders_by_frequency_then_lexicographic() {
        let corpus: Vec<Vec<String>> = vec![
            tokenize("a dog"),
            tokenize("a cat"),
        ];
        let v = Vocabulary::build(corpus.iter().map(|t| t.as_slice()), 1);
        assert_eq!(v.len(), 5);
        assert_eq!(v.index_of("a"), 2); // freq 2 beats freq 1
        assert_eq!(v.index_of("cat"), 3); // "cat" < "dog"
        assert_eq!(v.index_of("dog"), 4);
    }

    #[test]
    fn vocab_min_count_filters() {
        let corpus: Vec<Vec<String>> = vec![tokenize("a dog"), tokenize("a cat")];
        let v = Vocabulary::build(corpus.iter().map(|t| t.as_slice()), 2);
        assert_eq!(v.len(), 3);
        assert!(v.contains("a"));
        assert!(!v.contains("dog"));
    }

    #[test]
    fn vocab_specials_are_fixed() {
        let corpus: Vec<Vec<String>> = vec![tokenize("a dog")];
        let v = Vocabulary::build(corpus.iter().map(|t| t.as_slice()), 1);
        assert_eq!(v.index_of(PAD_TOKEN), PAD_INDEX);
        assert_eq!(v.index_of(UNK_TOKEN), UNK_INDEX);
        assert_eq!(v.tokens()[0], PAD_TOKEN);
        assert_eq!(v.tokens()[1], UNK_TOKEN);
    }

    #[test]
    fn encode_decode_round_trip_and_unk() {
        let corpus: Vec<Vec<String>> = vec![tokenize("a dog")];
        let v = Vocabulary::build(corpus.iter().map(|t| t.as_slice()), 1);
        let toks = tokenize("a dog");
        let ids = v.encode(&toks);
        assert_eq!(v.decode(&ids).unwrap(), toks);
        assert_eq!(v.encode(&tokenize("zyzzyva")), [UNK_INDEX]);
        assert!(v.decode(&[v.len()]).is_err());
    }

    #[test]
    fn load_captions_single_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("caps.jsonl");
        std::fs::write(&path, "{\"id\":\"c1\",\"caption\":\"A baby is crying\"}\n").unwrap();
        let caps = load_captions(&path).unwrap();
        assert_eq!(caps.len(), 1);
        assert_eq!(caps[0].id, "c1");
        assert_eq!(caps[0].tokens, ["a", "baby", "is", "crying"]);
    }

    #[test]
    fn load_captions_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("caps.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_captions(&path).unwrap().is_empty());
    }

    #[test]
    fn load_captions_reports_malformed_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("caps.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"c1\",\"caption\":\"a dog\"}\nnot json\n",
        )
        .unwrap();
        match load_captions(&path) {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed-line error, got {other:?}"),
        }
    }

    #[test]
    fn load_captions_rejects_duplicate_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("caps.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"c1\",\"caption\":\"a dog\"}\n{\"id\":\"c1\",\"caption\":\"a cat\"}\n",
        )
        .unwrap();
        match load_captions(&path) {
            Err(Error::DuplicateId { id, line, .. }) => {
                assert_eq!(id, "c1");
                assert_eq!(line, 2);
            }
            other => panic!("expected duplicate-id error, got {other:?}"),
        }
    }

    #[test]
    fn labeled_round_trip_preserves_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        let pairs: Vec<LabeledCaption> = (0..100)
            .map(|i| LabeledCaption {
                source_id: format!("s{i}"),
                tokens: vec!["a".into(), "dog".into(), "and".into(), "dog".into()],
                labels: vec![1, 1, 0, 0],
                rule: Some(ALL_RULES[i % 5]),
            })
            .collect();
        save_labeled(&path, &pairs).unwrap();
        assert_eq!(load_labeled(&path).unwrap(), pairs);
    }

    #[test]
    fn load_labeled_rejects_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        std::fs::write(
            &path,
            "{\"source_id\":\"s\",\"tokens\":[\"a\",\"dog\"],\"labels\":[1],\"rule\":null}\n",
        )
        .unwrap();
        assert!(matches!(
            load_labeled(&path),
            Err(Error::MalformedLine { line: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent(raw in "[ a-zA-Z0-9.,!?']{0,60}") {
            let once = tokenize(&raw);
            let again = tokenize(&once.join(" "));
            prop_assert_eq!(once, again);
        }

        #[test]
        fn vocab_indices_are_a_permutation(
            sentences in proptest::collection::vec("[a-z]{1,6}( [a-z]{1,6}){0,5}", 1..20),
            min_count in 1usize..3,
        ) {
            let corpus: Vec<Vec<String>> = sentences.iter().map(|s| tokenize(s)).collect();
            let v = Vocabulary::build(corpus.iter().map(|t| t.as_slice()), min_count);
            let decoded = v.decode(&(0..v.len()).collect::<Vec<_>>()).unwrap();
            for (i, tok) in decoded.iter().enumerate() {
                prop_assert_eq!(v.index_of(tok), i);
            }
        }

        #[test]
        fn labeled_file_round_trips(
            n in 1usize..20,
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pairs: Vec<LabeledCaption> = (0..n).map(|i| {
                let len = rng.gen_range(1..8);
                LabeledCaption {
                    source_id: format!("id{i}"),
                    tokens: (0..len).map(|k| format!("w{k}")).collect(),
                    labels: (0..len).map(|_| rng.gen_range(0..2) as u8).collect(),
                    rule: if rng.gen_bool(0.5) { Some(ALL_RULES[rng.gen_range(0..5)]) } else { None },
                }
            }).collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("pairs.jsonl");
            save_labeled(&path, &pairs).unwrap();
            prop_assert_eq!(load_labeled(&path).unwrap(), pairs);
        }
    }
}
