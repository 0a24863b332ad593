//! Word-level tokenization, the vocabulary file format and the segmented
//! sequence layout shared by training and generation.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const SEP: usize = 4;

const RESERVED: [&str; 5] = ["<pad>", "<unk>", "<bos>", "<eos>", "<sep>"];

/// Instruction placed between the post and the explanation.
pub const DEFAULT_PROMPT: &str =
    "Explain why this post might indicate depression based on medical knowledge:";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("min_freq must be at least 1")]
    MinFreq,
    #[error("max_len {max_len} cannot hold BOS, SEP, the {prompt_len}-token prompt and SEP")]
    Capacity { max_len: usize, prompt_len: usize },
    #[error("vocabulary file line {line}: {reason}")]
    VocabFile { line: usize, reason: String },
    #[error("vocabulary io: {0}")]
    Io(#[from] std::io::Error),
}

/// Lowercases, splits on whitespace and strips every non-alphanumeric
/// character; tokens that end up empty are dropped.
pub fn normalize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Normalized tokens joined by single spaces.
pub fn normalized_text(text: &str) -> String {
    normalize(text).join(" ")
}

/// Bijection between token strings and dense ids. Ids `0..5` are reserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(words: impl IntoIterator<Item = String>) -> Self {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    /// Every normalized token with frequency `>= min_freq`, ordered by
    /// descending frequency and then lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_freq: usize) -> Result<Self, TokenizerError> {
        if min_freq == 0 {
            return Err(TokenizerError::MinFreq);
        }
        if corpus.is_empty() {
            return Err(TokenizerError::EmptyCorpus);
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in corpus {
            for tok in normalize(text.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_tokens(kept.into_iter().map(|(t, _)| t)))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Token ids of `text`; unknown words map to [`UNK`].
    pub fn encode(&self, text: &str) -> Vec<usize> {
        normalize(text)
            .iter()
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect()
    }

    /// Space-joined tokens; PAD, BOS, EOS and SEP are skipped.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS | SEP))
            .map(|&id| self.token(id).unwrap_or(RESERVED[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// File form: one non-reserved token per line, in id order.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens[RESERVED.len()..] {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_file_str(content: &str) -> Result<Self, TokenizerError> {
        let mut seen = HashMap::new();
        let mut words = Vec::new();
        for (i, line) in content.lines().enumerate() {
            let line_no = i + 1;
            let bad = |reason: &str| TokenizerError::VocabFile {
                line: line_no,
                reason: reason.to_string(),
            };
            if line.is_empty() || line.chars().any(char::is_whitespace) {
                return Err(bad("token must be non-empty and contain no whitespace"));
            }
            if RESERVED.contains(&line) {
                return Err(bad("reserved token listed explicitly"));
            }
            if seen.insert(line.to_string(), line_no).is_some() {
                return Err(bad("duplicate token"));
            }
            words.push(line.to_string());
        }
        Ok(Self::from_tokens(words))
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        Self::from_file_str(&fs::read_to_string(path)?)
    }

    /// First 8 bytes of the SHA-256 of the file form, little-endian.
    pub fn fingerprint(&self) -> u64 {
        let digest = Sha256::digest(self.to_file_string().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

/// Which part of the layout a position belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Segment {
    Post,
    Prompt,
    Explanation,
    Special,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentedSequence {
    pub ids: Vec<usize>,
    pub segments: Vec<Segment>,
}

impl SegmentedSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn positions(&self, segment: Segment) -> impl Iterator<Item = usize> + '_ {
        self.segments
            .iter()
            .enumerate()
            .filter(move |(_, s)| **s == segment)
            .map(|(i, _)| i)
    }

    pub fn count(&self, segment: Segment) -> usize {
        self.positions(segment).count()
    }

    /// 1.0 at POST positions, 0.0 elsewhere.
    pub fn post_mask(&self) -> Vec<f64> {
        self.segments
            .iter()
            .map(|s| if *s == Segment::Post { 1.0 } else { 0.0 })
            .collect()
    }

    /// Tokens of one segment, in order.
    pub fn segment_ids(&self, segment: Segment) -> Vec<usize> {
        self.positions(segment).map(|i| self.ids[i]).collect()
    }

    /// Equal lengths, and POST, PROMPT, EXPLANATION blocks appear in that order.
    pub fn is_well_formed(&self) -> bool {
        if self.ids.len() != self.segments.len() {
            return false;
        }
        let rank = |s: Segment| match s {
            Segment::Post => Some(0),
            Segment::Prompt => Some(1),
            Segment::Explanation => Some(2),
            Segment::Special => None,
        };
        let mut last = 0;
        for r in self.segments.iter().filter_map(|s| rank(*s)) {
            if r < last {
                return false;
            }
            last = r;
        }
        true
    }
}

/// Builds `BOS post SEP prompt SEP [explanation EOS]` sequences.
#[derive(Clone, Debug)]
pub struct SequenceBuilder<'v> {
    vocab: &'v Vocabulary,
    prompt_ids: Vec<usize>,
    max_len: usize,
    explanation_reserve: usize,
}

/// Slots kept free for the explanation by [`SequenceBuilder::for_model`].
pub fn default_explanation_reserve(max_len: usize) -> usize {
    3 * max_len / 8
}

impl<'v> SequenceBuilder<'v> {
    pub fn new(vocab: &'v Vocabulary, max_len: usize) -> Result<Self, TokenizerError> {
        Self::with_prompt(vocab, DEFAULT_PROMPT, max_len)
    }

    pub fn with_prompt(vocab: &'v Vocabulary, prompt: &str, max_len: usize) -> Result<Self, TokenizerError> {
        let prompt_ids = vocab.encode(prompt);
        if max_len < prompt_ids.len() + 3 {
            return Err(TokenizerError::Capacity {
                max_len,
                prompt_len: prompt_ids.len(),
            });
        }
        Ok(SequenceBuilder {
            vocab,
            prompt_ids,
            max_len,
            explanation_reserve: 0,
        })
    }

    /// Builder used for model training and inference: posts are capped so that
    /// [`default_explanation_reserve`] slots stay free whether or not an
    /// explanation follows. The visible part of a post then never depends on
    /// its label.
    pub fn for_model(vocab: &'v Vocabulary, max_len: usize) -> Result<Self, TokenizerError> {
        Ok(Self::new(vocab, max_len)?.with_explanation_reserve(default_explanation_reserve(max_len)))
    }

    /// Caps posts at `max_len - 3 - prompt_len - reserve` tokens (at least one).
    pub fn with_explanation_reserve(mut self, reserve: usize) -> Self {
        self.explanation_reserve = reserve;
        self
    }

    /// Most post tokens any layout from this builder keeps.
    pub fn post_cap(&self) -> usize {
        self.room().saturating_sub(self.explanation_reserve).max(1)
    }

    fn room(&self) -> usize {
        self.max_len - self.prompt_ids.len() - 3
    }

    pub fn vocab(&self) -> &Vocabulary {
        self.vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Training layout. The post is trimmed from the right to the post cap and
    /// then until everything fits (keeping at least one post token when the
    /// post is nonempty); only then is the explanation trimmed, always keeping
    /// its EOS.
    pub fn training(&self, post: &str, explanation: Option<&str>) -> SegmentedSequence {
        let expl = explanation.map(|e| self.vocab.encode(e));
        self.layout(self.vocab.encode(post), expl, 0)
    }

    /// Generation prefix ending in the second SEP, with `reserve` slots left
    /// free for decoded tokens where the post allows it.
    pub fn generation_prefix(&self, post: &str, reserve: usize) -> SegmentedSequence {
        self.layout(self.vocab.encode(post), None, reserve)
    }

    fn layout(&self, mut post: Vec<usize>, expl: Option<Vec<usize>>, reserve: usize) -> SegmentedSequence {
        let room = self.room();
        let expl_total = expl.as_ref().map_or(0, |e| e.len() + 1);
        let mut keep = post
            .len()
            .min(room.saturating_sub(expl_total + reserve))
            .min(self.post_cap());
        if keep == 0 && !post.is_empty() && room > 0 {
            keep = 1;
        }
        post.truncate(keep);
        let expl_room = room - keep;

        let mut ids = Vec::with_capacity(self.max_len);
        let mut segments = Vec::with_capacity(self.max_len);
        let mut push = |id: usize, seg: Segment| {
            ids.push(id);
            segments.push(seg);
        };
        push(BOS, Segment::Special);
        post.iter().for_each(|&id| push(id, Segment::Post));
        push(SEP, Segment::Special);
        self.prompt_ids.iter().for_each(|&id| push(id, Segment::Prompt));
        push(SEP, Segment::Special);
        if let Some(mut e) = expl {
            if expl_room > 0 {
                e.truncate(expl_room - 1);
                e.iter().for_each(|&id| push(id, Segment::Explanation));
                push(EOS, Segment::Explanation);
            }
        }
        SegmentedSequence { ids, segments }
    }
}

/// Convenience wrapper using [`DEFAULT_PROMPT`].
pub fn build_training_sequence(
    vocab: &Vocabulary,
    post: &str,
    explanation: Option<&str>,
    max_len: usize,
) -> Result<SegmentedSequence, TokenizerError> {
    Ok(SequenceBuilder::new(vocab, max_len)?.training(post, explanation))
}
