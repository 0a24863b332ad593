use crate::corpus::PostRecord;
use crate::tokenizer::{Segment, SegmentedSequence, SequenceBuilder};

/// A record together with its training layout.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedExample {
    pub record: PostRecord,
    pub seq: SegmentedSequence,
    /// Contributes to the generation loss: a positive whose gold explanation
    /// survived truncation.
    pub explained: bool,
}

impl EncodedExample {
    pub fn encode(record: &PostRecord, builder: &SequenceBuilder<'_>) -> Self {
        let gold = record.has_gold_explanation().then_some(record.explanation.as_deref()).flatten();
        let seq = builder.training(&record.text, gold);
        let explained = gold.is_some() && seq.count(Segment::Explanation) > 0;
        EncodedExample {
            record: record.clone(),
            seq,
            explained,
        }
    }

    /// The layout the classifier sees at inference time.
    pub fn classification_seq(&self) -> SegmentedSequence {
        classification_prefix(&self.seq)
    }
}

/// Everything before the first EXPLANATION position. Attention is causal and
/// pooling covers POST rows only, so the classification output on the prefix
/// equals the one on the full sequence.
pub fn classification_prefix(seq: &SegmentedSequence) -> SegmentedSequence {
    let end = seq.positions(Segment::Explanation).next().unwrap_or(seq.len());
    SegmentedSequence {
        ids: seq.ids[..end].to_vec(),
        segments: seq.segments[..end].to_vec(),
    }
}

/// Encoded examples of one split.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EncodedSet {
    pub examples: Vec<EncodedExample>,
}

impl EncodedSet {
    /// Negatives get the prompt but no explanation.
    pub fn encode(records: &[PostRecord], builder: &SequenceBuilder<'_>) -> Self {
        EncodedSet {
            examples: records.iter().map(|r| EncodedExample::encode(r, builder)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.examples.iter().map(|e| e.record.label).collect()
    }

    pub fn word_counts(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.record.word_count()).collect()
    }

    pub fn n_positive(&self) -> usize {
        self.examples.iter().filter(|e| e.record.label == 1).count()
    }
}
