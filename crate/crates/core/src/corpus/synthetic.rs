//! Synthetic stand-in corpus with templated symptom language and explanations.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, LengthBin, PostRecord};

/// Symptom name and the phrases that express it.
pub const SYMPTOMS: &[(&str, &[&str])] = &[
    (
        "hopelessness",
        &[
            "feeling so hopeless lately",
            "nothing is ever going to get better",
            "i see no point in trying anymore",
            "the future feels completely empty",
        ],
    ),
    (
        "loss of interest",
        &[
            "nothing seems to bring me joy anymore",
            "i stopped caring about things i used to love",
            "even my favorite hobbies feel pointless",
        ],
    ),
    (
        "fatigue or low energy",
        &[
            "just want to stay in bed all day",
            "i feel drained no matter how much i sleep",
            "i have no energy to do anything",
        ],
    ),
    (
        "excessive worry",
        &[
            "constantly worried about everything",
            "i cant seem to relax my mind",
            "my thoughts keep racing all night",
        ],
    ),
    (
        "worthlessness",
        &["i feel like a burden to everyone", "i am worthless and everyone knows it"],
    ),
    (
        "insomnia",
        &["i lie awake every night until dawn", "i keep waking up at four in the morning"],
    ),
];

/// Everyday sentences used in posts of both classes.
const FILLER: &[&str] = &[
    "went grocery shopping after work",
    "the bus was late again this morning",
    "cooked pasta for dinner tonight",
    "my cat knocked a plant off the shelf",
    "watched a documentary about whales",
    "the weather changed three times today",
    "finally fixed the leaking kitchen tap",
    "our team meeting ran long again",
    "picked up a new book from the library",
    "the coffee shop downtown changed its menu",
    "did laundry and cleaned the apartment",
    "my neighbor is renovating the whole house",
    "traffic on the highway was terrible",
    "tried a new recipe for banana bread",
    "the train was packed during rush hour",
    "spent the afternoon sorting old photos",
    "my phone screen cracked yesterday",
    "signed up for a pottery class",
    "the park was full of dogs today",
    "we repainted the hallway over the weekend",
];

/// Upbeat sentences that only negatives draw from.
const UPBEAT: &[&str] = &[
    "had a great day out with friends",
    "feeling much better now",
    "just finished a tough workout",
    "feeling exhausted but accomplished",
    "really enjoyed the concert last night",
    "so proud of my little brother today",
    "cannot wait for the trip next month",
    "laughed so hard at dinner tonight",
];

/// Explanation attached to positives whose symptom phrases were removed.
pub const NOISY_EXPLANATION: &str =
    "The post states no explicit symptom, so the label rests on context outside the text.";

/// Parameters of [`generate_synthetic`].
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_records: usize,
    pub positive_fraction: f64,
    /// Weights over SHORT, MEDIUM, LONG.
    pub length_mix: [f64; 3],
    /// Fraction of positives whose symptom phrases are replaced by filler.
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_records: 1000,
            positive_fraction: 0.2,
            length_mix: [0.4, 0.4, 0.2],
            noise_rate: 0.0,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |field: &'static str, reason: &str| {
            Err(CorpusError::Spec {
                field,
                reason: reason.to_string(),
            })
        };
        if self.n_records == 0 {
            return fail("n_records", "must be positive");
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return fail("positive_fraction", "must lie strictly between 0 and 1");
        }
        if self.length_mix.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return fail("length_mix", "weights must be finite and nonnegative");
        }
        if (self.length_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return fail("length_mix", "weights must sum to 1");
        }
        if !(self.noise_rate >= 0.0 && self.noise_rate < 1.0) {
            return fail("noise_rate", "must lie in [0, 1)");
        }
        Ok(())
    }

    /// Sets one field from its `key=value` textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CorpusError> {
        let bad = |field: &'static str| CorpusError::Spec {
            field,
            reason: format!("cannot parse {value:?}"),
        };
        match key {
            "n_records" => self.n_records = value.trim().parse().map_err(|_| bad("n_records"))?,
            "positive_fraction" => {
                self.positive_fraction = value.trim().parse().map_err(|_| bad("positive_fraction"))?
            }
            "noise_rate" => self.noise_rate = value.trim().parse().map_err(|_| bad("noise_rate"))?,
            "seed" => self.seed = value.trim().parse().map_err(|_| bad("seed"))?,
            "length_mix" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("length_mix"))?;
                self.length_mix = parts.try_into().map_err(|_| bad("length_mix"))?;
            }
            _ => {
                return Err(CorpusError::Spec {
                    field: "key",
                    reason: format!("unknown synthetic spec key {key:?}"),
                })
            }
        }
        Ok(())
    }
}

struct Sentence {
    words: Vec<&'static str>,
    symptom: Option<(usize, &'static str)>,
}

fn render(sentences: &[Sentence]) -> String {
    sentences
        .iter()
        .map(|s| {
            let mut text = s.words.join(" ");
            if let Some(first) = text.get(..1) {
                let upper = first.to_uppercase();
                text.replace_range(..1, &upper);
            }
            text.push('.');
            text
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn explanation(sentences: &[Sentence]) -> Option<String> {
    let parts: Vec<String> = sentences
        .iter()
        .filter_map(|s| s.symptom)
        .map(|(k, phrase)| format!("The post expresses {phrase}, which is indicative of {}.", SYMPTOMS[k].0))
        .collect();
    (!parts.is_empty()).then(|| parts.join(" "))
}

fn target_words(bin: LengthBin, rng: &mut ChaCha8Rng) -> usize {
    match bin {
        LengthBin::Short => rng.gen_range(10..=49),
        LengthBin::Medium => rng.gen_range(50..=150),
        LengthBin::Long => rng.gen_range(151..=250),
    }
}

fn pick_bin(mix: &[f64; 3], rng: &mut ChaCha8Rng) -> LengthBin {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (bin, w) in LengthBin::ALL.iter().zip(mix) {
        acc += w;
        if u < acc {
            return *bin;
        }
    }
    // rounding can leave u above the final cumulative weight
    *LengthBin::ALL.iter().zip(mix).rev().find(|(_, w)| **w > 0.0).map(|(b, _)| b).unwrap_or(&LengthBin::Short)
}

fn build_post(positive: bool, noisy: bool, bin: LengthBin, rng: &mut ChaCha8Rng) -> Vec<Sentence> {
    let mut symptoms = Vec::new();
    if positive && !noisy {
        let count = match bin {
            LengthBin::Short => rng.gen_range(1..=2),
            _ => rng.gen_range(1..=3),
        };
        let mut kinds: Vec<usize> = (0..SYMPTOMS.len()).collect();
        kinds.shuffle(rng);
        for &k in kinds.iter().take(count) {
            let phrase = *SYMPTOMS[k].1.choose(rng).expect("nonempty bank");
            symptoms.push(Sentence {
                words: phrase.split(' ').collect(),
                symptom: Some((k, phrase)),
            });
        }
    }

    let target = target_words(bin, rng);
    let mut total: usize = symptoms.iter().map(|s| s.words.len()).sum();
    let mut fillers = Vec::new();
    while total < target {
        let bank = if !positive && rng.gen_bool(0.35) { UPBEAT } else { FILLER };
        let s = *bank.choose(rng).expect("nonempty bank");
        let words: Vec<&str> = s.split(' ').collect();
        total += words.len();
        fillers.push(Sentence { words, symptom: None });
    }
    if total > target {
        if let Some(last) = fillers.last_mut() {
            let excess = total - target;
            let keep = last.words.len() - excess;
            last.words.truncate(keep);
        }
    }

    // symptom sentences land within the first few sentences so that they
    // survive context-window truncation of long posts
    let mut sentences = fillers;
    for s in symptoms {
        let slot = rng.gen_range(0..=sentences.len().min(3));
        sentences.insert(slot, s);
    }
    sentences
}

/// Deterministic synthetic corpus. Exactly `round(n·positive_fraction)`
/// positives; every positive carries an explanation.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<PostRecord>, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_records;
    let n_pos = ((n as f64) * spec.positive_fraction).round() as usize;
    let n_noisy = ((n_pos as f64) * spec.noise_rate).round() as usize;

    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < n_pos)).collect();
    labels.shuffle(&mut rng);
    let mut noisy_flags: Vec<bool> = (0..n_pos).map(|i| i < n_noisy).collect();
    noisy_flags.shuffle(&mut rng);
    let mut noisy_iter = noisy_flags.into_iter();

    let width = n.to_string().len().max(5);
    let mut records = Vec::with_capacity(n);
    for (i, &label) in labels.iter().enumerate() {
        let positive = label == 1;
        let noisy = positive && noisy_iter.next().unwrap_or(false);
        let bin = pick_bin(&spec.length_mix, &mut rng);
        let sentences = build_post(positive, noisy, bin, &mut rng);
        let explanation = if positive {
            Some(explanation(&sentences).unwrap_or_else(|| NOISY_EXPLANATION.to_string()))
        } else {
            None
        };
        records.push(PostRecord {
            id: format!("syn-{i:0width$}"),
            text: render(&sentences),
            label,
            explanation,
        });
    }
    Ok(records)
}

/// Predicts 1 iff the lowercased text contains any symptom phrase.
pub fn keyword_oracle(text: &str) -> u8 {
    let lower = text.to_lowercase();
    u8::from(SYMPTOMS.iter().flat_map(|(_, p)| p.iter()).any(|p| lower.contains(p)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filler_never_contains_a_symptom_phrase() {
        for s in FILLER.iter().chain(UPBEAT) {
            assert_eq!(keyword_oracle(s), 0, "{s}");
        }
    }

    #[test]
    fn spec_validation_rejects_out_of_range_values() {
        let mut s = SyntheticSpec::default();
        s.positive_fraction = 1.5;
        assert!(s.validate().is_err());
        let mut s = SyntheticSpec::default();
        s.length_mix = [0.5, 0.5, 0.5];
        assert!(s.validate().is_err());
        let mut s = SyntheticSpec::default();
        s.noise_rate = 1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn set_parses_each_key() {
        let mut s = SyntheticSpec::default();
        s.set("n_records", "12").unwrap();
        s.set("length_mix", "1, 0, 0").unwrap();
        s.set("noise_rate", "0.25").unwrap();
        assert_eq!(s.n_records, 12);
        assert_eq!(s.length_mix, [1.0, 0.0, 0.0]);
        assert!(s.set("length_mix", "1,0").is_err());
        assert!(s.set("bogus", "1").is_err());
    }
}
