//! Seeded synthetic search topics.
//!
//! The vocabulary of a topic is split into disjoint pools: query terms, one
//! pool per subtopic, one pool per distractor theme, and shared background
//! terms. Relevant documents draw mostly from their subtopic pool, irrelevant
//! documents from a distractor theme. Irrelevant documents stand in for
//! judged non-relevant pool members, so by default they mention the query
//! terms as often as relevant ones and the query alone separates little.
//! Subtopic sizes are uneven, with a tail of single-document subtopics.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::sim::{Rating, TopicGroundTruth};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTopicSpec {
    pub topic_id: String,
    /// Relevant documents per subtopic; subtopic `i` gets id `i + 1`.
    pub subtopic_sizes: Vec<usize>,
    pub irrelevant_docs: usize,
    pub vocab_size: usize,
    pub terms_per_subtopic: usize,
    pub query_terms: usize,
    pub distractor_themes: usize,
    pub doc_length: usize,
    /// Share of a relevant document's tokens drawn from its subtopic pool.
    pub subtopic_rate: f64,
    /// Share of an irrelevant document's tokens drawn from its theme pool.
    pub theme_rate: f64,
    pub query_rate_relevant: f64,
    pub query_rate_irrelevant: f64,
    /// Share of relevant documents that also cover a second subtopic.
    pub multi_subtopic_fraction: f64,
    /// Relative frequencies of grades 1, 2, 3 and 4 among relevant documents.
    pub rating_weights: [f64; 4],
    /// Share of irrelevant documents graded -1 instead of 0.
    pub negative_fraction: f64,
    /// Tokens copied into the judgment passage of a relevant document.
    pub passage_length: usize,
    pub seed: u64,
}

impl Default for SyntheticTopicSpec {
    fn default() -> Self {
        Self {
            topic_id: "syn-00".into(),
            subtopic_sizes: vec![8, 6, 5, 4, 3, 2, 1, 1],
            irrelevant_docs: 30,
            vocab_size: 400,
            terms_per_subtopic: 12,
            query_terms: 3,
            distractor_themes: 3,
            doc_length: 200,
            subtopic_rate: 0.45,
            theme_rate: 0.45,
            query_rate_relevant: 0.08,
            query_rate_irrelevant: 0.08,
            multi_subtopic_fraction: 0.1,
            rating_weights: [0.3, 0.3, 0.25, 0.15],
            negative_fraction: 0.2,
            passage_length: 15,
            seed: 0,
        }
    }
}

impl SyntheticTopicSpec {
    pub fn subtopics(&self) -> usize {
        self.subtopic_sizes.len()
    }

    pub fn relevant_docs(&self) -> usize {
        self.subtopic_sizes.iter().sum()
    }

    pub fn total_docs(&self) -> usize {
        self.relevant_docs() + self.irrelevant_docs
    }

    fn reserved_terms(&self) -> usize {
        self.query_terms + (self.subtopics() + self.distractor_themes) * self.terms_per_subtopic
    }

    pub fn validate(&self) -> Result<()> {
        if self.subtopic_sizes.is_empty() || self.subtopic_sizes.contains(&0) {
            return Err(Error::invalid("need at least one subtopic and one document per subtopic"));
        }
        if self.query_terms == 0 || self.terms_per_subtopic == 0 || self.doc_length == 0 {
            return Err(Error::invalid("query terms, subtopic terms and doc length must be positive"));
        }
        if self.irrelevant_docs > 0 && self.distractor_themes == 0 {
            return Err(Error::invalid("irrelevant documents need a distractor theme"));
        }
        if self.vocab_size <= self.reserved_terms() {
            return Err(Error::invalid(format!(
                "vocab_size {} leaves no background terms after {} reserved",
                self.vocab_size,
                self.reserved_terms()
            )));
        }
        let rates = [
            self.subtopic_rate,
            self.theme_rate,
            self.query_rate_relevant,
            self.query_rate_irrelevant,
            self.multi_subtopic_fraction,
            self.negative_fraction,
        ];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r))
            || self.subtopic_rate + self.query_rate_relevant > 1.0
            || self.theme_rate + self.query_rate_irrelevant > 1.0
        {
            return Err(Error::invalid("rates must be probabilities that sum to at most 1"));
        }
        if self.rating_weights.iter().any(|w| !(*w >= 0.0)) || self.rating_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("rating weights must be non-negative with a positive sum"));
        }
        Ok(())
    }
}

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh"];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];

fn make_vocabulary(size: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut words = Vec::with_capacity(size);
    while words.len() < size {
        let syllables = rng.random_range(2..=4);
        let word: String = (0..syllables)
            .map(|_| format!("{}{}", ONSETS[rng.random_range(0..ONSETS.len())], VOWELS[rng.random_range(0..VOWELS.len())]))
            .collect();
        if seen.insert(word.clone()) {
            words.push(word);
        }
    }
    words
}

fn draw_grade(weights: &[f64; 4], rng: &mut ChaCha8Rng) -> i32 {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (g, w) in weights.iter().enumerate() {
        if u < *w {
            return g as i32 + 1;
        }
        u -= w;
    }
    4
}

struct Pools<'a> {
    query: &'a [String],
    background: &'a [String],
}

impl Pools<'_> {
    fn token(&self, focus: &[String], focus_rate: f64, query_rate: f64, rng: &mut ChaCha8Rng) -> String {
        let u: f64 = rng.random();
        let pool = if u < focus_rate {
            focus
        } else if u < focus_rate + query_rate {
            self.query
        } else {
            self.background
        };
        pool[rng.random_range(0..pool.len())].clone()
    }
}

/// Generates a collection and its judgments. Document order is shuffled and
/// ids are `{topic_id}-{position:04}`, so neither reveals relevance.
pub fn generate_synthetic_topic(spec: &SyntheticTopicSpec) -> Result<(Vec<Document>, TopicGroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vocab = make_vocabulary(spec.vocab_size, &mut rng);
    let (query, rest) = vocab.split_at(spec.query_terms);
    let (topical, background) = rest.split_at((spec.subtopics() + spec.distractor_themes) * spec.terms_per_subtopic);
    let mut pools = topical.chunks(spec.terms_per_subtopic);
    let subtopic_pools: Vec<&[String]> = pools.by_ref().take(spec.subtopics()).collect();
    let theme_pools: Vec<&[String]> = pools.collect();
    let p = Pools { query, background };

    struct Draft {
        tokens: Vec<String>,
        rating: i32,
        subtopics: Vec<u32>,
    }
    let subtopic_id = |s: usize| s as u32 + 1;
    let mut drafts = Vec::with_capacity(spec.total_docs());
    let n_sub = spec.subtopics();
    for (s, &size) in spec.subtopic_sizes.iter().enumerate() {
        for _ in 0..size {
            let second = (n_sub > 1 && rng.random::<f64>() < spec.multi_subtopic_fraction)
                .then(|| (s + rng.random_range(1..n_sub)) % n_sub);
            let tokens = (0..spec.doc_length)
                .map(|i| {
                    let focus = match second {
                        Some(s2) if i >= spec.doc_length / 2 => subtopic_pools[s2],
                        _ => subtopic_pools[s],
                    };
                    p.token(focus, spec.subtopic_rate, spec.query_rate_relevant, &mut rng)
                })
                .collect();
            let mut subtopics = vec![subtopic_id(s)];
            subtopics.extend(second.map(subtopic_id));
            drafts.push(Draft {
                tokens,
                rating: draw_grade(&spec.rating_weights, &mut rng),
                subtopics,
            });
        }
    }
    for i in 0..spec.irrelevant_docs {
        let theme = theme_pools[i % theme_pools.len()];
        let tokens = (0..spec.doc_length)
            .map(|_| p.token(theme, spec.theme_rate, spec.query_rate_irrelevant, &mut rng))
            .collect();
        let rating = if rng.random::<f64>() < spec.negative_fraction { -1 } else { 0 };
        drafts.push(Draft {
            tokens,
            rating,
            subtopics: Vec::new(),
        });
    }
    drafts.shuffle(&mut rng);

    let mut docs = Vec::with_capacity(drafts.len());
    let mut ratings = Vec::with_capacity(drafts.len());
    for (i, d) in drafts.into_iter().enumerate() {
        let doc_id = format!("{}-{i:04}", spec.topic_id);
        let passage = (d.rating > 0).then(|| d.tokens[..spec.passage_length.min(d.tokens.len())].join(" "));
        ratings.push(Rating {
            doc_id: doc_id.clone(),
            rating: d.rating,
            subtopics: d.subtopics,
            passage,
        });
        docs.push(Document { doc_id, tokens: d.tokens });
    }
    let topic = TopicGroundTruth::new(
        spec.topic_id.clone(),
        query.join(" "),
        (0..n_sub).map(subtopic_id).collect(),
        ratings,
    )?;
    Ok((docs, topic))
}
