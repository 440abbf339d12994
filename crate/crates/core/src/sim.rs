//! Simulated user: graded ground truth, feedback and the immediate reward.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowest and highest judgment grades.
pub const MIN_RATING: i32 = -1;
pub const MAX_RATING: i32 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub doc_id: String,
    pub rating: i32,
    #[serde(default)]
    pub subtopics: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passage: Option<String>,
}

/// A search topic with its subtopics and graded judgments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTopic", into = "RawTopic")]
pub struct TopicGroundTruth {
    pub topic_id: String,
    pub query: String,
    pub subtopics: Vec<u32>,
    ratings: Vec<Rating>,
    by_doc: HashMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawTopic {
    topic_id: String,
    query: String,
    subtopics: Vec<u32>,
    ratings: Vec<Rating>,
}

impl TryFrom<RawTopic> for TopicGroundTruth {
    type Error = Error;

    fn try_from(raw: RawTopic) -> Result<Self> {
        TopicGroundTruth::new(raw.topic_id, raw.query, raw.subtopics, raw.ratings)
    }
}

impl From<TopicGroundTruth> for RawTopic {
    fn from(t: TopicGroundTruth) -> Self {
        RawTopic {
            topic_id: t.topic_id,
            query: t.query,
            subtopics: t.subtopics,
            ratings: t.ratings,
        }
    }
}

impl TopicGroundTruth {
    /// Validates and indexes a topic: at least one subtopic, unique doc ids,
    /// grades within `[-1, 4]`, every relevant document tagged with at least
    /// one of the topic's subtopics.
    pub fn new(topic_id: String, query: String, subtopics: Vec<u32>, ratings: Vec<Rating>) -> Result<Self> {
        if subtopics.is_empty() {
            return Err(Error::invalid(format!("topic {topic_id} has no subtopics")));
        }
        let known: HashSet<u32> = subtopics.iter().copied().collect();
        if known.len() != subtopics.len() {
            return Err(Error::invalid(format!("topic {topic_id} repeats a subtopic id")));
        }
        let mut by_doc = HashMap::new();
        for (i, r) in ratings.iter().enumerate() {
            if by_doc.insert(r.doc_id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate judgment for {}", r.doc_id)));
            }
            if !(MIN_RATING..=MAX_RATING).contains(&r.rating) {
                return Err(Error::invalid(format!("rating {} of {} outside [-1, 4]", r.rating, r.doc_id)));
            }
            if r.rating > 0 && r.subtopics.is_empty() {
                return Err(Error::invalid(format!("relevant {} has no subtopic", r.doc_id)));
            }
            if let Some(s) = r.subtopics.iter().find(|s| !known.contains(s)) {
                return Err(Error::invalid(format!("{} tagged with unknown subtopic {s}", r.doc_id)));
            }
        }
        Ok(Self {
            topic_id,
            query,
            subtopics,
            ratings,
            by_doc,
        })
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    pub fn judgment(&self, doc_id: &str) -> Option<&Rating> {
        self.by_doc.get(doc_id).map(|&i| &self.ratings[i])
    }

    /// Raw grade, 0 for unjudged documents.
    pub fn rating(&self, doc_id: &str) -> i32 {
        self.judgment(doc_id).map_or(0, |r| r.rating)
    }

    /// Sum of positive grades: an upper bound on any episode's reward.
    pub fn positive_mass(&self) -> f64 {
        self.ratings.iter().map(|r| r.rating.max(0) as f64).sum()
    }

    pub fn relevant_count(&self) -> usize {
        self.ratings.iter().filter(|r| r.rating > 0).count()
    }
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<Vec<TopicGroundTruth>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut topics = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let topic = serde_json::from_str::<TopicGroundTruth>(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        topics.push(topic);
    }
    Ok(topics)
}

pub fn write_ground_truth(path: impl AsRef<Path>, topics: &[TopicGroundTruth]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for t in topics {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub doc_id: String,
    /// Raw grade; negative grades are kept here and only floored in
    /// [`reward`].
    pub rating: i32,
    pub subtopics: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passage: Option<String>,
}

/// Judgments for one submitted batch, in submission order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub entries: Vec<FeedbackEntry>,
}

pub fn give_feedback<S: AsRef<str>>(topic: &TopicGroundTruth, batch: &[S]) -> Feedback {
    Feedback {
        entries: batch
            .iter()
            .map(|id| {
                let id = id.as_ref();
                match topic.judgment(id) {
                    Some(r) => FeedbackEntry {
                        doc_id: id.to_string(),
                        rating: r.rating,
                        subtopics: r.subtopics.clone(),
                        passage: r.passage.clone(),
                    },
                    None => FeedbackEntry {
                        doc_id: id.to_string(),
                        rating: 0,
                        subtopics: Vec::new(),
                        passage: None,
                    },
                }
            })
            .collect(),
    }
}

/// Sum of `max(rating, 0)` over documents of the batch that were not
/// returned at an earlier iteration. A document repeated within the batch
/// counts once.
pub fn reward(feedback: &Feedback, history: &HashSet<String>) -> f64 {
    let mut seen: HashSet<&str> = HashSet::new();
    feedback
        .entries
        .iter()
        .filter(|e| !history.contains(&e.doc_id) && seen.insert(&e.doc_id))
        .map(|e| e.rating.max(0) as f64)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rating(doc: &str, r: i32, subs: &[u32]) -> Rating {
        Rating {
            doc_id: doc.into(),
            rating: r,
            subtopics: subs.to_vec(),
            passage: None,
        }
    }

    /// The four-subtopic example topic.
    pub(crate) fn pisa() -> TopicGroundTruth {
        TopicGroundTruth::new(
            "DD17-10".into(),
            "Leaning Towers of Pisa Repairs".into(),
            vec![321, 319, 320, 318],
            vec![
                rating("0290537", 0, &[]),
                rating("0298897", 2, &[320]),
                rating("0984009", 4, &[318]),
                rating("0000001", -1, &[]),
                rating("0000002", 3, &[321, 319]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn validation_errors() {
        assert!(TopicGroundTruth::new("t".into(), "q".into(), vec![], vec![]).is_err());
        assert!(TopicGroundTruth::new("t".into(), "q".into(), vec![1], vec![rating("a", 1, &[1]), rating("a", 2, &[1])]).is_err());
        assert!(TopicGroundTruth::new("t".into(), "q".into(), vec![1], vec![rating("a", 5, &[1])]).is_err());
        assert!(TopicGroundTruth::new("t".into(), "q".into(), vec![1], vec![rating("a", 2, &[])]).is_err());
        assert!(TopicGroundTruth::new("t".into(), "q".into(), vec![1], vec![rating("a", 2, &[7])]).is_err());
    }

    #[test]
    fn file_round_trip_and_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.jsonl");
        write_ground_truth(&path, &[pisa()]).unwrap();
        let back = load_ground_truth(&path).unwrap();
        assert_eq!(back, vec![pisa()]);
        assert_eq!(back[0].subtopics, [321, 319, 320, 318]);

        let good = std::fs::read_to_string(&path).unwrap();
        let bad = good.replace("[321,319,320,318]", "[]");
        std::fs::write(&path, format!("{good}{bad}")).unwrap();
        let err = load_ground_truth(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }

    #[test]
    fn feedback_is_verbatim_lookup() {
        let t = pisa();
        let fb = give_feedback(&t, &["0984009", "unknown", "0000001"]);
        assert_eq!(fb.entries.len(), 3);
        assert_eq!(fb.entries[0].rating, 4);
        assert_eq!(fb.entries[0].subtopics, [318]);
        assert_eq!(fb.entries[1].rating, 0);
        assert_eq!(fb.entries[2].rating, -1);
        assert_eq!(fb, give_feedback(&t, &["0984009", "unknown", "0000001"]));
    }

    #[test]
    fn reward_examples() {
        let t = pisa();
        let none = HashSet::new();
        assert_eq!(reward(&give_feedback(&t, &["0298897", "0984009"]), &none), 6.0);
        let all: HashSet<String> = ["0298897", "0984009"].iter().map(|s| s.to_string()).collect();
        assert_eq!(reward(&give_feedback(&t, &["0298897", "0984009"]), &all), 0.0);
        assert_eq!(reward(&give_feedback(&t, &["0000001", "0290537", "0000002"]), &none), 3.0);
        assert_eq!(reward(&give_feedback(&t, &["0984009", "0984009"]), &none), 4.0);
    }
}
