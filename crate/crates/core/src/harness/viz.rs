//! Exploration heatmaps written as binary PPM (P6).
//!
//! One vertical panel per iteration. Rows are documents: relevant documents
//! first, grouped by subtopic in the topic's subtopic order (a document
//! covering several subtopics appears in each of its groups), then all
//! other documents. Groups are separated by dotted turquoise lines.

use std::collections::HashSet;
use std::path::Path;

use super::episode::LogEntry;
use crate::error::{Error, Result};
use crate::sim::TopicGroundTruth;

pub const GUTTER: usize = 4;
pub const PANEL_WIDTH: usize = 6;
pub const PANEL_GAP: usize = 2;
pub const ROW_HEIGHT: usize = 2;

pub type Rgb = [u8; 3];

pub const BACKGROUND: Rgb = [0, 0, 0];
pub const SEPARATOR: Rgb = [64, 224, 208];
pub const SELECTED: Rgb = [255, 255, 255];
pub const VISITED: Rgb = [36, 36, 36];
pub const RELEVANT: Rgb = [70, 110, 170];
pub const OTHER: Rgb = [128, 128, 128];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height * 3],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn set(&mut self, x: usize, y: usize, c: Rgb) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// A row of the heatmap: a document, or a separator between groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Row {
    Doc { doc_id: String, relevant: bool },
    Separator,
}

/// Row layout for a collection.
pub fn layout_rows(doc_ids: &[String], topic: &TopicGroundTruth) -> Vec<Row> {
    let mut rows = Vec::new();
    let mut groups = 0;
    for &sub in &topic.subtopics {
        let members: Vec<&String> = doc_ids
            .iter()
            .filter(|id| topic.judgment(id).is_some_and(|r| r.rating > 0 && r.subtopics.contains(&sub)))
            .collect();
        if members.is_empty() {
            continue;
        }
        if groups > 0 {
            rows.push(Row::Separator);
        }
        groups += 1;
        rows.extend(members.into_iter().map(|id| Row::Doc {
            doc_id: id.clone(),
            relevant: true,
        }));
    }
    let rest: Vec<&String> = doc_ids.iter().filter(|id| topic.rating(id) <= 0).collect();
    if !rest.is_empty() {
        if groups > 0 {
            rows.push(Row::Separator);
        }
        rows.extend(rest.into_iter().map(|id| Row::Doc {
            doc_id: id.clone(),
            relevant: false,
        }));
    }
    rows
}

fn row_height(row: &Row) -> usize {
    match row {
        Row::Doc { .. } => ROW_HEIGHT,
        Row::Separator => 1,
    }
}

/// Renders the heatmap of an episode. With no iterations the image is just
/// the gutter.
pub fn render_exploration_image(log: &[LogEntry], topic: &TopicGroundTruth, doc_ids: &[String]) -> Image {
    let rows = layout_rows(doc_ids, topic);
    let height = rows.iter().map(row_height).sum::<usize>().max(1);
    let width = GUTTER + log.len() * (PANEL_WIDTH + PANEL_GAP);
    let mut img = Image::new(width, height);
    for (p, entry) in log.iter().enumerate() {
        let visited: HashSet<&str> = entry.visited.iter().map(String::as_str).collect();
        let selected: HashSet<&str> = entry.retrieved.iter().map(|d| d.doc_id.as_str()).collect();
        let x0 = GUTTER + p * (PANEL_WIDTH + PANEL_GAP);
        let mut y = 0;
        for row in &rows {
            match row {
                Row::Separator => {
                    for x in (x0..x0 + PANEL_WIDTH).step_by(2) {
                        img.set(x, y, SEPARATOR);
                    }
                }
                Row::Doc { doc_id, relevant } => {
                    let color = if selected.contains(doc_id.as_str()) {
                        SELECTED
                    } else if visited.contains(doc_id.as_str()) {
                        VISITED
                    } else if *relevant {
                        RELEVANT
                    } else {
                        OTHER
                    };
                    for dy in 0..ROW_HEIGHT {
                        for x in x0..x0 + PANEL_WIDTH {
                            img.set(x, y + dy, color);
                        }
                    }
                }
            }
            y += row_height(row);
        }
    }
    img
}

pub fn export_exploration_image(
    log: &[LogEntry],
    topic: &TopicGroundTruth,
    doc_ids: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let img = render_exploration_image(log, topic, doc_ids);
    std::fs::write(path, img.to_ppm()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::episode::LoggedDoc;
    use crate::sim::Rating;

    fn topic() -> (TopicGroundTruth, Vec<String>) {
        let ratings = vec![
            ("x0", 0, vec![]),
            ("a", 2, vec![1]),
            ("both", 3, vec![1, 2]),
            ("x1", -1, vec![]),
            ("b", 1, vec![2]),
            ("x2", 0, vec![]),
            ("x3", 0, vec![]),
        ];
        let ids = ratings.iter().map(|r| r.0.to_string()).collect();
        let t = TopicGroundTruth::new(
            "t".into(),
            "q".into(),
            vec![1, 2],
            ratings
                .into_iter()
                .map(|(d, r, s)| Rating {
                    doc_id: d.into(),
                    rating: r,
                    subtopics: s,
                    passage: None,
                })
                .collect(),
        )
        .unwrap();
        (t, ids)
    }

    fn entry(t: usize, visited: &[&str], picks: &[&str]) -> LogEntry {
        LogEntry {
            t,
            visited: visited.iter().map(|s| s.to_string()).collect(),
            action: None,
            retrieved: picks
                .iter()
                .enumerate()
                .map(|(i, d)| LoggedDoc {
                    doc_id: d.to_string(),
                    score: 0.0,
                    rank: i + 1,
                    rating: 0,
                })
                .collect(),
            reward: 0.0,
        }
    }

    fn row_y(rows: &[Row], id: &str) -> Vec<usize> {
        let mut y = 0;
        let mut out = Vec::new();
        for r in rows {
            if matches!(r, Row::Doc { doc_id, .. } if doc_id == id) {
                out.push(y);
            }
            y += row_height(r);
        }
        out
    }

    #[test]
    fn layout_groups_and_repeats() {
        let (t, ids) = topic();
        let rows = layout_rows(&ids, &t);
        let names: Vec<String> = rows
            .iter()
            .map(|r| match r {
                Row::Doc { doc_id, .. } => doc_id.clone(),
                Row::Separator => "|".into(),
            })
            .collect();
        assert_eq!(names, ["a", "both", "|", "both", "b", "|", "x0", "x1", "x2", "x3"]);
    }

    #[test]
    fn empty_episode_is_a_valid_file() {
        let (t, ids) = topic();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.ppm");
        export_exploration_image(&[], &t, &ids, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let rows = layout_rows(&ids, &t);
        let h: usize = rows.iter().map(row_height).sum();
        let header = format!("P6\n{GUTTER} {h}\n255\n");
        assert!(bytes.starts_with(header.as_bytes()));
        assert_eq!(bytes.len(), header.len() + GUTTER * h * 3);
        assert!(export_exploration_image(&[], &t, &ids, dir.path().join("missing/x.ppm")).is_err());
    }

    #[test]
    fn selections_are_white_and_history_dark() {
        let (t, ids) = topic();
        let log = [entry(1, &[], &["both", "a"]), entry(2, &["a", "both"], &["b"])];
        let img = render_exploration_image(&log, &t, &ids);
        let rows = layout_rows(&ids, &t);
        let x1 = GUTTER;
        let x2 = GUTTER + PANEL_WIDTH + PANEL_GAP;
        for y in row_y(&rows, "both") {
            assert_eq!(img.get(x1, y), SELECTED);
            assert_eq!(img.get(x2, y), VISITED);
        }
        assert_eq!(img.get(x2, row_y(&rows, "b")[0]), SELECTED);
        assert_eq!(img.get(x1, row_y(&rows, "x0")[0]), OTHER);
        assert_eq!(img.get(x1, row_y(&rows, "b")[0]), RELEVANT);
        assert_eq!(img.get(0, 0), BACKGROUND);

        // Only relevant picks: every white pixel lies in the top half.
        let half = img.height / 2;
        for y in half..img.height {
            for x in 0..img.width {
                assert_ne!(img.get(x, y), SELECTED, "({x}, {y})");
            }
        }
    }
}
