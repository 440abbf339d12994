use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::Embedding;
use crate::error::{Error, Result};

/// Writes one line per segment: `doc_index segment_index c_1 .. c_n`,
/// preceded by a `# rows= dim= segments=` header. Coordinates use the
/// shortest decimal form that parses back to the same `f64`.
pub fn write_embedding_cache(path: impl AsRef<Path>, emb: &Embedding, segments: usize) -> Result<()> {
    let path = path.as_ref();
    if segments == 0 || emb.rows() % segments != 0 {
        return Err(Error::Shape(format!(
            "{} rows do not split into documents of {segments} segments",
            emb.rows()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "# rows={} dim={} segments={segments}", emb.rows(), emb.dim())?;
        for r in 0..emb.rows() {
            write!(out, "{} {}", r / segments, r % segments)?;
            for c in emb.row(r) {
                write!(out, " {c}")?;
            }
            writeln!(out)?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Reads a cache written by [`write_embedding_cache`]; returns the
/// embedding and the segment count.
pub fn read_embedding_cache(path: impl AsRef<Path>) -> Result<(Embedding, usize)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header".into()))?
        .map_err(|e| Error::io(path, e))?;
    let field = |name: &str| -> Result<usize> {
        header
            .split_whitespace()
            .find_map(|kv| kv.strip_prefix(name).and_then(|v| v.strip_prefix('=')))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err(1, format!("header lacks {name}")))
    };
    let (rows, dim, segments) = (field("rows")?, field("dim")?, field("segments")?);
    if segments == 0 || dim == 0 {
        return Err(parse_err(1, "zero dim or segments".into()));
    }
    let mut coords = vec![f64::NAN; rows * dim];
    let mut seen = vec![false; rows];
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let mut next_usize = |what: &str| -> Result<usize> {
            parts
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| parse_err(lineno, format!("bad {what}")))
        };
        let (doc, seg) = (next_usize("doc index")?, next_usize("segment index")?);
        let row = doc * segments + seg;
        if seg >= segments || row >= rows || seen[row] {
            return Err(parse_err(lineno, format!("bad or repeated key ({doc}, {seg})")));
        }
        seen[row] = true;
        let values: Vec<f64> = parts
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(lineno, e.to_string()))?;
        if values.len() != dim {
            return Err(parse_err(lineno, format!("expected {dim} coordinates")));
        }
        coords[row * dim..(row + 1) * dim].copy_from_slice(&values);
    }
    if seen.iter().any(|s| !s) {
        return Err(parse_err(0, "missing rows".into()));
    }
    Ok((Embedding::new(dim, coords)?, segments))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn cache_round_trips_bit_exactly(values in proptest::collection::vec(-1e6f64..1e6, 12)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("emb.txt");
            let emb = Embedding::new(3, values).unwrap();
            write_embedding_cache(&path, &emb, 2).unwrap();
            let (back, segs) = read_embedding_cache(&path).unwrap();
            prop_assert_eq!(segs, 2);
            prop_assert_eq!(back, emb);
        }
    }

    #[test]
    fn malformed_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        std::fs::write(&path, "# rows=2 dim=1 segments=1\n0 0 1.5\n1 0 abc\n").unwrap();
        let err = read_embedding_cache(&path).unwrap_err().to_string();
        assert!(err.contains(":3:"), "{err}");
    }
}
