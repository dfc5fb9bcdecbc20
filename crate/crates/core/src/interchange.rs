//! Plain-text interchange format for anchor-level MC samples.
//!
//! One record per image, whitespace separated, `#` starts a comment line:
//!
//! ```text
//! image <image_id> classes <C> samples <T> anchors <N>
//! anchor <k>
//! score <s_1> ... <s_C>          # T lines, MC sample order
//! box <x_min> <y_min> <x_max> <y_max>   # T lines, MC sample order
//! ...                             # N anchor blocks in total
//! end
//! ```
//!
//! Numbers are written in Rust's shortest round-trip decimal form, so a dump
//! followed by a load reproduces every value bit for bit.

use std::fmt::Write as _;

use thiserror::Error;

use crate::fusion::{AnchorPrediction, BBox};

pub const HEADER: &str = "# anchor-samples v1";

#[derive(Debug, Error)]
pub enum InterchangeError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: u64,
    pub n_classes: usize,
    pub n_samples: usize,
    pub anchors: Vec<AnchorPrediction>,
}

impl ImageRecord {
    /// Builds a record, taking `C` and `T` from the anchors. An image without
    /// anchors needs both given explicitly.
    pub fn new(image_id: u64, n_classes: usize, n_samples: usize, anchors: Vec<AnchorPrediction>) -> Self {
        Self { image_id, n_classes, n_samples, anchors }
    }
}

pub fn write_records(records: &[ImageRecord]) -> String {
    let mut out = String::new();
    writeln!(out, "{HEADER}").unwrap();
    for r in records {
        writeln!(
            out,
            "image {} classes {} samples {} anchors {}",
            r.image_id,
            r.n_classes,
            r.n_samples,
            r.anchors.len()
        )
        .unwrap();
        for (k, a) in r.anchors.iter().enumerate() {
            writeln!(out, "anchor {k}").unwrap();
            for row in a.score_samples() {
                out.push_str("score");
                for p in row {
                    write!(out, " {p}").unwrap();
                }
                out.push('\n');
            }
            for b in a.box_samples() {
                writeln!(out, "box {} {} {} {}", b.x_min, b.y_min, b.x_max, b.y_max).unwrap();
            }
        }
        out.push_str("end\n");
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, Vec<&'a str>)> + 'a>>,
    last_line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .map(|(i, l)| (i, l.split_whitespace().collect::<Vec<_>>()));
        let boxed: Box<dyn Iterator<Item = (usize, Vec<&'a str>)> + 'a> = Box::new(it);
        Self { inner: boxed.peekable(), last_line: 0 }
    }

    fn next_tagged(&mut self, tag: &str) -> Result<(usize, Vec<&'a str>), InterchangeError> {
        match self.inner.next() {
            Some((line, toks)) => {
                self.last_line = line;
                if toks[0] != tag {
                    return Err(err(line, format!("expected `{tag}`, found `{}`", toks[0])));
                }
                Ok((line, toks))
            }
            None => Err(err(self.last_line + 1, format!("unexpected end of input, expected `{tag}`"))),
        }
    }
}

fn err(line: usize, msg: impl Into<String>) -> InterchangeError {
    InterchangeError::Parse { line, msg: msg.into() }
}

fn parse_num<T: std::str::FromStr>(line: usize, tok: &str) -> Result<T, InterchangeError> {
    tok.parse().map_err(|_| err(line, format!("bad number `{tok}`")))
}

fn keyed<T: std::str::FromStr>(line: usize, toks: &[&str], idx: usize, key: &str) -> Result<T, InterchangeError> {
    match (toks.get(idx), toks.get(idx + 1)) {
        (Some(k), Some(v)) if *k == key => parse_num(line, v),
        _ => Err(err(line, format!("expected `{key} <value>`"))),
    }
}

pub fn read_records(text: &str) -> Result<Vec<ImageRecord>, InterchangeError> {
    let mut lines = Lines::new(text);
    let mut records = Vec::new();
    while lines.inner.peek().is_some() {
        let (line, toks) = lines.next_tagged("image")?;
        if toks.len() != 8 {
            return Err(err(line, "image header needs: image <id> classes <C> samples <T> anchors <N>"));
        }
        let image_id: u64 = parse_num(line, toks[1])?;
        let n_classes: usize = keyed(line, &toks, 2, "classes")?;
        let n_samples: usize = keyed(line, &toks, 4, "samples")?;
        let n_anchors: usize = keyed(line, &toks, 6, "anchors")?;
        if n_classes == 0 || n_samples == 0 {
            return Err(err(line, "classes and samples must be positive"));
        }
        let mut anchors = Vec::with_capacity(n_anchors);
        for k in 0..n_anchors {
            let (line, toks) = lines.next_tagged("anchor")?;
            let idx: usize = toks.get(1).map(|t| parse_num(line, t)).transpose()?.unwrap_or(usize::MAX);
            if idx != k {
                return Err(err(line, format!("expected anchor {k}")));
            }
            let mut scores = Vec::with_capacity(n_samples);
            for _ in 0..n_samples {
                let (line, toks) = lines.next_tagged("score")?;
                if toks.len() != n_classes + 1 {
                    return Err(err(line, format!("score row needs {n_classes} values")));
                }
                let row = toks[1..].iter().map(|t| parse_num(line, t)).collect::<Result<Vec<f64>, _>>()?;
                scores.push(row);
            }
            let mut boxes = Vec::with_capacity(n_samples);
            for _ in 0..n_samples {
                let (line, toks) = lines.next_tagged("box")?;
                if toks.len() != 5 {
                    return Err(err(line, "box row needs 4 values"));
                }
                let v = toks[1..].iter().map(|t| parse_num(line, t)).collect::<Result<Vec<f64>, _>>()?;
                boxes.push(BBox::new(v[0], v[1], v[2], v[3]).map_err(|e| err(line, e.to_string()))?);
            }
            let line = lines.last_line;
            anchors.push(AnchorPrediction::new(scores, boxes).map_err(|e| err(line, e.to_string()))?);
        }
        lines.next_tagged("end")?;
        records.push(ImageRecord { image_id, n_classes, n_samples, anchors });
    }
    Ok(records)
}
