//! Frozen reader traces and their JSONL file format.
//!
//! One line per question:
//!
//! ```text
//! {"question_id":"q1","passages":[{"rank":1,"has_answer":true,"logits":[-0.5,1.25],"answer_correct":[false,true]}]}
//! ```
//!
//! Reals are written with 9 significant digits and negative zero is written
//! as zero, so a loaded file saves back byte-for-byte.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// Reader output for one retrieved passage, one entry per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PassageTrace {
    /// Retrieval rank, 1 for the top passage.
    pub rank: usize,
    pub has_answer: bool,
    /// Raw (uncalibrated) HasAnswer logit after each layer.
    #[serde(serialize_with = "serialize_canonical")]
    pub logits: Vec<f64>,
    /// Whether the answer read out at each layer would be correct. The last
    /// entry is what a full-height read produces.
    pub answer_correct: Vec<bool>,
}

impl PassageTrace {
    pub fn n_layers(&self) -> usize {
        self.logits.len()
    }
}

/// A question together with its ranked passage traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionInstance {
    pub question_id: String,
    pub passages: Vec<PassageTrace>,
}

impl QuestionInstance {
    /// Builds an instance and checks every invariant.
    pub fn new(question_id: impl Into<String>, passages: Vec<PassageTrace>) -> Result<Self> {
        let q = QuestionInstance {
            question_id: question_id.into(),
            passages,
        };
        q.validate()?;
        Ok(q)
    }

    /// Number of passages (towers).
    pub fn n(&self) -> usize {
        self.passages.len()
    }

    /// Layers per passage. Zero only for an instance with no passages.
    pub fn n_layers(&self) -> usize {
        self.passages.first().map_or(0, PassageTrace::n_layers)
    }

    pub fn answer_towers(&self) -> impl Iterator<Item = usize> + '_ {
        self.passages
            .iter()
            .enumerate()
            .filter(|(_, p)| p.has_answer)
            .map(|(i, _)| i)
    }

    pub fn validate(&self) -> Result<()> {
        let id = self.question_id.as_str();
        let layers = self.n_layers();
        for (i, p) in self.passages.iter().enumerate() {
            let field = |name: &str| format!("passages[{i}].{name}");
            if p.rank != i + 1 {
                return Err(Error::invariant(
                    id,
                    field("rank"),
                    format!("expected rank {} (ranks must be 1..n in order), found {}", i + 1, p.rank),
                ));
            }
            if p.logits.is_empty() {
                return Err(Error::invariant(id, field("logits"), "at least one layer is required"));
            }
            if p.logits.len() != layers {
                return Err(Error::invariant(
                    id,
                    field("logits"),
                    format!("has {} layers but passage 1 has {layers}", p.logits.len()),
                ));
            }
            if p.answer_correct.len() != p.logits.len() {
                return Err(Error::invariant(
                    id,
                    field("answer_correct"),
                    format!(
                        "length {} differs from logits length {}",
                        p.answer_correct.len(),
                        p.logits.len()
                    ),
                ));
            }
            if let Some(l) = p.logits.iter().position(|x| !x.is_finite()) {
                return Err(Error::invariant(id, field("logits"), format!("layer {l} is not finite")));
            }
            if !p.has_answer && p.answer_correct.iter().any(|&c| c) {
                return Err(Error::invariant(
                    id,
                    field("answer_correct"),
                    "has_answer is false but some answer_correct entry is true",
                ));
            }
        }
        Ok(())
    }
}

/// Rounds to 9 significant digits and maps negative zero to zero.
///
/// This is the value a trace file stores; applying it twice is the same as
/// applying it once.
pub fn canonical_real(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    if !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

fn serialize_canonical<S: Serializer>(values: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(values.iter().map(|&x| canonical_real(x)))
}

/// Parses JSONL traces from a reader. Blank lines are ignored.
pub fn read_traces<R: BufRead>(reader: R) -> Result<Vec<QuestionInstance>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let q: QuestionInstance = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        q.validate()?;
        out.push(q);
    }
    Ok(out)
}

pub fn write_traces<W: Write>(mut writer: W, instances: &[QuestionInstance]) -> std::io::Result<()> {
    for q in instances {
        serde_json::to_writer(&mut writer, q)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn load_traces(path: impl AsRef<Path>) -> Result<Vec<QuestionInstance>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_traces(BufReader::new(file))
}

pub fn save_traces(instances: &[QuestionInstance], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_traces(BufWriter::new(file), instances).map_err(|e| Error::io(path, e))
}
