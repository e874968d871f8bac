//! Versioned text format for trained parameters.
//!
//! ```text
//! taskrel-params 1
//! aggregation self_mean
//! encoder 16 16
//! relations abs_diff tlrm
//! head_hidden 16
//! tensor 16 16
//! <values>
//! tensor 16
//! <values>
//! ...
//! ```
//!
//! Tensors follow [`GnnModel::params`] order. Values are written in the
//! shortest form that parses back to the same `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use taskrel_core::gnn::{Aggregation, GnnModel, ModelConfig};
use taskrel_core::relation::RelationKind;

use crate::error::{io_at, CliError, Result};

pub const PARAMS_FILE: &str = "params.txt";
pub const MAGIC: &str = "taskrel-params";
pub const VERSION: u32 = 1;

pub fn to_text(model: &GnnModel) -> String {
    let mut out = format!("{MAGIC} {VERSION}\n");
    let w = |out: &mut String, line: String| {
        out.push_str(&line);
        out.push('\n');
    };
    w(&mut out, format!("aggregation {}", model.aggregation));
    w(
        &mut out,
        format!("encoder {}", words(&model.encoder.widths())),
    );
    w(
        &mut out,
        format!("relations {}", words(&model.relation_kinds())),
    );
    w(&mut out, format!("head_hidden {}", head_hidden(model)));
    for p in model.params() {
        w(&mut out, format!("tensor {}", words(p.shape())));
        let mut values = String::new();
        for (i, x) in p.data().iter().enumerate() {
            if i > 0 {
                values.push(' ');
            }
            write!(values, "{x}").expect("writing to a String");
        }
        w(&mut out, values);
    }
    out
}

fn head_hidden(model: &GnnModel) -> usize {
    use taskrel_core::relation::ScoreHead;
    model
        .layers
        .iter()
        .find_map(|l| match &l.head {
            ScoreHead::TaskLevel { hidden, .. } => Some(hidden.fan_out()),
            ScoreHead::AbsDiff { .. } => None,
        })
        .unwrap_or_else(|| model.embed_dim())
}

fn words<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

pub fn save(model: &GnnModel, path: &Path) -> Result<()> {
    fs::write(path, to_text(model)).map_err(io_at(path))
}

pub fn load(path: &Path) -> Result<GnnModel> {
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    parse(&text, path)
}

struct Lines<'a> {
    file: PathBuf,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, message: impl Into<String>) -> CliError {
        CliError::ParamFormat {
            file: self.file.clone(),
            line: self.line,
            message: message.into(),
        }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        match self.iter.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => {
                self.line += 1;
                Err(self.err("unexpected end of file"))
            }
        }
    }

    /// The words after `tag` on the next line.
    fn tagged(&mut self, tag: &str) -> Result<Vec<&'a str>> {
        let line = self.next_line()?;
        let mut it = line.split_whitespace();
        if it.next() != Some(tag) {
            return Err(self.err(format!("expected `{tag}` line, got {line:?}")));
        }
        Ok(it.collect())
    }

    fn parsed<T: std::str::FromStr>(&self, words: &[&str], what: &str) -> Result<Vec<T>> {
        words
            .iter()
            .map(|w| {
                w.parse()
                    .map_err(|_| self.err(format!("cannot parse {w:?} as {what}")))
            })
            .collect()
    }
}

pub fn parse(text: &str, file: &Path) -> Result<GnnModel> {
    let mut lines = Lines {
        file: file.to_path_buf(),
        iter: text.lines().enumerate(),
        line: 0,
    };
    let version = lines.tagged(MAGIC)?;
    if version != [VERSION.to_string()] {
        return Err(lines.err(format!(
            "unsupported version {:?}, expected {VERSION}",
            version.join(" ")
        )));
    }
    let aggregation: Aggregation = match lines.tagged("aggregation")?[..] {
        [name] => name
            .parse()
            .map_err(|e: taskrel_core::Error| lines.err(e.to_string()))?,
        _ => return Err(lines.err("expected one aggregation name")),
    };
    let widths: Vec<usize> = {
        let w = lines.tagged("encoder")?;
        lines.parsed(&w, "a width")?
    };
    let relations: Vec<RelationKind> = {
        let w = lines.tagged("relations")?;
        lines.parsed(&w, "a relation kind")?
    };
    let hidden: usize = match lines.tagged("head_hidden")?[..] {
        [h] => lines.parsed(&[h], "a width")?[0],
        _ => return Err(lines.err("expected one head width")),
    };
    if widths.len() < 2 {
        return Err(lines.err("encoder needs input and output widths"));
    }
    let config = ModelConfig {
        input_dim: widths[0],
        encoder_hidden: widths[1..widths.len() - 1].to_vec(),
        embed_dim: widths[widths.len() - 1],
        relations,
        head_hidden: Some(hidden),
        aggregation,
    };
    let mut model = GnnModel::init(&config, 0).map_err(|e| lines.err(e.to_string()))?;
    for p in model.params_mut() {
        let shape: Vec<usize> = {
            let w = lines.tagged("tensor")?;
            lines.parsed(&w, "a dimension")?
        };
        if shape != p.shape() {
            return Err(lines.err(format!(
                "tensor shape {shape:?} does not match the model's {:?}",
                p.shape()
            )));
        }
        let words: Vec<&str> = lines.next_line()?.split_whitespace().collect();
        let values: Vec<f64> = lines.parsed(&words, "a number")?;
        if values.len() != p.len() {
            return Err(lines.err(format!(
                "expected {} values, found {}",
                p.len(),
                values.len()
            )));
        }
        p.data_mut().copy_from_slice(&values);
    }
    if let Some((i, extra)) = lines.iter.find(|(_, l)| !l.trim().is_empty()) {
        lines.line = i + 1;
        return Err(lines.err(format!("unexpected trailing content {extra:?}")));
    }
    Ok(model)
}
