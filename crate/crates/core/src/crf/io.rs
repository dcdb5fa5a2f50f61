//! Versioned text model format.
//!
//! ```text
//! MIXNER-CRF v1
//! [template] 2
//! lowercase=false
//! affixes=false
//! [tags] K
//! <one tag per line>
//! [attributes] A
//! <one attribute per line>
//! [start] K
//! [end] K
//! <one float per line>
//! [transitions] K
//! <K tab-separated floats per line, row = previous tag>
//! [emissions] A
//! <K tab-separated floats per line, row = attribute>
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so a load/save cycle is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use super::{CrfModel, CrfWeights};
use crate::corpus::TagSet;
use crate::error::{Error, Result};
use crate::features::{FeatureIndex, TemplateConfig};

pub const MODEL_HEADER: &str = "MIXNER-CRF v1";
const MAGIC: &str = "MIXNER-CRF";

fn write_floats(out: &mut String, xs: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for x in xs {
        if !first {
            out.push('\t');
        }
        first = false;
        let _ = write!(out, "{x:?}");
    }
    out.push('\n');
}

impl CrfModel {
    pub fn to_text(&self) -> String {
        let w = &self.weights;
        let k = w.num_tags();
        let mut out = String::new();
        let _ = writeln!(out, "{MODEL_HEADER}");
        let _ = writeln!(out, "[template] 2");
        let _ = writeln!(out, "lowercase={}", self.template.lowercase);
        let _ = writeln!(out, "affixes={}", self.template.affixes);
        let _ = writeln!(out, "[tags] {k}");
        for t in self.tagset.tags() {
            let _ = writeln!(out, "{t}");
        }
        let _ = writeln!(out, "[attributes] {}", self.index.num_attributes());
        for a in self.index.attributes() {
            let _ = writeln!(out, "{a}");
        }
        let _ = writeln!(out, "[start] {k}");
        for y in 0..k {
            write_floats(&mut out, [w.start(y)]);
        }
        let _ = writeln!(out, "[end] {k}");
        for y in 0..k {
            write_floats(&mut out, [w.end(y)]);
        }
        let _ = writeln!(out, "[transitions] {k}");
        for j in 0..k {
            write_floats(&mut out, (0..k).map(|y| w.transition(j, y)));
        }
        let _ = writeln!(out, "[emissions] {}", w.num_attributes());
        for a in 0..w.num_attributes() {
            write_floats(&mut out, (0..k).map(|y| w.emission(a, y)));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = Reader {
            lines: text.lines().enumerate(),
        };
        match r.next_line("header") {
            Ok((_, MODEL_HEADER)) => {}
            Ok((_, h)) if h.starts_with(MAGIC) => {
                return Err(Error::UnsupportedVersion(
                    h.trim_start_matches(MAGIC).trim().to_string(),
                ))
            }
            Ok((line, _)) => {
                return Err(Error::MalformedModel {
                    section: "header".into(),
                    line,
                    message: format!("expected `{MODEL_HEADER}`"),
                })
            }
            Err(e) => return Err(e),
        }

        let template_lines = r.section("template")?;
        let mut template = TemplateConfig::default();
        for (line, text) in template_lines {
            let malformed = |m: &str| Error::MalformedModel {
                section: "template".into(),
                line,
                message: m.to_string(),
            };
            let (key, value) = text.split_once('=').ok_or_else(|| malformed("expected key=value"))?;
            let value: bool = value.parse().map_err(|_| malformed("expected true or false"))?;
            match key {
                "lowercase" => template.lowercase = value,
                "affixes" => template.affixes = value,
                _ => return Err(malformed("unknown template key")),
            }
        }

        let tags: Vec<String> = r.section("tags")?.into_iter().map(|(_, t)| t.to_string()).collect();
        let tagset = TagSet::from_ordered(tags).map_err(|e| Error::MalformedModel {
            section: "tags".into(),
            line: 0,
            message: e.to_string(),
        })?;
        let k = tagset.len();

        let mut index = FeatureIndex::new(&tagset);
        let attributes = r.section("attributes")?;
        let num_attributes = attributes.len();
        for (line, a) in attributes {
            if index.insert_attribute(a) != Some(index.num_attributes() - 1) {
                return Err(Error::MalformedModel {
                    section: "attributes".into(),
                    line,
                    message: format!("duplicate attribute `{a}`"),
                });
            }
        }
        index.freeze();

        let mut weights = CrfWeights::zeros(num_attributes, k);
        let start = r.float_rows("start", k, 1)?;
        let end = r.float_rows("end", k, 1)?;
        let transitions = r.float_rows("transitions", k, k)?;
        let emissions = r.float_rows("emissions", num_attributes, k)?;
        for y in 0..k {
            let (so, eo) = (weights.start_offset(y), weights.end_offset(y));
            weights.values_mut()[so] = start[y];
            weights.values_mut()[eo] = end[y];
        }
        for j in 0..k {
            for y in 0..k {
                let o = weights.transition_offset(j, y);
                weights.values_mut()[o] = transitions[j * k + y];
            }
        }
        weights.values_mut()[..num_attributes * k].copy_from_slice(&emissions);

        Ok(CrfModel {
            tagset,
            index,
            template,
            weights,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        CrfModel::from_text(&std::fs::read_to_string(path)?)
    }
}

struct Reader<'a, I: Iterator<Item = (usize, &'a str)>> {
    lines: I,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> Reader<'a, I> {
    fn next_line(&mut self, section: &str) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .map(|(n, l)| (n + 1, l))
            .ok_or_else(|| Error::Truncated {
                section: section.to_string(),
            })
    }

    /// Reads a `[name] N` header and its N body lines.
    fn section(&mut self, name: &str) -> Result<Vec<(usize, &'a str)>> {
        let (line, header) = self.next_line(name)?;
        let count = header
            .strip_prefix(&format!("[{name}] "))
            .and_then(|n| n.parse::<usize>().ok())
            .ok_or_else(|| Error::MalformedModel {
                section: name.to_string(),
                line,
                message: format!("expected `[{name}] <count>`, found `{header}`"),
            })?;
        (0..count).map(|_| self.next_line(name)).collect()
    }

    fn float_rows(&mut self, name: &str, rows: usize, cols: usize) -> Result<Vec<f64>> {
        let body = self.section(name)?;
        let malformed = |line: usize, message: String| Error::MalformedModel {
            section: name.to_string(),
            line,
            message,
        };
        if body.len() != rows {
            let line = body.first().map_or(0, |b| b.0);
            return Err(malformed(line, format!("expected {rows} rows, found {}", body.len())));
        }
        let mut out = Vec::with_capacity(rows * cols);
        for (line, text) in body {
            let before = out.len();
            for field in text.split('\t') {
                let x: f64 = field
                    .parse()
                    .map_err(|_| malformed(line, format!("bad float `{field}`")))?;
                if !x.is_finite() {
                    return Err(malformed(line, format!("non-finite weight `{field}`")));
                }
                out.push(x);
            }
            if out.len() - before != cols {
                return Err(malformed(line, format!("expected {cols} values")));
            }
        }
        Ok(out)
    }
}
