//! Window feature template and the attribute/tag index.
//!
//! Observation attributes look at the previous, current and next word only.
//! Dependence on neighbouring tags lives in the CRF transition weights, so
//! the template never emits tag-valued attributes.

use std::collections::HashMap;

use crate::corpus::{Dataset, TagSet};
use crate::error::{Error, Result};

pub const BOS: &str = "<BOS>";
pub const EOS: &str = "<EOS>";
const MAX_AFFIX: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TemplateConfig {
    /// Also emit lowercased window words (`lw0=`, `lw-1=`, `lw+1=`).
    pub lowercase: bool,
    /// Also emit character prefixes and suffixes of the current word, up to length 3.
    pub affixes: bool,
}

/// Attribute strings for position `i`.
///
/// # Panics
///
/// If `i` is out of range.
pub fn extract_attributes<S: AsRef<str>>(words: &[S], i: usize, template: &TemplateConfig) -> Vec<String> {
    assert!(
        i < words.len(),
        "position {i} out of range for sentence of length {}",
        words.len()
    );
    let cur = words[i].as_ref();
    let prev = if i == 0 { BOS } else { words[i - 1].as_ref() };
    let next = words.get(i + 1).map_or(EOS, |w| w.as_ref());

    let mut attrs = vec![
        "b".to_string(),
        format!("w0={cur}"),
        format!("w-1={prev}"),
        format!("w+1={next}"),
    ];
    if template.lowercase {
        let lower = |w: &str| {
            if w == BOS || w == EOS {
                w.to_string()
            } else {
                w.to_lowercase()
            }
        };
        attrs.push(format!("lw0={}", lower(cur)));
        attrs.push(format!("lw-1={}", lower(prev)));
        attrs.push(format!("lw+1={}", lower(next)));
    }
    if template.affixes {
        let chars: Vec<char> = cur.chars().collect();
        for n in 1..=MAX_AFFIX.min(chars.len()) {
            attrs.push(format!("p{n}={}", chars[..n].iter().collect::<String>()));
            attrs.push(format!("s{n}={}", chars[chars.len() - n..].iter().collect::<String>()));
        }
    }
    attrs
}

/// Dense ids for attributes and tags. Tag ids follow [`TagSet`] order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureIndex {
    attributes: Vec<String>,
    attribute_ids: HashMap<String, usize>,
    tags: Vec<String>,
    tag_ids: HashMap<String, usize>,
    frozen: bool,
}

impl FeatureIndex {
    pub fn new(tagset: &TagSet) -> Self {
        let tags = tagset.tags().to_vec();
        let tag_ids = tags.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        FeatureIndex {
            attributes: Vec::new(),
            attribute_ids: HashMap::new(),
            tags,
            tag_ids,
            frozen: false,
        }
    }

    /// Returns the attribute's id, allocating one unless the index is frozen.
    pub fn insert_attribute(&mut self, attr: &str) -> Option<usize> {
        if let Some(&id) = self.attribute_ids.get(attr) {
            return Some(id);
        }
        if self.frozen {
            return None;
        }
        let id = self.attributes.len();
        self.attributes.push(attr.to_string());
        self.attribute_ids.insert(attr.to_string(), id);
        Some(id)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn attribute_id(&self, attr: &str) -> Option<usize> {
        self.attribute_ids.get(attr).copied()
    }

    pub fn tag_id(&self, tag: &str) -> Option<usize> {
        self.tag_ids.get(tag).copied()
    }

    pub fn attribute(&self, id: usize) -> &str {
        &self.attributes[id]
    }

    pub fn tag(&self, id: usize) -> &str {
        &self.tags[id]
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn num_tags(&self) -> usize {
        self.tags.len()
    }
}

/// Indexes every attribute seen at least `min_count` times in `train`, in first-occurrence order.
pub fn build_index(
    train: &Dataset,
    tagset: &TagSet,
    template: &TemplateConfig,
    min_count: usize,
) -> Result<FeatureIndex> {
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut order = Vec::new();
    for s in &train.sentences {
        let words = s.surfaces();
        for i in 0..words.len() {
            for a in extract_attributes(&words, i, template) {
                let c = counts.entry(a).or_insert_with_key(|k| {
                    order.push(k.clone());
                    0
                });
                *c += 1;
            }
        }
    }
    let mut index = FeatureIndex::new(tagset);
    for a in order.iter().filter(|a| counts[*a] >= min_count.max(1)) {
        index.insert_attribute(a);
    }
    index.freeze();
    Ok(index)
}

/// Attribute ids per position plus gold tag ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSentence {
    pub attributes: Vec<Vec<usize>>,
    pub gold: Vec<usize>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.gold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gold.is_empty()
    }
}

/// Attribute ids for every position; attributes missing from the index are dropped.
pub fn encode_words<S: AsRef<str>>(words: &[S], index: &FeatureIndex, template: &TemplateConfig) -> Vec<Vec<usize>> {
    (0..words.len())
        .map(|i| {
            extract_attributes(words, i, template)
                .iter()
                .filter_map(|a| index.attribute_id(a))
                .collect()
        })
        .collect()
}

pub fn encode_dataset(ds: &Dataset, index: &FeatureIndex, template: &TemplateConfig) -> Result<Vec<EncodedSentence>> {
    ds.sentences
        .iter()
        .enumerate()
        .map(|(si, s)| {
            let gold = s
                .tokens
                .iter()
                .enumerate()
                .map(|(pi, t)| {
                    let tag = t.tag.to_string();
                    index.tag_id(&tag).ok_or(Error::UnknownTag {
                        sentence: si,
                        position: pi,
                        tag,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(EncodedSentence {
                attributes: encode_words(&s.surfaces(), index, template),
                gold,
            })
        })
        .collect()
}
