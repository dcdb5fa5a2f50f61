//! CoNLL-style corpora annotated with IOB2 tags.
//!
//! A document is a sequence of sentences separated by blank lines. Each
//! non-blank line holds one token and its tag in configurable columns. Lines
//! starting with `#` between sentences carry metadata: `# id = <text>` sets
//! the sentence id and `# source = <label>` records which dataset a mixed
//! sentence came from. Other comment lines are ignored.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A single IOB tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    Outside,
    Begin(String),
    Inside(String),
}

impl Tag {
    /// Entity class carried by the tag, `None` for `O`.
    pub fn class(&self) -> Option<&str> {
        match self {
            Tag::Outside => None,
            Tag::Begin(c) | Tag::Inside(c) => Some(c),
        }
    }

    /// The tag with its `B-`/`I-` prefix stripped; `O` stays `O`.
    pub fn collapsed(&self) -> &str {
        self.class().unwrap_or("O")
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "O" {
            return Ok(Tag::Outside);
        }
        let (ctor, class): (fn(String) -> Tag, &str) = if let Some(c) = s.strip_prefix("B-") {
            (Tag::Begin, c)
        } else if let Some(c) = s.strip_prefix("I-") {
            (Tag::Inside, c)
        } else {
            return Err(Error::InvalidTag(s.to_string()));
        };
        if class.is_empty() || class.chars().any(char::is_whitespace) {
            return Err(Error::InvalidTag(s.to_string()));
        }
        Ok(ctor(class.to_string()))
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str("O"),
            Tag::Begin(c) => write!(f, "B-{c}"),
            Tag::Inside(c) => write!(f, "I-{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    surface: String,
    pub tag: Tag,
    /// Language id, when a language column is configured. Never used as a feature.
    pub lang: Option<String>,
}

impl Token {
    pub fn new(surface: impl Into<String>, tag: Tag) -> Result<Self> {
        let surface = surface.into();
        if surface.is_empty() {
            return Err(Error::InvalidToken("empty surface".into()));
        }
        if surface.chars().any(char::is_whitespace) {
            return Err(Error::InvalidToken(format!("{surface:?} contains whitespace")));
        }
        Ok(Token {
            surface,
            tag,
            lang: None,
        })
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: Option<String>,
    /// Label of the dataset this sentence was drawn from, set by [`mix_datasets`].
    pub source: Option<String>,
    pub tokens: Vec<Token>,
}

impl Sentence {
    /// Builds a sentence from `(surface, tag)` pairs.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let tokens = pairs
            .into_iter()
            .map(|(w, t)| Token::new(w, t.parse()?))
            .collect::<Result<Vec<_>>>()?;
        if tokens.is_empty() {
            return Err(Error::InvalidToken("sentence has no tokens".into()));
        }
        Ok(Sentence {
            id: None,
            source: None,
            tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(Token::surface).collect()
    }

    pub fn tags(&self) -> Vec<Tag> {
        self.tokens.iter().map(|t| t.tag.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub source_label: String,
    pub sentences: Vec<Sentence>,
}

impl Dataset {
    pub fn new(source_label: impl Into<String>, sentences: Vec<Sentence>) -> Self {
        Dataset {
            source_label: source_label.into(),
            sentences,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.source_label = label.into();
        self
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Separator {
    Tab,
    Whitespace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagColumn {
    Last,
    Index(usize),
}

/// Which columns of a CoNLL line hold the token, tag and (optionally) language id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSpec {
    pub token_column: usize,
    pub tag_column: TagColumn,
    pub lang_column: Option<usize>,
    pub separator: Separator,
    /// Lines lacking a tag column are read with tag `O` instead of failing.
    pub optional_tags: bool,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        ColumnSpec {
            token_column: 0,
            tag_column: TagColumn::Last,
            lang_column: None,
            separator: Separator::Whitespace,
            optional_tags: false,
        }
    }
}

impl ColumnSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tag_column == TagColumn::Index(self.token_column) {
            return Err(Error::InvalidConfig("token and tag columns must differ".into()));
        }
        Ok(())
    }
}

fn parse_metadata(line: &str) -> Option<(&str, &str)> {
    let body = line.strip_prefix('#')?.trim_start();
    for key in ["id", "source"] {
        if let Some(rest) = body.strip_prefix(key) {
            if rest.is_empty() || rest.starts_with(|c: char| c.is_whitespace() || c == '=') {
                let value = rest.trim_start();
                let value = value.strip_prefix('=').unwrap_or(value).trim();
                return Some((key, value));
            }
        }
    }
    None
}

/// Parses a CoNLL document. Blank lines delimit sentences; sentences are returned in file order.
pub fn parse_conll(text: &str, columns: &ColumnSpec) -> Result<Dataset> {
    columns.validate()?;

    let mut sentences = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    let mut id = None;
    let mut source = None;

    let flush =
        |tokens: &mut Vec<Token>, id: &mut Option<String>, source: &mut Option<String>, out: &mut Vec<Sentence>| {
            if !tokens.is_empty() {
                out.push(Sentence {
                    id: id.take(),
                    source: source.take(),
                    tokens: std::mem::take(tokens),
                });
            }
        };

    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            flush(&mut tokens, &mut id, &mut source, &mut sentences);
            id = None;
            source = None;
            continue;
        }
        if tokens.is_empty() && line.starts_with('#') {
            match parse_metadata(line) {
                Some(("id", v)) => id = Some(v.to_string()),
                Some(("source", v)) => source = Some(v.to_string()),
                _ => {}
            }
            continue;
        }
        tokens.push(parse_token_line(line, line_no, columns)?);
    }
    flush(&mut tokens, &mut id, &mut source, &mut sentences);

    Ok(Dataset::new(String::new(), sentences))
}

fn parse_token_line(line: &str, line_no: usize, columns: &ColumnSpec) -> Result<Token> {
    let fields: Vec<&str> = match columns.separator {
        Separator::Tab => line.split('\t').collect(),
        Separator::Whitespace => line.split_whitespace().collect(),
    };
    let err = |message: String| Error::Parse { line: line_no, message };

    let mut required = columns.token_column + 1;
    if let Some(l) = columns.lang_column {
        required = required.max(l + 1);
    }
    let tag_index = match columns.tag_column {
        TagColumn::Index(i) => {
            if !columns.optional_tags {
                required = required.max(i + 1);
            }
            Some(i).filter(|&i| i < fields.len())
        }
        TagColumn::Last => {
            if !columns.optional_tags {
                required = required.max(columns.token_column + 2);
            }
            Some(fields.len() - 1).filter(|&i| i > columns.token_column && fields.len() >= 2)
        }
    };
    if fields.len() < required {
        return Err(err(format!(
            "expected at least {required} columns, found {}",
            fields.len()
        )));
    }

    let tag = match tag_index {
        Some(i) => fields[i].parse::<Tag>().map_err(|e| err(e.to_string()))?,
        None => Tag::Outside,
    };
    let mut token = Token::new(fields[columns.token_column], tag).map_err(|e| err(e.to_string()))?;
    token.lang = columns.lang_column.map(|i| fields[i].to_string());
    Ok(token)
}

/// Serializes to canonical two-column `token<TAB>tag` form.
pub fn write_conll(ds: &Dataset) -> String {
    let mut out = String::new();
    for (i, s) in ds.sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        if let Some(id) = &s.id {
            out.push_str(&format!("# id = {id}\n"));
        }
        if let Some(src) = &s.source {
            out.push_str(&format!("# source = {src}\n"));
        }
        for t in &s.tokens {
            out.push_str(&t.surface);
            out.push('\t');
            out.push_str(&t.tag.to_string());
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub sentence: usize,
    pub position: usize,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "sentence {}, position {}: {}",
            self.sentence, self.position, self.reason
        )
    }
}

fn continues(prev: Option<&Tag>, class: &str) -> bool {
    matches!(prev, Some(Tag::Begin(c) | Tag::Inside(c)) if c == class)
}

/// Strict IOB2 check: every `I-X` must follow `B-X` or `I-X`.
pub fn iob_violations(ds: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    for (si, s) in ds.sentences.iter().enumerate() {
        let mut prev: Option<&Tag> = None;
        for (pi, t) in s.tokens.iter().enumerate() {
            if let Tag::Inside(c) = &t.tag {
                if !continues(prev, c) {
                    let reason = match prev {
                        None => format!("I-{c} at sentence start"),
                        Some(p) => format!("I-{c} follows {p}"),
                    };
                    out.push(Violation {
                        sentence: si,
                        position: pi,
                        reason,
                    });
                }
            }
            prev = Some(&t.tag);
        }
    }
    out
}

/// Rewrites every stray `I-X` to `B-X` in place. Returns the number of rewrites.
pub fn repair_tags(tags: &mut [Tag]) -> usize {
    let mut fixed = 0;
    for i in 0..tags.len() {
        if let Tag::Inside(c) = &tags[i] {
            let prev = i.checked_sub(1).map(|p| &tags[p]);
            if !continues(prev, c) {
                tags[i] = Tag::Begin(c.clone());
                fixed += 1;
            }
        }
    }
    fixed
}

pub fn repair_iob(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    for s in &mut out.sentences {
        let mut tags = s.tags();
        if repair_tags(&mut tags) > 0 {
            for (t, tag) in s.tokens.iter_mut().zip(tags) {
                t.tag = tag;
            }
        }
    }
    out
}

/// The closed tag inventory: `O` first, remaining tags in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    tags: Vec<String>,
}

impl TagSet {
    /// Builds a tag set from arbitrary tags, adding `O` and any missing `B-X`.
    pub fn from_tags<'a>(tags: impl IntoIterator<Item = &'a Tag>) -> Self {
        let mut set = BTreeSet::new();
        for t in tags {
            match t {
                Tag::Outside => {}
                Tag::Begin(_) => {
                    set.insert(t.to_string());
                }
                Tag::Inside(c) => {
                    set.insert(t.to_string());
                    set.insert(Tag::Begin(c.clone()).to_string());
                }
            }
        }
        let mut tags = vec!["O".to_string()];
        tags.extend(set);
        TagSet { tags }
    }

    /// Reconstructs a tag set from its serialized order, checking the invariants.
    pub fn from_ordered(tags: Vec<String>) -> Result<Self> {
        let parsed = tags.iter().map(|t| t.parse::<Tag>()).collect::<Result<Vec<_>>>()?;
        let rebuilt = TagSet::from_tags(&parsed);
        if rebuilt.tags != tags {
            return Err(Error::InvalidConfig(format!(
                "tag list {tags:?} is not a canonical tag set"
            )));
        }
        Ok(rebuilt)
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }

    pub fn classes(&self) -> BTreeSet<String> {
        self.tags
            .iter()
            .filter_map(|t| t.get(2..).filter(|_| t != "O"))
            .map(str::to_string)
            .collect()
    }
}

pub fn induce_tagset(datasets: &[&Dataset]) -> TagSet {
    TagSet::from_tags(
        datasets
            .iter()
            .flat_map(|d| &d.sentences)
            .flat_map(|s| &s.tokens)
            .map(|t| &t.tag),
    )
}

/// Concatenates `primary` with `auxiliaries` in argument order, optionally
/// shuffling the result with a seeded permutation. No deduplication.
///
/// When at least one auxiliary dataset is given, every sentence without a
/// source annotation is stamped with its dataset's `source_label`.
pub fn mix_datasets(primary: &Dataset, auxiliaries: &[Dataset], seed: u64, shuffle: bool) -> Dataset {
    let label = std::iter::once(primary)
        .chain(auxiliaries)
        .map(|d| d.source_label.as_str())
        .collect::<Vec<_>>()
        .join("+");
    let stamp = !auxiliaries.is_empty();
    let mut sentences = Vec::with_capacity(primary.len() + auxiliaries.iter().map(Dataset::len).sum::<usize>());
    for ds in std::iter::once(primary).chain(auxiliaries) {
        sentences.extend(ds.sentences.iter().cloned().map(|mut s| {
            if stamp && s.source.is_none() && !ds.source_label.is_empty() {
                s.source = Some(ds.source_label.clone());
            }
            s
        }));
    }
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sentences.shuffle(&mut rng);
    }
    Dataset::new(label, sentences)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CODE_MIXED: &str = "hameM O\nthis B-CW\nmagic I-CW\nmoment I-CW\n\n";

    fn tags_of(s: &Sentence) -> Vec<String> {
        s.tokens.iter().map(|t| t.tag.to_string()).collect()
    }

    fn one(pairs: &[(&str, &str)]) -> Dataset {
        Dataset::new("t", vec![Sentence::from_pairs(pairs.iter().copied()).unwrap()])
    }

    #[test]
    fn parses_code_mixed_sentence() {
        let ds = parse_conll(CODE_MIXED, &ColumnSpec::default()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(tags_of(&ds.sentences[0]), ["O", "B-CW", "I-CW", "I-CW"]);
        assert_eq!(ds.sentences[0].surfaces(), ["hameM", "this", "magic", "moment"]);
    }

    #[test]
    fn empty_document_is_empty_dataset() {
        assert!(parse_conll("", &ColumnSpec::default()).unwrap().is_empty());
        assert!(parse_conll("\n\n\n", &ColumnSpec::default()).unwrap().is_empty());
    }

    #[test]
    fn consecutive_blank_lines_collapse() {
        let text = "a O\n\n\n\nb B-X\n\n";
        let ds = parse_conll(text, &ColumnSpec::default()).unwrap();
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn missing_column_reports_line() {
        let err = parse_conll("a O\nlonely\n", &ColumnSpec::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn bad_tag_reports_line() {
        let err = parse_conll("a O\nb X-CW\n", &ColumnSpec::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_conll("a B-\n", &ColumnSpec::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn multiconer_layout_and_metadata() {
        let text = "# id 5a3c domain=mix\nwhat _ _ O\ncity _ _ O\n\n# id = second\ndig _ _ B-CW\n";
        let ds = parse_conll(text, &ColumnSpec::default()).unwrap();
        assert_eq!(ds.sentences[0].id.as_deref(), Some("5a3c domain=mix"));
        assert_eq!(ds.sentences[1].id.as_deref(), Some("second"));
        assert_eq!(tags_of(&ds.sentences[1]), ["B-CW"]);
    }

    #[test]
    fn hash_inside_sentence_is_a_token() {
        let ds = parse_conll("a O\n# O\n", &ColumnSpec::default()).unwrap();
        assert_eq!(ds.sentences[0].surfaces(), ["a", "#"]);
    }

    #[test]
    fn language_column_is_kept() {
        let cols = ColumnSpec {
            lang_column: Some(1),
            ..ColumnSpec::default()
        };
        let ds = parse_conll("hameM Hi O\nthis En B-CW\n", &cols).unwrap();
        let langs: Vec<_> = ds.sentences[0].tokens.iter().map(|t| t.lang.clone().unwrap()).collect();
        assert_eq!(langs, ["Hi", "En"]);
    }

    #[test]
    fn tab_separator_keeps_fields_exact() {
        let cols = ColumnSpec {
            separator: Separator::Tab,
            ..ColumnSpec::default()
        };
        let ds = parse_conll("a\tb\tB-LOC\n", &cols).unwrap();
        assert_eq!(tags_of(&ds.sentences[0]), ["B-LOC"]);
        assert!(parse_conll("a b B-LOC\n", &cols).is_err());
    }

    #[test]
    fn optional_tags_default_to_outside() {
        let cols = ColumnSpec {
            optional_tags: true,
            ..ColumnSpec::default()
        };
        let ds = parse_conll("solo\npair B-CW\n", &cols).unwrap();
        assert_eq!(tags_of(&ds.sentences[0]), ["O", "B-CW"]);
    }

    #[test]
    fn writes_one_separator_between_sentences() {
        let text = "a\tO\n\nb\tB-X\n";
        let ds = parse_conll(text, &ColumnSpec::default()).unwrap();
        let out = write_conll(&ds);
        assert_eq!(out, text);
        assert_eq!(out.matches("\n\n").count(), 1);
        assert_eq!(write_conll(&Dataset::default()), "");
    }

    #[test]
    fn round_trip_annotated_sentences() {
        let text = "# id = t1\nhameM O\nthis B-CW\nmagic I-CW\nmoment I-CW\n\n\
                    what O\ncity O\nis O\ndig B-CW\nme I-CW\nout I-CW\nin? O\n";
        let ds = parse_conll(text, &ColumnSpec::default()).unwrap();
        let again = parse_conll(&write_conll(&ds), &ColumnSpec::default()).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn strict_accepts_valid_sequence() {
        let ds = one(&[("hameM", "O"), ("this", "B-CW"), ("magic", "I-CW"), ("moment", "I-CW")]);
        assert!(iob_violations(&ds).is_empty());
    }

    #[test]
    fn repair_rewrites_stray_inside() {
        let ds = one(&[("a", "O"), ("b", "I-CW")]);
        assert_eq!(iob_violations(&ds).len(), 1);
        assert_eq!(tags_of(&repair_iob(&ds).sentences[0]), ["O", "B-CW"]);

        let ds = one(&[("a", "I-PROD"), ("b", "I-CW")]);
        let v = iob_violations(&ds);
        assert_eq!((v[0].sentence, v[0].position), (0, 0));
        assert_eq!((v[1].sentence, v[1].position), (0, 1));
        let fixed = repair_iob(&ds);
        assert_eq!(tags_of(&fixed.sentences[0]), ["B-PROD", "B-CW"]);
        assert_eq!(repair_iob(&fixed), fixed);
        assert!(iob_violations(&fixed).is_empty());
    }

    #[test]
    fn tagset_induction() {
        let ds = parse_conll(CODE_MIXED, &ColumnSpec::default()).unwrap();
        assert_eq!(induce_tagset(&[&ds]).tags(), ["O", "B-CW", "I-CW"]);

        let only_o = one(&[("a", "O"), ("b", "O")]);
        assert_eq!(induce_tagset(&[&only_o]).tags(), ["O"]);

        let closure = one(&[("a", "O"), ("b", "I-PROD")]);
        let ts = induce_tagset(&[&closure]);
        assert_eq!(ts.tags(), ["O", "B-PROD", "I-PROD"]);
        assert_eq!(ts.classes().into_iter().collect::<Vec<_>>(), ["PROD"]);
    }

    #[test]
    fn tagset_from_ordered_rejects_non_canonical() {
        assert!(TagSet::from_ordered(vec!["O".into(), "B-A".into()]).is_ok());
        assert!(TagSet::from_ordered(vec!["B-A".into(), "O".into()]).is_err());
        assert!(TagSet::from_ordered(vec!["O".into(), "I-A".into()]).is_err());
    }

    #[test]
    fn mixing_is_additive_and_labels_sources() {
        let cm = one(&[("a", "O")]).with_label("cm-train");
        let ml = Dataset::new(
            "ml-train",
            vec![
                Sentence::from_pairs([("b", "B-LOC")]).unwrap(),
                Sentence::from_pairs([("c", "O")]).unwrap(),
            ],
        );
        let mixed = mix_datasets(&cm, std::slice::from_ref(&ml), 1, false);
        assert_eq!(mixed.len(), 3);
        assert_eq!(mixed.source_label, "cm-train+ml-train");
        let sources: Vec<_> = mixed.sentences.iter().map(|s| s.source.as_deref().unwrap()).collect();
        assert_eq!(sources, ["cm-train", "ml-train", "ml-train"]);

        assert_eq!(mix_datasets(&cm, &[], 1, false), cm);
    }

    #[test]
    fn shuffled_mix_depends_only_on_seed() {
        let primary = Dataset::new(
            "p",
            (0..50)
                .map(|i| {
                    let w = format!("w{i}");
                    Sentence::from_pairs([(w.as_str(), "O")]).unwrap()
                })
                .collect(),
        );
        let aux = vec![primary.clone().with_label("q")];
        let a = write_conll(&mix_datasets(&primary, &aux, 13, true));
        let b = write_conll(&mix_datasets(&primary, &aux, 13, true));
        let c = write_conll(&mix_datasets(&primary, &aux, 14, true));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
