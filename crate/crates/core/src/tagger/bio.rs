//! Non-destructive tokenization and BIO encoding of entity spans.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotatedSentence, EntityLabel, EntitySpan};
use crate::error::{Error, Result};
use crate::text::char_slice;

/// A token and its char range in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub start: usize,
    pub end: usize,
}

/// Whitespace split, then every leading and trailing non-alphanumeric char
/// becomes its own token. Internal punctuation stays put ("3/4").
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut chunk: Vec<(usize, char)> = Vec::new();
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            flush(&mut chunk, &mut tokens);
        } else {
            chunk.push((i, c));
        }
    }
    flush(&mut chunk, &mut tokens);
    tokens
}

fn flush(chunk: &mut Vec<(usize, char)>, tokens: &mut Vec<Token>) {
    if chunk.is_empty() {
        return;
    }
    let single = |&(i, c): &(usize, char)| Token {
        surface: c.to_string(),
        start: i,
        end: i + 1,
    };
    let lead = chunk.iter().take_while(|(_, c)| !c.is_alphanumeric()).count();
    if lead == chunk.len() {
        tokens.extend(chunk.iter().map(single));
    } else {
        let trail = chunk
            .iter()
            .rev()
            .take_while(|(_, c)| !c.is_alphanumeric())
            .count();
        let core = &chunk[lead..chunk.len() - trail];
        tokens.extend(chunk[..lead].iter().map(single));
        tokens.push(Token {
            surface: core.iter().map(|(_, c)| c).collect(),
            start: core[0].0,
            end: core[core.len() - 1].0 + 1,
        });
        tokens.extend(chunk[chunk.len() - trail..].iter().map(single));
    }
    chunk.clear();
}

/// BIO tag. The declaration order is the tie-break order when scores are
/// equal: `O` first, then alphabetical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    O,
    BeginExtent,
    BeginGrade,
    BeginStage,
    InsideExtent,
    InsideGrade,
    InsideStage,
}

impl Tag {
    pub const ALL: [Tag; 7] = [
        Tag::O,
        Tag::BeginExtent,
        Tag::BeginGrade,
        Tag::BeginStage,
        Tag::InsideExtent,
        Tag::InsideGrade,
        Tag::InsideStage,
    ];
    pub const COUNT: usize = 7;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Tag {
        Tag::ALL[i]
    }

    pub fn begin(label: EntityLabel) -> Tag {
        match label {
            EntityLabel::Extent => Tag::BeginExtent,
            EntityLabel::Grade => Tag::BeginGrade,
            EntityLabel::Stage => Tag::BeginStage,
        }
    }

    pub fn inside(label: EntityLabel) -> Tag {
        match label {
            EntityLabel::Extent => Tag::InsideExtent,
            EntityLabel::Grade => Tag::InsideGrade,
            EntityLabel::Stage => Tag::InsideStage,
        }
    }

    pub fn label(self) -> Option<EntityLabel> {
        match self {
            Tag::O => None,
            Tag::BeginExtent | Tag::InsideExtent => Some(EntityLabel::Extent),
            Tag::BeginGrade | Tag::InsideGrade => Some(EntityLabel::Grade),
            Tag::BeginStage | Tag::InsideStage => Some(EntityLabel::Stage),
        }
    }

    pub fn is_inside(self) -> bool {
        matches!(self, Tag::InsideExtent | Tag::InsideGrade | Tag::InsideStage)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tag::O => "O",
            Tag::BeginExtent => "B-EXTENT",
            Tag::BeginGrade => "B-GRADE",
            Tag::BeginStage => "B-STAGE",
            Tag::InsideExtent => "I-EXTENT",
            Tag::InsideGrade => "I-GRADE",
            Tag::InsideStage => "I-STAGE",
        }
    }

    pub fn parse(s: &str) -> Option<Tag> {
        Tag::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Tag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Tag::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown tag {s:?}")))
    }
}

/// Tags aligned to `tokens` for `spans`.
pub fn encode(tokens: &[Token], spans: &[EntitySpan]) -> Result<Vec<Tag>> {
    let mut tags = vec![Tag::O; tokens.len()];
    for span in spans {
        let misaligned = || Error::Alignment {
            label: span.label.to_string(),
            start: span.start,
            end: span.end,
        };
        let mut first = true;
        for (i, t) in tokens.iter().enumerate() {
            let overlaps = t.start < span.end && t.end > span.start;
            if !overlaps {
                continue;
            }
            if t.start < span.start || t.end > span.end || tags[i] != Tag::O {
                return Err(misaligned());
            }
            tags[i] = if first {
                Tag::begin(span.label)
            } else {
                Tag::inside(span.label)
            };
            first = false;
        }
        if first {
            return Err(misaligned());
        }
    }
    Ok(tags)
}

pub fn spans_to_tags(sentence: &AnnotatedSentence) -> Result<Vec<Tag>> {
    encode(&tokenize(&sentence.text), &sentence.spans)
}

/// Repairs stray `I-X` tags into `B-X`.
pub fn repair(tags: &mut [Tag]) {
    let mut prev = Tag::O;
    for tag in tags.iter_mut() {
        if tag.is_inside() && prev.label() != tag.label() {
            *tag = Tag::begin(tag.label().unwrap());
        }
        prev = *tag;
    }
}

/// Merges tagged tokens into spans (after [`repair`]).
pub fn tags_to_spans(tokens: &[Token], tags: &[Tag], text: &str) -> Vec<EntitySpan> {
    let mut tags = tags.to_vec();
    repair(&mut tags);
    let mut spans: Vec<EntitySpan> = Vec::new();
    for (tok, tag) in tokens.iter().zip(&tags) {
        let Some(label) = tag.label() else { continue };
        match spans.last_mut() {
            Some(open) if tag.is_inside() && open.label == label => open.end = tok.end,
            _ => spans.push(EntitySpan {
                label,
                start: tok.start,
                end: tok.end,
                surface: String::new(),
            }),
        }
    }
    for s in &mut spans {
        s.surface = char_slice(text, s.start, s.end).unwrap_or_default().to_string();
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn surfaces(text: &str) -> Vec<String> {
        tokenize(text).into_iter().map(|t| t.surface).collect()
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(surfaces("grade b."), ["grade", "b", "."]);
        assert_eq!(surfaces("d:"), ["d", ":"]);
        assert!(tokenize("").is_empty());
        assert_eq!(surfaces("(3/4), ok"), ["(", "3/4", ")", ",", "ok"]);
        assert_eq!(surfaces(" -- "), ["-", "-"]);
        let t = tokenize("d: stage");
        assert_eq!((t[2].start, t[2].end), (3, 8));
    }

    #[test]
    fn row_1_encoding() {
        let s = AnnotatedSentence {
            note_id: "n".into(),
            text: "d: generalized stage iii grade c periodontitis.".into(),
            spans: vec![
                EntitySpan { label: EntityLabel::Extent, start: 3, end: 14, surface: String::new() },
                EntitySpan { label: EntityLabel::Stage, start: 15, end: 24, surface: String::new() },
                EntitySpan { label: EntityLabel::Grade, start: 25, end: 32, surface: String::new() },
            ],
        };
        // d : generalized stage iii grade c periodontitis .
        use Tag::*;
        assert_eq!(
            spans_to_tags(&s).unwrap(),
            [O, O, BeginExtent, BeginStage, InsideStage, BeginGrade, InsideGrade, O, O]
        );
    }

    #[test]
    fn no_spans_all_outside() {
        let s = AnnotatedSentence { note_id: "n".into(), text: "tx: srp".into(), spans: vec![] };
        assert_eq!(spans_to_tags(&s).unwrap(), [Tag::O; 3]);
    }

    #[test]
    fn crossing_span_is_an_error() {
        let s = AnnotatedSentence {
            note_id: "n".into(),
            text: "stage ii/iii".into(),
            spans: vec![EntitySpan { label: EntityLabel::Stage, start: 0, end: 8, surface: String::new() }],
        };
        match spans_to_tags(&s) {
            Err(Error::Alignment { label, start, end }) => {
                assert_eq!((label.as_str(), start, end), ("STAGE", 0, 8))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stray_inside_is_promoted() {
        let text = "d stage";
        let tokens = tokenize(text);
        let spans = tags_to_spans(&tokens, &[Tag::O, Tag::InsideStage], text);
        assert_eq!(spans.len(), 1);
        assert_eq!((spans[0].start, spans[0].end, spans[0].surface.as_str()), (2, 7, "stage"));
    }

    fn well_formed() -> impl Strategy<Value = Vec<Tag>> {
        proptest::collection::vec(0usize..7, 0..20).prop_map(|raw| {
            let mut tags: Vec<Tag> = raw.into_iter().map(Tag::from_index).collect();
            repair(&mut tags);
            tags
        })
    }

    proptest! {
        #[test]
        fn tokens_cover_text(text in "[a-c0-9 .,:\\-/\u{e9}\t\n]{0,40}") {
            let tokens = tokenize(&text);
            let chars: Vec<char> = text.chars().collect();
            let mut covered = vec![false; chars.len()];
            let mut last_end = 0;
            for t in &tokens {
                prop_assert!(t.start >= last_end && t.start < t.end);
                let s: String = chars[t.start..t.end].iter().collect();
                prop_assert_eq!(&s, &t.surface);
                for c in covered.iter_mut().take(t.end).skip(t.start) { *c = true; }
                last_end = t.end;
            }
            for (c, cov) in chars.iter().zip(&covered) {
                prop_assert_eq!(!c.is_whitespace(), *cov);
            }
        }

        #[test]
        fn encode_decode_identity(tags in well_formed()) {
            let text = vec!["w"; tags.len()].join(" ");
            let tokens = tokenize(&text);
            let spans = tags_to_spans(&tokens, &tags, &text);
            prop_assert_eq!(encode(&tokens, &spans).unwrap(), tags);
        }
    }
}
