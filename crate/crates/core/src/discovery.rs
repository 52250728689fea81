//! Class-name reasoning: infer the meta-category of the unlabeled images, ask
//! the VQA model for visual attributes, and have the LLM propose candidate
//! fine-grained class names.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompts::{fill, PromptPack};
use crate::providers::{ChatMessage, ChatProvider, ImageRef, VqaProvider};
use crate::workers::Workers;

/// All discovery calls run at temperature zero.
pub const DISCOVERY_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaCategory {
    pub name: String,
    pub support_count: usize,
}

impl MetaCategory {
    pub fn new(name: &str, support_count: usize) -> Result<Self> {
        let name = normalize_answer(name);
        if name.is_empty() {
            return Err(Error::Precondition("meta-category name is empty".into()));
        }
        Ok(Self { name, support_count })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributePair {
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeTable {
    /// One list per training image, in input order.
    pub per_image: Vec<Vec<AttributePair>>,
    /// Answers that could not be parsed as `key: value`.
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateNameSet {
    names: Vec<String>,
    source_meta: MetaCategory,
}

impl CandidateNameSet {
    /// Deduplicates under case-folding and whitespace normalization, keeping
    /// the first spelling seen.
    pub fn new(raw: impl IntoIterator<Item = String>, source_meta: MetaCategory) -> Self {
        let mut names = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for name in raw {
            let tidy = collapse_whitespace(&name);
            if tidy.is_empty() {
                continue;
            }
            if seen.insert(name_key(&tidy)) {
                names.push(tidy);
            }
        }
        Self { names, source_meta }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn source_meta(&self) -> &MetaCategory {
        &self.source_meta
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Comparison key for class names: case-folded, whitespace collapsed.
pub fn name_key(s: &str) -> String {
    collapse_whitespace(s).to_lowercase()
}

/// Lowercase, trim, drop surrounding quotes, trailing punctuation and a leading article.
pub fn normalize_answer(s: &str) -> String {
    let mut a = collapse_whitespace(s).to_lowercase();
    a = a
        .trim_matches(|c: char| c == '"' || c == '\'' || c.is_whitespace())
        .trim_end_matches(['.', '!', '?', ',', ';', ':'])
        .to_string();
    for article in ["a ", "an ", "the "] {
        if let Some(rest) = a.strip_prefix(article) {
            a = rest.to_string();
            break;
        }
    }
    a.trim().to_string()
}

pub fn infer_meta_category(
    train_images: &[ImageRef],
    vqa: &dyn VqaProvider,
    chat: &dyn ChatProvider,
    pack: &PromptPack,
    workers: &Workers,
) -> Result<MetaCategory> {
    if train_images.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    let answers = workers.map(train_images, |img| {
        vqa.vqa(img, &pack.meta_question).map(|a| normalize_answer(&a))
    })?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for a in answers.iter().filter(|a| !a.is_empty()) {
        *counts.entry(a.clone()).or_default() += 1;
    }
    let n = train_images.len();
    if let Some((name, &count)) = counts.iter().max_by_key(|(_, &c)| c) {
        if count * 2 > n {
            return MetaCategory::new(name, count);
        }
    }
    // No strict majority: let the LLM consolidate. The answer list is sorted so
    // the prompt does not depend on image order.
    let mut sorted = answers.clone();
    sorted.sort();
    let prompt = fill(
        &pack.consolidation_template,
        &[("question", pack.meta_question.as_str()), ("answers", &sorted.join(", "))],
    );
    let reply = chat.chat(&[ChatMessage::user(prompt)?], DISCOVERY_TEMPERATURE)?;
    let first_line = reply.lines().find(|l| !l.trim().is_empty()).unwrap_or_default();
    let name = normalize_answer(first_line);
    if name.is_empty() {
        return Err(Error::EmptyCompletion);
    }
    let support = counts.get(&name).copied().unwrap_or(0);
    MetaCategory::new(&name, support)
}

/// Parse a `key: value` VQA answer.
pub fn parse_attribute(answer: &str) -> Option<AttributePair> {
    let (k, v) = answer.split_once(':')?;
    let key = normalize_answer(k);
    let value = collapse_whitespace(v).trim_end_matches(['.', ';', ',']).trim().to_string();
    if key.is_empty() || value.is_empty() {
        return None;
    }
    Some(AttributePair { key, value })
}

pub fn extract_attributes(
    train_images: &[ImageRef],
    g: &MetaCategory,
    vqa: &dyn VqaProvider,
    pack: &PromptPack,
    workers: &Workers,
) -> Result<AttributeTable> {
    let questions: Vec<String> = pack
        .attribute_questions
        .iter()
        .map(|q| fill(q, &[("g", g.name.as_str())]))
        .collect();
    let dropped = AtomicUsize::new(0);
    let per_image = workers.map(train_images, |img| {
        let mut pairs: Vec<AttributePair> = Vec::new();
        for q in &questions {
            let answer = vqa.vqa(img, q)?;
            match parse_attribute(&answer) {
                Some(p) if !pairs.iter().any(|e| e.key == p.key) => pairs.push(p),
                Some(_) => {}
                None => {
                    dropped.fetch_add(1, Ordering::Relaxed);
                    tracing::warn!(image = %img, answer = %answer, "dropping unparseable attribute answer");
                }
            }
        }
        Ok(pairs)
    })?;
    Ok(AttributeTable {
        per_image,
        dropped: dropped.into_inner(),
    })
}

pub fn attribute_summary(attrs: &AttributeTable) -> String {
    if attrs.per_image.is_empty() {
        return "(none)".into();
    }
    attrs
        .per_image
        .iter()
        .enumerate()
        .map(|(i, pairs)| {
            let body = if pairs.is_empty() {
                "(no attributes)".to_string()
            } else {
                pairs
                    .iter()
                    .map(|p| format!("{}: {}", p.key, p.value))
                    .collect::<Vec<_>>()
                    .join("; ")
            };
            format!("image {}: {}", i + 1, body)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Chat for a bracketed list, with one repair turn if the first reply does not parse.
pub fn chat_for_list(chat: &dyn ChatProvider, prompt: &str, temperature: f64, repair: &str) -> Result<Vec<String>> {
    let first = ChatMessage::user(prompt)?;
    let raw = chat.chat(std::slice::from_ref(&first), temperature)?;
    match parse_name_list(&raw) {
        Ok(list) => Ok(list),
        Err(Error::UnparseableNameList) => {
            tracing::warn!("reply had no bracketed list, sending repair prompt");
            let messages = [first, ChatMessage::assistant(raw)?, ChatMessage::user(repair)?];
            let again = chat.chat(&messages, temperature)?;
            parse_name_list(&again)
        }
        Err(e) => Err(e),
    }
}

pub fn propose_candidate_names(
    g: &MetaCategory,
    attrs: &AttributeTable,
    chat: &dyn ChatProvider,
    pack: &PromptPack,
) -> Result<CandidateNameSet> {
    let prompt = fill(
        &pack.name_reasoning_template,
        &[("g", g.name.as_str()), ("attributes", &attribute_summary(attrs))],
    );
    let names = chat_for_list(chat, &prompt, DISCOVERY_TEMPERATURE, &pack.repair_instruction)?;
    let set = CandidateNameSet::new(names, g.clone());
    if set.is_empty() {
        return Err(Error::UnparseableNameList);
    }
    Ok(set)
}

/// Extract the first well-formed bracketed list from `raw`.
///
/// Items may be double- or single-quoted (with backslash escapes) or bare;
/// surrounding prose is ignored.
pub fn parse_name_list(raw: &str) -> Result<Vec<String>> {
    if raw.trim().is_empty() {
        return Err(Error::UnparseableNameList);
    }
    let chars: Vec<char> = raw.chars().collect();
    for start in chars.iter().enumerate().filter(|(_, &c)| c == '[').map(|(i, _)| i) {
        if let Some(items) = parse_list_at(&chars, start) {
            return Ok(items);
        }
    }
    Err(Error::UnparseableNameList)
}

fn parse_list_at(chars: &[char], start: usize) -> Option<Vec<String>> {
    let mut i = start + 1;
    let mut items = Vec::new();
    let skip_ws = |i: &mut usize| {
        while *i < chars.len() && chars[*i].is_whitespace() {
            *i += 1;
        }
    };
    loop {
        skip_ws(&mut i);
        let c = *chars.get(i)?;
        if c == ']' {
            return Some(items);
        }
        let item = if c == '"' || c == '\'' {
            let quote = c;
            i += 1;
            let mut s = String::new();
            loop {
                let c = *chars.get(i)?;
                i += 1;
                match c {
                    '\\' => {
                        let e = *chars.get(i)?;
                        i += 1;
                        s.push(match e {
                            'n' => '\n',
                            't' => '\t',
                            other => other,
                        });
                    }
                    c if c == quote => break,
                    c => s.push(c),
                }
            }
            skip_ws(&mut i);
            s
        } else {
            let from = i;
            while i < chars.len() && chars[i] != ',' && chars[i] != ']' {
                if chars[i] == '[' {
                    return None;
                }
                i += 1;
            }
            chars[from..i].iter().collect::<String>()
        };
        let item = item.trim().to_string();
        if !item.is_empty() {
            items.push(item);
        }
        match *chars.get(i)? {
            ',' => i += 1,
            ']' => return Some(items),
            _ => return None,
        }
    }
}

/// Products of the discovery stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discovery {
    pub meta: MetaCategory,
    pub attributes: AttributeTable,
    pub candidates: CandidateNameSet,
}

pub fn discover(
    train_images: &[ImageRef],
    vqa: &dyn VqaProvider,
    chat: &dyn ChatProvider,
    pack: &PromptPack,
    workers: &Workers,
) -> Result<Discovery> {
    let meta = infer_meta_category(train_images, vqa, chat, pack, workers)?;
    let attributes = extract_attributes(train_images, &meta, vqa, pack, workers)?;
    let candidates = propose_candidate_names(&meta, &attributes, chat, pack)?;
    Ok(Discovery {
        meta,
        attributes,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{Counting, FnChat, MockChat, MockVqa};
    use proptest::prelude::*;

    #[test]
    fn parse_examples() {
        assert_eq!(parse_name_list(r#"["a", "b"]"#).unwrap(), vec!["a", "b"]);
        assert_eq!(parse_name_list(r#"Sure! ["a"]"#).unwrap(), vec!["a"]);
        assert!(matches!(parse_name_list("no list here"), Err(Error::UnparseableNameList)));
        assert!(matches!(parse_name_list(""), Err(Error::UnparseableNameList)));
    }

    #[test]
    fn parse_tolerates_quirks() {
        assert_eq!(
            parse_name_list(r#"Here: ['Cooper\'s Hawk', "Say \"hi\"", bare name ] done"#).unwrap(),
            vec!["Cooper's Hawk", "Say \"hi\"", "bare name"]
        );
        assert_eq!(parse_name_list(r#"["Cooper's Hawk", "a, b"]"#).unwrap(), vec!["Cooper's Hawk", "a, b"]);
        assert_eq!(parse_name_list(r#"[unclosed ... then ["x"]"#).unwrap(), vec!["x"]);
        assert_eq!(parse_name_list("[]").unwrap(), Vec::<String>::new());
    }

    proptest! {
        #[test]
        fn json_lists_roundtrip(items in proptest::collection::vec("[ -~]{1,12}", 0..8)) {
            let expected: Vec<String> = items.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            let raw = format!("prefix {} suffix", serde_json::to_string(&items).unwrap());
            prop_assert_eq!(parse_name_list(&raw).unwrap(), expected);
        }
    }

    #[test]
    fn attribute_parsing() {
        assert_eq!(
            parse_attribute("color: yellow"),
            Some(AttributePair {
                key: "color".into(),
                value: "yellow".into()
            })
        );
        assert_eq!(parse_attribute("Color:  Bright Yellow.").unwrap().value, "Bright Yellow");
        assert_eq!(parse_attribute("no idea"), None);
        assert_eq!(parse_attribute("color:"), None);
    }

    #[test]
    fn answer_normalization() {
        assert_eq!(normalize_answer("  A Bird. "), "bird");
        assert_eq!(normalize_answer("\"an  Animal\""), "animal");
    }

    #[test]
    fn candidate_dedupe() {
        let meta = MetaCategory::new("dog", 1).unwrap();
        let set = CandidateNameSet::new(vec!["Husky".into(), " husky ".into(), "Pug".into(), "".into()], meta);
        assert_eq!(set.names(), &["Husky", "Pug"]);
    }

    fn descriptor_images(dir: &std::path::Path, cats: &[&str]) -> Vec<ImageRef> {
        cats.iter()
            .enumerate()
            .map(|(i, c)| {
                let p = dir.join(format!("img{i}.txt"));
                std::fs::write(&p, format!("MOCKIMG v1\ncategory: {c}\ncolor: c{i}\n")).unwrap();
                ImageRef::new(p)
            })
            .collect()
    }

    #[test]
    fn meta_unanimity_and_majority() {
        let dir = tempfile::tempdir().unwrap();
        let pack = PromptPack::default();
        let w = Workers::new(2).unwrap();
        let chat = Counting::new(MockChat::new(1));
        let imgs = descriptor_images(dir.path(), &["bird"; 6]);
        let g = infer_meta_category(&imgs, &MockVqa::new(1), &chat, &pack, &w).unwrap();
        assert_eq!(g, MetaCategory::new("bird", 6).unwrap());

        let imgs = descriptor_images(dir.path(), &["bird", "animal", "bird"]);
        let g = infer_meta_category(&imgs, &MockVqa::new(1), &chat, &pack, &w).unwrap();
        assert_eq!(g.name, "bird");
        assert_eq!(g.support_count, 2);
        assert_eq!(chat.calls(), 0);
    }

    #[test]
    fn meta_split_is_consolidated() {
        let dir = tempfile::tempdir().unwrap();
        let pack = PromptPack::default();
        let w = Workers::new(2).unwrap();
        let chat = Counting::new(MockChat::new(1));
        let imgs = descriptor_images(dir.path(), &["bird", "animal", "creature"]);
        let g = infer_meta_category(&imgs, &MockVqa::new(1), &chat, &pack, &w).unwrap();
        assert_eq!(chat.calls(), 1);
        assert_eq!(g, MetaCategory::new("animal", 1).unwrap());

        let mut rev = imgs.clone();
        rev.reverse();
        assert_eq!(infer_meta_category(&rev, &MockVqa::new(1), &chat, &pack, &w).unwrap(), g);
    }

    #[test]
    fn meta_needs_images() {
        let w = Workers::new(1).unwrap();
        let r = infer_meta_category(&[], &MockVqa::new(1), &MockChat::new(1), &PromptPack::default(), &w);
        assert!(matches!(r, Err(Error::EmptyTrainSet)));
    }

    #[test]
    fn attribute_table_counts_drops() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        std::fs::write(&p, "MOCKIMG v1\ncategory: bird\ncolor: yellow\nsize: small\n").unwrap();
        let w = Workers::new(1).unwrap();
        let g = MetaCategory::new("bird", 1).unwrap();
        let table = extract_attributes(&[ImageRef::new(p)], &g, &MockVqa::new(1), &PromptPack::default(), &w).unwrap();
        assert_eq!(
            table.per_image[0],
            vec![
                AttributePair { key: "color".into(), value: "yellow".into() },
                AttributePair { key: "size".into(), value: "small".into() },
            ]
        );
        // shape, parts and background fall through to the unparseable bank
        assert_eq!(table.dropped, 3);
    }

    #[test]
    fn proposal_parses_and_dedupes() {
        let g = MetaCategory::new("dog", 1).unwrap();
        let chat = FnChat::new(|_, _| Ok(r#"["Husky", "husky"]"#.into()));
        let set = propose_candidate_names(&g, &AttributeTable::default(), &chat, &PromptPack::default()).unwrap();
        assert_eq!(set.names(), &["Husky"]);

        let chat = FnChat::new(|_, _| Ok(r#"["Pine Warbler", "Black Tern"]"#.into()));
        let set = propose_candidate_names(&g, &AttributeTable::default(), &chat, &PromptPack::default()).unwrap();
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn proposal_repairs_once() {
        let g = MetaCategory::new("dog", 1).unwrap();
        let chat = Counting::new(FnChat::new(|msgs, _| {
            Ok(if msgs.len() == 1 { "Husky and Pug".into() } else { r#"["Husky", "Pug"]"#.into() })
        }));
        let set = propose_candidate_names(&g, &AttributeTable::default(), &chat, &PromptPack::default()).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(chat.calls(), 2);

        let stubborn = Counting::new(FnChat::new(|_, _| Ok("I cannot".into())));
        let r = propose_candidate_names(&g, &AttributeTable::default(), &stubborn, &PromptPack::default());
        assert!(matches!(r, Err(Error::UnparseableNameList)));
        assert_eq!(stubborn.calls(), 2);
    }
}
