//! Descriptor synthesis from consensus keywords and the closed-vocabulary tokenizer.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::voicedb::schema::{negated, KeywordSchema, KeywordValue, Slot, FILLER_WORDS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    /// Keywords the descriptor mentions, in schema order.
    pub keywords: Vec<String>,
    pub text: String,
}

fn join_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// Renders `a {age} {gender} voice with a {tone} tone and {texture} texture that
/// sounds {traits}, suited for {roles}` with absent parts left out.
pub fn render_prompt(schema: &KeywordSchema, values: &BTreeMap<String, KeywordValue>) -> Result<String> {
    let mut head = Vec::new();
    let (mut tone, mut texture) = (None, None);
    let (mut traits, mut roles, mut not_roles) = (Vec::new(), Vec::new(), Vec::new());
    for spec in &schema.keywords {
        let Some(value) = values.get(&spec.name) else { continue };
        if !spec.accepts(value) {
            return Err(Error::Domain(format!("{value} is not a valid value of {}", spec.name)));
        }
        match spec.slot {
            Slot::Head => head.push(spec.phrase(value)),
            Slot::Tone => tone = Some(spec.phrase(value)),
            Slot::Texture => texture = Some(spec.phrase(value)),
            Slot::Trait => traits.push(spec.phrase(value)),
            Slot::Role => match value {
                KeywordValue::Flag(false) => not_roles.push(spec.phrases[0].clone()),
                _ => roles.push(spec.phrase(value)),
            },
        }
    }
    if let Some(unknown) = values.keys().find(|k| schema.get(k).is_none()) {
        return Err(Error::Vocabulary(format!("keyword {unknown:?} is not in the schema")));
    }
    let mut text = String::from("a ");
    for h in &head {
        text.push_str(h);
        text.push(' ');
    }
    text.push_str("voice");
    match (tone, texture) {
        (Some(t), Some(x)) => text.push_str(&format!(" with a {t} tone and {x} texture")),
        (Some(t), None) => text.push_str(&format!(" with a {t} tone")),
        (None, Some(x)) => text.push_str(&format!(" with a {x} texture")),
        (None, None) => {}
    }
    if !traits.is_empty() {
        text.push_str(" that sounds ");
        text.push_str(&join_list(&traits));
    }
    if !roles.is_empty() {
        text.push_str(", suited for ");
        text.push_str(&join_list(&roles));
    }
    if !not_roles.is_empty() {
        text.push_str(", not suited for ");
        text.push_str(&join_list(&not_roles));
    }
    Ok(text)
}

/// Non-empty subset masks over `k` items: larger subsets first, then by mask value.
fn canonical_subsets(k: usize) -> Vec<u64> {
    let mut masks: Vec<u64> = (1..(1u64 << k)).collect();
    masks.sort_by_key(|m| (std::cmp::Reverse(m.count_ones()), *m));
    masks
}

/// Every non-empty keyword subset rendered once. Above `cap`, the full set and all
/// leave-one-out subsets are kept and a seeded shuffle of the rest fills up to `cap`.
pub fn generate_prompt_set(
    schema: &KeywordSchema,
    consensus: &BTreeMap<String, KeywordValue>,
    cap: usize,
    seed: u64,
) -> Result<Vec<Prompt>> {
    if consensus.is_empty() {
        return Err(Error::Domain("cannot generate prompts from an empty consensus".into()));
    }
    if cap == 0 {
        return Err(Error::Config("prompt cap must be at least 1".into()));
    }
    let mut keys: Vec<&String> = consensus.keys().collect();
    keys.sort_by_key(|k| schema.position(k).unwrap_or(usize::MAX));
    if keys.len() > 20 {
        return Err(Error::Domain(format!("{} keywords is too many to enumerate", keys.len())));
    }
    let mut seen = HashSet::new();
    let mut all = Vec::new();
    for mask in canonical_subsets(keys.len()) {
        let chosen: Vec<String> = keys
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, k)| (*k).clone())
            .collect();
        let values: BTreeMap<String, KeywordValue> = chosen.iter().map(|k| (k.clone(), consensus[k].clone())).collect();
        let text = render_prompt(schema, &values)?;
        if seen.insert(text.clone()) {
            all.push((mask.count_ones() as usize, Prompt { keywords: chosen, text }));
        }
    }
    if all.len() <= cap {
        return Ok(all.into_iter().map(|(_, p)| p).collect());
    }
    let k = keys.len();
    let fixed = all.iter().take_while(|(n, _)| *n + 1 >= k).count();
    let mut rest: Vec<usize> = (fixed..all.len()).collect();
    rest.shuffle(&mut rng::stream(seed, "prompts"));
    let mut keep: Vec<usize> = (0..fixed.min(cap)).collect();
    keep.extend(rest.into_iter().take(cap.saturating_sub(fixed)));
    keep.sort_unstable();
    let mut slots: Vec<Option<Prompt>> = all.into_iter().map(|(_, p)| Some(p)).collect();
    Ok(keep.into_iter().filter_map(|i| slots[i].take()).collect())
}

pub fn generate_prompts(
    schema: &KeywordSchema,
    consensus: &BTreeMap<String, KeywordValue>,
    cap: usize,
    seed: u64,
) -> Result<Vec<String>> {
    Ok(generate_prompt_set(schema, consensus, cap, seed)?
        .into_iter()
        .map(|p| p.text)
        .collect())
}

/// Maps descriptors to token ids `1..=V` over the schema vocabulary. Id 0 is the
/// unconditional token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tokenizer {
    vocab: Vec<String>,
}

pub const UNCONDITIONAL_TOKEN: usize = 0;

impl Tokenizer {
    pub fn new(schema: &KeywordSchema) -> Self {
        Self {
            vocab: schema.vocabulary(),
        }
    }

    pub fn from_vocab(mut vocab: Vec<String>) -> Self {
        vocab.sort();
        vocab.dedup();
        Self { vocab }
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Rows of a token table: the vocabulary plus the unconditional token.
    pub fn table_size(&self) -> usize {
        self.vocab.len() + 1
    }

    pub fn words(text: &str) -> Vec<String> {
        let lower = text.to_lowercase();
        let raw: Vec<&str> = lower
            .split(|c: char| !(c.is_alphanumeric() || c == '_'))
            .filter(|w| !w.is_empty())
            .collect();
        let mut out = Vec::new();
        let mut negate = false;
        for w in raw {
            if w == "not" {
                negate = true;
                continue;
            }
            if FILLER_WORDS.contains(&w) {
                continue;
            }
            out.push(if negate { negated(w) } else { w.to_string() });
            negate = false;
        }
        out
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let words = Self::words(text);
        if words.is_empty() {
            return Err(Error::Vocabulary(format!("prompt {text:?} contains no keywords")));
        }
        words
            .iter()
            .map(|w| {
                self.vocab
                    .binary_search(w)
                    .map(|i| i + 1)
                    .map_err(|_| Error::Vocabulary(format!("unknown word {w:?} in prompt {text:?}")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn consensus(pairs: &[(&str, KeywordValue)]) -> BTreeMap<String, KeywordValue> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    fn label(s: &str) -> KeywordValue {
        KeywordValue::Label(s.into())
    }

    fn six() -> BTreeMap<String, KeywordValue> {
        consensus(&[
            ("age", label("young")),
            ("gender", label("male")),
            ("brightness", KeywordValue::Likert(1)),
            ("roughness", KeywordValue::Likert(5)),
            ("warm", KeywordValue::Flag(true)),
            ("storytelling", KeywordValue::Flag(false)),
        ])
    }

    #[test]
    fn template_renders() {
        let s = KeywordSchema::default();
        let text = render_prompt(&s, &consensus(&[("age", label("young")), ("gender", label("male")), ("brightness", KeywordValue::Likert(2))])).unwrap();
        assert_eq!(text, "a young male voice with a dark tone");
        let full = render_prompt(&s, &six()).unwrap();
        assert_eq!(full, "a young male voice with a dark tone and rough texture that sounds warm, not suited for storytelling");
    }

    #[test]
    fn subset_counts() {
        let s = KeywordSchema::default();
        let mut c = six();
        assert_eq!(generate_prompts(&s, &c, 50, 1).unwrap().len(), 50);
        c.remove("warm");
        c.remove("storytelling");
        assert_eq!(generate_prompts(&s, &c, 50, 1).unwrap().len(), 15);
        let one = consensus(&[("gender", label("female"))]);
        assert_eq!(generate_prompts(&s, &one, 50, 1).unwrap(), vec!["a female voice".to_string()]);
        assert!(matches!(generate_prompts(&s, &BTreeMap::new(), 50, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn capped_set_keeps_full_and_leave_one_out() {
        let s = KeywordSchema::default();
        let c = six();
        let prompts = generate_prompt_set(&s, &c, 50, 9).unwrap();
        assert_eq!(prompts.len(), 50);
        let sets: Vec<&Vec<String>> = prompts.iter().map(|p| &p.keywords).collect();
        let keys: Vec<String> = prompts[0].keywords.clone();
        assert_eq!(keys.len(), 6);
        for drop in &keys {
            let loo: Vec<String> = keys.iter().filter(|k| *k != drop).cloned().collect();
            assert!(sets.contains(&&loo), "missing leave-one-out without {drop}");
        }
    }

    #[test]
    fn tokenizer_round_trips_known_words_and_rejects_others() {
        let s = KeywordSchema::default();
        let tok = Tokenizer::new(&s);
        let ids = tok.encode("A young male voice, not suited for storytelling").unwrap();
        let words: Vec<&str> = ids.iter().map(|&i| tok.vocab()[i - 1].as_str()).collect();
        assert_eq!(words, ["young", "male", "not_storytelling"]);
        assert!(ids.iter().all(|&i| i != UNCONDITIONAL_TOKEN && i < tok.table_size()));
        assert!(matches!(tok.encode("a sparkly voice"), Err(Error::Vocabulary(_))));
        assert!(matches!(tok.encode("a voice"), Err(Error::Vocabulary(_))));
    }

    proptest! {
        #[test]
        fn prompts_are_deterministic_unique_and_grounded(mask in 1u32..(1 << 13), cap in 1usize..80, seed in any::<u64>()) {
            let s = KeywordSchema::default();
            let all = [
                ("age", label("senior")), ("gender", label("female")),
                ("brightness", KeywordValue::Likert(3)), ("roughness", KeywordValue::Likert(1)),
                ("strong", KeywordValue::Flag(true)), ("warm", KeywordValue::Flag(false)),
                ("authoritative", KeywordValue::Flag(true)), ("calm", KeywordValue::Flag(true)),
                ("energetic", KeywordValue::Flag(false)), ("friendly", KeywordValue::Flag(true)),
                ("storytelling", KeywordValue::Flag(true)), ("client_interaction", KeywordValue::Flag(false)),
                ("announcing", KeywordValue::Flag(true)),
            ];
            let c: BTreeMap<String, KeywordValue> = all.iter().enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, (k, v))| (k.to_string(), v.clone()))
                .collect();
            let a = generate_prompt_set(&s, &c, cap, seed).unwrap();
            let b = generate_prompt_set(&s, &c, cap, seed).unwrap();
            prop_assert_eq!(&a, &b);
            let total = (1usize << c.len()) - 1;
            prop_assert_eq!(a.len(), total.min(cap));
            let texts: HashSet<&String> = a.iter().map(|p| &p.text).collect();
            prop_assert_eq!(texts.len(), a.len());
            let tok = Tokenizer::new(&s);
            for p in &a {
                prop_assert!(p.keywords.iter().all(|k| c.contains_key(k)));
                prop_assert!(tok.encode(&p.text).is_ok());
            }
        }
    }
}
