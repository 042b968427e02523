//! Timbre keywords, their value domains and how each value reads in a prompt.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    /// Objective timbre aspects annotated by relative comparison or Likert scale.
    Objective,
    /// Subjective aspects annotated on a binary scale.
    Subjective,
    /// Suitability for a voice-related profession, binary.
    Profession,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueDomain {
    Labels(Vec<String>),
    Likert { min: u8, max: u8 },
    Binary,
}

/// Where a keyword's phrase sits in a rendered descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    /// Adjective before the head noun, ordered by its position in the schema.
    Head,
    /// "with a {phrase} tone".
    Tone,
    /// "with a {phrase} texture".
    Texture,
    /// "that sounds {phrase}".
    Trait,
    /// "suited for {phrase}".
    Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordSpec {
    pub name: String,
    pub category: Category,
    pub domain: ValueDomain,
    pub slot: Slot,
    /// Likert phrases for the low, mid and high buckets; the role or trait phrase
    /// for binary keywords; unused for labels, which render as themselves.
    pub phrases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KeywordValue {
    Flag(bool),
    Likert(u8),
    Label(String),
}

impl fmt::Display for KeywordValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeywordValue::Flag(b) => write!(f, "{}", u8::from(*b)),
            KeywordValue::Likert(v) => write!(f, "{v}"),
            KeywordValue::Label(s) => f.write_str(s),
        }
    }
}

/// Likert responses are voted on in three buckets: 1–2, 3, 4–5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Low,
    Mid,
    High,
}

pub fn likert_bucket(value: u8) -> Bucket {
    match value {
        0..=2 => Bucket::Low,
        3 => Bucket::Mid,
        _ => Bucket::High,
    }
}

impl KeywordSpec {
    pub fn parse_value(&self, raw: &str) -> Result<KeywordValue, String> {
        let raw = raw.trim();
        match &self.domain {
            ValueDomain::Labels(labels) => labels
                .iter()
                .find(|l| l.eq_ignore_ascii_case(raw))
                .map(|l| KeywordValue::Label(l.clone()))
                .ok_or_else(|| format!("{raw:?} is not one of {labels:?} for {}", self.name)),
            ValueDomain::Likert { min, max } => match raw.parse::<u8>() {
                Ok(v) if (*min..=*max).contains(&v) => Ok(KeywordValue::Likert(v)),
                _ => Err(format!("{raw:?} outside Likert range {min}..={max} for {}", self.name)),
            },
            ValueDomain::Binary => match raw.to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" => Ok(KeywordValue::Flag(true)),
                "0" | "false" | "no" => Ok(KeywordValue::Flag(false)),
                _ => Err(format!("{raw:?} is not binary for {}", self.name)),
            },
        }
    }

    pub fn accepts(&self, value: &KeywordValue) -> bool {
        match (&self.domain, value) {
            (ValueDomain::Labels(labels), KeywordValue::Label(l)) => labels.contains(l),
            (ValueDomain::Likert { min, max }, KeywordValue::Likert(v)) => (*min..=*max).contains(v),
            (ValueDomain::Binary, KeywordValue::Flag(_)) => true,
            _ => false,
        }
    }

    /// The words a value contributes to a descriptor.
    pub fn phrase(&self, value: &KeywordValue) -> String {
        match value {
            KeywordValue::Label(l) => l.clone(),
            KeywordValue::Likert(v) => {
                let i = match likert_bucket(*v) {
                    Bucket::Low => 0,
                    Bucket::Mid => 1,
                    Bucket::High => 2,
                };
                self.phrases[i].clone()
            }
            KeywordValue::Flag(true) => self.phrases[0].clone(),
            KeywordValue::Flag(false) => format!("not {}", self.phrases[0]),
        }
    }

    fn words(&self) -> Vec<String> {
        let phrases: Vec<String> = match &self.domain {
            ValueDomain::Labels(labels) => labels.clone(),
            _ => self.phrases.clone(),
        };
        let mut out: Vec<String> = phrases.iter().flat_map(|p| p.split_whitespace().map(str::to_string)).collect();
        if self.domain == ValueDomain::Binary {
            if let Some(first) = phrases.first().and_then(|p| p.split_whitespace().next()) {
                out.push(negated(first));
            }
        }
        out
    }
}

/// Token for a negated word: "not warm" tokenizes to `not_warm`.
pub fn negated(word: &str) -> String {
    format!("not_{word}")
}

/// Words of the descriptor template that carry no keyword.
pub const FILLER_WORDS: &[&str] = &["a", "an", "and", "for", "sounds", "suited", "that", "texture", "tone", "voice", "with"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordSchema {
    pub keywords: Vec<KeywordSpec>,
}

fn labels(xs: &[&str]) -> ValueDomain {
    ValueDomain::Labels(xs.iter().map(|s| s.to_string()).collect())
}

fn spec(name: &str, category: Category, domain: ValueDomain, slot: Slot, phrases: &[&str]) -> KeywordSpec {
    KeywordSpec {
        name: name.into(),
        category,
        domain,
        slot,
        phrases: phrases.iter().map(|s| s.to_string()).collect(),
    }
}

impl Default for KeywordSchema {
    fn default() -> Self {
        use Category::*;
        let likert = ValueDomain::Likert { min: 1, max: 5 };
        Self {
            keywords: vec![
                spec("age", Objective, labels(&["young", "adult", "senior"]), Slot::Head, &[]),
                spec("gender", Objective, labels(&["male", "female"]), Slot::Head, &[]),
                spec("brightness", Objective, likert.clone(), Slot::Tone, &["dark", "neutral", "bright"]),
                spec("roughness", Objective, likert, Slot::Texture, &["smooth", "grainy", "rough"]),
                spec("strong", Subjective, ValueDomain::Binary, Slot::Trait, &["strong"]),
                spec("warm", Subjective, ValueDomain::Binary, Slot::Trait, &["warm"]),
                spec("authoritative", Subjective, ValueDomain::Binary, Slot::Trait, &["authoritative"]),
                spec("calm", Subjective, ValueDomain::Binary, Slot::Trait, &["calm"]),
                spec("energetic", Subjective, ValueDomain::Binary, Slot::Trait, &["energetic"]),
                spec("friendly", Subjective, ValueDomain::Binary, Slot::Trait, &["friendly"]),
                spec("storytelling", Profession, ValueDomain::Binary, Slot::Role, &["storytelling"]),
                spec("client_interaction", Profession, ValueDomain::Binary, Slot::Role, &["client interaction"]),
                spec("announcing", Profession, ValueDomain::Binary, Slot::Role, &["announcing"]),
            ],
        }
    }
}

impl KeywordSchema {
    pub fn validate(&self) -> Result<()> {
        let timbre = self.keywords.iter().filter(|k| k.category != Category::Profession).count();
        if timbre != 10 {
            return Err(Error::Config(format!("schema needs exactly 10 timbre keywords, has {timbre}")));
        }
        let mut seen = BTreeSet::new();
        for k in &self.keywords {
            if !seen.insert(&k.name) {
                return Err(Error::Config(format!("duplicate keyword {}", k.name)));
            }
            let ok = match &k.domain {
                ValueDomain::Labels(l) => !l.is_empty(),
                ValueDomain::Likert { min, max } => min <= max && k.phrases.len() == 3,
                ValueDomain::Binary => k.phrases.len() == 1,
            };
            if !ok {
                return Err(Error::Config(format!("keyword {} has an empty domain or missing phrases", k.name)));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&KeywordSpec> {
        self.keywords.iter().find(|k| k.name == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.keywords.iter().position(|k| k.name == name)
    }

    /// Every content word a descriptor can contain, sorted.
    pub fn vocabulary(&self) -> Vec<String> {
        let set: BTreeSet<String> = self.keywords.iter().flat_map(KeywordSpec::words).collect();
        set.into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_is_valid() {
        let s = KeywordSchema::default();
        s.validate().unwrap();
        let vocab = s.vocabulary();
        for w in ["male", "dark", "rough", "not_warm", "not_client", "interaction"] {
            assert!(vocab.iter().any(|v| v == w), "{w}");
        }
        assert!(vocab.iter().all(|v| !FILLER_WORDS.contains(&v.as_str())));
    }

    #[test]
    fn values_parse_against_domains() {
        let s = KeywordSchema::default();
        let b = s.get("brightness").unwrap();
        assert_eq!(b.parse_value("4"), Ok(KeywordValue::Likert(4)));
        assert!(b.parse_value("6").is_err());
        assert!(b.parse_value("0").is_err());
        assert_eq!(s.get("gender").unwrap().parse_value("Female"), Ok(KeywordValue::Label("female".into())));
        assert!(s.get("gender").unwrap().parse_value("other").is_err());
        assert_eq!(s.get("warm").unwrap().parse_value("yes"), Ok(KeywordValue::Flag(true)));
    }

    #[test]
    fn wrong_keyword_count_is_rejected() {
        let mut s = KeywordSchema::default();
        s.keywords.remove(4);
        assert!(s.validate().is_err());
    }
}
