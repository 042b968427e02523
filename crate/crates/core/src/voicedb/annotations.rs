//! Annotation ingestion, agreement scoring and consensus integration.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voicedb::schema::{likert_bucket, Bucket, KeywordSchema, KeywordValue};

pub const CSV_HEADER: [&str; 4] = ["speaker_id", "annotator_id", "keyword", "value"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub speaker_id: String,
    pub annotator_id: String,
    pub keyword: String,
    pub value: KeywordValue,
}

pub fn load_annotations(path: &Path, schema: &KeywordSchema) -> Result<Vec<AnnotationRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(file, schema)
}

/// Parses annotation CSV. Row numbers in errors are file line numbers (header is row 1).
pub fn parse_annotations<R: Read>(reader: R, schema: &KeywordSchema) -> Result<Vec<AnnotationRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse { row: 1, message: e.to_string() })?;
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Parse {
            row: 1,
            message: format!("expected header {:?}, found {:?}", CSV_HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse { row: line, message: e.to_string() })?;
        if row.len() != 4 {
            return Err(Error::Parse {
                row: line,
                message: format!("expected 4 fields, found {}", row.len()),
            });
        }
        let (speaker, annotator, keyword, raw) = (&row[0], &row[1], &row[2], &row[3]);
        let spec = schema.get(keyword).ok_or_else(|| Error::Parse {
            row: line,
            message: format!("unknown keyword {keyword:?}"),
        })?;
        let value = spec.parse_value(raw).map_err(|message| Error::Parse { row: line, message })?;
        if !seen.insert((speaker.to_string(), annotator.to_string(), keyword.to_string())) {
            return Err(Error::Parse {
                row: line,
                message: format!("duplicate annotation ({speaker}, {annotator}, {keyword})"),
            });
        }
        out.push(AnnotationRecord {
            speaker_id: speaker.to_string(),
            annotator_id: annotator.to_string(),
            keyword: keyword.to_string(),
            value,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Vote {
    Bucket(Bucket),
    Value(usize),
}

/// Outcome of voting on one keyword for one speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct Tally {
    /// Modal-vote fraction in `[0, 1]`.
    pub agreement: f64,
    pub modal_value: KeywordValue,
}

fn vote_of(value: &KeywordValue, distinct: &mut Vec<KeywordValue>) -> Vote {
    match value {
        KeywordValue::Likert(v) => Vote::Bucket(likert_bucket(*v)),
        other => {
            let i = distinct.iter().position(|d| d == other).unwrap_or_else(|| {
                distinct.push(other.clone());
                distinct.len() - 1
            });
            Vote::Value(i)
        }
    }
}

/// Votes with Likert values bucketed to low (1–2), mid (3) and high (4–5).
///
/// Ties between modal votes resolve to the smallest value. A Likert consensus is
/// the most frequent raw response inside the modal bucket.
pub fn tally(values: &[KeywordValue]) -> Option<Tally> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort();
    let mut distinct = Vec::new();
    let mut counts: BTreeMap<Vote, usize> = BTreeMap::new();
    let votes: Vec<Vote> = sorted.iter().map(|v| vote_of(v, &mut distinct)).collect();
    for &v in &votes {
        *counts.entry(v).or_default() += 1;
    }
    let best = counts.values().copied().max().expect("non-empty");
    let (&modal, _) = counts.iter().find(|(_, &c)| c == best).expect("a modal vote");
    let modal_value = match modal {
        Vote::Value(i) => distinct[i].clone(),
        Vote::Bucket(_) => {
            let mut raw: BTreeMap<&KeywordValue, usize> = BTreeMap::new();
            for (v, vote) in sorted.iter().zip(&votes) {
                if *vote == modal {
                    *raw.entry(v).or_default() += 1;
                }
            }
            let top = raw.values().copied().max().expect("bucket has members");
            raw.into_iter().find(|(_, c)| *c == top).expect("top value").0.clone()
        }
    };
    Some(Tally {
        agreement: best as f64 / values.len() as f64,
        modal_value,
    })
}

/// Modal-vote fraction for the records of one speaker and keyword.
pub fn agreement_score(records: &[AnnotationRecord]) -> f64 {
    let values: Vec<KeywordValue> = records.iter().map(|r| r.value.clone()).collect();
    tally(&values).map_or(0.0, |t| t.agreement)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsensusThresholds {
    pub unanimity: f64,
    pub moderate: f64,
}

impl Default for ConsensusThresholds {
    fn default() -> Self {
        Self {
            unanimity: 1.0,
            moderate: 0.75,
        }
    }
}

/// Aggregated keywords of one speaker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerKeywords {
    pub speaker_id: String,
    pub consensus: BTreeMap<String, KeywordValue>,
    pub agreement: BTreeMap<String, f64>,
    /// Integrated keywords whose agreement fell short of unanimity.
    pub flags: BTreeSet<String>,
}

/// Integrates unanimous keywords, flags moderately agreed ones for reassessment
/// and drops the rest.
pub fn build_consensus(records: &[AnnotationRecord], thresholds: &ConsensusThresholds) -> Result<SpeakerKeywords> {
    let first = records
        .first()
        .ok_or_else(|| Error::Domain("no annotation records for speaker".into()))?;
    if let Some(other) = records.iter().find(|r| r.speaker_id != first.speaker_id) {
        return Err(Error::Domain(format!(
            "records mix speakers {} and {}",
            first.speaker_id, other.speaker_id
        )));
    }
    let mut by_keyword: BTreeMap<&str, Vec<KeywordValue>> = BTreeMap::new();
    for r in records {
        by_keyword.entry(&r.keyword).or_default().push(r.value.clone());
    }
    let mut sk = SpeakerKeywords {
        speaker_id: first.speaker_id.clone(),
        consensus: BTreeMap::new(),
        agreement: BTreeMap::new(),
        flags: BTreeSet::new(),
    };
    for (keyword, values) in by_keyword {
        let t = tally(&values).expect("non-empty group");
        sk.agreement.insert(keyword.to_string(), t.agreement);
        if t.agreement >= thresholds.unanimity {
            sk.consensus.insert(keyword.to_string(), t.modal_value);
        } else if t.agreement >= thresholds.moderate {
            sk.consensus.insert(keyword.to_string(), t.modal_value);
            sk.flags.insert(keyword.to_string());
        }
    }
    Ok(sk)
}

/// Consensus for every speaker, ordered by speaker id.
pub fn aggregate(records: &[AnnotationRecord], thresholds: &ConsensusThresholds) -> Result<Vec<SpeakerKeywords>> {
    let mut by_speaker: BTreeMap<&str, Vec<AnnotationRecord>> = BTreeMap::new();
    for r in records {
        by_speaker.entry(&r.speaker_id).or_default().push(r.clone());
    }
    by_speaker.values().map(|rs| build_consensus(rs, thresholds)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<Vec<AnnotationRecord>> {
        parse_annotations(text.as_bytes(), &KeywordSchema::default())
    }

    fn rec(annotator: usize, keyword: &str, value: KeywordValue) -> AnnotationRecord {
        AnnotationRecord {
            speaker_id: "s1".into(),
            annotator_id: format!("a{annotator}"),
            keyword: keyword.into(),
            value,
        }
    }

    #[test]
    fn well_formed_file_loads() {
        let text = "speaker_id,annotator_id,keyword,value\n\
                    s1,a1,gender,male\ns1,a2,gender,male\ns1,a1,brightness,4\ns1,a1,warm,1\n";
        let rs = parse(text).unwrap();
        assert_eq!(rs.len(), 4);
        assert_eq!(rs[2].value, KeywordValue::Likert(4));
    }

    #[test]
    fn out_of_domain_value_names_the_row() {
        let text = "speaker_id,annotator_id,keyword,value\ns1,a1,gender,male\ns1,a1,brightness,6\n";
        match parse(text) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicates_unknown_keywords_and_bad_headers_fail() {
        let dup = "speaker_id,annotator_id,keyword,value\ns1,a1,warm,1\ns1,a1,warm,0\n";
        assert!(matches!(parse(dup), Err(Error::Parse { row: 3, .. })));
        let unknown = "speaker_id,annotator_id,keyword,value\ns1,a1,sparkly,1\n";
        assert!(matches!(parse(unknown), Err(Error::Parse { row: 2, .. })));
        assert!(matches!(parse("speaker,annotator,keyword,value\n"), Err(Error::Parse { row: 1, .. })));
    }

    #[test]
    fn agreement_examples() {
        let unanimous: Vec<_> = (0..8).map(|a| rec(a, "gender", KeywordValue::Label("male".into()))).collect();
        assert_eq!(agreement_score(&unanimous), 1.0);
        let mut six: Vec<_> = (0..6).map(|a| rec(a, "warm", KeywordValue::Flag(true))).collect();
        six.extend((6..8).map(|a| rec(a, "warm", KeywordValue::Flag(false))));
        assert_eq!(agreement_score(&six), 0.75);
        let likert: Vec<_> = [4, 5, 4, 5, 4, 4, 5, 4]
            .iter()
            .enumerate()
            .map(|(a, &v)| rec(a, "brightness", KeywordValue::Likert(v)))
            .collect();
        assert_eq!(agreement_score(&likert), 1.0);
        let t = tally(&likert.iter().map(|r| r.value.clone()).collect::<Vec<_>>()).unwrap();
        assert_eq!(t.modal_value, KeywordValue::Likert(4));
    }

    #[test]
    fn consensus_rules() {
        let mut rs = Vec::new();
        for a in 0..8 {
            rs.push(rec(a, "gender", KeywordValue::Label("female".into())));
            rs.push(rec(a, "warm", KeywordValue::Flag(a < 6)));
            rs.push(rec(a, "calm", KeywordValue::Flag(a < 4)));
        }
        let sk = build_consensus(&rs, &ConsensusThresholds::default()).unwrap();
        assert_eq!(sk.consensus.get("gender"), Some(&KeywordValue::Label("female".into())));
        assert!(!sk.flags.contains("gender"));
        assert_eq!(sk.consensus.get("warm"), Some(&KeywordValue::Flag(true)));
        assert!(sk.flags.contains("warm"));
        assert!(!sk.consensus.contains_key("calm"));
        assert_eq!(sk.agreement["calm"], 0.5);
    }

    #[test]
    fn consensus_of_nothing_is_an_error() {
        assert!(build_consensus(&[], &ConsensusThresholds::default()).is_err());
    }

    fn arb_values() -> impl Strategy<Value = Vec<u8>> {
        proptest::collection::vec(1u8..=5, 1..12)
    }

    proptest! {
        #[test]
        fn agreement_ignores_annotator_order(mut votes in arb_values(), seed in any::<u64>()) {
            let recs: Vec<_> = votes.iter().enumerate().map(|(a, &v)| rec(a, "roughness", KeywordValue::Likert(v))).collect();
            let before = agreement_score(&recs);
            let mut rng = crate::rng::seeded(seed);
            use rand::seq::SliceRandom;
            votes.shuffle(&mut rng);
            let shuffled: Vec<_> = votes.iter().enumerate().map(|(a, &v)| rec(a, "roughness", KeywordValue::Likert(v))).collect();
            prop_assert_eq!(before, agreement_score(&shuffled));
            let t1 = tally(&recs.iter().map(|r| r.value.clone()).collect::<Vec<_>>()).unwrap();
            let t2 = tally(&shuffled.iter().map(|r| r.value.clone()).collect::<Vec<_>>()).unwrap();
            prop_assert_eq!(t1, t2);
        }

        #[test]
        fn raising_moderate_threshold_never_adds(
            a in arb_values(), b in arb_values(), lo in 0.0f64..1.0, hi in 0.0f64..1.0,
        ) {
            let (lo, hi) = (lo.min(hi), lo.max(hi));
            let mut rs: Vec<_> = a.iter().enumerate().map(|(i, &v)| rec(i, "brightness", KeywordValue::Likert(v))).collect();
            rs.extend(b.iter().enumerate().map(|(i, &v)| rec(i, "roughness", KeywordValue::Likert(v))));
            let loose = build_consensus(&rs, &ConsensusThresholds { unanimity: 1.0, moderate: lo }).unwrap();
            let strict = build_consensus(&rs, &ConsensusThresholds { unanimity: 1.0, moderate: hi }).unwrap();
            for k in strict.consensus.keys() {
                prop_assert!(loose.consensus.contains_key(k));
            }
        }
    }
}
