//! Synthetic speaker database: keyword profiles mapped to separated Gaussian clusters.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::voicedb::prompts::generate_prompts;
use crate::voicedb::schema::{KeywordSchema, KeywordValue};

/// Latent timbre vector of one speaker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpeakerEmbedding(pub Vec<f64>);

impl SpeakerEmbedding {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub id: usize,
    pub keywords: BTreeMap<String, KeywordValue>,
    pub centroid: SpeakerEmbedding,
    /// Descriptors synthesized from the profile's keywords; the first names every keyword.
    pub prompts: Vec<String>,
}

impl Profile {
    pub fn full_prompt(&self) -> &str {
        &self.prompts[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub n_profiles: usize,
    pub emb_dim: usize,
    pub intra_std: f64,
    pub min_separation: f64,
    pub samples_per_profile: usize,
    pub prompt_cap: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_profiles: 8,
            emb_dim: 64,
            intra_std: 0.05,
            min_separation: 0.5,
            samples_per_profile: 64,
            prompt_cap: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerDb {
    pub emb_dim: usize,
    pub intra_std: f64,
    pub profiles: Vec<Profile>,
    /// Draws around the centroids as `(profile id, embedding)`.
    pub embeddings: Vec<(usize, SpeakerEmbedding)>,
}

const MAX_ATTEMPTS: usize = 1000;

/// Distinct (gender, age, brightness, roughness) combinations with Likert values
/// taken from the three bucket representatives.
fn keyword_combinations(schema: &KeywordSchema) -> Result<Vec<BTreeMap<String, KeywordValue>>> {
    let labels = |name: &str| -> Result<Vec<KeywordValue>> {
        match schema.get(name).map(|s| &s.domain) {
            Some(crate::voicedb::schema::ValueDomain::Labels(l)) => Ok(l.iter().map(|v| KeywordValue::Label(v.clone())).collect()),
            _ => Err(Error::Config(format!("schema lacks a label keyword {name:?}"))),
        }
    };
    let likert = |name: &str| -> Result<Vec<KeywordValue>> {
        match schema.get(name).map(|s| &s.domain) {
            Some(crate::voicedb::schema::ValueDomain::Likert { min, max }) => {
                let mid = (min + max) / 2;
                Ok([*min, mid, *max].iter().map(|&v| KeywordValue::Likert(v)).collect())
            }
            _ => Err(Error::Config(format!("schema lacks a Likert keyword {name:?}"))),
        }
    };
    let (gender, age, bright, rough) = (labels("gender")?, labels("age")?, likert("brightness")?, likert("roughness")?);
    let mut out = Vec::new();
    for g in &gender {
        for a in &age {
            for b in &bright {
                for r in &rough {
                    out.push(BTreeMap::from([
                        ("gender".to_string(), g.clone()),
                        ("age".to_string(), a.clone()),
                        ("brightness".to_string(), b.clone()),
                        ("roughness".to_string(), r.clone()),
                    ]));
                }
            }
        }
    }
    Ok(out)
}

fn unit_gaussian(rng: &mut StreamRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = rng::normal_vec(rng, dim);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn draw_around(centroid: &[f64], std: f64, rng: &mut impl Rng) -> SpeakerEmbedding {
    SpeakerEmbedding(centroid.iter().map(|c| c + std * rng::normal::<f64, _>(rng)).collect())
}

pub fn synth_speaker_db(schema: &KeywordSchema, params: &SynthParams, seed: u64) -> Result<SpeakerDb> {
    if params.n_profiles < 2 || params.emb_dim < 2 {
        return Err(Error::Config(format!(
            "synthetic db needs at least 2 profiles and 2 dimensions, got {} and {}",
            params.n_profiles, params.emb_dim
        )));
    }
    if !(params.intra_std >= 0.0 && params.intra_std.is_finite()) || !(params.min_separation >= 0.0) {
        return Err(Error::Config("intra_std and min_separation must be non-negative".into()));
    }
    let mut combos = keyword_combinations(schema)?;
    if params.n_profiles > combos.len() {
        return Err(Error::Config(format!(
            "only {} distinct keyword profiles exist, {} requested",
            combos.len(),
            params.n_profiles
        )));
    }
    combos.shuffle(&mut rng::stream(seed, "db/profiles"));
    combos.truncate(params.n_profiles);

    let mut rng = rng::stream(seed, "db/centroids");
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(params.n_profiles);
    for k in 0..params.n_profiles {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let c = unit_gaussian(&mut rng, params.emb_dim);
            let sep = SpeakerEmbedding(c.clone());
            if centroids.iter().all(|o| sep.distance(o) >= params.min_separation) {
                centroids.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place centroid {k} at separation {} in {} dimensions after {MAX_ATTEMPTS} attempts",
                params.min_separation, params.emb_dim
            )));
        }
    }
    let profiles = combos
        .into_iter()
        .zip(centroids)
        .enumerate()
        .map(|(id, (keywords, c))| {
            let prompts = generate_prompts(schema, &keywords, params.prompt_cap, rng::derive_seed(seed, "db/prompts", id as u64))?;
            Ok(Profile {
                id,
                keywords,
                centroid: SpeakerEmbedding(c),
                prompts,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SpeakerDb::from_profiles(profiles, params.intra_std, params.samples_per_profile, seed)
}

impl SpeakerDb {
    pub fn from_profiles(profiles: Vec<Profile>, intra_std: f64, samples_per_profile: usize, seed: u64) -> Result<Self> {
        let emb_dim = profiles
            .first()
            .map(|p| p.centroid.dim())
            .ok_or_else(|| Error::Domain("speaker db has no profiles".into()))?;
        if profiles.iter().any(|p| p.centroid.dim() != emb_dim) {
            return Err(Error::Shape("profile centroids differ in dimension".into()));
        }
        let mut rng = rng::stream(seed, "db/embeddings");
        let mut embeddings = Vec::with_capacity(profiles.len() * samples_per_profile);
        for p in &profiles {
            for _ in 0..samples_per_profile {
                embeddings.push((p.id, draw_around(p.centroid.as_slice(), intra_std, &mut rng)));
            }
        }
        Ok(Self {
            emb_dim,
            intra_std,
            profiles,
            embeddings,
        })
    }

    /// A database over bare centroids, without keywords or prompts.
    pub fn from_centroids(centroids: Vec<Vec<f64>>, intra_std: f64, samples_per_profile: usize, seed: u64) -> Result<Self> {
        let profiles = centroids
            .into_iter()
            .enumerate()
            .map(|(id, c)| Profile {
                id,
                keywords: BTreeMap::new(),
                centroid: SpeakerEmbedding(c),
                prompts: Vec::new(),
            })
            .collect();
        Self::from_profiles(profiles, intra_std, samples_per_profile, seed)
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn profile(&self, id: usize) -> Option<&Profile> {
        self.profiles.get(id)
    }

    pub fn centroid(&self, id: usize) -> Option<&SpeakerEmbedding> {
        self.profiles.get(id).map(|p| &p.centroid)
    }

    /// A fresh draw from cluster `id`.
    pub fn draw(&self, id: usize, rng: &mut impl Rng) -> Result<SpeakerEmbedding> {
        let c = self
            .centroid(id)
            .ok_or_else(|| Error::Domain(format!("profile {id} not in db of {}", self.len())))?;
        Ok(draw_around(c.as_slice(), self.intra_std, rng))
    }

    /// Nearest centroid by Euclidean distance; ties go to the lowest profile id.
    pub fn classify(&self, e: &[f64]) -> Result<(usize, f64)> {
        if e.len() != self.emb_dim {
            return Err(Error::Shape(format!("embedding has dim {}, db has {}", e.len(), self.emb_dim)));
        }
        let mut best: Option<(usize, f64)> = None;
        for p in &self.profiles {
            let d = p.centroid.distance(e);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((p.id, d));
            }
        }
        best.ok_or_else(|| Error::Domain("speaker db has no centroids".into()))
    }

    /// Profile whose full descriptor is `prompt`.
    pub fn profile_for_prompt(&self, prompt: &str) -> Option<usize> {
        self.profiles.iter().find(|p| p.prompts.first().is_some_and(|f| f == prompt)).map(|p| p.id)
    }
}

pub fn classify_embedding(e: &SpeakerEmbedding, db: &SpeakerDb) -> Result<(usize, f64)> {
    db.classify(e.as_slice())
}
