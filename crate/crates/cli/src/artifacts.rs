//! On-disk artifacts: DVCK checkpoints with JSON manifests, and speaker databases.

use std::path::{Path, PathBuf};

use dreamdiff::denoiser::{Denoiser, DenoiserConfig};
use dreamdiff::dreamvc::{DreamVc, VcMode};
use dreamdiff::dreamvg::DreamVg;
use dreamdiff::nn::checkpoint;
use dreamdiff::nn::ParamStore;
use dreamdiff::voicedb::{SpeakerDb, SpeakerKeywords, Tokenizer};
use dreamdiff::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{canonical_hash, config_hash, schedule_hash, sha256_hex, ExperimentConfig};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    checkpoint::write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Synthetic speaker database with the hash of the config that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbArtifact {
    pub config_hash: String,
    pub seed: u64,
    pub db: SpeakerDb,
}

impl DbArtifact {
    pub fn digest(&self) -> Result<String> {
        canonical_hash(&self.db)
    }
}

/// One speaker of an aggregated annotation database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedSpeaker {
    #[serde(flatten)]
    pub keywords: SpeakerKeywords,
    pub prompts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedDb {
    pub config_hash: String,
    pub speakers: Vec<AnnotatedSpeaker>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Vg,
    Vc,
}

/// Sidecar describing a checkpoint well enough to rebuild the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ModelKind,
    pub vc_mode: Option<VcMode>,
    pub config_hash: String,
    pub schedule_hash: String,
    pub checkpoint_sha256: String,
    /// Digest of the speaker database the model was trained on.
    pub db_digest: String,
    pub config: ExperimentConfig,
    pub denoiser: DenoiserConfig,
    pub vocab: Option<Vec<String>>,
    pub trained_unconditional: bool,
    /// VG latent scale or VC speaker scale.
    pub scale: f64,
    pub loss_history: Vec<f64>,
}

pub fn manifest_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

fn manifest_for(
    kind: ModelKind,
    vc_mode: Option<VcMode>,
    cfg: &ExperimentConfig,
    db_digest: String,
    denoiser: &Denoiser<f32>,
    vocab: Option<Vec<String>>,
    scale: f64,
    loss_history: Vec<f64>,
) -> Result<Manifest> {
    Ok(Manifest {
        kind,
        vc_mode,
        config_hash: config_hash(cfg)?,
        schedule_hash: schedule_hash(cfg)?,
        checkpoint_sha256: String::new(),
        db_digest,
        config: cfg.clone(),
        denoiser: *denoiser.config(),
        vocab,
        trained_unconditional: denoiser.trained_unconditional,
        scale,
        loss_history,
    })
}

fn save(path: &Path, params: &ParamStore<f32>, mut manifest: Manifest) -> Result<Manifest> {
    let bytes = checkpoint::encode(params);
    manifest.checkpoint_sha256 = sha256_hex(&bytes);
    checkpoint::write_atomic(path, &bytes)?;
    write_json(&manifest_path(path), &manifest)?;
    Ok(manifest)
}

fn load(path: &Path, kind: ModelKind) -> Result<(Denoiser<f32>, Manifest)> {
    let mpath = manifest_path(path);
    let manifest: Manifest = read_json(&mpath)?;
    if manifest.kind != kind {
        return Err(Error::Format(format!("{} holds a {:?} model, expected {kind:?}", path.display(), manifest.kind)));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if sha256_hex(&bytes) != manifest.checkpoint_sha256 {
        return Err(Error::Format(format!(
            "{} does not match the digest recorded in {}",
            path.display(),
            mpath.display()
        )));
    }
    let params = checkpoint::decode(&bytes)?;
    let denoiser = Denoiser::from_params(manifest.denoiser, &params, manifest.trained_unconditional)?;
    Ok((denoiser, manifest))
}

pub fn save_vg(path: &Path, model: &DreamVg<f32>, cfg: &ExperimentConfig, db_digest: String, history: Vec<f64>) -> Result<Manifest> {
    let m = manifest_for(
        ModelKind::Vg,
        None,
        cfg,
        db_digest,
        &model.denoiser,
        Some(model.tokenizer.vocab().to_vec()),
        model.latent_scale,
        history,
    )?;
    save(path, &model.denoiser.params, m)
}

pub fn load_vg(path: &Path) -> Result<(DreamVg<f32>, Manifest)> {
    let (denoiser, manifest) = load(path, ModelKind::Vg)?;
    let vocab = manifest
        .vocab
        .clone()
        .ok_or_else(|| Error::Format("vg manifest lacks a vocabulary".into()))?;
    let model = DreamVg {
        denoiser,
        tokenizer: Tokenizer::from_vocab(vocab),
        latent_scale: manifest.scale,
    };
    Ok((model, manifest))
}

pub fn save_vc(path: &Path, model: &DreamVc<f32>, cfg: &ExperimentConfig, db_digest: String, history: Vec<f64>) -> Result<Manifest> {
    let m = manifest_for(
        ModelKind::Vc,
        Some(model.mode),
        cfg,
        db_digest,
        &model.denoiser,
        model.tokenizer.as_ref().map(|t| t.vocab().to_vec()),
        model.speaker_scale,
        history,
    )?;
    save(path, &model.denoiser.params, m)
}

pub fn load_vc(path: &Path) -> Result<(DreamVc<f32>, Manifest)> {
    let (denoiser, manifest) = load(path, ModelKind::Vc)?;
    let mode = manifest
        .vc_mode
        .ok_or_else(|| Error::Format("vc manifest lacks a mode".into()))?;
    let model = DreamVc {
        denoiser,
        mode,
        tokenizer: manifest.vocab.clone().map(Tokenizer::from_vocab),
        speaker_scale: manifest.scale,
        grid: manifest.config.vc.grid,
    };
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use dreamdiff::dreamvg::VgModelConfig;
    use dreamdiff::voicedb::KeywordSchema;

    #[test]
    fn vg_round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vg.dvck");
        let cfg = ExperimentConfig::default();
        let tok = Tokenizer::new(&KeywordSchema::default());
        let model = DreamVg::<f32>::new(tok, 8, &VgModelConfig { d_model: 8, blocks: 1, step_dim: 8, latent_scale: 2.0 }, 1).unwrap();
        let saved = save_vg(&path, &model, &cfg, "db".into(), vec![1.0, 0.5]).unwrap();
        let (back, manifest) = load_vg(&path).unwrap();
        assert_eq!(manifest, saved);
        assert_eq!(back.denoiser.params.params(), model.denoiser.params.params());
        assert_eq!(back.tokenizer, model.tokenizer);
        assert!(matches!(load_vc(&path), Err(Error::Format(_))));

        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_vg(&path), Err(Error::Format(_))));
    }
}
