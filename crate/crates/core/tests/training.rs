use dreamdiff::denoiser::{loss_endpoints, TrainConfig};
use dreamdiff::diffusion::{build_schedule, SamplerConfig};
use dreamdiff::dreamvc::{DreamVc, GridParams, ToyDomain, VcDataset, VcMode, VcModelConfig};
use dreamdiff::dreamvg::{DreamVg, VgModelConfig};
use dreamdiff::guidance::GuidanceParams;
use dreamdiff::nn::checkpoint;
use dreamdiff::voicedb::{synth_speaker_db, KeywordSchema, SynthParams, Tokenizer};
use dreamdiff::Error;

fn train_config(steps: usize, batch_size: usize, cond_dropout_p: f64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size,
        lr: 2e-3,
        cond_dropout_p,
        lr_floor: 0.05,
        seed: 2,
    }
}

#[test]
fn two_cluster_generator_loss_falls_below_a_quarter() {
    let schema = KeywordSchema::default();
    let db = synth_speaker_db(&schema, &SynthParams { n_profiles: 2, ..SynthParams::default() }, 5).unwrap();
    let sched = build_schedule(1000, 1e-4, 0.02).unwrap();
    let mc = VgModelConfig {
        latent_scale: 1.0,
        ..VgModelConfig::default()
    };
    let mut model = DreamVg::<f32>::new(Tokenizer::new(&schema), db.emb_dim, &mc, 1).unwrap();
    let history = model.train(&db, &sched, &train_config(2000, 32, 0.1), 0.5).unwrap();
    let (first, last) = loss_endpoints(&history, 100);
    assert!(last < 0.25 * first, "loss {first} -> {last}");
}

#[test]
fn conversion_loss_falls_below_a_quarter() {
    let schema = KeywordSchema::default();
    let db = synth_speaker_db(&schema, &SynthParams::default(), 5).unwrap();
    let sched = build_schedule(1000, 1e-4, 0.02).unwrap();
    let domain = ToyDomain::new(GridParams::default(), 3).unwrap();
    let mut model =
        DreamVc::<f32>::new(VcMode::DreamVc, domain.params, &VcModelConfig::default(), Some(Tokenizer::new(&schema)), db.emb_dim, 1).unwrap();
    let data = VcDataset::from_db(domain, &db, VcMode::DreamVc).unwrap();
    let history = model.train(&data, &sched, &train_config(3000, 16, 0.1), 0.5).unwrap();
    let (first, last) = loss_endpoints(&history, 100);
    assert!(last < 0.25 * first, "loss {first} -> {last}");
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let schema = KeywordSchema::default();
    let db = synth_speaker_db(&schema, &SynthParams { n_profiles: 3, emb_dim: 16, ..SynthParams::default() }, 9).unwrap();
    let sched = build_schedule(1000, 1e-4, 0.02).unwrap();
    let mc = VgModelConfig {
        d_model: 16,
        ..VgModelConfig::default()
    };
    let run = || {
        let mut m = DreamVg::<f32>::new(Tokenizer::new(&schema), 16, &mc, 4).unwrap();
        m.train(&db, &sched, &train_config(50, 8, 0.2), 0.5).unwrap();
        checkpoint::encode(&m.denoiser.params)
    };
    assert_eq!(run(), run());
}

#[test]
fn guidance_needs_a_dropout_trained_negative() {
    let schema = KeywordSchema::default();
    let db = synth_speaker_db(&schema, &SynthParams { n_profiles: 2, emb_dim: 8, ..SynthParams::default() }, 9).unwrap();
    let sched = build_schedule(100, 1e-4, 0.02).unwrap();
    let mc = VgModelConfig {
        d_model: 8,
        step_dim: 8,
        ..VgModelConfig::default()
    };
    let mut m = DreamVg::<f32>::new(Tokenizer::new(&schema), 8, &mc, 4).unwrap();
    m.train(&db, &sched, &train_config(5, 4, 0.0), 0.5).unwrap();
    let prompt = db.profiles[0].full_prompt();
    let r = m.sample(prompt, &GuidanceParams::default(), &SamplerConfig::new(10, 1), &sched);
    assert!(matches!(r, Err(Error::Validation(_))));
    m.train(&db, &sched, &train_config(5, 4, 0.5), 0.5).unwrap();
    assert!(m.sample(prompt, &GuidanceParams::default(), &SamplerConfig::new(10, 1), &sched).is_ok());
}
