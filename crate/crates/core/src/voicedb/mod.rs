//! Annotation aggregation, prompt synthesis and the synthetic speaker database.

pub mod annotations;
pub mod prompts;
pub mod schema;
pub mod synth;

pub use annotations::{
    agreement_score, aggregate, build_consensus, load_annotations, parse_annotations, tally, AnnotationRecord,
    ConsensusThresholds, SpeakerKeywords, Tally,
};
pub use prompts::{generate_prompt_set, generate_prompts, render_prompt, Prompt, Tokenizer, UNCONDITIONAL_TOKEN};
pub use schema::{Bucket, Category, KeywordSchema, KeywordSpec, KeywordValue, Slot, ValueDomain};
pub use synth::{classify_embedding, synth_speaker_db, Profile, SpeakerDb, SpeakerEmbedding, SynthParams};
