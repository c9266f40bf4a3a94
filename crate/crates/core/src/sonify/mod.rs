//! Concatenative granular synthesis driven by cascade events.
//!
//! A source recording is cut into analysed grains ([`corpus`]); each
//! relaxation step of an event selects the grain nearest to a target built
//! from its slip count ([`schedule`]); the scheduled grains are windowed,
//! resampled and overlap-added into audio ([`render`]). Slip counts per step
//! stand in for the motion energy a camera would measure over a physical pile.

pub mod corpus;
pub mod render;
pub mod schedule;
pub mod wav;

pub use corpus::{ingest_corpus, synthetic_crackle, Descriptor, DescriptorWeights, Grain, GrainCorpus};
pub use render::{render, soft_limit};
pub use schedule::{events_to_schedule, GrainEntry, GrainSchedule, MappingConfig, Scheduler};
pub use wav::{decode_wav, encode_wav, read_wav, write_wav, WavError};

use crate::kv::KvError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SonifyError {
    #[error("corpus ingestion failed: {0}")]
    Ingest(String),
    #[error("invalid sonification config: {0}")]
    Config(String),
}

impl From<KvError> for SonifyError {
    fn from(e: KvError) -> Self {
        SonifyError::Config(e.to_string())
    }
}
