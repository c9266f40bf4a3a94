pub mod error;
pub mod event;
pub mod kv;
pub mod model;
pub mod oslo;
pub mod rng;
pub mod sandpile;
pub mod session;
pub mod sonify;
pub mod springblock;
pub mod stats;

pub use error::{ModelError, SnapshotError};
pub use event::{CascadeEvent, Site, Slip};
pub use model::{Model, ModelConfig, ModelKind, MODEL_KEYS};
pub use oslo::OsloPile;
pub use sandpile::Sandpile;
pub use springblock::SpringBlock;
