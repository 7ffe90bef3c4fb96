//! The real-time side: clocks, the experimental conditions, the confidence
//! proxy and the measure-by-measure session engine.

mod clock;
mod conditions;
mod confidence;
mod engine;
mod melody;

pub use clock::{Clock, RealClock, RealtimeGuard, VirtualClock};
pub use conditions::{apply_conditions, BioCondition, InputMode, VisCondition};
pub use confidence::{confidence_metric, ConfidenceFrame, ConfidenceTracker, EMA_ALPHA};
pub use engine::{
    run_session, EmittedEvent, Endpoints, GenerationTiming, InjectedDelay, LogRecord, MeasureOrigin, MeasureRecord, MelodySource,
    MemoryLog, SessionConfig, SessionIo, SessionLog, SessionOutcome,
};
pub use melody::{scripted_measure, without_last_step, LiveMelody};

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::model::ModelError;
use crate::netio::NetError;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("inference worker: {0}")]
    Worker(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
