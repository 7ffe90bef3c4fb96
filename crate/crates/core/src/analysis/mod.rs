//! Study statistics: the flow index, matched-pair t-tests, principal
//! components and the listener study's binomial test.

mod fixtures;
mod flow;
mod listener;
mod report;
mod stats;

pub use fixtures::{table2_rows, LISTENERS_INCLUDED, TABLE2, TABLE2_MEAN, TABLE2_SD, TABLE4, TABLE4_TOTAL};
pub use flow::{
    condition_summary, flow_index, read_flow_csv, summarize_table, weighted_flow_index, Comparison, Dimension, FlowResponse, FlowSummary,
    ParticipantRow, TABLE_CONDITIONS,
};
pub use listener::{
    listener_summary, read_listener_csv, responses_from_rows, Choice, ComparisonTally, Exclusion, ListenerResponse, ListenerRow,
    ListenerSummary, Question, Tally, CHECK_COMPARISON, MIN_DURATION_S,
};
pub use report::{flow_text, listener_text, table4_text};
pub use stats::{binomial_test_one_sided, paired_t, pca_first_component, summarize, Component, PairedT, Summary};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("{0}")]
    Input(String),
    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("power iteration did not converge in {0} iterations")]
    NotConverged(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
