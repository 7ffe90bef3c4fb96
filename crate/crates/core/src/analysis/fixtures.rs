//! Published study results, as printed.

use super::flow::ParticipantRow;

/// Flow index per participant: Deceptive, Absent, Truthful.
pub const TABLE2: [(&str, [f64; 3]); 7] = [
    ("1", [3.67, 4.33, 4.33]),
    ("2", [3.67, 4.17, 4.33]),
    ("3", [3.33, 4.17, 4.33]),
    ("4", [4.33, 4.17, 3.67]),
    ("5", [4.00, 2.83, 3.67]),
    ("6", [4.00, 3.16, 4.00]),
    ("7", [2.00, 3.33, 3.67]),
];

/// Printed summary rows of the flow table: means, then s.d., same order.
pub const TABLE2_MEAN: [f64; 3] = [3.57, 3.74, 4.00];
pub const TABLE2_SD: [f64; 3] = [0.76, 0.61, 0.33];

pub fn table2_rows() -> Vec<ParticipantRow> {
    TABLE2.iter().map(|(p, v)| ParticipantRow { participant: (*p).to_string(), values: v.map(Some) }).collect()
}

/// Per-comparison listener percentages preferring the Truthful track:
/// (tracks, more interesting %, better musical balance %).
pub const TABLE4: [(&str, u32, u32); 3] = [("A vs. B", 44, 51), ("C vs. D", 67, 65), ("E vs. F", 57, 60)];
/// The printed total row. It is not the pooled or averaged row values.
pub const TABLE4_TOTAL: (u32, u32) = (53, 55);
/// Listeners retained after exclusions, out of 100 recruited.
pub const LISTENERS_INCLUDED: u64 = 96;
