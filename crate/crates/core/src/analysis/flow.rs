use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::Serialize;

use super::stats::{paired_t, summarize, PairedT, Summary};
use super::AnalysisError;
use crate::improviser::VisCondition;

/// The nine FSS-2 short-scale items, in questionnaire order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Dimension {
    ChallengeSkillBalance,
    MergingOfActionAwareness,
    ClarityOfGoals,
    UnambiguousFeedback,
    Concentration,
    SenseOfControl,
    LossOfSelfConsciousness,
    TransformationOfTime,
    AutotelicExperience,
}

impl Dimension {
    pub const ALL: [Dimension; 9] = [
        Dimension::ChallengeSkillBalance,
        Dimension::MergingOfActionAwareness,
        Dimension::ClarityOfGoals,
        Dimension::UnambiguousFeedback,
        Dimension::Concentration,
        Dimension::SenseOfControl,
        Dimension::LossOfSelfConsciousness,
        Dimension::TransformationOfTime,
        Dimension::AutotelicExperience,
    ];

    /// Items averaged into the flow index.
    pub const INDEX: [Dimension; 3] = [Dimension::SenseOfControl, Dimension::AutotelicExperience, Dimension::ChallengeSkillBalance];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::ChallengeSkillBalance => "Challenge-Skill Balance",
            Dimension::MergingOfActionAwareness => "Merging of Action-Awareness",
            Dimension::ClarityOfGoals => "Clarity of Goals",
            Dimension::UnambiguousFeedback => "Unambiguous Feedback",
            Dimension::Concentration => "Concentration",
            Dimension::SenseOfControl => "Sense of Control",
            Dimension::LossOfSelfConsciousness => "Loss of Self-Consciousness",
            Dimension::TransformationOfTime => "Transformation of Time",
            Dimension::AutotelicExperience => "Autotelic Experience",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowResponse {
    pub participant: String,
    pub condition: VisCondition,
    pub items: BTreeMap<Dimension, u8>,
}

impl FlowResponse {
    /// Scores in questionnaire order.
    pub fn new(participant: impl Into<String>, condition: VisCondition, scores: [u8; 9]) -> Result<Self, AnalysisError> {
        let r = FlowResponse { participant: participant.into(), condition, items: Dimension::ALL.into_iter().zip(scores).collect() };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        for d in Dimension::ALL {
            match self.items.get(&d) {
                None => return Err(AnalysisError::Input(format!("{}: missing item '{d}'", self.participant))),
                Some(v) if !(1..=5).contains(v) => {
                    return Err(AnalysisError::Input(format!("{}: '{d}' score {v} outside 1..=5", self.participant)))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn score(&self, d: Dimension) -> Result<f64, AnalysisError> {
        self.items.get(&d).map(|&v| f64::from(v)).ok_or_else(|| AnalysisError::Input(format!("{}: missing item '{d}'", self.participant)))
    }

    pub fn scores(&self) -> Result<Vec<f64>, AnalysisError> {
        Dimension::ALL.iter().map(|&d| self.score(d)).collect()
    }
}

/// Mean of Sense of Control, Autotelic Experience and Challenge-Skill Balance.
pub fn flow_index(r: &FlowResponse) -> Result<f64, AnalysisError> {
    let mut sum = 0.0;
    for d in Dimension::INDEX {
        sum += r.score(d)?;
    }
    Ok(sum / Dimension::INDEX.len() as f64)
}

/// Loading-weighted mean over `support`: `Σ w_i x_i / Σ w_i`.
pub fn weighted_flow_index(r: &FlowResponse, loadings: &[f64], support: &[Dimension]) -> Result<f64, AnalysisError> {
    if loadings.len() != Dimension::ALL.len() {
        return Err(AnalysisError::Input(format!("expected 9 loadings, got {}", loadings.len())));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for &d in support {
        let w = loadings[d as usize];
        num += w * r.score(d)?;
        den += w;
    }
    if den.abs() < 1e-12 {
        return Err(AnalysisError::Input("loadings over the support sum to zero".into()));
    }
    Ok(num / den)
}

/// Conditions in table column order.
pub const TABLE_CONDITIONS: [VisCondition; 3] = [VisCondition::Deceptive, VisCondition::Absent, VisCondition::Truthful];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticipantRow {
    pub participant: String,
    /// Flow index per condition in table order, averaged over sessions.
    pub values: [Option<f64>; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    /// `a` minus `b`.
    pub a: VisCondition,
    pub b: VisCondition,
    pub result: PairedT,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSummary {
    pub rows: Vec<ParticipantRow>,
    pub conditions: Vec<(VisCondition, Summary)>,
    pub comparisons: Vec<Comparison>,
}

fn column(c: VisCondition) -> usize {
    TABLE_CONDITIONS.iter().position(|&x| x == c).expect("every condition has a column")
}

/// Per-participant table from already aggregated indices.
pub fn summarize_table(rows: Vec<ParticipantRow>) -> Result<FlowSummary, AnalysisError> {
    let mut conditions = Vec::new();
    for (i, &c) in TABLE_CONDITIONS.iter().enumerate() {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r.values[i]).collect();
        if vals.is_empty() {
            return Err(AnalysisError::Input(format!("no responses for condition {c}")));
        }
        conditions.push((c, summarize(&vals)?));
    }
    let mut comparisons = Vec::new();
    for (a, b) in [
        (VisCondition::Absent, VisCondition::Deceptive),
        (VisCondition::Truthful, VisCondition::Absent),
        (VisCondition::Truthful, VisCondition::Deceptive),
    ] {
        let (ia, ib) = (column(a), column(b));
        let (xa, xb): (Vec<f64>, Vec<f64>) = rows.iter().filter_map(|r| Some((r.values[ia]?, r.values[ib]?))).unzip();
        if xa.len() >= 2 {
            comparisons.push(Comparison { a, b, result: paired_t(&xa, &xb)? });
        }
    }
    Ok(FlowSummary { rows, conditions, comparisons })
}

/// Flow index per participant and condition (sessions in the same condition
/// averaged), then per-condition mean and sample s.d. across participants.
pub fn condition_summary(responses: &[FlowResponse]) -> Result<FlowSummary, AnalysisError> {
    let mut order: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for r in responses {
        r.validate()?;
        if !order.contains(&r.participant) {
            order.push(r.participant.clone());
        }
        cells.entry((r.participant.clone(), column(r.condition))).or_default().push(flow_index(r)?);
    }
    let rows = order
        .into_iter()
        .map(|p| {
            let values = std::array::from_fn(|i| cells.get(&(p.clone(), i)).map(|v| v.iter().sum::<f64>() / v.len() as f64));
            ParticipantRow { participant: p, values }
        })
        .collect();
    summarize_table(rows)
}

/// Reads `participant,condition,item1..item9` rows; a header line is
/// optional. Errors name the offending line.
pub fn read_flow_csv<R: Read>(r: R) -> Result<Vec<FlowResponse>, AnalysisError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).flexible(true).from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| AnalysisError::Csv { line, message: e.to_string() })?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if line == 1 && rec.get(0).is_some_and(|f| f.eq_ignore_ascii_case("participant")) {
            continue;
        }
        let bad = |message: String| AnalysisError::Csv { line, message };
        if rec.len() != 11 {
            return Err(bad(format!("expected 11 fields (participant, condition, 9 items), got {}", rec.len())));
        }
        let condition = VisCondition::from_str(&rec[1]).map_err(|e| bad(e.to_string()))?;
        let mut scores = [0u8; 9];
        for (k, s) in scores.iter_mut().enumerate() {
            let field = &rec[k + 2];
            *s = field.parse().map_err(|_| bad(format!("item {} '{field}' is not an integer score", k + 1)))?;
        }
        out.push(FlowResponse::new(&rec[0], condition, scores).map_err(|e| bad(e.to_string()))?);
    }
    if out.is_empty() {
        return Err(AnalysisError::Input("flow CSV has no responses".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn with_index(c: u8, a: u8, s: u8) -> FlowResponse {
        // questionnaire order: Challenge-Skill first, Control sixth, Autotelic last
        FlowResponse::new("p", VisCondition::Truthful, [s, 3, 3, 3, 3, c, 3, 3, a]).unwrap()
    }

    #[test]
    fn index_examples() {
        assert_eq!(flow_index(&with_index(4, 4, 4)).unwrap(), 4.0);
        assert_eq!(flow_index(&with_index(5, 4, 3)).unwrap(), 4.0);
        let v = flow_index(&with_index(4, 5, 4)).unwrap();
        assert_eq!(format!("{v:.2}"), "4.33");
    }

    #[test]
    fn invalid_responses() {
        assert!(FlowResponse::new("p", VisCondition::Absent, [0, 3, 3, 3, 3, 3, 3, 3, 3]).is_err());
        let mut r = with_index(4, 4, 4);
        r.items.remove(&Dimension::SenseOfControl);
        assert!(flow_index(&r).is_err());
    }

    #[test]
    fn weighted_index_with_equal_weights_is_plain_mean() {
        let r = with_index(5, 4, 3);
        let w = [0.5; 9];
        assert!((weighted_flow_index(&r, &w, &Dimension::INDEX).unwrap() - 4.0).abs() < 1e-12);
        assert!(weighted_flow_index(&r, &[0.0; 9], &Dimension::INDEX).is_err());
    }

    #[test]
    fn csv_errors_name_the_line() {
        let text = "participant,condition,i1,i2,i3,i4,i5,i6,i7,i8,i9\nP1,truthful,4,4,4,4,4,4,4,4,4\nP1,sideways,4,4,4,4,4,4,4,4,4\n";
        let e = read_flow_csv(text.as_bytes()).unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
        assert!(read_flow_csv("".as_bytes()).is_err());
        let e = read_flow_csv("P1,absent,4,4,9,4,4,4,4,4,4\n".as_bytes()).unwrap_err().to_string();
        assert!(e.contains("line 1"), "{e}");
    }

    proptest! {
        #[test]
        fn other_items_do_not_move_the_index(
            scores in prop::array::uniform9(1u8..=5),
            perm in Just(vec![1usize, 2, 3, 4, 6, 7]).prop_shuffle(),
        ) {
            let mut permuted = scores;
            for (slot, src) in [1usize, 2, 3, 4, 6, 7].into_iter().zip(perm) {
                permuted[slot] = scores[src];
            }
            let a = FlowResponse::new("p", VisCondition::Absent, scores).unwrap();
            let b = FlowResponse::new("p", VisCondition::Absent, permuted).unwrap();
            prop_assert_eq!(flow_index(&a).unwrap(), flow_index(&b).unwrap());
        }
    }
}
