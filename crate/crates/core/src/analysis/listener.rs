//! The on-line A/B listening study: exclusion rules, per-comparison tallies
//! and the binomial test on pooled choices.

use std::collections::BTreeMap;
use std::io::Read;

use serde::Serialize;

use super::stats::binomial_test_one_sided;
use super::AnalysisError;

/// Time needed to hear every track on the questionnaire.
pub const MIN_DURATION_S: f64 = 8.0 * 60.0;

/// Comparison label of the attention check (one track without drums).
pub const CHECK_COMPARISON: &str = "check";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Question {
    Interesting,
    Balance,
    /// Attention check only: which track had drums.
    Drums,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Truthful,
    Deceptive,
    WithDrums,
    WithoutDrums,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ListenerRow {
    pub participant: String,
    pub comparison: String,
    pub question: Question,
    pub choice: Choice,
    /// Total time the participant spent on the questionnaire.
    pub duration_s: f64,
    /// The platform's scoring of the drums question.
    pub attention_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    WrongDrumsAnswer,
    BalanceOnDrumlessTrack,
    UnderEightMinutes,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ListenerResponse {
    pub participant: String,
    /// `(comparison, question) -> choice` for the study comparisons.
    pub choices: BTreeMap<(String, Question), Choice>,
    pub exclusions: Vec<Exclusion>,
}

impl ListenerResponse {
    pub fn included(&self) -> bool {
        self.exclusions.is_empty()
    }
}

/// Groups rows by participant (first-seen order) and applies the exclusion
/// rules.
pub fn responses_from_rows(rows: &[ListenerRow]) -> Vec<ListenerResponse> {
    let mut order: Vec<String> = Vec::new();
    let mut by: BTreeMap<String, Vec<&ListenerRow>> = BTreeMap::new();
    for r in rows {
        if !by.contains_key(&r.participant) {
            order.push(r.participant.clone());
        }
        by.entry(r.participant.clone()).or_default().push(r);
    }
    order
        .into_iter()
        .map(|p| {
            let rows = &by[&p];
            let mut exclusions = Vec::new();
            let wrong_drums = rows.iter().any(|r| {
                !r.attention_ok || (r.comparison == CHECK_COMPARISON && r.question == Question::Drums && r.choice == Choice::WithoutDrums)
            });
            if wrong_drums {
                exclusions.push(Exclusion::WrongDrumsAnswer);
            }
            if rows.iter().any(|r| r.comparison == CHECK_COMPARISON && r.question == Question::Balance && r.choice == Choice::WithoutDrums)
            {
                exclusions.push(Exclusion::BalanceOnDrumlessTrack);
            }
            if rows.iter().any(|r| r.duration_s < MIN_DURATION_S) {
                exclusions.push(Exclusion::UnderEightMinutes);
            }
            let choices =
                rows.iter().filter(|r| r.comparison != CHECK_COMPARISON).map(|r| ((r.comparison.clone(), r.question), r.choice)).collect();
            ListenerResponse { participant: p, choices, exclusions }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tally {
    pub truthful: u64,
    pub total: u64,
}

impl Tally {
    pub fn percent(&self) -> f64 {
        if self.total == 0 {
            return f64::NAN;
        }
        100.0 * self.truthful as f64 / self.total as f64
    }

    /// One-sided binomial test against random choice.
    pub fn p_value(&self) -> Result<f64, AnalysisError> {
        binomial_test_one_sided(self.truthful, self.total, 0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTally {
    pub comparison: String,
    pub interesting: Tally,
    pub balance: Tally,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ListenerSummary {
    pub participants: usize,
    pub included: usize,
    pub excluded: Vec<(String, Vec<Exclusion>)>,
    pub rows: Vec<ComparisonTally>,
    /// Pooled over every included response.
    pub total_interesting: Tally,
    pub total_balance: Tally,
    pub p_interesting: f64,
    pub p_balance: f64,
}

/// Share of included participants preferring the Truthful track, per
/// comparison and pooled over all responses.
pub fn listener_summary(responses: &[ListenerResponse]) -> Result<ListenerSummary, AnalysisError> {
    let included: Vec<&ListenerResponse> = responses.iter().filter(|r| r.included()).collect();
    if included.is_empty() {
        return Err(AnalysisError::Input("no listener met the inclusion criteria".into()));
    }
    let mut comparisons: Vec<String> = Vec::new();
    for r in &included {
        for (c, _) in r.choices.keys() {
            if !comparisons.contains(c) {
                comparisons.push(c.clone());
            }
        }
    }
    comparisons.sort();
    let tally = |c: &str, q: Question| {
        let mut t = Tally { truthful: 0, total: 0 };
        for r in &included {
            match r.choices.get(&(c.to_string(), q)) {
                Some(Choice::Truthful) => {
                    t.truthful += 1;
                    t.total += 1;
                }
                Some(Choice::Deceptive) => t.total += 1,
                _ => {}
            }
        }
        t
    };
    let rows: Vec<ComparisonTally> = comparisons
        .iter()
        .map(|c| ComparisonTally {
            comparison: c.clone(),
            interesting: tally(c, Question::Interesting),
            balance: tally(c, Question::Balance),
        })
        .collect();
    let pool = |f: fn(&ComparisonTally) -> Tally| {
        rows.iter()
            .map(f)
            .fold(Tally { truthful: 0, total: 0 }, |a, b| Tally { truthful: a.truthful + b.truthful, total: a.total + b.total })
    };
    let total_interesting = pool(|r| r.interesting);
    let total_balance = pool(|r| r.balance);
    Ok(ListenerSummary {
        participants: responses.len(),
        included: included.len(),
        excluded: responses.iter().filter(|r| !r.included()).map(|r| (r.participant.clone(), r.exclusions.clone())).collect(),
        rows,
        p_interesting: total_interesting.p_value()?,
        p_balance: total_balance.p_value()?,
        total_interesting,
        total_balance,
    })
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Some(true),
        "0" | "false" | "no" | "n" => Some(false),
        _ => None,
    }
}

/// Reads `participant,comparison,question,choice,duration_s,attention_ok`
/// rows; a header line is optional.
pub fn read_listener_csv<R: Read>(r: R) -> Result<Vec<ListenerRow>, AnalysisError> {
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
        if rec.len() != 6 {
            return Err(bad(format!("expected 6 fields, got {}", rec.len())));
        }
        let question = match rec[2].to_ascii_lowercase().as_str() {
            "interesting" => Question::Interesting,
            "balance" => Question::Balance,
            "drums" => Question::Drums,
            other => return Err(bad(format!("unknown question '{other}'"))),
        };
        let choice = match rec[3].to_ascii_lowercase().as_str() {
            "truthful" => Choice::Truthful,
            "deceptive" => Choice::Deceptive,
            "with_drums" => Choice::WithDrums,
            "without_drums" => Choice::WithoutDrums,
            other => return Err(bad(format!("unknown choice '{other}'"))),
        };
        let check = rec[1].eq_ignore_ascii_case(CHECK_COMPARISON);
        if check != matches!(choice, Choice::WithDrums | Choice::WithoutDrums) {
            return Err(bad(format!("choice '{}' does not belong to comparison '{}'", &rec[3], &rec[1])));
        }
        if question == Question::Drums && !check {
            return Err(bad("the drums question belongs to the check comparison".into()));
        }
        let duration_s: f64 = rec[4].parse().map_err(|_| bad(format!("duration '{}' is not a number", &rec[4])))?;
        let attention_ok = parse_bool(&rec[5]).ok_or_else(|| bad(format!("attention flag '{}' is not a boolean", &rec[5])))?;
        out.push(ListenerRow {
            participant: rec[0].to_string(),
            comparison: if check { CHECK_COMPARISON.to_string() } else { rec[1].to_string() },
            question,
            choice,
            duration_s,
            attention_ok,
        });
    }
    if out.is_empty() {
        return Err(AnalysisError::Input("listener CSV has no responses".into()));
    }
    Ok(out)
}
