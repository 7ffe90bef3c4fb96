use std::fmt::Write;

use super::fixtures::{TABLE4, TABLE4_TOTAL};
use super::flow::{FlowSummary, TABLE_CONDITIONS};
use super::listener::ListenerSummary;

fn title(c: crate::improviser::VisCondition) -> &'static str {
    match c {
        crate::improviser::VisCondition::Truthful => "Truthful",
        crate::improviser::VisCondition::Deceptive => "Deceptive",
        crate::improviser::VisCondition::Absent => "Absent",
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

/// Flow index per participant and condition, summary rows, then the
/// pairwise matched-pair t-tests.
pub fn flow_text(s: &FlowSummary) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<12}", "Participant");
    for c in TABLE_CONDITIONS {
        let _ = write!(out, "{:>10}", title(c));
    }
    out.push('\n');
    for r in &s.rows {
        let _ = write!(out, "{:<12}", r.participant);
        for v in r.values {
            let _ = write!(out, "{:>10}", cell(v));
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<12}", "mean");
    for (_, sum) in &s.conditions {
        let _ = write!(out, "{:>10}", cell(Some(sum.mean)));
    }
    out.push('\n');
    let _ = write!(out, "{:<12}", "s. d.");
    for (_, sum) in &s.conditions {
        let _ = write!(out, "{:>10}", cell(sum.sd));
    }
    out.push_str("\n\n");
    for c in &s.comparisons {
        let r = &c.result;
        let _ = write!(out, "{} vs. {}: mean {:.2}, 95% CI [{:.2}, {:.2}]", title(c.a), title(c.b), r.mean_diff, r.ci95_low, r.ci95_high);
        if r.degenerate {
            out.push_str(", no variance in differences\n");
        } else {
            let _ = writeln!(out, ", t({}) = {:.3}, p = {:.4}", r.n - 1, r.t, r.p_two_sided);
        }
    }
    out
}

pub fn listener_text(s: &ListenerSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} of {} listeners met the inclusion criteria", s.included, s.participants);
    for (p, why) in &s.excluded {
        let reasons: Vec<String> = why.iter().map(|e| format!("{e:?}")).collect();
        let _ = writeln!(out, "  excluded {p}: {}", reasons.join(", "));
    }
    let _ = writeln!(out, "{:<10}{:>18}{:>24}", "Tracks", "More interesting", "Better musical balance");
    for r in &s.rows {
        let _ = writeln!(out, "{:<10}{:>17.0}%{:>23.0}%", r.comparison, r.interesting.percent(), r.balance.percent());
    }
    let _ = writeln!(out, "{:<10}{:>17.0}%{:>23.0}%", "Total", s.total_interesting.percent(), s.total_balance.percent());
    let _ = writeln!(
        out,
        "binomial test (Truthful preferred, one-sided): interesting {}/{} p = {:.4}; balance {}/{} p = {:.4}",
        s.total_interesting.truthful,
        s.total_interesting.total,
        s.p_interesting,
        s.total_balance.truthful,
        s.total_balance.total,
        s.p_balance
    );
    out
}

/// The published listener table, as printed.
pub fn table4_text() -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<10}{:>18}{:>24}", "Tracks", "More interesting", "Better musical balance");
    for (t, i, b) in TABLE4 {
        let _ = writeln!(out, "{t:<10}{i:>17}%{b:>23}%");
    }
    let _ = writeln!(out, "{:<10}{:>17}%{:>23}%", "Total", TABLE4_TOTAL.0, TABLE4_TOTAL.1);
    out
}
