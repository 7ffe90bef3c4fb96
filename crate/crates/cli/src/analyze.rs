use std::fs::File;
use std::path::Path;

use duet_core::analysis::{
    condition_summary, flow_text, listener_summary, listener_text, pca_first_component, read_flow_csv, read_listener_csv,
    responses_from_rows, summarize_table, table2_rows, table4_text, weighted_flow_index, Component, Dimension, FlowSummary, TABLE4,
    TABLE4_TOTAL,
};
use serde::Serialize;

use crate::failure::{Classify, CmdResult, Failure};
use crate::manifest::Recorder;

#[derive(Debug, Serialize)]
struct FlowResults {
    summary: FlowSummary,
    /// First principal component of the nine item scores, when computed from
    /// session-level responses.
    pca: Option<Component>,
    weighted_index_mean: Option<f64>,
}

fn open(path: &Path, rec: &mut Recorder) -> CmdResult<File> {
    rec.input(path);
    File::open(path).data(format!("cannot open {}", path.display()))
}

pub fn flow(csv: Option<&Path>, published: bool, json: bool, rec: &mut Recorder) -> CmdResult<()> {
    let results = match (csv, published) {
        (Some(path), false) => {
            let responses = read_flow_csv(open(path, rec)?).data(format!("{}", path.display()))?;
            let summary = condition_summary(&responses).data("flow summary")?;
            let rows: Vec<Vec<f64>> = responses.iter().map(|r| r.scores()).collect::<Result<_, _>>().data("item scores")?;
            let pca = (rows.len() >= 2).then(|| pca_first_component(&rows)).transpose().data("principal components")?;
            let weighted_index_mean = match &pca {
                Some(c) => {
                    let idx: Vec<f64> = responses
                        .iter()
                        .map(|r| weighted_flow_index(r, &c.loadings, &Dimension::INDEX))
                        .collect::<Result<_, _>>()
                        .data("weighted flow index")?;
                    Some(idx.iter().sum::<f64>() / idx.len() as f64)
                }
                None => None,
            };
            FlowResults { summary, pca, weighted_index_mean }
        }
        (None, true) => {
            FlowResults { summary: summarize_table(table2_rows()).data("published table")?, pca: None, weighted_index_mean: None }
        }
        _ => return Err(Failure::usage("give either a CSV file or --published")),
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&results).expect("flow results serialize"));
    } else {
        print!("{}", flow_text(&results.summary));
        if let Some(c) = &results.pca {
            let loadings: Vec<String> = Dimension::ALL.iter().zip(&c.loadings).map(|(d, l)| format!("{} {l:+.3}", d.name())).collect();
            println!("first component ({:.1}% of variance): {}", 100.0 * c.explained_variance_ratio, loadings.join(", "));
        }
        if let Some(w) = results.weighted_index_mean {
            println!("PCA-weighted flow index, mean over sessions: {w:.3}");
        }
    }
    rec.results(&results);
    Ok(())
}

#[derive(Debug, Serialize)]
struct PublishedListener {
    rows: Vec<(&'static str, u32, u32)>,
    total: (u32, u32),
}

pub fn listener(csv: Option<&Path>, published: bool, json: bool, rec: &mut Recorder) -> CmdResult<()> {
    match (csv, published) {
        (Some(path), false) => {
            let rows = read_listener_csv(open(path, rec)?).data(format!("{}", path.display()))?;
            let summary = listener_summary(&responses_from_rows(&rows)).data("listener summary")?;
            if json {
                println!("{}", serde_json::to_string_pretty(&summary).expect("listener results serialize"));
            } else {
                print!("{}", listener_text(&summary));
            }
            rec.results(&summary);
        }
        (None, true) => {
            let p = PublishedListener { rows: TABLE4.to_vec(), total: TABLE4_TOTAL };
            if json {
                println!("{}", serde_json::to_string_pretty(&p).expect("table serializes"));
            } else {
                print!("{}", table4_text());
            }
            rec.results(&p);
        }
        _ => return Err(Failure::usage("give either a CSV file or --published")),
    }
    Ok(())
}
