//! Policy/BD and selection-energy reports in CSV, JSON and Markdown.
//!
//! Values are held at two decimals, the precision they are reported at, so
//! that averages recomputed from the rendered rows match the rendered averages.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::PipelineError;

pub const AVERAGE_ALL: &str = "Average BD (all)";
pub const AVERAGE_DOWNSAMPLED: &str = "Average BD (downsampled)";
pub const AVERAGE_DELTA_E: &str = "Average";

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Two decimals, without a negative sign on zero.
pub fn fmt2(x: f64) -> String {
    let s = format!("{:.2}", x);
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn parse_num(s: &str) -> Result<f64, PipelineError> {
    s.trim().parse().map_err(|_| PipelineError::Data(format!("bad number `{s}`")))
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub sequence: String,
    /// `{120,30,15,15}`; empty on average rows.
    pub policy: String,
    pub bdr: f64,
    pub bdee: f64,
    pub bdde: f64,
    /// Whether the policy leaves the native rate at any CRF.
    #[serde(default)]
    pub downsampled: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub rows: Vec<PolicyRow>,
    pub averages: Vec<PolicyRow>,
}

impl PolicyReport {
    /// Rounds the rows and appends the averages over all rows and over
    /// downsampled rows (the latter only when there is at least one).
    pub fn new(rows: Vec<PolicyRow>) -> Self {
        let rows: Vec<PolicyRow> = rows
            .into_iter()
            .map(|r| PolicyRow {
                bdr: round2(r.bdr),
                bdee: round2(r.bdee),
                bdde: round2(r.bdde),
                ..r
            })
            .collect();
        let mut averages = Vec::new();
        for (name, only_down) in [(AVERAGE_ALL, false), (AVERAGE_DOWNSAMPLED, true)] {
            let sel: Vec<&PolicyRow> = rows.iter().filter(|r| !only_down || r.downsampled).collect();
            if let (Some(bdr), Some(bdee), Some(bdde)) = (
                mean(sel.iter().map(|r| r.bdr)),
                mean(sel.iter().map(|r| r.bdee)),
                mean(sel.iter().map(|r| r.bdde)),
            ) {
                averages.push(PolicyRow {
                    sequence: name.into(),
                    policy: String::new(),
                    bdr: round2(bdr),
                    bdee: round2(bdee),
                    bdde: round2(bdde),
                    downsampled: only_down,
                });
            }
        }
        PolicyReport { rows, averages }
    }

    pub fn to_csv(&self) -> String {
        let mut wr = csv::Writer::from_writer(Vec::new());
        wr.write_record(["sequence", "policy", "bdr", "bdee", "bdde"])
            .expect("in-memory write");
        for r in self.rows.iter().chain(&self.averages) {
            wr.write_record([r.sequence.as_str(), r.policy.as_str(), &fmt2(r.bdr), &fmt2(r.bdee), &fmt2(r.bdde)])
                .expect("in-memory write");
        }
        String::from_utf8(wr.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    /// Parses the CSV form; rows with an empty policy are averages.
    pub fn from_csv(text: &str) -> Result<Self, PipelineError> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        if rd.headers()?.iter().collect::<Vec<_>>() != ["sequence", "policy", "bdr", "bdee", "bdde"] {
            return Err(PipelineError::Data("unexpected policy report columns".into()));
        }
        let mut report = PolicyReport::default();
        for rec in rd.records() {
            let rec = rec?;
            let row = PolicyRow {
                sequence: rec[0].to_string(),
                policy: rec[1].to_string(),
                bdr: parse_num(&rec[2])?,
                bdee: parse_num(&rec[3])?,
                bdde: parse_num(&rec[4])?,
                downsampled: rec[0] == *AVERAGE_DOWNSAMPLED,
            };
            if row.policy.is_empty() {
                report.averages.push(row);
            } else {
                report.rows.push(row);
            }
        }
        Ok(report)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Sequence | Energy-aware frame rates | BDR [%] | BDEE [%] | BDDE [%] |\n|---|---|---:|---:|---:|\n");
        for r in self.rows.iter().chain(&self.averages) {
            writeln!(
                s,
                "| {} | {} | {} | {} | {} |",
                r.sequence,
                r.policy,
                fmt2(r.bdr),
                fmt2(r.bdee),
                fmt2(r.bdde)
            )
            .unwrap();
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaERow {
    pub sequence: String,
    pub delta_e_percent: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeltaEReport {
    pub rows: Vec<DeltaERow>,
    pub average: Option<f64>,
}

impl DeltaEReport {
    pub fn new(rows: Vec<DeltaERow>) -> Self {
        let rows: Vec<DeltaERow> = rows
            .into_iter()
            .map(|r| DeltaERow {
                delta_e_percent: round2(r.delta_e_percent),
                ..r
            })
            .collect();
        let average = mean(rows.iter().map(|r| r.delta_e_percent)).map(round2);
        DeltaEReport { rows, average }
    }

    pub fn to_csv(&self) -> String {
        let mut wr = csv::Writer::from_writer(Vec::new());
        wr.write_record(["sequence", "delta_e_percent"]).expect("in-memory write");
        for r in &self.rows {
            wr.write_record([r.sequence.as_str(), &fmt2(r.delta_e_percent)])
                .expect("in-memory write");
        }
        if let Some(avg) = self.average {
            wr.write_record([AVERAGE_DELTA_E, &fmt2(avg)]).expect("in-memory write");
        }
        String::from_utf8(wr.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self, PipelineError> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        if rd.headers()?.iter().collect::<Vec<_>>() != ["sequence", "delta_e_percent"] {
            return Err(PipelineError::Data("unexpected delta-e report columns".into()));
        }
        let mut report = DeltaEReport::default();
        for rec in rd.records() {
            let rec = rec?;
            let v = parse_num(&rec[1])?;
            if &rec[0] == AVERAGE_DELTA_E {
                report.average = Some(v);
            } else {
                report.rows.push(DeltaERow {
                    sequence: rec[0].to_string(),
                    delta_e_percent: v,
                });
            }
        }
        Ok(report)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Sequence | ΔE_select [%] |\n|---|---:|\n");
        for r in &self.rows {
            writeln!(s, "| {} | {} |", r.sequence, fmt2(r.delta_e_percent)).unwrap();
        }
        if let Some(avg) = self.average {
            writeln!(s, "| {AVERAGE_DELTA_E} | {} |", fmt2(avg)).unwrap();
        }
        s
    }
}
