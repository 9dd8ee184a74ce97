// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::rates::fmt_opt_count;
use super::{pct, suppress};
use crate::detect::{Method, StatusMatrix, Verdict};
use crate::model::Params;

/// Destination label for cells folded together by suppression.
pub const OTHER_DESTINATION: &str = "OTHER";

/// Origin-destination counts of context-aware displaced users for one day.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowMatrix {
    pub date: NaiveDate,
    /// Cells at or above the threshold.
    pub entries: BTreeMap<(String, String), u64>,
    /// Per origin: (number of hidden cells, their combined count).
    pub suppressed: BTreeMap<String, (u64, u64)>,
    /// Displaced users per origin before suppression.
    pub origin_totals: BTreeMap<String, u64>,
    pub suppressed_entries: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRow {
    pub date: NaiveDate,
    pub origin: String,
    pub destination: String,
    pub count: Option<u64>,
    pub share_pct: f64,
    pub suppressed: bool,
}

pub fn od_flows(statuses: &StatusMatrix, date: NaiveDate, params: &Params) -> FlowMatrix {
    let mut raw: BTreeMap<(String, String), u64> = BTreeMap::new();
    for r in statuses.by_method(Method::ContextAware) {
        if r.date != date || r.verdict != Verdict::Displaced {
            continue;
        }
        let dest = r.observed_city.clone().unwrap_or_default();
        *raw.entry((r.home_city.clone(), dest)).or_insert(0) += 1;
    }
    let mut m = FlowMatrix { date, ..Default::default() };
    for ((origin, dest), count) in raw {
        *m.origin_totals.entry(origin.clone()).or_insert(0) += count;
        if suppress(count, params.suppression_k).is_some() {
            m.entries.insert((origin, dest), count);
        } else {
            let s = m.suppressed.entry(origin).or_insert((0, 0));
            s.0 += 1;
            s.1 += count;
            m.suppressed_entries += 1;
        }
    }
    m
}

impl FlowMatrix {
    /// Published rows: visible cells, then one OTHER row per origin with
    /// hidden cells. OTHER's count is itself hidden below `k`. Shares are
    /// over the origin's full displaced total.
    pub fn rows(&self, k: u64) -> Vec<FlowRow> {
        let mut out = Vec::new();
        for (origin, total) in &self.origin_totals {
            for ((o, dest), count) in self.entries.range((origin.clone(), String::new())..) {
                if o != origin {
                    break;
                }
                out.push(FlowRow {
                    date: self.date,
                    origin: origin.clone(),
                    destination: dest.clone(),
                    count: Some(*count),
                    share_pct: pct(*count, *total),
                    suppressed: false,
                });
            }
            if let Some(&(_, hidden)) = self.suppressed.get(origin) {
                out.push(FlowRow {
                    date: self.date,
                    origin: origin.clone(),
                    destination: OTHER_DESTINATION.to_string(),
                    count: suppress(hidden, k),
                    share_pct: pct(hidden, *total),
                    suppressed: true,
                });
            }
        }
        out
    }
}

pub(crate) fn write_flows_csv<W: Write>(rows: &[FlowRow], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "origin", "destination", "count", "share_pct", "suppressed"])?;
    for r in rows {
        w.write_record([
            r.date.to_string(),
            r.origin.clone(),
            r.destination.clone(),
            fmt_opt_count(r.count),
            format!("{:.4}", r.share_pct),
            r.suppressed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

impl FlowRow {
    pub fn write_csv<W: Write>(rows: &[FlowRow], writer: W) -> Result<(), csv::Error> {
        write_flows_csv(rows, writer)
    }
}
