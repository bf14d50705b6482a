//! `rounds.csv` and `summary.csv`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ComparisonRow, RoundSummary, RunSeries};
use crate::orchestrator::RoundRecord;
use crate::timing::ClockKind;

/// One client in one round. Field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub client: usize,
    pub pull_ms: f64,
    pub train_ms: f64,
    pub push_ms: f64,
    pub agg_ms: f64,
    pub acc: f64,
    pub acc_ma5: f64,
    pub emb_pulled: usize,
    pub emb_pushed: usize,
    pub cum_s: f64,
}

pub const ROUNDS_HEADER: &str = "round,client,pull_ms,train_ms,push_ms,agg_ms,acc,acc_ma5,emb_pulled,emb_pushed,cum_s";

pub fn round_rows(records: &[RoundRecord], clock: ClockKind) -> Vec<RoundRow> {
    let mut rows = Vec::new();
    for r in records {
        for c in &r.clients {
            let t = match clock {
                ClockKind::Modeled => c.modeled,
                ClockKind::Wall => c.wall,
            };
            rows.push(RoundRow {
                round: r.round,
                client: c.client,
                pull_ms: t.pull_ms,
                train_ms: t.train_ms,
                push_ms: t.push_ms,
                agg_ms: r.agg_ms(clock),
                acc: r.acc,
                acc_ma5: r.acc_ma5,
                emb_pulled: c.emb_pulled,
                emb_pushed: c.emb_pushed,
                cum_s: r.cum_s(clock),
            });
        }
    }
    rows
}

pub fn write_rounds<W: Write>(out: W, rows: &[RoundRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(ROUNDS_HEADER.split(','))?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rounds_file(path: &Path, rows: &[RoundRow]) -> Result<()> {
    write_rounds(std::fs::File::create(path)?, rows)
}

pub fn read_rounds<R: Read>(input: R) -> Result<Vec<RoundRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != ROUNDS_HEADER {
        return Err(Error::Format(format!("unexpected rounds.csv header {:?}", header.join(","))));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn read_rounds_file(path: &Path) -> Result<Vec<RoundRow>> {
    let f = std::fs::File::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    read_rounds(f)
}

/// Collapses per-client rows into one summary per round.
pub fn series_from_rows(name: &str, rows: &[RoundRow]) -> RunSeries {
    let mut by_round: BTreeMap<usize, RoundSummary> = BTreeMap::new();
    for r in rows {
        let s = by_round.entry(r.round).or_insert(RoundSummary {
            round: r.round,
            acc: r.acc,
            acc_ma5: r.acc_ma5,
            cum_s: r.cum_s,
            agg_ms: r.agg_ms,
            ..Default::default()
        });
        s.pull_ms = s.pull_ms.max(r.pull_ms);
        s.train_ms = s.train_ms.max(r.train_ms);
        s.push_ms = s.push_ms.max(r.push_ms);
        s.emb_pulled += r.emb_pulled;
        s.emb_pushed += r.emb_pushed;
    }
    RunSeries { name: name.to_string(), rounds: by_round.into_values().collect() }
}

pub fn write_summary<W: Write>(out: W, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "strategy",
        "peak_acc",
        "max_acc",
        "target",
        "tta_s",
        "median_round_s",
        "median_pull_ms",
        "median_train_ms",
        "median_push_ms",
        "median_agg_ms",
    ])?;
    for r in rows {
        let tta = r.tta_s.map_or(String::new(), |t| t.to_string());
        w.write_record([
            r.name.clone(),
            r.peak_acc.to_string(),
            r.max_acc.to_string(),
            r.target.to_string(),
            tta,
            r.median_round_s.to_string(),
            r.median_pull_ms.to_string(),
            r.median_train_ms.to_string(),
            r.median_push_ms.to_string(),
            r.median_agg_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
