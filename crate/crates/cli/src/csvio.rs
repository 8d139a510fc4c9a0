//! CSV schemas written by `train`, and the shared float format.
//!
//! Floats are written in scientific notation with 17 significant digits,
//! which is enough for every `f64` to parse back to the same bits.

use std::io::{Read, Write};
use std::str::FromStr;

use lowrank_core::train::{MemoryRecord, StorageTag, TrainReport};

use crate::error::{CliError, Result};

pub const REPORT_HEADER: [&str; 7] =
    ["epoch", "lr", "train_loss", "val_acc", "peak_mem_bytes", "mean_mem_bytes", "std_mem_bytes"];
pub const KTRAJ_HEADER: [&str; 6] = ["epoch", "layer", "mode", "k_min", "k_mean", "k_max"];
pub const LEDGER_HEADER: [&str; 13] =
    ["step", "layer", "method", "B", "C", "H", "W", "K1", "K2", "K3", "K4", "elements", "bytes"];

pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn parse_field<T: FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    let raw = rec.get(i).ok_or_else(|| CliError::Usage(format!("CSV row has no column {i}")))?;
    raw.parse().map_err(|_| CliError::Usage(format!("cannot parse CSV field {raw:?} in column {i}")))
}

pub(crate) fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if found.iter().ne(expected.iter().copied()) {
        return Err(CliError::Usage(format!("unexpected CSV header {found:?}, expected {expected:?}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_acc: f64,
    pub peak_mem_bytes: f64,
    pub mean_mem_bytes: f64,
    pub std_mem_bytes: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KtrajRow {
    pub epoch: usize,
    pub layer: usize,
    pub mode: usize,
    pub k_min: usize,
    pub k_mean: f64,
    pub k_max: usize,
}

pub fn report_rows(report: &TrainReport) -> Vec<ReportRow> {
    report
        .epochs
        .iter()
        .map(|e| ReportRow {
            epoch: e.epoch,
            lr: e.lr,
            train_loss: e.train_loss,
            val_acc: e.val_accuracy,
            peak_mem_bytes: e.memory.peak,
            mean_mem_bytes: e.memory.mean,
            std_mem_bytes: e.memory.std,
        })
        .collect()
}

pub fn ktraj_rows(report: &TrainReport) -> Vec<KtrajRow> {
    report
        .epochs
        .iter()
        .flat_map(|e| {
            e.ranks.iter().map(move |r| KtrajRow {
                epoch: e.epoch,
                layer: r.layer,
                mode: r.mode,
                k_min: r.min,
                k_mean: r.mean,
                k_max: r.max,
            })
        })
        .collect()
}

fn finish<W: Write>(mut w: csv::Writer<W>, what: &str) -> Result<()> {
    w.flush().map_err(|e| CliError::io(format!("writing {what}"), e))
}

pub fn write_report_csv<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        let mut rec = vec![r.epoch.to_string()];
        rec.extend(
            [r.lr, r.train_loss, r.val_acc, r.peak_mem_bytes, r.mean_mem_bytes, r.std_mem_bytes].map(format_float),
        );
        w.write_record(&rec)?;
    }
    finish(w, "report CSV")
}

pub fn read_report_csv<R: Read>(input: R) -> Result<Vec<ReportRow>> {
    let mut rd = csv::Reader::from_reader(input);
    check_header(rd.headers()?, &REPORT_HEADER)?;
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let f = |i| parse_field::<f64>(&rec, i);
        rows.push(ReportRow {
            epoch: parse_field(&rec, 0)?,
            lr: f(1)?,
            train_loss: f(2)?,
            val_acc: f(3)?,
            peak_mem_bytes: f(4)?,
            mean_mem_bytes: f(5)?,
            std_mem_bytes: f(6)?,
        });
    }
    Ok(rows)
}

pub fn write_ktraj_csv<W: Write>(rows: &[KtrajRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(KTRAJ_HEADER)?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.layer.to_string(),
            r.mode.to_string(),
            r.k_min.to_string(),
            format_float(r.k_mean),
            r.k_max.to_string(),
        ])?;
    }
    finish(w, "rank trajectory CSV")
}

pub fn read_ktraj_csv<R: Read>(input: R) -> Result<Vec<KtrajRow>> {
    let mut rd = csv::Reader::from_reader(input);
    check_header(rd.headers()?, &KTRAJ_HEADER)?;
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        rows.push(KtrajRow {
            epoch: parse_field(&rec, 0)?,
            layer: parse_field(&rec, 1)?,
            mode: parse_field(&rec, 2)?,
            k_min: parse_field(&rec, 3)?,
            k_mean: parse_field(&rec, 4)?,
            k_max: parse_field(&rec, 5)?,
        });
    }
    Ok(rows)
}

pub fn write_ledger_csv<W: Write>(records: &[MemoryRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LEDGER_HEADER)?;
    for r in records {
        let mut rec = vec![r.step.to_string(), r.layer.to_string(), r.tag.as_str().to_string()];
        rec.extend(r.dims.iter().chain(&r.ranks).map(|v| v.to_string()));
        rec.extend([r.elements.to_string(), r.bytes.to_string()]);
        w.write_record(&rec)?;
    }
    finish(w, "ledger CSV")
}

pub fn read_ledger_csv<R: Read>(input: R) -> Result<Vec<MemoryRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    check_header(rd.headers()?, &LEDGER_HEADER)?;
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let tag_raw: String = parse_field(&rec, 2)?;
        let tag = StorageTag::parse(&tag_raw).ok_or_else(|| CliError::Usage(format!("unknown method {tag_raw:?}")))?;
        let u = |i| parse_field::<usize>(&rec, i);
        rows.push(MemoryRecord {
            step: u(0)?,
            layer: u(1)?,
            tag,
            dims: [u(3)?, u(4)?, u(5)?, u(6)?],
            ranks: [u(7)?, u(8)?, u(9)?, u(10)?],
            elements: u(11)?,
            bytes: u(12)?,
        });
    }
    Ok(rows)
}
