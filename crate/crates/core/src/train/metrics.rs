use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "epoch,ce_loss,cl_loss,total_loss,train_acc,eval_acc,lr,wall_seconds";

/// Per-epoch training summary. Losses are sample-weighted means over the
/// epoch's batches; accuracies are percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub ce_loss: f64,
    pub cl_loss: f64,
    pub total_loss: f64,
    pub train_acc: f64,
    pub eval_acc: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.ce_loss,
            self.cl_loss,
            self.total_loss,
            self.train_acc,
            self.eval_acc,
            self.lr,
            self.wall_seconds
        )
    }
}

/// Writes `metrics.csv` and its line-delimited JSON mirror side by side.
pub struct MetricsWriter {
    csv: BufWriter<File>,
    jsonl: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        let open = |name: &str| {
            let p = dir.join(name);
            File::create(&p).map(BufWriter::new).map_err(|e| Error::io(&p, e))
        };
        let mut csv = open("metrics.csv")?;
        let jsonl = open("metrics.jsonl")?;
        writeln!(csv, "{METRICS_HEADER}").map_err(|e| Error::io(dir, e))?;
        Ok(Self { csv, jsonl })
    }

    pub fn record(&mut self, r: &EpochRecord) -> Result<()> {
        let io = |e| Error::io("metrics", e);
        writeln!(self.csv, "{}", r.csv_row()).map_err(io)?;
        let line = serde_json::to_string(r).expect("record serialises");
        writeln!(self.jsonl, "{line}").map_err(io)?;
        self.csv.flush().map_err(io)?;
        self.jsonl.flush().map_err(io)
    }
}

/// Parses a metrics CSV back into records.
pub fn read_metrics_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Invalid("metrics CSV: unexpected header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::Invalid(format!("metrics CSV: bad row {}", i + 1));
            if f.len() != 8 {
                return Err(bad());
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad());
            Ok(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                ce_loss: num(1)?,
                cl_loss: num(2)?,
                total_loss: num(3)?,
                train_acc: num(4)?,
                eval_acc: num(5)?,
                lr: num(6)?,
                wall_seconds: num(7)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_jsonl_mirror() {
        let dir = tempfile::tempdir().unwrap();
        let r = EpochRecord {
            epoch: 1,
            ce_loss: 0.5,
            cl_loss: 2.25,
            total_loss: 1.625,
            train_acc: 50.0,
            eval_acc: 40.0,
            lr: 0.1,
            wall_seconds: 0.0,
        };
        {
            let mut w = MetricsWriter::create(dir.path()).unwrap();
            w.record(&r).unwrap();
        }
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(read_metrics_csv(&csv).unwrap(), vec![r.clone()]);
        let jsonl = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
        let back: EpochRecord = serde_json::from_str(jsonl.trim()).unwrap();
        assert_eq!(back, r);
    }
}
