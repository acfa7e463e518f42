use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub seconds: f64,
}

/// Per-epoch training history with strictly increasing epoch numbers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    records: Vec<EpochRecord>,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,test_acc,seconds";

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: EpochRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.epoch <= last.epoch {
                return Err(Error::Contract(format!(
                    "epoch {} recorded after epoch {}",
                    record.epoch, last.epoch
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Renders the log as CSV. With `wall_clock` off the `seconds` column is
    /// written as 0 so that repeated runs produce identical files.
    pub fn to_csv(&self, wall_clock: bool) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.records {
            let secs = if wall_clock { r.seconds } else { 0.0 };
            writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch, r.train_loss, r.train_acc, r.test_acc, secs
            )
            .expect("writing to a String");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize) -> EpochRecord {
        EpochRecord {
            epoch,
            train_loss: 1.5,
            train_acc: 0.75,
            test_acc: 0.5,
            seconds: 0.125,
        }
    }

    #[test]
    fn epochs_must_increase() {
        let mut log = MetricsLog::new();
        log.push(rec(1)).unwrap();
        assert!(log.push(rec(1)).is_err());
        log.push(rec(3)).unwrap();
        assert_eq!(log.records().len(), 2);
    }

    #[test]
    fn csv_layout() {
        let mut log = MetricsLog::new();
        log.push(rec(1)).unwrap();
        assert_eq!(log.to_csv(true), format!("{METRICS_HEADER}\n1,1.5,0.75,0.5,0.125\n"));
        assert_eq!(log.to_csv(false), format!("{METRICS_HEADER}\n1,1.5,0.75,0.5,0\n"));
    }
}
