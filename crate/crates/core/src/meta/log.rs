use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Mode;
use crate::corpus::write_atomic;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
}

/// Mean per-token loss of one bucket on one split after one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub bucket: usize,
    pub split: Split,
    pub mode: Mode,
    pub loss: f64,
    pub ppl: f64,
}

/// CSV text with rows sorted by `(bucket, epoch, split)`.
pub fn loss_curves_csv(log: &[LossRecord]) -> Result<String> {
    let mut rows = log.to_vec();
    rows.sort_by_key(|r| (r.bucket, r.epoch, r.split));
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Data(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

pub fn export_loss_curves(log: &[LossRecord], path: &Path) -> Result<()> {
    if log.is_empty() {
        return Err(Error::Usage("loss log is empty".into()));
    }
    write_atomic(path, loss_curves_csv(log)?.as_bytes())
}

pub fn parse_loss_curves(text: &str) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
