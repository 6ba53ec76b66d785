//! CSV outputs: evaluation logs, confusion grids, sweep summaries.

use std::fs::OpenOptions;
use std::path::Path;

use crate::error::Result;
use crate::network::Metrics;

/// Appends one `iteration, split, accuracy, hits_0..hits_{n-1}` row,
/// writing the header when the file is new.
pub fn append_eval(path: &Path, iteration: u64, split: &str, m: &Metrics) -> Result<()> {
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    let hits = m.class_hits();
    if fresh {
        let mut header = vec!["iteration".to_string(), "split".into(), "accuracy".into()];
        header.extend((0..hits.len()).map(|c| format!("hits_{c}")));
        w.write_record(&header)?;
    }
    let mut row = vec![iteration.to_string(), split.to_string(), format!("{:.6}", m.accuracy())];
    row.extend(hits.iter().map(|h| h.to_string()));
    w.write_record(&row)?;
    w.flush()?;
    Ok(())
}

/// Square grid, rows are true labels and columns predictions.
pub fn write_confusion(path: &Path, m: &Metrics) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = m.confusion.len();
    let mut header = vec!["true\\pred".to_string()];
    header.extend((0..n).map(|c| c.to_string()));
    w.write_record(&header)?;
    for (t, row) in m.confusion.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per evaluated image: dataset index, label, prediction.
pub fn write_predictions(path: &Path, slice: &[usize], truth: &[u32], m: &Metrics) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "label", "predicted"])?;
    for ((i, t), p) in slice.iter().zip(truth).zip(&m.predictions) {
        w.write_record([i.to_string(), t.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
