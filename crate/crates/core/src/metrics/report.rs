use std::fmt::Write as _;
use std::path::Path;

use crate::error::{io_err, Result};

pub const CSV_HEADER: &str = "id,noise_kind,snr_db,sdr,sir,sar,stoi";

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub id: String,
    pub noise_kind: String,
    pub snr_db: f64,
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
    pub stoi: f64,
}

/// Per-utterance scores of an enhancer and, optionally, of the unprocessed
/// mixtures for reference.
#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub passthrough: Vec<EvalRecord>,
}

fn mean_record(id: &str, rows: &[EvalRecord]) -> Option<EvalRecord> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let avg = |f: fn(&EvalRecord) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let kind = if rows.iter().all(|r| r.noise_kind == rows[0].noise_kind) {
        rows[0].noise_kind.clone()
    } else {
        "all".to_string()
    };
    Some(EvalRecord {
        id: id.to_string(),
        noise_kind: kind,
        snr_db: avg(|r| r.snr_db),
        sdr: avg(|r| r.sdr),
        sir: avg(|r| r.sir),
        sar: avg(|r| r.sar),
        stoi: avg(|r| r.stoi),
    })
}

impl EvalReport {
    pub fn mean(&self) -> Option<EvalRecord> {
        mean_record("mean", &self.records)
    }

    pub fn passthrough_mean(&self) -> Option<EvalRecord> {
        mean_record("passthrough", &self.passthrough)
    }

    /// Header, one row per utterance, then the `mean` row and, when present,
    /// the `passthrough` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let rows = self
            .records
            .iter()
            .cloned()
            .chain(self.mean())
            .chain(self.passthrough_mean());
        for r in rows {
            writeln!(
                out,
                "{},{},{:.3},{:.4},{:.4},{:.4},{:.5}",
                r.id, r.noise_kind, r.snr_db, r.sdr, r.sir, r.sar, r.stoi
            )
            .unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(io_err(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, sdr: f64) -> EvalRecord {
        EvalRecord {
            id: id.into(),
            noise_kind: "babble".into(),
            snr_db: 0.0,
            sdr,
            sir: 1.0,
            sar: 2.0,
            stoi: 0.5,
        }
    }

    #[test]
    fn csv_layout() {
        let report = EvalReport {
            records: vec![rec("a", 1.0), rec("b", 3.0)],
            passthrough: vec![rec("a", 0.0), rec("b", 0.5)],
        };
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[3].starts_with("mean,babble,0.000,2.0000"));
        assert!(lines[4].starts_with("passthrough,babble,0.000,0.2500"));
    }

    #[test]
    fn no_passthrough_row_when_absent() {
        let report = EvalReport {
            records: vec![rec("a", 1.0)],
            passthrough: vec![],
        };
        assert_eq!(report.to_csv().lines().count(), 3);
    }
}
