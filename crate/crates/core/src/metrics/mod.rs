//! Separation quality (SDR/SIR/SAR) and intelligibility (STOI) scores.

mod bss;
mod report;
mod stoi;

pub use bss::{bss_decompose, bss_eval, BssResult, Decomposition, DEFAULT_FILTER_LEN, SENTINEL_DB};
pub use report::{EvalRecord, EvalReport, CSV_HEADER};
pub use stoi::{stoi, StoiResult};
