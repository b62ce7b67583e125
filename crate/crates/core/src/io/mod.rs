//! File formats: trace files, profiles, selections, curves and reports.

pub mod results;
pub mod trace;

use sha2::{Digest, Sha256};

use crate::cascade::ExampleRecord;

pub use results::{
    curve_rows, load_curves, load_selection, read_curves, save_curves, save_json, write_curves,
    write_report_dir, CurveRow, SelectionFile, CURVE_STATISTICS, SELECTION_FORMAT_VERSION,
};
pub use trace::{
    load_records, load_records_with_header, read_records, round_sig9, save_records, write_records,
    TraceHeader, TRACE_FORMAT_VERSION,
};

/// Short digest of a record set's canonical serialization.
pub fn data_digest(records: &[ExampleRecord]) -> String {
    let mut buf = Vec::new();
    match write_records(records, "", &mut buf) {
        Ok(()) => {
            let d = Sha256::digest(&buf);
            d.iter().take(8).map(|b| format!("{b:02x}")).collect()
        }
        Err(_) => "unavailable".into(),
    }
}
