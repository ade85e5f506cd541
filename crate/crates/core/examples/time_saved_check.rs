//! Recompute the time-saved column of a CSV or JSON report.
//!
//! cargo run --example time_saved_check -- [REPORT]

use kar::bench::{check_time_saved, parse_csv_report, parse_json_report, TIME_SAVED_TOLERANCE};

fn main() -> kar::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/reference_table.csv").into());
    let bytes = std::fs::read(&path).map_err(|e| kar::Error::io(&path, e))?;
    let rows = if path.ends_with(".json") { parse_json_report(&bytes)? } else { parse_csv_report(&bytes)? };

    println!("tolerance {TIME_SAVED_TOLERANCE} percentage points");
    for c in check_time_saved(&rows) {
        let show = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.2}%"));
        let verdict = match (c.consistent, c.reproducible) {
            (true, true) => "ok",
            (true, false) => "rounding",
            (false, _) => "mismatch",
        };
        println!("{verdict:<9} {:>8} {:>8}  {}", show(c.recorded), show(c.computed), c.query);
    }
    Ok(())
}
