//! Runs every theory check at full size and prints the CSV report.
//!
//! ```text
//! cargo run --release --example verify_theory
//! ```

use macdmp::theorylab::{to_csv, verify_all, Status, VerifyConfig};

fn main() -> macdmp::Result<()> {
    let rows = verify_all(&VerifyConfig::default())?;
    print!("{}", to_csv(&rows));
    let failed = rows.iter().filter(|r| r.status == Status::Fail).count();
    eprintln!("{} rows, {failed} failed", rows.len());
    if failed > 0 {
        std::process::exit(1);
    }
    Ok(())
}
