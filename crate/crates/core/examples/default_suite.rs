//! Runs the default three-seed comparison (with the hybrid row) and prints the table.
//!
//! `cargo run --release --example default_suite -- OUT_DIR`

use std::time::Instant;

use betaseg::harness::{run_suite, SuiteConfig};

fn main() -> betaseg::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "suite_out".into());
    let config = SuiteConfig {
        include_hybrid: true,
        ..SuiteConfig::default()
    };
    let start = Instant::now();
    let result = run_suite(&config, &[1, 2, 3], &out)?;
    print!("{}", std::fs::read_to_string(format!("{out}/table.txt"))?);
    println!("{} rows, {:.0} s", result.averaged.len(), start.elapsed().as_secs_f64());
    Ok(())
}
