//! Render per-metric summary tables and SVG charts from a sweep's results
//! table. The report is a pure function of the table: running it twice
//! produces byte-identical files.
//!
//!     cargo run -p randcon --example report_tables

use randcon::harness::{preset, run_plan};
use randcon::report::report;

fn main() -> anyhow::Result<()> {
    let plan = preset("desk-smoke")?;
    let out = std::path::Path::new("target/example-output/report_tables");
    let manifest = run_plan(&plan, &out.join("sweep"))?;
    assert!(manifest.failures.is_empty());

    let hashes = report(&out.join("sweep/results.csv"), &out.join("figures"), true)?;
    println!("report files:");
    for (name, hash) in &hashes {
        println!("  {name:24} sha256 {}", &hash[..16]);
    }

    let table = std::fs::read_to_string(out.join("figures/fig_ari.csv"))?;
    println!("\nfig_ari.csv:\n{table}");
    Ok(())
}
