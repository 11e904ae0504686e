//! Aggregate per-method metric rows into unified scores, reproducing the
//! published benchmark aggregation, and score an ablation row set against
//! the benchmark normalizers.
//!
//! ```bash
//! cargo run --release --example sucps_report
//! ```

use splatguard::metrics::{
    benchmark_rows, component_rows, normalizers_from_rows, rows_to_csv, scores_to_csv, sucps,
    sucps_with_normalizers,
};

fn main() -> splatguard::Result<()> {
    let out_dir = std::path::PathBuf::from("target/examples-out/sucps_report");
    std::fs::create_dir_all(&out_dir)?;

    let rows = benchmark_rows();
    std::fs::write(out_dir.join("benchmark_rows.csv"), rows_to_csv(&rows))?;
    let scores = sucps(&rows)?;
    println!("benchmark methods (self-normalized):");
    for s in &scores {
        println!("  {:<16} T {:.4}  E {:.4}  F {:.4}  sUCPS {:.4}", s.method, s.t, s.e, s.f, s.sucps);
    }
    std::fs::write(out_dir.join("benchmark_scores.csv"), scores_to_csv(&scores))?;

    // component-toggle rows are scored against the benchmark's normalizers
    let norm = normalizers_from_rows(&rows)?;
    let ablation = sucps_with_normalizers(&component_rows(), &norm)?;
    println!("component toggles (benchmark-normalized):");
    for s in &ablation {
        println!("  {:<16} sUCPS {:.4}", s.method, s.sucps);
    }
    std::fs::write(out_dir.join("ablation_scores.csv"), scores_to_csv(&ablation))?;
    println!("tables in {}", out_dir.display());
    Ok(())
}
