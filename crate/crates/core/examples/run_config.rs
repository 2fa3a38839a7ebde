//! Seeded multi-run experiment from a JSON config, writing per-seed CSV traces
//! and a summary into a temporary directory.
//!
//! cargo run --release --example run_config [config.json]

use bilevel_escape::experiment::{run_experiment, ExperimentConfig};

fn main() -> bilevel_escape::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/planted_aid.json").into());
    let cfg = ExperimentConfig::load(path.as_ref())?;
    let out = std::env::temp_dir().join("bilevel-escape-run");
    let report = run_experiment(&cfg, &out)?;
    for s in &report.summary.seeds {
        println!(
            "seed {:>3}: {:?} after {:>6} iterations, {} perturbations, Φ = {:?}",
            s.seed,
            s.status,
            s.iterations,
            s.perturbations.len(),
            s.final_phi
        );
    }
    println!("{} files in {}", report.files.len(), out.display());
    Ok(())
}
