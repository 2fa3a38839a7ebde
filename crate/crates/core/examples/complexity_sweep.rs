//! Iterations to certification across an ε grid, with the log–log slope.
//!
//! cargo run --release --example complexity_sweep [config.json]

use bilevel_escape::experiment::{sweep, ExperimentConfig};

fn main() -> bilevel_escape::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/ramp_sweep.json").into());
    let cfg = ExperimentConfig::load(path.as_ref())?;
    let report = sweep(&cfg)?;
    print!("{}", report.to_csv_string());
    match (report.fit, report.warning) {
        (Some(f), _) => println!("slope {:.3} (r² {:.4})", f.slope, f.r_squared),
        (None, w) => println!("no fit: {w:?}"),
    }
    Ok(())
}
