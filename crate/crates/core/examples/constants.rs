//! Derived constants and theory parameters for a problem spec.
//!
//! cargo run --example constants [problem-or-config.json]

use bilevel_escape::experiment::{constants_report, load_for_constants};

fn main() -> bilevel_escape::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/constants.json").into());
    let (spec, cfg) = load_for_constants(path.as_ref())?;
    print!("{}", constants_report(&spec, cfg.as_ref())?);
    Ok(())
}
