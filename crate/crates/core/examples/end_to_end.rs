//! Runs the whole pipeline with the default grid into a temporary
//! directory and prints the model comparison.

use orderbook_forecast::cli::{run_pipeline, RunManifest};

fn main() -> orderbook_forecast::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("obf-end-to-end"));
    let manifest = RunManifest::new(out);
    let summary = run_pipeline(&manifest)?;
    println!("{} classes, {} feature rows", summary.scheme_classes, summary.n_rows);
    print!("{}", summary.comparison.render());
    println!("artifacts in {}", manifest.out.display());
    Ok(())
}
