//! Writes the fixture timbre models: `cargo run --example gen_fixtures -- <root>`.

use std::path::PathBuf;

fn main() {
    let root = std::env::args_os().nth(1).map(PathBuf::from).unwrap_or_else(|| "models".into());
    if let Err(e) = harmonia::fixtures::write_fixtures(&root) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
    println!("wrote {} models to {}", harmonia::fixtures::FIXTURE_NAMES.len(), root.display());
}
