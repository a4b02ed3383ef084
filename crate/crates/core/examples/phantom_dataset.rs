//! Writes a small phantom dataset and its manifest.
//!
//! ```text
//! cargo run --example phantom_dataset -- <out_dir> [size]
//! ```

use std::path::PathBuf;

use pathosynth::phantom::write_phantom_dataset;

fn main() -> pathosynth::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "phantom_data".into()));
    let size: usize = args
        .next()
        .map(|s| s.parse().expect("size must be an integer"))
        .unwrap_or(128);
    println!("{}", write_phantom_dataset(&out, size)?.display());
    Ok(())
}
