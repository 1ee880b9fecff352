//! Writes the structured consolidation image used by the shipped configs.
//!
//! `cargo run --release -p daclab-core --example make_poster -- assets/poster.png [size] [seed]`

use std::path::PathBuf;

use daclab_core::datagen::{poster_image, save_image};

fn main() -> daclab_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(args.next().unwrap_or_else(|| "assets/poster.png".into()));
    let size = args.next().map_or(64, |s| s.parse().expect("size must be an integer"));
    let seed = args.next().map_or(0, |s| s.parse().expect("seed must be an integer"));
    save_image(&path, &poster_image(size, seed))?;
    println!("{}", path.display());
    Ok(())
}
