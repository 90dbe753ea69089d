//! Regenerates the bundled sample frame.
//!
//! ```text
//! cargo run -p vpf-core --example make_sample -- data/sample
//! ```

use std::path::PathBuf;

use vpf_core::synthetic::{sample_scene, write_frame};

fn main() {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data/sample".into()));
    let (scene, labels) = sample_scene();
    if let Err(e) = write_frame(&root, "000000", &scene, &labels) {
        eprintln!("error: {e}");
        std::process::exit(3);
    }
    println!("wrote {}", root.display());
}
