//! Regenerates the bundled corpus under `crates/core/corpus`.
//!
//! `cargo run -p contactformer --example make_corpus`

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use contactformer::synthetic::corpus;

fn main() -> std::io::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus");
    let pdb = root.join("pdb");
    fs::create_dir_all(&pdb)?;
    let (files, index, expect) = corpus(2024);
    for f in &files {
        fs::write(pdb.join(&f.name), &f.contents)?;
    }
    fs::write(root.join("index.tsv"), index)?;
    let mut manifest = String::from("# entry_id\texpected\n");
    for e in &expect {
        let _ = writeln!(
            manifest,
            "{}\t{}",
            e.entry_id,
            e.rejection.unwrap_or("KEPT")
        );
    }
    fs::write(root.join("manifest.tsv"), manifest)?;
    println!("wrote {} structures to {}", files.len(), root.display());
    Ok(())
}
