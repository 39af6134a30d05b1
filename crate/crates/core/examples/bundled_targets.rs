//! Lists the bundled targets and writes each one's call graph and unsafe
//! manifest, the inputs `unsafe-focus pathfind` expects.
//!
//! ```text
//! cargo run --example bundled_targets -- [out_dir]
//! ```

use std::fs;
use std::path::PathBuf;

use unsafe_focus::{compute_blocklist, list_targets, write_manifest, BlockMode};

fn main() -> std::io::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "targets".into()));
    fs::create_dir_all(&out)?;
    for t in list_targets() {
        let bl = compute_blocklist(t.callgraph(), t.manifest(), BlockMode::Standard);
        println!(
            "{:<14} functions {:>3}  unsafe {:>2}  blocked {:>3}  oracles: {}",
            t.name(),
            t.functions().len(),
            t.manifest().len(),
            bl.len(),
            t.oracles().iter().map(|o| o.id.as_str()).collect::<Vec<_>>().join(", ")
        );
        fs::write(out.join(format!("{}.callgraph.tsv", t.name())), t.callgraph().to_edgelist())?;
        fs::write(out.join(format!("{}.unsafe.txt", t.name())), write_manifest(t.manifest()))?;
    }
    Ok(())
}
