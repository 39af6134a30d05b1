//! Shows how a block list changes the coverage map: blocked functions get no
//! guards, so executions that differ only inside them look identical.
//!
//! ```text
//! cargo run --example coverage_filtering
//! ```

use unsafe_focus::coverage::{apply_trace, bucket_label, bucketize};
use unsafe_focus::{compute_blocklist, target_by_name, BlockMode, BucketSummary, CoverageMap, GuardTable};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let t = target_by_name("gatekeeper").expect("bundled target");
    let bl = compute_blocklist(t.callgraph(), t.manifest(), BlockMode::Standard);
    let full = GuardTable::unfiltered(t.functions(), 256)?;
    let partial = GuardTable::allocate(t.functions(), &bl, 256)?;
    println!("guarded edges: full {}, partial {}", full.guarded_edges(), partial.guarded_edges());

    let inputs: [&[u8]; 4] = [b"", b"hello", b"RUST\x01", b"RUST\x01\x02\x03"];
    for (name, gt) in [("full", &full), ("partial", &partial)] {
        println!("\n{name} arm");
        let mut summary = BucketSummary::new(256);
        for input in inputs {
            let trace = t.execute(input)?;
            let mut map = CoverageMap::new(256);
            apply_trace(&mut map, gt, &trace)?;
            let novelty = summary.novelty_check(&map);
            println!(
                "  {:<22} guards hit {:>2}  new coverage: {}",
                format!("\"{}\"", input.escape_ascii()),
                map.nonzero().count(),
                novelty.novel
            );
        }
    }

    println!("\nhit-count buckets:");
    for count in [0u8, 1, 2, 3, 5, 12, 20, 100, 255] {
        println!("  {count:>3} -> {}", bucket_label(bucketize(count)));
    }
    Ok(())
}
