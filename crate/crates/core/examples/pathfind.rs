//! Computes a block list: functions that cannot reach unsafe code.
//!
//! `main` calls `fun_1` (unsafe) and `fun_2` (safe), so inputs that only
//! exercise `fun_2` are uninteresting and `fun_2` is blocked. The same graph
//! is then given as DOT with an indirect call to show the conservative mode.
//!
//! ```text
//! cargo run --example pathfind
//! ```

use unsafe_focus::pathfinder::compute_with_summary;
use unsafe_focus::{parse_dot, parse_edgelist, write_blocklist, BlockListFormat, BlockMode, UnsafeManifest};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let g = parse_edgelist("main\tfun_1\nmain\tfun_2\n")?;
    let m: UnsafeManifest = unsafe_focus::load_manifest("fun_1\n")?;

    let (bl, summary) = compute_with_summary(&g, &m, BlockMode::Standard);
    print!("{summary}");
    print!("plain:\n{}", write_blocklist(&bl, BlockListFormat::Plain));
    print!("afl denylist:\n{}", write_blocklist(&bl, BlockListFormat::AflDenylist));

    // fun_2 calls through a function pointer the call graph could not resolve.
    let dot = r#"digraph "Call graph" {
        Node0x1 [shape=record,label="{main}"];
        Node0x2 [shape=record,label="{fun_1}"];
        Node0x3 [shape=record,label="{fun_2}"];
        Node0x4 [shape=record,label="external node"];
        Node0x1 -> Node0x2;
        Node0x1 -> Node0x3;
        Node0x3 -> Node0x4;
    }"#;
    let g = parse_dot(dot)?;
    for mode in [BlockMode::Standard, BlockMode::ConservativeIndirect] {
        let (bl, _) = compute_with_summary(&g, &m, mode);
        let names: Vec<String> = bl.blocked().iter().map(|f| f.to_string()).collect();
        println!("{mode:?}: blocked = {{{}}}", names.join(", "));
    }
    Ok(())
}
