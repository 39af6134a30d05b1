//! Defines a new target with `TargetBuilder` and compares the two arms on it.
//!
//! The target parses `key=value` records. A safe pretty-printer absorbs most
//! inputs; only records whose key is `len` reach an unchecked write.
//!
//! ```text
//! cargo run --release --example custom_target
//! ```

use unsafe_focus::evalstats::{aggregate_report, render_table, samples_from_trials, CensorRule};
use unsafe_focus::harness::TargetBuilder;
use unsafe_focus::{run_campaign, CampaignConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut b = TargetBuilder::new("kv_records");
    let main = b.function("main", 3);
    let pretty = b.function("pretty_print", 8);
    let parse = b.function("parse_record", 6);
    let set_len = b.function("set_len_unchecked", 2);
    b.call("main", "pretty_print")
        .call("main", "parse_record")
        .call("parse_record", "set_len_unchecked")
        .unsafe_fn("set_len_unchecked")
        .seed(b"name=value")
        .seed(b"a=b;c=d");
    let hit = b.oracle("set_len", "set_len_unchecked");

    let target = b.build(move |input, t| {
        t.edge(main, 0);
        if !input.contains(&b'=') {
            for &c in input.iter().take(32) {
                t.edge(pretty, u32::from(c % 8));
            }
            return;
        }
        t.edge(main, 1);
        for rec in input.split(|&c| c == b';') {
            t.edge(parse, 0);
            let Some(eq) = rec.iter().position(|&c| c == b'=') else {
                t.edge(parse, 1);
                continue;
            };
            let key = &rec[..eq];
            let matched = key.iter().zip(b"len").take_while(|(a, b)| a == b).count();
            t.edge(parse, 2 + matched as u32);
            if key == b"len" {
                t.edge(set_len, 0);
                t.oracle(hit);
                t.edge(set_len, 1);
            }
        }
        t.edge(main, 2);
    })?;

    let cfg = CampaignConfig::new(8, 60_000, 3);
    let res = run_campaign(&target, &cfg)?;
    print!("{}", res.pathfind);
    let full = samples_from_trials(&res.full, cfg.duration_ms, CensorRule::Duration)?;
    let partial = samples_from_trials(&res.partial, cfg.duration_ms, CensorRule::Duration)?;
    print!("{}", render_table(target.name(), &aggregate_report(&full, &partial)?));
    Ok(())
}
