//! One fuzzing trial per arm on a bundled target.
//!
//! ```text
//! cargo run --release --example fuzz_trial -- [target] [duration_ms] [seed]
//! ```

use unsafe_focus::{compute_blocklist, run_trial, target_by_name, Arm, BlockMode, TrialConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "gatekeeper".into());
    let duration: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50_000);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);

    let t = target_by_name(&name).ok_or_else(|| format!("unknown target {name}"))?;
    let bl = compute_blocklist(t.callgraph(), t.manifest(), BlockMode::Standard);

    for arm in [Arm::Full, Arm::Partial] {
        let mut cfg = TrialConfig::new(&t, seed, duration);
        if arm == Arm::Partial {
            cfg.blocklist = Some(bl.clone());
            cfg.arm = Arm::Partial;
        }
        let r = run_trial(&t, &cfg)?;
        println!("{}", r.to_json());
    }
    Ok(())
}
