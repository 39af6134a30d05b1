//! Paired full/partial campaign on the `honeypot` target.
//!
//! ```text
//! cargo run --release --example honeypot_campaign -- [trials] [duration_ms] [seed]
//! ```

use unsafe_focus::evalstats::{aggregate_report, render_table, samples_from_trials, CensorRule};
use unsafe_focus::{run_campaign, target_by_name, CampaignConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let trials: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(10);
    let duration: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200_000);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);

    let target = target_by_name("honeypot").expect("bundled target");
    let mut cfg = CampaignConfig::new(trials, duration, seed);
    cfg.jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let res = run_campaign(&target, &cfg)?;
    print!("{}", res.pathfind);

    for (arm, results) in [("full", &res.full), ("partial", &res.partial)] {
        for r in results {
            let hits: Vec<String> = r
                .first_hit
                .iter()
                .map(|(k, v)| format!("{k}={}", v.map_or("-".to_string(), |t| t.to_string())))
                .collect();
            println!("{arm:<8} trial {:>2}  corpus {:>4}  {}", r.trial_index, r.corpus_size, hits.join(" "));
        }
    }

    let full = samples_from_trials(&res.full, duration, CensorRule::Duration)?;
    let partial = samples_from_trials(&res.partial, duration, CensorRule::Duration)?;
    let report = aggregate_report(&full, &partial)?;
    print!("{}", render_table(target.name(), &report));
    Ok(())
}
