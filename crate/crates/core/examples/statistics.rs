//! Mann-Whitney U and Vargha-Delaney A12 on time-to-first-hit samples.
//!
//! ```text
//! cargo run --example statistics
//! ```

use std::collections::BTreeMap;

use unsafe_focus::evalstats::{aggregate_report, render_table};
use unsafe_focus::{a12, classify_effect, mann_whitney_u, SampleSet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = SampleSet::new(vec![1.0, 2.0, 3.0])?;
    let y = SampleSet::new(vec![4.0, 5.0, 6.0])?;
    let mw = mann_whitney_u(&x, &y);
    println!("{{1,2,3}} vs {{4,5,6}}: U = {}, p = {} (exact: {})", mw.u, mw.p_value, mw.exact);
    println!(
        "a12({{1,2}}, {{2,3}}) = {}",
        a12(&SampleSet::new(vec![1.0, 2.0])?, &SampleSet::new(vec![2.0, 3.0])?)
    );
    for v in [0.55, 0.60, 0.66, 0.99] {
        println!("a12 {v:.2}, p 0.01 -> {:?}", classify_effect(v, 0.01));
    }

    // Time to first hit (ms) over 8 trials; 1000 means never reached.
    let full: BTreeMap<String, SampleSet> = [(
        "deep".to_string(),
        SampleSet::with_hits(vec![1000.0, 1000.0, 870.0, 1000.0, 640.0, 1000.0, 1000.0, 990.0], 3)?,
    ), (
        "shallow".to_string(),
        SampleSet::with_hits(vec![12.0, 30.0, 8.0, 15.0, 22.0, 9.0, 40.0, 17.0], 8)?,
    )]
    .into_iter()
    .collect();
    let partial: BTreeMap<String, SampleSet> = [(
        "deep".to_string(),
        SampleSet::with_hits(vec![210.0, 340.0, 150.0, 480.0, 290.0, 1000.0, 260.0, 330.0], 7)?,
    ), (
        "shallow".to_string(),
        SampleSet::with_hits(vec![14.0, 25.0, 10.0, 19.0, 21.0, 11.0, 33.0, 16.0], 8)?,
    )]
    .into_iter()
    .collect();
    let report = aggregate_report(&full, &partial)?;
    print!("\n{}", render_table("example", &report));
    Ok(())
}
