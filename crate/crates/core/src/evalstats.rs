//! Two-arm comparison of time-to-hit samples.
//!
//! Mann–Whitney U for significance, Vargha–Delaney Â12 for effect size.
//! Â12 is computed as `a12(baseline, tool)`, so for lower-is-better times a
//! value near 1 means the tool (partial arm) is faster.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::fuzzer::TrialResult;

pub const SIGNIFICANCE: f64 = 0.05;
/// Largest `|x|·|y|` for which p-values are computed by exact enumeration.
pub const EXACT_MAX_PRODUCT: usize = 64;

const SMALL: f64 = 0.06;
const MEDIUM: f64 = 0.14;
const LARGE: f64 = 0.21;
const EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("sample set is empty")]
    EmptySample,
    #[error("sample value {0} is negative or not finite")]
    BadValue(f64),
    #[error("oracle sets differ between arms: {0}")]
    MismatchedOracles(String),
    #[error("no results to report")]
    NoResults,
}

/// Per-trial first-hit times for one oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    values: Vec<f64>,
    hits: usize,
}

impl SampleSet {
    /// All values count as observed hits.
    pub fn new(values: Vec<f64>) -> Result<Self, StatsError> {
        let hits = values.len();
        Self::with_hits(values, hits)
    }

    /// `hits` is the number of uncensored values.
    pub fn with_hits(values: Vec<f64>, hits: usize) -> Result<Self, StatsError> {
        if values.is_empty() {
            return Err(StatsError::EmptySample);
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(StatsError::BadValue(*v));
        }
        Ok(Self {
            hits: hits.min(values.len()),
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn hits(&self) -> usize {
        self.hits
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn median(&self) -> f64 {
        median(&self.values)
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// How never-hit oracles enter the samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensorRule {
    /// A censored trial counts as hitting at exactly the trial duration.
    #[default]
    Duration,
    /// Censored trials share one value above every observed time, i.e. the
    /// tied maximum rank.
    TiedMaxRank,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Midranks (1-based) of the pooled values.
fn midranks(pooled: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        if j > i {
            ties.push(j - i + 1);
        }
        i = j + 1;
    }
    (ranks, ties)
}

/// Two-sided Mann–Whitney U test.
///
/// With `|x|·|y| <= 64` the p-value is exact: the null distribution of the
/// rank sum over all `C(n, |x|)` label assignments of the pooled midranks,
/// counting assignments at least as far from the mean as the observed one.
/// Larger samples use the normal approximation with tie and continuity
/// correction.
pub fn mann_whitney_u(x: &SampleSet, y: &SampleSet) -> MannWhitney {
    let nx = x.len();
    let ny = y.len();
    let n = nx + ny;
    let pooled: Vec<f64> = x.values.iter().chain(&y.values).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let rank_sum: f64 = ranks[..nx].iter().sum();
    let u = rank_sum - (nx * (nx + 1)) as f64 / 2.0;

    if nx * ny <= EXACT_MAX_PRODUCT {
        let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
        let observed: usize = doubled[..nx].iter().sum();
        return MannWhitney {
            u,
            p_value: exact_p(&doubled, nx, observed),
            exact: true,
        };
    }

    let mean = (nx * ny) as f64 / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>()
        / (n as f64 * (n as f64 - 1.0));
    let var = (nx * ny) as f64 / 12.0 * ((n + 1) as f64 - tie_term);
    let dev = (u - mean).abs() - 0.5;
    let p_value = if var <= 0.0 || dev <= 0.0 {
        1.0
    } else {
        let z = dev / var.sqrt();
        erfc(z / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
    };
    MannWhitney {
        u,
        p_value,
        exact: false,
    }
}

/// Exact two-sided p from doubled (integer) ranks via a subset-sum count.
fn exact_p(doubled: &[usize], k: usize, observed: usize) -> f64 {
    let n = doubled.len();
    let max_sum: usize = doubled.iter().sum();
    // ways[j][s]: number of j-subsets with doubled rank sum s.
    let mut ways = vec![vec![0f64; max_sum + 1]; k + 1];
    ways[0][0] = 1.0;
    for &r in doubled {
        for j in (1..=k).rev() {
            let (lo, hi) = ways.split_at_mut(j);
            let prev = &lo[j - 1];
            let cur = &mut hi[0];
            for s in (r..=max_sum).rev() {
                cur[s] += prev[s - r];
            }
        }
    }
    // Mean of the doubled rank sum is k·(n+1).
    let center = (k * (n + 1)) as i64;
    let observed_dev = (observed as i64 - center).abs();
    let mut extreme = 0.0;
    let mut total = 0.0;
    for (s, &w) in ways[k].iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        total += w;
        if (s as i64 - center).abs() >= observed_dev {
            extreme += w;
        }
    }
    (extreme / total).clamp(0.0, 1.0)
}

/// Vargha–Delaney Â12: probability that a value from `x` exceeds one from
/// `y`, ties counting one half.
pub fn a12(x: &SampleSet, y: &SampleSet) -> f64 {
    let mut score = 0.0;
    for &a in &x.values {
        for &b in &y.values {
            if a > b {
                score += 1.0;
            } else if a == b {
                score += 0.5;
            }
        }
    }
    score / (x.len() * y.len()) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectClass {
    None,
    Small,
    Medium,
    Large,
}

/// Effect class for a significant result, using the 0.56/0.64/0.71
/// thresholds on Â12 (symmetric around 0.5). Always `None` when
/// `p_value >= 0.05`.
pub fn classify_effect(a12_value: f64, p_value: f64) -> EffectClass {
    if p_value >= SIGNIFICANCE {
        return EffectClass::None;
    }
    let d = (a12_value - 0.5).abs() + EPS;
    if d >= LARGE {
        EffectClass::Large
    } else if d >= MEDIUM {
        EffectClass::Medium
    } else if d >= SMALL {
        EffectClass::Small
    } else {
        EffectClass::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Winner {
    Baseline,
    Tool,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleStats {
    pub u: f64,
    pub p_value: f64,
    pub exact: bool,
    pub a12: f64,
    pub effect_class: EffectClass,
    pub winner: Winner,
    pub median_full: f64,
    pub median_partial: f64,
    pub hits_full: usize,
    pub hits_partial: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub unsafe_locations: usize,
    pub significant_full: usize,
    pub significant_partial: usize,
    pub small: usize,
    pub medium: usize,
    pub large: usize,
    /// Mean Â12 over significant oracles; 0 when there are none.
    pub avg_a12: f64,
    pub total_hits_full: usize,
    pub total_hits_partial: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub per_oracle: BTreeMap<String, OracleStats>,
    pub summary: ReportSummary,
}

/// Compares the full (baseline) and partial (tool) arms oracle by oracle.
pub fn aggregate_report(
    full: &BTreeMap<String, SampleSet>,
    partial: &BTreeMap<String, SampleSet>,
) -> Result<StatReport, StatsError> {
    if !full.keys().eq(partial.keys()) {
        let a: Vec<&String> = full.keys().collect();
        let b: Vec<&String> = partial.keys().collect();
        return Err(StatsError::MismatchedOracles(format!("{a:?} vs {b:?}")));
    }
    let mut per_oracle = BTreeMap::new();
    let mut summary = ReportSummary {
        unsafe_locations: full.len(),
        significant_full: 0,
        significant_partial: 0,
        small: 0,
        medium: 0,
        large: 0,
        avg_a12: 0.0,
        total_hits_full: 0,
        total_hits_partial: 0,
    };
    let mut a12_sum = 0.0;
    for (id, base) in full {
        let tool = &partial[id];
        let mw = mann_whitney_u(base, tool);
        let a = a12(base, tool);
        let effect = classify_effect(a, mw.p_value);
        let significant = mw.p_value < SIGNIFICANCE;
        let winner = match (significant, a.partial_cmp(&0.5)) {
            (true, Some(std::cmp::Ordering::Greater)) => Winner::Tool,
            (true, Some(std::cmp::Ordering::Less)) => Winner::Baseline,
            _ => Winner::None,
        };
        match winner {
            Winner::Tool => summary.significant_partial += 1,
            Winner::Baseline => summary.significant_full += 1,
            Winner::None => {}
        }
        if winner != Winner::None {
            a12_sum += a;
        }
        match effect {
            EffectClass::Small => summary.small += 1,
            EffectClass::Medium => summary.medium += 1,
            EffectClass::Large => summary.large += 1,
            EffectClass::None => {}
        }
        summary.total_hits_full += base.hits();
        summary.total_hits_partial += tool.hits();
        per_oracle.insert(
            id.clone(),
            OracleStats {
                u: mw.u,
                p_value: mw.p_value,
                exact: mw.exact,
                a12: a,
                effect_class: effect,
                winner,
                median_full: base.median(),
                median_partial: tool.median(),
                hits_full: base.hits(),
                hits_partial: tool.hits(),
            },
        );
    }
    let significant = summary.significant_full + summary.significant_partial;
    if significant > 0 {
        summary.avg_a12 = a12_sum / significant as f64;
    }
    Ok(StatReport {
        per_oracle,
        summary,
    })
}

/// Collects one sample set per oracle from trial results of one arm.
pub fn samples_from_trials(
    results: &[TrialResult],
    duration_ms: u64,
    rule: CensorRule,
) -> Result<BTreeMap<String, SampleSet>, StatsError> {
    if results.is_empty() {
        return Err(StatsError::NoResults);
    }
    let censored_value = match rule {
        CensorRule::Duration => duration_ms as f64,
        CensorRule::TiedMaxRank => duration_ms as f64 + 1.0,
    };
    let mut values: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for r in results {
        for (id, hit) in &r.first_hit {
            let entry = values.entry(id.clone()).or_default();
            match hit {
                Some(ms) => {
                    entry.0.push(*ms as f64);
                    entry.1 += 1;
                }
                None => entry.0.push(censored_value),
            }
        }
    }
    values
        .into_iter()
        .map(|(id, (v, hits))| Ok((id, SampleSet::with_hits(v, hits)?)))
        .collect()
}

/// Aligned text rendering with the usual per-target comparison columns,
/// followed by per-oracle detail and total hit counts.
pub fn render_table(target: &str, report: &StatReport) -> String {
    let s = &report.summary;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:>9} {:>10} {:>10}   {:>6} {:>6} {:>6}   {:>9}",
        "", "#unsafe", "#stat. sig. results", "", "Effect", "Size", "", "Avg."
    );
    let _ = writeln!(
        out,
        "{:<14} {:>9} {:>10} {:>10}   {:>6} {:>6} {:>6}   {:>9}",
        "Target", "locations", "full", "partial", "small", "medium", "large", "A12"
    );
    let _ = writeln!(out, "{}", "-".repeat(84));
    let _ = writeln!(
        out,
        "{:<14} {:>9} {:>10} {:>10}   {:>6} {:>6} {:>6}   {:>9.2}",
        target,
        s.unsafe_locations,
        s.significant_full,
        s.significant_partial,
        s.small,
        s.medium,
        s.large,
        s.avg_a12
    );
    out.push('\n');
    let _ = writeln!(
        out,
        "{:<16} {:>12} {:>12} {:>10} {:>6} {:>8} {:>9} {:>6} {:>6}",
        "Oracle", "median full", "median part", "p", "A12", "effect", "winner", "hits F", "hits P"
    );
    for (id, o) in &report.per_oracle {
        let _ = writeln!(
            out,
            "{:<16} {:>12.0} {:>12.0} {:>10.4} {:>6.2} {:>8} {:>9} {:>6} {:>6}",
            id,
            o.median_full,
            o.median_partial,
            o.p_value,
            o.a12,
            format!("{:?}", o.effect_class).to_lowercase(),
            format!("{:?}", o.winner).to_lowercase(),
            o.hits_full,
            o.hits_partial
        );
    }
    out.push('\n');
    let _ = writeln!(
        out,
        "Oracle hits over all trials: full {}, partial {}",
        s.total_hits_full, s.total_hits_partial
    );
    out
}
