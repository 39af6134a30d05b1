//! Mutation-based greybox fuzzing loop.
//!
//! The loop is deliberately plain: round-robin over the queue in admission
//! order, a constant number of havoc executions per entry, admission on
//! bucket novelty. The only difference between the two campaign arms is the
//! guard table, i.e. which functions produce coverage feedback.

use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::{
    apply_trace_tracked, reset_touched, BucketSummary, CoverageError, CoverageMap, ExecutionTrace,
    GuardTable, DEFAULT_MAP_SIZE,
};
use crate::harness::{HarnessError, TargetProgram};
use crate::pathfinder::{compute_with_summary, BlockList, BlockMode, PathfindSummary};

pub const DEFAULT_HAVOC_STACK_MAX: u32 = 8;
pub const DEFAULT_ENERGY_BASE: u32 = 64;
pub const ARITH_MAX: u8 = 35;
/// Single-byte interesting values; 65535 is handled as a two-byte write.
const INTERESTING_8: [u8; 5] = [0, 1, 127, 128, 255];
const MAX_BLOCK: usize = 32;

#[derive(Debug, Error)]
pub enum FuzzError {
    #[error("block list names {0}, which is not a function of the target")]
    UnknownBlockedSymbol(String),
    #[error("invalid trial configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

/// Campaign arm: full instrumentation or block-list filtered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Full,
    Partial,
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arm::Full => "full",
            Arm::Partial => "partial",
        })
    }
}

/// How trial time is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    /// Each execution advances the clock by `exec_cost_ms`. Reproducible.
    Virtual { exec_cost_ms: u64 },
    WallClock,
}

impl Default for Clock {
    fn default() -> Self {
        Clock::Virtual { exec_cost_ms: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct TrialConfig {
    pub rng_seed: u64,
    pub duration_ms: u64,
    /// `None` builds the guard table without consulting any block list.
    pub blocklist: Option<BlockList>,
    pub initial_corpus: Vec<Vec<u8>>,
    pub havoc_stack_max: u32,
    pub energy_base: u32,
    pub map_size: usize,
    pub clock: Clock,
    pub arm: Arm,
    pub trial_index: usize,
}

impl TrialConfig {
    /// Defaults for `target` with its bundled seeds and no block list.
    pub fn new(target: &TargetProgram, rng_seed: u64, duration_ms: u64) -> Self {
        Self {
            rng_seed,
            duration_ms,
            blocklist: None,
            initial_corpus: target.default_corpus().to_vec(),
            havoc_stack_max: DEFAULT_HAVOC_STACK_MAX,
            energy_base: DEFAULT_ENERGY_BASE,
            map_size: DEFAULT_MAP_SIZE,
            clock: Clock::default(),
            arm: Arm::Full,
            trial_index: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialResult {
    pub target: String,
    pub arm: Arm,
    pub trial_index: usize,
    pub rng_seed: u64,
    pub executions: u64,
    /// Milliseconds to the first input executing each oracle; `None` when
    /// the oracle was never reached (censored).
    pub first_hit: BTreeMap<String, Option<u64>>,
    pub corpus_size: usize,
    pub crashes: usize,
}

impl TrialResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trial results serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seed {
    pub bytes: Vec<u8>,
    pub discovered_at: u64,
    pub novelty_guards: usize,
}

impl AsRef<[u8]> for Seed {
    fn as_ref(&self) -> &[u8] {
        &self.bytes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationOp {
    BitFlip,
    RandomByte,
    Arith,
    Interesting,
    BlockDuplicate,
    BlockDelete,
    Splice,
}

impl MutationOp {
    pub const ALL: [MutationOp; 7] = [
        MutationOp::BitFlip,
        MutationOp::RandomByte,
        MutationOp::Arith,
        MutationOp::Interesting,
        MutationOp::BlockDuplicate,
        MutationOp::BlockDelete,
        MutationOp::Splice,
    ];
}

/// Flips bit `bit` of `buf`, counting from the most significant bit of
/// byte 0.
pub fn flip_bit(buf: &mut [u8], bit: usize) {
    buf[bit / 8] ^= 0x80 >> (bit % 8);
}

/// AFL-style havoc mutator.
#[derive(Debug, Clone, Copy)]
pub struct Mutator {
    pub stack_max: u32,
    pub max_len: usize,
}

impl Mutator {
    pub fn new(stack_max: u32, max_len: usize) -> Self {
        Self {
            stack_max: stack_max.max(1),
            max_len: max_len.max(1),
        }
    }

    /// Applies a stack of 1..=`stack_max` uniformly chosen operators.
    /// `pool` supplies splice partners.
    pub fn mutate<R: Rng, S: AsRef<[u8]>>(&self, input: &[u8], pool: &[S], rng: &mut R) -> Vec<u8> {
        let mut buf = input.to_vec();
        let stack = rng.gen_range(1..=self.stack_max);
        for _ in 0..stack {
            let op = MutationOp::ALL[rng.gen_range(0..MutationOp::ALL.len())];
            let partner = if op == MutationOp::Splice && !pool.is_empty() {
                Some(pool[rng.gen_range(0..pool.len())].as_ref())
            } else {
                None
            };
            self.apply(op, &mut buf, partner, rng);
        }
        buf
    }

    /// Applies a single operator. On an empty buffer every operator except
    /// splice inserts one random byte instead.
    pub fn apply<R: Rng>(&self, op: MutationOp, buf: &mut Vec<u8>, partner: Option<&[u8]>, rng: &mut R) {
        if buf.is_empty() && op != MutationOp::Splice {
            buf.push(rng.gen());
            return;
        }
        match op {
            MutationOp::BitFlip => {
                let bit = rng.gen_range(0..buf.len() * 8);
                flip_bit(buf, bit);
            }
            MutationOp::RandomByte => {
                let pos = rng.gen_range(0..buf.len());
                buf[pos] = rng.gen();
            }
            MutationOp::Arith => {
                let pos = rng.gen_range(0..buf.len());
                let delta = rng.gen_range(1..=ARITH_MAX);
                buf[pos] = if rng.gen() {
                    buf[pos].wrapping_add(delta)
                } else {
                    buf[pos].wrapping_sub(delta)
                };
            }
            MutationOp::Interesting => {
                let choice = rng.gen_range(0..=INTERESTING_8.len());
                if choice == INTERESTING_8.len() && buf.len() >= 2 {
                    let pos = rng.gen_range(0..buf.len() - 1);
                    buf[pos] = 0xff;
                    buf[pos + 1] = 0xff;
                } else {
                    let pos = rng.gen_range(0..buf.len());
                    buf[pos] = INTERESTING_8[choice.min(INTERESTING_8.len() - 1)];
                }
            }
            MutationOp::BlockDuplicate => {
                let len = rng.gen_range(1..=buf.len().min(MAX_BLOCK));
                let from = rng.gen_range(0..=buf.len() - len);
                let to = rng.gen_range(0..=buf.len());
                let block: Vec<u8> = buf[from..from + len].to_vec();
                buf.splice(to..to, block);
                buf.truncate(self.max_len);
            }
            MutationOp::BlockDelete => {
                if buf.len() > 1 {
                    let len = rng.gen_range(1..=(buf.len() - 1).min(MAX_BLOCK));
                    let from = rng.gen_range(0..=buf.len() - len);
                    buf.drain(from..from + len);
                }
            }
            MutationOp::Splice => {
                let Some(other) = partner.filter(|o| !o.is_empty()) else {
                    return;
                };
                let cut = rng.gen_range(0..=buf.len());
                let from = rng.gen_range(0..other.len());
                buf.truncate(cut);
                buf.extend_from_slice(&other[from..]);
                buf.truncate(self.max_len);
            }
        }
    }
}

enum TrialClock {
    Virtual { cost: u64, elapsed: u64 },
    Wall(Instant),
}

impl TrialClock {
    fn can_run(&self, duration: u64) -> bool {
        match self {
            TrialClock::Virtual { cost, elapsed } => elapsed + cost <= duration,
            TrialClock::Wall(start) => (start.elapsed().as_millis() as u64) < duration,
        }
    }

    fn tick(&mut self) {
        if let TrialClock::Virtual { cost, elapsed } = self {
            *elapsed += *cost;
        }
    }

    fn now(&self) -> u64 {
        match self {
            TrialClock::Virtual { elapsed, .. } => *elapsed,
            TrialClock::Wall(start) => start.elapsed().as_millis() as u64,
        }
    }
}

struct Trial<'a> {
    target: &'a TargetProgram,
    guards: GuardTable,
    run_map: CoverageMap,
    summary: BucketSummary,
    touched: Vec<u32>,
    trace: ExecutionTrace,
    clock: TrialClock,
    duration: u64,
    executions: u64,
    first_hit: Vec<Option<u64>>,
    crash_signatures: HashSet<u64>,
}

impl Trial<'_> {
    /// Runs one input. `None` once the time budget is used up.
    fn run(&mut self, input: &[u8]) -> Result<Option<usize>, FuzzError> {
        if !self.clock.can_run(self.duration) {
            return Ok(None);
        }
        self.target.execute_into(input, &mut self.trace)?;
        self.executions += 1;
        self.clock.tick();
        let now = self.clock.now();

        apply_trace_tracked(&mut self.run_map, &self.guards, &self.trace, &mut self.touched)?;
        let novelty = self.summary.novelty_check_touched(&self.run_map, &self.touched);
        reset_touched(&mut self.run_map, &mut self.touched);

        for &o in &self.trace.oracle_hits {
            self.first_hit[o].get_or_insert(now);
        }
        if self.trace.crashed {
            self.crash_signatures.insert(self.trace.signature());
        }
        Ok(Some(novelty.grown_guards))
    }
}

/// Runs one fuzzing trial.
pub fn run_trial(target: &TargetProgram, cfg: &TrialConfig) -> Result<TrialResult, FuzzError> {
    if cfg.duration_ms == 0 {
        return Err(FuzzError::Config("duration must be positive".into()));
    }
    if cfg.initial_corpus.is_empty() {
        return Err(FuzzError::Config("initial corpus is empty".into()));
    }
    if cfg.energy_base == 0 || cfg.havoc_stack_max == 0 {
        return Err(FuzzError::Config("energy and havoc stack must be positive".into()));
    }
    if let Some(seed) = cfg.initial_corpus.iter().find(|s| s.len() > target.max_input_len()) {
        return Err(FuzzError::Harness(HarnessError::InputTooLong {
            len: seed.len(),
            max: target.max_input_len(),
        }));
    }
    let guards = match &cfg.blocklist {
        None => GuardTable::unfiltered(target.functions(), cfg.map_size)?,
        Some(bl) => {
            if let Some(f) = bl
                .blocked()
                .iter()
                .find(|f| target.functions().index_of(f.as_str()).is_none())
            {
                return Err(FuzzError::UnknownBlockedSymbol(f.to_string()));
            }
            GuardTable::allocate(target.functions(), bl, cfg.map_size)?
        }
    };

    let mut trial = Trial {
        target,
        guards,
        run_map: CoverageMap::new(cfg.map_size),
        summary: BucketSummary::new(cfg.map_size),
        touched: Vec::new(),
        trace: ExecutionTrace::default(),
        clock: match cfg.clock {
            Clock::Virtual { exec_cost_ms } => TrialClock::Virtual {
                cost: exec_cost_ms.max(1),
                elapsed: 0,
            },
            Clock::WallClock => TrialClock::Wall(Instant::now()),
        },
        duration: cfg.duration_ms,
        executions: 0,
        first_hit: vec![None; target.oracles().len()],
        crash_signatures: HashSet::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mutator = Mutator::new(cfg.havoc_stack_max, target.max_input_len());
    let mut queue: Vec<Seed> = Vec::new();

    'dry: for seed in &cfg.initial_corpus {
        match trial.run(seed)? {
            None => break 'dry,
            Some(0) => {}
            Some(grown) => queue.push(Seed {
                bytes: seed.clone(),
                discovered_at: trial.clock.now(),
                novelty_guards: grown,
            }),
        }
    }

    let mut cursor = 0usize;
    'fuzz: loop {
        // Nothing admitted yet (e.g. everything is blocked): keep mutating
        // the initial seeds.
        let base = if queue.is_empty() {
            cfg.initial_corpus[cursor % cfg.initial_corpus.len()].clone()
        } else {
            queue[cursor % queue.len()].bytes.clone()
        };
        for _ in 0..cfg.energy_base {
            let mutant = if queue.is_empty() {
                mutator.mutate(&base, &cfg.initial_corpus, &mut rng)
            } else {
                mutator.mutate(&base, &queue, &mut rng)
            };
            match trial.run(&mutant)? {
                None => break 'fuzz,
                Some(0) => {}
                Some(grown) => queue.push(Seed {
                    bytes: mutant,
                    discovered_at: trial.clock.now(),
                    novelty_guards: grown,
                }),
            }
        }
        cursor = if queue.is_empty() {
            cursor + 1
        } else {
            (cursor % queue.len() + 1) % queue.len()
        };
    }

    Ok(TrialResult {
        target: target.name().to_string(),
        arm: cfg.arm,
        trial_index: cfg.trial_index,
        rng_seed: cfg.rng_seed,
        executions: trial.executions,
        first_hit: target
            .oracles()
            .iter()
            .zip(&trial.first_hit)
            .map(|(o, t)| (o.id.clone(), *t))
            .collect(),
        corpus_size: queue.len(),
        crashes: trial.crash_signatures.len(),
    })
}

/// Derives the rng seed of trial `index`; both arms use the same value.
pub fn trial_seed(campaign_seed: u64, index: usize) -> u64 {
    // splitmix64
    let mut z = campaign_seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    pub trials: usize,
    pub duration_ms: u64,
    pub rng_seed: u64,
    pub jobs: usize,
    /// Run the partial arm with an empty block list (sanity mode).
    pub ab_identical: bool,
    pub block_mode: BlockMode,
    pub map_size: usize,
    pub clock: Clock,
    pub havoc_stack_max: u32,
    pub energy_base: u32,
}

impl CampaignConfig {
    pub fn new(trials: usize, duration_ms: u64, rng_seed: u64) -> Self {
        Self {
            trials,
            duration_ms,
            rng_seed,
            jobs: 1,
            ab_identical: false,
            block_mode: BlockMode::Standard,
            map_size: DEFAULT_MAP_SIZE,
            clock: Clock::default(),
            havoc_stack_max: DEFAULT_HAVOC_STACK_MAX,
            energy_base: DEFAULT_ENERGY_BASE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CampaignResults {
    pub blocklist: BlockList,
    pub pathfind: PathfindSummary,
    pub full: Vec<TrialResult>,
    pub partial: Vec<TrialResult>,
}

/// Runs `trials` paired trials per arm. The full arm has no block list; the
/// partial arm uses the block list computed from the target's call graph and
/// manifest. Trials may run on up to `jobs` threads; results do not depend
/// on scheduling.
pub fn run_campaign(target: &TargetProgram, cfg: &CampaignConfig) -> Result<CampaignResults, FuzzError> {
    if cfg.trials < 2 {
        return Err(FuzzError::Config("a campaign needs at least 2 trials".into()));
    }
    let (computed, pathfind) = compute_with_summary(target.callgraph(), target.manifest(), cfg.block_mode);
    let blocklist = if cfg.ab_identical {
        BlockList::empty()
    } else {
        computed
    };

    let mut configs = Vec::with_capacity(cfg.trials * 2);
    for arm in [Arm::Full, Arm::Partial] {
        for i in 0..cfg.trials {
            configs.push(TrialConfig {
                rng_seed: trial_seed(cfg.rng_seed, i),
                duration_ms: cfg.duration_ms,
                blocklist: (arm == Arm::Partial).then(|| blocklist.clone()),
                initial_corpus: target.default_corpus().to_vec(),
                havoc_stack_max: cfg.havoc_stack_max,
                energy_base: cfg.energy_base,
                map_size: cfg.map_size,
                clock: cfg.clock,
                arm,
                trial_index: i,
            });
        }
    }

    let results = run_parallel(target, &configs, cfg.jobs.max(1))?;
    let (full, partial) = results.into_iter().partition(|r| r.arm == Arm::Full);
    Ok(CampaignResults {
        blocklist,
        pathfind,
        full,
        partial,
    })
}

/// Runs every config, returning results in config order.
pub fn run_parallel(
    target: &TargetProgram,
    configs: &[TrialConfig],
    jobs: usize,
) -> Result<Vec<TrialResult>, FuzzError> {
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|s| {
        for _ in 0..jobs.min(configs.len()).max(1) {
            let tx = tx.clone();
            let next = &next;
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = configs.get(i) else { break };
                if tx.send((i, run_trial(target, cfg))).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);
    let mut slots: Vec<Option<TrialResult>> = vec![None; configs.len()];
    for (i, r) in rx {
        slots[i] = Some(r?);
    }
    Ok(slots.into_iter().map(|r| r.expect("every trial reports")).collect())
}
