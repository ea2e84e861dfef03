//! Restart-based point-exchange search over a candidate set, honoring fixed
//! runs and block structure.
//!
//! Each restart draws a random feasible start and applies exchange passes
//! until no single-run replacement improves the compound criterion. The best
//! design across restarts wins; identical seeds give bitwise identical
//! results, whether restarts run sequentially or in parallel.

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::criteria::{
    compound_from_bundle, compound_with_sampler, CriterionConfig, Estimator, Evaluation, Grams,
    MatrixBundle, MseSampler,
};
use crate::design::{treatment_key, Design, DofSummary, UnionFind};
use crate::error::{Error, Result};
use crate::model::{normalize_level, ModelSpec, Term};

/// Strict improvement threshold in compound_log; ties break to the incumbent.
const IMPROVEMENT_EPS: f64 = 1e-12;

/// Retry budget for drawing a feasible random start.
const INIT_RETRIES: usize = 1000;

/// A run pinned in advance: the search never alters its coordinates.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FixedRun {
    pub point: Vec<f64>,
    /// 0-based block index; None for completely randomized designs.
    pub block: Option<usize>,
}

/// Search layout and budget.
#[derive(Clone, Debug)]
pub struct SearchConfig {
    pub n: usize,
    /// Block sizes; empty for a completely randomized design.
    pub block_sizes: Vec<usize>,
    pub fixed: Vec<FixedRun>,
    pub candidates: Vec<Vec<f64>>,
    pub restarts: usize,
    pub max_passes: usize,
    pub seed: u64,
}

impl SearchConfig {
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("design.n", "n must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(Error::config("search.restarts", "need at least 1 restart"));
        }
        if self.max_passes == 0 {
            return Err(Error::config("search.max_passes", "need at least 1 pass"));
        }
        if self.candidates.is_empty() {
            return Err(Error::config("candidates", "candidate set is empty"));
        }
        for (i, c) in self.candidates.iter().enumerate() {
            if c.len() != spec.k() {
                return Err(Error::config(
                    format!("candidates[{i}]"),
                    format!("expected {} coordinates", spec.k()),
                ));
            }
        }
        if !self.block_sizes.is_empty() {
            let total: usize = self.block_sizes.iter().sum();
            if total != self.n {
                return Err(Error::config(
                    "design.blocks",
                    format!("block sizes sum to {total}, expected n = {}", self.n),
                ));
            }
            if self.block_sizes.iter().any(|&s| s == 0) {
                return Err(Error::config("design.blocks", "empty block"));
            }
        }
        let b = self.block_sizes.len();
        let mut per_block_fixed = vec![0usize; b.max(1)];
        for (i, f) in self.fixed.iter().enumerate() {
            if !self.candidates.iter().any(|c| same_point(c, &f.point)) {
                return Err(Error::config(
                    format!("design.fixed[{i}]"),
                    "fixed run is not a member of the candidate set",
                ));
            }
            match (b, f.block) {
                (0, None) => per_block_fixed[0] += 1,
                (0, Some(_)) => {
                    return Err(Error::config(
                        format!("design.fixed[{i}]"),
                        "fixed run has a block but the design is not blocked",
                    ))
                }
                (_, Some(blk)) if blk < b => per_block_fixed[blk] += 1,
                (_, Some(blk)) => {
                    return Err(Error::config(
                        format!("design.fixed[{i}]"),
                        format!("block {} out of range 1..{}", blk + 1, b),
                    ))
                }
                (_, None) => {
                    return Err(Error::config(
                        format!("design.fixed[{i}]"),
                        "fixed runs in a blocked design need a block",
                    ))
                }
            }
        }
        if b == 0 {
            if per_block_fixed[0] > self.n {
                return Err(Error::config("design.fixed", "more fixed runs than runs"));
            }
        } else {
            for blk in 0..b {
                if per_block_fixed[blk] > self.block_sizes[blk] {
                    return Err(Error::config(
                        "design.fixed",
                        format!("block {} has more fixed runs than its size", blk + 1),
                    ));
                }
            }
        }
        Ok(())
    }

    fn block_of_slot(&self, slot: usize) -> Option<usize> {
        if self.block_sizes.is_empty() {
            return None;
        }
        let mut acc = 0;
        for (b, &s) in self.block_sizes.iter().enumerate() {
            acc += s;
            if slot < acc {
                return Some(b);
            }
        }
        None
    }

    /// Slot layout: fixed runs first within their blocks, deterministic.
    fn slot_plan(&self) -> Vec<(Option<usize>, Option<&FixedRun>)> {
        let b = self.block_sizes.len();
        let mut plan: Vec<(Option<usize>, Option<&FixedRun>)> = (0..self.n)
            .map(|slot| (self.block_of_slot(slot), None))
            .collect();
        if b == 0 {
            for (i, f) in self.fixed.iter().enumerate() {
                plan[i].1 = Some(f);
            }
        } else {
            let mut offsets: Vec<usize> = Vec::with_capacity(b);
            let mut acc = 0;
            for &s in &self.block_sizes {
                offsets.push(acc);
                acc += s;
            }
            let mut used = vec![0usize; b];
            for f in &self.fixed {
                let blk = f.block.expect("validated");
                plan[offsets[blk] + used[blk]].1 = Some(f);
                used[blk] += 1;
            }
        }
        plan
    }
}

fn same_point(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| normalize_level(*x).to_bits() == normalize_level(*y).to_bits())
}

/// Outcome of one search.
#[derive(Clone, Debug)]
pub struct SearchResult {
    pub design: Design,
    pub evaluation: Evaluation,
    /// Best compound_log reached by each restart (+inf for failed restarts).
    pub per_restart: Vec<f64>,
    pub duration: std::time::Duration,
    pub accepted_exchanges: u64,
    pub passes: u64,
}

/// Draw a feasible random starting design: fixed runs as declared, the rest
/// uniform with replacement from the candidate set, resampled until the
/// information matrix is nonsingular and, when any F-bearing weight is
/// active, at least one pure-error degree of freedom exists.
pub fn random_start(
    cfg: &SearchConfig,
    spec: &ModelSpec,
    criterion: &CriterionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Design> {
    let plan = cfg.slot_plan();
    let blocked = !cfg.block_sizes.is_empty();
    let mut last_reason = "no attempt made".to_string();
    for _ in 0..INIT_RETRIES {
        let mut runs = Vec::with_capacity(cfg.n);
        let mut blocks = Vec::with_capacity(cfg.n);
        for (blk, fixed) in &plan {
            let point = match fixed {
                Some(f) => f.point.clone(),
                None => cfg.candidates[rng.random_range(0..cfg.candidates.len())].clone(),
            };
            runs.push(point);
            if let Some(b) = blk {
                blocks.push(*b);
            }
        }
        let fixed_mask: Vec<bool> = plan.iter().map(|(_, f)| f.is_some()).collect();
        let design = Design::new(runs, blocked.then_some(blocks), Some(fixed_mask))?;
        match start_feasibility(&design, spec, criterion) {
            Ok(()) => return Ok(design),
            Err(e) => last_reason = e.to_string(),
        }
    }
    Err(Error::InitializationFailed {
        attempts: INIT_RETRIES,
        reason: last_reason,
    })
}

fn start_feasibility(
    design: &Design,
    spec: &ModelSpec,
    criterion: &CriterionConfig,
) -> Result<()> {
    let dof = crate::design::pure_error_dof(design, spec)?;
    if criterion.needs_pure_error() && dof.d == 0 {
        return Err(Error::InitializationFailed {
            attempts: 0,
            reason: "no pure-error degrees of freedom".into(),
        });
    }
    MatrixBundle::build(design, spec)?;
    Ok(())
}

/// Incremental state of one local search: the current design, its model
/// rows, sufficient statistics and treatment ledger.
struct SearchState<'a> {
    spec: &'a ModelSpec,
    criterion: &'a CriterionConfig,
    sampler: Option<&'a MseSampler>,
    candidates: &'a [Vec<f64>],
    cand_rows_p: Vec<Vec<f64>>,
    cand_rows_q: Vec<Vec<f64>>,
    design: Design,
    rows_p: Vec<Vec<f64>>,
    rows_q: Vec<Vec<f64>>,
    grams: Grams,
    ledger: TreatmentLedger,
    current_log: f64,
    accepted: u64,
}

fn term_rows(terms: &[Term], point: &[f64]) -> Vec<f64> {
    terms.iter().map(|t| t.eval(point)).collect()
}

impl<'a> SearchState<'a> {
    fn new(
        design: Design,
        spec: &'a ModelSpec,
        criterion: &'a CriterionConfig,
        candidates: &'a [Vec<f64>],
        sampler: Option<&'a MseSampler>,
    ) -> Result<Self> {
        let grams = Grams::from_design(&design, spec)?;
        let ledger = TreatmentLedger::new(&design);
        let rows_p: Vec<Vec<f64>> = (0..design.n())
            .map(|i| term_rows(&spec.primary, design.run(i)))
            .collect();
        let rows_q: Vec<Vec<f64>> = (0..design.n())
            .map(|i| term_rows(&spec.potential, design.run(i)))
            .collect();
        let cand_rows_p = candidates
            .iter()
            .map(|c| term_rows(&spec.primary, c))
            .collect();
        let cand_rows_q = candidates
            .iter()
            .map(|c| term_rows(&spec.potential, c))
            .collect();
        let mut state = SearchState {
            spec,
            criterion,
            sampler,
            candidates,
            cand_rows_p,
            cand_rows_q,
            design,
            rows_p,
            rows_q,
            grams,
            ledger,
            current_log: f64::INFINITY,
            accepted: 0,
        };
        state.current_log = state.evaluate_current();
        Ok(state)
    }

    fn evaluate_current(&self) -> f64 {
        let dof = match self.ledger.dof(self.spec) {
            Some(d) => d,
            None => return f64::INFINITY,
        };
        match MatrixBundle::from_grams(&self.grams)
            .and_then(|b| compound_from_bundle(&b, &dof, self.criterion, self.sampler))
        {
            Ok(eval) => eval.compound_log,
            Err(_) => f64::INFINITY,
        }
    }

    /// Compound value if run `i` were replaced by candidate `cand`;
    /// state is left unchanged.
    fn eval_swap(&mut self, i: usize, cand: usize) -> f64 {
        let block = self.design.block_of(i);
        let old_key = treatment_key(self.design.run(i));
        let new_key = treatment_key(&self.candidates[cand]);
        self.ledger.remove(&old_key, block);
        self.ledger.add(new_key.clone(), block);
        let mut grams = self.grams.clone();
        grams.swap_run(
            &self.rows_p[i],
            &self.rows_q[i],
            &self.cand_rows_p[cand],
            &self.cand_rows_q[cand],
            block,
        );
        let value = {
            let dof = self.ledger.dof(self.spec);
            match dof {
                None => f64::INFINITY,
                Some(dof) => MatrixBundle::from_grams(&grams)
                    .and_then(|b| compound_from_bundle(&b, &dof, self.criterion, self.sampler))
                    .map(|e| e.compound_log)
                    .unwrap_or(f64::INFINITY),
            }
        };
        // revert the ledger
        self.ledger.remove(&new_key, block);
        self.ledger.add(old_key, block);
        value
    }

    fn apply_swap(&mut self, i: usize, cand: usize, new_log: f64) {
        let block = self.design.block_of(i);
        let old_key = treatment_key(self.design.run(i));
        self.ledger.remove(&old_key, block);
        self.ledger.add(treatment_key(&self.candidates[cand]), block);
        self.grams.swap_run(
            &self.rows_p[i],
            &self.rows_q[i],
            &self.cand_rows_p[cand],
            &self.cand_rows_q[cand],
            block,
        );
        self.design = self.design.with_run(i, &self.candidates[cand]);
        self.rows_p[i] = self.cand_rows_p[cand].clone();
        self.rows_q[i] = self.cand_rows_q[cand].clone();
        self.current_log = new_log;
        self.accepted += 1;
    }

    /// One full exchange pass: for every non-fixed run in order, apply the
    /// best strictly improving candidate replacement. Returns whether any
    /// replacement was accepted.
    fn pass(&mut self) -> bool {
        let mut improved = false;
        for i in 0..self.design.n() {
            if self.design.is_fixed(i) {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            let mut best_log = self.current_log - IMPROVEMENT_EPS;
            for cand in 0..self.candidates.len() {
                if same_point(self.design.run(i), &self.candidates[cand]) {
                    continue;
                }
                let log = self.eval_swap(i, cand);
                if log < best_log {
                    best_log = log;
                    best = Some((cand, log));
                }
            }
            if let Some((cand, log)) = best {
                self.apply_swap(i, cand, log);
                improved = true;
            }
        }
        improved
    }
}

/// Replicate bookkeeping: per-treatment run counts, per block when blocked.
struct TreatmentLedger {
    n: usize,
    b: usize,
    counts: HashMap<Vec<u64>, Vec<u32>>,
}

impl TreatmentLedger {
    fn new(design: &Design) -> Self {
        let b = design.block_count();
        let mut counts: HashMap<Vec<u64>, Vec<u32>> = HashMap::new();
        for i in 0..design.n() {
            let key = treatment_key(design.run(i));
            let blk = design.block_of(i).unwrap_or(0);
            counts.entry(key).or_insert_with(|| vec![0; b.max(1)])[blk] += 1;
        }
        TreatmentLedger {
            n: design.n(),
            b,
            counts,
        }
    }

    fn add(&mut self, key: Vec<u64>, block: Option<usize>) {
        let blk = block.unwrap_or(0);
        self.counts.entry(key).or_insert_with(|| vec![0; self.b.max(1)])[blk] += 1;
    }

    fn remove(&mut self, key: &[u64], block: Option<usize>) {
        let blk = block.unwrap_or(0);
        let counts = self.counts.get_mut(key).expect("treatment present");
        counts[blk] -= 1;
        if counts.iter().all(|&c| c == 0) {
            self.counts.remove(key);
        }
    }

    /// DoF summary of the current multiset; None when the model does not fit.
    fn dof(&self, spec: &ModelSpec) -> Option<DofSummary> {
        let n = self.n as i64;
        let p = spec.p() as i64;
        let t = self.counts.len();
        let (residual, d) = if self.b > 0 {
            // rank[Z:T] = b + t - components of the block-treatment graph
            let mut uf = UnionFind::new(self.b + t);
            for (tid, counts) in self.counts.values().enumerate() {
                for (blk, &c) in counts.iter().enumerate() {
                    if c > 0 {
                        uf.union(blk, self.b + tid);
                    }
                }
            }
            let rank = (self.b + t - uf.component_count()) as i64;
            (n - self.b as i64 - p, n - rank)
        } else {
            (n - p, n - t as i64)
        };
        if residual < 0 || residual - d < 0 {
            return None;
        }
        Some(DofSummary {
            t,
            d: d as usize,
            lof: (residual - d) as usize,
            residual: residual as usize,
        })
    }
}

/// One exchange pass over a design (rebuilds the incremental state; the
/// optimizer keeps the state across passes instead).
pub fn exchange_pass(
    design: &Design,
    spec: &ModelSpec,
    search_cfg: &SearchConfig,
    criterion: &CriterionConfig,
    sampler: Option<&MseSampler>,
) -> Result<(Design, bool)> {
    let mut state = SearchState::new(
        design.clone(),
        spec,
        criterion,
        &search_cfg.candidates,
        sampler,
    )?;
    let improved = state.pass();
    Ok((state.design, improved))
}

fn restart_seed(base: u64, restart: u64) -> u64 {
    base.wrapping_add(restart.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

struct RestartOutcome {
    log: f64,
    design: Option<Design>,
    accepted: u64,
    passes: u64,
    failed: bool,
}

fn run_restart(
    restart: usize,
    spec: &ModelSpec,
    criterion: &CriterionConfig,
    cfg: &SearchConfig,
    sampler: Option<&MseSampler>,
) -> RestartOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(cfg.seed, restart as u64));
    let design = match random_start(cfg, spec, criterion, &mut rng) {
        Ok(d) => d,
        Err(_) => {
            return RestartOutcome {
                log: f64::INFINITY,
                design: None,
                accepted: 0,
                passes: 0,
                failed: true,
            }
        }
    };
    let mut state = match SearchState::new(design, spec, criterion, &cfg.candidates, sampler) {
        Ok(s) => s,
        Err(_) => {
            return RestartOutcome {
                log: f64::INFINITY,
                design: None,
                accepted: 0,
                passes: 0,
                failed: true,
            }
        }
    };
    let mut passes = 0;
    for _ in 0..cfg.max_passes {
        passes += 1;
        if !state.pass() {
            break;
        }
    }
    RestartOutcome {
        log: state.current_log,
        design: Some(state.design),
        accepted: state.accepted,
        passes,
        failed: false,
    }
}

/// Full optimization: independent restarts of (random start, exchange passes
/// to a local optimum), reproducible under `cfg.seed`, restarts executed
/// concurrently when the `parallel` feature is enabled.
pub fn optimize(
    spec: &ModelSpec,
    criterion: &CriterionConfig,
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    cfg.validate(spec)?;
    criterion.validate(spec)?;
    let started = Instant::now();
    let sampler = match criterion.estimator {
        Estimator::Mc => Some(criterion.sampler(spec.q())),
        Estimator::PointPrior => None,
    };

    let outcomes: Vec<RestartOutcome> = {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..cfg.restarts)
                .into_par_iter()
                .map(|r| run_restart(r, spec, criterion, cfg, sampler.as_ref()))
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..cfg.restarts)
                .map(|r| run_restart(r, spec, criterion, cfg, sampler.as_ref()))
                .collect()
        }
    };

    let per_restart: Vec<f64> = outcomes.iter().map(|o| o.log).collect();
    let accepted_exchanges: u64 = outcomes.iter().map(|o| o.accepted).sum();
    let passes: u64 = outcomes.iter().map(|o| o.passes).sum();
    if outcomes.iter().all(|o| o.failed) {
        return Err(Error::InitializationFailed {
            attempts: cfg.restarts * INIT_RETRIES,
            reason: "every restart failed to find a feasible start".into(),
        });
    }
    let best_idx = (0..outcomes.len())
        .filter(|&i| outcomes[i].design.is_some())
        .min_by(|&a, &b| {
            outcomes[a]
                .log
                .partial_cmp(&outcomes[b].log)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        })
        .expect("at least one restart succeeded");
    let design = outcomes[best_idx].design.clone().expect("design present");
    // fresh evaluation of the winner, off the incremental path
    let evaluation = compound_with_sampler(&design, spec, criterion, sampler.as_ref())?;
    Ok(SearchResult {
        design,
        evaluation,
        per_restart,
        duration: started.elapsed(),
        accepted_exchanges,
        passes,
    })
}
