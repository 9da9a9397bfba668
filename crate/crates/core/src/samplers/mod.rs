//! Draws from the selective randomization distribution: rejection sampling, a
//! random-walk Metropolis chain, and exact enumeration of the conditional support.

mod kernel;

use std::collections::VecDeque;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use kernel::{propose, FreeKernel};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::trial::{enumerate::enumerate_with_pins, Arm, Assignment, Trial};

/// Proposals per independent stream in rejection sampling.
const BATCH: usize = 64;
/// Batches evaluated per parallel round. Fixed so results do not depend on the pool size.
const BATCHES_PER_ROUND: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RejectionDiagnostics {
    pub accepted: usize,
    pub proposals_attempted: usize,
    pub acceptance_rate: f64,
}

/// `M` i.i.d. draws from the mechanism restricted to `{z : accept(z)}`.
///
/// Proposals redraw the entries marked `free` and keep the others at `start`. Proposal `i`
/// comes from stream `(seed, i / BATCH)`, and acceptances are taken in proposal order.
pub fn rejection_sample<F>(
    trial: &Trial,
    start: &[Arm],
    free: &[bool],
    accept: &F,
    m: usize,
    max_attempts: usize,
    seed: u64,
) -> Result<(Vec<Assignment>, RejectionDiagnostics)>
where
    F: Fn(&[Arm]) -> Result<bool> + Sync,
{
    if max_attempts < m {
        return Err(Error::InvalidArgument(format!(
            "max_attempts {max_attempts} is below M = {m}"
        )));
    }
    let kernel = FreeKernel::new(trial, free);
    let mut samples = Vec::with_capacity(m);
    let mut attempted = 0usize;
    let mut next_batch = 0u64;
    while samples.len() < m && attempted < max_attempts {
        let round: Vec<Result<Vec<Option<Assignment>>>> = (next_batch
            ..next_batch + BATCHES_PER_ROUND as u64)
            .into_par_iter()
            .map(|b| {
                let mut rng = stream(seed, &[b]);
                let mut out = Vec::with_capacity(BATCH);
                for _ in 0..BATCH {
                    let mut z = start.to_vec();
                    kernel.redraw_all(&mut z, &mut rng);
                    out.push(if accept(&z)? { Some(z) } else { None });
                }
                Ok(out)
            })
            .collect();
        next_batch += BATCHES_PER_ROUND as u64;
        'merge: for batch in round {
            for z in batch? {
                if samples.len() == m || attempted == max_attempts {
                    break 'merge;
                }
                attempted += 1;
                if let Some(z) = z {
                    samples.push(z);
                }
            }
        }
    }
    if samples.len() < m {
        return Err(Error::BudgetExhausted(samples.len()));
    }
    let diag = RejectionDiagnostics {
        accepted: m,
        proposals_attempted: attempted,
        acceptance_rate: m as f64 / attempted.max(1) as f64,
    };
    Ok((samples, diag))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RwmConfig {
    /// Window size per stage; a single value applies to every stage.
    pub windows: Vec<usize>,
    pub burn_in: usize,
    /// Number of transitions `M`.
    pub length: usize,
}

impl RwmConfig {
    /// One window for every stage and burn-in `ceil(M / 10)`.
    pub fn new(length: usize, window: usize) -> Self {
        RwmConfig {
            windows: vec![window],
            burn_in: length.div_ceil(10),
            length,
        }
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn window(&self, k: usize) -> usize {
        if self.windows.len() == 1 {
            self.windows[0]
        } else {
            self.windows[k]
        }
    }

    /// Number of states the p-value uses.
    pub fn kept(&self) -> usize {
        self.length - self.burn_in
    }

    pub fn check(&self, trial: &Trial) -> Result<()> {
        if self.burn_in >= self.length {
            return Err(Error::InvalidArgument(format!(
                "burn-in {} must be below chain length {}",
                self.burn_in, self.length
            )));
        }
        let k = trial.num_stages();
        if self.windows.len() != 1 && self.windows.len() != k {
            return Err(Error::InvalidArgument(format!(
                "expected 1 or {k} window sizes, got {}",
                self.windows.len()
            )));
        }
        for s in 0..k {
            let h = self.window(s);
            let size = trial.stage_range(s).len();
            if h == 0 {
                return Err(Error::InvalidArgument(
                    "window sizes must be positive".into(),
                ));
            }
            if h > size && size > 0 {
                return Err(Error::InvalidArgument(format!(
                    "window {h} exceeds the {size} units of stage {}",
                    s + 1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub acceptance_rate: f64,
    /// Over the kept (post-burn-in) states.
    pub msejd: f64,
    pub proposals_attempted: usize,
    /// Size of the communication class of the start, when it was enumerated.
    pub class_size: Option<u64>,
}

/// Runs the chain from `start` and calls `visit` on each kept state `z(b+1), ..., z(M)`.
pub fn rwm_visit<F, V>(
    trial: &Trial,
    start: &[Arm],
    free: &[bool],
    accept: &F,
    cfg: &RwmConfig,
    seed: u64,
    mut visit: V,
) -> Result<ChainDiagnostics>
where
    F: Fn(&[Arm]) -> Result<bool>,
    V: FnMut(&[Arm]) -> Result<()>,
{
    cfg.check(trial)?;
    let kernel = FreeKernel::new(trial, free);
    let stages = kernel.movable_stages();
    let mut rng = stream(seed, &[]);
    let mut z = start.to_vec();
    let mut cand = z.clone();
    let mut accepted = 0usize;
    let mut jump_sum = 0.0;
    for t in 1..=cfg.length {
        let mut moved = 0usize;
        if !stages.is_empty() {
            let k = stages[rng.gen_range(0..stages.len())];
            cand.copy_from_slice(&z);
            kernel.propose(k, cfg.window(k), &mut cand, &mut rng);
            if accept(&cand)? {
                accepted += 1;
                moved = squared_jump(&z, &cand);
                std::mem::swap(&mut z, &mut cand);
            }
        }
        if t > cfg.burn_in {
            if t > cfg.burn_in + 1 {
                jump_sum += moved as f64;
            }
            visit(&z)?;
        }
    }
    let pairs = cfg.kept().saturating_sub(1);
    Ok(ChainDiagnostics {
        acceptance_rate: accepted as f64 / cfg.length as f64,
        msejd: if pairs == 0 {
            0.0
        } else {
            jump_sum / pairs as f64
        },
        proposals_attempted: cfg.length,
        class_size: None,
    })
}

/// Kept states of the chain, `z(b+1), ..., z(M)`.
pub fn rwm_chain<F>(
    trial: &Trial,
    start: &[Arm],
    free: &[bool],
    accept: &F,
    cfg: &RwmConfig,
    seed: u64,
) -> Result<(Vec<Assignment>, ChainDiagnostics)>
where
    F: Fn(&[Arm]) -> Result<bool>,
{
    let mut chain = Vec::with_capacity(cfg.kept());
    let diag = rwm_visit(trial, start, free, accept, cfg, seed, |z| {
        chain.push(z.to_vec());
        Ok(())
    })?;
    Ok((chain, diag))
}

fn squared_jump(a: &[Arm], b: &[Arm]) -> usize {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.abs_diff(y) as usize;
            d * d
        })
        .sum()
}

/// `(1/(M-1)) * sum_t ||z(t+1) - z(t)||^2`.
pub fn msejd(chain: &[Assignment]) -> Result<f64> {
    if chain.len() < 2 {
        return Err(Error::ChainTooShort(chain.len()));
    }
    let total: usize = chain.windows(2).map(|w| squared_jump(&w[0], &w[1])).sum();
    Ok(total as f64 / (chain.len() - 1) as f64)
}

/// Window with the largest pilot-chain MSEJD; ties go to the smaller window.
pub fn tune_window<F>(
    trial: &Trial,
    start: &[Arm],
    free: &[bool],
    accept: &F,
    candidates: &[usize],
    pilot_length: usize,
    seed: u64,
) -> Result<usize>
where
    F: Fn(&[Arm]) -> Result<bool>,
{
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let Some(&first) = sorted.first() else {
        return Err(Error::InvalidArgument("no candidate window sizes".into()));
    };
    if sorted.len() == 1 {
        return Ok(first);
    }
    let mut best = (f64::NEG_INFINITY, first);
    for (i, &h) in sorted.iter().enumerate() {
        let cfg = RwmConfig {
            windows: vec![h],
            burn_in: 0,
            length: pilot_length.max(2),
        };
        let diag = rwm_visit(
            trial,
            start,
            free,
            accept,
            &cfg,
            crate::rng::derive_seed(seed, &[i as u64]),
            |_| Ok(()),
        )?;
        if diag.msejd > best.0 {
            best = (diag.msejd, h);
        }
    }
    Ok(best.1)
}

/// An assignment with its normalized conditional probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedAssignment {
    pub z: Assignment,
    pub weight: f64,
}

/// Every assignment agreeing with `start` off the `free` entries that `accept` admits,
/// weighted by `q(z)` normalized to sum to one.
pub fn exact_conditional_support<F>(
    trial: &Trial,
    start: &[Arm],
    free: &[bool],
    accept: &F,
    cap: u128,
) -> Result<Vec<WeightedAssignment>>
where
    F: Fn(&[Arm]) -> Result<bool>,
{
    let pins: Vec<Option<Arm>> = start
        .iter()
        .zip(free)
        .map(|(&a, &f)| (!f).then_some(a))
        .collect();
    let mut support = Vec::new();
    let mut logs = Vec::new();
    for z in enumerate_with_pins(trial, &pins, cap)? {
        if accept(&z)? {
            logs.push(trial.assignment_log_weight(&z)?);
            support.push(z);
        }
    }
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let norm: f64 = logs.iter().map(|l| (l - top).exp()).sum();
    Ok(support
        .into_iter()
        .zip(logs)
        .map(|(z, l)| WeightedAssignment {
            weight: (l - top).exp() / norm,
            z,
        })
        .collect())
}

/// Indices of `support` reachable from `support[from]` by accepted random-walk moves
/// with the given config's windows, in ascending order.
pub fn communication_class(
    trial: &Trial,
    support: &[Assignment],
    free: &[bool],
    from: usize,
    cfg: &RwmConfig,
) -> Vec<usize> {
    let kernel = FreeKernel::new(trial, free);
    let movable = kernel.movable_stages();
    let adjacent = |a: &[Arm], b: &[Arm]| -> bool {
        let mut stage = None;
        let mut count = 0usize;
        for e in 0..a.len() {
            if a[e] != b[e] {
                let k = trial.stage_of(e);
                if stage.is_some_and(|s| s != k) {
                    return false;
                }
                stage = Some(k);
                count += 1;
            }
        }
        match stage {
            None => true,
            Some(k) => movable.contains(&k) && count <= cfg.window(k).min(kernel.free_in_stage(k)),
        }
    };
    let mut seen = vec![false; support.len()];
    seen[from] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(i) = queue.pop_front() {
        for j in 0..support.len() {
            if !seen[j] && adjacent(&support[i], &support[j]) {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    (0..support.len()).filter(|&i| seen[i]).collect()
}
