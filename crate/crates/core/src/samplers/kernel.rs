use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::trial::{Arm, BlockKind, Trial};

#[derive(Debug, Clone)]
enum Moves {
    /// Local block id per free entry; values are only exchanged inside a block.
    Crd {
        block: Vec<usize>,
        num_blocks: usize,
    },
    /// `P(Z = 1)` per free entry.
    Bernoulli { probs: Vec<f64> },
}

#[derive(Debug, Clone)]
struct StageMoves {
    stage: usize,
    entries: Vec<usize>,
    moves: Moves,
}

/// Proposal machinery restricted to the entries a conditioning value leaves free.
#[derive(Debug, Clone)]
pub struct FreeKernel {
    stages: Vec<StageMoves>,
}

impl FreeKernel {
    /// `free[e]` marks entries that proposals may change.
    pub fn new(trial: &Trial, free: &[bool]) -> Self {
        let mut stages: Vec<StageMoves> = (0..trial.num_stages())
            .map(|k| StageMoves {
                stage: k,
                entries: Vec::new(),
                moves: Moves::Crd {
                    block: Vec::new(),
                    num_blocks: 0,
                },
            })
            .collect();
        for b in trial.blocks() {
            let sm = &mut stages[b.stage];
            match &b.kind {
                BlockKind::Crd { .. } => {
                    let Moves::Crd { block, num_blocks } = &mut sm.moves else {
                        unreachable!("one mechanism per stage")
                    };
                    for &e in b.entries.iter().filter(|&&e| free[e]) {
                        sm.entries.push(e);
                        block.push(*num_blocks);
                    }
                    *num_blocks += 1;
                }
                BlockKind::Bernoulli { probs } => {
                    let mut ps = Vec::new();
                    for (&e, &p) in b.entries.iter().zip(probs) {
                        if free[e] {
                            sm.entries.push(e);
                            ps.push(p);
                        }
                    }
                    sm.moves = Moves::Bernoulli { probs: ps };
                }
            }
        }
        FreeKernel { stages }
    }

    /// Number of free entries in stage `k`.
    pub fn free_in_stage(&self, k: usize) -> usize {
        self.stages[k].entries.len()
    }

    pub fn is_bernoulli(&self, k: usize) -> bool {
        matches!(self.stages[k].moves, Moves::Bernoulli { .. })
    }

    /// Stages a random-walk proposal can change.
    pub fn movable_stages(&self) -> Vec<usize> {
        self.stages
            .iter()
            .filter(|s| match s.moves {
                Moves::Crd { .. } => s.entries.len() >= 2,
                Moves::Bernoulli { .. } => !s.entries.is_empty(),
            })
            .map(|s| s.stage)
            .collect()
    }

    /// Redraws every free entry from the mechanism, conditionally on the others.
    pub fn redraw_all<R: Rng + ?Sized>(&self, z: &mut [Arm], rng: &mut R) {
        for sm in &self.stages {
            let all: Vec<usize> = (0..sm.entries.len()).collect();
            apply(sm, &all, z, rng);
        }
    }

    /// Random-walk proposal in place: a uniform size-`h` subset of stage `k`'s free entries
    /// is shuffled (CRD) or redrawn (Bernoulli). `h` is capped at the free count.
    pub fn propose<R: Rng + ?Sized>(&self, k: usize, h: usize, z: &mut [Arm], rng: &mut R) {
        let sm = &self.stages[k];
        let n = sm.entries.len();
        let h = h.min(n);
        if h == 0 {
            return;
        }
        let mut picked = index::sample(rng, n, h).into_vec();
        picked.sort_unstable();
        apply(sm, &picked, z, rng);
    }
}

/// Shuffles or redraws `z` at the stage-local free positions `picked`.
fn apply<R: Rng + ?Sized>(sm: &StageMoves, picked: &[usize], z: &mut [Arm], rng: &mut R) {
    match &sm.moves {
        Moves::Crd { block, num_blocks } => {
            for b in 0..*num_blocks {
                let pos: Vec<usize> = picked
                    .iter()
                    .filter(|&&i| block[i] == b)
                    .map(|&i| sm.entries[i])
                    .collect();
                if pos.len() < 2 {
                    continue;
                }
                let mut vals: Vec<Arm> = pos.iter().map(|&e| z[e]).collect();
                vals.shuffle(rng);
                for (&e, v) in pos.iter().zip(vals) {
                    z[e] = v;
                }
            }
        }
        Moves::Bernoulli { probs } => {
            for &i in picked {
                z[sm.entries[i]] = Arm::from(rng.gen::<f64>() < probs[i]);
            }
        }
    }
}

/// Shuffles (CRD) or redraws (Bernoulli) the entries in `subset`, all from one stage.
pub fn propose<R: Rng + ?Sized>(
    trial: &Trial,
    z: &[Arm],
    subset: &[usize],
    rng: &mut R,
) -> Vec<Arm> {
    let mut free = vec![false; trial.num_entries()];
    for &e in subset {
        free[e] = true;
    }
    let kernel = FreeKernel::new(trial, &free);
    let mut out = z.to_vec();
    for sm in &kernel.stages {
        let all: Vec<usize> = (0..sm.entries.len()).collect();
        apply(sm, &all, &mut out, rng);
    }
    out
}
