use crate::error::{Error, Result};
use crate::trial::{Arm, BlockKind, Trial};

#[derive(Debug, Clone, Copy)]
enum Slot {
    Fixed(Arm),
    Crd(usize),
    /// Bit `a` set iff arm `a` has positive probability.
    Bernoulli(u8),
}

/// Streams every feasible assignment exactly once, in lexicographic order of the
/// flattened entry vector.
#[derive(Debug, Clone)]
pub struct AssignmentIter {
    slots: Vec<Slot>,
    remaining: Vec<Vec<usize>>,
    z: Vec<Arm>,
    next_try: Vec<u16>,
    depth: usize,
    num_arms: usize,
    done: bool,
}

/// Size of the assignment space with `pins` (entry -> fixed arm) held fixed.
/// Saturates at `u128::MAX`.
pub fn space_size(trial: &Trial, pins: Option<&[Option<Arm>]>) -> u128 {
    let mut total: u128 = 1;
    for block in trial.blocks() {
        let factor: u128 = match &block.kind {
            BlockKind::Crd { counts, .. } => {
                if counts.is_empty() {
                    return 0;
                }
                let mut rem = counts.clone();
                let mut free = 0usize;
                for &e in &block.entries {
                    match pins.and_then(|p| p[e]) {
                        Some(a) => match rem.get_mut(a as usize) {
                            Some(c) if *c > 0 => *c -= 1,
                            _ => return 0,
                        },
                        None => free += 1,
                    }
                }
                multinomial_u128(free, &rem)
            }
            BlockKind::Bernoulli { probs } => {
                let mut f: u128 = 1;
                for (&e, &p) in block.entries.iter().zip(probs) {
                    let options = match pins.and_then(|pin| pin[e]) {
                        Some(a) => u128::from(arm_allowed(p, a)),
                        None => u128::from(p > 0.0) + u128::from(p < 1.0),
                    };
                    f = f.saturating_mul(options);
                }
                f
            }
        };
        total = total.saturating_mul(factor);
    }
    total
}

fn arm_allowed(p: f64, a: Arm) -> bool {
    match a {
        0 => p < 1.0,
        1 => p > 0.0,
        _ => false,
    }
}

fn multinomial_u128(n: usize, counts: &[usize]) -> u128 {
    if counts.iter().sum::<usize>() != n {
        return 0;
    }
    // product of binomials, each computed exactly
    let mut total: u128 = 1;
    let mut left = n;
    for &c in counts {
        total = total.saturating_mul(binomial_u128(left, c));
        left -= c;
    }
    total
}

fn binomial_u128(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        // r * (n - i) / (i + 1) stays integral at each step
        r = match r.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    r
}

/// Every assignment of the trial's design (recruitment fixed at the realized `R_k`).
pub fn enumerate_assignments(trial: &Trial, cap: u128) -> Result<AssignmentIter> {
    enumerate_with_pins(trial, &vec![None; trial.num_entries()], cap)
}

/// Same as [`enumerate_assignments`] restricted to assignments agreeing with `pins`.
pub(crate) fn enumerate_with_pins(
    trial: &Trial,
    pins: &[Option<Arm>],
    cap: u128,
) -> Result<AssignmentIter> {
    let count = space_size(trial, Some(pins));
    if count > cap {
        return Err(Error::SpaceTooLarge(count));
    }
    let n = trial.num_entries();
    let num_arms = trial.spec().num_arms;
    let mut slots = vec![Slot::Fixed(0); n];
    let mut remaining = Vec::new();
    for block in trial.blocks() {
        match &block.kind {
            BlockKind::Crd { counts, .. } => {
                let bi = remaining.len();
                let mut rem = counts.clone();
                for &e in &block.entries {
                    match pins[e] {
                        Some(a) => {
                            slots[e] = Slot::Fixed(a);
                            if let Some(c) = rem.get_mut(a as usize) {
                                *c = c.saturating_sub(1);
                            }
                        }
                        None => slots[e] = Slot::Crd(bi),
                    }
                }
                remaining.push(rem);
            }
            BlockKind::Bernoulli { probs } => {
                for (&e, &p) in block.entries.iter().zip(probs) {
                    slots[e] = match pins[e] {
                        Some(a) => Slot::Fixed(a),
                        None => Slot::Bernoulli(u8::from(p < 1.0) | (u8::from(p > 0.0) << 1)),
                    };
                }
            }
        }
    }
    Ok(AssignmentIter {
        slots,
        remaining,
        z: vec![0; n],
        next_try: vec![0; n + 1],
        depth: 0,
        num_arms,
        done: count == 0,
    })
}

impl AssignmentIter {
    fn first_allowed(&self, d: usize, from: u16) -> Option<Arm> {
        let from = from as usize;
        match self.slots[d] {
            Slot::Fixed(a) => (a as usize >= from).then_some(a),
            Slot::Crd(b) => (from..self.num_arms)
                .find(|&a| self.remaining[b][a] > 0)
                .map(|a| a as Arm),
            Slot::Bernoulli(mask) => (from..2).find(|&a| mask & (1 << a) != 0).map(|a| a as Arm),
        }
    }

    fn take(&mut self, d: usize, a: Arm) {
        self.z[d] = a;
        if let Slot::Crd(b) = self.slots[d] {
            self.remaining[b][a as usize] -= 1;
        }
    }

    fn release(&mut self, d: usize) {
        if let Slot::Crd(b) = self.slots[d] {
            self.remaining[b][self.z[d] as usize] += 1;
        }
    }
}

impl Iterator for AssignmentIter {
    type Item = Vec<Arm>;

    fn next(&mut self) -> Option<Vec<Arm>> {
        if self.done {
            return None;
        }
        let n = self.z.len();
        loop {
            if self.depth == n {
                let out = self.z.clone();
                // step back so the next call advances the last slot
                if n == 0 {
                    self.done = true;
                    return Some(out);
                }
                self.depth -= 1;
                let d = self.depth;
                self.release(d);
                self.next_try[d] = self.z[d] as u16 + 1;
                return Some(out);
            }
            let d = self.depth;
            match self.first_allowed(d, self.next_try[d]) {
                Some(a) => {
                    self.take(d, a);
                    self.depth += 1;
                    self.next_try[self.depth] = 0;
                }
                None => {
                    if d == 0 {
                        self.done = true;
                        return None;
                    }
                    self.depth -= 1;
                    let p = self.depth;
                    self.release(p);
                    self.next_try[p] = self.z[p] as u16 + 1;
                }
            }
        }
    }
}
