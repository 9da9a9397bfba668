//! Randomization p-values (naive, split, selective), confidence sets by test inversion,
//! and the Hodges-Lehmann point estimate.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::NullContext;
use crate::error::{Error, Result};
use crate::samplers::{
    communication_class, exact_conditional_support, rejection_sample, rwm_visit, ChainDiagnostics,
    RejectionDiagnostics, RwmConfig,
};
use crate::statistics::{Direction, TestStatistic};
use crate::trial::{space_size, Arm, Trial};

/// Largest conditional space enumerated to report a chain's communication class.
const CLASS_ENUMERATION_CAP: u128 = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Naive,
    Split,
    SelectiveExact,
    SelectiveRejection,
    SelectiveRwm,
}

/// Which reference distribution a p-value uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    /// Re-randomize every stage, ignore selection.
    Naive,
    /// Freeze stage 1, re-randomize later stages, statistic on later stages only.
    Split,
    /// Condition on the selection and conditioning statistics.
    Selective,
}

impl TestKind {
    pub fn name(self) -> &'static str {
        match self {
            TestKind::Naive => "naive",
            TestKind::Split => "split",
            TestKind::Selective => "selective",
        }
    }
}

impl FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(TestKind::Naive),
            "split" => Ok(TestKind::Split),
            "selective" => Ok(TestKind::Selective),
            other => Err(Error::InvalidArgument(format!("unknown test '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Sampler {
    Exact {
        cap: u128,
    },
    Rejection {
        samples: usize,
        /// Defaults to `1000 * samples`.
        max_attempts: Option<usize>,
    },
    Rwm(RwmConfig),
}

impl Sampler {
    pub fn exact() -> Self {
        Sampler::Exact { cap: 10_000_000 }
    }

    pub fn rejection(samples: usize) -> Self {
        Sampler::Rejection {
            samples,
            max_attempts: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "sampler", rename_all = "snake_case")]
pub enum Diagnostics {
    Exact { support_size: usize },
    Rejection(RejectionDiagnostics),
    Rwm(ChainDiagnostics),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueResult {
    pub estimate: f64,
    pub method: Method,
    pub mc_standard_error: Option<f64>,
    /// Samples entering the estimate (support size in exact mode).
    pub num_samples: usize,
    pub observed_statistic: f64,
    /// Chain-based p-values condition on the start's communication class.
    pub class_conditional: bool,
    pub diagnostics: Diagnostics,
}

/// `(1 + #{t : T(t) extreme}) / (1 + M)`.
pub fn mc_pvalue(values: &[f64], observed: f64, direction: Direction) -> f64 {
    let hits = values
        .iter()
        .filter(|&&t| direction.extreme(t, observed))
        .count();
    (1 + hits) as f64 / (1 + values.len()) as f64
}

/// Whether `T(z)` is at least as extreme as observed. Assignments on which `T` is
/// undefined count as extreme, which can only raise the p-value.
fn extreme(stat: &TestStatistic, ctx: &NullContext, observed: f64, z: &[Arm]) -> Result<bool> {
    match stat.eval(z, &ctx.imputed) {
        Ok(t) => Ok(ctx.direction.extreme(t, observed)),
        Err(Error::EmptyArm { .. } | Error::DegenerateVariance | Error::ZeroDenominator) => {
            Ok(true)
        }
        Err(e) => Err(e),
    }
}

pub fn selective_pvalue(ctx: &NullContext, sampler: &Sampler, seed: u64) -> Result<PValueResult> {
    randomization_pvalue(ctx, TestKind::Selective, sampler, seed)
}

/// Re-randomizes all stages without conditioning on the selection.
pub fn naive_pvalue(ctx: &NullContext, samples: usize, seed: u64) -> Result<PValueResult> {
    randomization_pvalue(ctx, TestKind::Naive, &Sampler::rejection(samples), seed)
}

/// Stage 1 frozen, later stages re-randomized, statistic on later-stage data.
/// A single-stage trial has nothing to re-randomize and gives 1.
pub fn split_pvalue(ctx: &NullContext, samples: usize, seed: u64) -> Result<PValueResult> {
    randomization_pvalue(ctx, TestKind::Split, &Sampler::rejection(samples), seed)
}

/// P-value of `kind` with draws from `sampler`.
pub fn randomization_pvalue(
    ctx: &NullContext,
    kind: TestKind,
    sampler: &Sampler,
    seed: u64,
) -> Result<PValueResult> {
    let trial = ctx.trial;
    let start = trial.observed();
    let mut free = ctx.free_mask();
    let (stat, observed) = match kind {
        TestKind::Split => match (&ctx.later_statistic, ctx.observed_later_t) {
            (Some(s), Some(t)) => {
                for e in trial.stage_range(0) {
                    free[e] = false;
                }
                (s, t)
            }
            _ => {
                return Ok(PValueResult {
                    estimate: 1.0,
                    method: Method::Split,
                    mc_standard_error: None,
                    num_samples: 0,
                    observed_statistic: f64::NAN,
                    class_conditional: false,
                    diagnostics: Diagnostics::Exact { support_size: 1 },
                })
            }
        },
        _ => (&ctx.statistic, ctx.observed_t),
    };
    let selective = kind == TestKind::Selective;
    let accept = |z: &[Arm]| if selective { ctx.matches(z) } else { Ok(true) };
    let method_for = |m: Method| match kind {
        TestKind::Naive => Method::Naive,
        TestKind::Split => Method::Split,
        TestKind::Selective => m,
    };
    match sampler {
        Sampler::Exact { cap } => {
            let support = exact_conditional_support(trial, start, &free, &accept, *cap)?;
            let mut p = 0.0;
            for w in &support {
                if extreme(stat, ctx, observed, &w.z)? {
                    p += w.weight;
                }
            }
            Ok(PValueResult {
                estimate: p.min(1.0),
                method: method_for(Method::SelectiveExact),
                mc_standard_error: None,
                num_samples: support.len(),
                observed_statistic: observed,
                class_conditional: false,
                diagnostics: Diagnostics::Exact {
                    support_size: support.len(),
                },
            })
        }
        Sampler::Rejection {
            samples,
            max_attempts,
        } => {
            let m = *samples;
            let budget = max_attempts.unwrap_or(m.saturating_mul(1000));
            let (draws, diag) = rejection_sample(trial, start, &free, &accept, m, budget, seed)?;
            let mut hits = 0usize;
            for z in &draws {
                hits += usize::from(extreme(stat, ctx, observed, z)?);
            }
            let p = (1 + hits) as f64 / (1 + m) as f64;
            Ok(PValueResult {
                estimate: p,
                method: method_for(Method::SelectiveRejection),
                mc_standard_error: Some((p * (1.0 - p) / m.max(1) as f64).sqrt()),
                num_samples: m,
                observed_statistic: observed,
                class_conditional: false,
                diagnostics: Diagnostics::Rejection(diag),
            })
        }
        Sampler::Rwm(cfg) => {
            let mut indicators = Vec::with_capacity(cfg.kept());
            let mut diag = rwm_visit(trial, start, &free, &accept, cfg, seed, |z| {
                indicators.push(extreme(stat, ctx, observed, z)?);
                Ok(())
            })?;
            diag.class_size = class_size(trial, start, &free, &accept, cfg)?;
            let n = indicators.len();
            let hits = indicators.iter().filter(|&&b| b).count();
            Ok(PValueResult {
                estimate: (1 + hits) as f64 / (1 + n) as f64,
                method: method_for(Method::SelectiveRwm),
                mc_standard_error: Some(batch_means_se(&indicators)),
                num_samples: n,
                observed_statistic: observed,
                class_conditional: selective,
                diagnostics: Diagnostics::Rwm(diag),
            })
        }
    }
}

fn class_size<F>(
    trial: &Trial,
    start: &[Arm],
    free: &[bool],
    accept: &F,
    cfg: &RwmConfig,
) -> Result<Option<u64>>
where
    F: Fn(&[Arm]) -> Result<bool>,
{
    let pins: Vec<Option<Arm>> = start
        .iter()
        .zip(free)
        .map(|(&a, &f)| (!f).then_some(a))
        .collect();
    if space_size(trial, Some(&pins)) > CLASS_ENUMERATION_CAP {
        return Ok(None);
    }
    let support = exact_conditional_support(trial, start, free, accept, CLASS_ENUMERATION_CAP)?;
    let zs: Vec<_> = support.into_iter().map(|w| w.z).collect();
    let Some(from) = zs.iter().position(|z| z.as_slice() == start) else {
        return Ok(None);
    };
    Ok(Some(
        communication_class(trial, &zs, free, from, cfg).len() as u64
    ))
}

/// Standard error of the mean of a correlated 0/1 series from `floor(sqrt(n))` batches.
fn batch_means_se(xs: &[bool]) -> f64 {
    let n = xs.len();
    let batches = (n as f64).sqrt().floor() as usize;
    if batches < 2 {
        return f64::NAN;
    }
    let size = n / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().filter(|&&x| x).count() as f64 / size as f64)
        .collect();
    let mean = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

/// Evenly spaced `tau` values `lo, lo + step, ..., hi`, written `lo:hi:step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && step.is_finite()) || lo > hi || step <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "invalid grid {lo}:{hi}:{step}"
            )));
        }
        Ok(Grid { lo, hi, step })
    }

    pub fn points(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        // rounded so that e.g. -1 + 5 * 0.2 prints as 0
        (0..=n)
            .map(|i| {
                let t = self.lo + i as f64 * self.step;
                (t * 1e9).round() / 1e9
            })
            .collect()
    }
}

impl FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidArgument(format!("grid '{s}' is not lo:hi:step"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        Grid::new(nums[0], nums[1], nums[2])
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.lo, self.hi, self.step)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub tau: f64,
    pub p: Option<f64>,
    pub se: Option<f64>,
    pub method: Option<Method>,
    /// Error code when the p-value could not be computed at this point.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSet {
    pub alpha: f64,
    pub grid: Grid,
    /// Closed, sorted, disjoint runs of grid points with `p > alpha`.
    pub intervals: Vec<(f64, f64)>,
    pub p_curve: Vec<CurvePoint>,
}

/// P-values of `kind` at each `tau`, in parallel. Every point uses the same seed.
pub fn p_curve(
    trial: &Trial,
    kind: TestKind,
    taus: &[f64],
    sampler: &Sampler,
    seed: u64,
) -> Vec<CurvePoint> {
    taus.par_iter()
        .map(|&tau| {
            let res = NullContext::new(trial, tau)
                .and_then(|ctx| randomization_pvalue(&ctx, kind, sampler, seed));
            match res {
                Ok(r) => CurvePoint {
                    tau,
                    p: Some(r.estimate),
                    se: r.mc_standard_error,
                    method: Some(r.method),
                    error: None,
                },
                Err(e) => CurvePoint {
                    tau,
                    p: None,
                    se: None,
                    method: None,
                    error: Some(e.code().to_string()),
                },
            }
        })
        .collect()
}

/// Maximal runs of consecutive points with `p > alpha`. Failed points break runs.
pub fn intervals_above(curve: &[CurvePoint], alpha: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut run: Option<(f64, f64)> = None;
    for pt in curve {
        if pt.p.is_some_and(|p| p > alpha) {
            run = Some(match run {
                Some((a, _)) => (a, pt.tau),
                None => (pt.tau, pt.tau),
            });
        } else if let Some(r) = run.take() {
            out.push(r);
        }
    }
    out.extend(run);
    out
}

pub fn confidence_set(
    trial: &Trial,
    kind: TestKind,
    grid: Grid,
    alpha: f64,
    sampler: &Sampler,
    seed: u64,
) -> ConfidenceSet {
    let p_curve = p_curve(trial, kind, &grid.points(), sampler, seed);
    ConfidenceSet {
        alpha,
        grid,
        intervals: intervals_above(&p_curve, alpha),
        p_curve,
    }
}

/// Smallest `tau` in `bracket` with `p(tau) > alpha`, up to `tol`, assuming one crossing.
/// Returns the upper end of the final bracket.
pub fn lower_bound_bisect<P>(mut p: P, alpha: f64, bracket: (f64, f64), tol: f64) -> Result<f64>
where
    P: FnMut(f64) -> Result<f64>,
{
    let (mut lo, mut hi) = bracket;
    let (lo_p, hi_p) = (p(lo)?, p(hi)?);
    if !(lo_p <= alpha && hi_p > alpha) {
        return Err(Error::NoBracket { lo_p, hi_p });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if p(mid)? > alpha {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// [`lower_bound_bisect`] on the p-value of `kind` for the trial's selected null.
pub fn lower_bound(
    trial: &Trial,
    kind: TestKind,
    alpha: f64,
    bracket: (f64, f64),
    tol: f64,
    sampler: &Sampler,
    seed: u64,
) -> Result<f64> {
    lower_bound_bisect(
        |tau| {
            let ctx = NullContext::new(trial, tau)?;
            Ok(randomization_pvalue(&ctx, kind, sampler, seed)?.estimate)
        },
        alpha,
        bracket,
        tol,
    )
}

/// `(sup{tau : p < 1/2} + inf{tau : p > 1/2}) / 2` over the evaluated points.
pub fn hl_estimate(curve: &[(f64, f64)]) -> Result<f64> {
    let below = curve
        .iter()
        .filter(|(_, p)| *p < 0.5)
        .map(|(t, _)| *t)
        .fold(f64::NEG_INFINITY, f64::max);
    let above = curve
        .iter()
        .filter(|(_, p)| *p > 0.5)
        .map(|(t, _)| *t)
        .fold(f64::INFINITY, f64::min);
    if below == f64::NEG_INFINITY {
        return Err(Error::Undefined { side: "sup" });
    }
    if above == f64::INFINITY {
        return Err(Error::Undefined { side: "inf" });
    }
    Ok(0.5 * (below + above))
}

/// `(tau, p)` pairs of the points that were computed.
pub fn curve_pairs(curve: &[CurvePoint]) -> Vec<(f64, f64)> {
    curve
        .iter()
        .filter_map(|c| c.p.map(|p| (c.tau, p)))
        .collect()
}

/// Number of times the curve passes from one side of `level` to the other.
pub fn crossings(curve: &[(f64, f64)], level: f64) -> usize {
    let sides: Vec<bool> = curve
        .iter()
        .filter(|(_, p)| *p != level)
        .map(|(_, p)| *p > level)
        .collect();
    sides.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Writes `tau,p,se,method` rows.
pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["tau", "p", "se", "method", "error"])
        .map_err(io)?;
    for c in curve {
        let method = c
            .method
            .map(|m| {
                serde_json::to_value(m)
                    .expect("method serializes")
                    .as_str()
                    .unwrap_or_default()
                    .to_string()
            })
            .unwrap_or_default();
        w.write_record([
            format!("{}", c.tau),
            c.p.map(|p| format!("{p}")).unwrap_or_default(),
            c.se.map(|s| format!("{s}")).unwrap_or_default(),
            method,
            c.error.clone().unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{crd_toy, enrichment_toy};
    use crate::trial::enumerate_assignments;

    #[test]
    fn mc_pvalue_formula() {
        let mut v = vec![0.0; 99];
        for x in v.iter_mut().take(4) {
            *x = -1.0;
        }
        assert!((mc_pvalue(&v, -0.5, Direction::Less) - 0.05).abs() < 1e-15);
        assert_eq!(mc_pvalue(&v, 1.0, Direction::Less), 1.0);
        assert!((mc_pvalue(&v, -2.0, Direction::Less) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn exact_matches_brute_force_count() {
        let trial = enrichment_toy();
        for tau in [-1.5, -0.5, 0.0, 0.4, 1.2] {
            let ctx = NullContext::new(&trial, tau).unwrap();
            let exact = selective_pvalue(&ctx, &Sampler::exact(), 0).unwrap();
            let all: Vec<_> = enumerate_assignments(&trial, 100).unwrap().collect();
            let (mut num, mut den) = (0.0, 0.0);
            for z in &all {
                if ctx.matches(z).unwrap() {
                    let q = trial.assignment_log_weight(z).unwrap().exp();
                    den += q;
                    if ctx.is_extreme(ctx.stat(z).unwrap()) {
                        num += q;
                    }
                }
            }
            assert!((exact.estimate - num / den).abs() < 1e-12);
        }
    }

    #[test]
    fn singleton_conditioning_gives_one() {
        let trial = crd_toy();
        let ctx = NullContext::new(&trial, 0.0).unwrap();
        let obs = trial.observed().clone();
        let support = exact_conditional_support(
            &trial,
            &obs,
            &ctx.free_mask(),
            &|z: &[Arm]| Ok(z == obs.as_slice()),
            100,
        )
        .unwrap();
        assert_eq!(support.len(), 1);
        let hits: f64 = support
            .iter()
            .filter(|w| ctx.is_extreme(ctx.stat(&w.z).unwrap()))
            .map(|w| w.weight)
            .sum();
        assert_eq!(hits, 1.0);
    }

    #[test]
    fn monotone_transform_leaves_exact_pvalue_unchanged() {
        let trial = enrichment_toy();
        let ctx = NullContext::new(&trial, 0.3).unwrap();
        let support = exact_conditional_support(
            &trial,
            trial.observed(),
            &ctx.free_mask(),
            &|z: &[Arm]| ctx.matches(z),
            100,
        )
        .unwrap();
        let p_with = |f: &dyn Fn(f64) -> f64| -> f64 {
            support
                .iter()
                .filter(|w| {
                    ctx.direction
                        .extreme(f(ctx.stat(&w.z).unwrap()), f(ctx.observed_t))
                })
                .map(|w| w.weight)
                .sum()
        };
        let base = p_with(&|t| t);
        assert_eq!(base, p_with(&|t| t.exp()));
        assert_eq!(base, p_with(&|t| 3.0 * t + 7.0));
        assert!(
            (base
                - selective_pvalue(&ctx, &Sampler::exact(), 0)
                    .unwrap()
                    .estimate)
                .abs()
                < 1e-12
        );
    }

    #[test]
    fn mc_estimates_stay_in_range_and_repeat() {
        let trial = enrichment_toy();
        let ctx = NullContext::new(&trial, 0.0).unwrap();
        for sampler in [
            Sampler::rejection(200),
            Sampler::Rwm(RwmConfig::new(400, 2)),
        ] {
            let a = selective_pvalue(&ctx, &sampler, 17).unwrap();
            let b = selective_pvalue(&ctx, &sampler, 17).unwrap();
            assert_eq!(a, b);
            assert!(a.estimate >= 1.0 / (1.0 + a.num_samples as f64) && a.estimate <= 1.0);
        }
        let n1 = naive_pvalue(&ctx, 300, 2).unwrap();
        assert_eq!(n1, naive_pvalue(&ctx, 300, 2).unwrap());
        assert_eq!(n1.method, Method::Naive);
    }

    #[test]
    fn constant_selection_makes_naive_and_selective_agree() {
        let trial = crd_toy();
        let ctx = NullContext::new(&trial, 0.5).unwrap();
        let sel = selective_pvalue(&ctx, &Sampler::rejection(500), 3).unwrap();
        let naive = naive_pvalue(&ctx, 500, 3).unwrap();
        assert_eq!(sel.estimate, naive.estimate);
    }

    #[test]
    fn single_stage_split_is_one() {
        let trial = crd_toy();
        let ctx = NullContext::new(&trial, 0.0).unwrap();
        assert_eq!(split_pvalue(&ctx, 100, 1).unwrap().estimate, 1.0);
    }

    #[test]
    fn split_on_toy_rerandomizes_stage_two_only() {
        let trial = enrichment_toy();
        let ctx = NullContext::new(&trial, 0.0).unwrap();
        let exact = randomization_pvalue(&ctx, TestKind::Split, &Sampler::exact(), 0).unwrap();
        assert_eq!(exact.num_samples, 6);
        assert_eq!(exact.method, Method::Split);
    }

    #[test]
    fn grid_parsing_and_points() {
        let g: Grid = "-1:1:0.2".parse().unwrap();
        let pts = g.points();
        assert_eq!(pts.len(), 11);
        assert_eq!(pts[5], 0.0);
        assert_eq!(pts[10], 1.0);
        assert!("1:0:0.1".parse::<Grid>().is_err());
        assert!("0:1".parse::<Grid>().is_err());
        assert!("0:1:0".parse::<Grid>().is_err());
    }

    fn curve(ps: &[f64]) -> Vec<CurvePoint> {
        ps.iter()
            .enumerate()
            .map(|(i, &p)| CurvePoint {
                tau: i as f64,
                p: Some(p),
                se: None,
                method: Some(Method::SelectiveExact),
                error: None,
            })
            .collect()
    }

    #[test]
    fn intervals_from_runs() {
        assert_eq!(
            intervals_above(&curve(&[1.0, 1.0, 1.0]), 0.1),
            vec![(0.0, 2.0)]
        );
        assert_eq!(
            intervals_above(&curve(&[0.0, 0.5, 0.6, 0.05]), 0.1),
            vec![(1.0, 2.0)]
        );
        assert_eq!(
            intervals_above(&curve(&[0.5, 0.05, 0.6]), 0.1),
            vec![(0.0, 0.0), (2.0, 2.0)]
        );
        let mut c = curve(&[0.5, 0.5, 0.5]);
        c[1].p = None;
        assert_eq!(intervals_above(&c, 0.1), vec![(0.0, 0.0), (2.0, 2.0)]);
    }

    #[test]
    fn bisection_on_step_function() {
        let p = |t: f64| Ok(if t >= 1.0 { 1.0 } else { 0.0 });
        let lb = lower_bound_bisect(p, 0.1, (-2.0, 2.0), 1e-3).unwrap();
        assert!((lb - 1.0).abs() <= 1e-3);
        let err = lower_bound_bisect(|_| Ok(0.5), 0.1, (-2.0, 2.0), 1e-3).unwrap_err();
        assert_eq!(
            err,
            Error::NoBracket {
                lo_p: 0.5,
                hi_p: 0.5
            }
        );
    }

    #[test]
    fn hodges_lehmann() {
        let c = [(0.7, 0.1), (0.9, 0.3), (1.1, 0.7), (1.3, 0.9)];
        assert!((hl_estimate(&c).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            hl_estimate(&[(0.0, 0.4), (1.0, 0.4)]),
            Err(Error::Undefined { side: "inf" })
        );
        assert_eq!(
            hl_estimate(&[(0.0, 0.6)]),
            Err(Error::Undefined { side: "sup" })
        );
    }

    #[test]
    fn crossing_counts() {
        assert_eq!(crossings(&[(0.0, 0.1), (1.0, 0.9)], 0.5), 1);
        assert_eq!(
            crossings(
                &[(0.0, 0.1), (1.0, 0.9), (2.0, 0.2), (3.0, 0.5), (4.0, 0.8)],
                0.5
            ),
            3
        );
    }

    #[test]
    fn curve_csv_layout() {
        let mut buf = Vec::new();
        write_curve_csv(&curve(&[0.25]), &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "tau,p,se,method,error\n0,0.25,,selective_exact,\n"
        );
    }
}
