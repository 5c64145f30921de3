//! Storage capacity: closed-form estimates and Monte-Carlo recall experiments.
//!
//! For random ±1 memories and polynomial energy of power `n`, the crosstalk
//! noise on a stored pattern is asymptotically Gaussian with variance
//! `4n²(2n-3)!! (K-1) N^{n-1}` against a mean gap of `2n N^{n-1}`. This gives
//! the single-bit error probability in [`error_probability`] and the
//! perfect-recall capacity in [`k_max_no_errors`].
//!
//! The experiments evolve random initial states to convergence and record the
//! overlap with the closest memory. Random streams are shared across cells
//! (common random numbers): for a given `(seed, N)` the memory set with `K`
//! patterns is a prefix of the one with `K' > K`, and trial `t` starts from the
//! same configuration in every cell.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Dynamics, UpdateOrder};
use crate::rng::{stream_rng, tag};
use crate::{EnergyKind, EnergyModel, Error, MemorySet, Result, SpinState};

/// `k!!` for odd `k ≥ -1`, with `(-1)!! = 1`.
pub fn double_factorial(k: i64) -> Result<u128> {
    if k < -1 || k % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "double factorial needs an odd k ≥ -1, got {k}"
        )));
    }
    let mut acc: u128 = 1;
    let mut f = k;
    while f > 1 {
        acc = acc
            .checked_mul(f as u128)
            .ok_or_else(|| Error::InvalidParameter(format!("{k}!! overflows u128")))?;
        f -= 2;
    }
    Ok(acc)
}

/// `(2n-3)!!` as a float; fine far beyond where the `u128` form overflows.
fn crosstalk_factor(n: u32) -> f64 {
    let mut acc = 1.0;
    let mut f = 2 * n as i64 - 3;
    while f > 1 {
        acc *= f as f64;
        f -= 2;
    }
    acc
}

fn check_theory_args(n_neurons: usize, power: u32) -> Result<()> {
    if n_neurons < 2 {
        return Err(Error::InvalidParameter("capacity theory needs N ≥ 2".into()));
    }
    if power < 2 {
        return Err(Error::InvalidParameter("capacity theory needs n ≥ 2".into()));
    }
    Ok(())
}

/// Large-`N`, large-`K` approximation of the probability that one bit of a
/// stored memory is unstable:
/// `sqrt((2n-3)!!/(2π) · K/N^{n-1}) · exp(-N^{n-1} / (2K(2n-3)!!))`.
///
/// This is an asymptotic tail estimate, not an exact probability; it exceeds
/// 1 far above capacity.
pub fn error_probability(n_neurons: usize, k: f64, power: u32) -> Result<f64> {
    check_theory_args(n_neurons, power)?;
    if !(k > 0.0) {
        return Err(Error::InvalidParameter(format!("K must be positive, got {k}")));
    }
    let df = crosstalk_factor(power);
    let scale = (n_neurons as f64).powi(power as i32 - 1);
    let ratio = k / scale;
    Ok((df / (2.0 * std::f64::consts::PI) * ratio).sqrt() * (-1.0 / (2.0 * ratio * df)).exp())
}

/// Largest integer `K` with `error_probability(N, K, n) ≤ threshold`, or 0 if
/// even `K = 1` exceeds it. The probability is strictly increasing in `K`, so
/// a doubling search followed by bisection is exact.
pub fn k_max_at_error(n_neurons: usize, power: u32, threshold: f64) -> Result<u64> {
    check_theory_args(n_neurons, power)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "error threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let ok = |k: u64| -> Result<bool> { Ok(error_probability(n_neurons, k as f64, power)? <= threshold) };
    if !ok(1)? {
        return Ok(0);
    }
    let mut lo = 1u64;
    let mut hi = 2u64;
    while ok(hi)? {
        lo = hi;
        hi = hi
            .checked_mul(2)
            .ok_or_else(|| Error::InvalidParameter("capacity search overflowed".into()))?;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Perfect-recall capacity `N^{n-1} / (2 (2n-3)!! ln N)` before rounding.
pub fn k_max_no_errors_value(n_neurons: usize, power: u32) -> Result<f64> {
    check_theory_args(n_neurons, power)?;
    if n_neurons < 3 {
        return Err(Error::InvalidParameter("perfect-recall capacity needs N ≥ 3".into()));
    }
    let n = n_neurons as f64;
    Ok(n.powi(power as i32 - 1) / (2.0 * crosstalk_factor(power) * n.ln()))
}

/// [`k_max_no_errors_value`] rounded to the nearest integer.
pub fn k_max_no_errors(n_neurons: usize, power: u32) -> Result<u64> {
    Ok(k_max_no_errors_value(n_neurons, power)?.round() as u64)
}

/// Capacity at a per-bit error threshold, `K_max = α_n N^{n-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityTheory {
    pub n_neurons: usize,
    pub power: u32,
    pub error_threshold: f64,
}

impl CapacityTheory {
    pub fn new(n_neurons: usize, power: u32) -> Self {
        CapacityTheory {
            n_neurons,
            power,
            error_threshold: 0.005,
        }
    }

    pub fn k_max(&self) -> Result<u64> {
        k_max_at_error(self.n_neurons, self.power, self.error_threshold)
    }

    /// `α_n = K_max / N^{n-1}` at this `N`.
    pub fn alpha(&self) -> Result<f64> {
        Ok(self.k_max()? as f64 / (self.n_neurons as f64).powi(self.power as i32 - 1))
    }

    pub fn k_max_no_errors(&self) -> Result<u64> {
        k_max_no_errors(self.n_neurons, self.power)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramMeta {
    pub n_neurons: usize,
    pub n_memories: usize,
    pub power: u32,
    pub kind: EnergyKind,
}

/// Counts of final overlaps, indexed by value in `-N..=N`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapHistogram {
    pub meta: HistogramMeta,
    counts: Vec<u64>,
    total: u64,
}

impl OverlapHistogram {
    pub fn new(meta: HistogramMeta) -> Self {
        OverlapHistogram {
            counts: vec![0; 2 * meta.n_neurons + 1],
            total: 0,
            meta,
        }
    }

    pub fn record(&mut self, overlap: i32) {
        let n = self.meta.n_neurons as i32;
        assert!((-n..=n).contains(&overlap), "overlap {overlap} outside ±{n}");
        self.counts[(overlap + n) as usize] += 1;
        self.total += 1;
    }

    pub fn count(&self, overlap: i32) -> u64 {
        let n = self.meta.n_neurons as i32;
        if (-n..=n).contains(&overlap) {
            self.counts[(overlap + n) as usize]
        } else {
            0
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, u64)> + '_ {
        let n = self.meta.n_neurons as i32;
        self.counts.iter().enumerate().map(move |(i, &c)| (i as i32 - n, c))
    }

    /// Overlap value with the most samples (largest value on ties).
    pub fn mode(&self) -> i32 {
        let mut best = (0u64, -(self.meta.n_neurons as i32));
        for (v, c) in self.iter() {
            if c >= best.0 {
                best = (c, v);
            }
        }
        best.1
    }

    /// `overlap,count` rows for every value in `-N..=N`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "overlap,count")?;
        for (v, c) in self.iter() {
            writeln!(out, "{v},{c}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialOptions {
    pub max_sweeps: usize,
    pub order: UpdateOrder,
}

impl Default for TrialOptions {
    fn default() -> Self {
        TrialOptions {
            max_sweeps: 200,
            order: UpdateOrder::RandomPermutationPerSweep,
        }
    }
}

/// Outcome of one `(N, K, n, kind)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// Signed closest-memory overlap `max_μ Σ ξ^μ_i σ_i`.
    pub histogram: OverlapHistogram,
    /// Unsigned `max_μ |Σ ξ^μ_i σ_i|`, which also credits mirror states.
    pub abs_histogram: OverlapHistogram,
    pub trials: u64,
    pub non_converged: u64,
    pub max_sweeps_used: usize,
}

impl RecoveryReport {
    /// Fraction of trials that ended exactly on a stored memory.
    pub fn fraction_recovered(&self) -> f64 {
        self.histogram.count(self.histogram.meta.n_neurons as i32) as f64 / self.trials as f64
    }

    /// Fraction of trials that ended on a stored memory or its global spin
    /// flip.
    pub fn fraction_recovered_up_to_sign(&self) -> f64 {
        self.abs_histogram.count(self.abs_histogram.meta.n_neurons as i32) as f64
            / self.trials as f64
    }
}

/// The memory set used by every experiment cell with this `(seed, N)`.
pub fn experiment_memories(seed: u64, n_neurons: usize, n_memories: usize) -> MemorySet {
    let mut rng = stream_rng(seed, &[tag::MEMORIES, n_neurons as u64]);
    MemorySet::random(n_memories, n_neurons, &mut rng)
}

#[derive(Debug, Clone, Copy)]
struct TrialOutcome {
    best: i32,
    best_abs: i32,
    converged: bool,
    sweeps: usize,
}

fn run_trials(
    memories: &MemorySet,
    model: EnergyModel,
    trials: u64,
    seed: u64,
    opts: &TrialOptions,
) -> Result<Vec<TrialOutcome>> {
    let n = memories.n_neurons();
    let dynamics = Dynamics::new(memories, model);
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, &[tag::TRIAL, n as u64, t]);
            let start = SpinState::random(n, &mut rng);
            let report = dynamics.evolve(start, opts.order, opts.max_sweeps, &mut rng)?;
            Ok(TrialOutcome {
                best: report.best_overlap,
                best_abs: report.best_abs_overlap,
                converged: report.converged,
                sweeps: report.sweeps_used,
            })
        })
        .collect()
}

/// Evolves `trials` random starts against `K` random memories over `N`
/// neurons and histograms the closest-memory overlap.
pub fn run_recovery_trials(
    n_neurons: usize,
    n_memories: usize,
    power: u32,
    kind: EnergyKind,
    trials: u64,
    seed: u64,
) -> Result<RecoveryReport> {
    run_recovery_trials_with(n_neurons, n_memories, power, kind, trials, seed, &TrialOptions::default())
}

pub fn run_recovery_trials_with(
    n_neurons: usize,
    n_memories: usize,
    power: u32,
    kind: EnergyKind,
    trials: u64,
    seed: u64,
    opts: &TrialOptions,
) -> Result<RecoveryReport> {
    if n_neurons == 0 || n_memories == 0 || trials == 0 {
        return Err(Error::InvalidParameter(
            "recovery trials need N ≥ 1, K ≥ 1 and at least one trial".into(),
        ));
    }
    let model = EnergyModel::new(power, kind)?;
    let memories = experiment_memories(seed, n_neurons, n_memories);
    let outcomes = run_trials(&memories, model, trials, seed, opts)?;
    let meta = HistogramMeta {
        n_neurons,
        n_memories,
        power,
        kind,
    };
    let mut report = RecoveryReport {
        histogram: OverlapHistogram::new(meta),
        abs_histogram: OverlapHistogram::new(meta),
        trials,
        non_converged: 0,
        max_sweeps_used: 0,
    };
    for o in outcomes {
        report.histogram.record(o.best);
        report.abs_histogram.record(o.best_abs);
        report.non_converged += u64::from(!o.converged);
        report.max_sweeps_used = report.max_sweeps_used.max(o.sweeps);
    }
    Ok(report)
}

/// A grid of recovery experiments, run cell by cell in a fixed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialGrid {
    pub n_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub powers: Vec<u32>,
    pub trials_per_cell: u64,
    pub seed: u64,
    pub kind: EnergyKind,
}

impl TrialGrid {
    pub fn run(&self, opts: &TrialOptions) -> Result<Vec<RecoveryReport>> {
        if self.trials_per_cell == 0 {
            return Err(Error::InvalidParameter("trials_per_cell must be ≥ 1".into()));
        }
        let mut out = Vec::new();
        for &n in &self.n_values {
            for &k in &self.k_values {
                for &p in &self.powers {
                    out.push(run_recovery_trials_with(
                        n,
                        k,
                        p,
                        self.kind,
                        self.trials_per_cell,
                        self.seed,
                        opts,
                    )?);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KHalfReport {
    pub n_neurons: usize,
    pub power: u32,
    pub kind: EnergyKind,
    /// Largest evaluated `K` whose recovery fraction is at least one half.
    pub k_half: usize,
    pub fraction_at_k_half: f64,
    /// The fraction never fell below one half up to the search bound.
    pub saturated: bool,
    /// Every `(K, fraction)` evaluated, in evaluation order.
    pub path: Vec<(usize, f64)>,
}

impl KHalfReport {
    /// Pairs of evaluated points where a larger `K` recovered strictly more
    /// often than a smaller one.
    pub fn monotonicity_violations(&self) -> Vec<((usize, f64), (usize, f64))> {
        let mut pts = self.path.clone();
        pts.sort_by_key(|p| p.0);
        let mut bad = Vec::new();
        for (i, a) in pts.iter().enumerate() {
            for b in &pts[i + 1..] {
                if b.1 > a.1 {
                    bad.push((*a, *b));
                }
            }
        }
        bad
    }

    pub fn csv_header() -> &'static str {
        "N,n,kind,k_half,fraction_at_khalf"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6}",
            self.n_neurons, self.power, self.kind, self.k_half, self.fraction_at_k_half
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KHalfOptions {
    pub trials: u64,
    /// Upper bound on `K`; `None` uses 64 times the perfect-recall estimate.
    pub max_k: Option<usize>,
    /// Bisection stops once the bracket is narrower than this fraction of
    /// its lower end (and never narrower than one memory).
    pub resolution: f64,
    pub dynamics: TrialOptions,
}

impl Default for KHalfOptions {
    fn default() -> Self {
        KHalfOptions {
            trials: 1000,
            max_k: None,
            resolution: 0.01,
            dynamics: TrialOptions::default(),
        }
    }
}

/// Finds `K½`, the number of memories at which half of the random starts
/// converge exactly onto a stored memory (up to global spin flip), by
/// bracketing around the perfect-recall estimate and bisecting over `K`.
pub fn find_k_half(
    n_neurons: usize,
    power: u32,
    kind: EnergyKind,
    seed: u64,
    opts: &KHalfOptions,
) -> Result<KHalfReport> {
    let estimate = if n_neurons >= 3 && power >= 2 {
        k_max_no_errors(n_neurons, power)?.max(1) as usize
    } else {
        1
    };
    let max_k = opts.max_k.unwrap_or(64 * estimate).max(1);
    let mut path = Vec::new();
    let mut eval = |k: usize| -> Result<f64> {
        let r = run_recovery_trials_with(n_neurons, k, power, kind, opts.trials, seed, &opts.dynamics)?;
        let f = r.fraction_recovered_up_to_sign();
        path.push((k, f));
        Ok(f)
    };

    let start = estimate.min(max_k);
    let f_start = eval(start)?;
    let (mut lo, mut f_lo, mut hi);
    if f_start >= 0.5 {
        lo = start;
        f_lo = f_start;
        loop {
            if lo >= max_k {
                return Ok(KHalfReport {
                    n_neurons,
                    power,
                    kind,
                    k_half: lo,
                    fraction_at_k_half: f_lo,
                    saturated: true,
                    path,
                });
            }
            let next = (lo * 2).min(max_k);
            let f = eval(next)?;
            if f >= 0.5 {
                lo = next;
                f_lo = f;
            } else {
                hi = next;
                break;
            }
        }
    } else {
        hi = start;
        loop {
            if hi == 1 {
                return Ok(KHalfReport {
                    n_neurons,
                    power,
                    kind,
                    k_half: 0,
                    fraction_at_k_half: 1.0,
                    saturated: false,
                    path,
                });
            }
            let next = (hi / 2).max(1);
            let f = eval(next)?;
            if f >= 0.5 {
                lo = next;
                f_lo = f;
                break;
            }
            hi = next;
        }
    }
    let width = |lo: usize| ((lo as f64 * opts.resolution).ceil() as usize).max(1);
    while hi - lo > width(lo) {
        let mid = lo + (hi - lo) / 2;
        let f = eval(mid)?;
        if f >= 0.5 {
            lo = mid;
            f_lo = f;
        } else {
            hi = mid;
        }
    }
    Ok(KHalfReport {
        n_neurons,
        power,
        kind,
        k_half: lo,
        fraction_at_k_half: f_lo,
        saturated: false,
        path,
    })
}
