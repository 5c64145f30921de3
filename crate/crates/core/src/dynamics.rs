//! Asynchronous energy-descent recall and the XOR construction.
//!
//! One spin is updated at a time: `σ_i ← sign(gap_i)` where `gap_i` is the
//! energy with `σ_i = -1` minus the energy with `σ_i = +1`. A zero gap keeps
//! the current spin, so every accepted flip strictly lowers the energy and
//! the dynamics terminate on the finite state space.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::xor_dataset;
use crate::energy::{energy_gap, GapKernel};
use crate::rng::{stream_rng, tag};
use crate::{EnergyModel, Error, MemorySet, OverlapCache, Result, SpinState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateOrder {
    /// Fresh uniformly random permutation of all spins at every sweep.
    RandomPermutationPerSweep,
    /// Spins `0, 1, ..., N-1` in order.
    FixedScan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub max_sweeps: usize,
    pub update_order: UpdateOrder,
    pub seed: u64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            max_sweeps: 100,
            update_order: UpdateOrder::RandomPermutationPerSweep,
            seed: 0,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_sweeps == 0 {
            return Err(Error::InvalidParameter("max_sweeps must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvergenceReport {
    pub final_state: SpinState,
    /// Sweeps executed, including the final zero-flip sweep when converged.
    pub sweeps_used: usize,
    pub converged: bool,
    /// `max_μ Σ_i ξ^μ_i σ_i` at the final state.
    pub best_overlap: i32,
    pub best_memory_index: usize,
    /// `max_μ |Σ_i ξ^μ_i σ_i|`; equals `N` when the final state is a memory or
    /// the global spin flip of one.
    pub best_abs_overlap: i32,
}

impl ConvergenceReport {
    /// The final state is exactly one of the stored memories.
    pub fn recovered(&self) -> bool {
        self.best_overlap == self.final_state.len() as i32
    }

    /// The final state is a stored memory or its mirror image `-ξ`.
    pub fn recovered_up_to_sign(&self) -> bool {
        self.best_abs_overlap == self.final_state.len() as i32
    }
}

/// One asynchronous update of spin `i`. Returns whether it flipped; the cache
/// is updated only on a flip.
pub fn update_spin(
    state: &mut SpinState,
    i: usize,
    memories: &MemorySet,
    model: &EnergyModel,
    cache: &mut OverlapCache,
) -> bool {
    let gap = energy_gap(memories, state, i, model, cache);
    apply_gap(state, i, gap, memories, cache)
}

#[inline]
fn apply_gap(
    state: &mut SpinState,
    i: usize,
    gap: f64,
    memories: &MemorySet,
    cache: &mut OverlapCache,
) -> bool {
    let old = state.get(i);
    let wants_flip = (gap > 0.0 && old < 0) || (gap < 0.0 && old > 0);
    if wants_flip {
        state.flip(i);
        cache.record_flip(memories, i, old);
    }
    wants_flip
}

/// Recall engine for one memory set: owns the tabulated gap kernel so that
/// many trials can share it read-only.
#[derive(Debug, Clone)]
pub struct Dynamics<'a> {
    memories: &'a MemorySet,
    kernel: GapKernel,
}

impl<'a> Dynamics<'a> {
    pub fn new(memories: &'a MemorySet, model: EnergyModel) -> Self {
        Dynamics {
            memories,
            kernel: GapKernel::new(model, memories.n_neurons()),
        }
    }

    pub fn memories(&self) -> &MemorySet {
        self.memories
    }

    #[inline]
    pub fn update_spin(&self, state: &mut SpinState, i: usize, cache: &mut OverlapCache) -> bool {
        let gap = self.kernel.gap(self.memories, state, i, cache);
        apply_gap(state, i, gap, self.memories, cache)
    }

    /// Runs sweeps until one produces no flip or `max_sweeps` is reached.
    /// `observer` sees the state after every accepted flip.
    pub fn evolve_with<R, O>(
        &self,
        mut state: SpinState,
        order: UpdateOrder,
        max_sweeps: usize,
        rng: &mut R,
        mut observer: O,
    ) -> Result<ConvergenceReport>
    where
        R: Rng + ?Sized,
        O: FnMut(usize, &SpinState),
    {
        if max_sweeps == 0 {
            return Err(Error::InvalidParameter("max_sweeps must be ≥ 1".into()));
        }
        let mut cache = OverlapCache::new(self.memories, &state)?;
        let n = state.len();
        let mut visit: Vec<usize> = (0..n).collect();
        let mut converged = false;
        let mut sweeps = 0;
        while sweeps < max_sweeps {
            sweeps += 1;
            if order == UpdateOrder::RandomPermutationPerSweep {
                visit.shuffle(rng);
            }
            let mut flips = 0usize;
            for &i in &visit {
                if self.update_spin(&mut state, i, &mut cache) {
                    flips += 1;
                    observer(i, &state);
                }
            }
            if flips == 0 {
                converged = true;
                break;
            }
        }
        let (best_overlap, best_memory_index) = cache.best();
        Ok(ConvergenceReport {
            best_abs_overlap: cache.best_abs(),
            final_state: state,
            sweeps_used: sweeps,
            converged,
            best_overlap,
            best_memory_index,
        })
    }

    pub fn evolve<R: Rng + ?Sized>(
        &self,
        state: SpinState,
        order: UpdateOrder,
        max_sweeps: usize,
        rng: &mut R,
    ) -> Result<ConvergenceReport> {
        self.evolve_with(state, order, max_sweeps, rng, |_, _| {})
    }
}

/// Evolves `state` to a fixed point (or `cfg.max_sweeps`). Visit orders are
/// drawn from the stream keyed by `cfg.seed`.
pub fn evolve(
    state: SpinState,
    memories: &MemorySet,
    model: &EnergyModel,
    cfg: &DynamicsConfig,
) -> Result<ConvergenceReport> {
    evolve_observed(state, memories, model, cfg, |_, _| {})
}

/// [`evolve`] with a callback after every accepted flip.
pub fn evolve_observed<O: FnMut(usize, &SpinState)>(
    state: SpinState,
    memories: &MemorySet,
    model: &EnergyModel,
    cfg: &DynamicsConfig,
    observer: O,
) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, &[tag::DYNAMICS]);
    Dynamics::new(memories, *model).evolve_with(
        state,
        cfg.update_order,
        cfg.max_sweeps,
        &mut rng,
        observer,
    )
}

/// The four truth-table rows `(x, y, z)` stored as `K = 4` memories over
/// `N = 3` neurons.
pub fn xor_memories() -> MemorySet {
    let rows: Vec<Vec<i8>> = xor_dataset().iter().map(|e| vec![e.x, e.y, e.z]).collect();
    MemorySet::from_rows(&rows).expect("xor rows are ±1 triplets")
}

/// Energy of the XOR memory: `-Σ_rows F(x_r x + y_r y + z_r z)`.
///
/// Accepts arbitrary reals; on cube corners it is `0` for `n = 1`, a constant
/// for even polynomial `n`, and proportional to `xyz` for odd polynomial
/// `n ≥ 3`.
pub fn xor_energy(x: f64, y: f64, z: f64, model: &EnergyModel) -> f64 {
    -xor_dataset()
        .iter()
        .map(|e| model.energy(e.x as f64 * x + e.y as f64 * y + e.z as f64 * z))
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XorOutcome {
    Output(i8),
    /// Both output values have the same energy.
    Undecidable,
}

/// Chooses the output `z` minimizing the XOR energy with inputs clamped.
pub fn xor_solve(x: i8, y: i8, model: &EnergyModel) -> XorOutcome {
    let gap = xor_energy(x as f64, y as f64, -1.0, model) - xor_energy(x as f64, y as f64, 1.0, model);
    if gap > 0.0 {
        XorOutcome::Output(1)
    } else if gap < 0.0 {
        XorOutcome::Output(-1)
    } else {
        XorOutcome::Undecidable
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::total_energy;
    use crate::EnergyKind;

    fn poly(n: u32) -> EnergyModel {
        EnergyModel::polynomial(n).unwrap()
    }

    fn rect(n: u32) -> EnergyModel {
        EnergyModel::rectified(n).unwrap()
    }

    const CORNERS: [(f64, f64, f64); 8] = [
        (-1., -1., -1.),
        (-1., -1., 1.),
        (-1., 1., -1.),
        (-1., 1., 1.),
        (1., -1., -1.),
        (1., -1., 1.),
        (1., 1., -1.),
        (1., 1., 1.),
    ];

    #[test]
    fn xor_energy_corner_constants() {
        assert_eq!(xor_energy(1., 1., 1., &poly(3)), 24.0);
        for &(x, y, z) in &CORNERS {
            assert_eq!(xor_energy(x, y, z, &poly(2)), -12.0);
            assert_eq!(xor_energy(x, y, z, &poly(1)), 0.0);
            assert_eq!(xor_energy(x, y, z, &poly(3)), 24.0 * x * y * z);
        }
    }

    #[test]
    fn xor_energy_parity_in_each_argument() {
        let pts = [(0.3, -0.7, 1.1), (1.0, 0.5, -0.25), (-2.0, 0.1, 0.9)];
        for n in 1..=7u32 {
            let m = poly(n);
            for &(x, y, z) in &pts {
                let e = xor_energy(x, y, z, &m);
                let flipped = [
                    xor_energy(-x, y, z, &m),
                    xor_energy(x, -y, z, &m),
                    xor_energy(x, y, -z, &m),
                ];
                for f in flipped {
                    let want = if n % 2 == 1 { -e } else { e };
                    assert!((f - want).abs() <= 1e-9 * e.abs().max(1.0), "n={n}");
                }
            }
        }
    }

    #[test]
    fn xor_solutions() {
        assert_eq!(xor_solve(1, 1, &poly(3)), XorOutcome::Output(-1));
        assert_eq!(xor_solve(-1, 1, &poly(3)), XorOutcome::Output(1));
        assert_eq!(xor_solve(1, 1, &rect(2)), XorOutcome::Output(-1));
        for e in xor_dataset() {
            assert_eq!(xor_solve(e.x, e.y, &poly(2)), XorOutcome::Undecidable);
            assert_eq!(xor_solve(e.x, e.y, &poly(1)), XorOutcome::Undecidable);
            for n in [3, 5, 7] {
                assert_eq!(xor_solve(e.x, e.y, &poly(n)), XorOutcome::Output(e.z));
                assert_eq!(xor_solve(e.x, e.y, &poly(n)), XorOutcome::Output(-e.x * e.y));
            }
            for n in 2..=6 {
                assert_eq!(xor_solve(e.x, e.y, &rect(n)), XorOutcome::Output(e.z));
            }
        }
    }

    #[test]
    fn xor_memories_energy_matches_xor_energy() {
        let mem = xor_memories();
        for &(x, y, z) in &CORNERS {
            let s = SpinState::new(vec![x as i8, y as i8, z as i8]).unwrap();
            for m in [poly(3), rect(2), poly(4)] {
                assert_eq!(total_energy(&mem, &s, &m).unwrap(), xor_energy(x, y, z, &m));
            }
        }
    }

    #[test]
    fn stored_memory_is_fixed_point_below_capacity() {
        let mut rng = stream_rng(5, &[]);
        let mem = MemorySet::random(3, 60, &mut rng);
        for kind in [EnergyKind::Polynomial, EnergyKind::RectifiedPolynomial] {
            let model = EnergyModel::new(3, kind).unwrap();
            for mu in 0..mem.len() {
                let mut s = SpinState::new(mem.pattern(mu).to_vec()).unwrap();
                let mut cache = OverlapCache::new(&mem, &s).unwrap();
                for i in 0..60 {
                    assert!(!update_spin(&mut s, i, &mem, &model, &mut cache));
                }
                let report = evolve(s, &mem, &model, &DynamicsConfig::default()).unwrap();
                assert!(report.converged);
                assert_eq!(report.sweeps_used, 1);
                assert_eq!(report.best_overlap, 60);
                assert_eq!(report.best_memory_index, mu);
            }
        }
    }

    #[test]
    fn single_memory_repairs_one_bit() {
        let mut rng = stream_rng(9, &[]);
        let mem = MemorySet::random(1, 10, &mut rng);
        for n in 2..=5 {
            for kind in [EnergyKind::Polynomial, EnergyKind::RectifiedPolynomial] {
                let model = EnergyModel::new(n, kind).unwrap();
                for bit in 0..10 {
                    let mut s = SpinState::new(mem.pattern(0).to_vec()).unwrap();
                    s.flip(bit);
                    let mut cache = OverlapCache::new(&mem, &s).unwrap();
                    assert!(update_spin(&mut s, bit, &mem, &model, &mut cache));
                    assert_eq!(s.as_slice(), mem.pattern(0));
                    assert!(cache.is_consistent(&mem, &s));
                }
            }
        }
    }

    #[test]
    fn zero_gap_keeps_spin() {
        // XOR memories at n = 2: the output spin's gap is zero in every row.
        let mem = xor_memories();
        let model = poly(2);
        for e in xor_dataset() {
            for z in [-1i8, 1] {
                let mut s = SpinState::new(vec![e.x, e.y, z]).unwrap();
                let mut cache = OverlapCache::new(&mem, &s).unwrap();
                assert_eq!(energy_gap(&mem, &s, 2, &model, &cache), 0.0);
                assert!(!update_spin(&mut s, 2, &mem, &model, &mut cache));
                assert_eq!(s.get(2), z);
            }
        }
    }

    #[test]
    fn evolve_is_monotone_and_terminates() {
        for seed in 0..20u64 {
            let mut rng = stream_rng(seed, &[1]);
            let mem = MemorySet::random(40, 30, &mut rng);
            let start = SpinState::random(30, &mut rng);
            for model in [poly(2), poly(3), rect(3), rect(4)] {
                let mut last = total_energy(&mem, &start, &model).unwrap();
                let cfg = DynamicsConfig {
                    max_sweeps: 200,
                    seed,
                    ..DynamicsConfig::default()
                };
                let report = evolve_observed(start.clone(), &mem, &model, &cfg, |_, s| {
                    let e = total_energy(&mem, s, &model).unwrap();
                    assert!(e < last, "flip raised energy {last} -> {e}");
                    last = e;
                })
                .unwrap();
                assert!(report.converged);
            }
        }
    }

    #[test]
    fn orders_are_reproducible() {
        let mut rng = stream_rng(2, &[]);
        let mem = MemorySet::random(30, 25, &mut rng);
        let start = SpinState::random(25, &mut rng);
        for order in [UpdateOrder::FixedScan, UpdateOrder::RandomPermutationPerSweep] {
            let cfg = DynamicsConfig {
                update_order: order,
                seed: 4,
                ..DynamicsConfig::default()
            };
            let a = evolve(start.clone(), &mem, &poly(3), &cfg).unwrap();
            let b = evolve(start.clone(), &mem, &poly(3), &cfg).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn zero_sweeps_rejected() {
        let mem = xor_memories();
        let cfg = DynamicsConfig {
            max_sweeps: 0,
            ..DynamicsConfig::default()
        };
        let s = SpinState::new(vec![1, 1, 1]).unwrap();
        assert!(evolve(s, &mem, &poly(3), &cfg).is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mem = xor_memories();
        let s = SpinState::new(vec![1, 1]).unwrap();
        assert!(matches!(
            evolve(s, &mem, &poly(3), &DynamicsConfig::default()),
            Err(Error::Dimension(_))
        ));
    }
}
