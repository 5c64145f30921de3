//! Energy functions, spin configurations and stored binary memories.
//!
//! The configuration energy is `E(σ) = -Σ_μ F(m_μ)` where `m_μ = Σ_i ξ^μ_i σ_i`
//! is the overlap with memory `μ`. The pairwise weight matrix of the classical
//! model (`F(x) = x²`) is never materialized: everything runs on overlaps.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnergyKind {
    /// `F(x) = x^n` for all `x`.
    Polynomial,
    /// `F(x) = x^n` for `x ≥ 0`, zero otherwise.
    RectifiedPolynomial,
}

impl EnergyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnergyKind::Polynomial => "poly",
            EnergyKind::RectifiedPolynomial => "rect",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            EnergyKind::Polynomial => 0,
            EnergyKind::RectifiedPolynomial => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(EnergyKind::Polynomial),
            1 => Some(EnergyKind::RectifiedPolynomial),
            _ => None,
        }
    }
}

impl fmt::Display for EnergyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnergyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "poly" | "polynomial" | "power" => Ok(EnergyKind::Polynomial),
            "rect" | "rectified" | "rep" => Ok(EnergyKind::RectifiedPolynomial),
            other => Err(Error::InvalidParameter(format!(
                "unknown energy kind {other:?} (expected poly or rect)"
            ))),
        }
    }
}

/// `x^n` by repeated squaring. Exact for integer-valued `x` while the result
/// stays below 2^53.
#[inline]
pub fn int_pow(x: f64, n: u32) -> f64 {
    let mut base = x;
    let mut exp = n;
    let mut acc = 1.0;
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= base;
        }
        exp >>= 1;
        if exp > 0 {
            base *= base;
        }
    }
    acc
}

/// Rectified power `max(x, 0)^p`, with `rep(x, 0)` the unit step (`1` for
/// `x > 0`, else `0`).
#[inline]
pub fn rep(x: f64, power: u32) -> f64 {
    if x > 0.0 {
        int_pow(x, power)
    } else if x.is_nan() {
        f64::NAN
    } else {
        0.0
    }
}

/// Interaction power and energy kind; houses `F` and `f = F'`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnergyModel {
    power: u32,
    kind: EnergyKind,
}

impl EnergyModel {
    pub fn new(power: u32, kind: EnergyKind) -> Result<Self> {
        if power < 1 {
            return Err(Error::InvalidParameter(
                "interaction power must be at least 1".into(),
            ));
        }
        Ok(EnergyModel { power, kind })
    }

    pub fn polynomial(power: u32) -> Result<Self> {
        Self::new(power, EnergyKind::Polynomial)
    }

    pub fn rectified(power: u32) -> Result<Self> {
        Self::new(power, EnergyKind::RectifiedPolynomial)
    }

    pub fn power(&self) -> u32 {
        self.power
    }

    pub fn kind(&self) -> EnergyKind {
        self.kind
    }

    /// `x^p` under this model's kind: rectified models use `max(x,0)^p`
    /// (with the unit step at `p = 0`), polynomial models the plain power.
    #[inline]
    pub fn power_term(&self, x: f64, p: u32) -> f64 {
        match self.kind {
            EnergyKind::Polynomial => int_pow(x, p),
            EnergyKind::RectifiedPolynomial => rep(x, p),
        }
    }

    /// The energy function `F(x)`.
    #[inline]
    pub fn energy(&self, x: f64) -> f64 {
        self.power_term(x, self.power)
    }

    /// `f(x) = F'(x)`. For the rectified kind `f(0) = 0`.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        self.power as f64 * self.power_term(x, self.power - 1)
    }
}

impl fmt::Display for EnergyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind, self.power)
    }
}

/// A ±1 configuration of `N` neurons.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinState {
    values: Vec<i8>,
}

impl SpinState {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidParameter(format!(
                "spin {pos} is {} (must be ±1)",
                values[pos]
            )));
        }
        Ok(SpinState { values })
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let values = (0..n)
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect();
        SpinState { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> i8 {
        self.values[i]
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.values
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        self.values[i] = -self.values[i];
    }

    pub fn negated(&self) -> SpinState {
        SpinState {
            values: self.values.iter().map(|&s| -s).collect(),
        }
    }
}

/// `K` stored ±1 patterns over `N` neurons.
///
/// Patterns are kept twice: row-major by memory (for overlaps) and by neuron
/// (so the per-spin gap walks one contiguous row of length `K`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemorySet {
    n_neurons: usize,
    by_memory: Vec<i8>,
    by_neuron: Vec<i8>,
}

impl MemorySet {
    /// `patterns` is row-major `K × N`.
    pub fn new(n_neurons: usize, patterns: Vec<i8>) -> Result<Self> {
        if n_neurons == 0 {
            return Err(Error::InvalidParameter("memories need N ≥ 1".into()));
        }
        if patterns.is_empty() || !patterns.len().is_multiple_of(n_neurons) {
            return Err(Error::Dimension(format!(
                "{} pattern entries is not a positive multiple of N = {n_neurons}",
                patterns.len()
            )));
        }
        if let Some(pos) = patterns.iter().position(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidParameter(format!(
                "memory entry {pos} is {} (must be ±1)",
                patterns[pos]
            )));
        }
        let k = patterns.len() / n_neurons;
        let mut by_neuron = vec![0i8; patterns.len()];
        for mu in 0..k {
            for i in 0..n_neurons {
                by_neuron[i * k + mu] = patterns[mu * n_neurons + i];
            }
        }
        Ok(MemorySet {
            n_neurons,
            by_memory: patterns,
            by_neuron,
        })
    }

    pub fn from_rows(rows: &[Vec<i8>]) -> Result<Self> {
        let n = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("memory rows differ in length".into()));
        }
        Self::new(n, rows.concat())
    }

    /// Fair ±1 entries, drawn memory by memory, so the first `K` memories of
    /// a stream do not depend on how many are drawn in total.
    pub fn random<R: Rng + ?Sized>(k: usize, n_neurons: usize, rng: &mut R) -> Self {
        let patterns = (0..k * n_neurons)
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect();
        Self::new(n_neurons, patterns).expect("random patterns are well formed")
    }

    /// Number of stored memories `K`.
    pub fn len(&self) -> usize {
        self.by_memory.len() / self.n_neurons
    }

    pub fn is_empty(&self) -> bool {
        self.by_memory.is_empty()
    }

    pub fn n_neurons(&self) -> usize {
        self.n_neurons
    }

    pub fn pattern(&self, mu: usize) -> &[i8] {
        &self.by_memory[mu * self.n_neurons..(mu + 1) * self.n_neurons]
    }

    /// `ξ^μ_i` for all `μ`, i.e. neuron `i`'s entry in every memory.
    #[inline]
    pub fn neuron_column(&self, i: usize) -> &[i8] {
        let k = self.len();
        &self.by_neuron[i * k..(i + 1) * k]
    }

    pub fn overlap(&self, mu: usize, state: &SpinState) -> i32 {
        self.pattern(mu)
            .iter()
            .zip(state.as_slice())
            .map(|(&x, &s)| (x * s) as i32)
            .sum()
    }

    pub fn overlaps(&self, state: &SpinState) -> Vec<i32> {
        (0..self.len()).map(|mu| self.overlap(mu, state)).collect()
    }

    fn check_state(&self, state: &SpinState) -> Result<()> {
        if state.len() != self.n_neurons {
            return Err(Error::Dimension(format!(
                "state has {} spins, memories have {}",
                state.len(),
                self.n_neurons
            )));
        }
        Ok(())
    }
}

/// Integer overlaps `m_μ = Σ_j ξ^μ_j σ_j` kept in sync with a [`SpinState`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapCache {
    overlaps: Vec<i32>,
}

impl OverlapCache {
    pub fn new(memories: &MemorySet, state: &SpinState) -> Result<Self> {
        memories.check_state(state)?;
        Ok(OverlapCache {
            overlaps: memories.overlaps(state),
        })
    }

    pub fn as_slice(&self) -> &[i32] {
        &self.overlaps
    }

    /// Call after spin `i` flipped away from `old_spin`: `m_μ -= 2 ξ^μ_i σ_old`.
    #[inline]
    pub fn record_flip(&mut self, memories: &MemorySet, i: usize, old_spin: i8) {
        let delta = -2 * old_spin as i32;
        for (m, &x) in self.overlaps.iter_mut().zip(memories.neuron_column(i)) {
            *m += delta * x as i32;
        }
    }

    pub fn is_consistent(&self, memories: &MemorySet, state: &SpinState) -> bool {
        self.overlaps == memories.overlaps(state)
    }

    /// Largest signed overlap and the memory attaining it (lowest index on
    /// ties).
    pub fn best(&self) -> (i32, usize) {
        let mut best = (i32::MIN, 0);
        for (mu, &m) in self.overlaps.iter().enumerate() {
            if m > best.0 {
                best = (m, mu);
            }
        }
        best
    }

    pub fn best_abs(&self) -> i32 {
        self.overlaps.iter().map(|m| m.abs()).max().unwrap_or(0)
    }
}

/// `-Σ_μ F(Σ_i ξ^μ_i σ_i)`.
pub fn total_energy(memories: &MemorySet, state: &SpinState, model: &EnergyModel) -> Result<f64> {
    memories.check_state(state)?;
    Ok(-memories
        .overlaps(state)
        .into_iter()
        .map(|m| model.energy(m as f64))
        .sum::<f64>())
}

/// Energy with spin `i` off minus energy with spin `i` on:
/// `Σ_μ F(r_μ + ξ^μ_i) - F(r_μ - ξ^μ_i)` where `r_μ = m_μ - ξ^μ_i σ_i`.
///
/// Positive means `σ_i = +1` is the lower-energy choice. `O(K)` given a cache
/// consistent with `state`; debug builds verify consistency by recomputing
/// every overlap.
pub fn energy_gap(
    memories: &MemorySet,
    state: &SpinState,
    i: usize,
    model: &EnergyModel,
    cache: &OverlapCache,
) -> f64 {
    debug_assert!(
        cache.is_consistent(memories, state),
        "stale overlap cache passed to energy_gap"
    );
    let s = state.get(i) as i32;
    memories
        .neuron_column(i)
        .iter()
        .zip(cache.as_slice())
        .map(|(&x, &m)| {
            let x = x as i32;
            let rest = m - x * s;
            model.energy((rest + x) as f64) - model.energy((rest - x) as f64)
        })
        .sum()
}

/// Tabulated energy gap for integer overlaps.
///
/// With `D[r] = F(r+1) - F(r-1)` the per-memory term of [`energy_gap`] is
/// `ξ^μ_i · D[r_μ]`, so the gap becomes `K` table lookups. Values are
/// bit-identical to [`energy_gap`].
#[derive(Debug, Clone)]
pub struct GapKernel {
    model: EnergyModel,
    n_neurons: usize,
    table: Vec<f64>,
}

impl GapKernel {
    pub fn new(model: EnergyModel, n_neurons: usize) -> Self {
        let n = n_neurons as i64;
        let table = (-n..=n)
            .map(|r| model.energy((r + 1) as f64) - model.energy((r - 1) as f64))
            .collect();
        GapKernel {
            model,
            n_neurons,
            table,
        }
    }

    pub fn model(&self) -> &EnergyModel {
        &self.model
    }

    /// Same contract as [`energy_gap`], without the debug consistency check.
    #[inline]
    pub fn gap(
        &self,
        memories: &MemorySet,
        state: &SpinState,
        i: usize,
        cache: &OverlapCache,
    ) -> f64 {
        debug_assert_eq!(memories.n_neurons(), self.n_neurons);
        let s = state.get(i) as i32;
        let offset = self.n_neurons as i32;
        let table = &self.table[..];
        let mut acc = 0.0;
        for (&x, &m) in memories.neuron_column(i).iter().zip(cache.as_slice()) {
            let x = x as i32;
            acc += f64::from(x) * table[(m - x * s + offset) as usize];
        }
        acc
    }
}
