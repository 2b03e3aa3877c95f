//! Eigen-analysis of the linear part, spectral quotients and resonance checks.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, IsfError, Result};
use crate::poly::MultiIndexSet;

/// Default bound on the condition number of the eigenvector matrix.
pub const DEFAULT_COND_LIMIT: f64 = 1e8;
/// Default relative margin below which an internal resonance is "near".
pub const DEFAULT_NEAR_RESONANCE: f64 = 0.1;
/// Margins at or below this are treated as exact resonances.
pub const EXACT_RESONANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    /// Discrete-time map, eigenvalues μ.
    Map,
    /// Vector field, eigenvalues λ.
    Flow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralData {
    pub dynamics: Dynamics,
    pub eigenvalues: Vec<Complex64>,
    /// Columns are the right eigenvectors `v_i`.
    pub right: DMatrix<Complex64>,
    /// Rows are the left eigenvectors `v*_i`, scaled so that `v*_i v_i = 1`.
    pub left: DMatrix<Complex64>,
    pub selection: Vec<usize>,
    pub period: Option<f64>,
    /// Condition number of the right eigenvector matrix.
    pub condition: f64,
}

/// Eigen-decomposition of a real matrix with the default conditioning bound.
pub fn eig_full(a: &DMatrix<f64>, dynamics: Dynamics) -> Result<SpectralData> {
    eig_full_with(a, dynamics, DEFAULT_COND_LIMIT)
}

pub fn eig_full_with(a: &DMatrix<f64>, dynamics: Dynamics, cond_limit: f64) -> Result<SpectralData> {
    if !a.is_square() || a.nrows() == 0 {
        return invalid("eigen-decomposition needs a non-empty square matrix");
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(IsfError::NonFinite("matrix entries".into()));
    }
    let n = a.nrows();
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let raw = a.clone().complex_eigenvalues();

    // One representative per real eigenvalue or conjugate pair (Im > 0).
    let imag_tol = 1e-12 * scale;
    let mut reps: Vec<Complex64> = Vec::new();
    let mut used = vec![false; n];
    for i in 0..n {
        if used[i] {
            continue;
        }
        used[i] = true;
        let z = raw[i];
        if z.im.abs() <= imag_tol {
            reps.push(Complex64::new(z.re, 0.0));
            continue;
        }
        let partner = (0..n)
            .filter(|&k| !used[k])
            .min_by(|&p, &q| (raw[p] - z.conj()).norm().total_cmp(&(raw[q] - z.conj()).norm()))
            .ok_or_else(|| IsfError::Pairing("complex eigenvalue without a conjugate partner".into()))?;
        used[partner] = true;
        let w = raw[partner];
        let re = 0.5 * (z.re + w.re);
        let im = 0.5 * (z.im.abs() + w.im.abs());
        reps.push(Complex64::new(re, im));
    }
    reps.sort_by(|x, y| {
        let (kx, ky) = match dynamics {
            Dynamics::Map => (x.norm(), y.norm()),
            Dynamics::Flow => (x.re, y.re),
        };
        ky.total_cmp(&kx)
            .then(y.im.total_cmp(&x.im))
            .then(y.re.total_cmp(&x.re))
    });

    // Null vectors per cluster of numerically equal representatives.
    let cluster_tol = 1e-8 * scale;
    let ac = a.map(|v| Complex64::new(v, 0.0));
    let mut values = Vec::with_capacity(n);
    let mut cols: Vec<DVector<Complex64>> = Vec::with_capacity(n);
    let mut i = 0;
    while i < reps.len() {
        let mut k = i + 1;
        while k < reps.len() && (reps[k] - reps[i]).norm() <= cluster_tol {
            k += 1;
        }
        let mult = k - i;
        let vecs = null_vectors(&ac, reps[i], mult, 1e-7 * scale)
            .ok_or(IsfError::IllConditionedEigenbasis { cond: f64::INFINITY, limit: cond_limit })?;
        for (r, v) in reps[i..k].iter().zip(vecs) {
            if r.im == 0.0 {
                values.push(*r);
                cols.push(realify_vector(v));
            } else {
                values.push(*r);
                values.push(r.conj());
                cols.push(v.clone());
                cols.push(v.map(|c| c.conj()));
            }
        }
        i = k;
    }
    debug_assert_eq!(values.len(), n);

    let right = DMatrix::from_columns(&cols);
    let sv = right.clone().singular_values();
    let condition = sv.max() / sv.min();
    if !condition.is_finite() || condition > cond_limit {
        return Err(IsfError::IllConditionedEigenbasis { cond: condition, limit: cond_limit });
    }
    let left = right
        .clone()
        .try_inverse()
        .ok_or_else(|| IsfError::Singular("eigenvector matrix".into()))?;
    let mut spec = SpectralData {
        dynamics,
        eigenvalues: values,
        right,
        left,
        selection: Vec::new(),
        period: None,
        condition,
    };
    spec.selection = spec.closed_selection(&[0])?;
    Ok(spec)
}

// None when fewer than `count` singular values fall below `tol`: the
// eigenvalue is defective.
fn null_vectors(a: &DMatrix<Complex64>, mu: Complex64, count: usize, tol: f64) -> Option<Vec<DVector<Complex64>>> {
    let n = a.nrows();
    let shifted = a - DMatrix::from_diagonal_element(n, n, mu);
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("requested V^H");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| svd.singular_values[p].total_cmp(&svd.singular_values[q]));
    if svd.singular_values[order[count - 1]] > tol {
        return None;
    }
    let vecs = order
        .into_iter()
        .take(count)
        .map(|k| {
            let mut v: DVector<Complex64> = v_t.row(k).adjoint();
            // fix the phase: largest component real and positive
            let big = v.iter().copied().max_by(|x, y| x.norm().total_cmp(&y.norm())).unwrap();
            v *= big.conj() / big.norm();
            let norm = v.norm();
            v / Complex64::new(norm, 0.0)
        })
        .collect();
    Some(vecs)
}

fn realify_vector(v: DVector<Complex64>) -> DVector<Complex64> {
    let r = v.map(|c| Complex64::new(c.re, 0.0));
    let norm = r.norm();
    r / Complex64::new(norm, 0.0)
}

impl SpectralData {
    /// Spectrum-only data with unit eigenvectors, kept in the given order.
    /// Useful for resonance bookkeeping where no matrix is at hand.
    pub fn from_eigenvalues(dynamics: Dynamics, eigenvalues: Vec<Complex64>, selection: &[usize]) -> Result<Self> {
        let n = eigenvalues.len();
        if n == 0 {
            return invalid("empty spectrum");
        }
        for &s in selection {
            if s >= n {
                return invalid(format!("selection index {s} out of range for {n} modes"));
            }
        }
        let mut selection = selection.to_vec();
        selection.sort_unstable();
        selection.dedup();
        Ok(SpectralData {
            dynamics,
            eigenvalues,
            right: DMatrix::identity(n, n),
            left: DMatrix::identity(n, n),
            selection,
            period: None,
            condition: 1.0,
        })
    }

    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn nu(&self) -> usize {
        self.selection.len()
    }

    /// Index of the conjugate partner of each mode (itself for real modes).
    pub fn partners(&self) -> Vec<usize> {
        let ev = &self.eigenvalues;
        (0..ev.len())
            .map(|i| {
                if ev[i].im == 0.0 {
                    return i;
                }
                (0..ev.len())
                    .filter(|&k| k != i)
                    .min_by(|&p, &q| (ev[p] - ev[i].conj()).norm().total_cmp(&(ev[q] - ev[i].conj()).norm()))
                    .unwrap_or(i)
            })
            .collect()
    }

    /// The given modes plus their conjugate partners, sorted.
    pub fn closed_selection(&self, modes: &[usize]) -> Result<Vec<usize>> {
        let partners = self.partners();
        let mut sel = Vec::new();
        for &m in modes {
            if m >= self.n() {
                return invalid(format!("mode {m} out of range for {} modes", self.n()));
            }
            sel.push(m);
            sel.push(partners[m]);
        }
        sel.sort_unstable();
        sel.dedup();
        Ok(sel)
    }

    /// Selects modes (closing the set under conjugation).
    pub fn with_selection(mut self, modes: &[usize]) -> Result<Self> {
        if modes.is_empty() {
            return invalid("selection must not be empty");
        }
        self.selection = self.closed_selection(modes)?;
        Ok(self)
    }

    pub fn with_period(mut self, t: f64) -> Self {
        self.period = Some(t);
        self
    }

    /// Eigenvalue divisor for exponent `m` against mode `j`: `Πμ^m − μ_j`
    /// for maps, `Σ m_k λ_k − λ_j` for flows.
    pub fn divisor(&self, m: &[u32], j: usize) -> Complex64 {
        self.combination(m) - self.eigenvalues[j]
    }

    /// `Πμ_k^{m_k}` for maps, `Σ m_k λ_k` for flows.
    pub fn combination(&self, m: &[u32]) -> Complex64 {
        match self.dynamics {
            Dynamics::Map => m
                .iter()
                .zip(&self.eigenvalues)
                .fold(Complex64::new(1.0, 0.0), |acc, (&e, &mu)| acc * mu.powu(e)),
            Dynamics::Flow => m
                .iter()
                .zip(&self.eigenvalues)
                .fold(Complex64::new(0.0, 0.0), |acc, (&e, &l)| acc + l * e as f64),
        }
    }

    /// Relative margin `|divisor| / |μ_j|`.
    pub fn margin(&self, m: &[u32], j: usize) -> f64 {
        let scale = self.eigenvalues[j].norm();
        let d = self.divisor(m, j).norm();
        if scale == 0.0 {
            d
        } else {
            d / scale
        }
    }

    /// Eigenvalues of the time-`t` flow map, `exp(λ t)`.
    pub fn flow_to_map(&self, t: f64) -> Result<Self> {
        if self.dynamics != Dynamics::Flow {
            return invalid("spectrum is already that of a map");
        }
        let mut out = self.clone();
        out.dynamics = Dynamics::Map;
        out.eigenvalues = self.eigenvalues.iter().map(|l| (l * t).exp()).collect();
        out.period = Some(t);
        Ok(out)
    }

    /// Residual `max_i ‖A v_i − μ_i v_i‖` over right and left eigenvectors.
    pub fn residual(&self, a: &DMatrix<f64>) -> f64 {
        let ac = a.map(|v| Complex64::new(v, 0.0));
        let mut worst: f64 = 0.0;
        for (i, mu) in self.eigenvalues.iter().enumerate() {
            let v = self.right.column(i);
            worst = worst.max((&ac * v - v * *mu).norm());
            let w = self.left.row(i);
            worst = worst.max((w * &ac - w * *mu).norm());
        }
        worst
    }
}

/// Ratio of the slowest selected decay rate to the slowest overall one.
pub fn spectral_quotient(spec: &SpectralData) -> Result<f64> {
    if spec.selection.is_empty() {
        return invalid("spectral quotient needs a non-empty selection");
    }
    let rates: Vec<f64> = match spec.dynamics {
        Dynamics::Map => spec.eigenvalues.iter().map(|mu| mu.norm().ln()).collect(),
        Dynamics::Flow => spec.eigenvalues.iter().map(|l| l.re).collect(),
    };
    if let Some(k) = rates.iter().position(|r| !(*r < 0.0)) {
        return Err(IsfError::NotContracting(format!(
            "mode {k} with eigenvalue {} does not decay",
            spec.eigenvalues[k]
        )));
    }
    let slowest = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let fastest_selected = spec.selection.iter().map(|&k| rates[k]).fold(f64::INFINITY, f64::min);
    Ok(fastest_selected / slowest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceEntry {
    pub j: usize,
    pub m: Vec<u32>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceReport {
    pub sigma: usize,
    pub violations: Vec<ResonanceEntry>,
    /// The smallest margin encountered, violation or not.
    pub closest: Option<ResonanceEntry>,
}

impl ResonanceReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Resonances between selected eigenvalues and products (sums) involving at
/// least one non-selected eigenvalue, for `2 <= |m| <= sigma - 1`.
pub fn check_external_nonresonance(spec: &SpectralData, sigma: usize) -> ResonanceReport {
    let mut report = ResonanceReport { sigma, violations: Vec::new(), closest: None };
    if sigma < 3 {
        return report;
    }
    let n = spec.n();
    let set = MultiIndexSet::new(n, sigma - 1).expect("n >= 1 and sigma >= 3");
    let outside: Vec<bool> = (0..n).map(|k| !spec.selection.contains(&k)).collect();
    for m in set.iter().skip(n) {
        if !m.iter().zip(&outside).any(|(&e, &o)| o && e > 0) {
            continue;
        }
        for &j in &spec.selection {
            let entry = ResonanceEntry { j, m: m.to_vec(), margin: spec.margin(m, j) };
            if report.closest.as_ref().is_none_or(|c| entry.margin < c.margin) {
                report.closest = Some(entry.clone());
            }
            if entry.margin <= EXACT_RESONANCE {
                report.violations.push(entry);
            }
        }
    }
    report
}

/// Internal (near-)resonances: exponents supported on the selection with
/// `2 <= |m| <= sigma - 1` and relative margin at most `tol`.
pub fn internal_resonances(spec: &SpectralData, sigma: usize, tol: f64) -> Vec<ResonanceEntry> {
    let mut out = Vec::new();
    if sigma < 3 {
        return out;
    }
    let n = spec.n();
    let set = MultiIndexSet::new(n, sigma - 1).expect("n >= 1 and sigma >= 3");
    let inside: Vec<bool> = (0..n).map(|k| spec.selection.contains(&k)).collect();
    for m in set.iter().skip(n) {
        if m.iter().zip(&inside).any(|(&e, &i)| !i && e > 0) {
            continue;
        }
        for &j in &spec.selection {
            let margin = spec.margin(m, j);
            if margin <= tol.max(EXACT_RESONANCE) {
                out.push(ResonanceEntry { j, m: m.to_vec(), margin });
            }
        }
    }
    out
}
