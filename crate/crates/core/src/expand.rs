//! Series expansion of an ISF from an explicit polynomial model.
//!
//! In eigen-coordinates `ξ` the model has diagonal linear part. The
//! submersion starts as the projection onto the selected coordinates and the
//! conjugate dynamics as the selected eigenvalues. Each order `d >= 2` is then
//! solved from the homological equation
//!
//! ```text
//! U_j^m · (Πμ^m − μ_j) = S_j^m + H_j^m        (maps)
//! U_j^m · (Σ m_k λ_k − λ_j) = R_j^m + H_j^m   (vector fields)
//! ```
//!
//! where `H` collects everything known from lower orders. For exponents
//! supported on the selection the split between `U` and `S` is a choice.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, IsfError, Result};
use crate::foliation::{Conjugate, Foliation, NormalFormParams, Provenance, Residuals};
use crate::poly::{compose, lie_derivative, linear_change, ComplexPoly, ConjPairing, MultiIndexSet, RealPoly};
use crate::spectral::{Dynamics, SpectralData, DEFAULT_NEAR_RESONANCE};

/// Divisors smaller than this are exact resonances.
pub const RESONANCE_FLOOR: f64 = 1e-12;

/// How internal terms are split between the submersion and the conjugate map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ResonancePolicy {
    /// Keep a term in `S` when its relative margin is at most `tol`.
    NearResonant { tol: f64 },
    /// Put every internal term in `U` (`S` linear) unless exactly resonant.
    AlwaysSubmersion,
    /// Put every internal term in `S`.
    AlwaysConjugate,
}

impl Default for ResonancePolicy {
    fn default() -> Self {
        ResonancePolicy::NearResonant { tol: DEFAULT_NEAR_RESONANCE }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// `U^m = 0`, `S^m = −H^m`.
    Conjugate,
    /// `S^m = 0`, `U^m = H^m / divisor`.
    Submersion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceChoice {
    /// Row of `U` (position within the selection).
    pub j: usize,
    /// Exponent over all `n` eigen-coordinates.
    pub m: Vec<u32>,
    pub margin: f64,
    pub placement: Placement,
}

/// A complex-coordinate expansion before realification.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedFoliation {
    /// `n -> ν` in eigen-coordinates.
    pub u: ComplexPoly,
    /// `ν -> ν` in the selected eigen-coordinates.
    pub s: ComplexPoly,
    pub dynamics: Dynamics,
    pub alpha: usize,
    pub sigma: usize,
    pub spec: SpectralData,
    pub choices: Vec<ResonanceChoice>,
}

/// The model in eigen-coordinates, `ξ -> V⁻¹ F(V ξ)`.
pub fn complexify_model(f: &RealPoly, spec: &SpectralData) -> Result<ComplexPoly> {
    let n = f.domain_dim();
    if f.codomain_dim() != n || spec.n() != n {
        return invalid("model must map R^n to itself and match the spectrum");
    }
    let ft = linear_change(&f.to_complex(), &spec.right, &spec.left, f.alpha())?;
    let partners = spec.partners();
    let ft = ft.with_pairing(ConjPairing { domain: partners.clone(), codomain: partners })?;

    let a = ft.jacobian0();
    let scale = a.norm().max(1.0);
    let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(spec.eigenvalues.clone()));
    let off = (&a - diag).norm();
    if off > 1e-8 * scale {
        return invalid(format!(
            "spectrum does not diagonalize the model's linear part (defect {off:.3e})"
        ));
    }
    Ok(ft)
}

pub fn solve_isf_series_map(
    f: &RealPoly,
    spec: &SpectralData,
    alpha: usize,
    policy: ResonancePolicy,
) -> Result<ExpandedFoliation> {
    if spec.dynamics != Dynamics::Map {
        return invalid("map expansion needs a map spectrum");
    }
    solve(f, spec, alpha, policy)
}

pub fn solve_isf_series_vf(
    g: &RealPoly,
    spec: &SpectralData,
    alpha: usize,
    policy: ResonancePolicy,
) -> Result<ExpandedFoliation> {
    if spec.dynamics != Dynamics::Flow {
        return invalid("vector-field expansion needs a flow spectrum");
    }
    solve(g, spec, alpha, policy)
}

fn solve(model: &RealPoly, spec: &SpectralData, alpha: usize, policy: ResonancePolicy) -> Result<ExpandedFoliation> {
    if alpha == 0 {
        return invalid("expansion order must be at least 1");
    }
    if spec.selection.is_empty() {
        return invalid("expansion needs a non-empty selection");
    }
    let n = spec.n();
    let sel = spec.selection.clone();
    let nu = sel.len();

    let mut ft = complexify_model(model, spec)?.with_alpha(alpha)?;
    for i in 0..n {
        for k in 0..n {
            ft.coeffs_mut()[(i, k)] = if i == k { spec.eigenvalues[i] } else { Complex64::new(0.0, 0.0) };
        }
    }

    let mut u = ComplexPoly::zeros(n, nu, alpha)?;
    let mut s = ComplexPoly::zeros(nu, nu, alpha)?;
    for (j, &k) in sel.iter().enumerate() {
        u.coeffs_mut()[(j, k)] = Complex64::new(1.0, 0.0);
        s.coeffs_mut()[(j, j)] = spec.eigenvalues[k];
    }

    let uset = u.index_set().clone();
    let sset: MultiIndexSet = (**s.index_set()).clone();
    let mut choices = Vec::new();
    let mut inner = vec![0u32; nu];
    for d in 2..=alpha {
        let lhs = match spec.dynamics {
            Dynamics::Map => compose(&u, &ft, d)?,
            Dynamics::Flow => lie_derivative(&u, &ft, d)?,
        };
        let rhs = compose(&s, &u, d)?;
        for i in uset.degree_range(d) {
            let m = uset.get(i);
            let internal = m.iter().enumerate().all(|(k, &e)| e == 0 || sel.contains(&k));
            for j in 0..nu {
                let h = rhs.coeffs()[(j, i)] - lhs.coeffs()[(j, i)];
                let div = spec.divisor(m, sel[j]);
                if internal {
                    let margin = spec.margin(m, sel[j]);
                    let exact = div.norm() < RESONANCE_FLOOR;
                    let placement = match policy {
                        _ if exact => Placement::Conjugate,
                        ResonancePolicy::NearResonant { tol } if margin <= tol => Placement::Conjugate,
                        ResonancePolicy::AlwaysConjugate => Placement::Conjugate,
                        _ => Placement::Submersion,
                    };
                    match placement {
                        Placement::Conjugate => {
                            for (slot, &k) in inner.iter_mut().zip(&sel) {
                                *slot = m[k];
                            }
                            let p = sset.position(&inner).expect("degree within alpha");
                            s.coeffs_mut()[(j, p)] = -h;
                        }
                        Placement::Submersion => u.coeffs_mut()[(j, i)] = h / div,
                    }
                    choices.push(ResonanceChoice { j, m: m.to_vec(), margin, placement });
                } else {
                    if div.norm() < RESONANCE_FLOOR {
                        return Err(IsfError::Resonance { j: sel[j], m: m.to_vec(), divisor: div.norm() });
                    }
                    u.coeffs_mut()[(j, i)] = h / div;
                }
            }
        }
    }

    let partners = spec.partners();
    let sel_partners: Vec<usize> = sel
        .iter()
        .map(|&k| sel.iter().position(|&q| q == partners[k]))
        .collect::<Option<_>>()
        .ok_or_else(|| IsfError::Pairing("selection is not closed under conjugation".into()))?;
    let u = u.with_pairing(ConjPairing { domain: partners, codomain: sel_partners.clone() })?;
    let s = s.with_pairing(ConjPairing { domain: sel_partners.clone(), codomain: sel_partners })?;

    Ok(ExpandedFoliation {
        u,
        s,
        dynamics: spec.dynamics,
        alpha,
        sigma: alpha + 1,
        spec: spec.clone(),
        choices,
    })
}

/// `(T, T⁻¹)` taking selected eigen-coordinates to real ones: a conjugate
/// pair `(z, z̄)` becomes `(Re z, Im z)`.
fn realifier(ef: &ExpandedFoliation) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    let nu = ef.s.domain_dim();
    let pairing = ef
        .s
        .pairing()
        .ok_or_else(|| IsfError::Pairing("expanded conjugate map lacks a pairing".into()))?;
    let half = Complex64::new(0.5, 0.0);
    let ihalf = Complex64::new(0.0, 0.5);
    let one = Complex64::new(1.0, 0.0);
    let i1 = Complex64::new(0.0, 1.0);
    let mut t = DMatrix::zeros(nu, nu);
    let mut ti = DMatrix::zeros(nu, nu);
    for j in 0..nu {
        let p = pairing.domain[j];
        if p == j {
            t[(j, j)] = one;
            ti[(j, j)] = one;
        } else if j < p {
            t[(j, j)] = half;
            t[(j, p)] = half;
            t[(p, j)] = -ihalf;
            t[(p, p)] = ihalf;
            ti[(j, j)] = one;
            ti[(j, p)] = i1;
            ti[(p, j)] = one;
            ti[(p, p)] = -i1;
        }
    }
    Ok((t, ti))
}

/// Real-coordinate foliation consuming raw state vectors.
pub fn realify_foliation(ef: &ExpandedFoliation) -> Result<Foliation> {
    ef.u.pairing_defect()?;
    let (t, ti) = realifier(ef)?;
    let u = linear_change(&ef.u, &ef.spec.left, &t, ef.alpha)?;
    let s = linear_change(&ef.s, &ti, &t, ef.alpha)?;
    let (u, u_im) = u.real_part();
    let (s, s_im) = s.real_part();
    let scale = u.coeffs().amax().max(s.coeffs().amax()).max(1.0);
    if u_im.max(s_im) > 1e-9 * scale {
        return Err(IsfError::Pairing(format!(
            "realified foliation keeps imaginary parts of size {:.3e}",
            u_im.max(s_im)
        )));
    }
    let s = match NormalFormParams::from_poly(&s, 0.0) {
        Some(params) if s.domain_dim() == 2 && s.alpha() % 2 == 1 => Conjugate::NormalForm { params },
        _ => Conjugate::Poly { map: s },
    };
    Ok(Foliation {
        u,
        s,
        sigma: ef.sigma as f64,
        dynamics: ef.dynamics,
        period: ef.spec.period,
        provenance: Provenance::Expanded { alpha: ef.alpha, choices: ef.choices.clone() },
        spectrum: Some(ef.spec.clone()),
        residuals: Residuals::default(),
    })
}
