//! The foliation value shared by the expansion and fitting front-ends.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::expand::ResonanceChoice;
use crate::fit::FitConfig;
use crate::poly::{binomial, compose, lie_derivative, RealPoly};
use crate::spectral::{Dynamics, SpectralData};

/// Radially symmetric conjugate map in real coordinates:
/// `S(z) = (z1 f_r(ρ) − z2 f_i(ρ), z1 f_i(ρ) + z2 f_r(ρ))`, `ρ = z1² + z2²`,
/// with `f_r(ρ) = Σ b_p ρ^p` and `f_i(ρ) = Σ c_p ρ^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalFormParams {
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl NormalFormParams {
    pub fn new(b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        if b.is_empty() || b.len() != c.len() {
            return invalid("normal form needs equally many b and c coefficients, at least one");
        }
        Ok(NormalFormParams { b, c })
    }

    /// Linear normal form `z -> μ z` padded with zeros up to `⌊alpha/2⌋`.
    pub fn from_mu(mu: Complex64, alpha: usize) -> Self {
        let k = alpha / 2;
        let mut b = vec![0.0; k + 1];
        let mut c = vec![0.0; k + 1];
        b[0] = mu.re;
        c[0] = mu.im;
        NormalFormParams { b, c }
    }

    /// Highest radial power `K`.
    pub fn order(&self) -> usize {
        self.b.len() - 1
    }

    pub fn mu(&self) -> Complex64 {
        Complex64::new(self.b[0], self.c[0])
    }

    /// `(f_r(ρ), f_i(ρ))` at `ρ = z1² + z2²`.
    pub fn radial(&self, rho: f64) -> (f64, f64) {
        let mut fr = 0.0;
        let mut fi = 0.0;
        for (b, c) in self.b.iter().zip(&self.c).rev() {
            fr = fr * rho + b;
            fi = fi * rho + c;
        }
        (fr, fi)
    }

    pub fn eval(&self, z: [f64; 2]) -> [f64; 2] {
        let (fr, fi) = self.radial(z[0] * z[0] + z[1] * z[1]);
        [z[0] * fr - z[1] * fi, z[0] * fi + z[1] * fr]
    }

    /// Jacobian of `eval` at `z`.
    pub fn jacobian(&self, z: [f64; 2]) -> [[f64; 2]; 2] {
        let rho = z[0] * z[0] + z[1] * z[1];
        let (fr, fi) = self.radial(rho);
        let mut dfr = 0.0;
        let mut dfi = 0.0;
        for p in (1..self.b.len()).rev() {
            dfr = dfr * rho + p as f64 * self.b[p];
            dfi = dfi * rho + p as f64 * self.c[p];
        }
        let (x, y) = (z[0], z[1]);
        [
            [fr + 2.0 * x * (x * dfr - y * dfi), -fi + 2.0 * y * (x * dfr - y * dfi)],
            [fi + 2.0 * x * (x * dfi + y * dfr), fr + 2.0 * y * (x * dfi + y * dfr)],
        ]
    }

    /// Full polynomial form on the monomial layout
    /// `S_1^{(1+2p, 2(k−p))} = C(k,p) b_k`, `S_1^{(2p, 1+2(k−p))} = −C(k,p) c_k`,
    /// `S_2^{(1+2p, 2(k−p))} = C(k,p) c_k`, `S_2^{(2p, 1+2(k−p))} = C(k,p) b_k`.
    pub fn render(&self) -> RealPoly {
        let k_max = self.order();
        let mut s = RealPoly::zeros(2, 2, 2 * k_max + 1).expect("valid sizes");
        for k in 0..=k_max {
            for p in 0..=k {
                let w = binomial(k, p) as f64;
                let a = [1 + 2 * p as u32, 2 * (k - p) as u32];
                let bm = [2 * p as u32, 1 + 2 * (k - p) as u32];
                s.set_coeff(0, &a, w * self.b[k]).unwrap();
                s.set_coeff(0, &bm, -w * self.c[k]).unwrap();
                s.set_coeff(1, &a, w * self.c[k]).unwrap();
                s.set_coeff(1, &bm, w * self.b[k]).unwrap();
            }
        }
        s
    }

    /// Recovers the parameters when `p` has exactly the radial layout
    /// (coefficientwise within `tol`).
    pub fn from_poly(p: &RealPoly, tol: f64) -> Option<Self> {
        if p.domain_dim() != 2 || p.codomain_dim() != 2 {
            return None;
        }
        let k_max = (p.alpha() - 1) / 2;
        let mut b = Vec::with_capacity(k_max + 1);
        let mut c = Vec::with_capacity(k_max + 1);
        for k in 0..=k_max {
            let m = [1 + 2 * k as u32, 0];
            b.push(p.coeff(0, &m));
            c.push(p.coeff(1, &m));
        }
        let nf = NormalFormParams { b, c };
        let rendered = nf.render().with_alpha(p.alpha()).ok()?;
        let padded = p.with_alpha(rendered.alpha()).ok()?;
        if (rendered.coeffs() - padded.coeffs()).amax() <= tol {
            Some(nf)
        } else {
            None
        }
    }
}

/// Conjugate dynamics on the foliation's parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Conjugate {
    Poly { map: RealPoly },
    NormalForm { params: NormalFormParams },
}

impl Conjugate {
    pub fn eval(&self, z: &[f64]) -> Result<DVector<f64>> {
        match self {
            Conjugate::Poly { map } => map.eval(z),
            Conjugate::NormalForm { params } => {
                if z.len() != 2 {
                    return invalid("normal form acts on two coordinates");
                }
                let w = params.eval([z[0], z[1]]);
                Ok(DVector::from_vec(w.to_vec()))
            }
        }
    }

    pub fn to_poly(&self) -> RealPoly {
        match self {
            Conjugate::Poly { map } => map.clone(),
            Conjugate::NormalForm { params } => params.render(),
        }
    }

    pub fn linear(&self) -> DMatrix<f64> {
        match self {
            Conjugate::Poly { map } => map.jacobian0(),
            Conjugate::NormalForm { params } => {
                DMatrix::from_row_slice(2, 2, &[params.b[0], -params.c[0], params.c[0], params.b[0]])
            }
        }
    }

    /// Normal-form view, if the conjugate map has the radial layout.
    pub fn normal_form(&self, tol: f64) -> Option<NormalFormParams> {
        match self {
            Conjugate::Poly { map } => NormalFormParams::from_poly(map, tol),
            Conjugate::NormalForm { params } => Some(params.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    Expanded {
        alpha: usize,
        choices: Vec<ResonanceChoice>,
    },
    Fitted {
        config: Box<FitConfig>,
        seed: u64,
        iterations: usize,
        loss: f64,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub training: Option<f64>,
    pub testing: Option<f64>,
}

/// An invariant spectral foliation: submersion `U` and conjugate dynamics
/// `S` (map) or `R` (vector field) with `U∘F = S∘U` or `DU·G = R∘U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Foliation {
    pub u: RealPoly,
    pub s: Conjugate,
    pub sigma: f64,
    pub dynamics: Dynamics,
    pub period: Option<f64>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectralData>,
    #[serde(default)]
    pub residuals: Residuals,
}

impl Foliation {
    pub fn n(&self) -> usize {
        self.u.domain_dim()
    }

    pub fn nu(&self) -> usize {
        self.u.codomain_dim()
    }

    pub fn alpha(&self) -> usize {
        self.u.alpha()
    }

    /// `U(y) − S(U(x))`.
    pub fn map_residual(&self, x: &[f64], y: &[f64]) -> Result<DVector<f64>> {
        let ux = self.u.eval(x)?;
        let uy = self.u.eval(y)?;
        Ok(uy - self.s.eval(ux.as_slice())?)
    }

    /// Invariance defect as an untruncated polynomial: `U∘F − S∘U` for maps,
    /// `DU·G − R∘U` for vector fields.
    pub fn invariance_defect(&self, model: &RealPoly) -> Result<RealPoly> {
        let s = self.s.to_poly();
        let (au, am, as_) = (self.u.alpha(), model.alpha(), s.alpha());
        match self.dynamics {
            Dynamics::Map => {
                let top = (au * am).max(as_ * au);
                let lhs = compose(&self.u, model, top)?;
                let rhs = compose(&s, &self.u, top)?;
                lhs.sub(&rhs)
            }
            Dynamics::Flow => {
                let top = (au + am - 1).max(as_ * au);
                let lhs = lie_derivative(&self.u, model, top)?;
                let rhs = compose(&s, &self.u, top)?;
                lhs.sub(&rhs)
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linear_normal_form_is_rotation_scaling() {
        let nf = NormalFormParams::from_mu(Complex64::new(0.6, 0.7), 3);
        assert_eq!(nf.order(), 1);
        let r = nf.render();
        assert_eq!(r.jacobian0(), DMatrix::from_row_slice(2, 2, &[0.6, -0.7, 0.7, 0.6]));
        assert!(r.degree_band(2, 3).coeffs().amax() == 0.0);
    }

    proptest! {
        #[test]
        fn rendering_matches_direct_evaluation(
            b in proptest::collection::vec(-1.0f64..1.0, 3),
            c in proptest::collection::vec(-1.0f64..1.0, 3),
            z0 in -0.5f64..0.5, z1 in -0.5f64..0.5,
        ) {
            let nf = NormalFormParams::new(b, c).unwrap();
            let direct = nf.eval([z0, z1]);
            let poly = nf.render().eval(&[z0, z1]).unwrap();
            prop_assert!((direct[0] - poly[0]).abs() < 1e-14);
            prop_assert!((direct[1] - poly[1]).abs() < 1e-14);
            prop_assert_eq!(NormalFormParams::from_poly(&nf.render(), 1e-15), Some(nf.clone()));
            let jac = nf.render().jacobian_at(&[z0, z1]).unwrap();
            let mine = nf.jacobian([z0, z1]);
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert!((jac[(i, j)] - mine[i][j]).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn non_radial_polynomial_is_not_a_normal_form() {
        let mut p = NormalFormParams::from_mu(Complex64::new(0.5, 0.1), 3).render();
        p.set_coeff(0, &[2, 0], 0.3).unwrap();
        assert!(NormalFormParams::from_poly(&p, 1e-12).is_none());
    }
}
