use std::sync::Arc;

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::multiindex::MultiIndexSet;
use crate::error::{check_dim, invalid, IsfError, Result};

/// Coefficient field of a polynomial map: `f64` or `Complex64`.
pub trait Scalar: ComplexField<RealField = f64> + Copy + Send + Sync {
    const FIELD: Field;
    /// Real and imaginary parts.
    fn parts(self) -> (f64, f64);
    fn from_parts(re: f64, im: f64) -> Result<Self>;
}

impl Scalar for f64 {
    const FIELD: Field = Field::Real;
    fn parts(self) -> (f64, f64) {
        (self, 0.0)
    }
    fn from_parts(re: f64, im: f64) -> Result<Self> {
        if im != 0.0 {
            return invalid("complex coefficient in a real polynomial map");
        }
        Ok(re)
    }
}

impl Scalar for Complex64 {
    const FIELD: Field = Field::Complex;
    fn parts(self) -> (f64, f64) {
        (self.re, self.im)
    }
    fn from_parts(re: f64, im: f64) -> Result<Self> {
        Ok(Complex64::new(re, im))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Real,
    Complex,
}

/// Conjugation structure of complexified coordinates: `domain[k]` is the
/// coordinate holding the complex conjugate of coordinate `k` (itself for
/// real coordinates); likewise for the codomain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConjPairing {
    pub domain: Vec<usize>,
    pub codomain: Vec<usize>,
}

impl ConjPairing {
    pub fn validate(&self, n: usize, out: usize) -> Result<()> {
        for (partners, dim, what) in [(&self.domain, n, "domain"), (&self.codomain, out, "codomain")] {
            if partners.len() != dim {
                return Err(IsfError::Pairing(format!("{what} pairing has wrong length")));
            }
            for (k, &p) in partners.iter().enumerate() {
                if p >= dim || partners[p] != k {
                    return Err(IsfError::Pairing(format!("{what} pairing is not an involution at {k}")));
                }
            }
        }
        Ok(())
    }
}

/// Dense polynomial map without constant term.
///
/// Coefficients are stored column-per-monomial: `coeffs[(j, i)]` multiplies
/// the `i`-th monomial of the index set in output component `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMap<T: Scalar> {
    set: Arc<MultiIndexSet>,
    coeffs: DMatrix<T>,
    pairing: Option<ConjPairing>,
}

pub type RealPoly = PolyMap<f64>;
pub type ComplexPoly = PolyMap<Complex64>;

impl<T: Scalar> PolyMap<T> {
    pub fn zeros(n: usize, out: usize, alpha: usize) -> Result<Self> {
        let set = Arc::new(MultiIndexSet::new(n, alpha)?);
        Ok(Self::zeros_on(set, out))
    }

    pub fn zeros_on(set: Arc<MultiIndexSet>, out: usize) -> Self {
        let len = set.len();
        PolyMap {
            set,
            coeffs: DMatrix::zeros(out, len),
            pairing: None,
        }
    }

    pub fn from_coeffs(set: Arc<MultiIndexSet>, coeffs: DMatrix<T>) -> Result<Self> {
        check_dim(set.len(), coeffs.ncols())?;
        Ok(PolyMap {
            set,
            coeffs,
            pairing: None,
        })
    }

    /// The linear map `x -> a x` embedded in degree `alpha`.
    pub fn linear(a: &DMatrix<T>, alpha: usize) -> Result<Self> {
        let mut p = Self::zeros(a.ncols(), a.nrows(), alpha)?;
        p.coeffs.columns_mut(0, a.ncols()).copy_from(a);
        Ok(p)
    }

    pub fn identity(n: usize, alpha: usize) -> Result<Self> {
        Self::linear(&DMatrix::identity(n, n), alpha)
    }

    pub fn domain_dim(&self) -> usize {
        self.set.n()
    }

    pub fn codomain_dim(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn alpha(&self) -> usize {
        self.set.alpha()
    }

    pub fn index_set(&self) -> &Arc<MultiIndexSet> {
        &self.set
    }

    pub fn coeffs(&self) -> &DMatrix<T> {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut DMatrix<T> {
        &mut self.coeffs
    }

    pub fn pairing(&self) -> Option<&ConjPairing> {
        self.pairing.as_ref()
    }

    pub fn with_pairing(mut self, pairing: ConjPairing) -> Result<Self> {
        pairing.validate(self.domain_dim(), self.codomain_dim())?;
        self.pairing = Some(pairing);
        Ok(self)
    }

    pub fn clear_pairing(&mut self) {
        self.pairing = None;
    }

    /// Coefficient of monomial `m` in component `j`; zero if `m` is outside
    /// the index set.
    pub fn coeff(&self, j: usize, m: &[u32]) -> T {
        match self.set.position(m) {
            Some(i) => self.coeffs[(j, i)],
            None => T::zero(),
        }
    }

    pub fn set_coeff(&mut self, j: usize, m: &[u32], value: T) -> Result<()> {
        let i = self
            .set
            .position(m)
            .ok_or_else(|| IsfError::InvalidArgument(format!("exponent {m:?} is not in the index set")))?;
        self.coeffs[(j, i)] = value;
        Ok(())
    }

    /// Values of every monomial of the index set at `x`, written to `buf`.
    pub fn monomials_into(set: &MultiIndexSet, x: &[T], buf: &mut [T]) {
        for i in 0..set.len() {
            buf[i] = match set.parent(i) {
                None => x[set.first_var(i)],
                Some((p, v)) => buf[p] * x[v],
            };
        }
    }

    pub fn eval(&self, x: &[T]) -> Result<DVector<T>> {
        check_dim(self.domain_dim(), x.len())?;
        let mut buf = vec![T::zero(); self.set.len()];
        Ok(self.eval_with(x, &mut buf))
    }

    /// Evaluation reusing a caller-owned monomial buffer of length `set.len()`.
    pub fn eval_with(&self, x: &[T], buf: &mut [T]) -> DVector<T> {
        Self::monomials_into(&self.set, x, buf);
        let mono = DVector::from_column_slice(buf);
        &self.coeffs * mono
    }

    /// Jacobian matrix at an arbitrary point.
    pub fn jacobian_at(&self, x: &[T]) -> Result<DMatrix<T>> {
        let n = self.domain_dim();
        check_dim(n, x.len())?;
        let len = self.set.len();
        let mut mono = vec![T::zero(); len];
        // dmono[i * n + k] = d(monomial i)/dx_k
        let mut dmono = vec![T::zero(); len * n];
        for i in 0..len {
            match self.set.parent(i) {
                None => {
                    let v = self.set.first_var(i);
                    mono[i] = x[v];
                    dmono[i * n + v] = T::one();
                }
                Some((p, v)) => {
                    mono[i] = mono[p] * x[v];
                    for k in 0..n {
                        dmono[i * n + k] = dmono[p * n + k] * x[v];
                    }
                    dmono[i * n + v] += mono[p];
                }
            }
        }
        let dm = DMatrix::from_row_slice(len, n, &dmono);
        Ok(&self.coeffs * dm)
    }

    /// Jacobian at the origin: the matrix of degree-one coefficients.
    pub fn jacobian0(&self) -> DMatrix<T> {
        self.coeffs.columns(0, self.domain_dim()).into_owned()
    }

    /// Same map re-expressed on an index set of different maximal degree.
    /// Terms above the new degree are dropped.
    pub fn with_alpha(&self, alpha: usize) -> Result<Self> {
        if alpha == self.alpha() {
            return Ok(self.clone());
        }
        let mut out = Self::zeros(self.domain_dim(), self.codomain_dim(), alpha)?;
        let keep = self.set.len().min(out.set.len());
        out.coeffs
            .columns_mut(0, keep)
            .copy_from(&self.coeffs.columns(0, keep));
        out.pairing = self.pairing.clone();
        Ok(out)
    }

    /// Only the terms of degree in `lo..=hi`.
    pub fn degree_band(&self, lo: usize, hi: usize) -> Self {
        let mut out = self.clone();
        for i in 0..self.set.len() {
            let d = self.set.degree(i);
            if d < lo || d > hi {
                out.coeffs.column_mut(i).fill(T::zero());
            }
        }
        out
    }

    /// The part of degree two and higher.
    pub fn nonlinear_part(&self) -> Self {
        self.degree_band(2, self.alpha())
    }

    pub fn linear_part(&self) -> Self {
        self.degree_band(1, 1)
    }

    pub fn scaled(&self, s: T) -> Self {
        let mut out = self.clone();
        out.coeffs *= s;
        out
    }

    /// Rows `rows` of the map.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let coeffs = DMatrix::from_fn(rows.len(), self.set.len(), |r, c| self.coeffs[(rows[r], c)]);
        PolyMap {
            set: self.set.clone(),
            coeffs,
            pairing: None,
        }
    }

    /// Sum of two maps with equal domain and codomain; the result lives on
    /// the larger index set.
    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dim(self.domain_dim(), other.domain_dim())?;
        check_dim(self.codomain_dim(), other.codomain_dim())?;
        let (big, small) = if self.alpha() >= other.alpha() { (self, other) } else { (other, self) };
        let mut out = big.clone();
        let k = small.set.len();
        let mut cols = out.coeffs.columns_mut(0, k);
        cols += small.coeffs.columns(0, k);
        out.pairing = None;
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scaled(-T::one()))
    }

    /// Stack several maps with a common domain into one.
    pub fn vstack(parts: &[&Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| IsfError::InvalidArgument("nothing to stack".into()))?;
        let alpha = parts.iter().map(|p| p.alpha()).max().unwrap_or(1);
        let n = first.domain_dim();
        let total: usize = parts.iter().map(|p| p.codomain_dim()).sum();
        let mut out = Self::zeros(n, total, alpha)?;
        let mut row = 0;
        for p in parts {
            check_dim(n, p.domain_dim())?;
            let k = p.set.len();
            out.coeffs
                .view_mut((row, 0), (p.codomain_dim(), k))
                .copy_from(&p.coeffs);
            row += p.codomain_dim();
        }
        Ok(out)
    }

    /// Largest coefficient magnitude among terms of degree two and higher.
    pub fn nonlinear_max_abs(&self) -> f64 {
        let start = self.domain_dim().min(self.set.len());
        self.coeffs
            .columns(start, self.set.len() - start)
            .iter()
            .map(|c| c.modulus())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| {
            let (re, im) = c.parts();
            re.is_finite() && im.is_finite()
        })
    }
}

impl PolyMap<f64> {
    pub fn to_complex(&self) -> PolyMap<Complex64> {
        PolyMap {
            set: self.set.clone(),
            coeffs: self.coeffs.map(|c| Complex64::new(c, 0.0)),
            pairing: None,
        }
    }

    /// Least-squares fit of a map on the index set `(n, alpha)` to the
    /// samples `values[i] = P(points[i])`.
    pub fn fit_least_squares(
        n: usize,
        alpha: usize,
        points: &[DVector<f64>],
        values: &[DVector<f64>],
    ) -> Result<Self> {
        let set = Arc::new(MultiIndexSet::new(n, alpha)?);
        let out = values
            .first()
            .map(|v| v.len())
            .ok_or_else(|| IsfError::RankDeficient("no samples".into()))?;
        check_dim(points.len(), values.len())?;
        if points.len() < set.len() {
            return Err(IsfError::RankDeficient(format!(
                "{} samples for {} unknowns per component",
                points.len(),
                set.len()
            )));
        }
        let mut design = DMatrix::zeros(points.len(), set.len());
        let mut buf = vec![0.0; set.len()];
        for (r, x) in points.iter().enumerate() {
            check_dim(n, x.len())?;
            Self::monomials_into(&set, x.as_slice(), &mut buf);
            design.row_mut(r).copy_from_slice(&buf);
        }
        let rhs = DMatrix::from_fn(values.len(), out, |r, c| values[r][c]);
        let svd = design.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smax == 0.0 || smin <= smax * 1e-13 {
            return Err(IsfError::RankDeficient(format!(
                "design matrix singular values span {smin:.3e}..{smax:.3e}"
            )));
        }
        let sol = svd
            .solve(&rhs, 0.0)
            .map_err(|e| IsfError::RankDeficient(e.to_string()))?;
        Self::from_coeffs(set, sol.transpose())
    }
}

impl PolyMap<Complex64> {
    /// Real part of every coefficient together with the largest discarded
    /// imaginary part.
    pub fn real_part(&self) -> (PolyMap<f64>, f64) {
        let max_im = self.coeffs.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
        (
            PolyMap {
                set: self.set.clone(),
                coeffs: self.coeffs.map(|c| c.re),
                pairing: None,
            },
            max_im,
        )
    }

    /// Largest violation of the conjugation symmetry implied by the pairing
    /// annotation: `P_{pair(j)}^{pair(m)} = conj(P_j^m)`.
    pub fn pairing_defect(&self) -> Result<f64> {
        let pairing = self
            .pairing
            .as_ref()
            .ok_or_else(|| IsfError::Pairing("map carries no pairing annotation".into()))?;
        let n = self.domain_dim();
        let mut swapped = vec![0u32; n];
        let mut worst: f64 = 0.0;
        for (i, m) in self.set.iter().enumerate() {
            for (k, &p) in pairing.domain.iter().enumerate() {
                swapped[p] = m[k];
            }
            let i2 = self.set.position(&swapped).expect("permuted index stays in the set");
            for j in 0..self.codomain_dim() {
                let jp = pairing.codomain[j];
                let d = self.coeffs[(jp, i2)] - self.coeffs[(j, i)].conj();
                worst = worst.max(d.norm());
            }
        }
        Ok(worst)
    }
}
