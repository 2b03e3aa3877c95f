//! Truncated arithmetic on polynomial maps: products, composition, linear
//! changes of coordinates and Lie derivatives.

use std::sync::Arc;

use nalgebra::DMatrix;

use super::map::{PolyMap, Scalar};
use super::multiindex::MultiIndexSet;
use crate::error::{check_dim, IsfError, Result};

/// Product of two scalar series over the same index set, truncated to the
/// set's maximal degree.
pub fn mul_truncated<T: Scalar>(set: &MultiIndexSet, a: &[T], b: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); set.len()];
    let mut scratch = vec![0u32; set.n()];
    let alpha = set.alpha();
    for (i, &ai) in a.iter().enumerate() {
        if ai == T::zero() {
            continue;
        }
        let di = set.degree(i);
        if di >= alpha {
            break;
        }
        let limit = set.count_up_to(alpha - di);
        for (j, &bj) in b.iter().enumerate().take(limit) {
            if bj == T::zero() {
                continue;
            }
            if let Some(pos) = set.sum_position(i, j, &mut scratch) {
                out[pos] += ai * bj;
            }
        }
    }
    out
}

/// `outer ∘ inner`, truncated to total degree `alpha`.
pub fn compose<T: Scalar>(outer: &PolyMap<T>, inner: &PolyMap<T>, alpha: usize) -> Result<PolyMap<T>> {
    check_dim(outer.domain_dim(), inner.codomain_dim())?;
    let inner = inner.with_alpha(alpha)?;
    let target = inner.index_set().clone();
    let oset = outer.index_set();

    // powers[i] = inner^(m_i) for every outer monomial of degree <= alpha
    let usable = oset.count_up_to(alpha);
    let mut powers: Vec<Vec<T>> = Vec::with_capacity(usable);
    for i in 0..usable {
        let row = match oset.parent(i) {
            None => inner.coeffs().row(oset.first_var(i)).iter().copied().collect(),
            Some((p, v)) => {
                let comp: Vec<T> = inner.coeffs().row(v).iter().copied().collect();
                mul_truncated(&target, &powers[p], &comp)
            }
        };
        powers.push(row);
    }
    let pow = DMatrix::from_fn(usable, target.len(), |r, c| powers[r][c]);
    let coeffs = outer.coeffs().columns(0, usable) * pow;
    PolyMap::from_coeffs(target, coeffs)
}

/// `x -> t_out · P(t_in · x)`, truncated to degree `alpha`.
pub fn linear_change<T: Scalar>(
    p: &PolyMap<T>,
    t_in: &DMatrix<T>,
    t_out: &DMatrix<T>,
    alpha: usize,
) -> Result<PolyMap<T>> {
    if !t_in.is_square() {
        return Err(IsfError::InvalidArgument("input transformation must be square".into()));
    }
    check_dim(p.domain_dim(), t_in.nrows())?;
    check_dim(p.codomain_dim(), t_out.ncols())?;
    let sv = t_in.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if smax == 0.0 || smin <= smax * 1e-14 {
        return Err(IsfError::Singular(format!(
            "input transformation has singular values {smin:.3e}..{smax:.3e}"
        )));
    }
    let inner = PolyMap::linear(t_in, alpha)?;
    let composed = compose(p, &inner, alpha)?;
    let coeffs = t_out * composed.coeffs();
    PolyMap::from_coeffs(composed.index_set().clone(), coeffs)
}

/// `DU(x)·G(x)`, truncated to degree `alpha`.
pub fn lie_derivative<T: Scalar>(u: &PolyMap<T>, g: &PolyMap<T>, alpha: usize) -> Result<PolyMap<T>> {
    let n = u.domain_dim();
    check_dim(n, g.domain_dim())?;
    check_dim(n, g.codomain_dim())?;
    let target = Arc::new(MultiIndexSet::new(n, alpha)?);
    let mut out = PolyMap::zeros_on(target.clone(), u.codomain_dim());
    let uset = u.index_set();
    let gset = g.index_set();
    let mut shifted = vec![0u32; n];
    let mut sum = vec![0u32; n];
    for (i, m) in uset.iter().enumerate() {
        let d = uset.degree(i);
        if d > alpha {
            break;
        }
        let col = u.coeffs().column(i);
        if col.iter().all(|c| *c == T::zero()) {
            continue;
        }
        for k in 0..n {
            if m[k] == 0 {
                continue;
            }
            shifted.copy_from_slice(m);
            shifted[k] -= 1;
            let mk = T::from_real(m[k] as f64);
            let room = alpha + 1 - d;
            let limit = gset.count_up_to(room);
            for a in 0..limit {
                let gk = g.coeffs()[(k, a)];
                if gk == T::zero() {
                    continue;
                }
                for ((s, x), y) in sum.iter_mut().zip(&shifted).zip(gset.get(a)) {
                    *s = x + y;
                }
                let pos = target.position(&sum).expect("degree bounded by alpha");
                for j in 0..u.codomain_dim() {
                    let c = col[j];
                    if c != T::zero() {
                        out.coeffs_mut()[(j, pos)] += c * mk * gk;
                    }
                }
            }
        }
    }
    Ok(out)
}
