//! Reconstruction from several foliations, SSM immersions and explicit leaf
//! charts.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{format_f64, norm};
use crate::error::{check_dim, invalid, IsfError, Result};
use crate::foliation::Foliation;
use crate::poly::{compose, RealPoly};

/// Newton iterations before a point is declared missing.
pub const NEWTON_MAX_ITER: usize = 50;
pub const NEWTON_TOL: f64 = 1e-12;

fn premul(m: &DMatrix<f64>, p: &RealPoly) -> Result<RealPoly> {
    check_dim(p.codomain_dim(), m.ncols())?;
    RealPoly::from_coeffs(p.index_set().clone(), m * p.coeffs())
}

fn condition(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let smin = sv.min();
    if smin == 0.0 {
        f64::INFINITY
    } else {
        sv.max() / smin
    }
}

/// Solves `P(x) = target` by Newton's method from `start`.
fn newton(p: &RealPoly, target: &[f64], start: DVector<f64>) -> Option<DVector<f64>> {
    let mut x = start;
    let goal = DVector::from_column_slice(target);
    for _ in 0..NEWTON_MAX_ITER {
        let r = p.eval(x.as_slice()).ok()? - &goal;
        if !r.iter().all(|v| v.is_finite()) {
            return None;
        }
        if r.norm() <= NEWTON_TOL {
            return Some(x);
        }
        let j = p.jacobian_at(x.as_slice()).ok()?;
        let dx = j.lu().solve(&r)?;
        x -= dx;
    }
    let r = p.eval(x.as_slice()).ok()? - &goal;
    (r.norm() <= NEWTON_TOL).then_some(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionMode {
    /// Truncated fixed-point iteration for a polynomial inverse.
    #[default]
    Iterative,
    /// Pointwise Newton solve of `Û(x) = z`.
    Newton,
}

/// Several foliations whose selections jointly span the state space, with
/// the composite submersion `Û` and its truncated inverse `h`.
#[derive(Debug, Clone)]
pub struct FoliationAtlas {
    pub foliations: Vec<Foliation>,
    pub u_hat: RealPoly,
    pub c: DMatrix<f64>,
    pub c_inv: DMatrix<f64>,
    pub condition: f64,
    pub h: RealPoly,
    /// Iterations of the fixed-point construction of `h` that changed it.
    pub h_iterations: usize,
    offsets: Vec<usize>,
}

fn same_spectrum(a: &crate::spectral::SpectralData, b: &crate::spectral::SpectralData) -> bool {
    a.n() == b.n()
        && a
            .eigenvalues
            .iter()
            .zip(&b.eigenvalues)
            .all(|(x, y)| (x - y).norm() <= 1e-8 * (1.0 + x.norm()))
}

/// Stacks the submersions and inverts the stack.
pub fn composite_submersion(fols: Vec<Foliation>) -> Result<FoliationAtlas> {
    composite_submersion_with(fols, None)
}

/// As [`composite_submersion`] with an explicit truncation order for `h`.
pub fn composite_submersion_with(fols: Vec<Foliation>, alpha: Option<usize>) -> Result<FoliationAtlas> {
    let first = fols.first().ok_or_else(|| IsfError::InvalidArgument("no foliations given".into()))?;
    let n = first.n();
    let mut offsets = Vec::with_capacity(fols.len());
    let mut rows = 0;
    for f in &fols {
        check_dim(n, f.n())?;
        offsets.push(rows);
        rows += f.nu();
    }
    check_dim(n, rows)?;
    for (i, a) in fols.iter().enumerate() {
        for b in &fols[i + 1..] {
            if let (Some(sa), Some(sb)) = (&a.spectrum, &b.spectrum) {
                if same_spectrum(sa, sb) && sa.selection.iter().any(|s| sb.selection.contains(s)) {
                    return invalid("foliations have overlapping spectral selections");
                }
            }
        }
    }
    let parts: Vec<&RealPoly> = fols.iter().map(|f| &f.u).collect();
    let u_hat = RealPoly::vstack(&parts)?;
    let c = u_hat.jacobian0();
    let cond = condition(&c);
    if !(cond < 1e14) {
        return Err(IsfError::Singular(format!("composite linear part has condition number {cond:.3e}")));
    }
    let c_inv = c.clone().try_inverse().ok_or_else(|| IsfError::Singular("composite linear part".into()))?;
    let alpha = alpha.unwrap_or(u_hat.alpha());
    let (h, h_iterations) = invert_polynomial(&u_hat, &c_inv, alpha)?;
    Ok(FoliationAtlas { foliations: fols, u_hat, c, c_inv, condition: cond, h, h_iterations, offsets })
}

/// `h_{l+1} = C⁻¹z − C⁻¹Û_N(h_l)`, `h_0 = 0`, truncated at `alpha`, run until
/// stationary.
fn invert_polynomial(u_hat: &RealPoly, c_inv: &DMatrix<f64>, alpha: usize) -> Result<(RealPoly, usize)> {
    let n = u_hat.domain_dim();
    let lin = RealPoly::linear(c_inv, alpha)?;
    let un = u_hat.nonlinear_part();
    let mut h = RealPoly::zeros(n, n, alpha)?;
    for l in 1..=alpha + 1 {
        let next = lin.sub(&premul(c_inv, &compose(&un, &h, alpha)?)?)?;
        let change = (next.coeffs() - h.coeffs()).amax();
        h = next;
        if l > 1 && change <= 1e-14 * h.coeffs().amax() {
            return Ok((h, l - 1));
        }
    }
    Ok((h, alpha + 1))
}

impl FoliationAtlas {
    pub fn n(&self) -> usize {
        self.u_hat.domain_dim()
    }

    /// Row range of foliation `j` inside `Û`.
    pub fn block(&self, j: usize) -> std::ops::Range<usize> {
        let start = self.offsets[j];
        start..start + self.foliations[j].nu()
    }

    /// Pointwise inverse: `h(z)` or a Newton solve of `Û(x) = z`.
    pub fn invert(&self, z: &[f64], mode: InversionMode) -> Result<Option<DVector<f64>>> {
        check_dim(self.n(), z.len())?;
        let guess = self.h.eval(z)?;
        Ok(match mode {
            InversionMode::Iterative => Some(guess),
            InversionMode::Newton => newton(&self.u_hat, z, guess),
        })
    }
}

/// Polynomial inverse (iterative) or a single point (Newton).
pub fn invert_submersion(atlas: &FoliationAtlas, mode: InversionMode, z: &[f64]) -> Result<Option<DVector<f64>>> {
    atlas.invert(z, mode)
}

/// `W^j(z_j) = h(0, …, z_j, …, 0)`.
pub fn ssm_immersion(atlas: &FoliationAtlas, j: usize) -> Result<RealPoly> {
    if j >= atlas.foliations.len() {
        return invalid(format!("foliation index {j} out of range"));
    }
    let block = atlas.block(j);
    let n = atlas.n();
    let e = DMatrix::from_fn(n, block.len(), |r, c| if r == block.start + c { 1.0 } else { 0.0 });
    let embed = RealPoly::linear(&e, atlas.h.alpha())?;
    compose(&atlas.h, &embed, atlas.h.alpha())
}

/// Frames with `DU(0)·V⊥ = 0`, `DU(0)·V∥ = I`, `V⊥ᵀV∥ = 0`, `V⊥ᵀV⊥ = I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafFrames {
    pub v_perp: DMatrix<f64>,
    pub v_par: DMatrix<f64>,
}

impl LeafFrames {
    /// Largest violation of the four frame constraints.
    pub fn constraint_residual(&self, du0: &DMatrix<f64>) -> f64 {
        let nu = du0.nrows();
        let checks = [
            (du0 * &self.v_perp).amax(),
            (du0 * &self.v_par - DMatrix::identity(nu, nu)).amax(),
            (self.v_perp.transpose() * &self.v_par).amax(),
            (self.v_perp.transpose() * &self.v_perp - DMatrix::identity(self.v_perp.ncols(), self.v_perp.ncols())).amax(),
        ];
        checks.into_iter().fold(0.0, f64::max)
    }
}

/// Frames from the SVD of `DU(0)`.
pub fn leaf_frames(u: &RealPoly) -> Result<LeafFrames> {
    let d = u.jacobian0();
    let (nu, n) = (d.nrows(), d.ncols());
    if nu >= n {
        return invalid("leaf frames need a submersion onto a lower dimension");
    }
    // pad to square for a full right singular basis
    let mut padded = DMatrix::zeros(n, n);
    padded.rows_mut(0, nu).copy_from(&d);
    let svd = padded.svd(true, true);
    let (uu, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let smax = svd.singular_values[order[0]];
    let smin = svd.singular_values[order[nu - 1]];
    if !(smin > 1e-12 * smax) {
        return Err(IsfError::RankDeficient(format!(
            "DU(0) has singular values down to {smin:.3e} against {smax:.3e}"
        )));
    }
    let v = vt.transpose();
    let v_par_t = DMatrix::from_fn(n, nu, |r, c| v[(r, order[c])]);
    let mut v_perp = DMatrix::from_fn(n, n - nu, |r, c| v[(r, order[nu + c])]);
    // D Ṽ∥ = Υ∥ Σ
    let ups_sigma = DMatrix::from_fn(nu, nu, |r, c| uu[(r, order[c])] * svd.singular_values[order[c]]);
    let inv = ups_sigma.try_inverse().ok_or_else(|| IsfError::Singular("Υ∥Σ".into()))?;
    let v_par = v_par_t * inv;
    for mut col in v_perp.column_iter_mut() {
        let lead = col.iter().copied().fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a });
        if lead < 0.0 {
            col.neg_mut();
        }
    }
    Ok(LeafFrames { v_perp, v_par })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartMethod {
    #[default]
    PolyIteration,
    PointwiseNewton,
}

/// Explicit leaf immersion `W_z(y) = V⊥ y + V∥ g(z, y)`.
#[derive(Debug, Clone)]
pub struct LeafChart {
    pub frames: LeafFrames,
    pub u: RealPoly,
    pub method: ChartMethod,
    /// Polynomial `g(z, y)` for the iterative method.
    pub g: Option<RealPoly>,
    /// Iterations of the polynomial construction that changed `g`.
    pub iterations: usize,
}

/// Builds a leaf chart for the submersion `u`.
pub fn leaf_chart(u: &RealPoly, frames: &LeafFrames, method: ChartMethod) -> Result<LeafChart> {
    let (nu, n) = (u.codomain_dim(), u.domain_dim());
    check_dim(n, frames.v_perp.nrows())?;
    check_dim(nu, frames.v_par.ncols())?;
    let mut chart = LeafChart { frames: frames.clone(), u: u.clone(), method, g: None, iterations: 0 };
    if method == ChartMethod::PointwiseNewton {
        return Ok(chart);
    }
    let alpha = u.alpha();
    // variables (z, y): z first
    let pz = DMatrix::from_fn(nu, n, |r, c| if r == c { 1.0 } else { 0.0 });
    let z = RealPoly::linear(&pz, alpha)?;
    let mut lin = DMatrix::zeros(n, n);
    lin.columns_mut(nu, n - nu).copy_from(&frames.v_perp);
    let y_part = RealPoly::linear(&lin, alpha)?;
    let un = u.nonlinear_part();
    let mut g = z.clone();
    let mut iterations = 0;
    for l in 1..=alpha + 1 {
        let w = y_part.add(&premul(&frames.v_par, &g)?)?;
        let next = z.sub(&compose(&un, &w, alpha)?)?;
        let change = (next.coeffs() - g.coeffs()).amax();
        g = next;
        if change <= 1e-14 * g.coeffs().amax().max(1.0) {
            break;
        }
        iterations = l;
    }
    chart.g = Some(g);
    chart.iterations = iterations;
    Ok(chart)
}

impl LeafChart {
    pub fn nu(&self) -> usize {
        self.u.codomain_dim()
    }

    /// `g(z, y)`, or `None` where the pointwise solve failed.
    pub fn g_at(&self, z: &[f64], y: &[f64]) -> Result<Option<DVector<f64>>> {
        check_dim(self.nu(), z.len())?;
        check_dim(self.frames.v_perp.ncols(), y.len())?;
        if let Some(g) = &self.g {
            let mut arg = z.to_vec();
            arg.extend_from_slice(y);
            return Ok(Some(g.eval(&arg)?));
        }
        let base = &self.frames.v_perp * DVector::from_column_slice(y);
        let mut gv = DVector::from_column_slice(z);
        let goal = DVector::from_column_slice(z);
        for _ in 0..NEWTON_MAX_ITER {
            let w = &base + &self.frames.v_par * &gv;
            let r = self.u.eval(w.as_slice())? - &goal;
            if !r.iter().all(|v| v.is_finite()) {
                return Ok(None);
            }
            if r.norm() <= NEWTON_TOL {
                return Ok(Some(gv));
            }
            let j = self.u.jacobian_at(w.as_slice())? * &self.frames.v_par;
            match j.lu().solve(&r) {
                Some(dg) => gv -= dg,
                None => return Ok(None),
            }
        }
        Ok(None)
    }
}

/// `W_z(y)`; `None` marks a failed pointwise solve.
pub fn leaf_eval(chart: &LeafChart, z: &[f64], y: &[f64]) -> Result<Option<DVector<f64>>> {
    Ok(chart
        .g_at(z, y)?
        .map(|g| &chart.frames.v_perp * DVector::from_column_slice(y) + &chart.frames.v_par * g))
}

/// Largest principal angle between the column spans of `a` and `b`.
pub fn subspace_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    check_dim(a.nrows(), b.nrows())?;
    let qa = orthonormal_basis(a)?;
    let qb = orthonormal_basis(b)?;
    let (small, big) = if qa.ncols() <= qb.ncols() { (qa, qb) } else { (qb, qa) };
    let resid = &small - &big * (big.transpose() * &small);
    let s = resid.singular_values().max().min(1.0);
    Ok(s.asin())
}

fn orthonormal_basis(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() == 0 || a.ncols() > a.nrows() {
        return invalid("subspace basis must have between 1 and n columns");
    }
    let svd = a.clone().svd(true, false);
    let sv = &svd.singular_values;
    if !(sv.min() > 1e-12 * sv.max()) {
        return Err(IsfError::RankDeficient("subspace basis is rank deficient".into()));
    }
    Ok(svd.u.expect("requested").columns(0, a.ncols()).into_owned())
}

/// One row of a point cloud: parameters, the state (if it was found).
#[derive(Debug, Clone, PartialEq)]
pub struct CloudPoint {
    pub params: Vec<f64>,
    pub state: Option<Vec<f64>>,
}

/// Leaf samples `W_z(y)` over all pairs of the given `z` and `y` values.
pub fn leaf_point_cloud(chart: &LeafChart, zs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<Vec<CloudPoint>> {
    let jobs: Vec<(&Vec<f64>, &Vec<f64>)> = zs.iter().flat_map(|z| ys.iter().map(move |y| (z, y))).collect();
    jobs.par_iter()
        .map(|(z, y)| {
            let state = leaf_eval(chart, z, y)?.map(|w| w.as_slice().to_vec());
            let mut params = z.to_vec();
            params.extend_from_slice(y);
            Ok(CloudPoint { params, state })
        })
        .collect()
}

/// Samples of an immersion `W(z)` at the given parameters.
pub fn immersion_point_cloud(w: &RealPoly, zs: &[Vec<f64>]) -> Result<Vec<CloudPoint>> {
    zs.iter()
        .map(|z| Ok(CloudPoint { params: z.clone(), state: Some(w.eval(z)?.as_slice().to_vec()) }))
        .collect()
}

/// CSV with columns `p1..pk, x1..xn, converged`; missing states are `NaN`.
pub fn write_point_cloud<W: Write>(w: W, n: usize, points: &[CloudPoint]) -> Result<()> {
    let k = points.first().map_or(0, |p| p.params.len());
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (1..=k).map(|i| format!("p{i}")).collect();
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.push("converged".into());
    out.write_record(&header).map_err(csv_err)?;
    for p in points {
        let mut row: Vec<String> = p.params.iter().map(|v| format_f64(*v)).collect();
        match &p.state {
            Some(x) => {
                check_dim(n, x.len())?;
                row.extend(x.iter().map(|v| format_f64(*v)));
                row.push("1".into());
            }
            None => {
                row.extend(std::iter::repeat_n("NaN".to_string(), n));
                row.push("0".into());
            }
        }
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> IsfError {
    IsfError::Io(std::io::Error::other(e.to_string()))
}

/// `|Û(h(Û(x))) − Û(x)| / |x|` at a point.
pub fn reconstruction_defect(atlas: &FoliationAtlas, x: &[f64]) -> Result<f64> {
    let z = atlas.u_hat.eval(x)?;
    let back = atlas.h.eval(z.as_slice())?;
    let again = atlas.u_hat.eval(back.as_slice())?;
    Ok((again - z).norm() / norm(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::foliation::{Conjugate, Provenance, Residuals};
    use crate::spectral::Dynamics;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fol(u: RealPoly) -> Foliation {
        let nu = u.codomain_dim();
        Foliation {
            u,
            s: Conjugate::Poly { map: RealPoly::identity(nu, 1).unwrap() },
            sigma: 2.0,
            dynamics: Dynamics::Map,
            period: None,
            provenance: Provenance::Expanded { alpha: 1, choices: vec![] },
            spectrum: None,
            residuals: Residuals::default(),
        }
    }

    fn rows(m: &[f64], r: usize, c: usize, alpha: usize) -> RealPoly {
        RealPoly::linear(&DMatrix::from_row_slice(r, c, m), alpha).unwrap()
    }

    #[test]
    fn linear_stack_to_identity() {
        let a = fol(rows(&[1., 0., 0., 0., 0., 1., 0., 0.], 2, 4, 3));
        let b = fol(rows(&[0., 0., 1., 0., 0., 0., 0., 1.], 2, 4, 3));
        let atlas = composite_submersion(vec![a, b]).unwrap();
        assert_eq!(atlas.c, DMatrix::identity(4, 4));
        assert_eq!(atlas.h.jacobian0(), DMatrix::identity(4, 4));
        assert_eq!(atlas.h.nonlinear_max_abs(), 0.0);
        let w = ssm_immersion(&atlas, 1).unwrap();
        assert_eq!(w.jacobian0(), DMatrix::identity(4, 4).columns(2, 2).into_owned());
        assert_eq!(w.eval(&[0.0, 0.0]).unwrap().norm(), 0.0);
    }

    #[test]
    fn linear_inverse_is_one_step() {
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]);
        let atlas = composite_submersion(vec![fol(RealPoly::linear(&c, 1).unwrap())]).unwrap();
        assert_eq!(atlas.h_iterations, 1);
        let expect = c.try_inverse().unwrap();
        assert!((atlas.h.jacobian0() - expect).amax() < 1e-15);
    }

    #[test]
    fn too_many_rows_is_a_dimension_error() {
        let u = || fol(rows(&[1., 0., 0., 0., 0., 1., 0., 0.], 2, 4, 1));
        assert!(matches!(
            composite_submersion(vec![u(), u(), u()]),
            Err(IsfError::DimensionMismatch { .. })
        ));
        assert!(matches!(composite_submersion(vec![u(), u()]), Err(IsfError::Singular(_))));
    }

    #[test]
    fn scalar_newton_root() {
        let mut u = RealPoly::linear(&DMatrix::from_element(1, 1, 1.0), 2).unwrap();
        u.set_coeff(0, &[2], 1.0).unwrap();
        let atlas = composite_submersion(vec![fol(u)]).unwrap();
        let x = atlas.invert(&[0.11], InversionMode::Newton).unwrap().unwrap();
        assert!((x[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn polynomial_inverse_is_exact_to_its_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let alpha = 4;
        let mut u = RealPoly::zeros(3, 3, alpha).unwrap();
        for v in u.coeffs_mut().iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        for i in 0..3 {
            u.coeffs_mut()[(i, i)] += 3.0;
        }
        let atlas = composite_submersion(vec![fol(u.clone())]).unwrap();
        assert!(atlas.h_iterations <= alpha + 1);
        let round = compose(&u, &atlas.h, 2 * alpha * alpha).unwrap();
        let low = round.with_alpha(alpha).unwrap().sub(&RealPoly::identity(3, alpha).unwrap()).unwrap();
        assert!(low.coeffs().amax() < 1e-12, "{}", low.coeffs().amax());
    }

    #[test]
    fn frames_of_a_coordinate_projection() {
        let u = rows(&[1., 0., 0., 0., 0., 1., 0., 0.], 2, 4, 1);
        let f = leaf_frames(&u).unwrap();
        assert_eq!(f.v_par, DMatrix::identity(4, 4).columns(0, 2).into_owned());
        let e = DMatrix::identity(4, 4).columns(2, 2).into_owned();
        assert!(subspace_angle(&f.v_perp, &e).unwrap() < 1e-15);
    }

    #[test]
    fn frames_of_random_submersions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let m: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let u = rows(&m, 2, 4, 1);
            let f = leaf_frames(&u).unwrap();
            assert!(f.constraint_residual(&u.jacobian0()) <= 1e-12);
        }
    }

    #[test]
    fn zero_row_is_rank_deficient() {
        let u = rows(&[1., 0., 0., 0., 0., 0., 0., 0.], 2, 4, 1);
        assert!(matches!(leaf_frames(&u), Err(IsfError::RankDeficient(_))));
    }

    #[test]
    fn quadratic_leaf_graph() {
        // U = x1 + x2², g(z, y) = z − y²
        let mut u = rows(&[1., 0.], 1, 2, 2);
        u.set_coeff(0, &[0, 2], 1.0).unwrap();
        let f = leaf_frames(&u).unwrap();
        let chart = leaf_chart(&u, &f, ChartMethod::PolyIteration).unwrap();
        let g = chart.g.as_ref().unwrap();
        assert_eq!(g.coeff(0, &[1, 0]), 1.0);
        assert!((g.coeff(0, &[0, 2]) + 1.0).abs() < 1e-15);
        assert!(g.coeff(0, &[1, 1]).abs() < 1e-15 && g.coeff(0, &[2, 0]).abs() < 1e-15);
        assert!(chart.iterations <= 2);
    }

    #[test]
    fn linear_leaves_are_affine() {
        let u = rows(&[1., 2., 0., 0., 0., 0., 1., 1.], 2, 4, 3);
        let f = leaf_frames(&u).unwrap();
        let chart = leaf_chart(&u, &f, ChartMethod::PolyIteration).unwrap();
        let (z, y) = ([0.3, -0.2], [0.1, 0.4]);
        let w = leaf_eval(&chart, &z, &y).unwrap().unwrap();
        let expect = &f.v_perp * DVector::from_column_slice(&y) + &f.v_par * DVector::from_column_slice(&z);
        assert!((w - expect).amax() < 1e-15);
        assert_eq!(leaf_eval(&chart, &[0.0, 0.0], &[0.0, 0.0]).unwrap().unwrap().norm(), 0.0);
    }

    #[test]
    fn pointwise_leaves_satisfy_the_defining_relation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut u = rows(&[1., 0.5, 0., 0.2, 0., 1., 0.3, 0.], 2, 4, 3);
        for i in 4..u.index_set().len() {
            for j in 0..2 {
                u.coeffs_mut()[(j, i)] = rng.random_range(-0.5..0.5);
            }
        }
        let f = leaf_frames(&u).unwrap();
        let newton = leaf_chart(&u, &f, ChartMethod::PointwiseNewton).unwrap();
        let poly = leaf_chart(&u, &f, ChartMethod::PolyIteration).unwrap();
        assert!(poly.iterations <= 3);
        let grid: Vec<f64> = (0..10).map(|i| -0.05 + 0.1 * i as f64 / 9.0).collect();
        for &a in &grid {
            for &b in &grid {
                let (z, y) = ([a, 0.5 * b], [b, -a]);
                let w = leaf_eval(&newton, &z, &y).unwrap().unwrap();
                let back = u.eval(w.as_slice()).unwrap();
                assert!((back[0] - z[0]).abs() <= 1e-10 && (back[1] - z[1]).abs() <= 1e-10);
            }
        }
        // distinct parameters land on distinct leaves
        let y = [0.02, -0.01];
        let w1 = leaf_eval(&newton, &[0.01, 0.0], &y).unwrap().unwrap();
        let w2 = leaf_eval(&newton, &[0.02, 0.0], &y).unwrap().unwrap();
        assert!((u.eval(w1.as_slice()).unwrap() - u.eval(w2.as_slice()).unwrap()).norm() > 1e-3);
    }

    #[test]
    fn angles() {
        let e = DMatrix::<f64>::identity(4, 4);
        let a = e.columns(0, 2).into_owned();
        let b = e.columns(2, 2).into_owned();
        assert_eq!(subspace_angle(&a, &a).unwrap(), 0.0);
        assert!((subspace_angle(&a, &b).unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        let bad = DMatrix::from_row_slice(4, 2, &[1., 2., 0., 0., 0., 0., 0., 0.]);
        assert!(subspace_angle(&bad, &a).is_err());
    }

    #[test]
    fn point_cloud_csv() {
        let u = rows(&[1., 0., 0., 0., 0., 1., 0., 0.], 2, 4, 1);
        let chart = leaf_chart(&u, &leaf_frames(&u).unwrap(), ChartMethod::PolyIteration).unwrap();
        let pts = leaf_point_cloud(&chart, &[vec![0.1, 0.0]], &[vec![0.0, 0.0], vec![0.1, 0.1]]).unwrap();
        let mut buf = Vec::new();
        let mut all = pts.clone();
        all.push(CloudPoint { params: vec![0.0; 4], state: None });
        write_point_cloud(&mut buf, 4, &all).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "p1,p2,p3,p4,x1,x2,x3,x4,converged");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].ends_with(",0") && lines[3].contains("NaN"));
    }
}
