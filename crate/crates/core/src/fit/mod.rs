//! Fitting a codimension-two ISF to trajectory data.
//!
//! The objective is `L_i + β L_n` where
//!
//! ```text
//! L_i = Σ_k |x_k|^{−2σ} |U(y_k) − S(U(x_k))|²
//! ```
//!
//! and `L_n` penalizes violations of the normalizing condition on a polar
//! mesh spanned by the approximate right eigenvectors `v_r ± i v_i`.

mod bfgs;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bfgs::{minimize, MinimizeResult, MinimizeSettings, Termination};

use crate::data::{norm, Pairs};
use crate::error::{check_dim, invalid, IsfError, Result};
pub use crate::foliation::NormalFormParams;
use crate::foliation::{Conjugate, Foliation, Provenance, Residuals};
use crate::poly::{MultiIndexSet, RealPoly};
use crate::spectral::{eig_full, Dynamics, SpectralData};

/// Samples per parallel work unit. Partial sums are combined in chunk order,
/// so results do not depend on the thread count.
const CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMode {
    /// First-Fourier-coefficient constraint on a polar mesh.
    #[default]
    ResonantMesh,
    /// `(‖D₁U(0)‖² − 1)²`.
    LinearNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub alpha: usize,
    pub sigma: f64,
    /// Penalty weight; `None` picks one so that the penalty of a 10% scaling
    /// error is a tenth of the seed's invariance loss.
    pub beta: Option<f64>,
    pub penalty: PenaltyMode,
    pub n_r: usize,
    pub n_theta: usize,
    /// Mesh radius; `None` uses `max_k |x_k|`.
    pub r_max: Option<f64>,
    /// Index of the eigenvalue (slow modes first) whose pair is fitted.
    pub mode: usize,
    /// Linear regression uses samples with `|x|` up to this quantile.
    pub radius_quantile: f64,
    /// Real and imaginary parts of the approximate right eigenvector.
    #[serde(default)]
    pub v_r: Vec<f64>,
    #[serde(default)]
    pub v_i: Vec<f64>,
    /// Seed rows of `D₁U(0)`: `(Re v*, Im v*)`.
    #[serde(default)]
    pub u_init: Vec<Vec<f64>>,
    /// Seed eigenvalue `(Re μ, Im μ)`.
    #[serde(default)]
    pub mu_init: Option<[f64; 2]>,
    /// Amplitude of random higher-order initial coefficients (0 = zeros).
    pub init_noise: f64,
    pub seed: u64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            alpha: 3,
            sigma: 2.0,
            beta: None,
            penalty: PenaltyMode::ResonantMesh,
            n_r: 10,
            n_theta: 24,
            r_max: None,
            mode: 0,
            radius_quantile: 0.5,
            v_r: Vec::new(),
            v_i: Vec::new(),
            u_init: Vec::new(),
            mu_init: None,
            init_noise: 0.0,
            seed: 0,
            max_iter: 5000,
            grad_tol: 1e-8,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha == 0 {
            return invalid("fit order must be at least 1");
        }
        if !(self.sigma >= 1.0) {
            return invalid("sigma must be at least 1");
        }
        if let Some(b) = self.beta {
            if !(b > 0.0) {
                return invalid("beta must be positive");
            }
        }
        if self.n_r < 4 || self.n_theta < 4 {
            return invalid("penalty mesh needs at least 4 radii and 4 angles");
        }
        if let Some(r) = self.r_max {
            if !(r > 0.0) {
                return invalid("mesh radius must be positive");
            }
        }
        if !(self.radius_quantile > 0.0 && self.radius_quantile <= 1.0) {
            return invalid("radius quantile must lie in (0, 1]");
        }
        Ok(())
    }

    fn is_seeded(&self) -> bool {
        !self.v_r.is_empty() && !self.v_i.is_empty() && self.u_init.len() == 2 && self.mu_init.is_some()
    }
}

/// Least-squares linear model from pairs near the origin, its spectrum and a
/// seeded configuration.
pub fn init_from_linear_fit(pairs: &Pairs, base: &FitConfig) -> Result<(SpectralData, FitConfig)> {
    base.validate()?;
    let n = pairs.n;
    let mut radii: Vec<(f64, usize)> = (0..pairs.len()).map(|k| (norm(pairs.x(k)), k)).collect();
    radii.sort_by(|a, b| a.0.total_cmp(&b.0));
    let count = ((radii.len() as f64 * base.radius_quantile).ceil() as usize).min(radii.len());
    let mut chosen: Vec<usize> = radii[..count].iter().map(|r| r.1).collect();
    if chosen.len() <= n {
        // too few below the quantile: fall back to everything available
        chosen = (0..pairs.len()).collect();
    }
    if chosen.len() <= n {
        return Err(IsfError::RankDeficient(format!(
            "{} samples cannot determine a {n}x{n} linear model",
            chosen.len()
        )));
    }
    let pts: Vec<DVector<f64>> = chosen.iter().map(|&k| DVector::from_column_slice(pairs.x(k))).collect();
    let vals: Vec<DVector<f64>> = chosen.iter().map(|&k| DVector::from_column_slice(pairs.y(k))).collect();
    let a_hat = RealPoly::fit_least_squares(n, 1, &pts, &vals)?.jacobian0();

    let spec = eig_full(&a_hat, Dynamics::Map)?.with_period(pairs.period);
    let mode = base.mode;
    if mode >= spec.n() {
        return invalid(format!("mode {mode} out of range for {} eigenvalues", spec.n()));
    }
    let partners = spec.partners();
    if partners[mode] == mode {
        return invalid(format!("mode {mode} has a real eigenvalue; fitting needs a complex pair"));
    }
    let lead = if spec.eigenvalues[mode].im > 0.0 { mode } else { partners[mode] };
    let spec = spec.with_selection(&[lead])?;
    let mu = spec.eigenvalues[lead];
    let left = spec.left.row(lead);
    let right = spec.right.column(lead);

    let mut cfg = base.clone();
    cfg.u_init = vec![left.iter().map(|c| c.re).collect(), left.iter().map(|c| c.im).collect()];
    cfg.v_r = right.iter().map(|c| c.re).collect();
    cfg.v_i = right.iter().map(|c| c.im).collect();
    cfg.mu_init = Some([mu.re, mu.im]);
    Ok((spec, cfg))
}

/// Polar mesh sums for the normalization penalty: for each radius `r_j`,
/// `C_j^m = Σ_k r_j^{|m|−1} d_k^m cos θ_k` and `S_j^m` likewise with
/// `sin θ_k`, where `d_k = v_r cos θ_k − v_i sin θ_k`.
#[derive(Debug, Clone)]
pub struct PenaltyMesh {
    c: DMatrix<f64>,
    s: DMatrix<f64>,
    n_theta: usize,
}

impl PenaltyMesh {
    pub fn new(set: &MultiIndexSet, v_r: &[f64], v_i: &[f64], r_max: f64, n_r: usize, n_theta: usize) -> Result<Self> {
        check_dim(set.n(), v_r.len())?;
        check_dim(set.n(), v_i.len())?;
        let len = set.len();
        let mut c = DMatrix::zeros(n_r, len);
        let mut s = DMatrix::zeros(n_r, len);
        let mut buf = vec![0.0; len];
        let mut d = vec![0.0; set.n()];
        for k in 1..=n_theta {
            let th = 2.0 * PI * k as f64 / n_theta as f64;
            let (sn, cs) = th.sin_cos();
            for (i, di) in d.iter_mut().enumerate() {
                *di = v_r[i] * cs - v_i[i] * sn;
            }
            RealPoly::monomials_into(set, &d, &mut buf);
            for j in 1..=n_r {
                let r = r_max * j as f64 / n_r as f64;
                for (i, &mono) in buf.iter().enumerate() {
                    let w = r.powi(set.degree(i) as i32 - 1) * mono;
                    c[(j - 1, i)] += w * cs;
                    s[(j - 1, i)] += w * sn;
                }
            }
        }
        Ok(PenaltyMesh { c, s, n_theta })
    }

    /// Penalty value; adds its gradient with respect to `U`'s coefficients
    /// (scaled by `weight`) into `grad` when given.
    pub fn eval(&self, u: &DMatrix<f64>, grad: Option<(&mut DMatrix<f64>, f64)>) -> f64 {
        let u1 = u.row(0).transpose();
        let u2 = u.row(1).transpose();
        let half = 0.5 * self.n_theta as f64;
        let a = &self.c * &u1 + &self.s * &u2 - DVector::from_element(self.c.nrows(), half);
        let b = &self.c * &u2 - &self.s * &u1;
        if let Some((g, w)) = grad {
            let g1 = (self.c.transpose() * &a - self.s.transpose() * &b) * (2.0 * w);
            let g2 = (self.s.transpose() * &a + self.c.transpose() * &b) * (2.0 * w);
            for i in 0..u.ncols() {
                g[(0, i)] += g1[i];
                g[(1, i)] += g2[i];
            }
        }
        a.norm_squared() + b.norm_squared()
    }
}

/// `(‖D₁U(0)‖² − 1)²` with its gradient.
fn linear_norm_penalty(u: &DMatrix<f64>, n: usize, grad: Option<(&mut DMatrix<f64>, f64)>) -> f64 {
    let lin = u.columns(0, n);
    let q = lin.norm_squared() - 1.0;
    if let Some((g, w)) = grad {
        for i in 0..n {
            for j in 0..2 {
                g[(j, i)] += w * 4.0 * q * lin[(j, i)];
            }
        }
    }
    q * q
}

/// Normalization penalty of a submersion with its gradient.
pub fn normalization_penalty(u: &RealPoly, cfg: &FitConfig, r_max: f64) -> Result<(f64, DMatrix<f64>)> {
    check_dim(2, u.codomain_dim())?;
    let mut g = DMatrix::zeros(2, u.index_set().len());
    let v = match cfg.penalty {
        PenaltyMode::ResonantMesh => {
            let mesh = PenaltyMesh::new(u.index_set(), &cfg.v_r, &cfg.v_i, r_max, cfg.n_r, cfg.n_theta)?;
            mesh.eval(u.coeffs(), Some((&mut g, 1.0)))
        }
        PenaltyMode::LinearNorm => linear_norm_penalty(u.coeffs(), u.domain_dim(), Some((&mut g, 1.0))),
    };
    Ok((v, g))
}

/// Data side of the objective with monomials precomputed.
pub struct InvarianceData {
    set: MultiIndexSet,
    mx: DMatrix<f64>,
    my: DMatrix<f64>,
    weights: Vec<f64>,
}

impl InvarianceData {
    pub fn new(pairs: &Pairs, alpha: usize, sigma: f64) -> Result<Self> {
        let set = MultiIndexSet::new(pairs.n, alpha)?;
        let len = set.len();
        let count = pairs.len();
        let mut mx = DMatrix::zeros(len, count);
        let mut my = DMatrix::zeros(len, count);
        let mut weights = Vec::with_capacity(count);
        for k in 0..count {
            let r2: f64 = pairs.x(k).iter().map(|v| v * v).sum();
            if r2 == 0.0 {
                return invalid("pairs must not contain the origin");
            }
            weights.push(r2.powf(-sigma));
            RealPoly::monomials_into(&set, pairs.x(k), mx.column_mut(k).as_mut_slice());
            RealPoly::monomials_into(&set, pairs.y(k), my.column_mut(k).as_mut_slice());
        }
        Ok(InvarianceData { set, mx, my, weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `L_i` and its gradient with respect to `U` (2 × #monomials), `b` and `c`.
    pub fn loss(&self, u: &DMatrix<f64>, s: &NormalFormParams, want_grad: bool) -> (f64, DMatrix<f64>, Vec<f64>, Vec<f64>) {
        let len = self.set.len();
        let kp = s.b.len();
        let starts: Vec<usize> = (0..self.len()).step_by(CHUNK).collect();
        let parts: Vec<(f64, DMatrix<f64>, Vec<f64>, Vec<f64>)> = starts
            .par_iter()
            .map(|&start| {
                let width = CHUNK.min(self.len() - start);
                let mx = self.mx.columns(start, width);
                let my = self.my.columns(start, width);
                let ux = u * mx;
                let uy = u * my;
                let mut value = 0.0;
                let mut rw = DMatrix::zeros(2, width);
                let mut qw = DMatrix::zeros(2, width);
                let mut gb = vec![0.0; kp];
                let mut gc = vec![0.0; kp];
                for k in 0..width {
                    let w = self.weights[start + k];
                    let z = [ux[(0, k)], ux[(1, k)]];
                    let sz = s.eval(z);
                    let r = [uy[(0, k)] - sz[0], uy[(1, k)] - sz[1]];
                    value += w * (r[0] * r[0] + r[1] * r[1]);
                    if !want_grad {
                        continue;
                    }
                    let j = s.jacobian(z);
                    rw[(0, k)] = 2.0 * w * r[0];
                    rw[(1, k)] = 2.0 * w * r[1];
                    qw[(0, k)] = 2.0 * w * (j[0][0] * r[0] + j[1][0] * r[1]);
                    qw[(1, k)] = 2.0 * w * (j[0][1] * r[0] + j[1][1] * r[1]);
                    let rho = z[0] * z[0] + z[1] * z[1];
                    let mut rp = 1.0;
                    for p in 0..kp {
                        gb[p] -= 2.0 * w * rp * (r[0] * z[0] + r[1] * z[1]);
                        gc[p] -= 2.0 * w * rp * (-r[0] * z[1] + r[1] * z[0]);
                        rp *= rho;
                    }
                }
                let gu = if want_grad {
                    rw * my.transpose() - qw * mx.transpose()
                } else {
                    DMatrix::zeros(2, len)
                };
                (value, gu, gb, gc)
            })
            .collect();

        let mut value = 0.0;
        let mut gu = DMatrix::zeros(2, len);
        let mut gb = vec![0.0; kp];
        let mut gc = vec![0.0; kp];
        for (v, u_part, b_part, c_part) in parts {
            value += v;
            gu += u_part;
            for p in 0..kp {
                gb[p] += b_part[p];
                gc[p] += c_part[p];
            }
        }
        (value, gu, gb, gc)
    }
}

/// Invariance loss `L_i` with its gradient.
pub fn invariance_loss(
    u: &RealPoly,
    s: &NormalFormParams,
    pairs: &Pairs,
    sigma: f64,
) -> Result<(f64, DMatrix<f64>, Vec<f64>, Vec<f64>)> {
    check_dim(pairs.n, u.domain_dim())?;
    check_dim(2, u.codomain_dim())?;
    let data = InvarianceData::new(pairs, u.alpha(), sigma)?;
    Ok(data.loss(u.coeffs(), s, true))
}

/// The full objective `L_i + β L_n` over a flat parameter vector
/// `θ = (U coefficients column-major, b_0..b_K, c_0..c_K)`.
pub struct FitProblem {
    pub data: InvarianceData,
    pub beta: f64,
    mesh: Option<PenaltyMesh>,
    n: usize,
    k: usize,
}

impl FitProblem {
    pub fn new(pairs: &Pairs, cfg: &FitConfig, beta: f64, r_max: f64) -> Result<Self> {
        let data = InvarianceData::new(pairs, cfg.alpha, cfg.sigma)?;
        let mesh = match cfg.penalty {
            PenaltyMode::ResonantMesh => {
                Some(PenaltyMesh::new(&data.set, &cfg.v_r, &cfg.v_i, r_max, cfg.n_r, cfg.n_theta)?)
            }
            PenaltyMode::LinearNorm => None,
        };
        Ok(FitProblem { data, beta, mesh, n: pairs.n, k: cfg.alpha / 2 })
    }

    pub fn dim(&self) -> usize {
        2 * self.data.set.len() + 2 * (self.k + 1)
    }

    pub fn pack(&self, u: &DMatrix<f64>, s: &NormalFormParams) -> Vec<f64> {
        let mut theta = u.as_slice().to_vec();
        theta.extend_from_slice(&s.b);
        theta.extend_from_slice(&s.c);
        theta
    }

    pub fn unpack(&self, theta: &[f64]) -> (DMatrix<f64>, NormalFormParams) {
        let len = self.data.set.len();
        let u = DMatrix::from_column_slice(2, len, &theta[..2 * len]);
        let b = theta[2 * len..2 * len + self.k + 1].to_vec();
        let c = theta[2 * len + self.k + 1..].to_vec();
        (u, NormalFormParams { b, c })
    }

    pub fn penalty(&self, u: &DMatrix<f64>, grad: Option<(&mut DMatrix<f64>, f64)>) -> f64 {
        match &self.mesh {
            Some(mesh) => mesh.eval(u, grad),
            None => linear_norm_penalty(u, self.n, grad),
        }
    }

    /// Objective value; writes the gradient into `grad`.
    pub fn value_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let (u, s) = self.unpack(theta);
        let (li, mut gu, gb, gc) = self.data.loss(&u, &s, true);
        let ln = self.penalty(&u, Some((&mut gu, self.beta)));
        let len = self.data.set.len();
        grad[..2 * len].copy_from_slice(gu.as_slice());
        grad[2 * len..2 * len + self.k + 1].copy_from_slice(&gb);
        grad[2 * len + self.k + 1..].copy_from_slice(&gc);
        li + self.beta * ln
    }

    /// Diagonal scaling `θ = d ⊙ θ̂` that makes monomials of size `scale`
    /// contribute at unit size.
    pub fn scaling(&self, scale: f64) -> Vec<f64> {
        let mut d = Vec::with_capacity(self.dim());
        for i in 0..self.data.set.len() {
            let f = scale.powi(1 - self.data.set.degree(i) as i32);
            d.push(f);
            d.push(f);
        }
        for _ in 0..2 {
            for p in 0..=self.k {
                d.push(scale.powi(-2 * p as i32));
            }
        }
        d
    }
}

/// Outcome of a fit: the foliation plus optimizer diagnostics.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub foliation: Foliation,
    pub spectrum: SpectralData,
    pub config: FitConfig,
    pub beta: f64,
    pub r_max: f64,
    pub seed_loss: f64,
    pub optimizer: MinimizeResult,
}

/// Fits `U` and the normal-form `S` to the pairs.
pub fn fit_isf(pairs: &Pairs, cfg: &FitConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return invalid("no data pairs to fit");
    }
    let (spectrum, seeded) = init_from_linear_fit(pairs, cfg)?;
    let mut cfg = if cfg.is_seeded() { cfg.clone() } else { seeded };
    let r_max = cfg.r_max.unwrap_or_else(|| pairs.max_norm());
    cfg.r_max = Some(r_max);

    let mu = cfg.mu_init.expect("seeded");
    let len = MultiIndexSet::new(pairs.n, cfg.alpha)?.len();
    let mut u0 = DMatrix::zeros(2, len);
    for (j, row) in cfg.u_init.iter().enumerate() {
        check_dim(pairs.n, row.len())?;
        for (k, v) in row.iter().enumerate() {
            u0[(j, k)] = *v;
        }
    }
    let s0 = NormalFormParams::from_mu(Complex64::new(mu[0], mu[1]), cfg.alpha);

    let mut problem = FitProblem::new(pairs, &cfg, 1.0, r_max)?;
    let d = problem.scaling(r_max);
    if cfg.init_noise > 0.0 {
        let amp = cfg.init_noise * u0.columns(0, pairs.n).amax();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for i in pairs.n..len {
            for j in 0..2 {
                u0[(j, i)] = amp * rng.random_range(-1.0..1.0) * d[2 * i + j];
            }
        }
    }

    let beta = match cfg.beta {
        Some(b) => b,
        None => {
            let (li, _, _, _) = problem.data.loss(&u0, &s0, false);
            let reference = problem.penalty(&(&u0 * 1.1), None);
            if reference > 0.0 && li > 0.0 {
                0.1 * li / reference
            } else {
                1.0
            }
        }
    };
    cfg.beta = Some(beta);
    problem.beta = beta;

    let theta0 = problem.pack(&u0, &s0);
    let mut scratch = vec![0.0; theta0.len()];
    let seed_loss = problem.value_grad(&theta0, &mut scratch);
    if !seed_loss.is_finite() {
        return Err(IsfError::NonFinite("objective at the seed".into()));
    }
    let norm = if seed_loss > 0.0 { seed_loss } else { 1.0 };
    let hat0: Vec<f64> = theta0.iter().zip(&d).map(|(t, s)| t / s).collect();
    let settings = MinimizeSettings { max_iter: cfg.max_iter, grad_tol: cfg.grad_tol, ..Default::default() };
    let mut full = vec![0.0; theta0.len()];
    let mut result = minimize(
        |hat, g| {
            let theta: Vec<f64> = hat.iter().zip(&d).map(|(h, s)| h * s).collect();
            let v = problem.value_grad(&theta, &mut full);
            for i in 0..g.len() {
                g[i] = full[i] * d[i] / norm;
            }
            v / norm
        },
        &hat0,
        &settings,
    )?;
    let theta: Vec<f64> = result.theta.iter().zip(&d).map(|(h, s)| h * s).collect();
    result.value *= norm;
    result.history.iter_mut().for_each(|v| *v *= norm);
    result.theta = theta.clone();
    let (u, s) = problem.unpack(&theta);
    let u = RealPoly::from_coeffs(std::sync::Arc::new(problem.data.set.clone()), u)?;

    let mut foliation = Foliation {
        u,
        s: Conjugate::NormalForm { params: s },
        sigma: cfg.sigma,
        dynamics: Dynamics::Map,
        period: Some(pairs.period),
        provenance: Provenance::Fitted {
            config: Box::new(cfg.clone()),
            seed: cfg.seed,
            iterations: result.iterations,
            loss: result.value,
        },
        spectrum: Some(spectrum.clone()),
        residuals: Residuals::default(),
    };
    foliation.residuals.training = Some(residual_metric(&foliation, pairs)?);
    Ok(FitOutcome { foliation, spectrum, config: cfg, beta, r_max, seed_loss, optimizer: result })
}

/// Mean relative invariance residual `(1/N) Σ |x_k|^{−1} |U(y_k) − S(U(x_k))|`.
pub fn residual_metric(fol: &Foliation, pairs: &Pairs) -> Result<f64> {
    if fol.dynamics != Dynamics::Map {
        return invalid("residual metric applies to map foliations");
    }
    check_dim(fol.n(), pairs.n)?;
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for k in 0..pairs.len() {
        let r = fol.map_residual(pairs.x(k), pairs.y(k))?;
        total += r.norm() / norm(pairs.x(k));
    }
    Ok(total / pairs.len() as f64)
}
