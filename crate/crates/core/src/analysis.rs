//! Instantaneous frequency and damping, amplitude surrogates, backbone
//! curves and reconstruction errors.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{flow_map, format_f64, norm};
use crate::error::{check_dim, invalid, IsfError, Result};
use crate::foliation::{Foliation, NormalFormParams};
use crate::geometry::{leaf_eval, FoliationAtlas, InversionMode, LeafChart};
use crate::poly::RealPoly;
use crate::spectral::Dynamics;

pub const DEFAULT_N_THETA: usize = 360;
pub const DEFAULT_GRID: usize = 50;
/// RK4 substeps per sampling period when reduced vector fields are iterated.
pub const FLOW_SUBSTEPS: usize = 64;

/// `(f_r(r²), f_i(r²))`.
pub fn polar_dynamics(params: &NormalFormParams, r: f64) -> (f64, f64) {
    params.radial(r * r)
}

/// Radius and angle after one step of the map in polar form.
pub fn polar_step(params: &NormalFormParams, r: f64) -> (f64, f64) {
    let (fr, fi) = polar_dynamics(params, r);
    (r * fr.hypot(fi), fi.atan2(fr))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreqDamping {
    pub omega: f64,
    /// `None` where the frequency vanishes.
    pub zeta: Option<f64>,
}

/// Frequency and damping ratio of a normal-form map with sampling period `t`.
pub fn freq_damping(params: &NormalFormParams, r: f64, t: f64) -> Result<FreqDamping> {
    if !(t > 0.0) {
        return invalid("sampling period must be positive");
    }
    let (fr, fi) = polar_dynamics(params, r);
    if fr == 0.0 && fi == 0.0 {
        return invalid("normal form degenerates at this radius");
    }
    let omega = fi.atan2(fr) / t;
    let zeta = (omega != 0.0).then(|| -fr.hypot(fi).ln() / (t * omega));
    Ok(FreqDamping { omega, zeta })
}

/// Frequency and damping ratio of a normal-form vector field:
/// `ṙ = r f_r(r²)`, `θ̇ = f_i(r²)`.
pub fn freq_damping_flow(params: &NormalFormParams, r: f64) -> FreqDamping {
    let (fr, fi) = polar_dynamics(params, r);
    FreqDamping { omega: fi, zeta: (fi != 0.0).then(|| -fr / fi) }
}

fn circle(r: f64, n_theta: usize) -> impl Iterator<Item = [f64; 2]> {
    (0..n_theta).map(move |k| {
        let th = 2.0 * PI * k as f64 / n_theta as f64;
        [r * th.cos(), r * th.sin()]
    })
}

/// `sup_θ |W_{(r cos θ, r sin θ)}(0)|`; `None` if every point failed.
pub fn surrogate_amplitude(chart: &LeafChart, r: f64, n_theta: usize) -> Result<Option<f64>> {
    if chart.nu() != 2 {
        return invalid("amplitude surrogate needs a two-dimensional parameter space");
    }
    if r == 0.0 {
        return Ok(Some(0.0));
    }
    let y = vec![0.0; chart.frames.v_perp.ncols()];
    let mut best: Option<f64> = None;
    for z in circle(r, n_theta) {
        if let Some(w) = leaf_eval(chart, &z, &y)? {
            let a = w.norm();
            best = Some(best.map_or(a, |b| b.max(a)));
        }
    }
    Ok(best)
}

/// `sup_θ |W(r cos θ, r sin θ)|` for an SSM immersion.
pub fn ssm_amplitude(w: &RealPoly, r: f64, n_theta: usize) -> Result<f64> {
    check_dim(2, w.domain_dim())?;
    let mut best: f64 = 0.0;
    for z in circle(r, n_theta) {
        best = best.max(w.eval(&z)?.norm());
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Isf,
    Ssm,
    DampingIsf,
    DampingSsm,
}

impl CurveKind {
    pub fn name(self) -> &'static str {
        match self {
            CurveKind::Isf => "isf",
            CurveKind::Ssm => "ssm",
            CurveKind::DampingIsf => "damping_isf",
            CurveKind::DampingSsm => "damping_ssm",
        }
    }

    fn uses_ssm(self) -> bool {
        matches!(self, CurveKind::Ssm | CurveKind::DampingSsm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub r: f64,
    pub omega: f64,
    pub zeta: f64,
    pub delta: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneCurve {
    pub kind: CurveKind,
    pub samples: Vec<CurveSample>,
}

/// Where the amplitude comes from.
pub enum Amplitude<'a> {
    Chart(&'a LeafChart),
    Immersion(&'a RealPoly),
}

/// `n` uniform radii on `[0, r_max]`.
pub fn radius_grid(r_max: f64, n: usize) -> Result<Vec<f64>> {
    if !(r_max > 0.0) || n < 2 {
        return invalid("radius grid needs a positive maximum and at least two points");
    }
    Ok((0..n).map(|i| r_max * i as f64 / (n - 1) as f64).collect())
}

/// Frequency, damping and amplitude along a radius grid.
pub fn backbone_curves(
    fol: &Foliation,
    amplitude: Amplitude<'_>,
    r_grid: &[f64],
    kind: CurveKind,
    n_theta: usize,
) -> Result<BackboneCurve> {
    if r_grid.windows(2).any(|w| !(w[1] > w[0])) || r_grid.first().is_some_and(|r| *r < 0.0) {
        return invalid("radius grid must be nonnegative and strictly increasing");
    }
    match (&amplitude, kind.uses_ssm()) {
        (Amplitude::Chart(_), true) | (Amplitude::Immersion(_), false) => {
            return invalid("curve kind does not match the amplitude source");
        }
        _ => {}
    }
    let params = fol
        .s
        .normal_form(1e-12 * fol.s.linear().amax())
        .ok_or_else(|| IsfError::InvalidArgument("conjugate dynamics is not in radial normal form".into()))?;
    let period = fol.period;
    if fol.dynamics == Dynamics::Map && period.is_none() {
        return invalid("map foliation has no sampling period");
    }
    let samples = r_grid
        .par_iter()
        .map(|&r| {
            let fd = match fol.dynamics {
                Dynamics::Map => freq_damping(&params, r, period.expect("checked"))?,
                Dynamics::Flow => freq_damping_flow(&params, r),
            };
            let delta = match &amplitude {
                Amplitude::Chart(chart) => surrogate_amplitude(chart, r, n_theta)?,
                Amplitude::Immersion(w) => Some(ssm_amplitude(w, r, n_theta)?),
            };
            Ok(CurveSample {
                r,
                omega: fd.omega,
                zeta: fd.zeta.unwrap_or(f64::NAN),
                delta: delta.unwrap_or(f64::NAN),
                valid: delta.is_some() && fd.zeta.is_some(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BackboneCurve { kind, samples })
}

/// CSV with columns `r, omega, zeta, delta, valid`.
pub fn write_curve_csv<W: Write>(mut w: W, curve: &BackboneCurve) -> Result<()> {
    writeln!(w, "r,omega,zeta,delta,valid")?;
    for s in &curve.samples {
        writeln!(
            w,
            "{},{},{},{},{}",
            format_f64(s.r),
            format_f64(s.omega),
            format_f64(s.zeta),
            format_f64(s.delta),
            u8::from(s.valid)
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionErrors {
    pub forward: Vec<f64>,
    /// `None` where the inversion failed.
    pub backward: Vec<Option<f64>>,
}

/// One step of the conjugate dynamics of `fol` over its sampling period.
fn reduced_step(fol: &Foliation, z: &[f64], period: f64, s_poly: &RealPoly) -> Result<Vec<f64>> {
    match fol.dynamics {
        Dynamics::Map => Ok(fol.s.eval(z)?.as_slice().to_vec()),
        Dynamics::Flow => flow_map(s_poly, z, period, FLOW_SUBSTEPS),
    }
}

/// Forward and backward reconstruction errors along a trajectory sampled at
/// period `period`.
pub fn reconstruction_errors(
    atlas: &FoliationAtlas,
    trajectory: &[Vec<f64>],
    period: f64,
    mode: InversionMode,
) -> Result<ReconstructionErrors> {
    let x0 = trajectory.first().ok_or_else(|| IsfError::InvalidArgument("empty trajectory".into()))?;
    check_dim(atlas.n(), x0.len())?;
    let polys: Vec<RealPoly> = atlas.foliations.iter().map(|f| f.s.to_poly()).collect();
    let mut z: Vec<Vec<f64>> = atlas
        .foliations
        .iter()
        .map(|f| f.u.eval(x0).map(|v| v.as_slice().to_vec()))
        .collect::<Result<_>>()?;
    let mut forward = Vec::with_capacity(trajectory.len());
    let mut backward = Vec::with_capacity(trajectory.len());
    for (k, x) in trajectory.iter().enumerate() {
        check_dim(atlas.n(), x.len())?;
        if k > 0 {
            for (j, f) in atlas.foliations.iter().enumerate() {
                z[j] = reduced_step(f, &z[j], period, &polys[j])?;
            }
        }
        let stacked: Vec<f64> = z.concat();
        let ux = atlas.u_hat.eval(x)?;
        let scale = norm(x);
        forward.push((DVector::from_column_slice(&stacked) - ux).norm() / scale);
        let back = atlas.invert(&stacked, mode)?;
        backward.push(back.map(|b| (DVector::from_column_slice(x) - b).norm() / scale));
    }
    Ok(ReconstructionErrors { forward, backward })
}

/// CSV with columns `k, err_fw, err_bw`; failed inversions are `NaN`.
pub fn write_errors_csv<W: Write>(mut w: W, errs: &ReconstructionErrors) -> Result<()> {
    writeln!(w, "k,err_fw,err_bw")?;
    for (k, (f, b)) in errs.forward.iter().zip(&errs.backward).enumerate() {
        writeln!(w, "{k},{},{}", format_f64(*f), format_f64(b.unwrap_or(f64::NAN)))?;
    }
    Ok(())
}
