//! Trajectory datasets: the two-mass Shaw–Pierre benchmark, RK4 sampling,
//! delay embedding and CSV persistence.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, IsfError, Result};
use crate::poly::RealPoly;

/// Samples closer to the origin than this are dropped from the pairs view.
pub const MIN_SAMPLE_NORM: f64 = 1e-10;

/// One trajectory: a sequence of states.
pub type Trajectory = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShawPierre {
    pub c: f64,
    pub k0: f64,
    pub kappa: f64,
}

impl Default for ShawPierre {
    fn default() -> Self {
        ShawPierre { c: 0.003, k0: 1.0, kappa: 0.5 }
    }
}

/// Two coupled oscillators with a cubic spring, state `(x1, x2, v1, v2)`:
///
/// ```text
/// v1' = −2k0 x1 + k0 x2 − 2c v1 + c v2 − κ x1³
/// v2' =   k0 x1 − 2k0 x2 + c v1 − 2c v2
/// ```
pub fn shaw_pierre_field(p: ShawPierre) -> Result<RealPoly> {
    if p.c < 0.0 || p.k0 <= 0.0 {
        return invalid("damping must be non-negative and stiffness positive");
    }
    let mut g = RealPoly::zeros(4, 4, 3)?;
    g.set_coeff(0, &[0, 0, 1, 0], 1.0)?;
    g.set_coeff(1, &[0, 0, 0, 1], 1.0)?;
    g.set_coeff(2, &[1, 0, 0, 0], -2.0 * p.k0)?;
    g.set_coeff(2, &[0, 1, 0, 0], p.k0)?;
    g.set_coeff(2, &[0, 0, 1, 0], -2.0 * p.c)?;
    g.set_coeff(2, &[0, 0, 0, 1], p.c)?;
    g.set_coeff(2, &[3, 0, 0, 0], -p.kappa)?;
    g.set_coeff(3, &[1, 0, 0, 0], p.k0)?;
    g.set_coeff(3, &[0, 1, 0, 0], -2.0 * p.k0)?;
    g.set_coeff(3, &[0, 0, 1, 0], p.c)?;
    g.set_coeff(3, &[0, 0, 0, 1], -2.0 * p.c)?;
    Ok(g)
}

/// One classical Runge–Kutta step of size `h`.
pub fn rk4_step(g: &RealPoly, x: &[f64], h: f64, buf: &mut [f64]) -> Vec<f64> {
    let n = x.len();
    let k1 = g.eval_with(x, buf);
    let x2: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * h * k1[i]).collect();
    let k2 = g.eval_with(&x2, buf);
    let x3: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * h * k2[i]).collect();
    let k3 = g.eval_with(&x3, buf);
    let x4: Vec<f64> = (0..n).map(|i| x[i] + h * k3[i]).collect();
    let k4 = g.eval_with(&x4, buf);
    (0..n)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// The time-`period` flow map approximated by `substeps` RK4 steps.
pub fn flow_map(g: &RealPoly, x: &[f64], period: f64, substeps: usize) -> Result<Vec<f64>> {
    check_dim(g.domain_dim(), x.len())?;
    let h = period / substeps as f64;
    let mut buf = vec![0.0; g.index_set().len()];
    let mut state = x.to_vec();
    for _ in 0..substeps {
        state = rk4_step(g, &state, h, &mut buf);
    }
    if state.iter().any(|v| !v.is_finite()) {
        return Err(IsfError::NonFinite("integrated state".into()));
    }
    Ok(state)
}

/// States at `0, T, 2T, ..., steps·T` (so `steps + 1` states) using inner
/// RK4 steps of size `h_int`, which must divide `T`.
pub fn integrate_sample(g: &RealPoly, x0: &[f64], period: f64, steps: usize, h_int: f64) -> Result<Trajectory> {
    check_dim(g.domain_dim(), x0.len())?;
    if !(period > 0.0 && h_int > 0.0) {
        return invalid("sampling period and step must be positive");
    }
    let substeps = (period / h_int).round() as usize;
    if substeps == 0 || (substeps as f64 * h_int - period).abs() > 1e-9 * period {
        return invalid(format!("inner step {h_int} does not divide the period {period}"));
    }
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.to_vec());
    for k in 0..steps {
        let next = flow_map(g, &out[k], period, substeps)?;
        out.push(next);
    }
    Ok(out)
}

/// How uniformly drawn initial conditions are pulled toward the origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcScaling {
    /// `x0 -> x0·|x0|`.
    #[default]
    Densify,
    /// `x0 -> x0 / |x0|²`.
    Inverse,
    None,
}

impl IcScaling {
    pub fn apply(self, x: &mut [f64]) {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let f = match self {
            IcScaling::Densify => r,
            IcScaling::Inverse if r > 0.0 => 1.0 / (r * r),
            _ => 1.0,
        };
        x.iter_mut().for_each(|v| *v *= f);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub trajectories: usize,
    pub points: usize,
    pub period: f64,
    pub cube_width: f64,
    pub seed: u64,
    /// Inner RK4 steps per sampling period.
    pub substeps: usize,
    pub scaling: IcScaling,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            trajectories: 100,
            points: 16,
            period: 0.8,
            cube_width: 0.4,
            seed: 1,
            substeps: 64,
            scaling: IcScaling::Densify,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDataset {
    pub n: usize,
    pub period: f64,
    pub trajectories: Vec<Trajectory>,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

/// Initial condition of trajectory `index`: one ChaCha stream per trajectory.
pub fn initial_condition(n: usize, cfg: &GeneratorConfig, index: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let half = 0.5 * cfg.cube_width;
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-half..=half)).collect();
    cfg.scaling.apply(&mut x);
    x
}

pub fn generate_dataset(g: &RealPoly, cfg: &GeneratorConfig) -> Result<TrajectoryDataset> {
    let n = g.domain_dim();
    if cfg.points == 0 || cfg.substeps == 0 {
        return invalid("trajectories need at least one point and one inner step");
    }
    let h = cfg.period / cfg.substeps as f64;
    let trajectories = (0..cfg.trajectories)
        .into_par_iter()
        .map(|i| integrate_sample(g, &initial_condition(n, cfg, i), cfg.period, cfg.points - 1, h))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryDataset {
        n,
        period: cfg.period,
        trajectories,
        provenance: serde_json::to_value(cfg)?,
    })
}

/// Consecutive pairs `(x_k, y_k = x_{k+1})` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Pairs {
    pub n: usize,
    pub period: f64,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Pairs {
    pub fn new(n: usize, period: f64, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if n == 0 || x.len() != y.len() || x.len() % n != 0 {
            return invalid("pair arrays must have equal length, a multiple of the dimension");
        }
        Ok(Pairs { n, period, x, y })
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self, k: usize) -> &[f64] {
        &self.x[k * self.n..(k + 1) * self.n]
    }

    pub fn y(&self, k: usize) -> &[f64] {
        &self.y[k * self.n..(k + 1) * self.n]
    }

    pub fn max_norm(&self) -> f64 {
        (0..self.len()).map(|k| norm(self.x(k))).fold(0.0, f64::max)
    }

    /// A subset of pairs, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut x = Vec::with_capacity(idx.len() * self.n);
        let mut y = Vec::with_capacity(idx.len() * self.n);
        for &k in idx {
            x.extend_from_slice(self.x(k));
            y.extend_from_slice(self.y(k));
        }
        Pairs { n: self.n, period: self.period, x, y }
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl TrajectoryDataset {
    pub fn new(n: usize, period: f64, trajectories: Vec<Trajectory>) -> Result<Self> {
        for t in &trajectories {
            for s in t {
                check_dim(n, s.len())?;
            }
        }
        Ok(TrajectoryDataset { n, period, trajectories, provenance: serde_json::Value::Null })
    }

    pub fn state_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    pub fn max_norm(&self) -> f64 {
        self.trajectories.iter().flatten().map(|s| norm(s)).fold(0.0, f64::max)
    }

    /// All consecutive pairs, dropping those with `|x_k| < 1e-10`.
    pub fn pairs(&self) -> Pairs {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for t in &self.trajectories {
            for w in t.windows(2) {
                if norm(&w[0]) < MIN_SAMPLE_NORM {
                    continue;
                }
                x.extend_from_slice(&w[0]);
                y.extend_from_slice(&w[1]);
            }
        }
        Pairs { n: self.n, period: self.period, x, y }
    }

    pub fn merge(&self, other: &Self) -> Result<Self> {
        check_dim(self.n, other.n)?;
        if self.period != other.period {
            return invalid("cannot merge datasets with different sampling periods");
        }
        let mut out = self.clone();
        out.trajectories.extend(other.trajectories.iter().cloned());
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["traj_id".to_string(), "step".to_string()];
        header.extend((1..=self.n).map(|i| format!("x_{i}")));
        wr.write_record(&header).map_err(csv_err)?;
        for (id, t) in self.trajectories.iter().enumerate() {
            for (step, s) in t.iter().enumerate() {
                let mut rec = vec![id.to_string(), step.to_string()];
                rec.extend(s.iter().map(|v| format_f64(*v)));
                wr.write_record(&rec).map_err(csv_err)?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the CSV layout written by [`write_csv`](Self::write_csv).
    pub fn read_csv<R: Read>(r: R, period: f64) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().flexible(true).from_reader(r);
        let header = rd.headers().map_err(csv_err)?.clone();
        if header.len() < 3 || &header[0] != "traj_id" || &header[1] != "step" {
            return Err(IsfError::Parse { line: 1, msg: "expected header traj_id,step,x_1,...".into() });
        }
        let n = header.len() - 2;
        let mut trajectories: Vec<Trajectory> = Vec::new();
        let mut ids: Vec<u64> = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let bad = |msg: String| IsfError::Parse { line, msg };
            if rec.len() != n + 2 {
                return Err(bad(format!("expected {} columns, found {}", n + 2, rec.len())));
            }
            let id: u64 = rec[0].trim().parse().map_err(|_| bad(format!("bad trajectory id {:?}", &rec[0])))?;
            let step: usize = rec[1].trim().parse().map_err(|_| bad(format!("bad step {:?}", &rec[1])))?;
            let state = (2..n + 2)
                .map(|i| rec[i].trim().parse::<f64>().map_err(|_| bad(format!("bad value {:?}", &rec[i]))))
                .collect::<Result<Vec<_>>>()?;
            if ids.last() != Some(&id) {
                if ids.contains(&id) {
                    return Err(bad(format!("trajectory {id} is not contiguous")));
                }
                ids.push(id);
                trajectories.push(Vec::new());
            }
            let t = trajectories.last_mut().expect("pushed above");
            if step != t.len() {
                return Err(bad(format!("expected step {}, found {step}", t.len())));
            }
            t.push(state);
        }
        Ok(TrajectoryDataset { n, period, trajectories, provenance: serde_json::Value::Null })
    }

    /// Writes `path` (CSV) and `path.json` (period and provenance).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.write_csv(std::fs::File::create(path)?)?;
        let meta = Sidecar { n: self.n, period: self.period, provenance: self.provenance.clone() };
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = sidecar_path(path);
        let meta: Sidecar = serde_json::from_str(&std::fs::read_to_string(&side).map_err(|e| {
            IsfError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", side.display())))
        })?)?;
        let mut ds = Self::read_csv(std::fs::File::open(path)?, meta.period)?;
        if ds.trajectories.is_empty() {
            ds.n = meta.n;
        }
        check_dim(meta.n, ds.n)?;
        ds.provenance = meta.provenance;
        Ok(ds)
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    n: usize,
    period: f64,
    #[serde(default)]
    provenance: serde_json::Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// 17 significant digits: enough to round-trip any binary64 value.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(e: csv::Error) -> IsfError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => IsfError::Io(io),
        other => IsfError::Parse { line, msg: format!("{other:?}") },
    }
}

/// Delay embedding `state_k = (s_k, s_{k+lag}, ..., s_{k+(dim−1)lag})` as a
/// single trajectory.
pub fn delay_embed(signal: &[f64], dim: usize, lag: usize, period: f64) -> Result<TrajectoryDataset> {
    if dim == 0 || lag == 0 {
        return invalid("embedding dimension and lag must be positive");
    }
    if signal.len() < dim * lag + 1 {
        return invalid(format!(
            "series of length {} is too short for dimension {dim} and lag {lag}",
            signal.len()
        ));
    }
    let count = signal.len() - (dim - 1) * lag;
    let states = (0..count)
        .map(|k| (0..dim).map(|i| signal[k + i * lag]).collect())
        .collect();
    TrajectoryDataset::new(dim, period, vec![states])
}
