use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use isf_core::analysis::{
    backbone_curves, radius_grid, reconstruction_errors, write_curve_csv, write_errors_csv, Amplitude, CurveKind,
};
use isf_core::data::{
    format_f64, generate_dataset, integrate_sample, shaw_pierre_field, GeneratorConfig, IcScaling, ShawPierre,
    TrajectoryDataset,
};
use isf_core::expand::{realify_foliation, solve_isf_series_map, solve_isf_series_vf, ResonancePolicy};
use isf_core::fit::{fit_isf, residual_metric, FitConfig, PenaltyMode};
use isf_core::geometry::{
    composite_submersion, leaf_chart, leaf_frames, leaf_point_cloud, ssm_immersion, write_point_cloud, ChartMethod,
    InversionMode,
};
use isf_core::spectral::eig_full;
use isf_core::{Dynamics, Foliation, RealPoly};

use crate::manifest::{self, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "isf", version, about = "Invariant spectral foliations: generate, fit, expand, analyze")]
pub struct Cli {
    /// Worker threads for parallel loops.
    #[arg(long, global = true, env = "ISF_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample trajectories of a vector field.
    Generate(GenerateArgs),
    /// Fit a foliation to trajectory data.
    Fit(FitArgs),
    /// Series-expand a foliation from a model.
    Expand(ExpandArgs),
    /// Backbone and damping curves.
    Backbone(BackboneArgs),
    /// Forward and backward reconstruction errors along a trajectory.
    Reconstruct(ReconstructArgs),
    /// Point clouds of leaves.
    Leaves(LeavesArgs),
    /// Residual table collected from fit manifests.
    Report(ReportArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct ModelArgs {
    /// `shaw-pierre` or a polynomial JSON file.
    #[arg(long, default_value = "shaw-pierre")]
    pub model: String,
    #[arg(long, default_value_t = 0.003)]
    pub c: f64,
    #[arg(long, default_value_t = 1.0)]
    pub k0: f64,
    #[arg(long, default_value_t = 0.5)]
    pub kappa: f64,
}

impl ModelArgs {
    fn load(&self) -> Result<RealPoly> {
        if self.model == "shaw-pierre" {
            return Ok(shaw_pierre_field(ShawPierre { c: self.c, k0: self.k0, kappa: self.kappa })?);
        }
        let text = std::fs::read_to_string(&self.model).with_context(|| format!("reading model {}", self.model))?;
        serde_json::from_str(&text).with_context(|| format!("parsing model {}", self.model))
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    Densify,
    Inverse,
    None,
}

#[derive(Args, Debug, Serialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 100)]
    pub traj: usize,
    #[arg(long, default_value_t = 16)]
    pub points: usize,
    /// Sampling period.
    #[arg(long, default_value_t = 0.8)]
    pub dt: f64,
    #[arg(long, default_value_t = 0.4)]
    pub cube_width: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Scaling::Densify)]
    pub scaling: Scaling,
    #[arg(long, default_value_t = 64)]
    pub substeps: usize,
    #[arg(long, short, default_value = "data.csv")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Beta {
    Auto,
    Value(f64),
}

fn parse_beta(s: &str) -> std::result::Result<Beta, String> {
    if s == "auto" {
        return Ok(Beta::Auto);
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 => Ok(Beta::Value(v)),
        _ => Err(format!("expected `auto` or a positive number, got `{s}`")),
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    Mesh,
    Linear,
}

#[derive(Args, Debug, Serialize)]
pub struct FitArgs {
    /// Training data CSV (with its `.json` sidecar).
    #[arg(long)]
    pub data: PathBuf,
    /// Testing data CSV.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    #[arg(long, default_value_t = 2.0)]
    pub sigma: f64,
    #[arg(long, default_value = "auto", value_parser = parse_beta)]
    pub beta: Beta,
    /// Eigenvalue index (slow modes first) of the fitted pair.
    #[arg(long, default_value_t = 0)]
    pub mode: usize,
    #[arg(long, value_enum, default_value_t = Penalty::Mesh)]
    pub penalty: Penalty,
    #[arg(long, default_value_t = 10)]
    pub n_r: usize,
    #[arg(long, default_value_t = 24)]
    pub n_theta: usize,
    /// Penalty mesh radius; defaults to the largest sample norm.
    #[arg(long)]
    pub rmax: Option<f64>,
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub grad_tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pub init_noise: f64,
    #[arg(long, short, default_value = "foliation.json")]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Flow,
    Map,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Near,
    Submersion,
    Conjugate,
}

#[derive(Args, Debug, Serialize)]
pub struct ExpandArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = ModelKind::Flow)]
    pub dynamics: ModelKind,
    #[arg(long, default_value_t = 5)]
    pub order: usize,
    /// Eigenvalue index (slow modes first); its conjugate is added.
    #[arg(long, default_value_t = 0)]
    pub mode: usize,
    #[arg(long, value_enum, default_value_t = Policy::Near)]
    pub policy: Policy,
    /// Near-resonance margin for the default policy.
    #[arg(long, default_value_t = 0.1)]
    pub tol: f64,
    /// Sampling period recorded with map models.
    #[arg(long)]
    pub period: Option<f64>,
    #[arg(long, short, default_value = "foliation.json")]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Chart {
    Poly,
    Newton,
}

impl From<Chart> for ChartMethod {
    fn from(c: Chart) -> Self {
        match c {
            Chart::Poly => ChartMethod::PolyIteration,
            Chart::Newton => ChartMethod::PointwiseNewton,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct BackboneArgs {
    #[arg(long)]
    pub foliation: PathBuf,
    /// A complementary foliation; enables the SSM curves.
    #[arg(long)]
    pub partner: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub rmax: f64,
    #[arg(long, default_value_t = 50)]
    pub grid: usize,
    #[arg(long, default_value_t = 360)]
    pub ntheta: usize,
    #[arg(long, value_enum, default_value_t = Chart::Poly)]
    pub chart: Chart,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Inversion {
    Iterative,
    Newton,
}

#[derive(Args, Debug, Serialize)]
pub struct ReconstructArgs {
    /// Foliations whose selections span the state space, in order.
    #[arg(long = "foliation", required = true)]
    pub foliations: Vec<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Initial condition, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub x0: Vec<f64>,
    #[arg(long, default_value_t = 32)]
    pub steps: usize,
    /// Sampling period; defaults to the foliations' period.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, default_value_t = 64)]
    pub substeps: usize,
    #[arg(long, value_enum, default_value_t = Inversion::Iterative)]
    pub inversion: Inversion,
    #[arg(long, short, default_value = "errors.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct LeavesArgs {
    #[arg(long)]
    pub foliation: PathBuf,
    /// Largest leaf parameter radius.
    #[arg(long, default_value_t = 0.05)]
    pub rmax: f64,
    /// Parameter radii per angle.
    #[arg(long, default_value_t = 5)]
    pub nz: usize,
    #[arg(long, default_value_t = 8)]
    pub nangles: usize,
    /// Samples along each transverse axis.
    #[arg(long, default_value_t = 11)]
    pub ny: usize,
    #[arg(long, default_value_t = 0.02)]
    pub ymax: f64,
    #[arg(long, value_enum, default_value_t = Chart::Poly)]
    pub chart: Chart,
    #[arg(long, short, default_value = "leaves.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ReportArgs {
    /// Manifest files or directories containing `manifest.jsonl`.
    #[arg(default_value = ".")]
    pub paths: Vec<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Fit(a) => fit(a),
        Command::Expand(a) => expand(a),
        Command::Backbone(a) => backbone(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Leaves(a) => leaves(a),
        Command::Report(a) => report(a),
    }
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn create_parent(p: &Path) -> Result<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let start = Instant::now();
    let g = a.model.load()?;
    if g.domain_dim() != g.codomain_dim() {
        bail!("model must map R^n to itself");
    }
    let cfg = GeneratorConfig {
        trajectories: a.traj,
        points: a.points,
        period: a.dt,
        cube_width: a.cube_width,
        seed: a.seed,
        substeps: a.substeps,
        scaling: match a.scaling {
            Scaling::Densify => IcScaling::Densify,
            Scaling::Inverse => IcScaling::Inverse,
            Scaling::None => IcScaling::None,
        },
    };
    let mut ds = generate_dataset(&g, &cfg)?;
    ds.provenance = json!({ "model": a.model, "generator": cfg });
    create_parent(&a.out)?;
    ds.save(&a.out)?;
    println!(
        "wrote {} states in {} trajectories to {} (max |x| = {})",
        ds.state_count(),
        ds.trajectories.len(),
        a.out.display(),
        format_f64(ds.max_norm())
    );
    let mut m = RunManifest::new("generate", serde_json::to_value(&a)?, start.elapsed());
    m.outputs = vec![show(&a.out), show(&isf_core::data::sidecar_path(&a.out))];
    m.seed = Some(a.seed);
    m.append()?;
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let start = Instant::now();
    let train = TrajectoryDataset::load(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let test = a
        .test
        .as_ref()
        .map(|p| TrajectoryDataset::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    let cfg = FitConfig {
        alpha: a.order,
        sigma: a.sigma,
        beta: match a.beta {
            Beta::Auto => None,
            Beta::Value(v) => Some(v),
        },
        penalty: match a.penalty {
            Penalty::Mesh => PenaltyMode::ResonantMesh,
            Penalty::Linear => PenaltyMode::LinearNorm,
        },
        n_r: a.n_r,
        n_theta: a.n_theta,
        r_max: a.rmax,
        mode: a.mode,
        init_noise: a.init_noise,
        seed: a.seed,
        max_iter: a.max_iter,
        grad_tol: a.grad_tol,
        ..Default::default()
    };
    let out = fit_isf(&train.pairs(), &cfg)?;
    let mut fol = out.foliation;
    if let Some(t) = &test {
        fol.residuals.testing = Some(residual_metric(&fol, &t.pairs())?);
    }
    create_parent(&a.out)?;
    fol.save(&a.out)?;

    let label = format!("DATA O({}) σ={}", a.order, a.sigma);
    let e = format!("E{}", a.mode / 2 + 1);
    println!("{:<20} | {:<24} | {:<24}", "", format!("training {e}"), format!("testing {e}"));
    println!(
        "{:<20} | {:<24} | {:<24}",
        label,
        format_f64(fol.residuals.training.unwrap_or(f64::NAN)),
        fol.residuals.testing.map_or("-".to_string(), format_f64)
    );
    println!(
        "optimizer: {} iterations, {:?}, loss {}, beta {}",
        out.optimizer.iterations,
        out.optimizer.termination,
        format_f64(out.optimizer.value),
        format_f64(out.beta)
    );

    let mut m = RunManifest::new("fit", serde_json::to_value(&out.config)?, start.elapsed());
    m.inputs = std::iter::once(show(&a.data)).chain(a.test.as_deref().map(show)).collect();
    m.outputs = vec![show(&a.out)];
    m.seed = Some(a.seed);
    m.residuals = json!({
        "order": a.order,
        "sigma": a.sigma,
        "mode": a.mode,
        "training": fol.residuals.training,
        "testing": fol.residuals.testing,
    });
    m.append()?;
    Ok(())
}

fn expand(a: ExpandArgs) -> Result<()> {
    let start = Instant::now();
    let model = a.model.load()?;
    let dynamics = match a.dynamics {
        ModelKind::Flow => Dynamics::Flow,
        ModelKind::Map => Dynamics::Map,
    };
    let spec = eig_full(&model.jacobian0(), dynamics)?;
    let sel = spec.closed_selection(&[a.mode])?;
    let mut spec = spec.with_selection(&sel)?;
    if let Some(t) = a.period {
        spec = spec.with_period(t);
    }
    let policy = match a.policy {
        Policy::Near => ResonancePolicy::NearResonant { tol: a.tol },
        Policy::Submersion => ResonancePolicy::AlwaysSubmersion,
        Policy::Conjugate => ResonancePolicy::AlwaysConjugate,
    };
    let ef = match dynamics {
        Dynamics::Flow => solve_isf_series_vf(&model, &spec, a.order, policy)?,
        Dynamics::Map => solve_isf_series_map(&model, &spec, a.order, policy)?,
    };
    let fol = realify_foliation(&ef)?;
    create_parent(&a.out)?;
    fol.save(&a.out)?;
    println!(
        "expanded order {} foliation for eigenvalues {:?}; {} internal resonance choices; wrote {}",
        a.order,
        sel.iter().map(|&k| spec.eigenvalues[k]).collect::<Vec<_>>(),
        ef.choices.len(),
        a.out.display()
    );
    let mut m = RunManifest::new("expand", serde_json::to_value(&a)?, start.elapsed());
    m.outputs = vec![show(&a.out)];
    m.append()?;
    Ok(())
}

fn load_foliation(p: &Path) -> Result<Foliation> {
    Foliation::load(p).with_context(|| format!("loading foliation {}", p.display()))
}

fn write_curve(dir: &Path, kind: CurveKind, curve: &isf_core::analysis::BackboneCurve) -> Result<PathBuf> {
    let path = dir.join(format!("backbone_{}.csv", kind.name()));
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
    write_curve_csv(&mut f, curve)?;
    Ok(path)
}

fn backbone(a: BackboneArgs) -> Result<()> {
    let start = Instant::now();
    let fol = load_foliation(&a.foliation)?;
    let grid = radius_grid(a.rmax, a.grid)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let frames = leaf_frames(&fol.u)?;
    let chart = leaf_chart(&fol.u, &frames, a.chart.into())?;
    let mut outputs = Vec::new();
    let mut invalid = 0;
    for kind in [CurveKind::Isf, CurveKind::DampingIsf] {
        let curve = backbone_curves(&fol, Amplitude::Chart(&chart), &grid, kind, a.ntheta)?;
        invalid = curve.samples.iter().filter(|s| !s.valid).count();
        outputs.push(write_curve(&a.out_dir, kind, &curve)?);
    }
    if let Some(p) = &a.partner {
        let partner = load_foliation(p)?;
        let atlas = composite_submersion(vec![fol.clone(), partner])?;
        let w = ssm_immersion(&atlas, 0)?;
        for kind in [CurveKind::Ssm, CurveKind::DampingSsm] {
            let curve = backbone_curves(&fol, Amplitude::Immersion(&w), &grid, kind, a.ntheta)?;
            outputs.push(write_curve(&a.out_dir, kind, &curve)?);
        }
    }
    for o in &outputs {
        println!("wrote {}", o.display());
    }
    if invalid > 0 {
        println!("{invalid} of {} radii have no valid amplitude", grid.len());
    }
    let mut m = RunManifest::new("backbone", serde_json::to_value(&a)?, start.elapsed());
    m.inputs = std::iter::once(show(&a.foliation)).chain(a.partner.as_deref().map(show)).collect();
    m.outputs = outputs.iter().map(|p| show(p)).collect();
    m.append()?;
    Ok(())
}

fn reconstruct(a: ReconstructArgs) -> Result<()> {
    let start = Instant::now();
    let fols = a.foliations.iter().map(|p| load_foliation(p)).collect::<Result<Vec<_>>>()?;
    let period = match a.dt.or(fols[0].period) {
        Some(t) => t,
        None => bail!("no sampling period: pass --dt"),
    };
    let g = a.model.load()?;
    let traj = integrate_sample(&g, &a.x0, period, a.steps, period / a.substeps as f64)?;
    let atlas = composite_submersion(fols)?;
    let mode = match a.inversion {
        Inversion::Iterative => InversionMode::Iterative,
        Inversion::Newton => InversionMode::Newton,
    };
    let errs = reconstruction_errors(&atlas, &traj, period, mode)?;
    create_parent(&a.out)?;
    write_errors_csv(std::io::BufWriter::new(std::fs::File::create(&a.out)?), &errs)?;
    let fw_max = errs.forward.iter().copied().fold(0.0, f64::max);
    let missing = errs.backward.iter().filter(|b| b.is_none()).count();
    println!("max err_fw {}; {} of {} inversions failed; wrote {}", format_f64(fw_max), missing, errs.backward.len(), a.out.display());
    let mut m = RunManifest::new("reconstruct", serde_json::to_value(&a)?, start.elapsed());
    m.inputs = a.foliations.iter().map(|p| show(p)).collect();
    m.outputs = vec![show(&a.out)];
    m.residuals = json!({ "max_err_fw": fw_max, "failed_inversions": missing });
    m.append()?;
    Ok(())
}

fn leaves(a: LeavesArgs) -> Result<()> {
    let start = Instant::now();
    let fol = load_foliation(&a.foliation)?;
    if fol.nu() != 2 {
        bail!("leaf sampling needs a two-dimensional parameter space");
    }
    let frames = leaf_frames(&fol.u)?;
    let chart = leaf_chart(&fol.u, &frames, a.chart.into())?;
    let mut zs = vec![vec![0.0, 0.0]];
    for i in 1..=a.nz {
        let r = a.rmax * i as f64 / a.nz as f64;
        for k in 0..a.nangles {
            let th = 2.0 * std::f64::consts::PI * k as f64 / a.nangles as f64;
            zs.push(vec![r * th.cos(), r * th.sin()]);
        }
    }
    let m_perp = fol.n() - 2;
    let mut ys = Vec::new();
    for axis in 0..m_perp {
        for j in 0..a.ny {
            let s = if a.ny == 1 { 0.0 } else { -a.ymax + 2.0 * a.ymax * j as f64 / (a.ny - 1) as f64 };
            let mut y = vec![0.0; m_perp];
            y[axis] = s;
            ys.push(y);
        }
    }
    let cloud = leaf_point_cloud(&chart, &zs, &ys)?;
    create_parent(&a.out)?;
    write_point_cloud(std::io::BufWriter::new(std::fs::File::create(&a.out)?), fol.n(), &cloud)?;
    let missing = cloud.iter().filter(|p| p.state.is_none()).count();
    println!("wrote {} leaf points ({missing} not converged) to {}", cloud.len(), a.out.display());
    let mut m = RunManifest::new("leaves", serde_json::to_value(&a)?, start.elapsed());
    m.inputs = vec![show(&a.foliation)];
    m.outputs = vec![show(&a.out)];
    m.append()?;
    Ok(())
}

#[derive(Default)]
struct Row {
    training: BTreeMap<usize, f64>,
    testing: BTreeMap<usize, f64>,
}

fn report(a: ReportArgs) -> Result<()> {
    let mut runs = Vec::new();
    for p in &a.paths {
        let file = if p.is_dir() { p.join(manifest::FILE_NAME) } else { p.clone() };
        runs.extend(manifest::read_all(&file)?);
    }
    // (order, sigma) -> mode -> residuals; later runs replace earlier ones
    let mut table: BTreeMap<(u64, String), Row> = BTreeMap::new();
    let mut modes = std::collections::BTreeSet::new();
    for r in runs.iter().filter(|r| r.subcommand == "fit") {
        let res = &r.residuals;
        let (Some(order), Some(sigma), Some(mode)) = (res["order"].as_u64(), res["sigma"].as_f64(), res["mode"].as_u64())
        else {
            continue;
        };
        let mode = mode as usize;
        modes.insert(mode);
        let row = table.entry((order, sigma.to_string())).or_default();
        if let Some(v) = res["training"].as_f64() {
            row.training.insert(mode, v);
        }
        if let Some(v) = res["testing"].as_f64() {
            row.testing.insert(mode, v);
        }
    }
    if table.is_empty() {
        bail!("no fit runs found");
    }
    let modes: Vec<usize> = modes.into_iter().collect();
    let mut text = String::new();
    let mut header = vec![String::new()];
    for m in &modes {
        header.push(format!("training E{}", m / 2 + 1));
    }
    for m in &modes {
        header.push(format!("testing E{}", m / 2 + 1));
    }
    text.push_str(&header.iter().map(|h| format!("{h:<24}")).collect::<Vec<_>>().join("| "));
    text.push('\n');
    let cell = |v: Option<&f64>| v.map_or("-".to_string(), |x| format_f64(*x));
    for ((order, sigma), row) in &table {
        let mut cells = vec![format!("DATA O({order}) σ={sigma}")];
        cells.extend(modes.iter().map(|m| cell(row.training.get(m))));
        cells.extend(modes.iter().map(|m| cell(row.testing.get(m))));
        text.push_str(&cells.iter().map(|h| format!("{h:<24}")).collect::<Vec<_>>().join("| "));
        text.push('\n');
    }
    print!("{text}");
    if let Some(out) = &a.out {
        create_parent(out)?;
        std::fs::write(out, &text)?;
    }
    Ok(())
}
