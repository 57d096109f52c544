//! Command implementations behind the `pzd` binary.
//!
//! Every command reads a [`RunConfig`], writes its artifacts into the output
//! directory and returns the computed result. JSON artifacts embed the
//! resolved configuration; each CSV file gets a `<name>.json` sidecar with the
//! configuration and run metadata. Nothing time- or host-dependent is written,
//! so identical inputs give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use pzd_core::bounds_audit::{audit_all, default_constellations, render_table, AuditResult};
use pzd_core::channel::{make_expansion, ChannelParams, PolarPoint};
use pzd_core::constellation::{ConstraintSet, RingConstellation};
use pzd_core::infomath::{expansion_for, mutual_information, QuadratureGrid};
use pzd_core::montecarlo::{mc_mutual_information, validate_pdf, GoodnessReport, HistogramSpec, McMutualInformation, SimConfig};
use pzd_core::optimizer::{solver_for, CapacitySolver, KktReport, SolveConfig, Solution};
use pzd_core::PzdError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    /// Integration steps per simulated sample.
    pub steps: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            steps: 1000,
            samples: 1_000_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdfSettings {
    pub r0: f64,
    pub phi0: f64,
    pub r_bins: usize,
    pub phi_bins: usize,
    /// Upper end of the amplitude grid; `r0 + 8 sqrt(sigma^2 L)` when absent.
    pub r_max: Option<f64>,
    pub series_tol: f64,
}

impl Default for PdfSettings {
    fn default() -> Self {
        Self {
            r0: 1.0,
            phi0: 0.0,
            r_bins: 64,
            phi_bins: 64,
            r_max: None,
            series_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSettings {
    /// Histogram for the goodness-of-fit check at the outermost ring; a
    /// 16 x 16 disc out to `r0 + 4 sqrt(sigma^2 L)` when absent.
    pub histogram: Option<HistogramSpec>,
    pub goodness: bool,
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            histogram: None,
            goodness: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSettings {
    pub points: usize,
    /// Largest input radius audited; the peak of the constraint when absent.
    pub r0_max: Option<f64>,
}

impl Default for AuditSettings {
    fn default() -> Self {
        Self {
            points: 10_000,
            r0_max: None,
        }
    }
}

/// Full configuration of a run. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub channel: ChannelParams,
    pub constraint: ConstraintSet,
    pub solver: SolveConfig,
    pub sim: SimSettings,
    pub pdf: PdfSettings,
    pub mc: McSettings,
    pub audit: AuditSettings,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            channel: ChannelParams::default(),
            constraint: ConstraintSet::peak(3.0).expect("valid"),
            solver: SolveConfig::default(),
            sim: SimSettings::default(),
            pdf: PdfSettings::default(),
            mc: McSettings::default(),
            audit: AuditSettings::default(),
            output_dir: PathBuf::from("pzd-out"),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.constraint.validate()?;
        self.solver.validate()?;
        self.sim_config()?;
        if self.pdf.r_bins == 0 || self.pdf.phi_bins == 0 {
            bail!("pdf grid needs at least one bin per axis");
        }
        Ok(())
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let cfg = SimConfig {
            steps: self.sim.steps,
            samples: self.sim.samples,
            seed: self.sim.seed,
            params: self.channel,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies the global command-line overrides.
    pub fn apply(&mut self, g: &GlobalArgs) {
        if let Some(out) = &g.out {
            self.output_dir = out.clone();
        }
        if let Some(seed) = g.seed {
            self.sim.seed = seed;
        }
        if let Some(tol) = g.tol {
            self.solver.kkt_tol = tol;
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pzd", version, about = "Capacity and KKT certificates for the zero-dispersion fiber channel")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Monte-Carlo seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "PZD_NUM_THREADS")]
    pub threads: Option<usize>,
    /// KKT tolerance in nats.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the conditional density on a polar grid.
    Pdf(PdfArgs),
    /// Solve for the capacity-achieving ring constellation.
    Capacity,
    /// Certify a given constellation.
    Kkt(InputArgs),
    /// Monte-Carlo mutual information and goodness of fit.
    Mc(InputArgs),
    /// Check the analytic bounds at quasi-random points.
    Audit(AuditArgs),
    /// Capacity over a list of parameter values.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct PdfArgs {
    #[arg(long)]
    pub r0: Option<f64>,
    #[arg(long)]
    pub phi0: Option<f64>,
    #[arg(long)]
    pub r_bins: Option<usize>,
    #[arg(long)]
    pub phi_bins: Option<usize>,
    #[arg(long)]
    pub r_max: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Constellation JSON, or a `solution.json` written by `capacity`.
    #[arg(long)]
    pub constellation: PathBuf,
}

#[derive(Debug, Clone, Default, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Rho,
    Budget,
    Gamma,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub param: SweepParam,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
}

/// Round-trip float formatting without runaway decimal expansions.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v != 0.0 && a.is_finite() && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite()).map(fmt_f64).unwrap_or_default()
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, cfg: &RunConfig, command: &str, result: &T) -> Result<PathBuf> {
    let doc = json!({ "command": command, "config": cfg, "result": result });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn write_csv(dir: &Path, name: &str, cfg: &RunConfig, command: &str, meta: Value, body: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    write_json(dir, &format!("{name}.json"), cfg, command, &meta)?;
    Ok(path)
}

/// Reads a bare constellation or the constellation inside a solution file.
pub fn load_constellation(path: &Path) -> Result<RingConstellation> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let inner = v
        .get("result")
        .and_then(|r| r.get("constellation"))
        .or_else(|| v.get("constellation"))
        .unwrap_or(&v);
    serde_json::from_value(inner.clone()).with_context(|| format!("constellation in {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdfOutput {
    pub r0: f64,
    pub phi0: f64,
    pub r_max: f64,
    pub r_bins: usize,
    pub phi_bins: usize,
    pub truncation_m: usize,
    pub tail_bound: f64,
    pub min_density: f64,
    /// Riemann sum of the density over the grid.
    pub total_mass: f64,
}

pub fn cmd_pdf(cfg: &RunConfig, args: &PdfArgs) -> Result<PdfOutput> {
    let p = &cfg.pdf;
    let r0 = args.r0.unwrap_or(p.r0);
    let phi0 = args.phi0.unwrap_or(p.phi0);
    let r_bins = args.r_bins.unwrap_or(p.r_bins);
    let phi_bins = args.phi_bins.unwrap_or(p.phi_bins);
    if r_bins == 0 || phi_bins == 0 {
        bail!("pdf grid needs at least one bin per axis");
    }
    let sd = cfg.channel.noise_power().sqrt();
    let r_max = args.r_max.or(p.r_max).unwrap_or(r0 + 8.0 * sd);
    let exp = make_expansion(cfg.channel, p.series_tol, r_max, r0.max(f64::MIN_POSITIVE))?;
    let x0 = PolarPoint::new(r0, phi0)?;
    let dr = r_max / r_bins as f64;
    let dphi = std::f64::consts::TAU / phi_bins as f64;
    let rows = pzd_core::par::try_map_range(r_bins, |i| -> pzd_core::Result<Vec<(f64, f64, f64)>> {
        let r = dr * (i as f64 + 0.5);
        (0..phi_bins)
            .map(|j| {
                let phi = dphi * (j as f64 + 0.5);
                Ok((r, phi, exp.joint_pdf(PolarPoint { r, phi }, x0)?))
            })
            .collect()
    })?;
    let mut body = String::from("r,phi,density\n");
    let mut total = 0.0;
    let mut min_density = f64::INFINITY;
    for (r, phi, d) in rows.iter().flatten() {
        writeln!(body, "{},{},{}", fmt_f64(*r), fmt_f64(*phi), fmt_f64(*d))?;
        total += d * dr * dphi;
        min_density = min_density.min(*d);
    }
    let out = PdfOutput {
        r0,
        phi0,
        r_max,
        r_bins,
        phi_bins,
        truncation_m: exp.truncation_m,
        tail_bound: exp.tail_bound,
        min_density,
        total_mass: total,
    };
    let dir = out_dir(cfg)?;
    write_csv(dir, "pdf.csv", cfg, "pdf", serde_json::to_value(&out)?, &body)?;
    Ok(out)
}

fn kkt_csv(report: &KktReport) -> Result<String> {
    let mut body = String::from("r0,lhs_nats,envelope_lower,envelope_upper\n");
    for s in &report.samples {
        writeln!(
            body,
            "{},{},{},{}",
            fmt_f64(s.r0),
            fmt_f64(s.lhs),
            fmt_opt(s.envelope_lower),
            fmt_opt(s.envelope_upper)
        )?;
    }
    Ok(body)
}

fn kkt_meta(report: &KktReport) -> Value {
    json!({
        "capacity": report.capacity,
        "nu": report.nu,
        "worst_violation": report.worst_violation,
        "certified": report.certified,
        "r0_range": report.r0_range,
    })
}

/// One-line-per-field summary of a solution.
pub fn summary_table(sol: &Solution) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "capacity (nats)   {:.9}", sol.mi.mi);
    let _ = writeln!(s, "capacity (bits)   {:.9}", sol.mi.mi / std::f64::consts::LN_2);
    let _ = writeln!(s, "rings             {}", sol.constellation.len());
    let _ = writeln!(s, "radii             {:?}", sol.constellation.radii());
    let _ = writeln!(s, "probabilities     {:?}", sol.constellation.probs());
    let _ = writeln!(s, "nu                {}", sol.kkt.nu);
    let _ = writeln!(s, "worst violation   {:.3e}", sol.kkt.worst_violation);
    let _ = writeln!(s, "certified         {}", sol.kkt.certified);
    s
}

pub fn cmd_capacity(cfg: &RunConfig) -> Result<Solution> {
    let solver = solver_for(cfg.channel, &cfg.constraint, &cfg.solver)?;
    let sol = solver.solve()?;
    let dir = out_dir(cfg)?;
    write_json(dir, "solution.json", cfg, "capacity", &sol)?;
    write_csv(dir, "lhs.csv", cfg, "capacity", kkt_meta(&sol.kkt), &kkt_csv(&sol.kkt)?)?;
    Ok(sol)
}

pub fn cmd_kkt(cfg: &RunConfig, args: &InputArgs) -> Result<KktReport> {
    let c = load_constellation(&args.constellation)?;
    let solver = solver_for(cfg.channel, &cfg.constraint, &cfg.solver)?;
    let capacity = solver.table_mi(&c)?;
    let report = solver.kkt_certificate(&c, capacity, &[])?;
    let dir = out_dir(cfg)?;
    write_json(dir, "kkt.json", cfg, "kkt", &json!({ "constellation": c, "report": report }))?;
    write_csv(dir, "kkt.csv", cfg, "kkt", kkt_meta(&report), &kkt_csv(&report)?)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McOutput {
    pub constellation: RingConstellation,
    pub quadrature_mi: f64,
    pub quadrature_error_estimate: f64,
    pub mc: McMutualInformation,
    /// `|mc - quadrature|` in standard errors.
    pub z_score: f64,
    pub goodness_x0: Option<PolarPoint>,
    pub goodness: Option<GoodnessReport>,
    /// Set when the configured histogram was too fine and a coarser one was used.
    pub histogram_used: Option<HistogramSpec>,
}

pub fn cmd_mc(cfg: &RunConfig, args: &InputArgs) -> Result<McOutput> {
    let c = load_constellation(&args.constellation)?;
    run_mc(cfg, &c)
}

pub fn run_mc(cfg: &RunConfig, c: &RingConstellation) -> Result<McOutput> {
    let sim = cfg.sim_config()?;
    let r0_max = c.max_radius().max(f64::MIN_POSITIVE);
    let exp = expansion_for(cfg.channel, cfg.solver.series_tol, r0_max, &cfg.solver.grid)?;
    let grid = QuadratureGrid::new(&exp, &cfg.solver.grid)?;
    let quad = mutual_information(&exp, c, &grid)?;
    let mc = mc_mutual_information(&sim, &exp, c)?;
    let z_score = mc.estimate.z_score(quad.mi);
    let (mut goodness, mut goodness_x0, mut used) = (None, None, None);
    if cfg.mc.goodness {
        let x0 = PolarPoint::new(c.max_radius(), 0.0)?;
        let sd = cfg.channel.noise_power().sqrt();
        let mut bins = cfg.mc.histogram.clone().unwrap_or_else(|| HistogramSpec::disc(16, 16, x0.r + 4.0 * sd));
        let report = match validate_pdf(&sim, &exp, x0, &bins) {
            Err(PzdError::Binning {
                suggested_r_bins,
                suggested_phi_bins,
                ..
            }) => {
                bins.r_bins = suggested_r_bins.max(1);
                bins.phi_bins = suggested_phi_bins.max(1);
                used = Some(bins.clone());
                validate_pdf(&sim, &exp, x0, &bins)?
            }
            other => other?,
        };
        goodness = Some(report);
        goodness_x0 = Some(x0);
    }
    let out = McOutput {
        constellation: c.clone(),
        quadrature_mi: quad.mi,
        quadrature_error_estimate: quad.quadrature_error_estimate,
        mc,
        z_score,
        goodness_x0,
        goodness,
        histogram_used: used,
    };
    let dir = out_dir(cfg)?;
    write_json(dir, "mc.json", cfg, "mc", &out)?;
    Ok(out)
}

pub fn cmd_audit(cfg: &RunConfig, args: &AuditArgs) -> Result<Vec<AuditResult>> {
    let points = args.points.unwrap_or(cfg.audit.points);
    let r0_max = cfg
        .audit
        .r0_max
        .or(cfg.constraint.rho)
        .unwrap_or(cfg.solver.average_r0_max.min(4.0));
    let exp = expansion_for(cfg.channel, cfg.solver.series_tol, r0_max, &cfg.solver.grid)?;
    let res = audit_all(&exp, &default_constellations(r0_max), points, cfg.sim.seed)?;
    let dir = out_dir(cfg)?;
    write_json(dir, "audit.json", cfg, "audit", &res)?;
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub capacity: f64,
    pub rings: usize,
    pub certified: bool,
    pub nu: f64,
    pub worst_violation: f64,
}

fn swept(cfg: &RunConfig, param: SweepParam, v: f64) -> Result<RunConfig> {
    let mut c = cfg.clone();
    match param {
        SweepParam::Rho => {
            if c.constraint.rho.is_none() {
                bail!("sweeping rho needs a peak or joint constraint");
            }
            c.constraint.rho = Some(v);
        }
        SweepParam::Budget => match c.constraint.costs.first_mut() {
            Some(k) => k.budget = v,
            None => bail!("sweeping the budget needs an average or joint constraint"),
        },
        SweepParam::Gamma => c.channel.gamma = v,
    }
    c.validate()?;
    Ok(c)
}

pub fn cmd_sweep(cfg: &RunConfig, args: &SweepArgs) -> Result<Vec<SweepRow>> {
    let v = &args.values;
    let up = v.windows(2).all(|w| w[0] < w[1]);
    let down = v.windows(2).all(|w| w[0] > w[1]);
    if v.is_empty() || !(up || down) {
        bail!("sweep values must be strictly monotone, got {v:?}");
    }
    let mut rows = Vec::with_capacity(v.len());
    for &x in v {
        let c = swept(cfg, args.param, x)?;
        let sol = solver_for(c.channel, &c.constraint, &c.solver)?.solve()?;
        rows.push(SweepRow {
            value: x,
            capacity: sol.mi.mi,
            rings: sol.constellation.len(),
            certified: sol.kkt.certified,
            nu: sol.kkt.nu,
            worst_violation: sol.kkt.worst_violation,
        });
    }
    let mut body = String::from("value,capacity_nats,rings,certified,nu,worst_violation\n");
    for r in &rows {
        writeln!(
            body,
            "{},{},{},{},{},{}",
            fmt_f64(r.value),
            fmt_f64(r.capacity),
            r.rings,
            r.certified,
            fmt_f64(r.nu),
            fmt_f64(r.worst_violation)
        )?;
    }
    let dir = out_dir(cfg)?;
    let meta = json!({ "param": args.param, "values": v });
    write_csv(dir, "sweep.csv", cfg, "sweep", meta, &body)?;
    Ok(rows)
}

pub fn sweep_table(param: SweepParam, rows: &[SweepRow]) -> String {
    let name = match param {
        SweepParam::Rho => "rho",
        SweepParam::Budget => "A",
        SweepParam::Gamma => "gamma",
    };
    let mut s = format!("{name:>10} {:>14} {:>6} {:>10}\n", "capacity", "rings", "certified");
    for r in rows {
        let _ = writeln!(s, "{:>10} {:>14.9} {:>6} {:>10}", r.value, r.capacity, r.rings, r.certified);
    }
    s
}

/// Solver for a configuration; used by tests that need the internals.
pub fn solver(cfg: &RunConfig) -> Result<CapacitySolver> {
    Ok(solver_for(cfg.channel, &cfg.constraint, &cfg.solver)?)
}

/// Parses arguments, resolves the configuration and runs one command.
pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&cli.global);
    cfg.validate()?;
    match &cli.command {
        Command::Pdf(a) => {
            let out = cmd_pdf(&cfg, a)?;
            println!(
                "pdf: {} x {} grid, M = {}, tail bound {:.3e}, mass {:.6}",
                out.r_bins, out.phi_bins, out.truncation_m, out.tail_bound, out.total_mass
            );
        }
        Command::Capacity => print!("{}", summary_table(&cmd_capacity(&cfg)?)),
        Command::Kkt(a) => {
            let r = cmd_kkt(&cfg, a)?;
            println!(
                "capacity {:.9} nats, nu {}, worst violation {:.3e}, certified {}",
                r.capacity, r.nu, r.worst_violation, r.certified
            );
        }
        Command::Mc(a) => {
            let r = cmd_mc(&cfg, a)?;
            println!(
                "MI: Monte Carlo {:.6} +/- {:.6}, quadrature {:.6} ({:.2} SE)",
                r.mc.estimate.mean, r.mc.estimate.stderr, r.quadrature_mi, r.z_score
            );
            if let Some(g) = &r.goodness {
                println!(
                    "histogram: chi2 {:.1} on {} dof, p = {:.3}, TV = {:.4}",
                    g.chi_square, g.dof, g.p_value, g.total_variation
                );
            }
        }
        Command::Audit(a) => print!("{}", render_table(&cmd_audit(&cfg, a)?)),
        Command::Sweep(a) => print!("{}", sweep_table(a.param, &cmd_sweep(&cfg, a)?)),
    }
    Ok(())
}

/// Caps the global worker pool.
#[cfg(feature = "parallel")]
pub fn init_threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        if n == 0 {
            bail!("--threads must be >= 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
pub fn init_threads(n: Option<usize>) -> Result<()> {
    if n == Some(0) {
        bail!("--threads must be >= 1");
    }
    Ok(())
}
