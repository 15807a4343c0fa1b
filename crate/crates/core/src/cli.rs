//! Command-line front end. Flags override values from an optional
//! `key = value` config file; every run writes `manifest.json` next to its
//! outputs with all defaults filled in.

use crate::data::Dataset;
use crate::dgp::{bias_curve, generate_sample, DgpSpec, OracleResult, Variant};
use crate::error::{Result, UqeError};
use crate::estimator::{EstimationConfig, FirstStage, PsKind};
use crate::harness::{self, ExperimentKind, ExperimentPlan, ExperimentResult};
use crate::io::{read_dataset, write_dataset, write_rows, Format};
use crate::stats::BandwidthRule;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "uqe", version, about = "Unconditional quantile effects of marginal interventions on an instrument")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the effect at one or more quantiles from a CSV sample.
    Estimate(DataArgs),
    /// Estimate the effect on the mean.
    MeanEffect(DataArgs),
    /// Marginal treatment effect curve on a propensity grid.
    MteCurve(DataArgs),
    /// Rejection rates of the no-effect test.
    Power(Opts),
    /// Coverage of the confidence intervals.
    Coverage(Opts),
    /// RMSE of the point estimate across sample sizes (paired seeds).
    Rmse(Opts),
    /// Population bias decomposition of the unconditional quantile regression.
    Bias(Opts),
    /// Population quantities of the simulation design.
    Oracle(Opts),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// CSV with columns y, d, z1[, z2..][, x1..]
    input: PathBuf,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Debug, Default, Args)]
struct Opts {
    #[arg(long)]
    tau: Option<String>,
    /// Comma list or start:stop:step.
    #[arg(long = "tau-grid")]
    tau_grid: Option<String>,
    /// logit, probit or series
    #[arg(long)]
    link: Option<String>,
    #[arg(long)]
    degree: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    /// silverman, fixed:<h> or undersmooth:<exponent>
    #[arg(long)]
    bandwidth: Option<String>,
    #[arg(long)]
    level: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long, alias = "replications")]
    reps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// csv or json
    #[arg(long)]
    format: Option<String>,
    /// Exit nonzero if any experiment cell is flagged.
    #[arg(long)]
    strict: bool,
    /// plain or covariate
    #[arg(long)]
    design: Option<String>,
    /// Propensity grid for mte-curve.
    #[arg(long = "u-grid")]
    u_grid: Option<String>,
    /// Also write a simulated sample (oracle).
    #[arg(long = "emit-sample")]
    emit_sample: bool,
    /// key = value file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

const KEYS: [&str; 18] = [
    "tau", "tau-grid", "link", "degree", "lambda", "bandwidth", "level", "beta", "rho", "n", "reps", "seed", "out",
    "format", "strict", "design", "u-grid", "emit-sample",
];

impl Opts {
    fn flags(&self) -> BTreeMap<&'static str, String> {
        let pairs: [(&'static str, &Option<String>); 16] = [
            ("tau", &self.tau),
            ("tau-grid", &self.tau_grid),
            ("link", &self.link),
            ("degree", &self.degree),
            ("lambda", &self.lambda),
            ("bandwidth", &self.bandwidth),
            ("level", &self.level),
            ("beta", &self.beta),
            ("rho", &self.rho),
            ("n", &self.n),
            ("reps", &self.reps),
            ("seed", &self.seed),
            ("out", &self.out),
            ("format", &self.format),
            ("design", &self.design),
            ("u-grid", &self.u_grid),
        ];
        let mut map: BTreeMap<&'static str, String> =
            pairs.into_iter().filter_map(|(k, v)| v.clone().map(|v| (k, v))).collect();
        if self.strict {
            map.insert("strict", "true".into());
        }
        if self.emit_sample {
            map.insert("emit-sample", "true".into());
        }
        map
    }
}

/// Parses a `key = value` config file. Blank lines and `#` comments are
/// ignored; unknown keys are rejected.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<&'static str, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| UqeError::Parse {
            line: i + 1,
            message: format!("expected 'key = value', found '{line}'"),
        })?;
        let key = k.trim().replace('_', "-");
        let key = KEYS.iter().find(|&&known| known == key).ok_or_else(|| UqeError::Parse {
            line: i + 1,
            message: format!("unknown key '{}'", k.trim()),
        })?;
        map.insert(*key, v.trim().trim_matches('"').to_string());
    }
    Ok(map)
}

fn parse_num<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| UqeError::InvalidInput(format!("--{key}: cannot parse '{raw}'")))
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(UqeError::InvalidInput(format!("--{key}: expected true or false, found '{other}'"))),
    }
}

/// Comma-separated values or an inclusive `start:stop:step` range.
pub fn parse_list(key: &str, raw: &str) -> Result<Vec<f64>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Err(UqeError::InvalidInput(format!("--{key}: empty list")));
    }
    let parts: Vec<&str> = raw.split(':').collect();
    if parts.len() == 3 {
        let (a, b, s): (f64, f64, f64) = (parse_num(key, parts[0])?, parse_num(key, parts[1])?, parse_num(key, parts[2])?);
        if !(s > 0.0) || b < a {
            return Err(UqeError::InvalidInput(format!("--{key}: range '{raw}' needs step > 0 and stop >= start")));
        }
        let count = ((b - a) / s + 1e-9).floor() as usize + 1;
        if count > 100_000 {
            return Err(UqeError::InvalidInput(format!("--{key}: range '{raw}' is too long")));
        }
        // round to the step's decimal grid so 0.1:0.9:0.1 yields 0.3, not 0.30000000000000004
        return Ok((0..count).map(|k| ((a + k as f64 * s) * 1e12).round() / 1e12).collect());
    }
    raw.split(',').map(|p| parse_num(key, p)).collect()
}

fn parse_bandwidth(raw: &str) -> Result<BandwidthRule> {
    let raw = raw.trim();
    if raw == "silverman" {
        return Ok(BandwidthRule::Silverman);
    }
    if let Some(h) = raw.strip_prefix("fixed:") {
        return Ok(BandwidthRule::Fixed(parse_num("bandwidth", h)?));
    }
    if let Some(e) = raw.strip_prefix("undersmooth:") {
        let exponent: f64 = parse_num("bandwidth", e)?;
        if !(exponent > 0.0 && exponent < 1.0 / 3.0) {
            return Err(UqeError::InvalidInput(format!(
                "--bandwidth: undersmoothing exponent {exponent} must lie in (0, 1/3)"
            )));
        }
        return Ok(BandwidthRule::Undersmoothed { exponent });
    }
    Err(UqeError::InvalidInput(format!(
        "--bandwidth: expected silverman, fixed:<h> or undersmooth:<exponent>, found '{raw}'"
    )))
}

/// Fully resolved settings of one run; serialized into the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    pub format: Format,
    pub estimation: EstimationConfig,
    pub tau_grid: Vec<f64>,
    pub design: Variant,
    pub beta: Vec<f64>,
    pub rho: Vec<f64>,
    pub n: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub strict: bool,
    pub u_grid: Option<Vec<f64>>,
    pub emit_sample: bool,
    pub plan: Option<ExperimentPlan>,
}

fn resolve(command: &str, input: Option<PathBuf>, opts: &Opts) -> Result<RunConfig> {
    let mut map = match &opts.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| UqeError::Io(format!("{}: {e}", path.display())))?;
            parse_config_file(&text)?
        }
        None => BTreeMap::new(),
    };
    map.extend(opts.flags());
    let get = |k: &str| map.get(k).map(String::as_str);

    if get("tau").is_some() && get("tau-grid").is_some() {
        return Err(UqeError::InvalidInput("--tau and --tau-grid are mutually exclusive".into()));
    }
    let kind = match command {
        "power" => Some(ExperimentKind::Power),
        "coverage" => Some(ExperimentKind::Coverage),
        "rmse" => Some(ExperimentKind::Rmse),
        _ => None,
    };
    let defaults = kind.map(ExperimentPlan::new);

    let mut est = EstimationConfig::default();
    if let Some(v) = get("link") {
        est.link = v.parse::<PsKind>()?;
    }
    if let Some(v) = get("degree") {
        est.basis.degree = parse_num("degree", v)?;
    }
    if let Some(v) = get("lambda") {
        est.basis.lambda = parse_num("lambda", v)?;
    }
    if let Some(v) = get("bandwidth") {
        est.bandwidth = parse_bandwidth(v)?;
    }
    if let Some(v) = get("level") {
        est.ci_level = parse_num("level", v)?;
    }

    let tau_grid = match (get("tau"), get("tau-grid")) {
        (Some(t), _) => vec![parse_num("tau", t)?],
        (_, Some(g)) => parse_list("tau-grid", g)?,
        _ => match (command, &defaults) {
            (_, Some(p)) => p.tau_grid.clone(),
            ("bias", _) => (1..20).map(|k| k as f64 / 20.0).collect(),
            _ => vec![0.5],
        },
    };
    for &tau in &tau_grid {
        est.with_tau(tau).validate()?;
    }
    est.tau = tau_grid[0];

    let beta = match get("beta") {
        Some(v) => parse_list("beta", v)?,
        None => defaults.as_ref().map(|p| p.beta_grid.clone()).unwrap_or_else(|| vec![1.0]),
    };
    let rho = match get("rho") {
        Some(v) => parse_list("rho", v)?,
        None => match (command, &defaults) {
            (_, Some(p)) => p.rho_grid.clone(),
            ("bias", _) => harness::TABLE_RHOS.to_vec(),
            _ => vec![0.5],
        },
    };
    let n: Vec<usize> = match get("n") {
        Some(v) => v.split(',').map(|p| parse_num("n", p)).collect::<Result<_>>()?,
        None => defaults.as_ref().map(|p| p.sizes.clone()).unwrap_or_else(|| vec![1000]),
    };
    let reps = match get("reps") {
        Some(v) => parse_num("reps", v)?,
        None => defaults.as_ref().map(|p| p.replications).unwrap_or(1000),
    };
    let seed = match get("seed") {
        Some(v) => parse_num("seed", v)?,
        None => defaults.as_ref().map(|p| p.seed).unwrap_or(1),
    };
    let design = match get("design") {
        Some(v) => v.parse()?,
        None => Variant::Plain,
    };
    let format = match get("format") {
        Some(v) => v.parse()?,
        None => Format::Csv,
    };
    let strict = get("strict").map(|v| parse_bool("strict", v)).transpose()?.unwrap_or(false);
    let emit_sample = get("emit-sample").map(|v| parse_bool("emit-sample", v)).transpose()?.unwrap_or(false);
    let u_grid = get("u-grid").map(|v| parse_list("u-grid", v)).transpose()?;
    let out = PathBuf::from(get("out").unwrap_or("uqe-out"));

    if command != "oracle" && emit_sample {
        return Err(UqeError::InvalidInput("--emit-sample only applies to the oracle command".into()));
    }
    if emit_sample && (beta.len() != 1 || rho.len() != 1 || n.len() != 1) {
        return Err(UqeError::InvalidInput("--emit-sample needs a single --beta, --rho and --n".into()));
    }
    if u_grid.is_some() && command != "mte-curve" {
        return Err(UqeError::InvalidInput("--u-grid only applies to mte-curve".into()));
    }
    for &b in &beta {
        for &r in &rho {
            DgpSpec { variant: design, beta: b, rho: r, seed }.validate()?;
        }
    }

    let plan = match defaults {
        Some(mut p) => {
            p.variant = design;
            p.beta_grid = beta.clone();
            p.rho_grid = rho.clone();
            p.tau_grid = tau_grid.clone();
            p.sizes = n.clone();
            p.replications = reps;
            p.seed = seed;
            p.config = est;
            p.validate()?;
            Some(p)
        }
        None => None,
    };

    Ok(RunConfig {
        command: command.to_string(),
        input,
        out,
        format,
        estimation: est,
        tau_grid,
        design,
        beta,
        rho,
        n,
        reps,
        seed,
        strict,
        u_grid,
        emit_sample,
        plan,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    outputs: &'a [String],
}

struct Outputs<'a> {
    cfg: &'a RunConfig,
    files: Vec<String>,
}

impl<'a> Outputs<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self> {
        fs::create_dir_all(&cfg.out).map_err(|e| UqeError::Io(format!("{}: {e}", cfg.out.display())))?;
        Ok(Self { cfg, files: Vec::new() })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.cfg.out.join(name);
        let file = File::create(&path).map_err(|e| UqeError::Io(format!("{}: {e}", path.display())))?;
        self.files.push(name.to_string());
        Ok(BufWriter::new(file))
    }

    fn rows<T: Serialize>(&mut self, stem: &str, rows: &[T]) -> Result<()> {
        let format = self.cfg.format;
        let w = self.create(&format!("{stem}.{}", format.extension()))?;
        write_rows(rows, format, w)
    }

    fn finish(self) -> Result<()> {
        let path = self.cfg.out.join("manifest.json");
        let mut files = self.files;
        files.push("manifest.json".into());
        let manifest = Manifest { tool: "uqe", version: env!("CARGO_PKG_VERSION"), config: self.cfg, outputs: &files };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| UqeError::Io(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| UqeError::Io(format!("{}: {e}", path.display())))
    }
}

#[derive(Serialize)]
struct EstimateRow {
    tau: f64,
    y_tau: f64,
    pi_hat: f64,
    se: f64,
    ci_lo: f64,
    ci_hi: f64,
    ci_level: f64,
    n: usize,
    h: f64,
    f_hat: f64,
    f_prime: f64,
    t1: f64,
    t2: f64,
    v_tau: f64,
    ps_kind: String,
    clamp_rate: f64,
    test_statistic: f64,
    test_p_value: f64,
    reject_5pct: bool,
}

#[derive(Serialize)]
struct MeanRow {
    estimate: f64,
    se: f64,
    ci_lo: f64,
    ci_hi: f64,
    level: f64,
    t1: f64,
    t2m: f64,
    n: usize,
}

#[derive(Serialize)]
struct MteRow {
    tau: f64,
    u: f64,
    mte: f64,
}

#[derive(Serialize)]
struct CellRow {
    beta: f64,
    rho: f64,
    tau: f64,
    n: usize,
    replications: usize,
    completed: usize,
    failed: usize,
    flagged: bool,
    rate: f64,
    rate_se: f64,
    truth: Option<f64>,
    mean_estimate: f64,
    sd_estimate: f64,
    rmse: Option<f64>,
    /// kind:count pairs separated by ';'
    failures: String,
}

#[derive(Serialize)]
struct PowerPoint {
    rho: f64,
    tau: f64,
    n: usize,
    beta: f64,
    rejection_rate: f64,
    rate_se: f64,
}

#[derive(Serialize)]
struct KsRow {
    rho: f64,
    tau: f64,
    n: usize,
    draws: usize,
    ks_distance: f64,
}

#[derive(Serialize)]
struct OracleRow {
    beta: f64,
    rho: f64,
    tau: f64,
    y_tau: f64,
    f_y_tau: f64,
    pi: f64,
    a: f64,
    b1: f64,
    b2: f64,
    b: f64,
    identity_residual: f64,
}

impl From<&OracleResult> for OracleRow {
    fn from(r: &OracleResult) -> Self {
        Self {
            beta: r.beta,
            rho: r.rho,
            tau: r.tau,
            y_tau: r.y_tau,
            f_y_tau: r.f_y_tau,
            pi: r.pi_tau,
            a: r.a_tau,
            b1: r.b1_tau,
            b2: r.b2_tau,
            b: r.bias(),
            identity_residual: r.identity_residual(),
        }
    }
}

fn load(cfg: &RunConfig) -> Result<Dataset> {
    read_dataset(cfg.input.as_deref().expect("data commands carry an input path"))
}

fn cmd_estimate(cfg: &RunConfig) -> Result<i32> {
    let data = load(cfg)?;
    let first = FirstStage::fit(&data, &cfg.estimation)?;
    let mut rows = Vec::new();
    for &tau in &cfg.tau_grid {
        let stage = first.at_tau(&data, &cfg.estimation.with_tau(tau))?;
        let e = stage.estimate()?;
        let t = stage.no_effect_test()?;
        println!(
            "tau={:.3}  pi_hat={:.6}  se={:.6}  ci=[{:.6}, {:.6}]  T2 stat={:.3}",
            tau, e.pi_hat, e.se, e.ci.0, e.ci.1, t.statistic
        );
        rows.push(EstimateRow {
            tau,
            y_tau: e.y_tau,
            pi_hat: e.pi_hat,
            se: e.se,
            ci_lo: e.ci.0,
            ci_hi: e.ci.1,
            ci_level: e.ci_level,
            n: e.n,
            h: e.h,
            f_hat: e.f_hat,
            f_prime: e.f_prime,
            t1: e.t1,
            t2: e.t2,
            v_tau: e.v_tau,
            ps_kind: e.ps_kind,
            clamp_rate: e.clamp_rate,
            test_statistic: t.statistic,
            test_p_value: t.p_value,
            reject_5pct: t.reject_5pct,
        });
    }
    let mut out = Outputs::new(cfg)?;
    out.rows("estimate", &rows)?;
    out.finish()?;
    Ok(0)
}

fn cmd_mean_effect(cfg: &RunConfig) -> Result<i32> {
    let data = load(cfg)?;
    let m = FirstStage::fit(&data, &cfg.estimation)?.mean_effect(&data, cfg.estimation.ci_level)?;
    println!("mean effect={:.6}  se={:.6}  ci=[{:.6}, {:.6}]", m.estimate, m.se, m.ci.0, m.ci.1);
    let mut out = Outputs::new(cfg)?;
    out.rows(
        "mean_effect",
        &[MeanRow { estimate: m.estimate, se: m.se, ci_lo: m.ci.0, ci_hi: m.ci.1, level: m.level, t1: m.t1, t2m: m.t2m, n: m.n }],
    )?;
    out.finish()?;
    Ok(0)
}

fn cmd_mte(cfg: &RunConfig) -> Result<i32> {
    let data = load(cfg)?;
    let first = FirstStage::fit(&data, &cfg.estimation)?;
    let (lo, hi) = first.p_range();
    let grid = cfg
        .u_grid
        .clone()
        .unwrap_or_else(|| (1..10).map(|k| lo + (hi - lo) * k as f64 / 10.0).collect());
    let mut rows = Vec::new();
    for &tau in &cfg.tau_grid {
        let stage = first.at_tau(&data, &cfg.estimation.with_tau(tau))?;
        let curve = first.mte_curve(&stage, &grid)?;
        rows.extend(grid.iter().zip(curve).map(|(&u, mte)| MteRow { tau, u, mte }));
    }
    println!("{} curve points over u in [{:.4}, {:.4}]", rows.len(), lo, hi);
    let mut out = Outputs::new(cfg)?;
    out.rows("mte_curve", &rows)?;
    out.finish()?;
    Ok(0)
}

fn cell_rows(result: &ExperimentResult) -> Vec<CellRow> {
    result
        .cells
        .iter()
        .map(|c| CellRow {
            beta: c.beta,
            rho: c.rho,
            tau: c.tau,
            n: c.n,
            replications: c.replications,
            completed: c.completed,
            failed: c.failed(),
            flagged: c.flagged,
            rate: c.rate,
            rate_se: c.rate_se,
            truth: c.truth,
            mean_estimate: c.mean_estimate,
            sd_estimate: c.sd_estimate,
            rmse: c.rmse,
            failures: c.failures.iter().map(|(k, v)| format!("{k}:{v}")).collect::<Vec<_>>().join(";"),
        })
        .collect()
}

fn cmd_experiment(cfg: &RunConfig) -> Result<i32> {
    let plan = cfg.plan.as_ref().expect("experiment commands carry a plan");
    let result = harness::run(plan)?;
    let mut out = Outputs::new(cfg)?;
    out.rows(plan.kind.name(), &cell_rows(&result))?;
    if plan.kind == ExperimentKind::Power {
        // plot data: one (beta, rejection rate) series per (rho, tau, n)
        let mut curve: Vec<PowerPoint> = result
            .cells
            .iter()
            .map(|c| PowerPoint { rho: c.rho, tau: c.tau, n: c.n, beta: c.beta, rejection_rate: c.rate, rate_se: c.rate_se })
            .collect();
        curve.sort_by(|a, b| (a.rho, a.tau, a.n as f64, a.beta).partial_cmp(&(b.rho, b.tau, b.n as f64, b.beta)).unwrap());
        out.rows("power_curve", &curve)?;
        let ks: Vec<KsRow> = result
            .cells
            .iter()
            .filter(|c| c.beta == 0.0 && !c.draws.is_empty())
            .map(|c| KsRow { rho: c.rho, tau: c.tau, n: c.n, draws: c.draws.len(), ks_distance: harness::ks_distance_normal(&c.draws) })
            .collect();
        if !ks.is_empty() {
            out.rows("null_ks", &ks)?;
        }
    }
    out.finish()?;
    let flagged = result.flagged();
    let tally = result.failure_tally();
    println!(
        "{} cells, {} flagged; failures: {}",
        result.cells.len(),
        flagged.len(),
        if tally.is_empty() { "none".to_string() } else { format!("{tally:?}") }
    );
    if cfg.strict && !flagged.is_empty() {
        eprintln!("error: {} cell(s) exceed the {:.0}% failure share", flagged.len(), harness::FAILURE_FLAG_SHARE * 100.0);
        return Ok(3);
    }
    Ok(0)
}

fn cmd_bias(cfg: &RunConfig) -> Result<i32> {
    let mut rows = Vec::new();
    for &beta in &cfg.beta {
        rows.extend(bias_curve(cfg.design, beta, &cfg.tau_grid, &cfg.rho)?.iter().map(OracleRow::from));
    }
    let worst = rows.iter().map(|r| r.identity_residual.abs()).fold(0.0, f64::max);
    println!("{} rows, max |A - Pi - B1 - B2| = {:.2e}", rows.len(), worst);
    let mut out = Outputs::new(cfg)?;
    out.rows("bias", &rows)?;
    out.finish()?;
    Ok(0)
}

fn cmd_oracle(cfg: &RunConfig) -> Result<i32> {
    let mut rows = Vec::new();
    for &beta in &cfg.beta {
        rows.extend(bias_curve(cfg.design, beta, &cfg.tau_grid, &cfg.rho)?.iter().map(OracleRow::from));
    }
    for r in &rows {
        println!("beta={} rho={} tau={}  y_tau={:.6}  Pi={:.6}  A={:.6}", r.beta, r.rho, r.tau, r.y_tau, r.pi, r.a);
    }
    let mut out = Outputs::new(cfg)?;
    out.rows("oracle", &rows)?;
    if cfg.emit_sample {
        let spec = DgpSpec { variant: cfg.design, beta: cfg.beta[0], rho: cfg.rho[0], seed: cfg.seed };
        let data = generate_sample(&spec, cfg.n[0])?;
        let w = out.create("sample.csv")?;
        write_dataset(&data, w)?;
    }
    out.finish()?;
    Ok(0)
}

fn resolve_cli(cli: &Cli) -> Result<RunConfig> {
    let (name, input, opts) = match &cli.command {
        Command::Estimate(a) => ("estimate", Some(a.input.clone()), &a.opts),
        Command::MeanEffect(a) => ("mean-effect", Some(a.input.clone()), &a.opts),
        Command::MteCurve(a) => ("mte-curve", Some(a.input.clone()), &a.opts),
        Command::Power(o) => ("power", None, o),
        Command::Coverage(o) => ("coverage", None, o),
        Command::Rmse(o) => ("rmse", None, o),
        Command::Bias(o) => ("bias", None, o),
        Command::Oracle(o) => ("oracle", None, o),
    };
    resolve(name, input, opts)
}

fn dispatch(cli: Cli) -> Result<i32> {
    let cfg = resolve_cli(&cli)?;
    match cfg.command.as_str() {
        "estimate" => cmd_estimate(&cfg),
        "mean-effect" => cmd_mean_effect(&cfg),
        "mte-curve" => cmd_mte(&cfg),
        "power" | "coverage" | "rmse" => cmd_experiment(&cfg),
        "bias" => cmd_bias(&cfg),
        _ => cmd_oracle(&cfg),
    }
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Resolves the settings a command line would run with, without running it.
pub fn resolve_args<I, T>(args: I) -> Result<RunConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| UqeError::InvalidInput(e.to_string()))?;
    resolve_cli(&cli)
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_and_ranges() {
        assert_eq!(parse_list("x", "0.1,0.5").unwrap(), vec![0.1, 0.5]);
        assert_eq!(parse_list("x", "0.1:0.9:0.1").unwrap().len(), 9);
        assert_eq!(parse_list("x", "0.1:0.9:0.1").unwrap()[2], 0.3);
        assert!(parse_list("x", "").is_err());
        assert!(parse_list("x", "1:0:0.1").is_err());
        assert!(parse_list("x", "a,b").is_err());
    }

    #[test]
    fn bandwidth_flags() {
        assert_eq!(parse_bandwidth("silverman").unwrap(), BandwidthRule::Silverman);
        assert_eq!(parse_bandwidth("fixed:0.3").unwrap(), BandwidthRule::Fixed(0.3));
        assert_eq!(parse_bandwidth("undersmooth:0.25").unwrap(), BandwidthRule::Undersmoothed { exponent: 0.25 });
        assert!(parse_bandwidth("undersmooth:0.5").is_err());
        assert!(parse_bandwidth("scott").is_err());
    }

    #[test]
    fn config_file_rules() {
        let map = parse_config_file("# comment\ntau = 0.3\nlink=logit\ntau_grid = 0.1,0.2\n").unwrap();
        assert_eq!(map["tau"], "0.3");
        assert_eq!(map["tau-grid"], "0.1,0.2");
        assert!(matches!(parse_config_file("tua = 0.3\n"), Err(UqeError::Parse { line: 1, .. })));
        assert!(matches!(parse_config_file("\n\njunk\n"), Err(UqeError::Parse { line: 3, .. })));
    }

    #[test]
    fn defaults_materialize() {
        let cfg = resolve_args(["uqe", "coverage"]).unwrap();
        let plan = cfg.plan.unwrap();
        assert_eq!(plan.beta_grid, harness::TABLE_BETAS.to_vec());
        assert_eq!(plan.rho_grid, harness::TABLE_RHOS.to_vec());
        assert_eq!(plan.replications, 1000);
        assert_eq!(plan.sizes, vec![1000]);
        let cfg = resolve_args(["uqe", "power", "--tau", "0.4", "--beta", "0,0.5", "--reps", "7", "--link", "logit"]).unwrap();
        let plan = cfg.plan.unwrap();
        assert_eq!(plan.tau_grid, vec![0.4]);
        assert_eq!(plan.replications, 7);
        assert_eq!(plan.config.link, PsKind::Logit);
        assert!(resolve_args(["uqe", "power", "--tau", "0.4", "--tau-grid", "0.2,0.3"]).is_err());
        assert!(resolve_args(["uqe", "bias", "--rho", "1.0"]).is_err());
        assert!(resolve_args(["uqe", "bias", "--emit-sample"]).is_err());
        assert!(resolve_args(["uqe", "oracle", "--emit-sample", "--beta", "0,1"]).is_err());
        assert_eq!(resolve_args(["uqe", "bias"]).unwrap().tau_grid.len(), 19);
    }
}
