//! Command-line front end: `phase-diagram`, `order-param`, `fss`, `validate`.

pub mod config;
pub mod pipeline;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fss::{analyze, observable_sweep, FssDataset};
use crate::linalg::{herm_eigen, CMat};
use crate::models::ModelKind;
use crate::rfsfield::{cyclic_colormap, field_csv, ppm_bytes, streamlines, streamlines_svg, upsample2_angles};
use config::{matrix_from_pairs, matrix_pairs, RunConfig, Threads};
use pipeline::{
    annni_overlays, format_report, order_param_from_diagram, order_param_from_fixture, validation_suite, Diagram,
    OrderParamResult,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_NOT_INDEFINITE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "rfs", version, about = "Phase diagrams and order parameters from reduced fidelity susceptibility")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ground-state sweep, RFS field, angle raster and streamlines.
    PhaseDiagram(RunArgs),
    /// Phase labels and the optimal observable.
    OrderParam(RunArgs),
    /// Finite-size scaling curves and fits.
    Fss(RunArgs),
    /// Oracle checks of the numerical core.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads, overriding the config.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Solver seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use the closed-form two-state observable.
    #[arg(long)]
    pub gs_form: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    /// Directory for validate.json; the table is always printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Seed of the random fixtures.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidSpec(_)
        | Error::UnsupportedSize { .. }
        | Error::GridTooSmall { .. }
        | Error::Io(_)
        | Error::Json(_) => EXIT_CONFIG,
        Error::NotIndefinite { .. } => EXIT_NOT_INDEFINITE,
        _ => EXIT_NUMERICAL,
    }
}

pub fn error_json(e: &Error) -> Value {
    json!({
        "error": {
            "kind": e.kind(),
            "message": e.to_string(),
            "exit_code": exit_code(e),
        }
    })
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::PhaseDiagram(a) => {
            let cfg = load_config(&a)?;
            in_pool(cfg.threads, || cmd_phase_diagram(&cfg)).map(|_| EXIT_OK)
        }
        Command::OrderParam(a) => {
            let cfg = load_config(&a)?;
            in_pool(cfg.threads, || cmd_order_param(&cfg, a.gs_form)).map(|_| EXIT_OK)
        }
        Command::Fss(a) => {
            let cfg = load_config(&a)?;
            in_pool(cfg.threads, || cmd_fss(&cfg, a.gs_form)).map(|_| EXIT_OK)
        }
        Command::Validate(a) => {
            let threads = a.threads.map_or(Threads::Auto, Threads::Count);
            let seed = a.seed.unwrap_or(0);
            in_pool(threads, || cmd_validate(a.out.as_deref(), seed))
        }
    }
}

/// Loads the config file and applies command-line overrides.
pub fn load_config(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(out) = &a.out {
        cfg.output = out.clone();
    }
    if let Some(t) = a.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        cfg.threads = Threads::Count(t);
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn in_pool<T: Send>(threads: Threads, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Threads::Count(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files written by one command, with their hashes for the manifest.
struct Outputs {
    dir: PathBuf,
    hashes: BTreeMap<String, String>,
    timings: BTreeMap<String, f64>,
    started: Instant,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            hashes: BTreeMap::new(),
            timings: BTreeMap::new(),
            started: Instant::now(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.hashes.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f();
        self.timings.insert(stage.to_string(), t.elapsed().as_secs_f64() * 1e3);
        out
    }

    fn finish(mut self, command: &str, cfg: Option<&RunConfig>, details: Value) -> Result<()> {
        let total = self.started.elapsed().as_secs_f64() * 1e3;
        self.timings.insert("total".into(), total);
        let (config, hash) = match cfg {
            Some(c) => {
                let v = serde_json::to_value(c)?;
                let h = sha256_hex(&serde_json::to_vec(&v)?);
                (v, Some(h))
            }
            None => (Value::Null, None),
        };
        let manifest = json!({
            "command": command,
            "versions": {
                "rfsphase": env!("CARGO_PKG_VERSION"),
                "target": format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS),
            },
            "config": config,
            "config_sha256": hash,
            "threads": rayon::current_num_threads(),
            "timings_ms": self.timings,
            "outputs": self.hashes,
            "details": details,
        });
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(self.dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}

fn json_bytes(v: &Value) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

pub fn cmd_phase_diagram(cfg: &RunConfig) -> Result<()> {
    let mut out = Outputs::new(&cfg.output)?;
    let diag = out.time("diagram", || Diagram::compute(cfg))?;
    write_diagram(&mut out, &diag, cfg.model.kind)?;
    let unconverged = diag.states.iter().filter(|s| !s.converged).count();
    let details = json!({
        "rows": diag.lattice.rows,
        "cols": diag.lattice.cols,
        "unconverged_points": unconverged,
        "valid_cells": diag.field.valid.iter().filter(|v| **v).count(),
    });
    out.finish("phase-diagram", Some(cfg), details)
}

fn write_diagram(out: &mut Outputs, diag: &Diagram, kind: ModelKind) -> Result<()> {
    let field = &diag.field;
    let (rows, cols) = (diag.lattice.rows, diag.lattice.cols);
    out.write("field.csv", field_csv(field).as_bytes())?;
    let (up, r2, c2) = upsample2_angles(&field.angle, rows, cols);
    out.write("angle.ppm", &ppm_bytes(&cyclic_colormap(&up), r2, c2))?;
    let lines = streamlines(&field.p, &diag.lattice);
    let overlays = if kind == ModelKind::Annni {
        annni_overlays(&diag.lattice)
    } else {
        Vec::new()
    };
    out.write("streamlines.svg", streamlines_svg(&lines, &diag.lattice, &overlays).as_bytes())
}

pub fn order_param_json(r: &OrderParamResult) -> Value {
    let o = &r.observable;
    let projectors: Vec<Value> = r
        .projectors
        .iter()
        .map(|p| {
            json!({
                "alpha": p.eigenvalue,
                "product_fit": p.product_fit,
                "dominant_states": p.dominant_states,
            })
        })
        .collect();
    let mut eigenvalues = herm_eigen(&o.m).values;
    eigenvalues.sort_by(f64::total_cmp);
    json!({
        "mode": r.mode,
        "rdm_sites": r.rdm_sites,
        "order": o.order,
        "matrix": matrix_pairs(&o.m),
        "frobenius_norm": o.m.norm(),
        "lambda_min": o.lambda_min,
        "eigenvalues": eigenvalues,
        "pauli_terms": r.pauli.terms,
        "projectors": projectors,
        "diagnostics": {
            "a_lambda_min": o.a_lambda_min,
            "a_lambda_max": o.a_lambda_max,
            "margin": (-o.a_lambda_min).min(o.a_lambda_max),
            "alpha_star": o.alpha_star(),
            "null_dim": o.null_dim,
            "hermiticity_defect": o.hermiticity_defect,
            "sign_flipped": o.sign_flipped,
        },
        "eta": r.eta,
        "labels": { "plus": r.plus, "minus": r.minus },
    })
}

pub fn compute_order_param(cfg: &RunConfig, two_state: bool) -> Result<OrderParamResult> {
    match cfg.fixture_rdms()? {
        Some((plus, minus)) => order_param_from_fixture(&plus, &minus, two_state),
        None => {
            let diag = Diagram::compute(cfg)?;
            order_param_from_diagram(&diag, cfg, two_state)
        }
    }
}

pub fn cmd_order_param(cfg: &RunConfig, two_state: bool) -> Result<()> {
    let mut out = Outputs::new(&cfg.output)?;
    let result = out.time("order_param", || compute_order_param(cfg, two_state))?;
    out.write("observable.json", &json_bytes(&order_param_json(&result))?)?;
    let details = json!({ "mode": result.mode, "lambda_min": result.observable.lambda_min });
    out.finish("order-param", Some(cfg), details)
}

fn observable_for_fss(cfg: &RunConfig, two_state: bool) -> Result<CMat> {
    let f = cfg.fss.as_ref().expect("checked by caller");
    if let Some(m) = &f.observable {
        return m.to_matrix();
    }
    if let Some(path) = &f.observable_file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        #[derive(serde::Deserialize)]
        struct Saved {
            order: usize,
            matrix: Vec<[f64; 2]>,
        }
        let saved: Saved = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        return matrix_from_pairs(saved.order, &saved.matrix);
    }
    Ok(compute_order_param(cfg, two_state)?.observable.m)
}

pub fn compute_fss_dataset(cfg: &RunConfig, two_state: bool) -> Result<FssDataset> {
    let f = cfg
        .fss
        .as_ref()
        .ok_or_else(|| Error::Config("fss section is required".into()))?;
    if let Some(path) = &f.data {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        return FssDataset::from_csv(&text, f.kappa);
    }
    let h = f
        .h_values
        .as_ref()
        .ok_or_else(|| Error::Config("fss.h_values is required without a data file".into()))?
        .values()?;
    if f.lengths.is_empty() {
        return Err(Error::Config("fss.lengths is empty".into()));
    }
    let m = observable_for_fss(cfg, two_state)?;
    observable_sweep(&m, &cfg.model, f.kappa, &h, &f.lengths, &cfg.solver_options())
}

pub fn cmd_fss(cfg: &RunConfig, two_state: bool) -> Result<()> {
    let mut out = Outputs::new(&cfg.output)?;
    let data = out.time("curves", || compute_fss_dataset(cfg, two_state))?;
    out.write("fss.csv", data.to_csv().as_bytes())?;
    let h_c = cfg.fss.as_ref().map_or(crate::fss::DEFAULT_HC, |f| f.h_c);
    let (maxima, fit) = out.time("fit", || analyze(&data, h_c))?;
    let fit_json = json!({
        "slope": fit.slope,
        "loglog_slope": fit.loglog_slope,
        "nu_estimate": fit.nu_estimate,
        "a_double_prime": fit.a_double_prime,
        "b_double_prime": fit.b_double_prime,
        "theta": fit.theta,
        "beta": fit.beta,
        "joint": fit.joint,
        "residual_norm": fit.residual_norm,
        "residuals": fit.residuals,
        "h_c": h_c,
        "maxima": data.lengths.iter().zip(&maxima)
            .map(|(l, m)| json!({ "L": l, "h": m.0, "gradient": m.1 }))
            .collect::<Vec<_>>(),
    });
    out.write("fss_fit.json", &json_bytes(&fit_json)?)?;
    let details = json!({
        "kappa": data.kappa,
        "h_values": data.h_values,
        "lengths": data.lengths,
    });
    out.finish("fss", Some(cfg), details)
}

pub fn cmd_validate(out_dir: Option<&Path>, seed: u64) -> Result<i32> {
    let checks = validation_suite(seed);
    print!("{}", format_report(&checks));
    let all = checks.iter().all(|c| c.passed);
    if let Some(dir) = out_dir {
        let mut out = Outputs::new(dir)?;
        out.write("validate.json", &json_bytes(&json!({ "seed": seed, "checks": checks }))?)?;
        out.finish("validate", None, json!({ "passed": all }))?;
    }
    Ok(if all { EXIT_OK } else { EXIT_NUMERICAL })
}
