//! The `dp` command-line front end.
//!
//! Exit codes: 0 on success, 1 on a domain error (reported as
//! `{"error": <kind>, "message": <text>}` on stderr), 2 on a usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::empirical::{dp_plane_report, pixel_interpolate, ImageTensor};
use crate::error::{Error, Result};
use crate::gaussian::{gelbrich_distance, gelbrich_squared};
use crate::io;
use crate::oracle::{discrete_w2, verify_dp_construction};
use crate::pnm;
use crate::selftest::run_selftest;
use crate::tolerance::Tolerances;
use crate::tradeoff::{dp_value, estimator_performance, optimal_estimator_from, posterior_sampling_gap, ModelAnalysis};

/// Seed used by `selftest` when neither `--seed` nor the config sets one.
pub const DEFAULT_SELFTEST_SEED: u64 = 0;

#[derive(Debug, Parser)]
#[command(name = "dp", version, about = "Distortion-perception tradeoff toolkit")]
struct Cli {
    /// key = value file overriding tolerances, seed, parallelism and format
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Enable internal parallelism (patch statistics, method evaluation)
    #[arg(long, global = true)]
    parallel: bool,
    /// Output format for `curve`
    #[arg(long, global = true, value_parser = ["csv", "json"])]
    format: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Gelbrich distance between two Gaussian measure files
    Gelbrich {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Sample the DP curve D(P) of a joint Gaussian model
    Curve {
        #[arg(long)]
        model: PathBuf,
        /// start:end:N; either end may be `auto` (or `Gstar`) for G*
        #[arg(long, default_value = "0:auto:21")]
        grid: Grid,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the optimal estimator (A, Sigma_W) for a perception level
    Estimator {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        perception: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Posterior-sampling report of a model
    Diagnose {
        #[arg(long)]
        model: PathBuf,
    },
    /// Exact discrete optimal transport
    #[command(subcommand)]
    Oracle(OracleCommand),
    /// Place restoration methods on the distortion-perception plane
    Eval(EvalArgs),
    /// Pixel-wise interpolation t * a + (1 - t) * b of two image folders
    Interp {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        t: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in invariant suite
    Selftest,
}

#[derive(Debug, Subcommand)]
enum OracleCommand {
    /// W2 distance and optimal plan between two discrete measures
    W2 {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Check the geodesic construction of DP-optimal estimators
    VerifyDp {
        /// Discrete measure of the source X
        #[arg(long)]
        x: PathBuf,
        /// Discrete measure of the MMSE estimate X*
        #[arg(long)]
        xstar: PathBuf,
        /// Grid over t = P / P*; `auto` means 1
        #[arg(long, default_value = "0:auto:5")]
        grid: Grid,
    },
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    truth: PathBuf,
    /// name=<dir>, repeatable
    #[arg(long = "method", required = true)]
    methods: Vec<MethodSpec>,
    #[arg(long, default_value_t = 9)]
    patch: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long)]
    out: PathBuf,
    /// Report MSE and perception in 0..255 pixel units
    #[arg(long = "scale-255")]
    scale_255: bool,
    #[arg(long, default_value_t = 101)]
    curve_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Endpoint {
    Value(f64),
    Auto,
}

/// `start:end:N`, evenly spaced, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Grid {
    start: Endpoint,
    end: Endpoint,
    count: usize,
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [start, end, count] = parts.as_slice() else {
            return Err(format!("expected start:end:N, got {s:?}"));
        };
        let endpoint = |v: &str| -> std::result::Result<Endpoint, String> {
            let v = v.trim();
            if v.eq_ignore_ascii_case("auto") || v.eq_ignore_ascii_case("gstar") {
                return Ok(Endpoint::Auto);
            }
            let x: f64 = v.parse().map_err(|_| format!("bad grid endpoint {v:?}"))?;
            if !(x >= 0.0) || !x.is_finite() {
                return Err(format!("grid endpoint {v:?} must be a nonnegative number"));
            }
            Ok(Endpoint::Value(x))
        };
        let count: usize = count.trim().parse().map_err(|_| format!("bad grid count {count:?}"))?;
        if count == 0 {
            return Err("grid needs at least one point".into());
        }
        Ok(Grid { start: endpoint(start)?, end: endpoint(end)?, count })
    }
}

impl Grid {
    fn points(&self, auto: f64) -> Vec<f64> {
        let resolve = |e: Endpoint| match e {
            Endpoint::Value(v) => v,
            Endpoint::Auto => auto,
        };
        let (a, b) = (resolve(self.start), resolve(self.end));
        if self.count == 1 {
            return vec![a];
        }
        let last = (self.count - 1) as f64;
        (0..self.count)
            .map(|i| if i + 1 == self.count { b } else { a + (b - a) * i as f64 / last })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct MethodSpec {
    name: String,
    dir: PathBuf,
}

impl FromStr for MethodSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.split_once('=') {
            Some((name, dir)) if !name.is_empty() && !dir.is_empty() => {
                Ok(MethodSpec { name: name.to_string(), dir: PathBuf::from(dir) })
            }
            _ => Err(format!("expected name=<dir>, got {s:?}")),
        }
    }
}

/// Settings shared by every subcommand.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub tolerances: Tolerances,
    pub seed: Option<u64>,
    pub parallel: bool,
    pub json: bool,
}

impl RunConfig {
    /// Applies a `key = value` file. Keys: `sym_tol`, `psd_tol`,
    /// `pinv_tol`, `eig_tol`, `map_tol`, `geo_tol`, `fam_tol`,
    /// `commute_tol`, `seed`, `parallelism` (`"on"`/`"off"` or a bool) and
    /// `format` (`"csv"`/`"json"`).
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_str(&text, &path.display().to_string())
    }

    pub fn apply_str(&mut self, text: &str, file: &str) -> Result<()> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::parse(file, e.message()))?;
        for (key, value) in &table {
            let bad = |what: &str| Error::parse(file, format!("{key}: expected {what}, got {value}"));
            let number = || -> Result<f64> {
                let v = value.as_float().or_else(|| value.as_integer().map(|i| i as f64)).ok_or_else(|| bad("a number"))?;
                if !(v > 0.0) || !v.is_finite() {
                    return Err(bad("a positive tolerance"));
                }
                Ok(v)
            };
            let t = &mut self.tolerances;
            match key.as_str() {
                "sym_tol" => t.sym = number()?,
                "psd_tol" => t.psd = number()?,
                "pinv_tol" => t.pinv = number()?,
                "eig_tol" => t.eig = number()?,
                "map_tol" => t.map = number()?,
                "geo_tol" => t.geo = number()?,
                "fam_tol" => t.fam = number()?,
                "commute_tol" => t.commute = number()?,
                "seed" => {
                    let v = value.as_integer().filter(|v| *v >= 0).ok_or_else(|| bad("a nonnegative integer"))?;
                    self.seed = Some(v as u64);
                }
                "parallelism" => {
                    self.parallel = match (value.as_bool(), value.as_str()) {
                        (Some(b), _) => b,
                        (_, Some("on")) => true,
                        (_, Some("off")) => false,
                        _ => return Err(bad("\"on\" or \"off\"")),
                    }
                }
                "format" => {
                    self.json = match value.as_str() {
                        Some("json") => true,
                        Some("csv") => false,
                        _ => return Err(bad("\"csv\" or \"json\"")),
                    }
                }
                _ => return Err(Error::parse(file, format!("unknown key {key:?}"))),
            }
        }
        Ok(())
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let report = json!({ "error": e.kind(), "message": e.to_string() });
            let _ = writeln!(err, "{report}");
            1
        }
    }
}

fn emit(out: &mut dyn Write, value: &Value) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string_pretty(value).expect("JSON values serialize"))
        .map_err(|e| Error::io("<stdout>", e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let mut config = RunConfig::default();
    if let Some(path) = &cli.config {
        config.apply_file(path)?;
    }
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    config.parallel |= cli.parallel;
    if let Some(f) = &cli.format {
        config.json = f == "json";
    }
    let tol = config.tolerances;
    match cli.command {
        Command::Gelbrich { a, b } => {
            let a = io::read_gaussian(&a, &tol)?;
            let b = io::read_gaussian(&b, &tol)?;
            let g2 = gelbrich_squared(&a, &b, &tol)?;
            let g = gelbrich_distance(&a, &b, &tol)?;
            emit(out, &json!({ "g": g, "g2": g2 }))
        }
        Command::Curve { model, grid, out: path } => {
            let model = io::load_model(&model, &tol)?;
            let analysis = ModelAnalysis::new(&model, &tol)?;
            let points = grid
                .points(analysis.g_star)
                .into_iter()
                .map(|p| dp_value(analysis.d_star, analysis.g_star, p).map(|d| (p, d)))
                .collect::<Result<Vec<_>>>()?;
            let text = if config.json {
                let rows: Vec<Value> = points.iter().map(|&(p, d)| json!({ "P": p, "D": d })).collect();
                let doc = json!({ "d_star": analysis.d_star, "g_star": analysis.g_star, "points": rows });
                serde_json::to_string_pretty(&doc).expect("JSON values serialize") + "\n"
            } else {
                let mut s = String::from("P,D\n");
                for (p, d) in &points {
                    s.push_str(&format!("{p},{d}\n"));
                }
                s
            };
            match path {
                Some(path) => write_file(&path, &text),
                None => out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e)),
            }
        }
        Command::Estimator { model, perception, out: dir } => {
            let model = io::load_model(&model, &tol)?;
            let analysis = ModelAnalysis::new(&model, &tol)?;
            let est = optimal_estimator_from(&model, &analysis, perception, &tol)?;
            let perf = estimator_performance(&model, &est, &tol)?;
            create_dir(&dir)?;
            io::write_matrix(&dir.join("a.csv"), &est.a)?;
            io::write_symmetric(&dir.join("sigma_w.csv"), &est.sigma_w)?;
            emit(
                out,
                &json!({
                    "perception": perception,
                    "mse": perf.mse,
                    "achieved_perception": perf.perception,
                    "d_star": analysis.d_star,
                    "g_star": analysis.g_star,
                    "deterministic": est.is_deterministic(),
                }),
            )
        }
        Command::Diagnose { model } => {
            let model = io::load_model(&model, &tol)?;
            let analysis = ModelAnalysis::new(&model, &tol)?;
            let report = posterior_sampling_gap(&model, &tol)?;
            emit(
                out,
                &json!({
                    "d_star": report.d_star,
                    "g_star": analysis.g_star,
                    "g_star_sq": report.g_star_sq,
                    "d_at_zero_perception": analysis.d_star + report.g_star_sq,
                    "posterior_sampling_mse": 2.0 * report.d_star,
                    "sandwich_slack": report.sandwich_slack,
                    "posterior_sampling_optimal": report.optimal,
                }),
            )
        }
        Command::Oracle(OracleCommand::W2 { a, b }) => {
            let a = io::read_discrete(&a)?;
            let b = io::read_discrete(&b)?;
            let solution = discrete_w2(&a, &b)?;
            let plan: Vec<Value> = solution
                .coupling
                .nonzeros()
                .into_iter()
                .map(|(i, j, mass)| json!({ "i": i, "j": j, "mass": mass }))
                .collect();
            emit(out, &json!({ "w2": solution.w2, "plan": plan }))
        }
        Command::Oracle(OracleCommand::VerifyDp { x, xstar, grid }) => {
            let x = io::read_discrete(&x)?;
            let xstar = io::read_discrete(&xstar)?;
            let grid = grid.points(1.0);
            if let Some(t) = grid.iter().find(|t| !(0.0..=1.0).contains(*t)) {
                return Err(Error::BadParameter(format!("grid value t = {t} outside [0, 1]")));
            }
            let report = verify_dp_construction(&x, &xstar, &grid)?;
            let rows: Vec<Value> = report
                .rows
                .iter()
                .map(|r| {
                    json!({
                        "t": r.t,
                        "P": r.perception,
                        "w2_to_source": r.to_source,
                        "w2_to_mmse": r.to_mmse,
                        "passed": r.passed,
                    })
                })
                .collect();
            emit(out, &json!({ "p_star": report.p_star, "tolerance": report.tolerance, "passed": report.passed(), "rows": rows }))?;
            if report.passed() {
                Ok(())
            } else {
                Err(Error::CheckFailed("geodesic construction distances off by more than 1e-7".into()))
            }
        }
        Command::Eval(args) => eval(args, &config, out, err),
        Command::Interp { a, b, t, out: dir } => {
            let files = pnm::list_images(&a)?;
            if files.is_empty() {
                return Err(Error::EmptyInput(format!("no images in {}", a.display())));
            }
            create_dir(&dir)?;
            for file in &files {
                let name = file.file_name().expect("listed files have names");
                let x = pnm::read_pnm(file)?;
                let y = pnm::read_pnm(&b.join(name))?;
                pnm::write_pnm(&dir.join(name), &pixel_interpolate(&x, &y, t)?)?;
            }
            emit(out, &json!({ "t": t, "images": files.len() }))
        }
        Command::Selftest => {
            let seed = config.seed.unwrap_or(DEFAULT_SELFTEST_SEED);
            let outcomes = run_selftest(seed, &tol);
            let mut failed = 0;
            for o in &outcomes {
                let status = if o.passed { "ok  " } else { "FAIL" };
                writeln!(out, "{status} {} ({})", o.name, o.detail).map_err(|e| Error::io("<stdout>", e))?;
                if !o.passed {
                    failed += 1;
                }
            }
            writeln!(out, "seed {seed}: {} checks, {failed} failed", outcomes.len()).map_err(|e| Error::io("<stdout>", e))?;
            if failed == 0 {
                Ok(())
            } else {
                Err(Error::CheckFailed(format!("{failed} selftest checks failed")))
            }
        }
    }
}

fn load_folder(dir: &Path, names: &[OsString]) -> Result<Vec<ImageTensor>> {
    names.iter().map(|n| pnm::read_pnm(&dir.join(n))).collect()
}

fn eval(args: EvalArgs, config: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let files = pnm::list_images(&args.truth)?;
    if files.is_empty() {
        return Err(Error::EmptyInput(format!("no images in {}", args.truth.display())));
    }
    let names: Vec<OsString> = files.iter().map(|f| f.file_name().expect("listed files have names").to_owned()).collect();
    let truth = load_folder(&args.truth, &names)?;
    let methods = args
        .methods
        .iter()
        .map(|m| Ok((m.name.clone(), load_folder(&m.dir, &names)?)))
        .collect::<Result<Vec<_>>>()?;
    let report = dp_plane_report(&methods, &truth, args.patch, args.stride, args.curve_points, config.parallel, &config.tolerances)?;
    let (d_scale, p_scale) = if args.scale_255 { (255.0 * 255.0, 255.0) } else { (1.0, 1.0) };

    let mut csv = String::from("name,mse,perception\n");
    for m in &report.methods {
        csv.push_str(&format!("{},{},{}\n", m.name, m.mse * d_scale, m.perception * p_scale));
    }
    let methods: Vec<Value> = report
        .methods
        .iter()
        .map(|m| json!({ "name": m.name, "mse": m.mse * d_scale, "perception": m.perception * p_scale }))
        .collect();
    let curve: Vec<Value> = report.curve.iter().map(|&(p, d)| json!({ "P": p * p_scale, "D": d * d_scale })).collect();
    let doc = json!({
        "patch": report.patch,
        "stride": report.stride,
        "images": truth.len(),
        "scale": if args.scale_255 { "0-255" } else { "0-1" },
        "best": report.methods[report.best].name,
        "methods": methods,
        "curve": curve,
        "violations": report.violations,
    });
    create_dir(&args.out)?;
    write_file(&args.out.join("report.csv"), &csv)?;
    write_file(&args.out.join("report.json"), &(serde_json::to_string_pretty(&doc).expect("JSON values serialize") + "\n"))?;
    for name in &report.violations {
        let _ = writeln!(err, "warning: method {name} lies below the estimated lower bound");
    }
    emit(out, &doc)
}
