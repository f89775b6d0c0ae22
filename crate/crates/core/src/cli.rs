//! Command-line front end.
//!
//! Exit status is 0 on success, 1 when a computation or assertion fails and
//! 2 when the configuration cannot be read or validated.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::certify::certify;
use crate::config::{parse_config, ConfigError, InitialData, RunConfig};
use crate::dynamics::{evolve, EvolveOptions, Record};
use crate::harness::{random_field, run_experiment, ExperimentReport, HarnessError};
use crate::output::{config_hash, orbit_csv, stamped_json, trajectory_csv, write_artifact};
use crate::periodic::PeriodicOrbit;
use crate::persistence::{persistence_envelope, u_star_orbit, PersistenceError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "NLKPP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "nlkpp", version, about = "Doubly nonlocal Fisher-KPP laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Artifact directory; overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `rng_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evolve the initial data and dump the trajectory.
    Simulate(CommonArgs),
    /// Periodic solution of the competition-free equation.
    Periodic(CommonArgs),
    /// Persistence envelope.
    Persist(CommonArgs),
    /// Hypothesis certificate.
    Certify(CommonArgs),
    /// Run the experiment suite.
    Verify(CommonArgs),
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Self::Simulate(a) | Self::Periodic(a) | Self::Persist(a) | Self::Certify(a) | Self::Verify(a) => a,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{op}: {message}")]
    Failed { op: &'static str, message: String },
    #[error("{0} experiment(s) failed")]
    Assertions(usize),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        }
    }
}

fn failed(op: &'static str) -> impl Fn(&dyn std::fmt::Display) -> RunError {
    move |e| RunError::Failed {
        op,
        message: e.to_string(),
    }
}

/// Size the global pool from `NLKPP_THREADS`, if set.
pub fn init_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Parse arguments, run, print, and return the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    init_threads();
    match run(&cli.command) {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(RunError::Assertions(n)) => {
            eprintln!("error: {n} experiment(s) failed");
            EXIT_FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Loaded {
    cfg: RunConfig,
    hash: String,
    out: PathBuf,
}

fn load(args: &CommonArgs) -> Result<Loaded, RunError> {
    let text = std::fs::read_to_string(&args.config).map_err(ConfigError::from)?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = args.seed {
        cfg.rng_seed = seed;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    // The hash covers the seed actually used, so overriding it changes the
    // fingerprint.
    let mut hashed = text;
    if args.seed.is_some() {
        let _ = write!(hashed, "\n#seed={}", cfg.rng_seed);
    }
    Ok(Loaded {
        hash: config_hash(&hashed),
        cfg,
        out,
    })
}

/// Run one subcommand and return the text for standard output.
pub fn run(command: &Command) -> Result<String, RunError> {
    let loaded = load(command.args())?;
    match command {
        Command::Simulate(_) => run_simulate(&loaded),
        Command::Periodic(_) => run_periodic(&loaded),
        Command::Persist(_) => run_persist(&loaded),
        Command::Certify(_) => run_certify(&loaded),
        Command::Verify(_) => run_verify(&loaded),
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, RunError> {
    write_artifact(dir, name, contents).map_err(|e| failed("write artifact")(&e))
}

fn json<T: Serialize>(hash: &str, body: &T) -> Result<String, RunError> {
    stamped_json(hash, body).map_err(|e| failed("serialize")(&e))
}

fn run_simulate(l: &Loaded) -> Result<String, RunError> {
    let spec = l.cfg.build()?;
    let u0 = match l.cfg.simulate.initial {
        InitialData::Constant { value } => vec![value; spec.len()],
        InitialData::Random { low, high } => {
            let mut rng = ChaCha8Rng::seed_from_u64(l.cfg.rng_seed);
            random_field(&spec, &mut rng, low, high, true).map_err(|e| failed("simulate")(&e))?
        }
    };
    let horizon = l.cfg.horizon.expect("filled by parse_config");
    let dt = l.cfg.dt.expect("filled by parse_config");
    let steps = (horizon / dt).ceil().max(1.0) as usize;
    let opts = EvolveOptions::bounded()
        .with_steps(steps)
        .with_record(Record::Every(l.cfg.simulate.record_every));
    let r = evolve(spec.as_ref(), &u0, 0.0, horizon, opts).map_err(|e| failed("evolve")(&e))?;
    let path = write(&l.out, "trajectory.csv", &trajectory_csv(&l.hash, spec.grid().nodes(), &r.samples))?;
    Ok(format!(
        "steps {}\ndt {}\nmax_norm {}\nmin_value {}\nwrote {}\n",
        r.steps,
        r.dt,
        r.max_norm,
        r.min_value,
        path.display()
    ))
}

#[derive(Serialize)]
struct OrbitMeta {
    residual: f64,
    iterations: usize,
    direction: String,
}

fn orbit_meta(o: &PeriodicOrbit) -> OrbitMeta {
    OrbitMeta {
        residual: o.residual(),
        iterations: o.iterations(),
        direction: format!("{:?}", o.direction()),
    }
}

fn run_periodic(l: &Loaded) -> Result<String, RunError> {
    let spec = l.cfg.build()?;
    let orbit = u_star_orbit(&spec, l.cfg.periodic_options()).map_err(|e| failed("periodic orbit")(&e))?;
    let nodes = spec.grid().nodes();
    let csv = write(&l.out, "orbit.csv", &orbit_csv(&l.hash, nodes, &orbit))?;
    let meta = write(&l.out, "orbit.json", &json(&l.hash, &orbit_meta(&orbit))?)?;
    Ok(format!(
        "residual {}\niterations {}\nwrote {}\nwrote {}\n",
        orbit.residual(),
        orbit.iterations(),
        csv.display(),
        meta.display()
    ))
}

#[derive(Serialize)]
struct EnvelopeMeta {
    gap: f64,
    iterations: usize,
    residuals: Residuals,
}

#[derive(Serialize)]
struct Residuals {
    coupled: f64,
    lower: f64,
    upper: f64,
    u_star: f64,
}

fn run_persist(l: &Loaded) -> Result<String, RunError> {
    let spec = l.cfg.build()?;
    let opts = l.cfg.envelope_options();
    let env = persistence_envelope(&spec, opts).map_err(|e| failed("persistence envelope")(&e))?;
    let nodes = spec.grid().nodes();
    let lower = write(&l.out, "envelope_lower.csv", &orbit_csv(&l.hash, nodes, &env.lower))?;
    let upper = write(&l.out, "envelope_upper.csv", &orbit_csv(&l.hash, nodes, &env.upper))?;
    let meta = EnvelopeMeta {
        gap: env.gap,
        iterations: env.iterations,
        residuals: Residuals {
            coupled: env.residual,
            lower: env.lower.residual(),
            upper: env.upper.residual(),
            u_star: env.u_star.residual(),
        },
    };
    let meta_path = write(&l.out, "envelope.json", &json(&l.hash, &meta)?)?;
    let mut text = format!(
        "gap {}\ntol {}\ngap_over_tol {}\niterations {}\ncoupled_residual {}\nlower_min {}\nupper_max {}\n",
        env.gap,
        opts.tol,
        env.gap / opts.tol,
        env.iterations,
        env.residual,
        env.lower.min_value(),
        env.upper.max_value()
    );
    for p in [lower, upper, meta_path] {
        let _ = writeln!(text, "wrote {}", p.display());
    }
    Ok(text)
}

fn run_certify(l: &Loaded) -> Result<String, RunError> {
    let spec = l.cfg.build()?;
    let opts = l.cfg.envelope_options();
    let u_star = u_star_orbit(&spec, opts.periodic).map_err(|e| failed("periodic orbit")(&e))?;
    let env = match persistence_envelope(&spec, opts) {
        Ok(env) => Some(env),
        // Without (A2) there is no envelope; the certificate says so.
        Err(PersistenceError::A2NotCertified { .. }) => None,
        Err(e) => return Err(failed("persistence envelope")(&e)),
    };
    let cert = certify(&spec, Some(&u_star), env.as_ref()).map_err(|e| failed("certify")(&e))?;
    let path = write(&l.out, "certificate.json", &json(&l.hash, &cert)?)?;
    Ok(format!("{}wrote {}\n", cert.table(), path.display()))
}

#[derive(Serialize)]
struct Skipped<'a> {
    name: &'a str,
    seed: u64,
    outcome: &'static str,
    reason: String,
}

fn run_verify(l: &Loaded) -> Result<String, RunError> {
    let spec = l.cfg.build()?;
    let mut ctx = l.cfg.experiment_context(&l.hash);
    ctx.artifact_dir = Some(l.out.clone());
    let mut failures = 0usize;
    for name in &l.cfg.verify.experiments {
        let file = format!("report_{name}.json");
        let started = Instant::now();
        let result = run_experiment(name, &spec, &ctx);
        let secs = started.elapsed().as_secs_f64();
        let mut text = String::new();
        match result {
            Ok(report) => {
                let path = write(&l.out, &file, &json(&l.hash, &report)?)?;
                let _ = writeln!(text, "{} ({secs:.1} s)", summary_line(&report));
                if !report.passed() {
                    failures += 1;
                    for m in report.metrics.iter().filter(|m| !m.pass) {
                        let _ = writeln!(text, "  {} = {} ({:?} {:?})", m.name, m.value, m.sense, m.limit);
                    }
                }
                let _ = writeln!(text, "  wrote {}", path.display());
            }
            Err(HarnessError::Precondition(reason)) => {
                let body = Skipped {
                    name,
                    seed: ctx.seed,
                    outcome: "skipped",
                    reason: reason.clone(),
                };
                write(&l.out, &file, &json(&l.hash, &body)?)?;
                let _ = writeln!(text, "SKIP {name}: {reason}");
            }
            Err(e) => {
                failures += 1;
                let _ = writeln!(text, "FAIL {name}: {e}");
            }
        }
        print!("{text}");
    }
    if failures > 0 {
        Err(RunError::Assertions(failures))
    } else {
        Ok(String::new())
    }
}

fn summary_line(r: &ExperimentReport) -> String {
    format!(
        "{} {}",
        if r.passed() { "PASS" } else { "FAIL" },
        r.name
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_subcommands() {
        let cli = Cli::try_parse_from(["nlkpp", "persist", "--config", "c.json", "--seed", "3"]).unwrap();
        match cli.command {
            Command::Persist(a) => {
                assert_eq!(a.seed, Some(3));
                assert_eq!(a.config, PathBuf::from("c.json"));
                assert!(a.out.is_none());
            }
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["nlkpp", "persist"]).is_err());
        assert!(Cli::try_parse_from(["nlkpp", "explode", "--config", "x"]).is_err());
    }

    #[test]
    fn missing_config_is_a_config_error() {
        let code = main_with_args(["nlkpp", "certify", "--config", "/nonexistent/x.json"]);
        assert_eq!(code, EXIT_CONFIG);
    }
}
