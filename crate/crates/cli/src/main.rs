//! `ctpe`: coefficients, simulation, exact solves, estimation and sweeps.
//!
//! Exit codes: 0 success, 2 usage error, 3 numerical failure, 4 config or
//! input error.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ctpe::estimators::{estimate, estimate_killed, EstimateOptions};
use ctpe::exact::{solve_exact, ExactOptions, GridSpec};
use ctpe::harness::{self, ExperimentSpec, SUP_EVAL_INTERVALS};
use ctpe::io::{self as cio, VERSION};
use ctpe::process::{simulate_batch, BatchLength, InitialLaw, DEFAULT_SUBSTEPS};
use ctpe::scheme::{generator_coefficients, BellmanScheme, Scheme};
use ctpe::{Error, ExecMode, FeatureMap, Method, ModelSpec};

#[derive(Parser, Debug)]
#[command(name = "ctpe", version, about = "High-order policy evaluation for diffusions", arg_required_else_help = true)]
struct Cli {
    /// Seed echoed into every output header.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Warn)]
    log_level: LogLevel,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    output_dir: PathBuf,
    /// Use the data-parallel code paths.
    #[arg(long, global = true)]
    parallel: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Form {
    Bellman,
    Generator,
    Naive,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print scheme coefficients.
    Coeffs {
        #[arg(long, value_enum)]
        form: Form,
        #[arg(long, default_value_t = 1)]
        order: usize,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 0.1)]
        eta: f64,
    },
    /// Simulate trajectories to CSV.
    Simulate {
        #[arg(long)]
        model: String,
        #[arg(long)]
        eta: f64,
        /// Transitions of a single trajectory.
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        /// Simulate a batch of this many trajectories instead.
        #[arg(long, visible_alias = "traj")]
        trajectories: Option<usize>,
        /// Kill batch trajectories at geometric times.
        #[arg(long)]
        killed: bool,
        /// Observations per batch trajectory when not killed.
        #[arg(long, default_value_t = 4)]
        points: usize,
        /// Extra observations after the kill time.
        #[arg(long, default_value_t = 8)]
        margin: usize,
        /// `stationary`, `uniform`, `uniform:lo:hi`, `point:x` or `normal:mean:var`.
        #[arg(long, default_value = "point:0")]
        init: String,
        #[arg(long, default_value_t = DEFAULT_SUBSTEPS)]
        substeps: usize,
        #[arg(long, default_value = "trajectory.csv")]
        output: String,
    },
    /// Exact population solve, reported on the evaluation grid.
    SolveExact {
        #[arg(long)]
        model: String,
        #[arg(long, value_enum)]
        form: Form,
        #[arg(long, default_value_t = 1)]
        order: usize,
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        basis: String,
        /// Solve-grid intervals on [-π, π].
        #[arg(long, default_value_t = 400)]
        grid: usize,
        /// Write to this file in the output directory instead of stdout.
        #[arg(long)]
        output: Option<String>,
    },
    /// Estimate θ from a trajectory CSV.
    Estimate {
        #[arg(long, value_enum)]
        form: Form,
        #[arg(long, default_value_t = 1)]
        order: usize,
        #[arg(long)]
        basis: String,
        #[arg(long)]
        input: PathBuf,
        /// Input is a batch of killed trajectories.
        #[arg(long)]
        killed: bool,
        /// Discount rate; defaults to the `beta` recorded in the input header.
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        ridge: f64,
    },
    /// Run a sweep described by a TOML config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Refit slopes from a sweep CSV.
    Slopes {
        #[arg(long)]
        input: PathBuf,
        /// Errors below this are excluded from the fit.
        #[arg(long, default_value_t = 0.0)]
        floor: f64,
    },
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Io(io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

fn exit_code(f: &Failure) -> u8 {
    match f {
        Failure::Core(e) if e.is_numerical() => 3,
        Failure::Core(
            Error::SingularValueFunction(_) | Error::Resonance(_) | Error::Timeout { .. },
        ) => 3,
        _ => 4,
    }
}

fn method_of(form: Form, order: usize) -> Method {
    match form {
        Form::Naive => Method::Naive,
        Form::Bellman => Method::Bellman(order),
        Form::Generator => Method::Generator(order),
    }
}

struct Ctx {
    seed: u64,
    output_dir: PathBuf,
    mode: ExecMode,
}

impl Ctx {
    fn header(&self, fields: &[(&str, String)]) -> String {
        let mut s = format!("# ctpe {VERSION} seed={}", self.seed);
        for (k, v) in fields {
            s.push_str(&format!(" {k}={v}"));
        }
        s.push('\n');
        s
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, Failure> {
        std::fs::create_dir_all(&self.output_dir)?;
        Ok(BufWriter::new(File::create(self.output_dir.join(name))?))
    }

    fn sink(&self, output: Option<&str>) -> Result<Box<dyn Write>, Failure> {
        Ok(match output {
            Some(name) => Box::new(self.create(name)?),
            None => Box::new(io::stdout().lock()),
        })
    }
}

fn parse_model(s: &str) -> Result<ModelSpec, Failure> {
    Ok(s.parse::<ModelSpec>()?)
}

fn parse_basis(s: &str) -> Result<FeatureMap, Failure> {
    s.parse::<FeatureMap>()
        .map_err(|e| Failure::Core(Error::Config { key: "basis".into(), message: e.to_string() }))
}

fn parse_init(s: &str) -> Result<InitialLaw, Failure> {
    Ok(harness::parse_init(s)?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let ctx = Ctx {
        seed: cli.seed,
        output_dir: cli.output_dir,
        mode: ExecMode::from_flag(cli.parallel),
    };
    match cli.command {
        Command::Coeffs { form, order, beta, eta } => coeffs(&ctx, form, order, beta, eta),
        Command::Simulate {
            model,
            eta,
            steps,
            trajectories,
            killed,
            points,
            margin,
            init,
            substeps,
            output,
        } => {
            let spec = parse_model(&model)?;
            let m = spec.build()?;
            let init = parse_init(&init)?;
            let (n, length) = match trajectories {
                Some(n) if killed => (n, BatchLength::Killed { beta: m.beta, margin }),
                Some(n) => (n, BatchLength::Fixed { points }),
                None => (1, BatchLength::Fixed { points: steps + 1 }),
            };
            let batch = simulate_batch(&m, init, eta, n, length, ctx.seed, substeps, ctx.mode)?;
            let mut meta = BTreeMap::new();
            meta.insert("model".to_string(), spec.to_string());
            meta.insert("beta".to_string(), m.beta.to_string());
            let mut w = ctx.create(&output)?;
            if trajectories.is_some() {
                cio::write_batch(&mut w, &batch, &meta)?;
            } else {
                let mut t = batch.trajectories.into_iter().next().expect("one trajectory");
                t.kill_step = None;
                cio::write_trajectory(&mut w, &t, &meta)?;
            }
            w.flush()?;
            Ok(())
        }
        Command::SolveExact { model, form, order, eta, basis, grid, output } => {
            let spec = parse_model(&model)?;
            let m = spec.build()?;
            let fm = parse_basis(&basis)?;
            let method = method_of(form, order);
            let g = GridSpec::uniform(-std::f64::consts::PI, std::f64::consts::PI, grid)?;
            let v = solve_exact(
                &m,
                &fm,
                &method.scheme(m.beta, eta)?,
                &g,
                &ExactOptions { mode: ctx.mode, ridge: 0.0 },
            )?;
            let mut w = ctx.sink(output.as_deref())?;
            w.write_all(
                ctx.header(&[
                    ("model", spec.to_string()),
                    ("method", method.to_string()),
                    ("eta", eta.to_string()),
                    ("basis", fm.to_string()),
                    ("grid", grid.to_string()),
                ])
                .as_bytes(),
            )?;
            writeln!(w, "x,V_hat,V_true,abs_err")?;
            let pi = std::f64::consts::PI;
            for j in 0..=SUP_EVAL_INTERVALS {
                let x = -pi + 2.0 * pi * j as f64 / SUP_EVAL_INTERVALS as f64;
                let vh = v.evaluate(&[x]);
                match m.true_value(&[x]) {
                    Some(t) => writeln!(w, "{x:.10e},{vh:.16e},{t:.16e},{:.6e}", (vh - t).abs())?,
                    None => writeln!(w, "{x:.10e},{vh:.16e},NaN,NaN")?,
                }
            }
            w.flush()?;
            eprintln!(
                "cond={:.3e} residual={:.3e}",
                v.diagnostics.condition_estimate, v.diagnostics.residual_norm
            );
            Ok(())
        }
        Command::Estimate { form, order, basis, input, killed, beta, ridge } => {
            let fm = parse_basis(&basis)?;
            let method = method_of(form, order);
            let text = std::fs::read_to_string(&input)?;
            let beta = match beta {
                Some(b) => b,
                None => header_beta(&text)?,
            };
            let opts = EstimateOptions { mode: ctx.mode, ridge };
            let (v, eta) = if killed {
                let batch = cio::read_batch(BufReader::new(text.as_bytes()))?;
                let scheme = method.scheme(beta, batch.eta)?;
                (estimate_killed(&batch, &fm, &scheme, &opts)?, batch.eta)
            } else {
                let traj = cio::read_trajectory(BufReader::new(text.as_bytes()))?;
                let scheme = method.scheme(beta, traj.eta)?;
                (estimate(&traj, &fm, &scheme, &opts)?, traj.eta)
            };
            let header = format!(
                "ctpe {VERSION} seed={} method={method} basis={fm} beta={beta} eta={eta} input={}",
                ctx.seed,
                input.display()
            );
            let mut out = io::stdout().lock();
            cio::write_coefficients(&mut out, &header, &v.theta)?;
            eprintln!(
                "samples={} cond={:.3e} residual={:.3e}{}",
                v.sample_count,
                v.diagnostics.condition_estimate,
                v.diagnostics.residual_norm,
                if v.diagnostics.ill_conditioned() { " ill-conditioned" } else { "" }
            );
            Ok(())
        }
        Command::Sweep { config } => {
            let text = std::fs::read_to_string(&config).map_err(|e| {
                Failure::Core(Error::Config { key: "config".into(), message: format!("{}: {e}", config.display()) })
            })?;
            let mut spec = ExperimentSpec::from_toml(&text)?;
            if cli.parallel {
                spec.mode = ExecMode::Parallel;
            }
            if spec.seed == 0 {
                spec.seed = ctx.seed;
            }
            let result = harness::run_sweep(&spec)?;
            let mut w = ctx.create("sweep.csv")?;
            harness::write_sweep_csv(&mut w, &result)?;
            w.flush()?;
            let mut w = ctx.create("slopes.csv")?;
            harness::write_slopes_csv(&mut w, &harness::report_header(&spec), &result.slopes)?;
            w.flush()?;
            for s in &result.slopes {
                match s.fit {
                    Some(f) => eprintln!("{}: slope {:.3} over {} points", s.method, f.slope, f.points_used),
                    None => eprintln!("{}: slope unavailable{}", s.method, if s.failed { " (all cells failed)" } else { "" }),
                }
            }
            Ok(())
        }
        Command::Slopes { input, floor } => {
            let file = File::open(&input)?;
            let slopes = harness::slopes_from_csv(BufReader::new(file), floor)?;
            let header = ctx.header(&[("input", input.display().to_string()), ("floor", floor.to_string())]);
            let mut w = ctx.create("slopes.csv")?;
            harness::write_slopes_csv(&mut w, &header, &slopes)?;
            w.flush()?;
            let mut out = io::stdout().lock();
            harness::write_slopes_csv(&mut out, &header, &slopes)?;
            Ok(())
        }
    }
}

fn header_beta(text: &str) -> Result<f64, Failure> {
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        for tok in line.split_whitespace() {
            if let Some(v) = tok.strip_prefix("beta=") {
                return v.parse().map_err(|_| {
                    Failure::Core(Error::Parse(format!("bad beta `{v}` in input header")))
                });
            }
        }
    }
    Err(Failure::Core(Error::Config {
        key: "beta".into(),
        message: "not in the input header; pass --beta".into(),
    }))
}

fn coeffs(ctx: &Ctx, form: Form, order: usize, beta: f64, eta: f64) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    match form {
        Form::Generator => {
            let c = generator_coefficients(order)?;
            let header = format!("ctpe {VERSION} seed={} form=generator order={order}", ctx.seed);
            cio::write_coefficients(&mut out, &header, &c)?;
        }
        Form::Bellman | Form::Naive => {
            let s = match method_of(form, order).scheme(beta, eta)? {
                Scheme::Bellman(s) => s,
                Scheme::Generator(_) => unreachable!("bellman form"),
            };
            write_bellman(&mut out, ctx, form, &s)?;
        }
    }
    Ok(())
}

fn write_bellman(out: &mut impl Write, ctx: &Ctx, form: Form, s: &BellmanScheme) -> Result<(), Failure> {
    let header = format!(
        "ctpe {VERSION} seed={} form={} order={} beta={} eta={} discount={:.16e} lookahead={} (values are kappa_i; reward weights are eta*kappa_i)",
        ctx.seed,
        if form == Form::Naive { "naive" } else { "bellman" },
        s.order,
        s.beta,
        s.eta,
        s.lookahead_discount,
        s.lookahead_steps
    );
    cio::write_coefficients(out, &header, &s.kappa)?;
    Ok(())
}

fn init_logging(level: LogLevel) {
    let filter = match level {
        LogLevel::Error => log::LevelFilter::Error,
        LogLevel::Warn => log::LevelFilter::Warn,
        LogLevel::Info => log::LevelFilter::Info,
        LogLevel::Debug => log::LevelFilter::Debug,
        LogLevel::Trace => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new().filter_level(filter).try_init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    init_logging(cli.log_level);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let code = exit_code(&f);
            match &f {
                Failure::Core(e) => eprintln!("error: {e}"),
                Failure::Io(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(code)
        }
    }
}
