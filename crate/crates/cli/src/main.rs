use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use weak_sde::config::{NoiseScalingConfig, PipelineConfig};
use weak_sde::diagnostics::{coefficient_report, GeneratorModel};
use weak_sde::pipeline::{discover, Discovery};
use weak_sde::plot::{write_line_chart, Axes, Series};
use weak_sde::reproduce::{
    acf_comparison, density_pair, padded_spec, run_suite, summary_text, write_noise_plot, write_report, write_suite,
    SuiteConfig,
};
use weak_sde::sde_sim::io::{read_binary_file, read_csv_file, write_binary_file, write_csv_file};
use weak_sde::sde_sim::euler_maruyama;
use weak_sde::{Ensemble, Error};

#[derive(Parser)]
#[command(name = "weak-sde", version, about = "Weak-form sparse identification of scalar SDEs")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log progress (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; keys not given keep their defaults.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Built-in benchmark: ou, double_well or multiplicative.
    #[arg(long)]
    preset: Option<String>,

    /// Overrides the simulation seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory (overrides the config's output_dir).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an ensemble and write it as a WGEN1 container.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Also write the ensemble as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Identify drift and diffusion from a simulated or stored ensemble.
    Discover {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Ensemble file (.wgen or .csv) instead of simulating.
        #[arg(long)]
        ensemble: Option<PathBuf>,
        /// Solve the diffusion on the raw squared increments.
        #[arg(long)]
        no_bias_correction: bool,
        #[arg(long)]
        plots: bool,
    },
    /// Compare an identified model with the true system of a config.
    Validate {
        /// model.json written by `discover`.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        plots: bool,
    },
    /// Analytic weak-form versus Kramers-Moyal noise curves.
    NoiseScaling {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        bandwidth: Option<f64>,
        /// Comma-separated signal-to-noise ratios.
        #[arg(long, value_delimiter = ',')]
        snr: Option<Vec<f64>>,
        /// Comma-separated time steps.
        #[arg(long, value_delimiter = ',')]
        dt: Option<Vec<f64>>,
        #[arg(long, default_value = "out/noise_scaling")]
        output: PathBuf,
        #[arg(long)]
        plots: bool,
    },
    /// Run every benchmark and experiment and check the acceptance criteria.
    Reproduce {
        /// TOML suite config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Added to every seed of the suite.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out/reproduce")]
        output: PathBuf,
        #[arg(long)]
        plots: bool,
    },
}

enum Failure {
    Error(Error),
    Acceptance(Vec<u32>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(e.into())
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn resolve(args: &ConfigArgs) -> weak_sde::Result<PipelineConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => PipelineConfig::load(path)?,
        (None, Some(name)) => PipelineConfig::preset(name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown preset {name:?}")))?,
        (None, None) => PipelineConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.sim.master_seed = seed;
    }
    if let Some(dir) = &args.output {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn write_json(path: &Path, value: &serde_json::Value) -> weak_sde::Result<()> {
    serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), value)?;
    Ok(())
}

fn simulate(args: &ConfigArgs, csv: bool) -> CmdResult {
    let cfg = resolve(args)?;
    cfg.sim.validate()?;
    let spec = cfg.spec()?;
    let dir = &cfg.output_dir;
    cfg.write_resolved(dir)?;
    let ens = euler_maruyama(&spec, &cfg.sim)?;
    write_binary_file(&ens, dir.join("ensemble.wgen"))?;
    if csv {
        write_csv_file(&ens, dir.join("ensemble.csv"))?;
    }
    let provenance = serde_json::json!({
        "generator": format!("weak-sde {}", env!("CARGO_PKG_VERSION")),
        "system": spec,
        "sim": cfg.sim,
        "n_traj": ens.n_traj(),
        "n_steps": ens.n_steps(),
        "integrator": "euler_maruyama",
        "rng": "chacha8, stream r for trajectory r",
    });
    write_json(&dir.join("provenance.json"), &provenance)?;
    println!("wrote {} trajectories of {} steps to {}", ens.n_traj(), ens.n_steps(), dir.display());
    Ok(())
}

fn load_ensemble(path: &Path, dt: f64) -> weak_sde::Result<Ensemble> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_csv_file(path, dt),
        _ => read_binary_file(path),
    }
}

fn discover_cmd(args: &ConfigArgs, ensemble: Option<&Path>, no_bias_correction: bool, plots: bool) -> CmdResult {
    let mut cfg = resolve(args)?;
    if no_bias_correction {
        cfg.bias_correction = false;
    }
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    cfg.write_resolved(&dir)?;
    let ens = match ensemble {
        Some(path) => load_ensemble(path, cfg.sim.dt).map_err(|e| e.in_stage("ensemble input"))?,
        None => euler_maruyama(&cfg.spec()?, &cfg.sim).map_err(|e| e.in_stage("simulation"))?,
    };
    if ens.n_traj() < cfg.regression.k_folds {
        return Err(Error::InvalidParameter(format!(
            "{} trajectories cannot fill {} folds",
            ens.n_traj(),
            cfg.regression.k_folds
        ))
        .into());
    }
    let grid = cfg.kernels.grid()?;
    let d = discover(&ens, &grid, &cfg.library, &cfg.regression, &cfg.regression, cfg.bias_correction)?;
    d.write_outputs(&dir)?;
    let truth = padded_spec(&cfg.spec()?, cfg.library)?;
    let report = coefficient_report(&d.model(), &truth)?;
    write_report(&report, &dir, "report")?;
    if !d.bias_corrected {
        let text = std::fs::read_to_string(dir.join("report.txt"))?;
        std::fs::write(dir.join("report.txt"), format!("diffusion: UNCORRECTED squared increments\n{text}"))?;
    }
    if plots {
        for m in [&d.drift, &d.diffusion] {
            let lam: Vec<f64> = m.cv_path.iter().map(|p| p.lambda).collect();
            let mse: Vec<f64> = m.cv_path.iter().map(|p| p.mean_mse).collect();
            write_line_chart(
                dir.join(format!("{}_cv_path.svg", m.response)),
                &format!("{} CV path", m.response),
                "lambda",
                "mean CV MSE",
                &[Series { label: "mean MSE", x: &lam, y: &mse, dashed: false }],
                Axes::LogLog,
            )?;
        }
    }
    print!("{}", report.to_text());
    if !d.bias_corrected {
        println!("(diffusion solved without drift-squared correction)");
    }
    Ok(())
}

fn read_model(path: &Path) -> weak_sde::Result<GeneratorModel> {
    let text = std::fs::read_to_string(path)?;
    if let Ok(d) = serde_json::from_str::<Discovery>(&text) {
        return Ok(d.model());
    }
    let m: GeneratorModel = serde_json::from_str(&text)?;
    GeneratorModel::new(m.drift_coeffs, m.diff_coeffs, m.library)
}

fn validate_cmd(model_path: &Path, args: &ConfigArgs, plots: bool) -> CmdResult {
    let cfg = resolve(args)?;
    cfg.validate()?;
    let model = read_model(model_path)?;
    if model.library != cfg.library {
        return Err(Error::InvalidParameter(format!(
            "model library has {} terms but the config's has {}",
            model.library.len(),
            cfg.library.len()
        ))
        .into());
    }
    let spec = cfg.spec()?;
    let dir = &cfg.output_dir;
    cfg.write_resolved(dir)?;
    let truth = padded_spec(&spec, cfg.library)?;
    let report = coefficient_report(&model, &truth)?;
    write_report(&report, dir, "report")?;
    let (p_true, p_rec, tv) = density_pair(&truth, &model, &cfg.diagnostics)?;
    weak_sde::diagnostics::write_density_csv(dir.join("density.csv"), &[("true", &p_true), ("recovered", &p_rec)])?;
    let acf = acf_comparison(&truth, &model, cfg.sim.dt, cfg.sim.x0_range, &cfg.diagnostics)?;
    acf.write_csv(dir.join("acf.csv"))?;
    let summary = serde_json::json!({
        "tv": tv,
        "acf_max_gap": acf.max_gap,
        "acf_scatter_p95": acf.scatter_p95,
        "drift_function_error": report.drift_function_error,
        "diffusion_function_error": report.diffusion_function_error,
        "false_positive": report.has_false_positive(),
        "false_negative": report.has_false_negative(),
    });
    write_json(&dir.join("validation.json"), &summary)?;
    if plots {
        write_line_chart(
            dir.join("density.svg"),
            &format!("stationary density (TV = {tv:.4})"),
            "x",
            "density",
            &[
                Series { label: "true", x: &p_true.grid, y: &p_true.values, dashed: false },
                Series { label: "recovered", x: &p_rec.grid, y: &p_rec.values, dashed: true },
            ],
            Axes::Linear,
        )?;
        write_line_chart(
            dir.join("acf.svg"),
            "autocorrelation",
            "lag",
            "ACF",
            &[
                Series { label: "true", x: &acf.lag_times, y: &acf.acf_true, dashed: false },
                Series { label: "recovered", x: &acf.lag_times, y: &acf.acf_recovered, dashed: true },
            ],
            Axes::Linear,
        )?;
    }
    print!("{}", report.to_text());
    println!("TV {tv:.6}, ACF gap {:.4} (true-vs-true p95 {:.4})", acf.max_gap, acf.scatter_p95);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn noise_cmd(
    config: Option<&Path>,
    horizon: Option<f64>,
    bandwidth: Option<f64>,
    snr: Option<&[f64]>,
    dt: Option<&[f64]>,
    output: &Path,
    plots: bool,
) -> CmdResult {
    let mut cfg = match config {
        Some(p) => NoiseScalingConfig::from_toml_str(&std::fs::read_to_string(p)?)?,
        None => NoiseScalingConfig::default(),
    };
    if let Some(v) = horizon {
        cfg.horizon = v;
    }
    if let Some(v) = bandwidth {
        cfg.bandwidth = v;
    }
    if let Some(v) = snr {
        cfg.snr = v.to_vec();
    }
    if let Some(v) = dt {
        cfg.dt_grid = v.to_vec();
    }
    let curve = cfg.curve()?;
    cfg.write_resolved(output)?;
    curve.write_csv(output.join("noise_scaling.csv"))?;
    if plots {
        write_noise_plot(&curve, &output.join("noise_scaling.svg"))?;
    }
    let slopes: Vec<f64> = (0..curve.snr.len())
        .map(|i| if curve.dt_grid.len() > 1 { curve.ratio_slope(i) } else { f64::NAN })
        .collect();
    write_json(
        &output.join("summary.json"),
        &serde_json::json!({ "h_eff": curve.h_eff, "ratio_slopes": slopes.iter().map(|s| s.is_finite().then_some(*s)).collect::<Vec<_>>() }),
    )?;
    println!("h_eff = {:.6}", curve.h_eff);
    for (i, s) in curve.snr.iter().enumerate() {
        let last = curve.ratio[i][curve.dt_grid.len() - 1];
        if slopes[i].is_finite() {
            println!("SNR {s}: ratio {:.4e} .. {last:.4e}, log-log slope {:.6}", curve.ratio[i][0], slopes[i]);
        } else {
            println!("SNR {s}: ratio {last:.4e}");
        }
    }
    Ok(())
}

fn reproduce_cmd(config: Option<&Path>, seed: Option<u64>, output: &Path, plots: bool) -> CmdResult {
    let mut cfg = match config {
        Some(p) => toml_suite(p)?,
        None => SuiteConfig::default(),
    };
    if let Some(offset) = seed {
        cfg = cfg.with_seed_offset(offset);
    }
    let suite = run_suite(&cfg)?;
    let results = write_suite(&suite, &cfg, output, plots)?;
    print!("{}", summary_text(&results));
    let failed: Vec<u32> = results.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Acceptance(failed))
    }
}

fn toml_suite(path: &Path) -> weak_sde::Result<SuiteConfig> {
    SuiteConfig::from_toml_str(&std::fs::read_to_string(path)?)
}

fn run(cli: Cli) -> CmdResult {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate { cfg, csv } => simulate(cfg, *csv),
        Command::Discover { cfg, ensemble, no_bias_correction, plots } => {
            discover_cmd(cfg, ensemble.as_deref(), *no_bias_correction, *plots)
        }
        Command::Validate { model, cfg, plots } => validate_cmd(model, cfg, *plots),
        Command::NoiseScaling { config, horizon, bandwidth, snr, dt, output, plots } => noise_cmd(
            config.as_deref(),
            *horizon,
            *bandwidth,
            snr.as_deref(),
            dt.as_deref(),
            output,
            *plots,
        ),
        Command::Reproduce { config, seed, output, plots } => reproduce_cmd(config.as_deref(), *seed, output, *plots),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Acceptance(ids)) => {
            eprintln!("acceptance criteria failed: {ids:?}");
            ExitCode::from(4)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else if e.is_numeric() {
                ExitCode::from(3)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
