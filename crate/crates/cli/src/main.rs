use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use leadkin::combine::Threshold;
use leadkin::ingest::load_events;
use leadkin::io;
use leadkin::mvdist::{build_model, Model};
use leadkin::pipeline::{combine_stage, fit_stage, run_pipeline, PipelineConfig, PipelineStage};
use leadkin::synth::{generate, params_to_profile, SpeedCheck};
use leadkin::validate::{bootstrap_robustness, compare, describe, BootstrapConfig};
use leadkin::{Error, Result};

#[derive(Parser)]
#[command(name = "leadkin", version, about = "Lead-vehicle speed profile parameterization and synthetic scenario generation")]
struct Cli {
    /// TOML file with pipeline settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit piecewise-linear profiles to raw speed-time events.
    Fit(FitArgs),
    /// Reweight crash groups and merge similar near-crashes.
    Combine(CombineArgs),
    /// Build per-pattern distribution models from a combined dataset.
    Model(ModelArgs),
    /// Sample synthetic events from a model.
    Generate(GenerateArgs),
    /// Compare raw and synthetic parameter distributions.
    Validate(ValidateArgs),
    /// Subsample robustness of the modeling procedure.
    Bootstrap(BootstrapArgs),
    /// Weighted mean and SD of each parameter.
    Describe(DescribeArgs),
    /// Run all stages (or one) with artifacts in the output directory.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value = "params.csv")]
    output: PathBuf,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    nb_max: Option<usize>,
}

#[derive(Args)]
struct CombineArgs {
    #[arg(long, default_value = "params.csv")]
    params: PathBuf,
    #[arg(long)]
    d_thd: Option<f64>,
    /// Use this weighted quantile of crash nearest-neighbour distances as the threshold.
    #[arg(long, conflicts_with = "d_thd")]
    d_thd_quantile: Option<f64>,
    #[arg(long, default_value = "combined.csv")]
    output: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value = "combined.csv")]
    input: PathBuf,
    #[arg(long, default_value = "model.json")]
    output: PathBuf,
    #[arg(long)]
    mass_threshold: Option<f64>,
    #[arg(long)]
    corr_threshold: Option<f64>,
    #[arg(long)]
    alpha_corr: Option<f64>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value = "model.json")]
    model: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value = "synthetic.csv")]
    output: PathBuf,
    /// Also write sampled speed-time profiles.
    #[arg(long)]
    profiles_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    dt: f64,
    /// Only require non-negative speed over the modeled segments.
    #[arg(long)]
    modeled_span_only: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value = "combined.csv")]
    raw: PathBuf,
    #[arg(long, default_value = "synthetic.csv")]
    synthetic: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    n_perm: Option<usize>,
    #[arg(long, default_value = "report.json")]
    output: PathBuf,
}

#[derive(Args)]
struct BootstrapArgs {
    #[arg(long, default_value = "combined.csv")]
    input: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.9,0.8")]
    fractions: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 1000)]
    n_synth: usize,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    n_perm: usize,
    #[arg(long, default_value = "bootstrap.json")]
    output: PathBuf,
}

#[derive(Args)]
struct DescribeArgs {
    /// Combined or synthetic parameter CSV.
    #[arg(long, default_value = "combined.csv")]
    input: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Run only this stage: fit, combine, model, generate or validate.
    #[arg(long)]
    stage: Option<PipelineStage>,
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_model(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Model::from_json(&text)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::Fit(a) => {
            cfg.input = a.input.or(cfg.input);
            cfg.lambda = a.lambda.unwrap_or(cfg.lambda);
            cfg.n_b_max = a.nb_max.unwrap_or(cfg.n_b_max);
            let fit_cfg = cfg.fit_config();
            fit_cfg.check()?;
            let input = cfg.input.ok_or_else(|| Error::Config("--input is required".into()))?;
            let events = load_events(&input)?;
            let rows = fit_stage(&events, &fit_cfg);
            let valid = rows.iter().filter(|r| r.valid).count();
            log::info!("{valid} of {} events valid", rows.len());
            io::write_params(&a.output, &rows)?;
        }
        Command::Combine(a) => {
            let threshold = match (a.d_thd_quantile, a.d_thd) {
                (Some(q), _) => Threshold::Quantile(q),
                (None, Some(d)) => Threshold::Fixed(d),
                (None, None) => cfg.threshold(),
            };
            let rows = io::read_params(&a.params)?;
            let (d, summary) = combine_stage(&rows, threshold)?;
            log::info!(
                "eta_ns = {:.6}, eta_hss = {:.6}, n_cmb = {}, d_thd = {:.4}, {} near-crashes attached",
                summary.plan.eta_ns,
                summary.plan.eta_hss,
                summary.counts.n_cmb(),
                summary.merge.d_thd,
                summary.merge.selected.len()
            );
            io::write_combined(&a.output, &d)?;
        }
        Command::Model(a) => {
            cfg.mass_threshold = a.mass_threshold.unwrap_or(cfg.mass_threshold);
            cfg.corr_threshold = a.corr_threshold.unwrap_or(cfg.corr_threshold);
            cfg.alpha_corr = a.alpha_corr.unwrap_or(cfg.alpha_corr);
            let d = io::read_combined(&a.input)?;
            let model = build_model(&d, &cfg.model_config())?;
            std::fs::write(&a.output, model.to_json()?).map_err(|e| Error::Io {
                path: a.output.clone(),
                source: e,
            })?;
        }
        Command::Generate(a) => {
            cfg.n_synth = a.n.unwrap_or(cfg.n_synth);
            if a.modeled_span_only {
                cfg.speed_check = SpeedCheck::ModeledSpan;
            }
            let model = read_model(&a.model)?;
            let s = generate(&model, cfg.n_synth, cfg.generate_seed(), &cfg.synth_config())?;
            for b in &s.bundles {
                log::info!(
                    "{}: {} accepted of {} draws",
                    b.label,
                    b.counts.accepted,
                    b.counts.draws()
                );
            }
            io::write_synthetic(&a.output, &s)?;
            if let Some(path) = a.profiles_out {
                let profiles = s
                    .events
                    .iter()
                    .map(|e| params_to_profile(e, a.dt))
                    .collect::<Result<Vec<_>>>()?;
                io::write_profiles(&path, &profiles)?;
            }
        }
        Command::Validate(a) => {
            cfg.alpha_ks = a.alpha.unwrap_or(cfg.alpha_ks);
            cfg.n_perm = a.n_perm.unwrap_or(cfg.n_perm);
            let raw = io::read_combined(&a.raw)?;
            let (syn, _) = io::read_synthetic(&a.synthetic)?;
            let report = compare(&raw.events, &syn, cfg.alpha_ks, cfg.n_perm, cfg.validate_seed())?;
            println!("param      raw mean   raw sd  syn mean   syn sd       D  p-value");
            for p in &report.params {
                println!(
                    "{:<8} {:>9.3} {:>8.3} {:>9.3} {:>8.3} {:>7.4} {:>8.4}{}",
                    p.param.name(),
                    p.raw.mean,
                    p.raw.sd,
                    p.synthetic.mean,
                    p.synthetic.sd,
                    p.ks.statistic,
                    p.ks.p_value,
                    if p.significant { "  *" } else { "" }
                );
            }
            write_json(&a.output, &report)?;
        }
        Command::Bootstrap(a) => {
            let bcfg = BootstrapConfig {
                fractions: a.fractions,
                reps: a.reps,
                n_synth: a.n_synth,
                alpha: a.alpha.unwrap_or(cfg.alpha_ks),
                n_perm: a.n_perm,
                ..Default::default()
            };
            let d = io::read_combined(&a.input)?;
            let report = bootstrap_robustness(&d, &bcfg, &cfg.model_config(), &cfg.synth_config(), cfg.seed)?;
            for f in &report.fractions {
                let props: Vec<String> = f
                    .proportions
                    .iter()
                    .map(|(p, x)| format!("{}={x:.2}", p.name()))
                    .collect();
                println!(
                    "fraction {:.2} ({} events, {} failed reps): {}",
                    f.fraction,
                    f.subsample_size,
                    f.failed,
                    props.join(" ")
                );
            }
            write_json(&a.output, &report)?;
        }
        Command::Describe(a) => {
            let d = io::read_combined(&a.input)?;
            println!("param        mean        sd");
            for (p, s) in describe(&d.events)? {
                println!("{:<8} {:>9.4} {:>9.4}", p.name(), s.mean, s.sd);
            }
        }
        Command::Pipeline(a) => {
            cfg.input = a.input.or(cfg.input);
            if let Some(dir) = a.out_dir {
                cfg.out_dir = dir;
            }
            let out = run_pipeline(&cfg, a.stage)?;
            for path in &out.written {
                println!("{}", path.display());
            }
            if let Some(r) = out.report {
                if !r.all_pass() {
                    log::warn!("some parameters differ significantly at alpha = {}", r.alpha);
                }
            }
        }
    }
    Ok(())
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
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}
