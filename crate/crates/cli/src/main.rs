use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use qem_core::depfilter::{filter, FilterConfig, FilterSummary};
use qem_core::emcore::{run_em, EmConfig, ModelFile};
use qem_core::harness::{aggregate, run_sweep_to_dir, SweepConfig};
use qem_core::metrics::evaluate;
use qem_core::seeds::derive_seed;
use qem_core::shotdata::{load_dataset, save_dataset};
use qem_core::synth::{generate_shots, sample_eps, sample_ground_truth, NoiseSpec, TruthFile};

#[derive(Parser, Debug)]
#[command(name = "qem-mix", version, about = "Recover noiseless quantum circuit outputs from noisy measurement shots")]
struct Cli {
    #[command(flatten)]
    global: GlobalOptions,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalOptions {
    /// Log verbosity (logs go to standard error)
    #[arg(long, global = true, value_enum, env = "QEM_LOG_LEVEL", default_value = "info")]
    log_level: LogLevel,
    /// Master seed; drawn from OS entropy and printed when omitted
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only report errors
    #[arg(short, long, global = true)]
    quiet: bool,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
}

impl From<LogLevel> for log::LevelFilter {
    fn from(l: LogLevel) -> Self {
        match l {
            LogLevel::Error => log::LevelFilter::Error,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Debug => log::LevelFilter::Debug,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw random solutions and noisy shots; writes the dataset and a truth file
    Generate(GenerateArgs),
    /// Remove shots that look like uniform depolarizing noise
    Filter(FilterArgs),
    /// Filter, then fit the mixture model and write the recovered strings
    Mitigate(MitigateArgs),
    /// Score a model file against a truth file
    Evaluate(EvaluateArgs),
    /// Run a seeded parameter sweep
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Qubits per shot
    #[arg(short, long)]
    n: usize,
    /// Number of noiseless solutions
    #[arg(short, long)]
    k: usize,
    /// Number of shots
    #[arg(short, long, default_value_t = 10_000)]
    shots: usize,
    /// Probability that a shot is replaced by a uniform random string
    #[arg(short, long, default_value_t = 0.9)]
    p: f64,
    /// Lower end of the per-qubit flip probability range
    #[arg(long, default_value_t = 0.05)]
    eps_low: f64,
    /// Upper end of the per-qubit flip probability range
    #[arg(long, default_value_t = 0.15)]
    eps_high: f64,
    /// Free-form circuit label stored with the truth file
    #[arg(long)]
    depth_label: Option<String>,
    /// Dataset path (.json for counts, anything else for one shot per line)
    #[arg(short, long)]
    out: PathBuf,
    /// Truth file path [default: <out stem>.truth.json]
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct FilterFlags {
    /// Threshold multiplier on the uniform support lambda*(n+1)
    #[arg(long, default_value_t = FilterConfig::default().eta)]
    eta: f64,
    /// Lower bound on the threshold
    #[arg(long, default_value_t = FilterConfig::default().t_floor)]
    t_floor: f64,
    /// Absolute threshold, replacing the eta formula (still floored)
    #[arg(long)]
    threshold: Option<f64>,
}

impl FilterFlags {
    fn config(&self) -> FilterConfig {
        FilterConfig {
            eta: self.eta,
            t_floor: self.t_floor,
            threshold: self.threshold,
        }
    }
}

#[derive(Args, Debug)]
struct FilterArgs {
    /// Input dataset
    input: PathBuf,
    /// Where to write the kept shots
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    filter: FilterFlags,
}

#[derive(Args, Debug)]
struct MitigateArgs {
    /// Input dataset
    input: PathBuf,
    /// Model file to write
    #[arg(short, long)]
    out: PathBuf,
    /// Fewest components to consider
    #[arg(long, default_value_t = EmConfig::default().k_min)]
    k_min: usize,
    /// Components to start from
    #[arg(long, default_value_t = EmConfig::default().k_max)]
    k_max: usize,
    /// Relative objective change that ends a level
    #[arg(long, default_value_t = EmConfig::default().delta)]
    delta: f64,
    /// Iteration cap per level
    #[arg(long, default_value_t = EmConfig::default().max_iters)]
    max_iters: usize,
    /// Starting flip probability for every qubit
    #[arg(long, default_value_t = EmConfig::default().eps_init)]
    eps_init: f64,
    /// Plain maximum likelihood: no message-length penalty or annihilation
    #[arg(long)]
    no_mml: bool,
    /// Fit the raw shots without filtering
    #[arg(long)]
    skip_filter: bool,
    #[command(flatten)]
    filter: FilterFlags,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Model file written by `mitigate`
    #[arg(short, long)]
    model: PathBuf,
    /// Truth file written by `generate`
    #[arg(short, long)]
    truth: PathBuf,
    /// Also write the result to this file
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Sweep description (JSON) [default: built-in desk-scale grid]
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory for rows.csv, timings.csv and summary.json
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn resolve_seed(global: &GlobalOptions) -> u64 {
    match global.seed {
        Some(s) => s,
        None => {
            let s = rand::random::<u64>();
            // printed regardless of --quiet so any run can be replayed
            eprintln!("seed: {s}");
            s
        }
    }
}

fn print_filter(summary: &FilterSummary, quiet: bool) {
    if !quiet {
        println!(
            "filter: kept {} of {} shots (removed {}), threshold {:.4}, lambda {:.6}",
            summary.s_out, summary.s_in, summary.removed, summary.threshold, summary.lambda
        );
    }
    println!("{}", serde_json::to_string_pretty(summary).expect("summary serializes"));
}

fn generate(g: &GlobalOptions, a: &GenerateArgs) -> Result<()> {
    let seed = resolve_seed(g);
    info!("generate: seed {seed}");
    let truth = sample_ground_truth(a.n, a.k, derive_seed(seed, "truth", &[]))?;
    let eps = sample_eps(a.n, a.eps_low, a.eps_high, derive_seed(seed, "eps", &[]))?;
    let mut noise = NoiseSpec::new(a.p, eps)?;
    noise.depth_label = a.depth_label.clone();
    let data = generate_shots(&truth, &noise, a.shots, derive_seed(seed, "shots", &[]))?;

    let truth_path = a.truth.clone().unwrap_or_else(|| sidecar_path(&a.out));
    save_dataset(&data, &a.out)?;
    TruthFile::new(&truth, &noise).save(&truth_path)?;
    info!(
        "wrote {} shots ({} distinct) to {} and truth to {}",
        data.len(),
        data.distinct().len(),
        a.out.display(),
        truth_path.display()
    );
    Ok(())
}

fn sidecar_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.truth.json"))
}

fn run_filter(g: &GlobalOptions, a: &FilterArgs) -> Result<()> {
    let config = a.filter.config();
    config.validate()?;
    let data = load_dataset(&a.input)?;
    let report = filter(&data, &config)?;
    if let Some(out) = &a.out {
        save_dataset(&report.kept, out)?;
    }
    print_filter(&report.summary(), g.quiet);
    Ok(())
}

fn mitigate(g: &GlobalOptions, a: &MitigateArgs) -> Result<()> {
    let seed = resolve_seed(g);
    info!("mitigate: seed {seed}");
    let em = EmConfig {
        k_min: a.k_min,
        k_max: a.k_max,
        delta: a.delta,
        max_iters: a.max_iters,
        seed,
        eps_init: a.eps_init,
        mml_enabled: !a.no_mml,
        ..EmConfig::default()
    };
    em.validate()?;
    let fcfg = a.filter.config();
    fcfg.validate()?;

    let data = load_dataset(&a.input)?;
    let (data, summary) = if a.skip_filter {
        (data, None)
    } else {
        let report = filter(&data, &fcfg)?;
        let summary = report.summary();
        info!(
            "filter: kept {} of {} shots (threshold {:.4})",
            summary.s_out, summary.s_in, summary.threshold
        );
        (report.kept, Some(summary))
    };

    let report = run_em(&data, &em)?;
    let file = ModelFile::new(&report, &em, summary);
    file.save(&a.out)?;

    if !g.quiet {
        println!(
            "K_hat = {}  objective = {:.6}  iterations = {}",
            file.k_hat, file.l_mml, file.iterations_total
        );
        let mut order: Vec<usize> = (0..file.k_hat).collect();
        order.sort_by(|&i, &j| file.alpha[j].total_cmp(&file.alpha[i]));
        for i in order {
            println!("  {}  alpha = {:.6}", file.solutions[i], file.alpha[i]);
        }
    }
    Ok(())
}

fn run_evaluate(g: &GlobalOptions, a: &EvaluateArgs) -> Result<()> {
    let model = ModelFile::load(&a.model)?.model()?;
    let truth = TruthFile::load(&a.truth)?.ground_truth()?;
    let result = evaluate(&truth, &model)?;
    let json = serde_json::to_string_pretty(&result).expect("result serializes");
    if let Some(out) = &a.out {
        std::fs::write(out, format!("{json}\n")).with_context(|| format!("cannot write {}", out.display()))?;
    }
    println!("{json}");
    if !g.quiet {
        println!("{}", result.summary_line());
    }
    Ok(())
}

fn sweep(g: &GlobalOptions, a: &SweepArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => SweepConfig::load(p)?,
        None => SweepConfig::desk_default(),
    };
    if let Some(s) = g.seed {
        config.master_seed = s;
    }
    info!("sweep: master seed {}", config.master_seed);
    let dir = a
        .out
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("sweep-out"));
    let (rows, outputs) = run_sweep_to_dir(&config, &dir, g.jobs)?;
    if !g.quiet {
        println!("{:>4} {:>3} {:>7} {:>7} {:>9} {:>10}", "n", "K", "S", "runs", "P_Kerror", "BER");
        for c in aggregate(&rows) {
            let ber = c.ber_mean.map_or("-".to_string(), |b| format!("{b:.6}"));
            println!(
                "{:>4} {:>3} {:>7} {:>7} {:>9.4} {:>10}",
                c.n, c.k_true, c.s_used, c.runs, c.p_k_error, ber
            );
        }
        println!("rows: {}", outputs.rows.display());
        println!("summary: {}", outputs.summary.display());
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<qem_core::Error>() {
        Some(e) if e.is_numerical() => 3,
        Some(qem_core::Error::InvalidConfig(_) | qem_core::Error::Infeasible(_)) => 1,
        Some(_) => 2,
        None => 2,
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    if let Some(j) = g.jobs {
        // the sweep builds its own pool from --jobs
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .context("cannot configure worker threads")?;
    }
    match &cli.command {
        Command::Generate(a) => generate(g, a),
        Command::Filter(a) => run_filter(g, a),
        Command::Mitigate(a) => mitigate(g, a),
        Command::Evaluate(a) => run_evaluate(g, a),
        Command::Sweep(a) => sweep(g, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.global.quiet {
        log::LevelFilter::Error
    } else {
        cli.global.log_level.into()
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_target(false)
        .format_timestamp(None)
        .init();

    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // core errors already carry their cause in the message
            match e.downcast_ref::<qem_core::Error>() {
                Some(core) => eprintln!("error: {core}"),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
