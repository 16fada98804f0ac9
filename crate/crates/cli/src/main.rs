use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use clogsa_core::clogsim::{self, SimConfig};
use clogsa_core::dataio::{self, TrajectoryDataset};
use clogsa_core::hsic::{self, PValueMethod, TimeSeriesOptions, Variant};
use clogsa_core::pce::{self, CvOptions, FitOptions};
use clogsa_core::probmodel::InputModel;
use clogsa_core::sobol;

mod output;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    fn data(module: &str, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{module}: {e}"))
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "clogsa", version, about = "Sensitivity analysis pipeline for clogging trajectories")]
struct Cli {
    /// Worker threads (defaults to all cores); outputs do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the Monte Carlo campaign and write dataset.csv.
    Simulate(SimulateArgs),
    /// Fit a sparse PCE surrogate and write surrogate.json.
    Fit(FitArgs),
    /// Score a surrogate on a test dataset, or cross-validate (p, q) choices.
    Validate(ValidateArgs),
    /// Sobol' indices from a surrogate.
    Sobol(SobolArgs),
    /// HSIC indices and p-values from a dataset.
    Hsic(HsicArgs),
    /// Every table and plot of the pipeline.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Schedule and constants file, or "preset".
    #[arg(long, default_value = "preset")]
    config: String,
    /// Input model file, or a preset name.
    #[arg(long, default_value = clogsa_core::probmodel::SG_CLOGGING_PRESET)]
    model: String,
    #[arg(short = 'n', default_value_t = 1000)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = clogsa_core::probmodel::SG_CLOGGING_PRESET)]
    model: String,
    #[arg(long, default_value_t = 4)]
    p: u32,
    #[arg(long, default_value_t = 0.5)]
    q: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Score this surrogate on the dataset instead of cross-validating.
    #[arg(long)]
    surrogate: Option<PathBuf>,
    #[arg(long, default_value = clogsa_core::probmodel::SG_CLOGGING_PRESET)]
    model: String,
    /// Degrees to cross-validate, comma separated.
    #[arg(long, default_value = "4", value_delimiter = ',')]
    p: Vec<u32>,
    /// q-norms to cross-validate, comma separated.
    #[arg(long, default_value = "0.5", value_delimiter = ',')]
    q: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SobolArgs {
    #[arg(long)]
    surrogate: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Global,
    Target,
    Conditional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PValueArg {
    Perm,
    Asymp,
}

#[derive(Args, Debug)]
struct HsicArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = VariantArg::Global)]
    variant: VariantArg,
    #[arg(long, default_value_t = hsic::DEFAULT_BOUND)]
    bound: f64,
    /// Defaults to asymp for global and target, perm for conditional.
    #[arg(long, value_enum)]
    pvalue: Option<PValueArg>,
    #[arg(long, default_value_t = hsic::DEFAULT_PERMUTATIONS)]
    permutations: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Reuse a fitted surrogate; otherwise one is fitted on the full dataset.
    #[arg(long)]
    surrogate: Option<PathBuf>,
    #[arg(long, default_value = clogsa_core::probmodel::SG_CLOGGING_PRESET)]
    model: String,
    /// Schedule used to mark regime midpoints; "preset" by default.
    #[arg(long, default_value = "preset")]
    config: String,
    #[arg(long, default_value = "4", value_delimiter = ',')]
    p: Vec<u32>,
    #[arg(long, default_value = "0.5", value_delimiter = ',')]
    q: Vec<f64>,
    #[arg(long, default_value_t = hsic::DEFAULT_BOUND)]
    bound: f64,
    /// p-value method for the global and target variants.
    #[arg(long, value_enum, default_value_t = PValueArg::Asymp)]
    pvalue: PValueArg,
    #[arg(long, default_value_t = hsic::DEFAULT_PERMUTATIONS)]
    permutations: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Validate(a) => validate(a),
        Command::Sobol(a) => sobol_cmd(a),
        Command::Hsic(a) => hsic_cmd(a),
        Command::Report(a) => report(a),
    })
}

fn load_model(spec: &str) -> Result<InputModel> {
    InputModel::resolve(spec).map_err(|e| CliError::data("probmodel", e))
}

fn load_config(spec: &str) -> Result<SimConfig> {
    SimConfig::resolve(spec).map_err(|e| CliError::data("clogsim", e))
}

fn load_ds(path: &Path) -> Result<TrajectoryDataset> {
    dataio::load_dataset(path).map_err(|e| CliError::data("dataio", e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::data("io", format!("{}: {e}", dir.display())))
}

fn check_fit_args(p: u32, q: f64) -> Result<()> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(CliError::Usage(format!("--q must lie in (0, 1], got {q}")));
    }
    if p == 0 {
        return Err(CliError::Usage("--p must be at least 1".into()));
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    if a.n == 0 {
        return Err(CliError::Usage("-n must be at least 1".into()));
    }
    let model = load_model(&a.model)?;
    let cfg = load_config(&a.config)?;
    let ds = clogsim::monte_carlo(&model, &cfg, a.n, a.seed).map_err(|e| CliError::data("clogsim", e))?;
    ensure_dir(&a.out)?;
    let path = a.out.join("dataset.csv");
    dataio::save_dataset(&ds, &path).map_err(|e| CliError::data("dataio", e))?;
    output::write(&a.out.join("config.json"), &cfg.to_json())?;
    if let Some(p) = &ds.provenance {
        if !p.failed_rows.is_empty() {
            log::warn!("{} of {} rows failed; see the provenance sidecar", p.failed_rows.len(), a.n);
        }
    }
    println!("{} {}", path.display(), ds.content_hash());
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    check_fit_args(a.p, a.q)?;
    let model = load_model(&a.model)?;
    let ds = load_ds(&a.dataset)?;
    let opts = FitOptions {
        p: a.p,
        q: a.q,
        ..Default::default()
    };
    let (s, diag) = pce::fit(&ds, &model, &opts).map_err(|e| CliError::data("pce", e))?;
    ensure_dir(&a.out)?;
    dataio::save_surrogate(&s, &a.out.join("surrogate.json")).map_err(|e| CliError::data("dataio", e))?;
    output::write(&a.out.join("fit_report.csv"), &output::fit_diagnostics_csv(&s.times, &diag))?;
    println!("{} terms in the union basis", s.basis.len());
    Ok(())
}

fn validate(a: ValidateArgs) -> Result<()> {
    let ds = load_ds(&a.dataset)?;
    ensure_dir(&a.out)?;
    if let Some(path) = &a.surrogate {
        let s = dataio::load_surrogate(path).map_err(|e| CliError::data("dataio", e))?;
        let rep = pce::q2(&s, &ds).map_err(|e| CliError::data("pce", e))?;
        output::write(&a.out.join("q2.csv"), &output::q2_csv(&ds.times, &rep))?;
        println!("Q2_mean {}", rep.q2_mean.map_or("NA".into(), dataio::fmt_f64));
        return Ok(());
    }
    let seed = a
        .seed
        .ok_or_else(|| CliError::Usage("cross-validation is randomized and needs --seed".into()))?;
    for &p in &a.p {
        for &q in &a.q {
            check_fit_args(p, q)?;
        }
    }
    let model = load_model(&a.model)?;
    let cv = CvOptions {
        seed,
        ..Default::default()
    };
    let cells = pce::cross_validate(&ds, &model, &a.p, &a.q, &cv);
    output::write(&a.out.join("q2_boxplot.csv"), &output::cv_csv(&cells))?;
    output::write(&a.out.join("q2_boxplot.svg"), &output::cv_svg(&cells))?;
    for c in &cells {
        let ok: Vec<f64> = c.scores.iter().filter_map(|s| s.as_ref().ok().copied()).collect();
        for e in c.scores.iter().filter_map(|s| s.as_ref().err()) {
            log::warn!("p={} q={}: {e}", c.p, c.q);
        }
        let mean = if ok.is_empty() { f64::NAN } else { ok.iter().sum::<f64>() / ok.len() as f64 };
        println!("p={} q={} Q2_mean={} ({} of {} splits)", c.p, c.q, mean, ok.len(), c.scores.len());
    }
    Ok(())
}

fn sobol_cmd(a: SobolArgs) -> Result<()> {
    let s = dataio::load_surrogate(&a.surrogate).map_err(|e| CliError::data("dataio", e))?;
    let ts = sobol::sobol_timeseries(&s);
    ensure_dir(&a.out)?;
    output::write(&a.out.join("sobol.csv"), &output::sobol_csv(&ts))?;
    Ok(())
}

fn pvalue_method(arg: Option<PValueArg>, variant: VariantArg, permutations: usize) -> Result<PValueMethod> {
    let arg = arg.unwrap_or(if variant == VariantArg::Conditional { PValueArg::Perm } else { PValueArg::Asymp });
    match arg {
        PValueArg::Asymp if variant == VariantArg::Conditional => Err(CliError::Usage(
            "the conditional variant only supports --pvalue perm".into(),
        )),
        PValueArg::Asymp => Ok(PValueMethod::Asymptotic),
        PValueArg::Perm if permutations < 100 => Err(CliError::Usage(format!(
            "--permutations must be at least 100, got {permutations}"
        ))),
        PValueArg::Perm => Ok(PValueMethod::Permutation(permutations)),
    }
}

fn variant(v: VariantArg, bound: f64) -> Result<Variant> {
    if !bound.is_finite() {
        return Err(CliError::Usage(format!("--bound must be finite, got {bound}")));
    }
    Ok(match v {
        VariantArg::Global => Variant::Global,
        VariantArg::Target => Variant::Target(bound),
        VariantArg::Conditional => Variant::Conditional(bound),
    })
}

fn hsic_cmd(a: HsicArgs) -> Result<()> {
    let method = pvalue_method(a.pvalue, a.variant, a.permutations)?;
    let seed = match (method, a.seed) {
        (PValueMethod::Permutation(_), None) => {
            return Err(CliError::Usage("permutation p-values are randomized and need --seed".into()))
        }
        (_, s) => s.unwrap_or(0),
    };
    let opts = TimeSeriesOptions {
        variant: variant(a.variant, a.bound)?,
        method,
        seed,
        ..Default::default()
    };
    let ds = load_ds(&a.dataset)?;
    let ts = hsic::hsic_timeseries(&ds, &opts);
    ensure_dir(&a.out)?;
    output::write(&a.out.join("hsic.csv"), &output::hsic_csv(&ts))?;
    output::write(&a.out.join("hsic_raw.csv"), &output::hsic_raw_csv(&ts))?;
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    for &p in &a.p {
        for &q in &a.q {
            check_fit_args(p, q)?;
        }
    }
    let model = load_model(&a.model)?;
    let cfg = load_config(&a.config)?;
    let ds = load_ds(&a.dataset)?;
    ensure_dir(&a.out)?;
    let out = |name: &str| a.out.join(name);

    output::write(&out("trajectories.csv"), &output::trajectories_csv(&ds))?;
    output::write(&out("trajectories_summary.csv"), &output::trajectory_summary_csv(&ds))?;
    output::write(&out("trajectories.svg"), &output::trajectories_svg(&ds))?;

    let cv = CvOptions {
        seed: a.seed,
        ..Default::default()
    };
    let cells = pce::cross_validate(&ds, &model, &a.p, &a.q, &cv);
    output::write(&out("q2_boxplot.csv"), &output::cv_csv(&cells))?;
    output::write(&out("q2_boxplot.svg"), &output::cv_svg(&cells))?;

    // Time-resolved predictivity on the first split of the first grid cell.
    let (train, test) = dataio::split(&ds, cv.train_fraction, pce::split_seed(a.seed, 0));
    let fit_opts = FitOptions {
        p: a.p[0],
        q: a.q[0],
        ..Default::default()
    };
    let (held, _) = pce::fit(&train, &model, &fit_opts).map_err(|e| CliError::data("pce", e))?;
    let rep = pce::q2(&held, &test).map_err(|e| CliError::data("pce", e))?;
    output::write(&out("q2.csv"), &output::q2_csv(&ds.times, &rep))?;

    let s = match &a.surrogate {
        Some(path) => dataio::load_surrogate(path).map_err(|e| CliError::data("dataio", e))?,
        None => {
            let (s, _) = pce::fit(&ds, &model, &fit_opts).map_err(|e| CliError::data("pce", e))?;
            dataio::save_surrogate(&s, &out("surrogate.json")).map_err(|e| CliError::data("dataio", e))?;
            s
        }
    };
    let sob = sobol::sobol_timeseries(&s);
    output::write(&out("sobol.csv"), &output::sobol_csv(&sob))?;
    output::write(&out("sobol.svg"), &output::series_svg(
        "First-order Sobol' indices",
        &sob.times,
        &sob.input_names,
        &sob.first,
    ))?;
    output::write(&out("variance_contribution.svg"), &output::series_svg(
        "Variance contribution",
        &sob.times,
        &sob.input_names,
        &sob.variance_contribution.iter().map(|r| r.iter().map(|v| Some(*v)).collect()).collect::<Vec<_>>(),
    ))?;

    let mids = cfg.segment_midpoints();
    let mut rankings = String::from("time,method,rank1,rank2,rank3\n");
    for &k in &mids {
        if k >= ds.n_steps() {
            continue;
        }
        if let Some(r) = sob.ranking(k) {
            rankings += &output::ranking_row(ds.times[k], "sobol", &sob.input_names, &r);
        }
    }

    for v in [VariantArg::Global, VariantArg::Target, VariantArg::Conditional] {
        let pv = if v == VariantArg::Conditional { Some(PValueArg::Perm) } else { Some(a.pvalue) };
        let opts = TimeSeriesOptions {
            variant: variant(v, a.bound)?,
            method: pvalue_method(pv, v, a.permutations)?,
            seed: a.seed,
            ..Default::default()
        };
        let ts = hsic::hsic_timeseries(&ds, &opts);
        let name = opts.variant.name();
        output::write(&out(&format!("hsic_{name}.csv")), &output::hsic_csv(&ts))?;
        output::write(&out(&format!("hsic_{name}_raw.csv")), &output::hsic_raw_csv(&ts))?;
        let idx: Vec<Vec<Option<f64>>> = ts.cells.iter().map(|r| r.iter().map(|c| c.index).collect()).collect();
        output::write(&out(&format!("hsic_{name}.svg")), &output::series_svg(
            &format!("{name} HSIC indices"),
            &ts.times,
            &ts.input_names,
            &idx,
        ))?;
        if v == VariantArg::Global {
            for &k in &mids {
                if k < ds.n_steps() {
                    rankings += &output::ranking_row(ds.times[k], "hsic", &ts.input_names, &ts.ranking(k));
                }
            }
        }
    }
    output::write(&out("rankings.csv"), &rankings)?;
    println!("report written to {}", a.out.display());
    Ok(())
}
