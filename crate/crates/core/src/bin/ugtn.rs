use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ugtn::fourier_aug::{augment, augment_with_lambda, fft2d, log_amplitude_view};
use ugtn::harness::{
    evaluate, evaluate_dirs, predict, run_ablation, run_fold_logged, run_sweep, write_predictions, RunResult,
    SweepParam, TrainConfig,
};
use ugtn::segnet::{Role, SegNetwork};
use ugtn::synthdata::{
    default_specs, generate_corpus, load_pgm, read_corpus, save_pgm, write_corpus, DomainDataset, Range,
    DEFAULT_CORPUS_SEED, DEFAULT_PER_DOMAIN, DEFAULT_SIZE,
};
use ugtn::uncertainty::Estimator;
use ugtn::{Error, Result, Rng, Tensor};

#[derive(Parser)]
#[command(name = "ugtn", version, about = "Uncertainty-guided domain-generalization training for binary segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic multi-domain corpus.
    GenData(GenDataArgs),
    /// Fourier amplitude-mix one image with the style of another.
    Augment(AugmentArgs),
    /// Train on all domains but the held-out one, then evaluate on it.
    Train(TrainArgs),
    /// Score predicted masks, or a checkpoint, against ground truth.
    Evaluate(EvaluateArgs),
    /// Monte Carlo uncertainty map of a checkpoint on one image.
    Uncertainty(UncertaintyArgs),
    /// Leave-one-domain-out variant ablation, or the beta / momentum sweep.
    Ablation(AblationArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    /// Number of domains, taken from the built-in styles in order.
    #[arg(long, default_value_t = 4)]
    domains: usize,
    #[arg(long, default_value_t = DEFAULT_PER_DOMAIN)]
    per_domain: usize,
    #[arg(long, default_value_t = DEFAULT_SIZE)]
    size: usize,
    #[arg(long, default_value_t = DEFAULT_CORPUS_SEED)]
    seed: u64,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    input: PathBuf,
    /// Image whose low-frequency amplitude is mixed in.
    #[arg(long)]
    style: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fixed mixing weight instead of a Beta(alpha, alpha) draw.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Also write log-amplitude spectra of input, style and output.
    #[arg(long)]
    dump_spectrum: Option<PathBuf>,
}

/// Where the corpus comes from: a directory written by `gen-data`, or a
/// freshly generated one.
#[derive(Args, Clone)]
struct DataArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CORPUS_SEED)]
    data_seed: u64,
    #[arg(long, default_value_t = DEFAULT_PER_DOMAIN)]
    per_domain: usize,
    #[arg(long, default_value_t = DEFAULT_SIZE)]
    size: usize,
}

impl DataArgs {
    fn load(&self) -> Result<Vec<DomainDataset>> {
        match &self.data {
            Some(dir) => read_corpus(dir),
            None => generate_corpus(&default_specs(), self.per_domain, self.size, self.data_seed),
        }
    }
}

/// Config file plus per-key overrides; flags win over the file.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long, alias = "lr")]
    learning_rate: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    #[arg(long)]
    beta_max: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    passes: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    held_out: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    threads: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            cfg.apply_text(&text)?;
        }
        let flags = [
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("learning_rate", &self.learning_rate),
            ("momentum", &self.momentum),
            ("beta_max", &self.beta_max),
            ("alpha", &self.alpha),
            ("passes", &self.passes),
            ("sigma", &self.sigma),
            ("dropout", &self.dropout),
            ("seed", &self.seed),
            ("held_out", &self.held_out),
            ("variant", &self.variant),
            ("precision", &self.precision),
            ("threads", &self.threads),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Output directory for checkpoints, log and report.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of predicted masks laid out like the ground truth.
    #[arg(long, requires = "gt", conflicts_with = "ckpt")]
    pred: Option<PathBuf>,
    /// Ground-truth corpus directory (with manifest).
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Student checkpoint to run on `--data` instead of reading predictions.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Evaluate only these domains (comma separated); default all.
    #[arg(long, value_delimiter = ',')]
    domains: Vec<usize>,
    /// With `--ckpt`: also write the binarized predictions here.
    #[arg(long)]
    save_pred: Option<PathBuf>,
    #[arg(long, default_value = "report.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct UncertaintyArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 8)]
    passes: usize,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the mean prediction.
    #[arg(long)]
    mean: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sweep {
    Beta,
    M,
    Both,
}

#[derive(Args)]
struct AblationArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Training seeds averaged per cell.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// Run the full method over the beta and/or momentum grid instead.
    #[arg(long, num_args = 0..=1, default_missing_value = "both")]
    sweep: Option<Sweep>,
    #[arg(long, default_value = "ablation")]
    out: PathBuf,
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| io_error(path, e))?))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes()).and_then(|_| f.flush()).map_err(|e| io_error(path, e))
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let specs = default_specs();
    if a.domains == 0 || a.domains > specs.len() {
        return Err(Error::InvalidArgument(format!("--domains must be in 1..={}", specs.len())));
    }
    let corpus = generate_corpus(&specs[..a.domains], a.per_domain, a.size, a.seed)?;
    write_corpus(&a.out, &corpus)?;
    println!("wrote {} domains x {} samples to {}", a.domains, a.per_domain, a.out.display());
    Ok(())
}

fn run_augment(a: AugmentArgs) -> Result<()> {
    let x: Tensor<f64> = load_pgm(&a.input)?;
    let style: Tensor<f64> = load_pgm(&a.style)?;
    let out = match a.lambda {
        Some(lambda) => augment_with_lambda(&x, &style, lambda, a.alpha)?,
        None => augment(&x, &style, &mut Rng::new(a.seed, 0), a.alpha)?,
    };
    save_pgm(&out, Range::Signed, &a.out)?;
    if let Some(dir) = &a.dump_spectrum {
        for (name, t) in [("input", &x), ("style", &style), ("output", &out)] {
            let view = log_amplitude_view(&fft2d(t)?);
            save_pgm(&view, Range::Unit, &dir.join(format!("{name}_amplitude.pgm")))?;
        }
    }
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    if a.config.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let corpus = a.data.load()?;
    fs::create_dir_all(&a.out).map_err(|e| io_error(&a.out, e))?;
    write_text(&a.out.join("config.txt"), &cfg.to_text())?;
    let log_path = a.out.join("log.csv");
    let mut log = create(&log_path)?;
    let (outcome, report) = run_fold_logged(&cfg, &corpus, &mut log)?;
    drop(log);
    outcome.student.save(&a.out.join("student.ckpt"))?;
    outcome.teacher.save(&a.out.join("teacher.ckpt"))?;
    write_text(&a.out.join("report.csv"), &report.to_csv())?;
    println!(
        "{} held-out domain {}: DSC {:.2}, ASD {}",
        cfg.variant,
        cfg.held_out,
        100.0 * report.mean_dsc(),
        report.mean_asd().map_or("NA".into(), |v| format!("{v:.3}"))
    );
    Ok(())
}

fn run_evaluate(a: EvaluateArgs) -> Result<()> {
    let report = match (&a.pred, &a.ckpt) {
        (Some(pred), None) => evaluate_dirs(pred, a.gt.as_deref().expect("clap enforces --gt"))?,
        (None, Some(ckpt)) => {
            let student = SegNetwork::<f32>::load(ckpt, 0.0, Role::Student)?;
            let data = match &a.gt {
                Some(gt) => read_corpus(gt)?,
                None => a.data.load()?,
            };
            let samples: Vec<_> = data
                .into_iter()
                .filter(|d| a.domains.is_empty() || a.domains.contains(&d.domain))
                .flat_map(|d| d.samples)
                .collect();
            if samples.is_empty() {
                return Err(Error::InvalidArgument("no samples selected for evaluation".into()));
            }
            if let Some(dir) = &a.save_pred {
                write_predictions(dir, &samples, &predict(&student, &samples)?)?;
            }
            evaluate(&student, &samples)?
        }
        _ => return Err(Error::InvalidArgument("give either --pred with --gt, or --ckpt".into())),
    };
    write_text(&a.out, &report.to_csv())?;
    println!(
        "DSC {:.2}, ASD {} over {} samples",
        100.0 * report.mean_dsc(),
        report.mean_asd().map_or("NA".into(), |v| format!("{v:.3}")),
        report.scores.len()
    );
    Ok(())
}

fn run_uncertainty(a: UncertaintyArgs) -> Result<()> {
    let teacher = SegNetwork::<f32>::load(&a.ckpt, a.dropout, Role::Teacher)?;
    let x: Tensor<f32> = load_pgm(&a.input)?;
    let shape = x.shape().to_vec();
    let x = x.reshape(&[1, shape[0], shape[1], shape[2]])?;
    let estimator = Estimator {
        passes: a.passes,
        sigma: a.sigma,
        parallel: false,
    };
    let (mean, umap) = estimator.estimate(&teacher, &x, &mut Rng::new(a.seed, 0))?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    umap.emit_visualization(0, &a.out)?;
    if let Some(path) = &a.mean {
        save_pgm(&mean, Range::Unit, path)?;
    }
    Ok(())
}

fn progress(r: &RunResult) {
    eprintln!(
        "{} fold {} seed {} beta {} m {}: DSC {:.2}",
        r.variant,
        r.held_out,
        r.seed,
        r.beta_max,
        r.momentum,
        100.0 * r.dsc
    );
}

fn runs_csv(runs: &[&RunResult]) -> String {
    let mut out = String::from("variant,held_out,seed,beta_max,momentum,dsc,asd\n");
    for r in runs {
        out.push_str(&format!(
            "{},{},{},{},{},{:.6},{}\n",
            r.variant,
            r.held_out,
            r.seed,
            r.beta_max,
            r.momentum,
            100.0 * r.dsc,
            r.asd.map_or("NA".into(), |v| format!("{v:.6}"))
        ));
    }
    out
}

fn run_ablation_cmd(a: AblationArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    if a.config.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    if a.seeds.is_empty() {
        return Err(Error::Config("need at least one seed".into()));
    }
    let corpus = a.data.load()?;
    fs::create_dir_all(&a.out).map_err(|e| io_error(&a.out, e))?;
    write_text(&a.out.join("config.txt"), &cfg.to_text())?;
    match a.sweep {
        None => {
            let report = run_ablation(&cfg, &corpus, &a.seeds, &progress)?;
            write_text(&a.out.join("runs.csv"), &runs_csv(&report.runs.iter().collect::<Vec<_>>()))?;
            write_text(&a.out.join("ablation.csv"), &report.to_csv())?;
            print!("{}", report.to_csv());
        }
        Some(sweep) => {
            let params = match sweep {
                Sweep::Beta => vec![SweepParam::Beta],
                Sweep::M => vec![SweepParam::Momentum],
                Sweep::Both => vec![SweepParam::Beta, SweepParam::Momentum],
            };
            let report = run_sweep(&cfg, &corpus, &params, &a.seeds, &progress)?;
            write_text(&a.out.join("runs.csv"), &runs_csv(&report.runs.iter().map(|(_, _, r)| r).collect::<Vec<_>>()))?;
            write_text(&a.out.join("sweep.csv"), &report.to_csv())?;
            print!("{}", report.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Augment(a) => run_augment(a),
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Uncertainty(a) => run_uncertainty(a),
        Command::Ablation(a) => run_ablation_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
