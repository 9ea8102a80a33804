//! `sivae`: train, evaluate, score and plot models, and run equilibrium checks.
//!
//! Outputs go to `--out-dir`, else `$SIVAE_OUT_DIR`, else the working
//! directory. Errors are printed to stderr as one JSON object and mapped to
//! exit codes 2 (usage or config), 3 (divergence) and 4 (I/O).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use sivae_core::checkpoint::{self, Checkpoint};
use sivae_core::config::{parse_config, to_map};
use sivae_core::data::{eight_gaussian_centers, load_idx, sample_toy, DatasetSpec, ToyDatasetId};
use sivae_core::equilibrium::{run_spec, EquilibriumSpec};
use sivae_core::metrics::{
    auroc, grid_normalized_elbo, histogram_divergences, iw_log_likelihood, mode_coverage,
    model_samples, GridSpec, Histogram2D,
};
use sivae_core::plot::{render_model_density, render_samples};
use sivae_core::report::{
    metrics_csv, write_atomic, write_json, ErrorReport, MetricRow, RunManifest,
};
use sivae_core::rng::{stream, Rng};
use sivae_core::tensor::Tensor;
use sivae_core::trainers::{run_training, FINAL_CHECKPOINT, LOG_FILE};
use sivae_core::{Error, Result};

const OUT_DIR_ENV: &str = "SIVAE_OUT_DIR";
/// Radius around an 8-Gaussians center within which a sample counts for it.
const MODE_RADIUS: f64 = 0.6;
/// Share of samples a mode needs to count as covered.
const MODE_MIN_SHARE: f64 = 0.02;

#[derive(Parser)]
#[command(name = "sivae", version, about = "Soft-IntroVAE training and evaluation")]
struct Cli {
    /// Output directory (default: $SIVAE_OUT_DIR, then the working directory).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file.
    Train {
        config: PathBuf,
        /// `key=value` override applied after the file, repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Histogram KL/JSD, gnELBO and mode coverage of a 2D model.
    Eval {
        checkpoint: PathBuf,
        /// Toy dataset to compare against (default: the training dataset).
        #[arg(long)]
        dataset: Option<String>,
        /// Comma-separated subset of kl, jsd, gnelbo, modes.
        #[arg(long, default_value = "kl,jsd,gnelbo,modes")]
        metrics: String,
        /// Draws from the model and from the data for the histograms.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        /// Data points averaged by gnELBO.
        #[arg(long, default_value_t = 10_000)]
        gnelbo_points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the model samples as `samples.csv`.
        #[arg(long)]
        write_samples: bool,
    },
    /// Importance-weighted likelihood scores and AUROC for OOD detection.
    Ood {
        checkpoint: PathBuf,
        idx_in: PathBuf,
        idx_out: PathBuf,
        /// Importance samples per point.
        #[arg(long = "m", default_value_t = 5)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an equilibrium verification spec (JSON).
    Equilibrium { spec: PathBuf },
    /// Render samples or an exp(ELBO) density as a 512×512 PGM.
    Plot {
        /// Checkpoint, or a CSV of `x,y` rows for `--kind samples`.
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Model samples drawn for `--kind samples` from a checkpoint.
        #[arg(long, default_value_t = 5_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file name inside the output directory.
        #[arg(long)]
        name: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    Samples,
    Density,
}

impl PlotKind {
    fn as_str(self) -> &'static str {
        match self {
            PlotKind::Samples => "samples",
            PlotKind::Density => "density",
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let out_dir = cli
        .out_dir
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    match run(cli.command, &out_dir) {
        Ok(outputs) => {
            for o in outputs {
                println!("{}", o.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let report = ErrorReport::from(&e);
            eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
            ExitCode::from(report.exit_code as u8)
        }
    }
}

/// Wall-clock phases of one command.
struct Phases {
    list: Vec<(String, u64)>,
    current: Option<(String, Instant)>,
}

impl Phases {
    fn new() -> Self {
        Self { list: Vec::new(), current: None }
    }

    fn start(&mut self, name: &str) {
        self.finish();
        self.current = Some((name.to_string(), Instant::now()));
    }

    fn finish(&mut self) {
        if let Some((name, t)) = self.current.take() {
            self.list.push((name, t.elapsed().as_millis() as u64));
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn run(command: Command, out_dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out_dir)?;
    match command {
        Command::Train { config, overrides } => cmd_train(&config, &overrides, out_dir),
        Command::Eval { checkpoint, dataset, metrics, samples, gnelbo_points, seed, write_samples } => {
            cmd_eval(&checkpoint, dataset.as_deref(), &metrics, samples, gnelbo_points, seed, write_samples, out_dir)
        }
        Command::Ood { checkpoint, idx_in, idx_out, m, seed } => {
            cmd_ood(&checkpoint, &idx_in, &idx_out, m, seed, out_dir)
        }
        Command::Equilibrium { spec } => cmd_equilibrium(&spec, out_dir),
        Command::Plot { input, kind, n, seed, name } => {
            cmd_plot(&input, kind, n, seed, name.as_deref(), out_dir)
        }
    }
}

fn write_manifest(
    out_dir: &Path,
    command: &str,
    seed: u64,
    config: BTreeMap<String, String>,
    mut phases: Phases,
    mut outputs: Vec<PathBuf>,
    metrics: BTreeMap<String, f64>,
) -> Result<Vec<PathBuf>> {
    phases.finish();
    let path = out_dir.join(format!("{command}_manifest.json"));
    let manifest = RunManifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config,
        phases: phases.list,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        metrics,
    };
    write_json(&path, &manifest)?;
    outputs.push(path);
    Ok(outputs)
}

fn cmd_train(config: &Path, overrides: &[String], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut phases = Phases::new();
    phases.start("config");
    let cfg = parse_config(config, overrides)?;
    phases.start("train");
    let (_, log) = run_training(&cfg, Some(out_dir))?;
    let mut metrics = BTreeMap::new();
    if let Some(r) = log.last() {
        for (k, v) in [
            ("loss_enc", r.loss_enc),
            ("loss_dec", r.loss_dec),
            ("kl_real", r.kl_real),
            ("kl_fake", r.kl_fake),
            ("rec_real", r.rec_real),
        ] {
            metrics.insert(k.to_string(), v);
        }
    }
    let outputs = vec![out_dir.join(FINAL_CHECKPOINT), out_dir.join(LOG_FILE)];
    write_manifest(out_dir, "train", cfg.seed, to_map(&cfg), phases, outputs, metrics)
}

/// Parses the `--metrics` list.
fn metric_set(list: &str) -> Result<Vec<&str>> {
    const KNOWN: [&str; 4] = ["kl", "jsd", "gnelbo", "modes"];
    let mut out = Vec::new();
    for m in list.split(',').map(str::trim).filter(|m| !m.is_empty()) {
        if !KNOWN.contains(&m) {
            return Err(Error::config("metrics", format!("unknown metric `{m}`")));
        }
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::config("metrics", "empty metric list"));
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    ckpt_path: &Path,
    dataset: Option<&str>,
    metrics: &str,
    n: usize,
    gnelbo_points: usize,
    seed: u64,
    write_samples: bool,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut phases = Phases::new();
    phases.start("load");
    let wanted = metric_set(metrics)?;
    if n == 0 || gnelbo_points == 0 {
        return Err(Error::config("samples", "sample counts must be positive"));
    }
    let Checkpoint { model, config } = checkpoint::load(ckpt_path)?;
    let ds: ToyDatasetId = match (dataset, &config.dataset) {
        (Some(name), _) => name.parse()?,
        (None, DatasetSpec::Toy(id)) => *id,
        (None, DatasetSpec::Idx(_)) => {
            return Err(Error::config("dataset", "image models need an explicit 2D --dataset"))
        }
    };
    if model.data_dim != 2 {
        return Err(Error::Dimension(format!(
            "model generates {}-dimensional data, {ds} is 2-dimensional",
            model.data_dim
        )));
    }

    phases.start("sample");
    let gen = model_samples(&model, n, &mut Rng::substream(seed, stream::EVAL))?;
    let data = sample_toy(ds, n, &mut Rng::substream(seed, stream::DATA))?;
    let settings = |extra: &str| format!("dataset={ds};{extra}");
    let mut rows = Vec::new();
    if wanted.iter().any(|m| *m == "kl" || *m == "jsd") {
        phases.start("histograms");
        let div = histogram_divergences(&Histogram2D::standard_from(&gen)?, &Histogram2D::standard_from(&data)?)?;
        let s = settings(&format!("samples={n};bins=200"));
        for (name, v) in [("kl", div.kl), ("jsd", div.jsd)] {
            if wanted.contains(&name) {
                rows.push(MetricRow { metric: name.into(), value: v, seed, settings: s.clone() });
            }
        }
    }
    if wanted.contains(&"gnelbo") {
        phases.start("gnelbo");
        let pts = data.slice_rows(0, gnelbo_points.min(n))?;
        let v = grid_normalized_elbo(&model, &config.weights(2), &GridSpec::standard(), &pts, seed)?;
        let s = settings(&format!("points={};grid=200", pts.rows()));
        rows.push(MetricRow { metric: "gnelbo".into(), value: v, seed, settings: s });
    }
    if wanted.contains(&"modes") {
        if ds != ToyDatasetId::EightGaussians {
            return Err(Error::config("metrics", "mode coverage is defined for eight_gaussians only"));
        }
        phases.start("modes");
        let shares = mode_coverage(&gen, &eight_gaussian_centers(), MODE_RADIUS)?;
        let covered = shares.iter().filter(|s| **s >= MODE_MIN_SHARE).count();
        let s = settings(&format!("samples={n};radius={MODE_RADIUS};min_share={MODE_MIN_SHARE}"));
        rows.push(MetricRow { metric: "modes_covered".into(), value: covered as f64, seed, settings: s.clone() });
        rows.push(MetricRow {
            metric: "mode_mass".into(),
            value: shares.iter().sum(),
            seed,
            settings: s,
        });
    }

    phases.start("write");
    let csv_path = out_dir.join("metrics.csv");
    write_atomic(&csv_path, metrics_csv(&rows).as_bytes())?;
    let mut outputs = vec![csv_path];
    if write_samples {
        let p = out_dir.join("samples.csv");
        write_atomic(&p, samples_csv(&gen).as_bytes())?;
        outputs.push(p);
    }
    let values = rows.iter().map(|r| (r.metric.clone(), r.value)).collect();
    let mut echo = to_map(&config);
    echo.insert("eval_checkpoint".into(), ckpt_path.display().to_string());
    echo.insert("eval_dataset".into(), ds.to_string());
    write_manifest(out_dir, "eval", seed, echo, phases, outputs, values)
}

fn samples_csv(t: &Tensor) -> String {
    let mut out = String::from("x,y\n");
    for i in 0..t.rows() {
        let r = t.row(i);
        out.push_str(&format!("{},{}\n", r[0], r[1]));
    }
    out
}

/// Reads `x,y` rows; a non-numeric first line is taken as a header.
fn read_samples_csv(path: &Path) -> Result<Tensor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(v) if v.len() == 2 => data.extend(v),
            Err(_) if n == 0 => continue,
            _ => {
                return Err(Error::Dimension(format!(
                    "{} line {}: expected two numbers",
                    path.display(),
                    n + 1
                )))
            }
        }
    }
    if data.is_empty() {
        return Ok(Tensor::zeros(&[0, 2]));
    }
    Tensor::matrix(data.len() / 2, 2, data)
}

fn cmd_ood(
    ckpt_path: &Path,
    idx_in: &Path,
    idx_out: &Path,
    m: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut phases = Phases::new();
    phases.start("load");
    let Checkpoint { model, config } = checkpoint::load(ckpt_path)?;
    let set_in = load_idx(idx_in)?;
    let set_out = load_idx(idx_out)?;
    for (p, s) in [(idx_in, &set_in), (idx_out, &set_out)] {
        if s.dim() != model.data_dim {
            return Err(Error::Dimension(format!(
                "{} has {} pixels per image, the model expects {}",
                p.display(),
                s.dim(),
                model.data_dim
            )));
        }
    }
    phases.start("score");
    // Each set gets the same fresh stream, so identical files score identically.
    let score = |images| iw_log_likelihood(&model, images, m, config.beta_rec, &mut Rng::substream(seed, stream::EVAL));
    let s_in = score(&set_in.images)?;
    let s_out = score(&set_out.images)?;
    let a = auroc(&s_in, &s_out)?;

    phases.start("write");
    let mut csv = String::from("set,index,log_likelihood\n");
    for (name, scores) in [("in", &s_in), ("out", &s_out)] {
        for (i, s) in scores.iter().enumerate() {
            csv.push_str(&format!("{name},{i},{s}\n"));
        }
    }
    let scores_path = out_dir.join("ood_scores.csv");
    write_atomic(&scores_path, csv.as_bytes())?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let summary = json!({
        "auroc": a,
        "m": m,
        "seed": seed,
        "checkpoint": ckpt_path.display().to_string(),
        "idx_in": idx_in.display().to_string(),
        "idx_out": idx_out.display().to_string(),
        "n_in": s_in.len(),
        "n_out": s_out.len(),
        "mean_log_likelihood_in": mean(&s_in),
        "mean_log_likelihood_out": mean(&s_out),
    });
    let summary_path = out_dir.join("ood_summary.json");
    write_json(&summary_path, &summary)?;
    let metrics = BTreeMap::from([("auroc".to_string(), a)]);
    write_manifest(out_dir, "ood", seed, to_map(&config), phases, vec![scores_path, summary_path], metrics)
}

fn cmd_equilibrium(spec_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let spec: EquilibriumSpec = serde_json::from_str(&text)
        .map_err(|e| Error::config("spec", format!("{}: {e}", spec_path.display())))?;
    let report = run_spec(&spec)?;
    let path = out_dir.join("equilibrium_report.json");
    write_json(&path, &report)?;
    Ok(vec![path])
}

fn cmd_plot(
    input: &Path,
    kind: PlotKind,
    n: usize,
    seed: u64,
    name: Option<&str>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let raster = if is_checkpoint(input)? {
        let Checkpoint { model, config } = checkpoint::load(input)?;
        match kind {
            PlotKind::Samples => {
                if model.data_dim != 2 {
                    return Err(Error::Dimension("sample plots need a 2D model".into()));
                }
                render_samples(&model_samples(&model, n, &mut Rng::substream(seed, stream::EVAL))?)?
            }
            PlotKind::Density => render_model_density(&model, &config.weights(2), seed)?,
        }
    } else {
        match kind {
            PlotKind::Samples => render_samples(&read_samples_csv(input)?)?,
            PlotKind::Density => {
                return Err(Error::config("kind", "density plots need a checkpoint"))
            }
        }
    };
    let file = name.map(str::to_string).unwrap_or_else(|| format!("{}.pgm", kind.as_str()));
    let path = out_dir.join(file);
    raster.write_pgm(&path)?;
    Ok(vec![path])
}

fn is_checkpoint(path: &Path) -> Result<bool> {
    use std::io::Read;
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 6];
    let n = f.read(&mut head).map_err(|e| Error::io(path, e))?;
    Ok(&head[..n] == b"SIVAE1")
}
