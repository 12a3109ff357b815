use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use plural_inpaint::checkpoint::{load_checkpoint, save_checkpoint};
use plural_inpaint::config::TrainConfig;
use plural_inpaint::data::{generate_synthetic_dataset, image_grid, read_image, write_image, SceneAttributes};
use plural_inpaint::evaluation::{best_of_k, diversity, evaluate, sample_completions, Distance, DiversityReport, MetricReport};
use plural_inpaint::gradcheck::run_gradcheck;
use plural_inpaint::losses::LossReport;
use plural_inpaint::trainer::{load_dataset, TrainObserver, TrainState};
use plural_inpaint::Error;

#[derive(Parser)]
#[command(name = "plural-inpaint", version, about = "Pluralistic image inpainting: train, sample, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a `key = value` config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Directory for loss.csv and checkpoint.bin.
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write K completions of one image plus a grid of them.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// P6 image at the training resolution.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value = "samples")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Quality (best of K by PSNR) and diversity reports over held-out images.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of .ppm images; held-out synthetic scenes when absent.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Number of masked inputs.
        #[arg(long, default_value_t = 50)]
        n: usize,
        /// Completions per input.
        #[arg(long, default_value_t = 20)]
        k: usize,
        /// Pairs per input for the diversity scores.
        #[arg(long, default_value_t = 1000)]
        pairs: usize,
        #[arg(long, value_enum, default_value_t = DistanceKind::Features)]
        distance: DistanceKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Finite-difference gradient checks; exits nonzero on failure.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Write a synthetic dataset directory (images plus attributes.csv).
    MakeData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 32)]
        resolution: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DistanceKind {
    /// Cosine distance between extractor features.
    Features,
    /// Mean absolute pixel difference.
    L1,
}

/// Usage problems exit with 2, everything else with 1.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<ExitCode, Failure> {
    match command {
        Command::Train { config, out, resume } => train(&config, &out, resume.as_deref())?,
        Command::Sample {
            checkpoint,
            input,
            k,
            out,
            seed,
        } => sample(&checkpoint, &input, k, &out, seed)?,
        Command::Eval {
            checkpoint,
            data_dir,
            n,
            k,
            pairs,
            distance,
            seed,
            out,
        } => eval(&checkpoint, data_dir.as_deref(), n, k, pairs, distance, seed, &out)?,
        Command::Gradcheck { seed } => return gradcheck(seed),
        Command::MakeData {
            out,
            n,
            resolution,
            seed,
        } => make_data(&out, n, resolution, seed)?,
    }
    Ok(ExitCode::SUCCESS)
}

struct TrainLog {
    csv: fs::File,
    checkpoint: PathBuf,
    interval: u64,
    log_interval: u64,
}

impl TrainObserver for TrainLog {
    fn on_iteration(&mut self, state: &TrainState, report: &LossReport) -> plural_inpaint::Result<()> {
        let it = report.iteration;
        if it % self.log_interval == 0 {
            let io = |e| Error::io("loss.csv", e);
            writeln!(self.csv, "{}", report.csv_row()).map_err(io)?;
            println!(
                "iter {it:>6}  total {:>10.4}  cons_e {:.4}  kl_e {:.4}",
                report.total, report.parts.cons_e, report.parts.kl_e
            );
        }
        if self.interval > 0 && it % self.interval == 0 {
            save_checkpoint(&self.checkpoint, state)?;
        }
        Ok(())
    }
}

fn train(config: &Path, out: &Path, resume: Option<&Path>) -> Result<(), Failure> {
    let cfg = TrainConfig::load(config).map_err(|e| Failure::Usage(e.into()))?;
    let mut state = match resume {
        Some(p) => {
            let s = load_checkpoint(p).with_context(|| format!("resuming from {}", p.display()))?;
            if s.config != cfg {
                return Err(Failure::Usage(anyhow::anyhow!(
                    "{} was written with a different config than {}",
                    p.display(),
                    config.display()
                )));
            }
            s
        }
        None => TrainState::new(&cfg).map_err(|e| Failure::Usage(e.into()))?,
    };
    let data = load_dataset(&cfg)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let csv_path = out.join("loss.csv");
    let csv = if resume.is_some() && csv_path.exists() {
        fs::OpenOptions::new().append(true).open(&csv_path)
    } else {
        fs::File::create(&csv_path).and_then(|mut f| writeln!(f, "{}", LossReport::CSV_HEADER).map(|_| f))
    }
    .with_context(|| format!("opening {}", csv_path.display()))?;
    let checkpoint = out.join("checkpoint.bin");
    let mut log = TrainLog {
        csv,
        checkpoint: checkpoint.clone(),
        interval: cfg.checkpoint_interval,
        log_interval: cfg.log_interval,
    };
    state.run_until(cfg.iterations, &data, &mut log)?;
    save_checkpoint(&checkpoint, &state)?;
    println!("wrote {} and {}", csv_path.display(), checkpoint.display());
    Ok(())
}

fn sample(checkpoint: &Path, input: &Path, k: usize, out: &Path, seed: u64) -> Result<(), Failure> {
    if k == 0 {
        return Err(Failure::Usage(anyhow::anyhow!("--k must be at least 1")));
    }
    let state = load_checkpoint(checkpoint)?;
    let image = read_image(input)?;
    let r = state.config.resolution;
    let s = image.shape();
    if (s.h, s.w) != (r, r) {
        return Err(Failure::Usage(anyhow::anyhow!(
            "{} is {}x{}, the checkpoint was trained at {r}x{r}",
            input.display(),
            s.w,
            s.h
        )));
    }
    let samples = sample_completions(&state.generator, &image, &state.mask(), k, seed)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("input");
    for (i, img) in samples.iter().enumerate() {
        write_image(&out.join(format!("{stem}_{i:03}.ppm")), img)?;
    }
    let cols = k.min(5);
    write_image(&out.join(format!("{stem}_grid.ppm")), &image_grid(&samples, cols)?)?;
    println!("wrote {k} completions and a grid to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    checkpoint: &Path,
    data_dir: Option<&Path>,
    n: usize,
    k: usize,
    pairs: usize,
    distance: DistanceKind,
    seed: u64,
    out: &Path,
) -> Result<(), Failure> {
    if n == 0 || k < 2 {
        return Err(Failure::Usage(anyhow::anyhow!("need --n >= 1 and --k >= 2")));
    }
    let state = load_checkpoint(checkpoint)?;
    let cfg = &state.config;
    let data = match data_dir {
        Some(dir) => load_dataset(&TrainConfig {
            data_dir: dir.display().to_string(),
            ..cfg.clone()
        })?,
        // a seed the training set was not drawn with
        None => generate_synthetic_dataset(n, (cfg.resolution, cfg.resolution), cfg.seed.wrapping_add(1_000_003))?,
    };
    let n = n.min(data.len());
    let mask = state.mask();
    let dist = match distance {
        DistanceKind::Features => Distance::FeatureCosine(&state.extractor),
        DistanceKind::L1 => Distance::MeanAbs,
    };
    let (mut best, mut targets) = (Vec::new(), Vec::new());
    let (mut global, mut local, mut n_pairs) = (0.0, 0.0, 0);
    for i in 0..n {
        let target = data.image(i);
        let samples = sample_completions(&state.generator, &target, &mask, k, seed.wrapping_add(i as u64))?;
        let (b, _) = best_of_k(&samples, &target)?;
        best.push(samples[b].clone());
        targets.push(target);
        let d = diversity(&samples, &mask, dist, pairs, seed.wrapping_add(i as u64))?;
        global += d.global_score;
        local += d.local_score;
        n_pairs += d.n_pairs;
    }
    let metrics = evaluate(&best, &targets)?;
    let div = DiversityReport {
        global_score: global / n as f64,
        local_score: local / n as f64,
        n_pairs,
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_csv(&out.join("metrics.csv"), MetricReport::CSV_HEADER, &metrics.csv_row())?;
    write_csv(&out.join("diversity.csv"), DiversityReport::CSV_HEADER, &div.csv_row())?;
    println!("images          {}", metrics.n_images);
    println!("completions     {k} per image, best by PSNR");
    println!("L1 (%)          {:.3}", metrics.l1_percent);
    println!("L2 (%)          {:.3}", metrics.l2_percent);
    println!("PSNR (dB)       {:.3}  ({} identical)", metrics.psnr_db, metrics.psnr_identical);
    println!("SSIM            {:.4}", metrics.ssim);
    println!("global score    {:.5}", div.global_score);
    println!("local score     {:.5}", div.local_score);
    println!("pairs           {}", div.n_pairs);
    Ok(())
}

fn write_csv(path: &Path, header: &str, row: &str) -> anyhow::Result<()> {
    fs::write(path, format!("{header}\n{row}\n")).with_context(|| format!("writing {}", path.display()))
}

fn gradcheck(seed: u64) -> Result<ExitCode, Failure> {
    let report = run_gradcheck(seed)?;
    for c in &report.checks {
        println!(
            "{:<32} {}  max rel err {:.2e} over {} comparisons",
            c.name,
            if c.passed { "ok  " } else { "FAIL" },
            c.max_rel_err,
            c.comparisons
        );
    }
    println!("{} checks in {:.1}s", report.checks.len(), report.elapsed.as_secs_f64());
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn make_data(out: &Path, n: usize, resolution: usize, seed: u64) -> Result<(), Failure> {
    if n == 0 || resolution == 0 {
        return Err(Failure::Usage(anyhow::anyhow!("--n and --resolution must be positive")));
    }
    let data = generate_synthetic_dataset(n, (resolution, resolution), seed)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut attrs = format!("file,{}\n", SceneAttributes::CSV_HEADER);
    for i in 0..data.len() {
        let name = format!("{i:05}.ppm");
        write_image(&out.join(&name), &data.image(i))?;
        attrs.push_str(&format!("{name},{}\n", data.attributes[i]));
    }
    fs::write(out.join("attributes.csv"), attrs).context("writing attributes.csv")?;
    println!("wrote {n} images to {}", out.display());
    Ok(())
}
