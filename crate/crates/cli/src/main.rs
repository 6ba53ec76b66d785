use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dcsnn::data::{load_mnist, locate_mnist, LabeledImage, Split};
use dcsnn::harness::config::{self, Profile, Task1Config};
use dcsnn::harness::config::{BarsConfig, Task2Config};
use dcsnn::harness::{bars, checkpoint, reconstruct, task1, task2};
use dcsnn::plasticity::Rule;
use dcsnn::{Error, Result};

#[derive(Parser)]
#[command(name = "dcsnn", version, about = "Spiking convolutional network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Paper => Profile::Paper,
        }
    }
}

#[derive(Args)]
struct Common {
    /// TOML config; replaces the built-in profile.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "runs/out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "desk")]
    profile: ProfileArg,
    /// Directory holding the MNIST IDX files (optionally gzipped).
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    /// Print the effective config as TOML and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Layer-by-layer training on MNIST with periodic evaluation.
    Task1Train {
        #[command(flatten)]
        common: Common,
        /// Start over instead of resuming from the latest checkpoint.
        #[arg(long)]
        fresh: bool,
    },
    /// Evaluates a Task 1 checkpoint.
    Task1Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory (defaults to <out>/checkpoints/latest).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of test images (defaults to the config's slice size).
        #[arg(long)]
        images: Option<usize>,
    },
    /// Task 1 training repeated over several training-set fractions.
    FractionCurve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0.2,1.0")]
        fractions: Vec<f64>,
    },
    /// Two-digit tasks over digit pairs, S2 map counts and S2 rules.
    Task2Sweep {
        #[command(flatten)]
        common: Common,
        /// Digit pairs such as `1-7,3-8` (defaults to the config's list).
        #[arg(long, value_delimiter = ',')]
        pairs: Vec<String>,
        /// S2 map counts (defaults to the config's list).
        #[arg(long, value_delimiter = ',')]
        maps: Vec<usize>,
        /// S2 rules (defaults to the config's list).
        #[arg(long, value_delimiter = ',', value_enum)]
        rules: Vec<RuleArg>,
        /// Retrain every cell instead of reusing matching cell checkpoints.
        #[arg(long)]
        fresh: bool,
    },
    /// Oriented-bars problem over a range of seeds.
    Bars {
        #[command(flatten)]
        common: Common,
        /// Learning rule of S1.
        #[arg(long, value_enum, default_value = "r-stdp")]
        rule: RuleArg,
        /// Number of seeds, starting at --seed (default 0).
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Renders feature maps of a checkpoint as PGM images.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory (defaults to <out>/checkpoints/latest).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Layer name, such as S2.
        #[arg(long)]
        layer: String,
        /// Map indices (defaults to every map of the layer).
        #[arg(long, value_delimiter = ',')]
        maps: Vec<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Stdp,
    RStdp,
}

impl From<RuleArg> for Rule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Stdp => Rule::Stdp,
            RuleArg::RStdp => Rule::RStdp,
        }
    }
}

fn mnist(dir: &Option<PathBuf>) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
    let dir = match dir {
        Some(d) => d.clone(),
        None => locate_mnist().ok_or_else(|| {
            Error::InvalidInput("MNIST not found; pass --mnist-dir or set MNIST_DIR".into())
        })?,
    };
    Ok((load_mnist(&dir, Split::Train)?, load_mnist(&dir, Split::Test)?))
}

fn parse_pair(s: &str) -> Result<(u32, u32)> {
    let bad = || Error::InvalidInput(format!("bad digit pair {s:?}; expected e.g. 3-8"));
    let (a, b) = s.split_once('-').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn task1_config(c: &Common) -> Result<Task1Config> {
    let mut cfg = match &c.config {
        Some(p) => config::load_toml(p)?,
        None => config::task1_config(c.profile.into()),
    };
    if let Some(s) = c.seed {
        cfg.task1.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn log(msg: &str) {
    static START: OnceLock<Instant> = OnceLock::new();
    let t = START.get_or_init(Instant::now).elapsed().as_secs_f64();
    eprintln!("[{t:8.1}s] {msg}");
}

fn dump(c: &Common, toml: Result<String>) -> Result<bool> {
    if c.dump_config {
        print!("{}", toml?);
    }
    Ok(c.dump_config)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Task1Train { common, fresh } => {
            let cfg = task1_config(&common)?;
            if dump(&common, config::to_toml(&cfg))? {
                return Ok(());
            }
            let (train, test) = mnist(&common.mnist_dir)?;
            let o = task1::train_task1(&cfg, &train, &test, &common.out, !fresh, &mut log)?;
            println!(
                "accuracy {:.4} on {} test images after {} iterations",
                o.final_metrics.accuracy(),
                o.final_metrics.total,
                o.iterations
            );
        }
        Command::Task1Eval {
            common,
            checkpoint,
            images,
        } => {
            let cfg = task1_config(&common)?;
            if dump(&common, config::to_toml(&cfg))? {
                return Ok(());
            }
            let (_, test) = mnist(&common.mnist_dir)?;
            let dir = checkpoint.unwrap_or_else(|| task1::latest_dir(&common.out));
            let n = images.unwrap_or(cfg.task1.eval_images);
            let m = task1::eval_checkpoint(&cfg, &dir, &test, n)?;
            std::fs::create_dir_all(&common.out)?;
            dcsnn::harness::metrics::write_confusion(&common.out.join("eval_confusion.csv"), &m)?;
            println!("accuracy {:.4} on {} test images", m.accuracy(), m.total);
        }
        Command::FractionCurve { common, fractions } => {
            let cfg = task1_config(&common)?;
            if dump(&common, config::to_toml(&cfg))? {
                return Ok(());
            }
            let (train, test) = mnist(&common.mnist_dir)?;
            let rows = task1::train_fraction_curve(&cfg, &fractions, &train, &test, &common.out, &mut log)?;
            for (f, a) in rows {
                println!("fraction {f}: accuracy {a:.4}");
            }
        }
        Command::Task2Sweep {
            common,
            pairs,
            maps,
            rules,
            fresh,
        } => {
            let mut cfg: Task2Config = match &common.config {
                Some(p) => config::load_toml(p)?,
                None => config::task2_config(common.profile.into()),
            };
            if !pairs.is_empty() {
                cfg.sweep.pairs = pairs.iter().map(|p| parse_pair(p)).collect::<Result<_>>()?;
            }
            if !maps.is_empty() {
                cfg.sweep.s2_map_counts = maps;
            }
            if !rules.is_empty() {
                cfg.sweep.s2_rules = rules.into_iter().map(Rule::from).collect();
            }
            if let Some(s) = common.seed {
                cfg.sweep.seeds = vec![s];
            }
            cfg.sweep.validate()?;
            if dump(&common, config::to_toml(&cfg))? {
                return Ok(());
            }
            let (train, test) = mnist(&common.mnist_dir)?;
            let rows = task2::run_sweep(&cfg, &train, &test, Some(&common.out), !fresh, &mut log)?;
            for &m in &cfg.sweep.s2_map_counts {
                for &r in &cfg.sweep.s2_rules {
                    if let Some(a) = task2::mean_accuracy(&rows, m, r) {
                        println!("maps {m} {r:?}: mean accuracy {a:.4}");
                    }
                }
            }
        }
        Command::Bars { common, rule, seeds } => {
            let cfg: BarsConfig = match &common.config {
                Some(p) => config::load_toml(p)?,
                None => BarsConfig::default(),
            };
            if dump(&common, config::to_toml(&cfg))? {
                return Ok(());
            }
            let first = common.seed.unwrap_or(0);
            let seeds: Vec<u64> = (first..first + seeds).collect();
            let outcomes = bars::run_bars_seeds(&cfg, rule.into(), &seeds)?;
            std::fs::create_dir_all(&common.out)?;
            bars::write_report(&common.out.join("bars.csv"), &outcomes)?;
            let wins = outcomes.iter().filter(|o| o.success).count();
            println!("{wins}/{} seeds solved the task", outcomes.len());
        }
        Command::Reconstruct {
            common,
            checkpoint: dir,
            layer,
            maps,
        } => {
            let dir = dir.unwrap_or_else(|| task1::latest_dir(&common.out));
            let net = if dir.join(checkpoint::NETWORK).exists() {
                checkpoint::load_saved(&dir)?.0
            } else {
                checkpoint::load(&dir, task1_config(&common)?.network)?.0
            };
            let l = net
                .config
                .layer_index(&layer)
                .ok_or_else(|| Error::InvalidInput(format!("unknown layer {layer:?}")))?;
            let maps = if maps.is_empty() {
                (0..net.s_layer(l).cfg.maps).collect()
            } else {
                maps
            };
            std::fs::create_dir_all(&common.out)?;
            for m in maps {
                let r = reconstruct::reconstruct(&net, l, m)?;
                r.save_pgm(&common.out.join(format!("{layer}_map{m:03}.pgm")))?;
            }
            println!("wrote reconstructions of {layer} to {}", common.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
