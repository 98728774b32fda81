//! Command-line front end: experiment sweeps, standalone decomposition,
//! and preset inspection.

use std::fs;
use std::io::{Read as _, Write as _};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ptura::config::SystemConfig;
use ptura::receiver::Receiver;
use ptura::sim::{
    derotate_segments, ebn0_to_n0, generate_scene, reer, rnmse, run_trials_parallel,
    stack_segments, RunMode, CSV_HEADER,
};
use ptura::tensor::DenseTensor;

#[derive(Parser)]
#[command(
    name = "ptura",
    about = "Unsourced random access link simulator: polar coding, Grassmannian modulation, Bayesian tensor decomposition"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run Monte Carlo trials over a (K_a, Eb/N0) sweep and write a CSV.
    Run(RunArgs),
    /// Run the tensor decomposition once and write its iteration trace.
    Decompose(DecomposeArgs),
    /// Print the built-in system presets.
    PresetList,
}

#[derive(Args)]
struct ConfigArgs {
    /// Built-in preset name (3ptura, 4ptura, 5ptura).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// TOML file with a full system configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArgs {
    /// Returns the configuration and a label for the CSV preset column.
    fn load(&self) -> Result<(SystemConfig, String)> {
        match (&self.preset, &self.config) {
            (Some(name), None) => Ok((SystemConfig::preset(name)?, name.clone())),
            (None, Some(path)) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                let cfg: SystemConfig = toml::from_str(&text)
                    .with_context(|| format!("parsing {}", path.display()))?;
                cfg.validate()?;
                let label = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "custom".into());
                Ok((cfg, label))
            }
            (None, None) => bail!("one of --preset or --config is required"),
            (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: ConfigArgs,
    /// Receiver mode.
    #[arg(long, default_value = "ibrfb", value_parser = ["ibrfb", "br", "gmbtd"])]
    mode: String,
    /// Active device count; repeat for a sweep.
    #[arg(long, required = true)]
    ka: Vec<usize>,
    /// Eb/N0 in dB; repeat for a sweep.
    #[arg(long, required = true, allow_negative_numbers = true)]
    ebn0: Vec<f64>,
    /// Trials per (K_a, Eb/N0) point.
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Base seed; trial t of a point uses base + t.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path (written atomically).
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to PTURA_THREADS or 1.
    #[arg(long)]
    threads: Option<usize>,
    /// Echo each finished row to stderr.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct DecomposeArgs {
    #[command(flatten)]
    source: ConfigArgs,
    /// Device count of the synthetic scene.
    #[arg(long, default_value_t = 50)]
    ka: usize,
    /// Eb/N0 in dB of the synthetic scene.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    ebn0: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Observation tensor file instead of a synthetic scene: one text
    /// header line "T_1 .. T_L M" then little-endian f64 re/im pairs in
    /// column-major order.
    #[arg(long)]
    tensor: Option<PathBuf>,
    /// Iteration-trace CSV path (written atomically).
    #[arg(long)]
    out: PathBuf,
}

fn atomic_write(path: &Path, body: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))
        .context("creating temporary output file")?;
    tmp.write_all(body.as_bytes())?;
    tmp.persist(path)
        .with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn thread_count(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("PTURA_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(1)
    .max(1)
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let (cfg, label) = args.source.load()?;
    let mode = RunMode::parse(&args.mode)?;
    if args.ka.is_empty() || args.ebn0.is_empty() {
        bail!("sweep lists must be non-empty");
    }
    let threads = thread_count(args.threads);
    let mut body = String::from(CSV_HEADER);
    body.push('\n');
    let total = args.ka.len() * args.ebn0.len() * args.trials;
    let mut done = 0usize;
    for &k_a in &args.ka {
        for &ebn0 in &args.ebn0 {
            let rows = run_trials_parallel(
                &cfg, &label, mode, k_a, ebn0, args.trials, args.seed, threads,
            )?;
            for r in rows {
                let line = r.csv_row();
                if args.trace {
                    eprintln!("{line}");
                }
                body.push_str(&line);
                body.push('\n');
                done += 1;
            }
            eprintln!("{done}/{total} trials");
        }
    }
    atomic_write(&args.out, &body)?;
    Ok(())
}

fn load_tensor(path: &Path) -> Result<DenseTensor> {
    let mut raw = Vec::new();
    fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .read_to_end(&mut raw)?;
    let nl = raw
        .iter()
        .position(|&b| b == b'\n')
        .context("tensor file has no header line")?;
    let header = std::str::from_utf8(&raw[..nl]).context("tensor header is not UTF-8")?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().context("bad dimension in tensor header"))
        .collect::<Result<_>>()?;
    if dims.len() < 3 {
        bail!("tensor needs at least two symbol modes plus the antenna mode");
    }
    let n: usize = dims.iter().product();
    let payload = &raw[nl + 1..];
    if payload.len() != n * 16 {
        bail!(
            "tensor payload is {} bytes, expected {} for shape {dims:?}",
            payload.len(),
            n * 16
        );
    }
    let data = payload
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    Ok(DenseTensor::from_data(&dims, data)?)
}

fn cmd_decompose(args: &DecomposeArgs) -> Result<()> {
    let (cfg, _) = args.source.load()?;
    let rx = Receiver::new(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (y, truth) = match &args.tensor {
        Some(path) => (load_tensor(path)?, None),
        None => {
            let scene = generate_scene(&rx.tx, &cfg, args.ka, args.ebn0, &mut rng)?;
            (scene.y.clone(), Some(scene))
        }
    };
    let mut expect = cfg.t_l.clone();
    expect.push(cfg.m);
    if y.shape != expect {
        bail!(
            "tensor shape {:?} does not match the configuration's {expect:?}",
            y.shape
        );
    }
    let result = rx.gmbtd_only(&y, &mut rng, true)?;
    println!("K_u_hat = {}", result.k_u_hat);
    println!("iterations = {}", result.iters);
    println!("n0_inv = {:.6e}", result.n0_inv);
    if let Some(scene) = &truth {
        let g_true = stack_segments(&scene.symbols);
        let mut g_hat = stack_segments(&result.x_hat);
        derotate_segments(&mut g_hat, &rx.tx.alloc);
        println!("rnmse = {:.6e}", rnmse(&g_true, &g_hat));
        println!("reer = {:.6e}", reer(scene.k_a.max(1), result.k_u_hat)?);
    }
    let mut body = String::from("iteration,k,residual,n0_inv\n");
    for t in &result.trace {
        body.push_str(&format!(
            "{},{},{:.8e},{:.8e}\n",
            t.iter, t.k, t.residual, t.n0_inv
        ));
    }
    atomic_write(&args.out, &body)?;
    Ok(())
}

fn cmd_preset_list() -> Result<()> {
    for name in SystemConfig::preset_names() {
        let cfg = SystemConfig::preset(name)?;
        println!("{name}:");
        println!("  L = {}", cfg.l);
        println!("  T_l = {:?}", cfg.t_l);
        println!("  B_p_l = {:?}", cfg.b_p_l);
        println!("  T = {}", cfg.t);
        println!("  M = {}", cfg.m);
        println!("  B = {}", cfg.b);
        println!("  B_c = {}", cfg.b_c);
        println!("  B_p = {}", cfg.b_p);
        println!("  n_list = {}", cfg.n_list);
        println!("  eps_a = {}", cfg.eps_a);
        println!("  eps_iter = {}", cfg.eps_iter);
        println!("  c_K = {}", cfg.c_k);
        println!("  hyperparams = {} {} {} {} {} {}",
            cfg.a0, cfg.b0, cfg.a_lambda, cfg.b_lambda, cfg.a_gamma, cfg.b_gamma);
        println!("  max_vb_iters = {}", cfg.max_vb_iters);
        println!("  max_fb_rounds = {}", cfg.max_fb_rounds);
        println!("  N0 at 0 dB = {:.6}", ebn0_to_n0(&cfg, 0.0));
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let out = match &cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Decompose(args) => cmd_decompose(args),
        Cmd::PresetList => cmd_preset_list(),
    };
    if let Err(e) = out {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
