//! `opreslab`: generate PDE datasets, derive resolutions, train Fourier
//! neural operators, and run multi-resolution diagnostics.
//!
//! Exit codes: 0 success, 2 usage, 3 runtime/data, 4 numerical failure.

use clap::{Args, Parser, Subcommand, ValueEnum};
use opreslab::diagnostics::{self, ExperimentPlan};
use opreslab::generators::{self, GridPack, Lineage, PackMeta, PackParams};
use opreslab::model::{init_params, FnoSpec};
use opreslab::training::{self, LossKind, MixEntry, MixSpec, TrainConfig, TrainSet};
use opreslab::{Error, GridField};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "opreslab",
    version,
    about = "Multi-resolution laboratory for Fourier neural operators",
    propagate_version = true
)]
struct Cli {
    /// Worker threads for generation, training, and evaluation
    /// (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output root (default: $OPRESLAB_OUT, else the current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Refuse to overwrite existing outputs instead of rewriting them.
    #[arg(long, global = true)]
    no_clobber: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PdeArg {
    Darcy,
    Burgers,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Data,
    Physics,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a master-resolution GridPack (plus JSON sidecar).
    Generate {
        #[arg(long, value_enum)]
        pde: PdeArg,
        /// Samples per axis of the master grid.
        #[arg(long)]
        res: usize,
        /// Number of samples.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Terminal time of the input-to-output map (burgers only).
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        /// Output file name (default `<pde>_r<res>.gpk`).
        #[arg(long)]
        name: Option<String>,
    },
    /// Derive lower-resolution (optionally low-pass-filtered) packs.
    Derive {
        /// Master pack to derive from.
        #[arg(long = "in")]
        input: PathBuf,
        /// Low-pass limit applied at the master resolution before
        /// resampling.
        #[arg(long = "limits")]
        limit: Option<usize>,
        /// Target resolutions, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        res: Vec<usize>,
    },
    /// Train an operator; writes a run directory with config, logs, and a
    /// checkpoint.
    Train(TrainArgs),
    /// Run an experiment plan (interpolation, extrapolation,
    /// cross-resolution, mix or modes sweep); writes report directories.
    #[command(alias = "eval")]
    Experiment {
        /// JSON plan file.
        #[arg(long)]
        plan: PathBuf,
        /// Override the plan's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Report directory name (default: plan file stem).
        #[arg(long)]
        name: Option<String>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Training packs, comma separated; one resolution each.
    #[arg(long, value_delimiter = ',', required = true)]
    data: Vec<PathBuf>,
    /// Mix proportions aligned with `--data` (default: use every sample).
    #[arg(long, value_delimiter = ',')]
    mix: Vec<f64>,
    /// Mix description file (JSON MixSpec); alternative to `--mix`.
    #[arg(long)]
    mixfile: Option<PathBuf>,
    /// Total samples drawn by the mix (default: pack size).
    #[arg(long)]
    total: Option<usize>,
    /// Validation packs evaluated every epoch.
    #[arg(long, value_delimiter = ',')]
    val: Vec<PathBuf>,
    /// Defaults file (JSON, same fields as the flags below).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Physics weight in [0, 1).
    #[arg(long)]
    w: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Spectral-layer channel width.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    /// Retained wavenumbers per axis (default: train resolution / 2).
    #[arg(long)]
    modes: Option<usize>,
    /// Run directory name (default `run_<seed>`).
    #[arg(long)]
    run_name: Option<String>,
}

#[derive(serde::Deserialize, Default)]
#[serde(default)]
struct TrainFileConfig {
    loss: Option<String>,
    w: Option<f64>,
    epochs: Option<usize>,
    lr: Option<f64>,
    weight_decay: Option<f64>,
    batch: Option<usize>,
    seed: Option<u64>,
    width: Option<usize>,
    layers: Option<usize>,
    modes: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        // ignore failure if a pool already exists (tests)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Usage(_) => 2u8,
                Error::Numerical(_) => 4u8,
                _ => 3u8,
            })
        }
    }
}

fn out_root(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os("OPRESLAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn refuse_clobber(cli: &Cli, path: &Path) -> Result<(), Error> {
    if cli.no_clobber && path.exists() {
        return Err(Error::Data(format!(
            "{} exists and --no-clobber is set",
            path.display()
        )));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Generate {
            pde,
            res,
            n,
            seed,
            t,
            name,
        } => cmd_generate(cli, *pde, *res, *n, *seed, *t, name.as_deref()),
        Command::Derive { input, limit, res } => cmd_derive(cli, input, *limit, res),
        Command::Train(args) => cmd_train(cli, args),
        Command::Experiment { plan, seed, name } => cmd_experiment(cli, plan, *seed, name.as_deref()),
    }
}

fn cmd_generate(
    cli: &Cli,
    pde: PdeArg,
    res: usize,
    n: usize,
    seed: u64,
    t: f64,
    name: Option<&str>,
) -> Result<(), Error> {
    if n == 0 {
        return Err(Error::Usage("--n must be at least 1".into()));
    }
    let (pack, default_name) = match pde {
        PdeArg::Darcy => {
            let samples = generators::gen_darcy(n, res, seed)?;
            let inputs: Vec<GridField> = samples.iter().map(|s| s.a.clone()).collect();
            let labels: Vec<GridField> = samples.iter().map(|s| s.u.clone()).collect();
            let meta = PackMeta {
                pde: "darcy".into(),
                params: PackParams {
                    a_levels: Some([3.0, 12.0]),
                    f: Some(generators::darcy::FORCING),
                    ..Default::default()
                },
                lowpass_limit: None,
                seed,
                lineage: Lineage::default(),
                created_at: generators::timestamp(),
            };
            (GridPack::from_fields(&inputs, &labels, meta)?, format!("darcy_r{res}.gpk"))
        }
        PdeArg::Burgers => {
            let samples = generators::gen_burgers(n, res, t, seed)?;
            let inputs: Vec<GridField> = samples.iter().map(|s| s.u0.clone()).collect();
            let labels: Vec<GridField> = samples.iter().map(|s| s.u_t.clone()).collect();
            let meta = PackMeta {
                pde: "burgers".into(),
                params: PackParams {
                    nu: Some(1e-3),
                    t_final: Some(t),
                    ..Default::default()
                },
                lowpass_limit: None,
                seed,
                lineage: Lineage::default(),
                created_at: generators::timestamp(),
            };
            (GridPack::from_fields(&inputs, &labels, meta)?, format!("burgers_r{res}.gpk"))
        }
    };
    let path = out_root(cli).join(name.unwrap_or(&default_name));
    refuse_clobber(cli, &path)?;
    pack.write(&path)?;
    println!("wrote {} ({} samples at {res}^{})", path.display(), pack.count, pack.dims);
    Ok(())
}

fn cmd_derive(cli: &Cli, input: &Path, limit: Option<usize>, res: &[usize]) -> Result<(), Error> {
    let master = GridPack::read(input)?;
    let derived = generators::derive_resolutions(
        &master,
        res,
        limit,
        &input.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    )?;
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "pack".into());
    // strip the master's `_r<res>` suffix before tagging the derived name
    let base = match stem.rfind("_r") {
        Some(i) if stem[i + 2..].chars().all(|c| c.is_ascii_digit()) => &stem[..i],
        _ => &stem[..],
    };
    for pack in derived {
        let name = match limit {
            Some(l) => format!("{base}_l{l}_r{}.gpk", pack.resolution),
            None => format!("{base}_r{}.gpk", pack.resolution),
        };
        let path = out_root(cli).join(name);
        refuse_clobber(cli, &path)?;
        pack.write(&path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn effective<T: Copy>(flag: Option<T>, file: Option<T>, default: T) -> (T, &'static str) {
    match (flag, file) {
        (Some(v), _) => (v, "cli"),
        (None, Some(v)) => (v, "config-file"),
        (None, None) => (default, "default"),
    }
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<(), Error> {
    let file_cfg: TrainFileConfig = match &args.config {
        Some(path) => serde_json::from_slice(&std::fs::read(path)?)?,
        None => TrainFileConfig::default(),
    };

    let mut packs: BTreeMap<usize, GridPack> = BTreeMap::new();
    let mut order = Vec::new();
    for path in &args.data {
        let pack = GridPack::read(path)?;
        order.push(pack.resolution);
        if packs.insert(pack.resolution, pack).is_some() {
            return Err(Error::Usage(format!(
                "--data lists two packs at the same resolution ({})",
                path.display()
            )));
        }
    }
    let pde = packs.values().next().map(|p| p.meta.pde.clone()).unwrap_or_default();
    let dims = packs.values().next().map(|p| p.dims).unwrap_or(2);
    let top_res = *packs.keys().max().unwrap();

    let defaults = match pde.as_str() {
        "burgers" => TrainConfig::burgers_defaults(),
        _ => TrainConfig::darcy_defaults(),
    };
    let file_loss = match file_cfg.loss.as_deref() {
        Some("data") => Some(LossKind::Data),
        Some("data+physics") | Some("physics") => Some(LossKind::DataPhysics),
        Some(other) => {
            return Err(Error::Usage(format!(
                "config file loss `{other}` must be data or physics"
            )))
        }
        None => None,
    };
    let cli_loss = args.loss.map(|l| match l {
        LossArg::Data => LossKind::Data,
        LossArg::Physics => LossKind::DataPhysics,
    });
    let (loss, loss_src) = effective(cli_loss, file_loss, defaults.loss);
    let (w, w_src) = effective(args.w, file_cfg.w, if loss == LossKind::DataPhysics { 0.1 } else { 0.0 });
    let (epochs, epochs_src) = effective(args.epochs, file_cfg.epochs, defaults.epochs);
    let (lr, lr_src) = effective(args.lr, file_cfg.lr, defaults.lr);
    let (wd, wd_src) = effective(args.weight_decay, file_cfg.weight_decay, defaults.weight_decay);
    let (batch, batch_src) = effective(args.batch, file_cfg.batch, defaults.batch_size);
    let (seed, seed_src) = effective(args.seed, file_cfg.seed, 0);
    let (width, _) = effective(args.width, file_cfg.width, 32);
    let (layers, _) = effective(args.layers, file_cfg.layers, 4);
    let (modes, modes_src) = effective(args.modes, file_cfg.modes, top_res / 2);

    let config = TrainConfig {
        lr,
        weight_decay: wd,
        batch_size: batch,
        epochs,
        loss,
        w,
        seed,
    };
    config.validate()?;
    println!(
        "config: loss={loss:?}({loss_src}) w={w}({w_src}) lr={lr}({lr_src}) weight_decay={wd}({wd_src}) \
         batch={batch}({batch_src}) epochs={epochs}({epochs_src}) seed={seed}({seed_src}) modes={modes}({modes_src})"
    );

    let mix: Option<MixSpec> = if let Some(path) = &args.mixfile {
        Some(serde_json::from_slice(&std::fs::read(path)?)?)
    } else if !args.mix.is_empty() {
        if args.mix.len() != order.len() {
            return Err(Error::Usage(format!(
                "--mix lists {} proportions for {} packs",
                args.mix.len(),
                order.len()
            )));
        }
        let total = args.total.unwrap_or_else(|| packs.values().map(|p| p.count).min().unwrap());
        Some(MixSpec {
            entries: order
                .iter()
                .zip(&args.mix)
                .map(|(&resolution, &proportion)| MixEntry {
                    resolution,
                    proportion,
                })
                .collect(),
            total_samples: total,
        })
    } else {
        None
    };

    let set = match &mix {
        Some(mix) => {
            let refs: BTreeMap<usize, &GridPack> = packs.iter().map(|(&r, p)| (r, p)).collect();
            training::compose_mix(&refs, mix, seed)?
        }
        None => {
            let mut items = Vec::new();
            let mut counts = Vec::new();
            for (&res, pack) in &packs {
                items.extend((0..pack.count).map(|i| (res, i)));
                counts.push((res, pack.count));
            }
            TrainSet { items, counts }
        }
    };

    let mut val_packs = BTreeMap::new();
    for path in &args.val {
        let pack = GridPack::read(path)?;
        val_packs.insert(pack.resolution, pack);
    }

    let spec = FnoSpec {
        dims,
        width,
        layers,
        max_modes: modes.max(1),
        lift_dim: 128,
        proj_dim: 128,
        coord_channels: true,
    };
    let params = init_params(&spec, seed)?;
    let outcome = training::train(params, &packs, &set, &val_packs, &config)?;

    let run_name = args.run_name.clone().unwrap_or_else(|| format!("run_{seed}"));
    let dir = out_root(cli).join(run_name);
    refuse_clobber(cli, &dir.join("log.csv"))?;
    training::write_run_dir(&dir, &config, mix.as_ref(), &outcome)?;
    let final_loss = outcome.log.last().map(|l| l.train_loss).unwrap_or(f64::NAN);
    println!("run complete: {} (final train loss {final_loss:.6e})", dir.display());
    Ok(())
}

fn cmd_experiment(
    cli: &Cli,
    plan_path: &Path,
    seed: Option<u64>,
    name: Option<&str>,
) -> Result<(), Error> {
    let mut plan: ExperimentPlan = serde_json::from_slice(&std::fs::read(plan_path).map_err(
        |e| Error::Data(format!("cannot read plan {}: {e}", plan_path.display())),
    )?)?;
    if let Some(seed) = seed {
        plan.seed = seed;
    }
    // pack paths inside a plan are relative to the plan file
    if let Some(parent) = plan_path.parent() {
        for p in [&mut plan.train_pack, &mut plan.test_pack] {
            let joined = parent.join(&*p);
            if joined.exists() {
                *p = joined.to_string_lossy().into_owned();
            }
        }
    }
    let default_name = plan_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "experiment".into());
    let dir = out_root(cli).join(name.unwrap_or(&default_name));
    refuse_clobber(cli, &dir.join("report.json"))?;
    diagnostics::run_plan(&plan, &dir)?;
    println!("report written to {}", dir.display());
    Ok(())
}
