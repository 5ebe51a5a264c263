use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use d3po_core::checkpoint::Checkpoint;
use d3po_core::diffusion::{Denoiser, ShapeClass};
use d3po_core::preference::{Objective, ObjectiveKind};
use d3po_core::theory::{
    prop2_grid, random_bandits, verify_prop1, verify_prop2, verify_step_loss_gradients,
    Prop2Config, VerificationReport,
};
use d3po_service::render::{render_png, UPSCALE};
use d3po_service::{Service, ServiceConfig};

use crate::config::{output_dir, RunConfig};
use crate::error::{CliError, Result};
use crate::ops;

#[derive(Debug, Parser)]
#[command(name = "d3po", version, about = "Preference fine-tuning of a toy diffusion model")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the diffusion model on the shape dataset.
    Pretrain(PretrainArgs),
    /// Write PNG samples from a checkpoint.
    Sample(SampleArgs),
    /// Oracle-labeled preference fine-tuning.
    Finetune(FinetuneArgs),
    /// Run the labeling service.
    Serve(ServeArgs),
    /// Numerical checks of the optimum, the noise bound and the gradients.
    Verify(VerifyArgs),
    /// Score fresh samples under an objective.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory [default: $D3PO_HOME/<command>]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    /// Shape class name (disc, ring, h-bar, v-bar, cross).
    #[arg(long, default_value = "disc")]
    pub class: String,
    #[arg(long)]
    pub guidance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub objective: Option<ObjectiveKind>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub pairs_per_epoch: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Keep the starting model as the reference for every epoch.
    #[arg(long)]
    pub fixed_reference: bool,
    /// Reward-weighted likelihood instead of preference pairs.
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub pairs_per_epoch: Option<usize>,
    #[arg(long)]
    pub min_labeled: Option<usize>,
    #[arg(long)]
    pub claim_timeout_secs: Option<f64>,
    #[arg(long)]
    pub monitor_objective: Option<ObjectiveKind>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Monte Carlo trials for the noise-bound check.
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    /// Check the full sigma x delta grid instead of the single example cell.
    #[arg(long)]
    pub prop2_grid: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub objective: Option<ObjectiveKind>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub guidance: Option<f64>,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Pretrain(a) => {
            apply_seed(&mut cfg, &a.common);
            if let Some(s) = a.steps {
                cfg.pretrain.steps = s;
            }
            pretrain(cfg.resolve()?, &output_dir(a.common.out.as_deref(), "pretrain"))
        }
        Command::Sample(a) => {
            apply_seed(&mut cfg, &a.common);
            if let Some(w) = a.guidance {
                cfg.eval.guidance = w;
            }
            let class: ShapeClass = a.class.parse().map_err(|e: d3po_core::Error| CliError::Config(e.to_string()))?;
            let out = output_dir(a.common.out.as_deref(), "sample");
            sample(cfg.resolve()?, &a.ckpt, a.count, class, &out)
        }
        Command::Finetune(a) => {
            apply_seed(&mut cfg, &a.common);
            if let Some(o) = a.objective {
                cfg.objective = o;
            }
            if let Some(n) = a.epochs {
                cfg.train.epochs = n;
            }
            if let Some(k) = a.pairs_per_epoch {
                cfg.train.pairs_per_epoch = k;
            }
            if let Some(b) = a.beta {
                cfg.train.beta = b;
            }
            if let Some(lr) = a.lr {
                cfg.train.lr = lr;
            }
            cfg.train.fixed_reference |= a.fixed_reference;
            let out = output_dir(a.common.out.as_deref(), "finetune");
            finetune(cfg.resolve()?, &a.ckpt, a.baseline, &out)
        }
        Command::Serve(a) => {
            apply_seed(&mut cfg, &a.common);
            let s = &mut cfg.serve;
            if let Some(h) = a.host {
                s.host = h;
            }
            if let Some(p) = a.port {
                s.port = p;
            }
            if let Some(k) = a.pairs_per_epoch {
                s.pairs_per_epoch = k;
            }
            if let Some(m) = a.min_labeled {
                s.min_labeled = m;
            }
            if let Some(t) = a.claim_timeout_secs {
                s.claim_timeout_secs = t;
            }
            if a.monitor_objective.is_some() {
                s.monitor_objective = a.monitor_objective;
            }
            let out = output_dir(a.common.out.as_deref(), "serve");
            serve(cfg.resolve()?, &a.ckpt, &out)
        }
        Command::Verify(a) => {
            apply_seed(&mut cfg, &a.common);
            let out = output_dir(a.common.out.as_deref(), "verify");
            verify(cfg.resolve()?, a.trials, a.prop2_grid, &out)
        }
        Command::Eval(a) => {
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(o) = a.objective {
                cfg.objective = o;
            }
            if let Some(n) = a.count {
                cfg.eval.samples = n;
            }
            if let Some(w) = a.guidance {
                cfg.eval.guidance = w;
            }
            eval(cfg.resolve()?, &a.ckpt, a.out.as_deref())
        }
    }
}

fn apply_seed(cfg: &mut RunConfig, common: &Common) {
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
}

fn adopt_checkpoint(cfg: &mut RunConfig, ck: &Checkpoint) {
    cfg.arch = ck.meta.arch.clone();
    cfg.schedule = ck.meta.schedule;
}

fn pretrain(cfg: RunConfig, out: &Path) -> Result<()> {
    cfg.write_snapshot(out)?;
    let total = cfg.pretrain.steps;
    let (den, losses) = ops::pretrain_model(&cfg.arch, &cfg.data, &cfg.schedule, &cfg.pretrain, |step, loss| {
        if (step + 1) % 500 == 0 || step + 1 == total {
            eprintln!("step {}/{total} loss {loss:.5}", step + 1);
        }
    })?;
    Checkpoint::new(den, cfg.schedule, 0).save(&out.join("model.ckpt"))?;
    fs::write(out.join("losses.json"), serde_json::to_vec(&losses).map_err(d3po_core::Error::from)?)?;
    println!("{}", out.join("model.ckpt").display());
    Ok(())
}

fn sample(mut cfg: RunConfig, ckpt: &Path, count: usize, class: ShapeClass, out: &Path) -> Result<()> {
    let (ck, sched) = ops::load_checkpoint(ckpt)?;
    adopt_checkpoint(&mut cfg, &ck);
    cfg.write_snapshot(out)?;
    let reqs = ops::sample_requests(cfg.seed, "sample", count, &[class.index()]);
    let trajs = d3po_core::diffusion::sample_trajectories(&ck.denoiser, &reqs, &sched, cfg.eval.guidance)?;
    for (i, t) in trajs.iter().enumerate() {
        let png = render_png(t.final_image(), ck.meta.arch.side, UPSCALE)?;
        fs::write(out.join(format!("{class}-{i:03}.png")), png)?;
    }
    println!("{count} samples in {}", out.display());
    Ok(())
}

fn finetune(mut cfg: RunConfig, ckpt: &Path, baseline: bool, out: &Path) -> Result<()> {
    let (ck, sched) = ops::load_checkpoint(ckpt)?;
    adopt_checkpoint(&mut cfg, &ck);
    cfg.write_snapshot(out)?;
    let objective = Objective::new(cfg.objective, &cfg.data);
    let mut log = fs::File::create(out.join("history.jsonl"))?;
    let mut log_err = None;
    let outcome = ops::finetune(&ck.denoiser, &cfg.train, &sched, &objective, baseline, |stats, _| {
        eprintln!(
            "epoch {} loss {:.4} pairs {} ties {} kl {:.3e}",
            stats.epoch, stats.mean_loss, stats.pairs_consumed, stats.ties_skipped, stats.mean_kl
        );
        let line = serde_json::to_string(stats).expect("stats serialize");
        if let Err(e) = writeln!(log, "{line}") {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    let theta = Denoiser {
        params: outcome.theta.params.with_role(ck.meta.role),
        config: outcome.theta.config,
    };
    let epoch = ck.meta.epoch + cfg.train.epochs as u64;
    let path = out.join("model.ckpt");
    Checkpoint::new(theta, ck.meta.schedule, epoch).save(&path)?;
    println!("{}", path.display());
    Ok(())
}

fn serve(cfg: RunConfig, ckpt: &Path, out: &Path) -> Result<()> {
    cfg.write_snapshot(out)?;
    let s = &cfg.serve;
    if !(s.claim_timeout_secs >= 0.0 && s.claim_timeout_secs.is_finite()) {
        return Err(CliError::Config("claim_timeout_secs must be a finite value >= 0".into()));
    }
    let addr: SocketAddr = format!("{}:{}", s.host, s.port)
        .parse()
        .map_err(|e| CliError::Config(format!("listen address: {e}")))?;
    let svc_cfg = ServiceConfig {
        home: out.to_path_buf(),
        init_ckpt: ckpt.to_path_buf(),
        train: cfg.train.clone(),
        data: cfg.data.clone(),
        pairs_per_epoch: s.pairs_per_epoch,
        min_labeled: s.min_labeled,
        claim_timeout: Duration::from_secs_f64(s.claim_timeout_secs),
        monitor: s.monitor_objective,
    };
    let svc = Arc::new(Service::open(svc_cfg)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        d3po_service::serve(svc, listener).await
    })?;
    Ok(())
}

/// Reports for the optimum check, the noise bound and the loss gradients.
pub fn verification_reports(seed: u64, trials: usize, grid: bool) -> Result<Vec<VerificationReport>> {
    let mut reports = vec![verify_prop1(&random_bandits(seed, 5), 1e-5)?];
    let cells = if grid {
        prop2_grid(trials, seed)
    } else {
        vec![Prop2Config {
            trials,
            seed,
            ..Prop2Config::default()
        }]
    };
    for cell in &cells {
        reports.push(verify_prop2(cell)?);
    }
    reports.push(verify_step_loss_gradients(seed, 1e-4)?);
    Ok(reports)
}

fn verify(cfg: RunConfig, trials: usize, grid: bool, out: &Path) -> Result<()> {
    cfg.write_snapshot(out)?;
    let reports = verification_reports(cfg.seed, trials, grid)?;
    for r in &reports {
        println!(
            "{} {} measured {:.3e} tolerance {:.3e}{}",
            if r.passed { "PASS" } else { "FAIL" },
            r.check,
            r.measured,
            r.tolerance,
            r.warning.as_deref().map(|w| format!(" ({w})")).unwrap_or_default()
        );
    }
    let json = serde_json::to_string_pretty(&reports).map_err(d3po_core::Error::from)?;
    fs::write(out.join("report.json"), json)?;
    match reports.iter().filter(|r| !r.passed).count() {
        0 => Ok(()),
        n => Err(CliError::ChecksFailed(n)),
    }
}

fn eval(mut cfg: RunConfig, ckpt: &Path, out: Option<&Path>) -> Result<()> {
    let (ck, sched) = ops::load_checkpoint(ckpt)?;
    adopt_checkpoint(&mut cfg, &ck);
    let objective = Objective::new(cfg.objective, &cfg.data);
    let reqs = ops::sample_requests(cfg.seed, "eval", cfg.eval.samples, &cfg.train.classes);
    let (_, scores) = ops::score_samples(&ck.denoiser, &sched, &objective, &reqs, cfg.eval.guidance)?;
    let summary = ops::EvalSummary::from_scores(&objective, &scores);
    let json = serde_json::to_string_pretty(&summary).map_err(d3po_core::Error::from)?;
    println!("{json}");
    if let Some(dir) = out {
        cfg.write_snapshot(dir)?;
        fs::write(dir.join("eval.json"), json)?;
    }
    Ok(())
}
