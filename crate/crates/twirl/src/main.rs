//! Command-line entry point. One command per invocation; every training
//! command writes a self-contained run directory (frozen config, metrics,
//! checkpoints) so results can be audited and replayed.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use twirl::config::{output_root, RunConfig};
use twirl::envs::{make_env, DynamicsVariant, EnvId};
use twirl::error::Result;
use twirl::evaluate::evaluate;
use twirl::metrics::{read_metrics, MetricsWriter, WallClockLog};
use twirl::nn::save_checkpoint;
use twirl::plots::emit_plots;
use twirl::replay::{load_buffer, save_buffer};
use twirl::sac::SacAgent;
use twirl::seeding;
use twirl::transfer::{
    ablation_csv, collect_source_data, load_policy_checkpoint, run_ablation, train_source_policy,
    twirl_train, MetricsRecord, ObsAdapter, TransferSpec, CRITIC1_FILE, CRITIC2_FILE,
    METRICS_FILE, PHI_GRID, POLICY_FILE, REPLAY_FILE,
};

#[derive(Parser)]
#[command(name = "twirl", version, about = "Experience-transfer RL on toy control tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a source policy; persists checkpoint and full replay buffer.
    TrainSource {
        #[arg(long)]
        config: PathBuf,
        /// Output root (default "runs"; TWIRL_OUT overrides).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Roll a source policy in a target environment and save the buffer.
    CollectData {
        /// Source run directory or policy checkpoint file.
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value = "none")]
        variant: String,
        /// Transitions to collect (stops on an episode boundary).
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Buffer file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Transfer training: mixed batches from a frozen source buffer.
    TrainTwirl {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plain from-scratch training.
    TrainScratch {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Deterministic evaluation of a policy checkpoint.
    Eval {
        /// Run directory or policy checkpoint file.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value = "none")]
        variant: String,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sampling-ratio ablation over the standard grid.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render learning curves (SVG + CSV) from metrics logs.
    Plot {
        /// One or more metrics.jsonl files (same config, different seeds).
        #[arg(long, num_args = 1.., required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "learning-curve")]
        stem: String,
        #[arg(long, default_value = "learning curve")]
        title: String,
    },
    /// Print buffer count, dims, and provenance metadata.
    InspectBuffer {
        #[arg(long)]
        buffer: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::TrainSource { config, out } => cmd_train(&config, out.as_deref(), RunKind::Source),
        Command::TrainTwirl { config, out } => cmd_train(&config, out.as_deref(), RunKind::Twirl),
        Command::TrainScratch { config, out } => {
            cmd_train(&config, out.as_deref(), RunKind::Scratch)
        }
        Command::CollectData { policy, env, variant, n, seed, out } => {
            cmd_collect(&policy, &env, &variant, n, seed, &out)
        }
        Command::Eval { checkpoint, env, variant, episodes, seed, out } => {
            cmd_eval(&checkpoint, &env, &variant, episodes, seed, out.as_deref())
        }
        Command::Ablate { config, out } => cmd_ablate(&config, out.as_deref()),
        Command::Plot { metrics, out, stem, title } => {
            let logs: Result<Vec<Vec<MetricsRecord>>> =
                metrics.iter().map(|p| read_metrics(p)).collect();
            let dir = output_root(out.as_deref());
            let (svg, csv) = emit_plots(&logs?, &dir, &stem, &title)?;
            println!("wrote {} and {}", svg.display(), csv.display());
            Ok(())
        }
        Command::InspectBuffer { buffer } => {
            let buf = load_buffer(&buffer)?;
            let m = buf.metadata();
            println!("transitions: {}", buf.len());
            println!("obs_dim: {}", m.obs_dim);
            println!("act_dim: {}", m.act_dim);
            println!("policy_id: {}", m.policy_id);
            println!("mdp_id: {}", m.mdp_id);
            println!("seed: {}", m.seed);
            Ok(())
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum RunKind {
    Source,
    Twirl,
    Scratch,
}

impl RunKind {
    fn label(self) -> &'static str {
        match self {
            RunKind::Source => "source",
            RunKind::Twirl => "twirl",
            RunKind::Scratch => "scratch",
        }
    }
}

fn save_agent(dir: &Path, agent: &SacAgent) -> Result<()> {
    save_checkpoint(&dir.join(POLICY_FILE), &agent.policy.spec, &agent.policy.params)?;
    save_checkpoint(&dir.join(CRITIC1_FILE), &agent.critics.q1.spec, &agent.critics.q1.params)?;
    save_checkpoint(&dir.join(CRITIC2_FILE), &agent.critics.q2.spec, &agent.critics.q2.params)?;
    Ok(())
}

/// One training run per seed, each in its own directory under the root.
fn cmd_train(config_path: &Path, out: Option<&Path>, kind: RunKind) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let root = output_root(out);
    let group = format!("{}-{}-{}", kind.label(), cfg.env, cfg.variant);

    let spec = match kind {
        RunKind::Twirl => cfg.to_transfer_spec()?,
        RunKind::Scratch | RunKind::Source => TransferSpec::from_scratch(
            cfg.env_id()?,
            cfg.variant()?,
            cfg.training_budget,
            cfg.seeds.clone(),
        ),
    };
    let opts = cfg.to_options();

    for &seed in &cfg.seeds {
        let dir = root.join(&group).join(format!("seed{seed}"));
        cfg.freeze(&dir)?;
        let mut writer = MetricsWriter::create(&dir.join(METRICS_FILE))?;
        let mut clock = WallClockLog::create(&dir.join("wallclock.log"))?;
        let ckpt_dir = dir.join("checkpoints");
        let interval = cfg.checkpoint_interval;
        let hook = |record: &MetricsRecord, agent: &SacAgent| -> Result<()> {
            writer.append(record)?;
            clock.mark(record.step)?;
            if interval > 0 && record.step % interval == 0 {
                std::fs::create_dir_all(&ckpt_dir)?;
                save_checkpoint(
                    &ckpt_dir.join(format!("policy-{:08}.twnn", record.step)),
                    &agent.policy.spec,
                    &agent.policy.params,
                )?;
            }
            Ok(())
        };

        let agent = if kind == RunKind::Source {
            let (artifacts, replay) = train_source_policy(
                cfg.env_id()?,
                cfg.variant()?,
                &opts,
                cfg.training_budget,
                seed,
                hook,
            )?;
            save_buffer(&dir.join(REPLAY_FILE), &replay)?;
            artifacts.agent
        } else {
            twirl_train(&spec, &opts, seed, hook)?.agent
        };
        save_agent(&dir, &agent)?;

        let mut env = make_env(cfg.env_id()?, cfg.variant()?);
        let report = evaluate(&agent.policy, env.as_mut(), cfg.eval_episodes, seed)?;
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(dir.join("eval.json"), &json)?;
        println!(
            "seed {seed}: mean return {:.3} +- {:.3} over {} episodes -> {}",
            report.mean_return,
            report.std_return,
            cfg.eval_episodes,
            dir.display()
        );
    }
    Ok(())
}

fn cmd_collect(
    policy_path: &Path,
    env: &str,
    variant: &str,
    n: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let ckpt = if policy_path.is_dir() {
        policy_path.join(POLICY_FILE)
    } else {
        policy_path.to_path_buf()
    };
    let policy = load_policy_checkpoint(&ckpt)?;
    let mut world = make_env(EnvId::parse(env)?, DynamicsVariant::parse(variant)?);
    let adapter = ObsAdapter::drop_leading(world.obs_dim(), policy.spec.input_dim)?;
    let mut rng = seeding::stream(seed, seeding::STREAM_COLLECT);
    let buf = collect_source_data(
        &policy,
        &ckpt.display().to_string(),
        world.as_mut(),
        n,
        &adapter,
        seed,
        &mut rng,
    )?;
    save_buffer(out, &buf)?;
    println!("wrote {} transitions to {}", buf.len(), out.display());
    Ok(())
}

fn cmd_eval(
    checkpoint: &Path,
    env: &str,
    variant: &str,
    episodes: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let ckpt = if checkpoint.is_dir() {
        checkpoint.join(POLICY_FILE)
    } else {
        checkpoint.to_path_buf()
    };
    let policy = load_policy_checkpoint(&ckpt)?;
    let mut world = make_env(EnvId::parse(env)?, DynamicsVariant::parse(variant)?);
    let report = evaluate(&policy, world.as_mut(), episodes, seed)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{json}");
    if let Some(path) = out {
        std::fs::write(path, &json)?;
    }
    Ok(())
}

fn cmd_ablate(config_path: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let base = cfg.to_transfer_spec()?;
    let opts = cfg.to_options();
    let root = output_root(out);
    let dir = root.join(format!("ablate-{}-{}", cfg.env, cfg.variant));
    cfg.freeze(&dir)?;

    let outcome = run_ablation(&base, &opts, &PHI_GRID, cfg.eval_episodes)?;
    std::fs::write(dir.join("ablation.csv"), ablation_csv(&outcome.rows))?;
    // per-run curves plus one aggregated figure per grid point
    let seeds_per_phi = base.seeds.len();
    for (i, curve) in outcome.curves.iter().enumerate() {
        let row = &outcome.rows[i];
        twirl::metrics::write_metrics(
            &dir.join(format!("metrics-phi{}-seed{}.jsonl", row.phi, row.seed)),
            curve,
        )?;
    }
    for (p, &phi) in PHI_GRID.iter().enumerate() {
        let logs = &outcome.curves[p * seeds_per_phi..(p + 1) * seeds_per_phi];
        emit_plots(logs, &dir, &format!("curve-phi{phi}"), &format!("phi = {phi}"))?;
    }
    for row in &outcome.rows {
        println!(
            "phi {} seed {}: final return {:.3} +- {:.3}",
            row.phi, row.seed, row.final_mean_return, row.final_std_return
        );
    }
    println!("wrote {}", dir.join("ablation.csv").display());
    Ok(())
}
