use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use aperture_core::agrpo::{train_toy, CurriculumStage, ToyEnv, ToyPolicy};
use aperture_core::backends::{
    load_script, GeometricOracle, PolicyBackend, RemotePolicy, RemoteSegmenter, SegmenterBackend,
};
use aperture_core::harness::{
    compute_usage_stats, gen_math_task, gen_needle_task, gen_shape_seg_task, read_log, read_tasks, render_usage_text,
    replay_record, report_train, report_usage, run_eval, write_tasks, AppConfig, EnvTask, LogHeader, LogWriter,
    NeedleParams, PerceptionPolicy, ReportFormat, ShapeSegParams, Template,
};
use aperture_core::protocol::PromptVariant;
use aperture_core::RewardConfig;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "aperture", version, about = "Aperture-action visual reasoning harness")]
struct Cli {
    /// Prompt variant: full, no_observation, zoom_only, segment_only.
    #[arg(long, global = true)]
    variant: Option<PromptVariant>,
    /// TOML config file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run tasks through the episode loop and log every trajectory.
    Eval(EvalArgs),
    /// Train the tabular toy policy on needle tasks.
    TrainToy(TrainArgs),
    /// Aperture usage and latency statistics of a trajectory log.
    Stats(StatsArgs),
    /// Generate synthetic tasks with their images.
    GenTasks(GenArgs),
    /// Re-run logged trajectories through the state machine and compare.
    Replay(ReplayArgs),
    /// Print the default config.
    Config,
}

#[derive(Args)]
struct EvalArgs {
    /// tasks.jsonl written by gen-tasks.
    #[arg(long)]
    tasks: PathBuf,
    /// `remote` uses the configured policy endpoint; otherwise a built-in template
    /// (answer_direct, zoom_then_answer, segment_then_answer, zoom_no_observe).
    #[arg(long, default_value = "zoom_then_answer")]
    policy: String,
    /// Script file of canned turns; overrides --policy.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Aim error of the built-in policy, in pixels.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    #[arg(long, default_value = "text")]
    format: ReportFormat,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    steps: Option<usize>,
    /// Reward weights `beta1,beta2`.
    #[arg(long, value_parser = parse_weights)]
    weights: Option<(f64, f64)>,
    #[arg(long, default_value = "text")]
    format: ReportFormat,
}

#[derive(Args)]
struct StatsArgs {
    /// Trajectory log (JSON lines).
    log: PathBuf,
    #[arg(long, default_value = "text")]
    format: ReportFormat,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 10)]
    needle: usize,
    #[arg(long, default_value_t = 0)]
    math: usize,
    #[arg(long, default_value_t = 0)]
    seg: usize,
    /// Needle glyph size in pixels.
    #[arg(long)]
    glyph_size: Option<u32>,
}

#[derive(Args)]
struct ReplayArgs {
    log: PathBuf,
    #[arg(long)]
    tasks: PathBuf,
    /// Only replay this task.
    #[arg(long)]
    task: Option<String>,
}

fn parse_weights(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected `beta1,beta2`")?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok((parse(a)?, parse(b)?))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

fn load_config(cli: &Cli) -> Result<AppConfig> {
    let mut config = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if let Some(v) = cli.variant {
        config.episode.variant = v;
    }
    if let Some(s) = cli.seed {
        config.episode.seed = s;
        config.toy.seed = s;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Eval(args) => eval(&cli.out, &config, args),
        Command::TrainToy(args) => train(&cli.out, &config, args),
        Command::Stats(args) => {
            let stats = compute_usage_stats(&args.log)?;
            print!("{}", render_usage_text(&stats));
            report_usage(&stats, args.format, &cli.out)?;
            Ok(())
        }
        Command::GenTasks(args) => gen_tasks(&cli.out, &config, args),
        Command::Replay(args) => replay(&config, args),
        Command::Config => {
            print!("{}", aperture_core::harness::DEFAULT_CONFIG_TOML);
            Ok(())
        }
    }
}

fn oracle_for(tasks: &[EnvTask]) -> GeometricOracle {
    let oracle = GeometricOracle::new();
    for t in tasks {
        oracle.register(&t.spec.image, (*t.labels).clone());
    }
    oracle
}

fn segmenter(config: &AppConfig, tasks: &[EnvTask]) -> Box<dyn SegmenterBackend> {
    match &config.backends.segmenter {
        Some(remote) => Box::new(RemoteSegmenter::new(remote.clone())),
        None => Box::new(oracle_for(tasks)),
    }
}

fn eval(out: &Path, config: &AppConfig, args: &EvalArgs) -> Result<()> {
    let tasks = read_tasks(&args.tasks)?;
    let variant = config.episode.variant;
    let policy: Box<dyn PolicyBackend> = if let Some(script) = &args.script {
        Box::new(load_script(script, variant)?)
    } else if args.policy == "remote" {
        let remote = config.backends.policy.clone().ok_or("no [backends.policy] endpoint configured")?;
        Box::new(RemotePolicy::new(remote))
    } else {
        let template: Template = args.policy.parse()?;
        let shared: HashMap<String, Arc<EnvTask>> =
            tasks.iter().map(|t| (t.spec.task_id.clone(), Arc::new(t.clone()))).collect();
        Box::new(PerceptionPolicy::shared(template, Arc::new(shared)).with_jitter(args.jitter, config.episode.seed))
    };
    let segmenter = segmenter(config, &tasks);
    std::fs::create_dir_all(out)?;
    let log_path = out.join("trajectories.jsonl");
    let mut log = LogWriter::create(&log_path, &LogHeader::new(variant, config.episode.seed, tasks.len()))?;
    let specs: Vec<_> = tasks.iter().map(|t| t.spec.clone()).collect();
    let summary = run_eval(&specs, policy.as_ref(), segmenter.as_ref(), &config.episode, &config.reward, &mut log)?;
    drop(log);

    println!("{:<14} {:>6} {:>9} {:>9} {:>10} {:>8}", "family", "tasks", "accuracy", "seg", "apertures", "reward");
    for (name, f) in &summary.families {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!(
            "{name:<14} {:>6} {:>9} {:>9} {:>10.2} {:>8.3}",
            f.tasks,
            opt(f.accuracy),
            opt(f.mean_seg_reward),
            f.mean_apertures,
            f.mean_reward
        );
    }
    for (id, e) in &summary.failures {
        eprintln!("failed: {id}: {e}");
    }
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    let stats = compute_usage_stats(&log_path)?;
    report_usage(&stats, args.format, out)?;
    println!("log: {}", log_path.display());
    Ok(())
}

fn train(out: &Path, config: &AppConfig, args: &TrainArgs) -> Result<()> {
    let mut toy = config.toy.clone();
    if let Some(steps) = args.steps {
        toy.steps = steps;
    }
    let reward = match args.weights {
        Some((beta1, beta2)) => RewardConfig { beta1, beta2, ..config.reward }.validated()?,
        None => config.reward,
    };
    let env = ToyEnv::needle(&toy, &config.episode)?;
    let stage = CurriculumStage::multi_task([0.0, 1.0, 0.0], toy.steps)?;
    let mut policy = ToyPolicy::standard();
    let report = train_toy(&mut policy, &env, &[stage], &reward, &config.agrpo, toy.seed)?;
    let files = report_train(&report, args.format, out)?;
    let tail = (toy.steps / 5).max(1);
    println!("steps: {}", report.points.len());
    println!("final aperture usage: {:.3}", report.tail_mean(tail, |p| p.mean_aperture_count));
    println!("final accuracy: {:.3}", report.tail_mean(tail, |p| p.accuracy));
    println!("final reward: {:.3}", report.tail_mean(tail, |p| p.mean_reward));
    for (i, probs) in report.last.probs.iter().enumerate() {
        let row: Vec<String> =
            policy.templates().iter().zip(probs).map(|(t, p)| format!("{}={p:.3}", t.as_str())).collect();
        println!("context {i}: {}", row.join(" "));
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn gen_tasks(out: &Path, config: &AppConfig, args: &GenArgs) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.episode.seed);
    let needle = NeedleParams { glyph_size: args.glyph_size.unwrap_or(config.toy.needle.glyph_size), ..config.toy.needle.clone() };
    let mut tasks = Vec::new();
    for i in 0..args.needle {
        tasks.push(gen_needle_task(&mut rng, &needle, &format!("needle-{i:04}"))?);
    }
    for i in 0..args.math {
        tasks.push(gen_math_task(&mut rng, &needle, &format!("math-{i:04}"))?);
    }
    for i in 0..args.seg {
        tasks.push(gen_shape_seg_task(&mut rng, &ShapeSegParams::default(), &format!("seg-{i:04}"))?);
    }
    write_tasks(out, &tasks)?;
    println!("wrote {} tasks to {}", tasks.len(), out.join("tasks.jsonl").display());
    Ok(())
}

fn replay(config: &AppConfig, args: &ReplayArgs) -> Result<()> {
    let tasks = read_tasks(&args.tasks)?;
    let (_, records) = read_log(&args.log)?;
    let segmenter = segmenter(config, &tasks);
    let by_id: HashMap<&str, &EnvTask> = tasks.iter().map(|t| (t.spec.task_id.as_str(), t)).collect();
    let (mut ok, mut bad) = (0, 0);
    for record in records.iter().filter(|r| args.task.as_deref().is_none_or(|t| t == r.task_id)) {
        let Some(task) = by_id.get(record.task_id.as_str()) else {
            println!("{}: MISSING task", record.task_id);
            bad += 1;
            continue;
        };
        match replay_record(record, &task.spec, segmenter.as_ref(), &config.episode) {
            Ok(_) => {
                println!("{}: OK", record.task_id);
                ok += 1;
            }
            Err(e) => {
                println!("{}: MISMATCH {e}", record.task_id);
                bad += 1;
            }
        }
    }
    println!("replayed {ok} identical, {bad} diverged");
    if bad > 0 {
        return Err(format!("{bad} trajectories diverged").into());
    }
    Ok(())
}
