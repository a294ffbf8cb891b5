use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use keyplan::config::RunConfig;
use keyplan::encoder::{calibrate_key_positions, train_encoder, HeteroEncoder};
use keyplan::env::TraceRow;
use keyplan::eval::{MetricsReport, PredictionSet};
use keyplan::io::{csv_bytes, write_atomic, write_json};
use keyplan::keys::KeyPositionSet;
use keyplan::pipeline::{plan_from_keys, training_subscenes, ModeGroups};
use keyplan::plot::{render_svg, PlotLayers};
use keyplan::ppo::{train, PolicyNet};
use keyplan::scene::{generate_synthetic_scene, load_scene, save_scene, Scene, SceneKind};
use keyplan::{Error, Result};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "keyplan", version, about = "Key-position trajectory prediction and planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Random seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of predicted modes.
    #[arg(long, global = true)]
    modes: Option<usize>,
    /// Local graph radius in metres.
    #[arg(long, global = true)]
    radius: Option<f64>,
    /// Cooperation weight of the reward.
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Encoder heterogeneity arm: none, type-attr, direction-stacked, type-stacked.
    #[arg(long, global = true)]
    ablation: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scenes.
    Gen {
        /// straight, curve, merge, intersection or mixed.
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 5)]
        count: usize,
        #[arg(long, default_value_t = 3)]
        agents: usize,
    },
    /// Train the key-position encoder.
    TrainEncoder {
        /// Scene file or directory of scene files.
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the planning policy on ground-truth key positions.
    TrainRl {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        updates: Option<usize>,
    },
    /// Predict trajectories for one scene.
    Predict {
        #[arg(long)]
        scene: PathBuf,
        /// Encoder checkpoint; not needed with --keys.
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        policy: PathBuf,
        /// Precomputed key positions used instead of the encoder.
        #[arg(long)]
        keys: Option<PathBuf>,
    },
    /// Score predictions against scene ground truth.
    Eval {
        /// Prediction files, paired in order with --scenes.
        #[arg(long, required = true, num_args = 1..)]
        predictions: Vec<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        scenes: Vec<PathBuf>,
    },
    /// Render a scene with optional predictions, keys or an episode trace.
    Plot {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        keys: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen { .. } => "gen",
            Command::TrainEncoder { .. } => "train-encoder",
            Command::TrainRl { .. } => "train-rl",
            Command::Predict { .. } => "predict",
            Command::Eval { .. } => "eval",
            Command::Plot { .. } => "plot",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let line = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[usage]: {line}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            eprintln!("error[{kind}]: {}", e.to_string().replace('\n', " "));
            ExitCode::from(code)
        }
    }
}

fn classify(e: &Error) -> (&'static str, u8) {
    if e.is_numeric() {
        ("numeric", 3)
    } else if matches!(e, Error::Input(_)) {
        ("usage", 1)
    } else {
        ("validation", 2)
    }
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(modes) = cli.modes {
        config.encoder.modes = modes;
    }
    if let Some(radius) = cli.radius {
        config.encoder.radius = radius;
    }
    if let Some(beta) = cli.beta {
        config.env.reward.cooperation = beta;
    }
    if let Some(name) = &cli.ablation {
        config.encoder.ablation = name.parse()?;
    }
    match &cli.command {
        Command::TrainEncoder { epochs: Some(n), .. } => config.encoder_training.epochs = *n,
        Command::TrainRl { updates: Some(n), .. } => config.rl.updates = *n,
        _ => {}
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let config = run_config(&cli)?;
    let out = cli.out.clone().ok_or_else(|| Error::Input("--out <dir> is required".into()))?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let echo = serde_json::json!({ "command": cli.command.name(), "config": config.echo() });
    match &cli.command {
        Command::Gen { kind, count, agents } => cmd_gen(kind, *count, *agents, &config, &echo, &out),
        Command::TrainEncoder { scenes, .. } => cmd_train_encoder(scenes, &config, &echo, &out),
        Command::TrainRl { scenes, .. } => cmd_train_rl(scenes, &config, &echo, &out),
        Command::Predict { scene, encoder, policy, keys } => {
            cmd_predict(scene, encoder.as_deref(), policy, keys.as_deref(), &config, &echo, &out)
        }
        Command::Eval { predictions, scenes } => cmd_eval(predictions, scenes, &config, &echo, &out),
        Command::Plot { scene, predictions, keys, trace } => {
            cmd_plot(scene, predictions.as_deref(), keys.as_deref(), trace.as_deref(), &echo, &out)
        }
    }
}

fn cmd_gen(
    kind: &str,
    count: usize,
    agents: usize,
    config: &RunConfig,
    echo: &serde_json::Value,
    out: &Path,
) -> Result<()> {
    if agents == 0 {
        return Err(Error::Input("--agents must be at least 1".into()));
    }
    let kinds: Vec<SceneKind> = if kind == "mixed" {
        SceneKind::ALL.to_vec()
    } else {
        vec![kind.parse().map_err(|_| {
            Error::Input(format!(
                "unknown scene kind {kind:?} (expected straight, curve, merge, intersection or mixed)"
            ))
        })?]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for i in 0..count {
        let k = kinds[i % kinds.len()];
        let mut scene = generate_synthetic_scene(k, agents, rng.next_u64());
        let mut meta = scene.meta.take().unwrap_or_else(|| serde_json::json!({}));
        meta["run"] = echo.clone();
        scene.meta = Some(meta);
        save_scene(&scene, out.join(format!("{}-{i:04}.json", k.name())))?;
    }
    Ok(())
}

/// Scene files under a path: the file itself, or every `.json` in a directory, sorted.
fn scene_paths(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Input(format!("no scene files in {}", path.display())));
    }
    Ok(paths)
}

fn load_scenes(path: &Path) -> Result<Vec<Scene>> {
    scene_paths(path)?.iter().map(load_scene).collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], echo: &serde_json::Value) -> Result<()> {
    let mut bytes = format!("# run: {echo}\n").into_bytes();
    bytes.extend(csv_bytes(rows)?);
    write_atomic(path, &bytes)
}

fn cmd_train_encoder(scenes: &Path, config: &RunConfig, echo: &serde_json::Value, out: &Path) -> Result<()> {
    let scenes = load_scenes(scenes)?;
    let (encoder, logs) = train_encoder(&scenes, config.encoder.clone(), &config.encoder_training, config.seed)?;
    encoder.save_with_run(&out.join("encoder.json"), echo.clone())?;
    write_csv(&out.join("encoder_loss.csv"), &logs, echo)
}

fn cmd_train_rl(scenes: &Path, config: &RunConfig, echo: &serde_json::Value, out: &Path) -> Result<()> {
    let scenes = load_scenes(scenes)?;
    let pool = training_subscenes(&scenes, &config.encoder.key_timestamps, &config.env)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = PolicyNet::new(config.policy, &config.env, &mut rng)?;
    let mut source = |r: &mut ChaCha8Rng| Ok(Arc::clone(&pool[r.random_range(0..pool.len())]));
    let logs = train(&mut net, &config.env, &config.ppo, config.rl.updates, rng.next_u64(), &mut source)?;
    net.save_with_run(&out.join("policy.json"), echo.clone())?;
    write_csv(&out.join("rl_log.csv"), &logs, echo)
}

#[derive(Serialize)]
struct SubsceneReport<'a> {
    run: &'a serde_json::Value,
    modes: &'a [ModeGroups],
}

fn cmd_predict(
    scene_path: &Path,
    encoder: Option<&Path>,
    policy: &Path,
    keys: Option<&Path>,
    config: &RunConfig,
    echo: &serde_json::Value,
    out: &Path,
) -> Result<()> {
    let scene = load_scene(scene_path)?;
    let mut raw = match (keys, encoder) {
        (Some(path), _) => KeyPositionSet::load(path)?,
        (None, Some(path)) => HeteroEncoder::load(path, Some(&config.encoder))?.predict(&scene)?,
        (None, None) => return Err(Error::Input("predict needs --encoder or --keys".into())),
    };
    let policy = PolicyNet::load(policy, &config.policy, &config.env)?;
    raw.run = echo.clone();
    let mut calibrated = calibrate_key_positions(&raw, &scene);
    calibrated.run = echo.clone();
    let plan = plan_from_keys(&scene, &calibrated, &policy, &config.env)?;
    let mut predictions: PredictionSet = plan.predictions;
    predictions.run = echo.clone();
    raw.save(&out.join("keys_raw.json"))?;
    calibrated.save(&out.join("keys_calibrated.json"))?;
    write_json(&out.join("subscenes.json"), &SubsceneReport { run: echo, modes: &plan.groups })?;
    for (mode, trace) in plan.traces.iter().enumerate() {
        write_csv(&out.join(format!("trace_mode{mode}.csv")), trace, echo)?;
    }
    predictions.save(&out.join("predictions.json"))
}

fn cmd_eval(
    predictions: &[PathBuf],
    scenes: &[PathBuf],
    config: &RunConfig,
    echo: &serde_json::Value,
    out: &Path,
) -> Result<()> {
    if predictions.len() != scenes.len() {
        return Err(Error::Input(format!(
            "{} prediction files but {} scene files; they are paired in order",
            predictions.len(),
            scenes.len()
        )));
    }
    let mut sets = Vec::with_capacity(scenes.len());
    for (p, s) in predictions.iter().zip(scenes) {
        let scene = load_scene(s)?;
        let mut set = PredictionSet::load(p)?;
        for a in &mut set.agents {
            let track = scene
                .agents
                .iter()
                .find(|t| t.id == a.agent_id)
                .ok_or_else(|| Error::UnknownAgent(a.agent_id.clone()))?;
            if let Some(gt) = track.future_positions() {
                a.ground_truth = Some(gt);
            }
        }
        sets.push((set, scene.drivable_area()));
    }
    let pairs: Vec<_> = sets.iter().map(|(s, a)| (s, a)).collect();
    let mut report = MetricsReport::compute(&pairs, config.eval.miss_threshold)?;
    report.config = echo.clone();
    write_json(&out.join("metrics.json"), &report)
}

fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(Error::from)?;
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

fn cmd_plot(
    scene: &Path,
    predictions: Option<&Path>,
    keys: Option<&Path>,
    trace: Option<&Path>,
    echo: &serde_json::Value,
    out: &Path,
) -> Result<()> {
    let scene = load_scene(scene)?;
    let predictions = predictions.map(PredictionSet::load).transpose()?;
    let keys = keys.map(KeyPositionSet::load).transpose()?;
    let trace = trace.map(read_trace).transpose()?;
    let metadata = echo.to_string();
    let svg = render_svg(
        &scene,
        PlotLayers {
            predictions: predictions.as_ref(),
            keys: keys.as_ref(),
            trace: trace.as_deref(),
            metadata: Some(&metadata),
        },
    );
    write_atomic(&out.join("plot.svg"), svg.as_bytes())
}
