use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use policy_reuse::error::{Error, Result};
use policy_reuse::gridworld::{Component, RewardSpec};
use policy_reuse::harness::{build_library, layout_for, run_experiment, train_base_policies, ExperimentPlan, PlanStrategy};
use policy_reuse::learner::{Budget, CheckpointKind};
use policy_reuse::pipeline::{evaluate_artifact, run_compose, train_predictor, ComposeRequest, TaskInput};
use policy_reuse::predictor::BoostingParams;
use policy_reuse::retrieval::DEFAULT_TOP_M;
use policy_reuse::store::{serialize_artifact, PolicyStore};
use policy_reuse::strategies::{CompositionMode, StrategyConfig, StrategyKind, DEFAULT_K};

#[derive(Parser, Debug)]
#[command(name = "policy-reuse", version, about = "Offline reuse and composition of tabular policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Grid {
    #[arg(long, default_value_t = 8)]
    size: usize,
    /// Layout seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a layout and store it in the library.
    GenEnv {
        #[arg(long)]
        library_dir: PathBuf,
        #[command(flatten)]
        grid: Grid,
    },
    /// Train one base policy and store the chosen checkpoint.
    Train {
        #[arg(long)]
        library_dir: PathBuf,
        #[command(flatten)]
        grid: Grid,
        #[arg(long, default_value = "x1")]
        budget: Budget,
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        #[arg(long)]
        objective: Component,
        #[arg(long, value_parser = parse_checkpoint, default_value = "best")]
        checkpoint: CheckpointKind,
    },
    /// Train every base run of a plan that is not stored yet.
    BuildLibrary {
        #[arg(long)]
        library_dir: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Decompose, retrieve, embed, score and compose offline.
    Compose(ComposeArgs),
    /// Roll out a stored policy in the simulator.
    Evaluate {
        #[arg(long)]
        library_dir: PathBuf,
        #[arg(long)]
        id: String,
        /// Store root holding the artifact, when it is not the library.
        #[arg(long)]
        artifact_root: Option<PathBuf>,
        /// Reward to score under; defaults to the artifact objective.
        #[arg(long)]
        spec: Option<RewardSpec>,
    },
    /// Run an experiment plan and write the CSV reports.
    Experiment {
        #[arg(long)]
        library_dir: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

#[derive(Args, Debug)]
struct ComposeArgs {
    #[arg(long)]
    library_dir: PathBuf,
    #[command(flatten)]
    grid: Grid,
    #[arg(long, default_value = "x1")]
    budget: Budget,
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    #[arg(long, conflicts_with = "subtasks", required_unless_present = "subtasks")]
    task: Option<String>,
    #[arg(long, value_delimiter = ',')]
    subtasks: Option<Vec<Component>>,
    #[arg(long, default_value = "hc")]
    strategy: StrategyKind,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_TOP_M)]
    top_m: usize,
    /// Use value iteration on the merged graph for discounted members.
    #[arg(long)]
    planning: bool,
    #[arg(long)]
    out: PathBuf,
    /// Also store the composed artifact in the library.
    #[arg(long)]
    register: bool,
}

fn parse_checkpoint(s: &str) -> std::result::Result<CheckpointKind, String> {
    CheckpointKind::ALL
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| format!("unknown checkpoint `{s}` (expected best, mid or low)"))
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn write_artifact_dir(dir: &Path, artifact: &policy_reuse::store::PolicyArtifact) -> Result<()> {
    let tmp = dir.with_extension("tmp");
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    for (name, bytes) in serialize_artifact(artifact) {
        fs::write(tmp.join(name), bytes)?;
    }
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(tmp, dir)?;
    Ok(())
}

#[derive(Serialize)]
struct Stored<'a> {
    id: &'a str,
    path: String,
}

fn cmd_compose(args: ComposeArgs) -> Result<()> {
    let mut store = PolicyStore::open(&args.library_dir)?;
    let task = match (args.task, args.subtasks) {
        (Some(text), _) => TaskInput::Instruction(text),
        (None, Some(tags)) => TaskInput::Subtasks(tags),
        (None, None) => unreachable!("clap requires one of --task and --subtasks"),
    };
    let req = ComposeRequest {
        size: args.grid.size,
        layout_seed: args.grid.seed,
        budget: args.budget,
        gamma: args.gamma,
        task,
        strategy: StrategyConfig {
            k: args.k,
            mode: if args.planning { CompositionMode::Planning } else { CompositionMode::SupportLimited },
            ..StrategyConfig::new(args.strategy)
        },
        top_m: args.top_m,
    };
    let spec = policy_reuse::pipeline::composite_spec(&policy_reuse::pipeline::subtasks_for(&req.task)?)?;
    let predictor = train_predictor(&store, req.budget, &spec, req.size, req.gamma, &BoostingParams::default())?;
    let outcome = run_compose(&store, &req, &predictor.model)?;
    let dir = args.out.join(outcome.artifact.id());
    fs::create_dir_all(&args.out)?;
    write_artifact_dir(&dir, &outcome.artifact)?;
    let mut report = serde_json::to_vec_pretty(&outcome.report)?;
    report.push(b'\n');
    fs::write(dir.join("selection_report.json"), report)?;
    if args.register && !store.contains(outcome.artifact.id()) {
        store.put(&outcome.artifact)?;
    }
    print_json(&Stored {
        id: outcome.artifact.id(),
        path: dir.display().to_string(),
    })
}

#[derive(Serialize)]
struct Evaluation<'a> {
    id: &'a str,
    spec: String,
    #[serde(rename = "return")]
    ret: f64,
    steps: usize,
    terminal: String,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenEnv { library_dir, grid } => {
            let store = PolicyStore::open(&library_dir)?;
            let layout = layout_for(grid.size, grid.seed)?;
            store.put_layout(&layout)?;
            let path = library_dir.join("layouts").join(format!("n{}-s{}.json", grid.size, grid.seed));
            print_json(&Stored {
                id: &format!("n{}-s{}", grid.size, grid.seed),
                path: path.display().to_string(),
            })
        }
        Command::Train {
            library_dir,
            grid,
            budget,
            gamma,
            objective,
            checkpoint,
        } => {
            let mut store = PolicyStore::open(&library_dir)?;
            let layout = layout_for(grid.size, grid.seed)?;
            store.put_layout(&layout)?;
            let artifact = train_base_policies(&layout, objective, budget, gamma)?
                .into_iter()
                .find(|a| a.metadata.checkpoint == Some(checkpoint))
                .expect("every checkpoint is produced");
            if !store.contains(artifact.id()) {
                store.put(&artifact)?;
            }
            print_json(&Stored {
                id: artifact.id(),
                path: store.artifact_dir(artifact.id()).display().to_string(),
            })
        }
        Command::BuildLibrary { library_dir, plan, jobs } => {
            let plan = ExperimentPlan::from_json(&fs::read_to_string(plan)?)?;
            let mut store = PolicyStore::open(&library_dir)?;
            let s = build_library(&plan, &mut store, jobs)?;
            println!(
                "{{\"runs_trained\":{},\"runs_skipped\":{},\"artifacts\":{}}}",
                s.runs_trained, s.runs_skipped, s.artifacts
            );
            Ok(())
        }
        Command::Compose(args) => cmd_compose(args),
        Command::Evaluate {
            library_dir,
            id,
            artifact_root,
            spec,
        } => {
            let library = PolicyStore::open(&library_dir)?;
            let artifact = match artifact_root {
                Some(root) => PolicyStore::open(root)?.get(&id)?,
                None => library.get(&id)?,
            };
            let layout = library.get_layout(artifact.metadata.size, artifact.metadata.layout_seed)?;
            let spec = spec.unwrap_or_else(|| artifact.metadata.objective.clone());
            let (trajectory, ret) = evaluate_artifact(&layout, &artifact, &spec);
            print_json(&Evaluation {
                id: &id,
                spec: spec.tag(),
                ret,
                steps: trajectory.steps.len(),
                terminal: format!("{:?}", trajectory.final_terminal().expect("non-empty rollout")),
            })
        }
        Command::Experiment {
            library_dir,
            plan,
            out,
            jobs,
        } => {
            let plan = ExperimentPlan::from_json(&fs::read_to_string(plan)?)?;
            let output = run_experiment(&plan, &library_dir, &out, jobs)?;
            let composed = output.rows.iter().filter(|r| r.strategy != PlanStrategy::Tfs).count();
            println!(
                "{{\"rows\":{},\"composed\":{},\"sweep_rows\":{},\"out\":{}}}",
                output.rows.len(),
                composed,
                output.sweep.len(),
                serde_json::to_string(&out.display().to_string())?
            );
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct ErrorLine {
    error: &'static str,
    message: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(if code == 0 { 0 } else { 2 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &Error) -> ExitCode {
    let line = ErrorLine {
        error: e.code(),
        message: e.to_string(),
    };
    eprintln!("{}", serde_json::to_string(&line).expect("error line serializes"));
    ExitCode::from(if e.is_io() { 4 } else { 3 })
}
