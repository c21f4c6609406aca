//! `sgmn`: dataset generation, parsing, grounding, training and evaluation.
//!
//! On failure the last line on stderr is `error: <class>: <message>`.

mod commands;
mod overrides;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "sgmn",
    version,
    about = "Scene-graph guided referring-expression grounding"
)]
struct Cli {
    /// Seed for every random choice; required by generate and train.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file with the subcommand's configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Treat a generation shortfall as an error.
    #[arg(long, global = true)]
    strict: bool,
    /// Worker threads for evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Configuration override, `key=value` with dotted keys; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a balanced expression dataset over annotated scenes.
    Generate(GenerateArgs),
    /// Parse an expression into a language scene graph.
    Parse(ParseArgs),
    /// Ground an expression in one image.
    Ground(GroundArgs),
    /// Train a model on the train split of a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint by node-count split.
    Eval(EvalArgs),
    /// Train and evaluate the ablation variants.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Scenes file (JSON Lines); synthetic scenes are drawn when absent.
    #[arg(long)]
    scenes: Option<PathBuf>,
    /// Number of synthetic scenes.
    #[arg(long, default_value_t = 200)]
    synth: usize,
    #[arg(long, default_value_t = 3)]
    min_objects: usize,
    #[arg(long, default_value_t = 7)]
    max_objects: usize,
    /// Output directory for scenes.jsonl, dataset.jsonl and report.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ParseArgs {
    text: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GroundArgs {
    /// Objects file of the image.
    #[arg(long)]
    objects: PathBuf,
    #[arg(long, conflicts_with = "graph", required_unless_present = "graph")]
    expression: Option<String>,
    /// Language graph in interchange JSON instead of an expression.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Trained weights; an untrained model from the seed is used otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Where to write the reasoning trace as JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Where to write the reasoning trace as DOT.
    #[arg(long)]
    dot: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    scenes: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Also train and report the language-blind baseline.
    #[arg(long)]
    blind: bool,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Text table path.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated subset of full, no_transfer, no_norm, max_merge, min_merge.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    table: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = commands::Global {
        seed: cli.seed,
        config: cli.config,
        strict: cli.strict,
        threads: cli.threads.max(1),
        sets: cli.sets,
    };
    match cli.command {
        Command::Generate(a) => commands::generate(
            &g,
            &commands::GenerateInput {
                scenes: a.scenes,
                synth: a.synth,
                min_objects: a.min_objects,
                max_objects: a.max_objects,
                out: a.out,
            },
        ),
        Command::Parse(a) => commands::parse(&a.text, a.out.as_deref()),
        Command::Ground(a) => commands::ground(
            &g,
            &commands::GroundInput {
                objects: a.objects,
                expression: a.expression,
                graph: a.graph,
                checkpoint: a.checkpoint,
                trace: a.trace,
                dot: a.dot,
            },
        ),
        Command::Train(a) => commands::train(&g, a.data.scenes, a.data.dataset, &a.out),
        Command::Eval(a) => commands::eval(
            &g,
            &commands::EvalInput {
                scenes: a.data.scenes,
                dataset: a.data.dataset,
                checkpoint: a.checkpoint,
                split: a.split,
                blind: a.blind,
                out: a.out,
                table: a.table,
            },
        ),
        Command::Ablate(a) => commands::ablate(
            &g,
            a.data.scenes,
            a.data.dataset,
            &a.variants,
            a.out.as_deref(),
            a.table.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.class());
            ExitCode::from(if e.class() == "usage" { 2 } else { 1 })
        }
    }
}
