use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod cli;

use cli::commands::{self, Ctx};
use cli::config;

/// Chinese spelling correction with phonetic, graphemic and semantic features.
#[derive(Parser)]
#[command(name = "nambert", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override a config value, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the pinyin table, glyph atlas and corpora; write the vocabulary.
    PrepareData(Common),
    /// Pretrain the graphemic encoder on glyph identification.
    PretrainGlyph(Common),
    /// Train the context-only baseline with masked-LM restoration.
    PretrainMlm(Common),
    /// Fine-tune the correction model.
    Train(Common),
    /// Sentence-level metrics on the train and test sets.
    Evaluate(Common),
    /// Binned substitution analysis of phonetic and graphemic cue use.
    Macu {
        #[command(flatten)]
        common: Common,
        /// Where to write the JSON report (default `<out>/macu.json`).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Linear probes on frozen per-character hidden states.
    Probe(Common),
    /// Evaluate a chat-completions endpoint on the same data.
    LlmEval(Common),
    /// Correct one sentence with a saved model.
    Correct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        text: String,
    },
}

fn run(cli: Cli) -> nambert::Result<()> {
    let (name, common, report) = match cli.command {
        Command::Correct { checkpoint, text } => return commands::correct_cmd(&checkpoint, &text),
        Command::PrepareData(c) => ("prepare-data", c, None),
        Command::PretrainGlyph(c) => ("pretrain-glyph", c, None),
        Command::PretrainMlm(c) => ("pretrain-mlm", c, None),
        Command::Train(c) => ("train", c, None),
        Command::Evaluate(c) => ("evaluate", c, None),
        Command::Macu { common, report } => ("macu", common, report),
        Command::Probe(c) => ("probe", c, None),
        Command::LlmEval(c) => ("llm-eval", c, None),
    };
    let loaded = config::load(&common.config, &common.set)?;
    let ctx = Ctx::new(name, loaded, common.out)?;
    ctx.write_manifest()?;
    match name {
        "prepare-data" => commands::prepare_data(&ctx),
        "pretrain-glyph" => commands::pretrain_glyph_cmd(&ctx),
        "pretrain-mlm" => commands::pretrain_mlm_cmd(&ctx),
        "train" => commands::train_cmd(&ctx),
        "evaluate" => commands::evaluate_cmd(&ctx),
        "macu" => commands::macu_cmd(&ctx, report.as_deref()),
        "probe" => commands::probe_cmd(&ctx),
        "llm-eval" => commands::llm_eval_cmd(&ctx),
        _ => unreachable!("every subcommand is matched above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // Usage errors exit with status 2 inside `parse`.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
