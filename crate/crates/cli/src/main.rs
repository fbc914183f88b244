use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod manifest;

#[derive(Debug, Parser)]
#[command(name = "taps", version, about = "Pseudo-caption text-to-shape training at desk scale")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Flat `key = value` config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the noun and adjective lists used for retrieval.
    BuildVocab(commands::BuildVocabArgs),
    /// Retrieve words for every object and write the pseudo-caption file.
    GenCaptions(commands::GenCaptionsArgs),
    /// Render a synthetic object world with hidden latents.
    MakeFixture(commands::MakeFixtureArgs),
    /// Train both mapping networks against the frozen generator.
    Train(commands::TrainArgs),
    /// Fréchet distance and R-precision.
    Eval(commands::EvalArgs),
    /// Multi-view sample grids from a checkpoint.
    RenderSamples(commands::RenderSamplesArgs),
    /// Latent interpolation strips between two captions.
    Interpolate(commands::InterpolateArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    let level = if cli.global.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let g = &cli.global;
    let result = match &cli.command {
        Command::BuildVocab(a) => commands::build_vocab(g, a),
        Command::GenCaptions(a) => commands::gen_captions(g, a),
        Command::MakeFixture(a) => commands::make_fixture(g, a),
        Command::Train(a) => commands::train(g, a),
        Command::Eval(a) => commands::eval(g, a),
        Command::RenderSamples(a) => commands::render_samples(g, a),
        Command::Interpolate(a) => commands::interpolate(g, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (category, code) = classify(&e);
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if msg.contains(&cause) {
                    continue;
                }
                if !msg.is_empty() {
                    msg.push_str(": ");
                }
                msg.push_str(&cause);
            }
            let msg = msg.replace('\n', " ");
            eprintln!("error[{category}]: {msg}");
            ExitCode::from(code)
        }
    }
}

fn classify(e: &anyhow::Error) -> (&'static str, u8) {
    match e.downcast_ref::<taps_core::Error>() {
        Some(err) => {
            let category = err.category();
            let code = match category {
                "io" => 3,
                "provider-unavailable" => 5,
                "numeric" => 6,
                _ => 4,
            };
            (category, code)
        }
        None => ("internal", 1),
    }
}
