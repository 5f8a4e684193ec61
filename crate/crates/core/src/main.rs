use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use perceploop::cli::{cmd_enhance, cmd_eval, cmd_finetune, cmd_gen, cmd_pretrain, Invocation};
use perceploop::trainer::Protocol;

#[derive(Parser)]
#[command(name = "perceploop", version, about = "Reference-free perceptual-loss training for noise suppression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the toy corpus.
    Gen(Common),
    /// Pre-train the enhancement and quality models on synthetic data.
    Pretrain(Common),
    /// Fine-tune with alternating updates on real and synthetic data.
    Finetune(Common),
    /// Enhance one WAV file.
    Enhance(Common),
    /// Evaluate a checkpoint on a manifest.
    Eval(Common),
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Alternation protocol: ep or mb.
    #[arg(long, value_parser = parse_protocol)]
    protocol: Option<Protocol>,
    /// Checkpoint file or directory.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Input WAV, manifest or corpus directory.
    #[arg(long = "in")]
    input: Option<PathBuf>,
}

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    s.parse().map_err(|e: perceploop::Error| e.to_string())
}

impl From<Common> for Invocation {
    fn from(c: Common) -> Self {
        Invocation {
            config: c.config,
            seed: c.seed,
            out: c.out,
            protocol: c.protocol,
            ckpt: c.ckpt,
            input: c.input,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(c) => cmd_gen(&c.into()),
        Command::Pretrain(c) => cmd_pretrain(&c.into()),
        Command::Finetune(c) => cmd_finetune(&c.into()),
        Command::Enhance(c) => cmd_enhance(&c.into()),
        Command::Eval(c) => cmd_eval(&c.into()),
    };
    match result {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = e.exit_code();
            eprintln!("error: {:#}", anyhow::Error::new(e));
            ExitCode::from(code as u8)
        }
    }
}
