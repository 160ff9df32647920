//! The `mirror` command line.

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mirror_core::inference::ChatSession;
use mirror_core::model::MirrorModel;

use crate::checkpoint::checkpoint_id;
use crate::config::{parse_dataset, parse_profile, parse_z_mode, Settings, StrategyKind};
use crate::corpus_io::{write_jsonl, CorpusFormat};
use crate::pipeline::{self, PreprocessInputs};
use crate::server::{self, AppState};
use crate::{toy, verify};

#[derive(Debug, Parser)]
#[command(name = "mirror", version, about = "Bidirectional latent-variable dialogue model")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Unset flags leave the config file or
/// default value in place.
#[derive(Debug, Default, Args)]
pub struct GlobalArgs {
    /// `key = value` settings file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// paper or desk
    #[arg(long, global = true)]
    pub profile: Option<String>,
    /// mirror, forward, backward or cvae
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// dailydialog, movietriples or custom
    #[arg(long, global = true)]
    pub dataset: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub strategy: Option<StrategyKind>,
    /// Beam width
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    /// mean or sample
    #[arg(long = "z-mode", global = true)]
    pub z_mode: Option<String>,
    #[arg(long, global = true)]
    pub port: Option<u16>,
    /// Default data root; falls back to $MIRROR_DATA_DIR, then ./data
    #[arg(long = "data-dir", global = true)]
    pub data_dir: Option<PathBuf>,
    /// Any other setting, as key=value (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ToyCorpus {
    Toy32,
    Toy8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert corpora to JSON lines and build the vocabulary
    Preprocess {
        #[arg(long, required_unless_present = "toy")]
        train: Option<PathBuf>,
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: CorpusFormat,
        /// Use a bundled corpus for every split
        #[arg(long, value_enum, conflicts_with = "train")]
        toy: Option<ToyCorpus>,
        /// Output directory (default: the data root)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on a preprocessed data directory
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Perplexity and distinct-n on a split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Score these outputs for distinct-n instead of decoding
        #[arg(long)]
        outputs: Option<PathBuf>,
        /// Also write the metrics JSON here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode a response for every triple of a split
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interactive session on stdin
    Chat {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Serve a pairwise evaluation session over HTTP
    ServeEval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Outputs of the model under evaluation
        #[arg(long)]
        focal: PathBuf,
        #[arg(long)]
        comparator: PathBuf,
        #[arg(long, default_value = "default")]
        session: String,
        /// Append-only judgment log; an existing journal is resumed
        #[arg(long)]
        journal: PathBuf,
        #[arg(long, default_value_t = mirror_core::evaluation::DEFAULT_PAIRS)]
        pairs: usize,
        /// Directory with the annotator UI
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
    /// Gradient, KL and objective checks
    Verify,
}

/// Defaults, then the config file, then `--set` pairs, then named flags.
pub fn resolve_settings(g: &GlobalArgs) -> Result<Settings> {
    let mut s = Settings::default();
    if let Some(path) = &g.config {
        s.apply_file(path)?;
    }
    for kv in &g.set {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("--set expects KEY=VALUE, got {:?}", kv);
        };
        s.set(k.trim(), v.trim())?;
    }
    if let Some(v) = g.seed {
        s.seed = v;
    }
    if let Some(v) = &g.profile {
        s.profile = parse_profile(v)?;
    }
    if let Some(v) = &g.mode {
        s.mode = v.parse()?;
    }
    if let Some(v) = &g.dataset {
        s.dataset = parse_dataset(v)?;
    }
    if let Some(v) = g.strategy {
        s.strategy = v;
    }
    if let Some(v) = g.k {
        s.k = v;
    }
    if let Some(v) = g.temperature {
        s.temperature = v;
    }
    if let Some(v) = &g.z_mode {
        s.z_mode = parse_z_mode(v)?;
    }
    if let Some(v) = g.port {
        s.port = v;
    }
    if let Some(v) = &g.data_dir {
        s.data_dir = Some(v.clone());
    }
    s.strategy().validate()?;
    Ok(s)
}

/// Parse `argv` and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    match execute(cli, &mut stdin.lock(), &mut stdout.lock()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {:#}", e);
            1
        }
    }
}

pub fn execute(cli: Cli, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<i32> {
    let settings = resolve_settings(&cli.global)?;
    let root = settings.data_root();
    let data_or_root = |d: Option<PathBuf>| d.unwrap_or_else(|| root.clone());
    match cli.command {
        Command::Preprocess {
            train,
            valid,
            test,
            format,
            toy,
            out: out_dir,
        } => {
            let out_dir = data_or_root(out_dir);
            let inputs = match toy {
                Some(which) => {
                    let path = write_toy(which, &out_dir)?;
                    PreprocessInputs {
                        train: path,
                        valid: None,
                        test: None,
                        format: CorpusFormat::Jsonl,
                    }
                }
                None => PreprocessInputs {
                    train: train.context("--train is required")?,
                    valid,
                    test,
                    format,
                },
            };
            let summary = pipeline::preprocess(&inputs, &out_dir, &settings)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&summary)?)?;
        }
        Command::Train { data, out: run_dir, epochs } => {
            let mut settings = settings;
            if let Some(e) = epochs {
                settings.epochs = e;
            }
            let data = data_or_root(data);
            let summary = pipeline::train(&data, &run_dir, &settings, |rec, _| {
                let _ = writeln!(
                    std::io::stderr(),
                    "epoch {} train {:.4} valid {:.4} kl {:.4} lr {:.2e}",
                    rec.epoch,
                    rec.train.combined,
                    rec.valid.combined,
                    rec.train.kl,
                    rec.lr
                );
                mirror_core::train::Control::Continue
            })?;
            writeln!(out, "{}", serde_json::to_string_pretty(&summary)?)?;
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            outputs,
            out: metrics_out,
        } => {
            let data = data_or_root(data);
            let (model, _) = pipeline::load_model(&checkpoint)?;
            let triples = pipeline::load_triples(&data, &split, settings.window)?;
            let responses: Vec<String> = match outputs {
                Some(p) => pipeline::read_outputs(&p)?.into_iter().map(|o| o.response_text).collect(),
                None => pipeline::generate_outputs(&model, &triples, &settings, &checkpoint_id(&checkpoint))?
                    .into_iter()
                    .map(|o| o.response_text)
                    .collect(),
            };
            let metrics = pipeline::evaluate(&model, &triples, &responses, settings.max_len)?;
            let text = serde_json::to_string_pretty(&metrics)?;
            if let Some(p) = metrics_out {
                std::fs::write(&p, format!("{}\n", text)).with_context(|| format!("writing {}", p.display()))?;
            }
            writeln!(out, "{}", text)?;
        }
        Command::Generate {
            checkpoint,
            data,
            split,
            out: path,
        } => {
            let data = data_or_root(data);
            let (model, _) = pipeline::load_model(&checkpoint)?;
            let triples = pipeline::load_triples(&data, &split, settings.window)?;
            let outputs = pipeline::generate_outputs(&model, &triples, &settings, &checkpoint_id(&checkpoint))?;
            pipeline::write_outputs(&path, &outputs)?;
            writeln!(out, "wrote {} responses to {}", outputs.len(), path.display())?;
        }
        Command::Chat { checkpoint } => {
            let (model, _) = pipeline::load_model(&checkpoint)?;
            let mut session = ChatSession::new(settings.context_turns);
            session.checkpoint_id = Some(checkpoint_id(&checkpoint));
            session.strategy = settings.strategy();
            session.z_mode = settings.z_mode;
            session.max_len = settings.gen_max_len;
            session.seed = settings.seed;
            chat_loop(&model, &mut session, input, out)?;
        }
        Command::ServeEval {
            data,
            split,
            focal,
            comparator,
            session,
            journal,
            pairs,
            static_dir,
        } => {
            let data = data_or_root(data);
            let triples = pipeline::load_triples(&data, &split, settings.window)?;
            let sources = pipeline::eval_sources(&triples);
            let focal = pipeline::read_outputs(&focal)?;
            let comparator = pipeline::read_outputs(&comparator)?;
            let live = pipeline::open_session(&journal, &session, &sources, &focal, &comparator, pairs, settings.seed)?;
            let app = server::router(AppState::new(vec![live]), static_dir);
            let port = settings.port;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
                eprintln!("serving session {:?} on http://{}", session, listener.local_addr()?);
                tokio::select! {
                    r = server::serve(listener, app) => r,
                    _ = tokio::signal::ctrl_c() => Ok(()),
                }
            })?;
        }
        Command::Verify => {
            let checks = verify::run_all(settings.seed);
            let mut first_failure = None;
            for c in &checks {
                let status = if c.passed { "PASS" } else { "FAIL" };
                writeln!(out, "{} {} ({:.1}s) {}", status, c.name, c.seconds, c.detail)?;
                if !c.passed && first_failure.is_none() {
                    first_failure = Some(c.name.clone());
                }
            }
            if let Some(name) = first_failure {
                writeln!(out, "verification failed: {}", name)?;
                return Ok(1);
            }
            writeln!(out, "all {} checks passed", checks.len())?;
        }
    }
    Ok(0)
}

fn write_toy(which: ToyCorpus, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let (name, text) = match which {
        ToyCorpus::Toy32 => ("toy32.jsonl", toy::TOY32),
        ToyCorpus::Toy8 => ("toy8.jsonl", toy::TOY8),
    };
    let path = dir.join(name);
    write_jsonl(std::fs::File::create(&path)?, &toy::dialogues(text))?;
    Ok(path)
}

/// Read lines until EOF or `:quit`. `:reset` clears the history and
/// `:seed N` changes the sampling seed.
pub fn chat_loop(
    model: &MirrorModel<f32>,
    session: &mut ChatSession,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<()> {
    let mut line = String::new();
    loop {
        write!(out, "> ")?;
        out.flush()?;
        line.clear();
        if input.read_line(&mut line)? == 0 {
            break;
        }
        let text = line.trim();
        match text {
            "" => continue,
            ":quit" | ":q" => break,
            ":reset" => {
                session.reset();
                writeln!(out, "(history cleared)")?;
                continue;
            }
            _ => {}
        }
        if let Some(rest) = text.strip_prefix(":seed") {
            match rest.trim().parse::<u64>() {
                Ok(n) => {
                    session.seed = n;
                    writeln!(out, "(seed {})", n)?;
                }
                Err(_) => writeln!(out, "usage: :seed N")?,
            }
            continue;
        }
        if text.starts_with(':') {
            writeln!(out, "commands: :reset, :seed N, :quit")?;
            continue;
        }
        match session.chat_turn(Some(model), text) {
            Ok(reply) => writeln!(out, "{}", reply.tokens.join(" "))?,
            Err(e) => writeln!(out, "error: {}", e)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(args).unwrap()
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.conf");
        std::fs::write(&cfg, "seed = 7\nlr = 0.01\nprofile = paper\n").unwrap();
        let cli = parse(&[
            "mirror",
            "verify",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "9",
            "--set",
            "lr=0.02",
        ]);
        let s = resolve_settings(&cli.global).unwrap();
        assert_eq!(s.seed, 9);
        assert_eq!(s.lr, 0.02);
        assert_eq!(s.profile, mirror_core::model::Profile::Paper);
    }

    #[test]
    fn unknown_subcommand_exits_with_2() {
        let err = Cli::try_parse_from(["mirror", "frobnicate"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn beam_needs_positive_width() {
        let cli = parse(&["mirror", "verify", "--strategy", "beam", "--k", "0"]);
        assert!(resolve_settings(&cli.global).is_err());
    }
}
