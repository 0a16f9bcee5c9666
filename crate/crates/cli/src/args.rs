//! Flag definitions and config-file merging.
//!
//! A config file is TOML whose keys are long flag names without the leading
//! dashes. Top-level keys apply to every subcommand that defines the flag; a
//! table named after a subcommand applies to that subcommand only. Values
//! from the file are spliced in front of the user's flags, and every flag
//! overrides earlier occurrences of itself, so flags on the command line win.

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "precondgen",
    version,
    about = "Diverse precondition generation experiments"
)]
pub struct Cli {
    /// TOML config file; keys mirror flag names and flags win on conflict.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic annotated corpus.
    Synth(SynthArgs),
    /// Train samplers, generator, infilling baseline and re-ranker.
    Train(TrainArgs),
    /// Generate candidates for every test-split target with one strategy.
    Generate(GenerateArgs),
    /// Score run-record files for diversity.
    Evaluate(EvaluateArgs),
    /// Generate with every strategy and evaluate them together.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output JSONL corpus.
    #[arg(long)]
    pub out: PathBuf,
    /// Write temporal pretraining records here instead of into `--out`.
    #[arg(long)]
    pub pretrain_out: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub targets: usize,
    #[arg(long, default_value_t = 4)]
    pub preconditions: usize,
    /// Sentences per (target, precondition) pair.
    #[arg(long, default_value_t = 25)]
    pub templates: usize,
    #[arg(long, default_value_t = 200)]
    pub vocab_size: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Extra temporal pretraining records.
    #[arg(long)]
    pub pretrain: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub pretrain_weight: f64,
    /// Model directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    #[arg(long, default_value_t = 0.1)]
    pub add_k: f64,
    /// Control-code copy bias of the generator.
    #[arg(long, default_value_t = 0.3)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    pub sampler_add_k: f64,
    /// Sampler context windows to train.
    #[arg(long, value_delimiter = ',', default_values_t = [0usize, 3, 5])]
    pub windows: Vec<usize>,
    /// Count the whole sequence, prompt included, instead of the output only.
    #[arg(long)]
    pub count_prompt: bool,
    #[arg(long, default_value_t = 400)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Beam,
    Rps,
    RpsPost,
    Dip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Nucleus,
    Beam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelfBleuArg {
    Pairwise,
    VsRest,
}

/// Decoding and post-processing flags shared by `generate` and `compare`.
#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Annotated corpus; its test split supplies the targets.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Triggers drawn from the event sampler.
    #[arg(long, default_value_t = 20)]
    pub n_triggers: usize,
    #[arg(long, default_value_t = 10)]
    pub beam_k: usize,
    #[arg(long, default_value_t = 0.9)]
    pub nucleus_p: f64,
    /// Repetition penalty of RPS.
    #[arg(long, default_value_t = 1.2)]
    pub lambda: f64,
    #[arg(long, default_value_t = 24)]
    pub max_len: usize,
    #[arg(long, default_value_t = 0.0)]
    pub length_norm_alpha: f64,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[arg(long, default_value_t = 10)]
    pub rps_iterations: usize,
    /// Decoding of each DiP clause.
    #[arg(long, value_enum, default_value_t = ModeArg::Nucleus)]
    pub generation_mode: ModeArg,
    /// Similarity threshold: `mean+std`, `off`, or a number.
    #[arg(long, default_value = "mean+std")]
    pub threshold: String,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[arg(long, value_enum)]
    pub strategy: StrategyArg,
    /// DiP sampler context window.
    #[arg(long, default_value_t = 0)]
    pub window: usize,
    /// Directory receiving `<strategy>.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub allow_ragged: bool,
    #[arg(long, value_enum, default_value_t = SelfBleuArg::Pairwise)]
    pub self_bleu_mode: SelfBleuArg,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Run-record files, or directories of them.
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    /// Model directory; the generator supplies the similarity embedder.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub report: ReportArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Directory receiving `runs/`, `report.json` and `table.md`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub report: ReportArgs,
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

/// How a flag consumes config values.
#[derive(Debug, Clone, Copy)]
enum Shape {
    Switch,
    /// Takes values; arrays are joined with the delimiter when there is one.
    Value(Option<char>),
}

fn long_flags(cmd: &clap::Command) -> Vec<(String, Shape)> {
    cmd.get_arguments()
        .filter_map(|a| {
            let shape = if a.get_action().takes_values() {
                Shape::Value(a.get_value_delimiter())
            } else {
                Shape::Switch
            };
            a.get_long().map(|l| (l.to_owned(), shape))
        })
        .collect()
}

fn value_args(key: &str, shape: Shape, value: &toml::Value) -> Result<Vec<OsString>> {
    let flag = OsString::from(format!("--{key}"));
    let scalar = |v: &toml::Value| -> Result<String> {
        Ok(match v {
            toml::Value::String(s) => s.clone(),
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            _ => bail!("config key `{key}` must be a string, number or boolean"),
        })
    };
    let Shape::Value(delimiter) = shape else {
        return match value {
            toml::Value::Boolean(true) => Ok(vec![flag]),
            toml::Value::Boolean(false) => Ok(vec![]),
            _ => bail!("config key `{key}` is a switch and takes true or false"),
        };
    };
    match value {
        toml::Value::Array(items) => {
            let vals = items.iter().map(scalar).collect::<Result<Vec<_>>>()?;
            let mut out = vec![flag];
            match delimiter {
                Some(d) => out.push(vals.join(&d.to_string()).into()),
                None => out.extend(vals.into_iter().map(OsString::from)),
            }
            Ok(out)
        }
        v => Ok(vec![flag, scalar(v)?.into()]),
    }
}

/// Arguments contributed by the config file for subcommand `sub`.
fn config_args(table: &toml::Table, root: &clap::Command, sub: &str) -> Result<Vec<OsString>> {
    let subs: Vec<(String, Vec<(String, Shape)>)> = root
        .get_subcommands()
        .map(|c| (c.get_name().to_owned(), long_flags(c)))
        .collect();
    let flags_of = |name: &str| subs.iter().find(|(n, _)| n == name).map(|(_, f)| f);
    let find = |flags: &[(String, Shape)], key: &str| {
        flags.iter().find(|(l, _)| l == key).map(|(_, v)| *v)
    };
    let own = flags_of(sub).ok_or_else(|| anyhow!("unknown subcommand {sub}"))?;

    let mut out = Vec::new();
    for (key, value) in table {
        if key == "config" {
            bail!("config key `config` is not allowed inside a config file");
        }
        if let toml::Value::Table(section) = value {
            let flags = flags_of(key).ok_or_else(|| anyhow!("unknown config section `[{key}]`"))?;
            for (k, _) in section {
                if find(flags, k).is_none() {
                    bail!("unknown config key `{k}` in section `[{key}]`");
                }
            }
            continue;
        }
        match find(own, key) {
            Some(shape) => out.extend(value_args(key, shape, value)?),
            None if subs.iter().any(|(_, f)| find(f, key).is_some()) => {}
            None => bail!("unknown config key `{key}`"),
        }
    }
    if let Some(toml::Value::Table(section)) = table.get(sub) {
        for (key, value) in section {
            let shape = find(own, key).expect("checked above");
            out.extend(value_args(key, shape, value)?);
        }
    }
    Ok(out)
}

fn command() -> clap::Command {
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd
        .get_subcommands()
        .map(|c| c.get_name().to_owned())
        .collect();
    for n in names {
        cmd = cmd.mut_subcommand(n, |c| c.args_override_self(true));
    }
    cmd
}

/// Parses `args`, splicing in config-file values. `Err` carries a config
/// error; clap usage errors exit directly with clap's status 2.
pub fn parse(args: Vec<OsString>) -> Result<Cli> {
    let root = command();
    let mut argv = args.clone();
    if let Some(path) = config_path(&args) {
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("config: cannot read {}", path.display()))?;
        let table: toml::Table = toml::from_str(&text)
            .with_context(|| format!("config: cannot parse {}", path.display()))?;
        let names: Vec<String> = root
            .get_subcommands()
            .map(|c| c.get_name().to_owned())
            .collect();
        if let Some(idx) = args
            .iter()
            .position(|a| names.iter().any(|n| a.to_string_lossy() == *n))
        {
            let sub = args[idx].to_string_lossy().into_owned();
            let extra = config_args(&table, &root, &sub).context("config")?;
            argv = args[..=idx].to_vec();
            argv.extend(extra);
            argv.extend_from_slice(&args[idx + 1..]);
        }
    }
    let matches = root.try_get_matches_from(argv).unwrap_or_else(|e| e.exit());
    Ok(Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<OsString> {
        s.split_whitespace().map(OsString::from).collect()
    }

    fn with_config(body: &str, args: &str) -> Result<Cli> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, body).unwrap();
        let mut a = argv(args);
        a.push("--config".into());
        a.push(path.into_os_string());
        parse(a)
    }

    #[test]
    fn command_definition_is_consistent() {
        command().debug_assert();
    }

    #[test]
    fn config_fills_missing_flags() {
        let cli = with_config(
            "seed = 9\nwindows = [0, 5]\ncount-prompt = true\n[generate]\nlambda = 2.0\n",
            "precondgen train --corpus c.jsonl --out m",
        )
        .unwrap();
        let Command::Train(t) = cli.command else {
            panic!()
        };
        assert_eq!(t.seed, 9);
        assert_eq!(t.windows, vec![0, 5]);
        assert!(t.count_prompt);
    }

    #[test]
    fn flags_win_over_config() {
        let cli = with_config(
            "seed = 9\n[train]\ngamma = 0.1\n",
            "precondgen train --corpus c.jsonl --out m --seed 3 --gamma 0.2",
        )
        .unwrap();
        let Command::Train(t) = cli.command else {
            panic!()
        };
        assert_eq!((t.seed, t.gamma), (3, 0.2));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = with_config("sede = 1\n", "precondgen synth --out x --seed 1").unwrap_err();
        assert!(format!("{err:#}").contains("`sede`"));
        let err =
            with_config("[train]\nbeam-k = 3\n", "precondgen synth --out x --seed 1").unwrap_err();
        assert!(format!("{err:#}").contains("`beam-k`"));
    }
}
