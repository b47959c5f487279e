//! The `philab` command line: one binary, one subcommand per pipeline stage.

pub mod checks;
pub mod config;
pub mod manifest;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::Arch;
use crate::train::Preset;
use config::{parse_config_from, parse_value, recipe, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "philab", version = manifest::CODE_VERSION, about = "PHi-layer experiments on synthetic automaton tasks")]
#[command(after_help = "Any config field can be overridden with a dotted flag, e.g. --train.lr=1e-4 or --data.n_states '[3, 8]'.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Paper,
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Transformer,
    Lstm,
}

impl From<ArchArg> for Arch {
    fn from(a: ArchArg) -> Arch {
        match a {
            ArchArg::Transformer => Arch::Transformer,
            ArchArg::Lstm => Arch::Lstm,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON config file; its fields override the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    #[arg(long, value_enum)]
    pub arch: Option<ArchArg>,
    /// Root seed (`train.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory (`out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated tasks, e.g. `mem_seq,icll` (`train.enabled_tasks`).
    #[arg(long, value_delimiter = ',')]
    pub tasks: Option<Vec<String>>,
    #[arg(long)]
    pub phi_position: Option<usize>,
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the fixed pools and the held-out evaluation set.
    GenData(CommonArgs),
    /// Train and write checkpoints plus the step log.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Continue from the run's checkpoint if there is one.
        #[arg(long)]
        resume: bool,
    },
    /// Write per-token records for the evaluation set.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Defaults to `<out>/checkpoint.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write figure tables from the token records.
    Analyze(CommonArgs),
    /// Run the pinned desk recipe for a figure end to end and check it.
    ReproFig {
        /// 2, 3 or 4.
        figure: u8,
        /// Add the copying task to the mixture (figures 2 and 3).
        #[arg(long)]
        copy: bool,
        /// Exit with status 3 when a check fails.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
}

/// Splits `--a.b=v` / `--a.b v` overrides out of the argument list; clap
/// sees the rest.
pub fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, Value)>)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (key, inline) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        if !key.contains('.') {
            rest.push(arg);
            continue;
        }
        let raw = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| Error::config(&key, "override needs a value"))?,
        };
        overrides.push((key, parse_value(&raw)));
    }
    Ok((rest, overrides))
}

impl CommonArgs {
    fn flag_overrides(&self) -> Vec<(String, Value)> {
        let mut out = Vec::new();
        if let Some(s) = self.seed {
            out.push(("train.seed".to_string(), Value::from(s)));
        }
        if let Some(o) = &self.out {
            out.push(("out_dir".to_string(), Value::from(o.to_string_lossy().into_owned())));
        }
        if let Some(t) = &self.tasks {
            out.push(("train.enabled_tasks".to_string(), Value::from(t.clone())));
        }
        if let Some(p) = self.phi_position {
            out.push(("model.phi_position".to_string(), Value::from(p)));
        }
        if let Some(s) = self.steps {
            out.push(("train.steps".to_string(), Value::from(s)));
        }
        out
    }

    /// Base config, then the file, then named flags, then dotted overrides.
    fn resolve(&self, base: Option<ExperimentConfig>, dotted: &[(String, Value)]) -> Result<ExperimentConfig> {
        let arch = self.arch.map(Arch::from).unwrap_or(Arch::Transformer);
        let base = base.unwrap_or_else(|| {
            let preset = match self.preset {
                Some(PresetArg::Paper) => Preset::Paper,
                _ => Preset::Desk,
            };
            ExperimentConfig::preset(preset, arch)
        });
        let mut all = self.flag_overrides();
        all.extend(dotted.iter().cloned());
        parse_config_from(base, self.config.as_deref(), &all)
    }
}

/// Aligns a small CSV table for the terminal.
fn format_table(csv: &str, keep: impl Fn(&[&str]) -> bool) -> String {
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    let rows: Vec<&Vec<&str>> = rows.iter().enumerate().filter(|(i, r)| *i == 0 || keep(r)).map(|(_, r)| r).collect();
    let ncol = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let short = |s: &str| match s.parse::<f64>() {
        Ok(v) if s.contains('.') || s.contains('e') => format!("{v:.4}"),
        _ => s.to_string(),
    };
    let cells: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(|c| short(c)).collect()).collect();
    let widths: Vec<usize> = (0..ncol)
        .map(|j| cells.iter().filter_map(|r| r.get(j)).map(|c| c.len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &cells {
        let line: Vec<String> = r.iter().enumerate().map(|(j, c)| format!("{c:<w$}", w = widths[j])).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn print_figure(cfg: &ExperimentConfig, figure: u8) -> Result<()> {
    let read = |name: &str| std::fs::read_to_string(cfg.out_dir.join(name));
    match figure {
        2 => print!("{}", format_table(&read("fig2_nll.csv")?, |r| r[0] == "mean" || r[0] == "diff")),
        3 => print!("{}", format_table(&read("fig3_phi.csv")?, |r| r[0] == "mean" || r[0] == "diff")),
        _ => print!("{}", format_table(&read("fig4_partial_corr.csv")?, |_| true)),
    }
    let copy = cfg.out_dir.join("copy_occurrences.csv");
    if figure != 4 && copy.exists() {
        println!();
        print!("{}", format_table(&std::fs::read_to_string(copy)?, |_| true));
    }
    Ok(())
}

/// Runs the command line and returns the process exit status.
pub fn run(argv: Vec<String>) -> Result<i32> {
    let (rest, dotted) = split_overrides(argv)?;
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return Ok(e.exit_code());
        }
    };
    match cli.command {
        Command::GenData(c) => {
            let cfg = c.resolve(None, &dotted)?;
            let ds = pipeline::gen_data(&cfg)?;
            println!("wrote {} sequences to {}", ds.len(), cfg.out_dir.display());
        }
        Command::Train { common, resume } => {
            let cfg = common.resolve(None, &dotted)?;
            let logs = pipeline::train(&cfg, resume)?;
            match logs.last() {
                Some(l) => println!("step {} nll {:.4} phi {:.4} -> {}", l.step, l.nll, l.phi_nats, cfg.out_dir.display()),
                None => println!("already at step {}; nothing to do", cfg.train.steps),
            }
        }
        Command::Eval { common, checkpoint } => {
            let cfg = common.resolve(None, &dotted)?;
            let recs = pipeline::eval(&cfg, checkpoint.as_deref())?;
            println!("wrote {} token records to {}", recs.len(), cfg.out_dir.join(pipeline::RECORDS_FILE).display());
        }
        Command::Analyze(c) => {
            let cfg = c.resolve(None, &dotted)?;
            let out = pipeline::analyze(&cfg)?;
            for name in &out.written {
                println!("wrote {}", cfg.out_dir.join(name).display());
            }
            for check in &out.checks {
                println!("{check}");
            }
        }
        Command::ReproFig {
            figure,
            copy,
            strict,
            resume,
            common,
        } => {
            let arch = common.arch.map(Arch::from).unwrap_or(Arch::Transformer);
            let base = recipe(figure, arch, copy)?;
            let cfg = common.resolve(Some(base), &dotted)?;
            let out = pipeline::run_all(&cfg, resume)?;
            print_figure(&cfg, figure)?;
            println!();
            let relevant: Vec<_> = out
                .checks
                .iter()
                .filter(|c| match figure {
                    2 => c.name.starts_with("nll:"),
                    3 => c.name.starts_with("phi:") || c.name.starts_with("nll: first"),
                    _ => true,
                })
                .collect();
            for check in &relevant {
                println!("{check}");
            }
            if strict && relevant.iter().any(|c| !c.pass) {
                return Ok(3);
            }
        }
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn dotted_flags_are_split_out() {
        let (rest, ov) = split_overrides(s(&["philab", "train", "--train.lr=1e-4", "--out", "a.b", "--data.n_states", "[3, 5]"])).unwrap();
        assert_eq!(rest, s(&["philab", "train", "--out", "a.b"]));
        assert_eq!(ov[0], ("train.lr".to_string(), serde_json::json!(1e-4)));
        assert_eq!(ov[1], ("data.n_states".to_string(), serde_json::json!([3, 5])));
        assert!(split_overrides(s(&["philab", "--train.lr"])).is_err());
    }

    #[test]
    fn named_flags_map_to_config_fields() {
        let c = CommonArgs {
            seed: Some(9),
            steps: Some(3),
            tasks: Some(vec!["icll".into()]),
            phi_position: Some(1),
            ..Default::default()
        };
        let cfg = c.resolve(None, &[("train.lr".into(), serde_json::json!(0.01))]).unwrap();
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.steps, 3);
        assert_eq!(cfg.train.enabled_tasks, vec![crate::tasks::Task::Icll]);
        assert_eq!(cfg.model.phi_position, 1);
        assert_eq!(cfg.train.lr, 0.01);
    }
}
