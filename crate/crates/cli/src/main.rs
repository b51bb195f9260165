use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use dipo_core::config::RunConfig;
use dipo_core::export;
use dipo_core::psd::oracle::{brute_force_threshold, random_snapshot, reports_match};
use dipo_core::psd::{select_threshold, ThresholdReason};
use dipo_core::simulator::{entropy_trend, run_entropy_experiment, run_training, EntropyMode, RunLog};
use dipo_core::DipoError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Default output root when neither the config file nor an override sets one.
const OUTPUT_ROOT_ENV: &str = "DIPO_OUTPUT_ROOT";

const RUNLOG: &str = "runlog.jsonl";
const RESOLVED_CONFIG: &str = "config.toml";
const POLICY: &str = "policy.json";

enum Failure {
    Validation(String),
    Runtime(String),
    Criterion(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Criterion(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Runtime(m) | Failure::Criterion(m) => m,
        }
    }
}

fn validation(e: DipoError) -> Failure {
    Failure::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Every `RunConfig` key, sorted.
fn config_keys() -> Vec<String> {
    let table: toml::Table = toml::from_str(&RunConfig::default().to_toml_string()).expect("defaults serialize");
    table.keys().cloned().collect()
}

fn config_args(cmd: Command) -> Command {
    let cmd = cmd
        .arg(
            Arg::new("config")
                .long("config")
                .short('c')
                .value_name("PATH")
                .value_parser(value_parser!(PathBuf))
                .help("TOML run configuration; missing keys take their defaults"),
        )
        .arg(
            Arg::new("set")
                .long("set")
                .value_name("KEY=VALUE")
                .action(ArgAction::Append)
                .help("Override any config key; applied after the per-field flags"),
        );
    config_keys().into_iter().fold(cmd, |cmd, key| {
        cmd.arg(
            Arg::new(key.clone())
                .long(key.replace('_', "-"))
                .value_name("VALUE")
                .help_heading("Config overrides")
                .help(format!("Override `{key}`")),
        )
    })
}

fn resolve_config(m: &ArgMatches) -> Result<RunConfig, Failure> {
    let mut file_sets_output = false;
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Validation(format!("cannot read config {}: {e}", path.display())))?;
            file_sets_output = text
                .parse::<toml::Table>()
                .map(|t| t.contains_key("output_dir"))
                .unwrap_or(false);
            RunConfig::from_toml_str(&text).map_err(validation)?
        }
        None => RunConfig::default(),
    };
    if !file_sets_output {
        if let Ok(root) = std::env::var(OUTPUT_ROOT_ENV) {
            if !root.is_empty() {
                cfg.output_dir = root;
            }
        }
    }
    for key in config_keys() {
        if let Some(value) = m.get_one::<String>(&key) {
            cfg.set(&key, value).map_err(validation)?;
        }
    }
    for kv in m.get_many::<String>("set").into_iter().flatten() {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Validation(format!("override `{kv}` is not KEY=VALUE")))?;
        cfg.set(key.trim(), value.trim()).map_err(validation)?;
    }
    cfg.validate().map_err(validation)?;
    Ok(cfg)
}

fn algorithm_name(cfg: &RunConfig) -> String {
    serde_json::to_value(cfg.algorithm)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_else(|| "run".into())
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn cmd_train(m: &ArgMatches) -> Result<(), Failure> {
    let cfg = resolve_config(m)?;
    let name = m
        .get_one::<String>("name")
        .cloned()
        .unwrap_or_else(|| format!("{}-seed{}", algorithm_name(&cfg), cfg.seed));
    let dir = Path::new(&cfg.output_dir).join(name);

    let run = run_training(&cfg).map_err(runtime)?;

    std::fs::create_dir_all(&dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
    write(&dir, RUNLOG, &run.log.to_jsonl())?;
    write(&dir, RESOLVED_CONFIG, &cfg.to_toml_string())?;
    write(&dir, export::SUMMARY, &export::summary_csv(&run.log))?;
    write(&dir, POLICY, &serde_json::to_string(&run.policy).map_err(runtime)?)?;

    if let Some(last) = run.log.records.last() {
        eprintln!(
            "{} steps: hard {:.3} easy {:.3} normal {:.3}, eval {}",
            run.log.records.len(),
            last.hard_frac,
            last.easy_frac,
            last.normal_frac,
            last.eval_accuracy.map(|a| format!("{a:.3}")).unwrap_or_else(|| "-".into()),
        );
    }
    println!("{}", dir.display());
    Ok(())
}

fn cmd_entropy_check(m: &ArgMatches) -> Result<(), Failure> {
    let cfg = resolve_config(m)?;
    let mode: EntropyMode = m.get_one::<String>("mode").expect("required").parse().map_err(validation)?;
    let threshold = *m.get_one::<f64>("threshold").expect("defaulted");

    let run = run_entropy_experiment(&cfg, mode).map_err(runtime)?;
    let h = run.log.series(|r| r.h_avg);
    let rho = entropy_trend(&run.log);
    match rho {
        Some(r) => println!("spearman {r:.6}"),
        None => println!("spearman undefined (entropy constant)"),
    }
    eprintln!(
        "H_avg {:.6} -> {:.6} over {} steps",
        h.first().copied().unwrap_or(f64::NAN),
        h.last().copied().unwrap_or(f64::NAN),
        h.len()
    );
    let holds = match (mode, rho) {
        (EntropyMode::Reward, Some(r)) => r >= threshold,
        (EntropyMode::Penalty, Some(r)) => r <= -threshold,
        (_, None) => false,
    };
    if holds {
        Ok(())
    } else {
        let direction = if mode == EntropyMode::Reward { "increase" } else { "decrease" };
        Err(Failure::Criterion(format!("entropy did not {direction} (|rho| threshold {threshold})")))
    }
}

fn cmd_oracle_compare(m: &ArgMatches) -> Result<(), Failure> {
    let count = *m.get_one::<usize>("snapshots").expect("defaulted");
    let max_size = *m.get_one::<usize>("max_size").expect("defaulted");
    let n_min = *m.get_one::<usize>("n_min").expect("defaulted");
    let seed = *m.get_one::<u64>("seed").expect("defaulted");
    let inject_fault = m.get_flag("inject_fault");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0usize;
    let mut selected = 0usize;
    for i in 0..count {
        // the first snapshot is always empty
        let snapshot = if i == 0 { Vec::new() } else { random_snapshot(&mut rng, max_size) };
        let mut fast = select_threshold(&snapshot, n_min);
        let slow = brute_force_threshold(&snapshot, n_min);
        if i == 0 {
            println!("empty snapshot: fast {:?}, brute force {:?}", fast.reason, slow.reason);
        }
        if inject_fault {
            for c in &mut fast.candidates {
                c.err += 1e-6;
            }
            fast.tau_star = fast.tau_star.map(|t| t + 1e-6);
        }
        if fast.tau_star != slow.tau_star || !reports_match(&fast, &slow, 1e-12) {
            mismatches += 1;
        }
        selected += usize::from(slow.reason == ThresholdReason::Selected);
    }
    println!("mismatches {mismatches} / {count} ({selected} snapshots with a selected threshold)");
    if mismatches == 0 {
        Ok(())
    } else {
        Err(Failure::Criterion(format!("{mismatches} snapshots disagree with the brute-force oracle")))
    }
}

fn cmd_export(m: &ArgMatches) -> Result<(), Failure> {
    let run_dir = m.get_one::<PathBuf>("run_dir").expect("required");
    let out = m.get_one::<PathBuf>("out").unwrap_or(run_dir);
    let path = run_dir.join(RUNLOG);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Failure::Validation(format!("cannot read run log {}: {e}", path.display())))?;
    let log = RunLog::from_jsonl(&text).map_err(validation)?;
    std::fs::create_dir_all(out).map_err(|e| runtime(format!("cannot create {}: {e}", out.display())))?;
    for written in export::write_exports(&log, out).map_err(runtime)? {
        println!("{}", written.display());
    }
    Ok(())
}

fn cli() -> Command {
    Command::new("dipo")
        .about("Perplexity-guided reward reallocation on a tabular policy simulator")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            config_args(Command::new("train").about("Run training and write a run directory")).arg(
                Arg::new("name")
                    .long("name")
                    .value_name("DIR")
                    .help("Run directory name under the output root [default: <algorithm>-seed<seed>]"),
            ),
        )
        .subcommand(
            config_args(
                Command::new("entropy-check")
                    .about("Train on the max-PPL pattern alone and test the entropy trend direction"),
            )
            .arg(
                Arg::new("mode")
                    .long("mode")
                    .required(true)
                    .value_parser(["reward", "penalty"])
                    .help("Reward or penalise the highest-PPL rollout of every group"),
            )
            .arg(
                Arg::new("threshold")
                    .long("threshold")
                    .value_name("RHO")
                    .default_value("0.9")
                    .value_parser(value_parser!(f64))
                    .help("Required |Spearman correlation| between H_avg and step"),
            ),
        )
        .subcommand(
            Command::new("oracle-compare")
                .about("Compare threshold selection against the brute-force oracle on random snapshots")
                .arg(
                    Arg::new("snapshots")
                        .long("snapshots")
                        .default_value("1000")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("max_size")
                        .long("max-size")
                        .default_value("512")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("n_min")
                        .long("n-min")
                        .default_value("20")
                        .value_parser(value_parser!(usize)),
                )
                .arg(Arg::new("seed").long("seed").default_value("0").value_parser(value_parser!(u64)))
                .arg(
                    Arg::new("inject_fault")
                        .long("inject-fault")
                        .action(ArgAction::SetTrue)
                        .hide(true)
                        .help("Perturb the fast results to check that the harness reports mismatches"),
                ),
        )
        .subcommand(
            Command::new("export")
                .about("Write plot CSVs from a run directory")
                .arg(
                    Arg::new("run_dir")
                        .required(true)
                        .value_name("RUN_DIR")
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("out")
                        .long("out")
                        .value_name("DIR")
                        .value_parser(value_parser!(PathBuf))
                        .help("Destination directory [default: RUN_DIR]"),
                ),
        )
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match matches.subcommand() {
        Some(("train", m)) => cmd_train(m),
        Some(("entropy-check", m)) => cmd_entropy_check(m),
        Some(("oracle-compare", m)) => cmd_oracle_compare(m),
        Some(("export", m)) => cmd_export(m),
        _ => unreachable!("subcommand required"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
