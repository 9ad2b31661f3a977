use panel_cli::commands::{self, CliError};
use panel_cli::config::ScenarioConfig;
use std::path::PathBuf;
use std::process::ExitCode;

const USAGE: &str = "\
panel — spectral-Galerkin panel simulator with flow-induced delay forcing

USAGE:
    panel <COMMAND> [OPTIONS]

COMMANDS:
    simulate    time-integrate a scenario and write its series
    quasi       co-evolve perturbed pairs and fit the quasi-stability ansatz
    defect      completeness defects of node/mode/average functional families
    determine   determining-functional decay experiment
    dimension   correlation-dimension estimate of the post-transient states
    flowtrace   flow potential samples and the flow-to-plate reduction check
    check       run the built-in invariant battery

OPTIONS:
    --config PATH    scenario configuration (required except for `check`)
    --out DIR        output directory (default panel_runs/<command>)
    --threads N      worker threads for kernel assembly (default 1)
    --seed N         override the experiment seed
    --resume PATH    (simulate) continue from a checkpoint file

Exit codes: 0 pass, 1 experiment-level fail, 2 configuration error,
3 numerical abort. The cache directory is taken from PANEL_CACHE_DIR.
";

struct Args {
    command: String,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    threads: usize,
    seed: Option<u64>,
    resume: Option<PathBuf>,
}

fn parse_args() -> Result<Args, String> {
    let mut argv = std::env::args().skip(1);
    let command = argv.next().ok_or_else(|| USAGE.to_string())?;
    let mut args = Args {
        command,
        config: None,
        out: None,
        threads: 1,
        seed: None,
        resume: None,
    };
    while let Some(flag) = argv.next() {
        let mut value = |name: &str| {
            argv.next()
                .ok_or_else(|| format!("flag {name} needs a value"))
        };
        match flag.as_str() {
            "--config" => args.config = Some(PathBuf::from(value("--config")?)),
            "--out" => args.out = Some(PathBuf::from(value("--out")?)),
            "--threads" => {
                args.threads = value("--threads")?
                    .parse()
                    .map_err(|_| "--threads needs an integer".to_string())?
            }
            "--seed" => {
                args.seed = Some(
                    value("--seed")?
                        .parse()
                        .map_err(|_| "--seed needs an integer".to_string())?,
                )
            }
            "--resume" => args.resume = Some(PathBuf::from(value("--resume")?)),
            "--help" | "-h" => return Err(USAGE.to_string()),
            other => return Err(format!("unknown flag '{other}'\n\n{USAGE}")),
        }
    }
    Ok(args)
}

fn load_config(args: &Args) -> Result<ScenarioConfig, CliError> {
    let path = args.config.as_ref().ok_or_else(|| {
        CliError::Config(panel_cli::config::ConfigError {
            problems: vec!["--config PATH is required for this command".into()],
        })
    })?;
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("read {}: {e}", path.display())))?;
    ScenarioConfig::parse(&raw).map_err(CliError::Config)
}

fn main() -> ExitCode {
    let args = match parse_args() {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("{msg}");
            return ExitCode::from(2);
        }
    };
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("panel_runs").join(&args.command));
    if args.command == "check" {
        let run = panel_cli::checks::run_battery();
        for (pass, line) in &run.lines {
            println!("{} {line}", if *pass { "PASS" } else { "FAIL" });
        }
        let n_fail = run.lines.iter().filter(|(p, _)| !p).count();
        println!(
            "{} of {} checks passed",
            run.lines.len() - n_fail,
            run.lines.len()
        );
        return if run.all_pass() {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(1)
        };
    }
    let result = (|| -> Result<bool, CliError> {
        let cfg = load_config(&args)?;
        match args.command.as_str() {
            "simulate" => {
                commands::cmd_simulate(&cfg, &out_dir, args.threads, args.resume.as_deref())
            }
            "quasi" => commands::cmd_quasi(&cfg, &out_dir, args.threads, args.seed),
            "defect" => commands::cmd_defect(&cfg, &out_dir, args.threads),
            "determine" => commands::cmd_determine(&cfg, &out_dir, args.threads, args.seed),
            "dimension" => commands::cmd_dimension(&cfg, &out_dir, args.threads),
            "flowtrace" => commands::cmd_flowtrace(&cfg, &out_dir, args.threads),
            other => Err(CliError::Io(format!(
                "unknown command '{other}'\n\n{USAGE}"
            ))),
        }
    })();
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("experiment completed with failing criteria (see report files)");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
