use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pentapulse::adiabatic::Verdict;
use pentapulse::config::{parse_config, run_scenario, Experiment, ScenarioConfig};
use pentapulse::Error;

#[derive(Parser)]
#[command(
    name = "pentapulse",
    about = "Simulator for five-level atoms and 1-D media driven by four laser pulses",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario configuration file (JSON).
    #[arg(long, global = true, default_value = "scenario.json")]
    config: PathBuf,
    /// Output directory for CSV/JSON artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Fan out over a parameter: <json-pointer>:<start>:<stop>:<count>.
    #[arg(long, global = true)]
    sweep: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, Subcommand)]
enum Command {
    /// Track eigenvalues, mixing angles, and dressed vectors over time.
    Eigen,
    /// Population transfer (forward from |1> or, per config, reverse).
    Transfer,
    /// Propagate the four pulses through the medium.
    Propagate,
    /// Write a probe pulse into the medium coherence and read it back.
    Store,
    /// Sequential storage of two pulses with retrieval in both orders.
    DoubleStore,
    /// Evaluate adiabaticity margins; exit 2 when not adiabatic.
    CheckAdiabatic,
}

fn command_accepts(cmd: Command, experiment: Experiment) -> bool {
    matches!(
        (cmd, experiment),
        (Command::Eigen, Experiment::Eigen)
            | (Command::Transfer, Experiment::Transfer)
            | (Command::Transfer, Experiment::BTransfer)
            | (Command::Propagate, Experiment::Propagate)
            | (Command::Store, Experiment::Store)
            | (Command::DoubleStore, Experiment::DoubleStore)
            | (Command::CheckAdiabatic, Experiment::CheckAdiabatic)
    )
}

fn parse_sweep(spec: &str) -> Result<(String, f64, f64, usize), Error> {
    let parts: Vec<&str> = spec.rsplitn(4, ':').collect();
    if parts.len() != 4 {
        return Err(Error::Config(vec![format!(
            "sweep spec '{spec}' must be <json-pointer>:<start>:<stop>:<count>"
        )]));
    }
    let pointer = parts[3].to_string();
    let start: f64 = parts[2]
        .parse()
        .map_err(|_| Error::Config(vec![format!("sweep start '{}' is not a number", parts[2])]))?;
    let stop: f64 = parts[1]
        .parse()
        .map_err(|_| Error::Config(vec![format!("sweep stop '{}' is not a number", parts[1])]))?;
    let count: usize = parts[0]
        .parse()
        .map_err(|_| Error::Config(vec![format!("sweep count '{}' is not an integer", parts[0])]))?;
    if count < 1 {
        return Err(Error::Config(vec!["sweep count must be >= 1".to_string()]));
    }
    Ok((pointer, start, stop, count))
}

fn run_single(config: &ScenarioConfig, out: &std::path::Path, cmd: Command) -> Result<i32, Error> {
    let outcome = run_scenario(config, out)?;
    if cmd == Command::CheckAdiabatic {
        print!("{}", pentapulse::output::canonical_json(&outcome.summary));
        let adiabatic = outcome.verdict == Some(Verdict::Adiabatic);
        return Ok(if adiabatic { 0 } else { 2 });
    }
    println!("wrote artifacts to {}", out.display());
    Ok(0)
}

fn run(cli: &Cli) -> Result<i32, Error> {
    let text = fs::read_to_string(&cli.config)?;
    let config = parse_config(&text)?;
    if !command_accepts(cli.command, config.experiment) {
        return Err(Error::Config(vec![format!(
            "config experiment {:?} does not match this subcommand",
            config.experiment
        )]));
    }

    let Some(sweep) = &cli.sweep else {
        return run_single(&config, &cli.out, cli.command);
    };

    let (pointer, start, stop, count) = parse_sweep(sweep)?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    if raw.pointer(&pointer).and_then(|v| v.as_f64()).is_none() {
        return Err(Error::Config(vec![format!(
            "sweep pointer '{pointer}' does not address a number in the config"
        )]));
    }

    let mut configs = Vec::with_capacity(count);
    for k in 0..count {
        let value = if count == 1 {
            start
        } else {
            start + (stop - start) * k as f64 / (count - 1) as f64
        };
        let mut doc = raw.clone();
        *doc.pointer_mut(&pointer).expect("checked above") = serde_json::json!(value);
        let cfg: ScenarioConfig = serde_json::from_value(doc)
            .map_err(|e| Error::Config(vec![format!("sweep point {k}: {e}")]))?;
        configs.push((k, value, cfg));
    }

    let mut worst = 0;
    std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|(k, value, cfg)| {
                let dir = cli.out.join(format!("sweep_{k:03}"));
                let pointer = pointer.as_str();
                scope.spawn(move || {
                    let code = match run_scenario(cfg, &dir) {
                        Ok(_) => 0,
                        Err(e) => {
                            eprintln!("sweep point {k} ({pointer} = {value}): {e}");
                            e.exit_code()
                        }
                    };
                    (*k, code)
                })
            })
            .collect();
        for h in handles {
            let (k, code) = h.join().expect("sweep worker panicked");
            if code != 0 {
                worst = worst.max(code);
            }
            println!("sweep point {k}: exit {code}");
        }
    });
    Ok(worst)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
