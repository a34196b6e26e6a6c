use clap::Parser;
use mvsim::{run, validate_config, CliError};
use serde_json::{Map, Value};
use std::path::PathBuf;
use std::process::ExitCode;

/// Interacting particle simulations of McKean–Vlasov SDEs.
///
/// Settings come from an optional JSON config (or a previous run's
/// manifest.json); flags override the file.
#[derive(Debug, Parser)]
#[command(name = "mvsim", version, allow_negative_numbers = true)]
struct Args {
    /// simulate, histogram, strong-rate, weak-rate, rate-study, moments,
    /// variations-check or count-multiindex
    command: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Registry model name
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    d: Option<i64>,
    /// Comma-separated, strictly increasing
    #[arg(long, value_delimiter = ',')]
    d_list: Option<Vec<i64>>,
    #[arg(long)]
    n_steps: Option<i64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<i64>,
    #[arg(long)]
    observable: Option<String>,
    #[arg(long, short = 'o')]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    n_bins: Option<i64>,
    #[arg(long)]
    p: Option<i64>,
    #[arg(long)]
    n: Option<i64>,
    /// Worker threads; results do not depend on it
    #[arg(long, env = "MVSIM_THREADS")]
    threads: Option<usize>,
}

fn raw_config(args: &Args) -> Result<Value, CliError> {
    let mut obj = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Config {
                path: String::new(),
                message: format!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column()),
            })?;
            // a manifest carries the config it ran with
            match value {
                Value::Object(mut m) if m.contains_key("config") && m.contains_key("rng") => m["config"].take(),
                other => other,
            }
        }
        None => Value::Object(Map::new()),
    };
    let map = obj.as_object_mut().ok_or_else(|| CliError::Config {
        path: String::new(),
        message: "config must be a JSON object".into(),
    })?;
    let mut set = |key: &str, v: Option<Value>| {
        if let Some(v) = v {
            map.insert(key.into(), v);
        }
    };
    set("command", args.command.clone().map(Value::from));
    set("model", args.model.clone().map(Value::from));
    set("d", args.d.map(Value::from));
    set("d_list", args.d_list.clone().map(Value::from));
    set("n_steps", args.n_steps.map(Value::from));
    set("t_end", args.t_end.map(Value::from));
    set("seed", args.seed.map(Value::from));
    set("replicates", args.replicates.map(Value::from));
    set("observable", args.observable.clone().map(Value::from));
    set("output_dir", args.output_dir.as_ref().map(|p| Value::from(p.display().to_string())));
    set("n_bins", args.n_bins.map(Value::from));
    set("p", args.p.map(Value::from));
    set("n", args.n.map(Value::from));
    Ok(obj)
}

fn main_inner(args: &Args) -> Result<(), CliError> {
    let cfg = validate_config(&raw_config(args)?)?;
    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config {
                path: "--threads".into(),
                message: e.to_string(),
            })?;
    }
    let outcome = run(&cfg)?;
    println!(
        "{}",
        serde_json::json!({"output_dir": outcome.output_dir, "files": outcome.files, "summary": outcome.summary})
    );
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) if e.use_stderr() => {
            let err = CliError::Config {
                path: String::new(),
                message: e.kind().to_string(),
            };
            eprintln!("{e}");
            eprintln!("{}", err.to_json());
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match main_inner(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
