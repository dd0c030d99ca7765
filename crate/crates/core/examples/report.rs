//! Runs an experiment configuration through the batch layer and prints the
//! canonical JSON report. Pass a config path, or get the geometric check.
use nonlocal_korn::cli::{canonical_json, execute, ExperimentConfig};

fn main() {
    let text = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(path).expect("readable config"),
        None => r#"{"command": "geom-check", "params": {"m": 0.59, "eta": 1.0, "n_pairs": 100000}, "seed": 7}"#.to_string(),
    };
    let cfg: ExperimentConfig = serde_json::from_str(&text).expect("valid config");
    let outcome = execute(&cfg);
    println!("{}", canonical_json(&outcome.report));
    eprintln!("status {:?}, exit code {}", outcome.status, outcome.status.exit_code());
}
