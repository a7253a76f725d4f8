//! An experiment sweep from a JSON config, as the `experiment` subcommand runs it.

use matmech::experiment::{run, ExperimentConfig};

const CONFIG: &str = r#"{
  "rows": [
    {"workload": {"kind": "allrange", "shape": [64]},
     "strategies": ["workload", "identity", "hierarchical", "wavelet", "lsa"]},
    {"workload": {"kind": "allrange", "shape": [8, 8]},
     "strategies": ["identity", "hierarchical", "wavelet", "lsa"]},
    {"workload": {"kind": "sampled-range", "shape": [64], "params": {"count": 200, "mode": "biased"}},
     "strategies": ["wavelet", "lsa"]},
    {"workload": {"kind": "allpredicate", "shape": [8]},
     "strategies": ["var-agnostic", "wavelet"]}
  ],
  "sampling": {"shape": [64], "sizes": [10, 100, 1000]},
  "seeds": [7, 8, 9]
}"#;

fn main() -> matmech::Result<()> {
    let config = ExperimentConfig::from_json(CONFIG)?;
    let out = run(&config, None)?;
    print!("{}", out.table_csv()?);
    println!();
    print!("{}", out.curves_csv()?);
    Ok(())
}
