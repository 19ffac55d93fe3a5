//! Rescales the base SNR ladder so that E(c) at the reference distance
//! equals a target rate, and prints thresholds ready for `[rates]`.
//!
//! ```text
//! cargo run --release --example calibrate_thresholds -- 7.5e6
//! ```

use cft_core::channel::{calibrate_threshold_scale, expected_rate, RateTable};
use cft_core::config::ExperimentConfig;

const BASE_THRESHOLDS: [f64; 4] = [1.6, 3.2, 12.6, 25.0];
const REFERENCE_DISTANCE_M: f64 = 225.0;

fn main() {
    let target: f64 = match std::env::args().nth(1).map(|a| a.parse()) {
        Some(Ok(t)) => t,
        _ => {
            eprintln!("usage: calibrate_thresholds <target E(c) in bit/s>");
            std::process::exit(1);
        }
    };
    let cfg = ExperimentConfig::default_config();
    let base =
        RateTable::new(cfg.rates.rates().to_vec(), BASE_THRESHOLDS.to_vec()).expect("valid ladder");
    let scale = calibrate_threshold_scale(REFERENCE_DISTANCE_M, &cfg.channel, &base, target)
        .expect("target reachable");
    let table = base.with_scaled_thresholds(scale).expect("positive scale");
    let e = expected_rate(REFERENCE_DISTANCE_M, &cfg.channel, &table).expect("valid distance");
    println!("scale = {scale}");
    println!("thresholds = {:?}", table.thresholds());
    println!("E(c) at {REFERENCE_DISTANCE_M} m = {e} bit/s");
}
