//! High-replica reference run for the self-dual law in two dimensions.
//!
//! Usage: `cargo run --release -p latthom --example duality_oracle -- [masked_replicas] [periodic_replicas] [out.json]`

use latthom::checks::masked_mean;
use latthom::corrector::Direction;
use latthom::environment::{sample_environment, ConductivityLaw, StreamKey};
use latthom::estimators::estimate_al_periodic;
use latthom::lattice::TorusLattice;
use rayon::prelude::*;

const HALF_WIDTH: usize = 32;
const SEED: u64 = 20_261_016;

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn main() -> latthom::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let masked_replicas: usize = args.first().map_or(1000, |s| s.parse().expect("replica count"));
    let periodic_replicas: usize = args.get(1).map_or(4000, |s| s.parse().expect("replica count"));
    let out = args.get(2).cloned().unwrap_or_else(|| "duality_oracle.json".into());
    let law = ConductivityLaw::default_study();

    let (masked, masked_se) = masked_mean(&law, HALF_WIDTH, masked_replicas, SEED)?;
    eprintln!("A_TL mean {masked:.6} se {masked_se:.2e}");

    let lat = TorusLattice::new(2, 2 * HALF_WIDTH)?;
    let diag = Direction::normalized(vec![1.0, 1.0])?;
    let rows = (0..periodic_replicas as u64)
        .into_par_iter()
        .map(|r| {
            let a = sample_environment(&law, &lat, StreamKey::environment(SEED + 1, r));
            let axx = estimate_al_periodic(&a, &Direction::axis(2, 0))?.value;
            let ayy = estimate_al_periodic(&a, &Direction::axis(2, 1))?.value;
            let axy = estimate_al_periodic(&a, &diag)?.value - 0.5 * (axx + ayy);
            Ok((axx, 0.5 * (axx * ayy - axy * axy).ln()))
        })
        .collect::<latthom::Result<Vec<_>>>()?;
    let (periodic, periodic_se) = mean_se(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
    let (log_det, log_det_se) = mean_se(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    eprintln!("A_L# mean {periodic:.6} se {periodic_se:.2e}; half log det {log_det:.3e} se {log_det_se:.2e}");

    let record = serde_json::json!({
        "law": law,
        "seed": SEED,
        "masked": {
            "half_width": HALF_WIDTH,
            "time": (HALF_WIDTH * HALF_WIDTH) as f64,
            "replicas": masked_replicas,
            "mean": masked,
            "std_error": masked_se,
        },
        "periodic": {
            "side": 2 * HALF_WIDTH,
            "replicas": periodic_replicas,
            "mean": periodic,
            "std_error": periodic_se,
            "half_log_det_mean": log_det,
            "half_log_det_std_error": log_det_se,
        },
    });
    std::fs::write(&out, serde_json::to_string_pretty(&record)? + "\n")?;
    Ok(())
}
