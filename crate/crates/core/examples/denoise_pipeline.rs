//! Full denoising pipeline for one SPAM scenario.
//!
//! `cargo run --release --example denoise_pipeline -- [scenario] [scale] [seed] [shots] [out_dir]`
//!
//! `scale` divides the 10 500-state dataset and its split (1 = full size);
//! `shots` 0 selects exact probabilities.

use std::path::PathBuf;
use std::time::Instant;

use qtomo::experiments::{run_pipeline, PipelineConfig, Scenario};

fn main() -> qtomo::Result<()> {
    let mut args = std::env::args().skip(1);
    let scenario: Scenario = args.next().as_deref().unwrap_or("gouy").parse()?;
    let scale: usize = args.next().map_or(1, |s| s.parse().expect("scale"));
    let seed: u64 = args.next().map_or(2024, |s| s.parse().expect("seed"));
    let shots: u64 = args.next().map_or(10_000, |s| s.parse().expect("shots"));

    let mut cfg = PipelineConfig::paper_scale(scenario, seed);
    let (a, b, c) = cfg.train.split;
    cfg.train.split = (a / scale, b / scale, c / scale);
    cfg.n_states = (a + b + c) / scale;
    cfg.shots = shots;
    cfg.out_dir = args.next().map(PathBuf::from);

    let start = Instant::now();
    let out = run_pipeline(&cfg)?;
    let r = &out.report;
    println!("scenario           {}", r.scenario);
    println!("states             {} (split {:?})", r.n_states, r.split);
    println!("epochs             best {} stopped {}", r.best_epoch, r.stopped_epoch);
    println!("bhattacharyya      raw {:.4}  nn {:.4}", r.bhattacharyya_raw, r.bhattacharyya_nn);
    if let Some(g) = &r.calibration {
        println!("calibrated gouy    {:.4} {:.4}", g.phi1, g.phi2);
    }
    for (name, s) in &r.evaluation.summary {
        println!("{name:<18} {:.4} ± {:.4}", s.mean, s.std);
    }
    println!("elapsed            {:.1?}", start.elapsed());
    Ok(())
}
