//! Simulate a small tomography dataset and look at the shot noise.
//!
//! `cargo run --example simulate_dataset -- [spam] [states] [shots] [out.jsonl]`

use std::path::PathBuf;

use qtomo::experiments::{bhattacharyya, Scenario};
use qtomo::povm::{search_sic, SicSearchConfig};
use qtomo::sampler::{generate_dataset, DatasetConfig};

fn main() -> qtomo::Result<()> {
    let mut args = std::env::args().skip(1);
    let scenario: Scenario = args.next().as_deref().unwrap_or("gouy").parse()?;
    let states: usize = args.next().map_or(200, |s| s.parse().expect("states"));
    let shots: u64 = args.next().map_or(10_000, |s| s.parse().expect("shots"));
    let out = args.next().map(PathBuf::from);

    let ideal = search_sic(&SicSearchConfig::new(6, 1))?.povm;
    let data = generate_dataset(&DatasetConfig::new(6, states, shots, scenario.spam(), 7), &ideal)?;

    let mut b = 0.0;
    for r in &data.records {
        b += bhattacharyya(&r.ideal_probs, &qtomo::quantum::ProbDistribution::new(r.noisy_freqs.clone())?)?;
    }
    println!("{} records, {shots} shots, scenario {scenario}", data.len());
    println!("mean Bhattacharyya(ideal, measured) {:.5}", b / data.len() as f64);
    let first = &data.records[0];
    println!("record 0 ideal    {:?}", &first.ideal_probs.values()[..4]);
    println!("record 0 measured {:?}", &first.noisy_freqs[..4]);
    if let Some(p) = out {
        data.save_jsonl(&p)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}
