//! Test-set Bhattacharyya fidelity against the fraction of training data.
//!
//! `cargo run --release --example learning_curve -- [pool] [test] [epochs] [repeats] [curve.csv]`
//!
//! The full protocol is pool 8500, test 2000, 200 epochs, 5 repeats.

use std::path::PathBuf;

use qtomo::experiments::{learning_curve, write_curve_csv, LearningCurveConfig, Scenario};
use qtomo::povm::{search_sic, SicSearchConfig};
use qtomo::sampler::{generate_dataset, DatasetConfig};

fn main() -> qtomo::Result<()> {
    let mut args = std::env::args().skip(1);
    let pool: usize = args.next().map_or(850, |s| s.parse().expect("pool"));
    let test: usize = args.next().map_or(200, |s| s.parse().expect("test"));
    let epochs: usize = args.next().map_or(50, |s| s.parse().expect("epochs"));
    let repeats: usize = args.next().map_or(2, |s| s.parse().expect("repeats"));
    let out = args.next().map(PathBuf::from);

    let ideal = search_sic(&SicSearchConfig::new(6, 1))?.povm;
    let data = generate_dataset(&DatasetConfig::new(6, pool + test, 10_000, Scenario::Gouy.spam(), 9), &ideal)?;
    let parts = data.split(&[pool, test])?;
    let cfg = LearningCurveConfig { epochs, repeats, ..LearningCurveConfig::standard(4) };
    let rows = learning_curve(&parts[0], &parts[1], &cfg)?;
    println!("{:>5} {:>7} {:>9} {:>9} {:>8}", "eta", "train", "KL", "B", "std B");
    for r in &rows {
        println!(
            "{:>5.1} {:>7} {:>9.5} {:>9.5} {:>8.5}",
            r.fraction, r.n_train, r.mean_kl, r.mean_bhattacharyya, r.std_bhattacharyya
        );
    }
    if let Some(p) = out {
        write_curve_csv(&p, &rows)?;
    }
    Ok(())
}
