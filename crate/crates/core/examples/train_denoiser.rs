//! Train the denoising network on Gouy-corrupted data and compare scores.
//!
//! `cargo run --release --example train_denoiser -- [states] [max_epochs] [history.csv]`

use std::path::PathBuf;

use qtomo::denoiser::{evaluate_loss, predict_batch, train, Samples, TrainConfig};
use qtomo::experiments::{bhattacharyya_raw, Scenario};
use qtomo::povm::{search_sic, SicSearchConfig};
use qtomo::sampler::{generate_dataset, DatasetConfig};

fn main() -> qtomo::Result<()> {
    let mut args = std::env::args().skip(1);
    let states: usize = args.next().map_or(1000, |s| s.parse().expect("states"));
    let max_epochs: usize = args.next().map_or(300, |s| s.parse().expect("max_epochs"));
    let history = args.next().map(PathBuf::from);

    let ideal = search_sic(&SicSearchConfig::new(6, 1))?.povm;
    let data = generate_dataset(&DatasetConfig::new(6, states, 10_000, Scenario::Gouy.spam(), 3), &ideal)?;
    let n_train = states * 2 / 3;
    let n_val = states / 6;
    let parts = data.split(&[n_train, n_val, states - n_train - n_val])?;
    let (tr, va, te) = (Samples::from_dataset(&parts[0])?, Samples::from_dataset(&parts[1])?, &parts[2]);

    let cfg = TrainConfig { split: (n_train, n_val, states - n_train - n_val), max_epochs, ..TrainConfig::default() };
    let (params, hist) = train(&tr, Some(&va), &cfg)?;
    println!("stopped after epoch {} (best {}), validation KL {:.5}", hist.stopped_epoch, hist.best_epoch, hist.best_val_loss().unwrap_or(f64::NAN));
    println!("test KL {:.5}", evaluate_loss(&params, &Samples::from_dataset(te)?)?);

    let inputs: Vec<Vec<f64>> = te.records.iter().map(|r| r.noisy_freqs.clone()).collect();
    let preds = predict_batch(&params, &inputs)?;
    let (mut b_raw, mut b_nn) = (0.0, 0.0);
    for ((r, x), p) in te.records.iter().zip(&inputs).zip(&preds) {
        b_raw += bhattacharyya_raw(r.ideal_probs.values(), x)?;
        b_nn += bhattacharyya_raw(r.ideal_probs.values(), p.values())?;
    }
    let n = te.len() as f64;
    println!("test Bhattacharyya: measured {:.4}, denoised {:.4}", b_raw / n, b_nn / n);
    if let Some(p) = history {
        hist.write_csv(&p)?;
    }
    Ok(())
}
