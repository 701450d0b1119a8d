//! Maximum-likelihood reconstruction of one random state at several shot counts.
//!
//! `cargo run --example reconstruct_state -- [seed]`

use qtomo::mle::{mle_density, mle_pure, MleConfig};
use qtomo::povm::{search_sic, SicSearchConfig};
use qtomo::quantum::{born_probabilities, fidelity, haar_random_pure, purity};
use qtomo::rng::seeded;
use qtomo::sampler::sample_counts;

fn main() -> qtomo::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(5, |s| s.parse().expect("seed"));
    let povm = search_sic(&SicSearchConfig::new(6, 1))?.povm;
    let mut rng = seeded(seed);
    let psi = haar_random_pure(6, &mut rng)?;
    let probs = born_probabilities(&psi.density(), &povm)?;
    let cfg = MleConfig::default();

    println!("{:>8} {:>10} {:>10} {:>10} {:>6}", "shots", "fidelity", "purity", "pure fid", "iters");
    for shots in [100u64, 1_000, 10_000, 100_000] {
        let counts = sample_counts(&probs, shots, &mut rng);
        let f: Vec<f64> = counts.iter().map(|&c| c as f64 / shots as f64).collect();
        let mixed = mle_density(&f, &povm, &cfg)?;
        let pure = mle_pure(&f, &povm, &cfg)?;
        println!(
            "{shots:>8} {:>10.5} {:>10.5} {:>10.5} {:>6}",
            fidelity(&psi, &mixed.rho_hat)?,
            purity(&mixed.rho_hat),
            psi.overlap(&pure.state).norm_sqr(),
            mixed.iterations_used
        );
    }
    Ok(())
}
