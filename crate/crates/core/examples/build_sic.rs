//! Numerically construct a SIC POVM and report its quality.
//!
//! `cargo run --example build_sic -- [dim] [seed]`

use std::time::Instant;

use qtomo::povm::{search_sic, verify_ic, SicSearchConfig};

fn main() -> qtomo::Result<()> {
    let mut args = std::env::args().skip(1);
    let dim: usize = args.next().map_or(6, |s| s.parse().expect("dim"));
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed"));

    let start = Instant::now();
    let frame = search_sic(&SicSearchConfig::new(dim, seed))?;
    let ic = verify_ic(&frame.povm);
    println!("dimension          {dim}");
    println!("winning restart    {}", frame.restart);
    println!("max deviation      {:.3e}", frame.max_deviation);
    println!("frame potential    {:.3e} -> {:.3e}", frame.initial_potential, frame.final_potential);
    println!("completeness       {:.3e}", frame.povm.completeness_residual());
    println!("IC rank            {} / {}", ic.rank, dim.pow(2));
    println!("elapsed            {:.2?}", start.elapsed());
    Ok(())
}
