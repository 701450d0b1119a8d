//! Process tomography of the Gouy channel and phase read-off versus shots.
//!
//! `cargo run --example process_tomography -- [phi1] [phi2]`

use qtomo::optics::gouy_channel;
use qtomo::povm::{search_sic, SicSearchConfig};
use qtomo::process::{dominant_kraus, extract_gouy_phases, reconstruct_process, simulate_process_data};
use qtomo::quantum::PureState;

fn main() -> qtomo::Result<()> {
    let mut args = std::env::args().skip(1);
    let phi1: f64 = args.next().map_or(0.92, |s| s.parse().expect("phi1"));
    let phi2: f64 = args.next().map_or(1.97, |s| s.parse().expect("phi2"));

    let frame = search_sic(&SicSearchConfig::new(6, 1))?;
    let probes: Vec<PureState> = frame.vectors.iter().cloned().map(PureState::new).collect::<qtomo::Result<_>>()?;
    let channel = gouy_channel(phi1, phi2);

    println!("{:>9} {:>8} {:>9} {:>9} {:>9}", "shots", "lambda1", "phi1", "phi2", "residual");
    for shots in [0u64, 1_000_000, 100_000, 10_000] {
        let data = simulate_process_data(&channel, &probes, &frame.povm, shots, 11)?;
        let chi = reconstruct_process(&data)?;
        let k = dominant_kraus(&chi);
        let g = extract_gouy_phases(&k.e1)?;
        println!(
            "{:>9} {:>8.4} {:>9.4} {:>9.4} {:>9.4}",
            if shots == 0 { "exact".to_string() } else { shots.to_string() },
            k.eigenvalue,
            g.phi1,
            g.phi2,
            chi.projection_residual
        );
    }
    Ok(())
}
