//! Crosstalk matrices and similarity for each SPAM model.
//!
//! `cargo run --example crosstalk -- [csv_dir]`

use std::path::PathBuf;

use qtomo::optics::{crosstalk_matrix, overlap_matrix, default_modes, similarity, DetectionModel, SpamModel};
use qtomo::povm::{search_sic, SicSearchConfig};
use qtomo::quantum::PureState;

fn main() -> qtomo::Result<()> {
    let csv_dir = std::env::args().nth(1).map(PathBuf::from);
    let frame = search_sic(&SicSearchConfig::new(6, 1))?;
    let probes: Vec<PureState> = frame.vectors.iter().cloned().map(PureState::new).collect::<qtomo::Result<_>>()?;

    let o = overlap_matrix(&default_modes(), &DetectionModel::default())?;
    println!("SMF overlap diagonal (w = 1, w_f = 2):");
    println!("  {:?}", (0..6).map(|k| format!("{:.4}", o[(k, k)].re)).collect::<Vec<_>>());

    let ideal = crosstalk_matrix(&probes, &SpamModel::None.effective_measurement(&frame.povm)?)?;
    let models = [
        ("ideal", SpamModel::None),
        ("gouy", SpamModel::reference_gouy()),
        ("smf", SpamModel::Smf { w: 1.0, w_f: 2.0 }),
        ("gouy+smf", SpamModel::reference_both()),
    ];
    println!("{:<10} {:>12} {:>12}", "model", "similarity", "off-diag");
    for (name, spam) in models {
        let p = crosstalk_matrix(&probes, &spam.effective_measurement(&frame.povm)?)?;
        println!("{name:<10} {:>12.5} {:>12.5}", similarity(&p, &ideal)?, p.off_diagonal_mass());
        if let Some(dir) = &csv_dir {
            std::fs::create_dir_all(dir)?;
            p.write_csv(&dir.join(format!("crosstalk_{}.csv", name.replace('+', "_"))))?;
        }
    }
    Ok(())
}
