//! Object-level calibration error next to the binned detection ECEs.
//!
//! Sweeping a confidence threshold shows why the choice of metric matters:
//! the binned errors keep improving as the threshold removes almost every
//! detection, while OCE charges for the objects left uncovered.
//!
//! ```text
//! cargo run --release --example calibration_metrics
//! ```

use detreli::calib::{d_ece, la_ece0, oce, BinningConfig, OceConfig, TpMatchConfig};
use detreli::matching::{optimal_positive_subset, MatchingCostConfig};
use detreli::postprocess::PostProcessor;
use detreli::synth::{generate, SynthConfig};

fn main() -> detreli::Result<()> {
    let ds = generate(&SynthConfig::default())?.dataset;
    let (oce_cfg, bins, tp) = (OceConfig::default(), BinningConfig::default(), TpMatchConfig::default());

    let positives = optimal_positive_subset(&ds, &MatchingCostConfig::default())?;
    let report = oce(&ds, &positives, &oce_cfg)?;
    println!("OCE on optimal positives: {:.4}", report.value);
    println!("breakdown (true-class probability bins):");
    report.write_csv(std::io::stdout())?;

    println!("\n{:>5} {:>8} {:>8} {:>8} {:>7}", "t", "OCE", "D-ECE", "LaECE0", "kept");
    for t in [0.05, 0.2, 0.35, 0.5, 0.65, 0.8, 0.95] {
        let subset = PostProcessor::threshold(t)?.apply_dataset(&ds);
        println!(
            "{t:>5.2} {:>8.4} {:>8.4} {:>8.4} {:>7}",
            oce(&ds, &subset, &oce_cfg)?.value,
            d_ece(&ds, &subset, &bins, &tp)?.value,
            la_ece0(&ds, &subset, &bins)?.value,
            subset.len()
        );
    }
    Ok(())
}
