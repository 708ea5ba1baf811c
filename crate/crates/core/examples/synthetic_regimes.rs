//! Seeded synthetic detectors with controllable calibration.
//!
//! ```text
//! cargo run --release --example synthetic_regimes
//! ```

use detreli::harness::pcc;
use detreli::matching::{optimal_split, MatchingCostConfig};
use detreli::synth::{generate, NegativeModel, PositiveCalibration, SynthConfig};
use detreli::uq::{conf_minus, conf_plus};

fn main() -> detreli::Result<()> {
    let regimes = [
        ("calibrated, coupled negatives", PositiveCalibration::Calibrated { noise: 0.05 }, NegativeModel::InverseCoupled { strength: 1.0 }),
        ("overconfident, flat negatives", PositiveCalibration::Overconfident { bias: 0.2 }, NegativeModel::LowFlat { mean: 0.05 }),
        ("perfect", PositiveCalibration::Perfect, NegativeModel::LowFlat { mean: 0.02 }),
    ];
    let cost = MatchingCostConfig::default();
    for (name, positive_calibration, negative_model) in regimes {
        let out = generate(&SynthConfig { positive_calibration, negative_model, ..Default::default() })?;
        let (mut plus, mut minus) = (Vec::new(), Vec::new());
        for im in &out.dataset.images {
            let split = optimal_split(im, &cost)?;
            plus.push(conf_plus(split.positives.iter().map(|&q| &im.detections[q])).value);
            minus.push(conf_minus(split.negatives.iter().map(|&q| &im.detections[q])).value);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!("{name}");
        println!("  mean Conf+ {:.3}, mean Conf- {:.3}", mean(&plus), mean(&minus));
        // Undefined when a column is constant.
        let show = |r: detreli::Result<f64>| r.map_or("undefined".to_string(), |v| format!("{v:+.3}"));
        println!("  PCC(difficulty, Conf+) {}", show(pcc(&out.difficulty, &plus)));
        println!("  PCC(difficulty, Conf-) {}", show(pcc(&out.difficulty, &minus)));
    }
    Ok(())
}
