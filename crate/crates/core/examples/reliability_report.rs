//! Full reliability report: UQ correlations, fitted schemes, a threshold
//! sweep and a calibration-metric ranking over several models.
//!
//! ```text
//! cargo run --release --example reliability_report -- out/
//! ```

use std::path::PathBuf;

use detreli::harness::EvalSettings;
use detreli::report::{build_report, ReportInputs};
use detreli::synth::{generate, PositiveCalibration, SynthConfig};
use detreli::uq::UqConfig;

fn main() -> detreli::Result<()> {
    let base = SynthConfig { num_images: 100, ..Default::default() };
    let val = generate(&SynthConfig { seed: 1, ..base.clone() })?.dataset;
    let test = generate(&SynthConfig { seed: 2, ..base.clone() })?.dataset;
    // Same images, differently calibrated models.
    let models = [0.0, 0.1, 0.2, 0.3]
        .into_iter()
        .map(|bias| {
            let positive_calibration = PositiveCalibration::Overconfident { bias };
            generate(&SynthConfig { seed: 2, positive_calibration, ..base.clone() }).map(|o| o.dataset)
        })
        .collect::<detreli::Result<Vec<_>>>()?;

    let settings = EvalSettings::default();
    let report = build_report(&ReportInputs {
        test: &test,
        validation: Some(&val),
        models: &models,
        processors: None,
        settings: &settings,
        uq: UqConfig { lambda: 5.0, ..Default::default() },
    })?;
    println!("{}", report.to_markdown());

    if let Some(dir) = std::env::args().nth(1).map(PathBuf::from) {
        report.write_dir(&dir, serde_json::Map::new())?;
        println!("written to {}", dir.display());
    }
    Ok(())
}
