//! Fitting threshold, top-k and NMS on validation data by minimizing OCE,
//! then checking the fitted processors on held-out images.
//!
//! ```text
//! cargo run --release --example postprocess_selection
//! ```

use detreli::calib::{oce, OceConfig};
use detreli::postprocess::{fit_optimal, Family, GridSpec};
use detreli::synth::{generate, SynthConfig};

fn main() -> detreli::Result<()> {
    let val = generate(&SynthConfig { seed: 1, ..Default::default() })?.dataset;
    let test = generate(&SynthConfig { seed: 2, ..Default::default() })?.dataset;
    let (grid, cfg) = (GridSpec::default(), OceConfig::default());

    println!("{:<10} {:>7} {:>9} {:>9}", "family", "param", "val OCE", "test OCE");
    for family in [Family::Threshold, Family::TopK, Family::Nms] {
        let proc = fit_optimal(family, &val, &grid, &cfg)?;
        let val_oce = proc.fit.as_ref().map_or(f64::NAN, |f| f.value);
        let test_oce = oce(&test, &proc.apply_dataset(&test), &cfg)?.value;
        println!("{:<10} {:>7} {val_oce:>9.4} {test_oce:>9.4}", family.name(), proc.kind.param());
    }
    Ok(())
}
