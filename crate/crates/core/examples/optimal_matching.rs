//! Splitting a fixed-size query set into optimal positives and negatives.
//!
//! ```text
//! cargo run --example optimal_matching
//! ```

use detreli::matching::{optimal_split, MatchingCostConfig};
use detreli::synth::{generate, SynthConfig};

fn main() -> detreli::Result<()> {
    let cfg = SynthConfig {
        num_images: 3,
        num_queries: 20,
        ..Default::default()
    };
    let out = generate(&cfg)?;
    let cost = MatchingCostConfig::default();
    for (im, intended) in out.dataset.images.iter().zip(&out.intended_positives) {
        let split = optimal_split(im, &cost)?;
        println!("image {}: {} objects, {} queries", im.image_id, im.ground_truth.len(), im.detections.len());
        for p in &split.pairs {
            let det = &im.detections[p.query_index];
            println!(
                "  object {} -> query {:>2}  cost {:>7.3}  conf {:.3}",
                p.object_index,
                p.query_index,
                p.cost,
                det.confidence()
            );
        }
        // A planted positive can lose to a near-duplicate when it names the
        // wrong class or its box drifted.
        let kept = intended.iter().filter(|q| split.positives.contains(q)).count();
        println!("  planted positives recovered: {kept}/{}", intended.len());
        println!("  negatives: {}", split.negatives.len());
    }
    Ok(())
}
