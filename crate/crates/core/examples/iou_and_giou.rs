//! Box overlap measures on normalized corner boxes.
//!
//! ```text
//! cargo run --example iou_and_giou
//! ```

use detreli::geometry::{giou, iou, BoundingBox};

fn main() -> detreli::Result<()> {
    let a = BoundingBox::new(0.1, 0.1, 0.5, 0.5)?;
    let cases = [
        ("identical", a),
        ("shifted", BoundingBox::new(0.3, 0.3, 0.7, 0.7)?),
        ("disjoint", BoundingBox::new(0.6, 0.6, 0.9, 0.9)?),
        // Pixel boxes are normalized by the image size.
        ("from pixels", BoundingBox::from_xywh(64.0, 48.0, 256.0, 192.0, 640.0, 480.0)?),
    ];
    println!("{:<12} {:>7} {:>7} {:>7}", "case", "IoU", "GIoU", "L1");
    for (name, b) in cases {
        println!("{name:<12} {:>7.4} {:>7.4} {:>7.4}", iou(&a, &b), giou(&a, &b), a.l1_distance(&b));
    }
    Ok(())
}
