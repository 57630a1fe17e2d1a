//! Anchor grid, regression encode/decode and IoU on a desk-size response map.

use siamtrack::geometry::{decode_regression, encode_regression, iou, make_anchors, AnchorConfig, BBox};

fn main() -> siamtrack::Result<()> {
    let cfg = AnchorConfig::with_stride(4);
    let anchors = make_anchors(&cfg, (25, 25), (15.5, 15.5))?;
    println!("{} anchors, {} per cell", anchors.len(), anchors.k);
    for (w, h) in cfg.shapes() {
        println!("  shape {w:.1} x {h:.1}");
    }

    let gt = BBox::new(70.0, 58.0, 30.0, 22.0)?;
    let (best, score) = anchors
        .boxes
        .iter()
        .enumerate()
        .map(|(i, a)| (i, iou(a, &gt)))
        .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    let a = &anchors.boxes[best];
    let (i, j, k) = anchors.unflatten(best);
    println!("best anchor cell ({i}, {j}) shape {k}: iou {score:.3}");

    let d = encode_regression(a, &gt);
    println!("deltas {:?}", d.as_array().map(|v| (v * 1e4).round() / 1e4));
    let back = decode_regression(a, &d)?;
    println!("decoded {:?}, iou with gt {:.12}", back.xywh(), iou(&back, &gt));
    Ok(())
}
