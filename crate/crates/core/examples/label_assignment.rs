//! IoU labels on the anchor grid for targets at growing offsets, and the
//! smooth L1 curve used on the regression targets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use siamtrack::geometry::{make_anchors, AnchorConfig, BBox};
use siamtrack::sampling::{assign_labels, AnchorClass, LabelConfig};
use siamtrack::training::{smooth_l1, smooth_l1_grad};

fn main() -> siamtrack::Result<()> {
    let anchors = make_anchors(&AnchorConfig::with_stride(4), (25, 25), (15.5, 15.5))?;
    let cfg = LabelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for dx in [0.0, 10.0, 30.0, 48.0] {
        let gt = BBox::new(63.5 + dx, 63.5, 36.0, 30.0)?;
        let l = assign_labels(&anchors, &gt, &cfg, &mut rng)?;
        let pos = l.class.iter().filter(|c| **c == AnchorClass::Positive).count();
        println!(
            "offset {dx:>4}: {pos:>3} positive anchors, sampled {} pos / {} neg{}",
            l.sampled(AnchorClass::Positive),
            l.sampled(AnchorClass::Negative),
            if l.no_positive { " (fallback)" } else { "" }
        );
    }
    println!();
    for x in [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0] {
        println!("smooth_l1({x:>4}) = {:.3}  grad {:>5.2}", smooth_l1(x), smooth_l1_grad(x));
    }
    Ok(())
}
