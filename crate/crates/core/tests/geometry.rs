use proptest::prelude::*;
use siamtrack::geometry::*;

fn bbox() -> impl Strategy<Value = BBox> {
    (-500.0..500.0f64, -500.0..500.0f64, 0.5..400.0f64, 0.5..400.0f64).prop_map(|(cx, cy, w, h)| BBox::new(cx, cy, w, h).unwrap())
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let (x, y) = (iou(&a, &b), iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(x, y);
    }

    #[test]
    fn iou_with_self_is_one(a in bbox()) {
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iou_survives_common_translation(a in bbox(), b in bbox(), dx in -100.0..100.0f64, dy in -100.0..100.0f64) {
        let moved = iou(&a.translated(dx, dy), &b.translated(dx, dy));
        prop_assert!((moved - iou(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn encode_decode_roundtrip(a in bbox(), g in bbox()) {
        let back = decode_regression(&a, &encode_regression(&a, &g)).unwrap();
        let (p, q) = (back.corners(), g.corners());
        for d in [p.0 - q.0, p.1 - q.1, p.2 - q.2, p.3 - q.3] {
            prop_assert!(d.abs() < 1e-9, "corner error {d}");
        }
    }

    #[test]
    fn box_text_roundtrip(boxes in prop::collection::vec(bbox(), 0..20)) {
        let back = parse_boxes(&format_boxes(&boxes)).unwrap();
        prop_assert_eq!(back.len(), boxes.len());
        for (a, b) in back.iter().zip(&boxes) {
            prop_assert!(a.center_distance(b) < 1e-9 && (a.w - b.w).abs() < 1e-9 && (a.h - b.h).abs() < 1e-9);
        }
    }
}

#[test]
fn disjoint_and_nested_boxes() {
    let a = BBox::from_xywh(0.0, 0.0, 10.0, 10.0).unwrap();
    assert_eq!(iou(&a, &BBox::from_xywh(20.0, 0.0, 10.0, 10.0).unwrap()), 0.0);
    let inner = BBox::from_xywh(0.0, 0.0, 5.0, 10.0).unwrap();
    assert!((iou(&a, &inner) - 0.5).abs() < 1e-15);
}

#[test]
fn anchors_cover_grid_in_flat_order() {
    let cfg = AnchorConfig::with_stride(4);
    let set = make_anchors(&cfg, (25, 25), (15.5, 15.5)).unwrap();
    assert_eq!(set.len(), 25 * 25 * cfg.k());
    for idx in [0, 7, set.len() - 1] {
        let (i, j, a) = set.unflatten(idx);
        assert_eq!(set.flat_index(i, j, a), idx);
        let b = &set.boxes[idx];
        assert_eq!((b.cx, b.cy), (15.5 + 4.0 * j as f64, 15.5 + 4.0 * i as f64));
    }
    assert!(make_anchors(&cfg, (0, 5), (0.0, 0.0)).is_err());
}

#[test]
fn malformed_box_lines_rejected() {
    assert!(parse_boxes("1,2,3\n").is_err());
    assert!(parse_boxes("1,2,x,4\n").is_err());
    assert_eq!(parse_boxes("\n1,2,3,4\n\n").unwrap().len(), 1);
}
