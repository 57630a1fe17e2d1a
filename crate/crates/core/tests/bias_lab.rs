use proptest::prelude::*;
use siamtrack::bias_lab::*;

fn maps() -> impl Strategy<Value = Vec<Heatmap>> {
    prop::collection::vec(prop::collection::vec(0.0..1.0f64, 25), 1..12).prop_map(|vs| {
        vs.into_iter()
            .map(|mut v| {
                v[12] += 1e-3;
                Heatmap::new(5, v).unwrap()
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn aggregation_ignores_order(ms in maps(), rot in 0usize..12) {
        let a = aggregate_heatmaps(&ms).unwrap();
        let mut shuffled = ms.clone();
        shuffled.reverse();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        let b = aggregate_heatmaps(&shuffled).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!((a.data.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_bounded(ms in maps()) {
        let s = bias_metrics(&aggregate_heatmaps(&ms).unwrap()).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&s.central_mass));
        prop_assert!(s.chi_square >= 0.0);
        prop_assert!(s.entropy <= (25f64).ln() + 1e-9);
    }
}

#[test]
fn uniform_map_has_no_bias() {
    let s = bias_metrics(&Heatmap::uniform(24)).unwrap();
    assert!(s.chi_square.abs() < 1e-12);
    assert!((s.central_mass - 0.25).abs() < 1e-12);
    assert!((s.entropy - (576f64).ln()).abs() < 1e-9);
}

#[test]
fn point_mass_at_center() {
    let mut v = vec![0.0; 25];
    v[12] = 1.0;
    let s = bias_metrics(&Heatmap::new(5, v).unwrap()).unwrap();
    assert!((s.chi_square - 24.0).abs() < 1e-9);
    assert_eq!(s.entropy, 0.0);
}

#[test]
fn empty_and_unnormalized_inputs_rejected() {
    assert!(aggregate_heatmaps(&[]).is_err());
    assert!(bias_metrics(&Heatmap::new(2, vec![1.0; 4]).unwrap()).is_err());
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
}
