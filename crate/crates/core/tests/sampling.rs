use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use siamtrack::sampling::*;

#[test]
fn shifts_are_uniform_over_the_square() {
    // 8x8 bins, 63 degrees of freedom, 1% critical value 92.01.
    let (range, n, bins) = (32.0, 64_000usize, 8usize);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut counts = vec![0usize; bins * bins];
    for _ in 0..n {
        let (dx, dy) = draw_shift(range, &mut rng);
        assert!(dx.abs() <= range && dy.abs() <= range);
        let bin = |v: f64| (((v + range) / (2.0 * range) * bins as f64) as usize).min(bins - 1);
        counts[bin(dy) * bins + bin(dx)] += 1;
    }
    let expect = n as f64 / (bins * bins) as f64;
    let chi: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    assert!(chi < 92.01, "chi-square {chi}");
}

#[test]
fn zero_range_means_no_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(draw_shift(0.0, &mut rng), (0.0, 0.0));
}

#[test]
fn target_lands_at_the_drawn_shift() {
    let spec = SynthSpec::default();
    let cfg = SampleConfig::desk(32.0);
    let scene = Scene::new(&spec, 5, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for shift in [(0.0, 0.0), (20.0, -12.0), (-32.0, 32.0)] {
        let s = sample_pair_frames(&scene, 0, 2, shift, &cfg, &mut rng).unwrap();
        let half = cfg.search_size as f64 / 2.0;
        assert!((s.gt.cx - half - shift.0).abs() < 1e-9);
        assert!((s.gt.cy - half - shift.1).abs() < 1e-9);
        assert_eq!(s.x.shape(), &[1, 3, cfg.search_size, cfg.search_size]);
        assert_eq!(s.z.shape(), &[1, 3, cfg.template_size, cfg.template_size]);
    }
}

#[test]
fn scenes_are_seed_deterministic() {
    let spec = SynthSpec::default();
    let a = Scene::new(&spec, 8, 42).unwrap();
    let b = Scene::new(&spec, 8, 42).unwrap();
    assert_eq!(a.boxes(), b.boxes());
    assert_eq!(a.render(7).data, b.render(7).data);
}
