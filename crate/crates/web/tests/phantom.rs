use adaswitch_web::Phantom;

#[test]
fn views_are_rgba_of_the_full_image() {
    let p = Phantom::new(3, 32, 60.0, 3).unwrap();
    assert_eq!(p.size(), 32);
    for view in [p.clean_rgba(), p.noisy_rgba(), p.highfreq_rgba().unwrap(), p.lowfreq_rgba().unwrap()] {
        assert_eq!(view.len(), 32 * 32 * 4);
        assert!(view.chunks(4).all(|px| px[0] == px[1] && px[1] == px[2] && px[3] == 255));
    }
}

#[test]
fn metrics_report_the_injected_noise() {
    let p = Phantom::new(5, 64, 60.0, 4).unwrap();
    let m = p.metrics().unwrap();
    assert_eq!(m.len(), 4);
    assert!((m[2] - 60.0).abs() < 3.0, "noise std {}", m[2]);
    assert!(m[3] < 1e-6, "noise leaked into the low band: {}", m[3]);
    assert!(m[0].is_finite() && m[1] < 1.0);
}

#[test]
fn noiseless_phantom_is_perfect() {
    let p = Phantom::new(5, 32, 0.0, 3).unwrap();
    assert_eq!(p.clean_rgba(), p.noisy_rgba());
    assert!((p.metrics().unwrap()[1] - 1.0).abs() < 1e-12);
}

#[test]
fn adain_hits_the_requested_statistics() {
    let p = Phantom::new(9, 32, 40.0, 3).unwrap();
    let s = p.adain_stats(0.25, 2.0).unwrap();
    assert!(s[1] > 0.0);
    assert!((s[2] - 0.25).abs() < 1e-9 && (s[3] - 2.0).abs() < 1e-9, "{s:?}");
    assert_eq!(p.adain_rgba(0.25, 2.0).unwrap().len(), 32 * 32 * 4);
}

#[test]
fn window_changes_the_display_only() {
    let mut p = Phantom::new(1, 32, 60.0, 3).unwrap();
    let before = p.clean_rgba();
    p.set_window(40.0, 100.0).unwrap();
    assert_ne!(before, p.clean_rgba());
    assert_eq!(p.metrics().unwrap()[2], Phantom::new(1, 32, 60.0, 3).unwrap().metrics().unwrap()[2]);
}
