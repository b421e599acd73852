use mfusion::geometry::render::{default_header, render_frame, to_jsonl};
use mfusion::geometry::*;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn camera() -> CameraIntrinsics {
    default_header().intrinsics
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let aa = Vector3::new(
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.6..0.6),
        rng.random_range(-0.3..0.3),
    );
    let t = Vector3::new(
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.4..0.4),
        rng.random_range(3.5..8.0),
    );
    Pose::from_axis_angle(aa, t)
}

#[test]
fn pnp_round_trip_over_100_seeded_poses() {
    let face = ModelFace::generic();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let truth = random_pose(&mut rng);
        let obs = project(face.points(), &truth, &camera()).unwrap();
        let init = initial_pose(face.points(), &obs, &camera()).unwrap();
        let sol = solve_pnp(face.points(), &obs, &camera(), &init, &PnpOptions::default()).unwrap();
        worst.0 = worst.0.max(sol.pose.rotation_distance(&truth));
        worst.1 = worst.1.max((sol.pose.translation - truth.translation).norm());
        assert!(sol.residual < 1e-10, "residual {}", sol.residual);
        assert!(sol.pose.orthonormality_error() < 1e-9);
    }
    assert!(
        worst.0 < 1e-4 && worst.1 < 1e-4,
        "worst rotation {} translation {}",
        worst.0,
        worst.1
    );
}

#[test]
fn pnp_pixel_noise_keeps_rotation_within_002_rad() {
    let face = ModelFace::generic();
    assert!(face.len() >= 20);
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let truth = random_pose(&mut rng);
        let obs: Vec<_> = project(face.points(), &truth, &camera())
            .unwrap()
            .into_iter()
            .map(|(u, v)| (u + noise.sample(&mut rng), v + noise.sample(&mut rng)))
            .collect();
        let init = initial_pose(face.points(), &obs, &camera()).unwrap();
        let sol = solve_pnp(face.points(), &obs, &camera(), &init, &PnpOptions::default()).unwrap();
        worst = worst.max(sol.pose.rotation_distance(&truth));
    }
    assert!(worst < 0.02, "worst rotation error {worst}");
}

#[test]
fn affine_recovers_random_matrix_seed_11() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut a0 = Affine3::zeros();
    a0.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
    let src: Vec<Point3> = (0..10)
        .map(|_| {
            Point3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let dst: Vec<Point3> = src.iter().map(|p| apply_affine(&a0, p)).collect();
    let a = fit_affine3d(&src, &dst).unwrap();
    let err = (a - a0).abs().max();
    assert!(err < 1e-9, "max entry error {err}");
}

#[test]
fn ray_plane_exact_on_dyadic_fixtures() {
    let cases = [
        ((0.0, 0.0, 2.0), (1.0, 0.0, 1.0), 0.0, (2.0, 0.0)),
        ((1.0, 2.0, 4.0), (1.5, 1.0, 2.0), 0.0, (2.0, 0.0)),
        ((0.25, -0.5, 3.0), (0.5, 0.0, 1.0), 1.0, (0.5, 0.0)),
        ((0.1, 0.2, 1.0), (0.1, 0.2, 0.5), 0.0, (0.1, 0.2)),
    ];
    for (o, t, z, want) in cases {
        let got = ray_plane(&Point3::new(o.0, o.1, o.2), &Point3::new(t.0, t.1, t.2), z).unwrap();
        assert_eq!(got, want, "origin {o:?} through {t:?}");
    }
}

fn frontal() -> Pose {
    Pose::identity_at(Vector3::new(0.05, -0.1, 5.0))
}

#[test]
fn straight_ahead_gaze_meets_head_point() {
    let face = ModelFace::generic();
    let header = default_header();
    for pose in [
        frontal(),
        Pose::from_axis_angle(Vector3::new(0.1, -0.25, 0.05), Vector3::new(0.3, 0.1, 6.0)),
    ] {
        let frame = render_frame(&face, &pose, &header.intrinsics, 0, 0.0, 0.0).unwrap();
        let g = try_extract_gaze(&frame, &face, &header, &GazeConfig::default()).unwrap();
        assert!(g.valid);
        assert!(
            (g.head_x - g.gaze_x).abs() < 1e-3 && (g.head_y - g.gaze_y).abs() < 1e-3,
            "{g:?}"
        );
    }
}

#[test]
fn head_point_matches_closed_form_for_frontal_face() {
    let face = ModelFace::generic();
    let header = default_header();
    let frame = render_frame(&face, &frontal(), &header.intrinsics, 0, 0.0, 0.0).unwrap();
    let cfg = GazeConfig::default();
    let g = try_extract_gaze(&frame, &face, &header, &cfg).unwrap();
    // A frontal head looks straight down the optical axis, so the plane point
    // is the eye midpoint's lateral offset, mirrored into the driver's view.
    assert!((g.head_x - (-0.05 / cfg.plane_scale)).abs() < 1e-6);
    assert!((g.head_y - (0.1 / cfg.plane_scale)).abs() < 1e-6);
}

#[test]
fn gaze_turned_left_lands_left_of_head() {
    let face = ModelFace::generic();
    let header = default_header();
    let frame = render_frame(&face, &frontal(), &header.intrinsics, 0, 0.2, 0.0).unwrap();
    let g = try_extract_gaze(&frame, &face, &header, &GazeConfig::default()).unwrap();
    assert!(g.gaze_x < g.head_x, "{g:?}");
    let frame = render_frame(&face, &frontal(), &header.intrinsics, 0, -0.2, 0.0).unwrap();
    let g = try_extract_gaze(&frame, &face, &header, &GazeConfig::default()).unwrap();
    assert!(g.gaze_x > g.head_x, "{g:?}");
}

#[test]
fn corrupt_frame_is_isolated() {
    let face = ModelFace::generic();
    let header = default_header();
    let frames: Vec<_> = (0..5)
        .map(|i| render_frame(&face, &frontal(), &header.intrinsics, i, 0.05 * i as f64, 0.0).unwrap())
        .collect();
    let clean = read_landmark_file(&to_jsonl(&header, &frames)).unwrap();
    let clean_out = extract_gaze_sequence(&clean, &face, &GazeConfig::default());

    let mut text: Vec<String> = to_jsonl(&header, &frames).lines().map(String::from).collect();
    text[3] = "{\"frame\": 2, \"landmarks\": [garbage".into();
    let mut broken = frames.clone();
    broken[4].landmarks.get_mut("nose_tip").unwrap()[0] = -50.0;
    text[5] = serde_json::to_string(&broken[4]).unwrap();
    let file = read_landmark_file(&text.join("\n")).unwrap();
    let out = extract_gaze_sequence(&file, &face, &GazeConfig::default());

    assert_eq!(out.len(), 5);
    assert!(!out[2].gaze.valid && out[2].frame == 2);
    assert_eq!(out[2].gaze, GazeVector::SENTINEL);
    assert!(!out[4].gaze.valid);
    for i in [0, 1, 3] {
        assert_eq!(out[i], clean_out[i]);
        assert!(out[i].gaze.valid);
    }
}

#[test]
fn missing_pupil_yields_sentinel() {
    let face = ModelFace::generic();
    let header = default_header();
    let mut frame = render_frame(&face, &frontal(), &header.intrinsics, 0, 0.0, 0.0).unwrap();
    frame.eyes.left_pupil = None;
    assert_eq!(
        extract_gaze_vector(&frame, &face, &header, &GazeConfig::default()),
        GazeVector::SENTINEL
    );
}

#[test]
fn bad_header_is_fatal() {
    let err = read_landmark_file("{\"image_width\": 10}\n").unwrap_err();
    assert_eq!(err.line, 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn noiseless_solve_reaches_tiny_residual(seed in 0u64..10_000) {
        let face = ModelFace::generic();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random_pose(&mut rng);
        let obs = project(face.points(), &truth, &camera()).unwrap();
        let init = initial_pose(face.points(), &obs, &camera()).unwrap();
        let sol = solve_pnp(face.points(), &obs, &camera(), &init, &PnpOptions::default()).unwrap();
        prop_assert!(sol.residual < 1e-10);
        prop_assert!(sol.pose.orthonormality_error() < 1e-9);
    }

    #[test]
    fn ray_plane_symmetric(ox in -2.0..2.0f64, oy in -2.0..2.0f64, oz in 1.0..9.0f64,
                           tx in -2.0..2.0f64, ty in -2.0..2.0f64, dz in 0.1..3.0f64) {
        let a = Point3::new(ox, oy, oz);
        let b = Point3::new(tx, ty, oz - dz);
        let p = ray_plane(&a, &b, 0.0).unwrap();
        let q = ray_plane(&b, &a, 0.0).unwrap();
        prop_assert!((p.0 - q.0).abs() <= 1e-9 * (1.0 + p.0.abs()));
        prop_assert!((p.1 - q.1).abs() <= 1e-9 * (1.0 + p.1.abs()));
    }

    #[test]
    fn gaze_extraction_is_deterministic(yaw in -0.4..0.4f64, pitch in -0.3..0.3f64, seed in 0u64..1000) {
        let face = ModelFace::generic();
        let header = default_header();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = random_pose(&mut rng);
        let frame = render_frame(&face, &pose, &header.intrinsics, 0, yaw, pitch).unwrap();
        let a = extract_gaze_vector(&frame, &face, &header, &GazeConfig::default());
        let b = extract_gaze_vector(&frame, &face, &header, &GazeConfig::default());
        prop_assert_eq!(a.features().map(f64::to_bits), b.features().map(f64::to_bits));
        prop_assert!(a.features().iter().all(|v| v.is_finite()));
    }
}
