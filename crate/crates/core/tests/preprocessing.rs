use focal_core::lens::{gen_scene, SceneConfig};
use focal_core::preprocess::{
    apply_homography, apply_homography_depth, clean_depth, crop_resize, dilate, erode, gaussian_blur,
    perturbation_homography, register_depth_to_camera, CameraIntrinsics, CleanConfig, Homography,
    RigExtrinsics, Roi,
};
use focal_core::{DepthMap, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize, holes: f64) -> DepthMap {
    let data = (0..w * h)
        .map(|_| {
            if rng.gen_bool(holes) {
                f32::NAN
            } else {
                rng.gen_range(0.4f32..4.0)
            }
        })
        .collect();
    DepthMap::new(w, h, data).unwrap()
}

/// Windowed min/max over the valid pixels of every window, by direct enumeration.
fn brute(d: &DepthMap, r: usize, min: bool) -> Vec<f32> {
    let (w, h) = (d.width() as isize, d.height() as isize);
    let r = r as isize;
    let mut out = vec![];
    for y in 0..h {
        for x in 0..w {
            let mut vals = vec![];
            for dy in -r..=r {
                for dx in -r..=r {
                    let (xx, yy) = (x + dx, y + dy);
                    if xx >= 0 && yy >= 0 && xx < w && yy < h {
                        let v = d.get(xx as usize, yy as usize);
                        if !v.is_nan() {
                            vals.push(v);
                        }
                    }
                }
            }
            out.push(if vals.is_empty() {
                f32::NAN
            } else if min {
                vals.iter().copied().fold(f32::INFINITY, f32::min)
            } else {
                vals.iter().copied().fold(f32::NEG_INFINITY, f32::max)
            });
        }
    }
    out
}

fn same(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x == y || (x.is_nan() && y.is_nan()))
}

#[test]
fn morphology_matches_brute_force_on_random_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..50 {
        let d = random_map(&mut rng, 16, 16, if case % 5 == 0 { 0.6 } else { 0.1 });
        for r in 0..=3 {
            assert!(same(erode(&d, r).data(), &brute(&d, r, true)), "erode case {case} r {r}");
            assert!(same(dilate(&d, r).data(), &brute(&d, r, false)), "dilate case {case} r {r}");
        }
    }
}

#[test]
fn blur_keeps_constants_and_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..30 {
        let sigma = rng.gen_range(0.3..4.0);
        let c = rng.gen_range(0.4f32..4.0);
        let flat = DepthMap::filled(16, 16, c).unwrap();
        assert_eq!(gaussian_blur(&flat, sigma).unwrap(), flat, "case {case}");

        let d = random_map(&mut rng, 16, 16, 0.2);
        let (lo, hi) = d.range().unwrap();
        let out = gaussian_blur(&d, sigma).unwrap();
        let (olo, ohi) = out.range().unwrap();
        assert!(olo >= lo && ohi <= hi, "case {case}: [{olo}, {ohi}] outside [{lo}, {hi}]");
        for (a, b) in d.data().iter().zip(out.data()) {
            assert_eq!(a.is_nan(), b.is_nan());
        }
    }
}

#[test]
fn cleaning_fills_isolated_holes_and_keeps_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut v: Vec<f32> = (0..32 * 32).map(|i| 1.0 + (i % 32) as f32 * 0.05).collect();
    for _ in 0..10 {
        let i = rng.gen_range(0..v.len());
        v[i] = f32::NAN;
    }
    let d = DepthMap::new(32, 32, v).unwrap();
    let out = clean_depth(&d, &CleanConfig::default()).unwrap();
    let (lo, hi) = d.range().unwrap();
    let (olo, ohi) = out.range().unwrap();
    assert!(olo >= lo && ohi <= hi);
    assert!(out.valid_count() >= d.valid_count());
}

#[test]
fn homography_round_trip_on_scene_texture() {
    let (img, _) = gen_scene(&SceneConfig {
        seed: 3,
        width: 96,
        height: 96,
        texture_scale: 0.2,
        ..SceneConfig::default()
    })
    .unwrap();
    // Round trip through a smooth texture; interior pixels only.
    let img = gaussian_blur(&img, 1.0).unwrap();
    for seed in 0..8 {
        let h = perturbation_homography(96, 96, seed, 0.05).unwrap();
        let there = apply_homography(&img, &h, (96, 96)).unwrap();
        let back = apply_homography(&there, &h.inverse().unwrap(), (96, 96)).unwrap();
        let (mut err, mut n) = (0.0, 0);
        for y in 16..80 {
            for x in 16..80 {
                for c in 0..3 {
                    err += (back.pixel(x, y)[c] as f64 - img.pixel(x, y)[c] as f64).abs();
                    n += 1;
                }
            }
        }
        assert!(err / n as f64 <= 2.0, "seed {seed}: {}", err / n as f64);
    }
}

#[test]
fn label_warp_tracks_image_warp() {
    // A single bright marker at a known depth must stay co-located after the warp.
    let mut img = Image::filled(48, 48, [0, 0, 0]).unwrap();
    let mut v = vec![2.0f32; 48 * 48];
    for y in 20..24 {
        for x in 26..30 {
            img.set_pixel(x, y, [255, 255, 255]);
            v[y * 48 + x] = 0.5;
        }
    }
    let d = DepthMap::new(48, 48, v).unwrap();
    for seed in 0..5 {
        let h = perturbation_homography(48, 48, seed, 0.05).unwrap();
        let wi = apply_homography(&img, &h, (48, 48)).unwrap();
        let wd = apply_homography_depth(&d, &h, (48, 48)).unwrap();
        let centroid = |pts: Vec<(usize, usize)>| {
            let n = pts.len() as f64;
            let sx = pts.iter().map(|p| p.0 as f64).sum::<f64>();
            let sy = pts.iter().map(|p| p.1 as f64).sum::<f64>();
            (sx / n, sy / n)
        };
        let bright: Vec<_> = (0..48 * 48)
            .map(|i| (i % 48, i / 48))
            .filter(|&(x, y)| wi.pixel(x, y)[0] > 128)
            .collect();
        let near: Vec<_> = (0..48 * 48)
            .map(|i| (i % 48, i / 48))
            .filter(|&(x, y)| wd.get(x, y) == 0.5)
            .collect();
        let (a, b) = (centroid(bright), centroid(near));
        assert!((a.0 - b.0).abs() <= 1.0 && (a.1 - b.1).abs() <= 1.0, "seed {seed}: {a:?} vs {b:?}");
    }
}

#[test]
fn registration_is_identity_without_extrinsics() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let d = random_map(&mut rng, 20, 14, 0.1);
    let cam = CameraIntrinsics {
        fx: 80.0,
        fy: 80.0,
        cx: 9.5,
        cy: 6.5,
    };
    let rig = RigExtrinsics { translation: [0.0; 3] };
    let out = register_depth_to_camera(&d, &cam, &cam, &rig, (20, 14)).unwrap();
    assert!(same(out.data(), d.data()));
}

#[test]
fn crop_resize_full_roi_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let d = random_map(&mut rng, 12, 10, 0.1);
    let out = crop_resize(&d, Roi::full(12, 10), (12, 10)).unwrap();
    assert!(same(out.data(), d.data()));
    assert!(crop_resize(&d, Roi::full(13, 10), (4, 4)).is_err());
    assert!(apply_homography(
        &Image::filled(4, 4, [1, 1, 1]).unwrap(),
        &Homography::identity(),
        (4, 4)
    )
    .is_ok());
}
