//! Acceptance run: every criterion prints one PASS/FAIL line, and the process
//! fails if any criterion fails.
//!
//! Criteria 1 and 2 train the full desk-scale benchmark (500 scenes, 3 seeds,
//! both modes) and dominate the runtime. Its outputs are kept under the cargo
//! target directory in `acceptance/benchmark`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use focal_bench::compare::{compare_modes, Comparison};
use focal_bench::dataset::generate_dataset;
use focal_bench::report::{read_report, EvalReport, Split};
use focal_bench::{BenchConfig, ExperimentConfig, Mode};
use focal_core::classic::{dff_depth, modified_laplacian, DffConfig};
use focal_core::lens::{focus_distances, gen_scene, render_stack, LensConfig, SceneConfig};
use focal_core::preprocess::{
    apply_homography, dilate, erode, gaussian_blur, perturbation_homography, register_depth_to_camera,
    CameraIntrinsics, RigExtrinsics,
};
use focal_core::DepthMap;
use focal_nn::gradcheck::{check_layers, check_model, DEFAULT_STEP};
use focal_nn::layers::conv2d_forward;
use focal_nn::{train, Dataset, LayerSpec, ModelSpec, ModelState, Tensor, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn work_dir() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

struct Benchmark {
    comparison: Comparison,
    reports: Vec<EvalReport>,
}

fn run_benchmark(dir: &Path) -> Result<Benchmark, String> {
    let cfg = BenchConfig::default();
    let data = dir.join("dataset");
    generate_dataset(&cfg.dataset, &cfg.lens, cfg.seed, &data).map_err(|e| e.to_string())?;
    let base = ExperimentConfig::from_bench(&cfg, &data);
    let single = ExperimentConfig { mode: Mode::Single, ..base.clone() };
    let stack = ExperimentConfig { mode: Mode::Stack, ..base };
    let seeds: Vec<u64> = (0..cfg.compare_seeds as u64).map(|i| cfg.seed + i).collect();
    let out = dir.join("benchmark");
    let comparison = compare_modes(&single, &stack, &seeds, &out).map_err(|e| e.to_string())?;
    let mut reports = vec![];
    for s in &seeds {
        for m in ["single", "stack"] {
            reports.push(read_report(&out.join(format!("seed_{s}/{m}/report.json"))).map_err(|e| e.to_string())?);
        }
    }
    Ok(Benchmark { comparison, reports })
}

fn stack_beats_single(b: &Benchmark) -> Outcome {
    let c = &b.comparison;
    let per_seed: Vec<String> = c
        .seeds
        .iter()
        .map(|s| format!("seed {} {:.1}/{:.1}", s.seed, s.single.test_mse, s.stack.test_mse))
        .collect();
    check(
        c.stack_to_single_mse_ratio <= 0.95,
        format!(
            "median test MSE single {:.2}, stack {:.2}, ratio {:.4} (need <= 0.95); {}",
            c.median_single_test_mse,
            c.median_stack_test_mse,
            c.stack_to_single_mse_ratio,
            per_seed.join(", ")
        ),
    )
}

/// Trailing 3-epoch means.
fn smooth(h: &[f64]) -> Vec<f64> {
    h.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect()
}

fn converges(b: &Benchmark) -> Outcome {
    let mut ok = true;
    let mut parts = vec![];
    for r in &b.reports {
        let h = &r.loss_history;
        if h.len() != 30 {
            ok = false;
            parts.push(format!("{} seed {}: {} epochs", r.mode.name(), r.seed, h.len()));
            continue;
        }
        let change = (h[29] - h[24]).abs() / h[24];
        let s = smooth(h);
        let rises = s.windows(2).filter(|w| w[1] > w[0]).count();
        ok &= change < 0.02 && rises == 0;
        parts.push(format!(
            "{} seed {}: last-5 change {:.2}%, smoothed rises {}",
            r.mode.name(),
            r.seed,
            100.0 * change,
            rises
        ));
    }
    check(ok, parts.join("; "))
}

fn gradient_suite() -> Outcome {
    let layers = check_layers(17, 25, DEFAULT_STEP).map_err(|e| e.to_string())?;
    let mut worst = layers.max_relative_error();
    let mut counts = vec![];
    for name in ["conv", "relu", "pool", "dense", "mse"] {
        counts.push((name.to_string(), layers.count(name)));
    }
    let spec = ModelSpec::new(
        [2, 8, 8],
        vec![
            LayerSpec::Conv { out_channels: 3 },
            LayerSpec::Conv { out_channels: 3 },
            LayerSpec::MaxPool,
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 5, relu: false },
        ],
    )
    .map_err(|e| e.to_string())?;
    for seed in [21, 22] {
        let mut state = ModelState::<f64>::init(&spec, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in state.params_mut().iter_mut().flatten() {
            for b in p.bias.data_mut() {
                *b = rng.gen_range(-0.1..0.1);
            }
        }
        let x = Tensor::new(vec![2, 8, 8], (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let y: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let report = check_model(&state, &x, &y, 25, DEFAULT_STEP, seed).map_err(|e| e.to_string())?;
        worst = worst.max(report.max_relative_error());
        for name in ["conv1", "conv2", "dense1"] {
            counts.push((format!("net.{name}"), report.count(name)));
        }
    }
    let min_probes = counts.iter().map(|c| c.1).min().unwrap_or(0);
    check(
        worst <= 1e-4 && min_probes >= 20,
        format!("max relative error {worst:.2e} (need <= 1e-4), fewest probes on one layer {min_probes} (need >= 20)"),
    )
}

fn conv_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (c, h, w, f) = (rng.gen_range(1..4), rng.gen_range(1..8), rng.gen_range(1..8), rng.gen_range(1..4));
        let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>();
        let (x, k, b) = (draw(c * h * w), draw(f * c * 9), draw(f));
        let fast = conv2d_forward(
            &Tensor::new(vec![c, h, w], x.clone()).unwrap(),
            &Tensor::new(vec![f, c, 3, 3], k.clone()).unwrap(),
            &Tensor::new(vec![f], b.clone()).unwrap(),
        )
        .map_err(|e| e.to_string())?;
        for o in 0..f {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = b[o];
                    for ch in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) = (y + ky, xx + kx);
                                if sy >= 1 && sx >= 1 && sy - 1 < h && sx - 1 < w {
                                    acc += k[((o * c + ch) * 3 + ky) * 3 + kx] * x[(ch * h + sy - 1) * w + sx - 1];
                                }
                            }
                        }
                    }
                    worst = worst.max((fast.data()[(o * h + y) * w + xx] - acc).abs());
                }
            }
        }
    }
    check(worst <= 1e-6, format!("100 cases, max abs difference {worst:.2e} (need <= 1e-6)"))
}

fn overfit() -> Outcome {
    let spec = ModelSpec::new(
        [3, 8, 8],
        vec![
            LayerSpec::Conv { out_channels: 4 },
            LayerSpec::Conv { out_channels: 4 },
            LayerSpec::MaxPool,
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 16, relu: false },
        ],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let data = Dataset {
        inputs: (0..5)
            .map(|_| Tensor::new(vec![3, 8, 8], (0..192).map(|_| rng.gen_range(0.0f32..1.0)).collect()).unwrap())
            .collect(),
        labels: (0..5).map(|_| (0..16).map(|_| rng.gen_range(0.0f32..1.0)).collect()).collect(),
        groups: (0..5).collect(),
    };
    let cfg = TrainConfig {
        learning_rate: 0.2,
        batch_size: 4,
        epochs: 500,
        split_fraction: 0.8,
        seed: 3,
        ..TrainConfig::default()
    };
    let out = train(&data, &spec, &cfg).map_err(|e| e.to_string())?;
    let (first, last) = (out.history[0], *out.history.last().unwrap());
    check(
        out.train_ids.len() == 4 && last < 0.01 * first,
        format!(
            "{} training examples, loss {first:.4} -> {last:.6} after 500 epochs ({:.3}% of initial, need < 1%)",
            out.train_ids.len(),
            100.0 * last / first
        ),
    )
}

fn classic_planes() -> Outcome {
    let range = (0.4, 4.0);
    let distances = focus_distances(8, range).unwrap();
    let spacing = distances[1] - distances[0];
    let cfg = DffConfig::default();
    let mut worst = (1.0f64, 0.0f64);
    let mut depths = distances.clone();
    depths.extend(distances.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    for (i, &depth) in depths.iter().enumerate() {
        let (img, _) = gen_scene(&SceneConfig {
            seed: 40 + i as u64,
            texture_scale: 0.8,
            ..SceneConfig::default()
        })
        .unwrap();
        let plane = DepthMap::filled(64, 64, depth as f32).unwrap();
        let stack = render_stack(&img, &plane, 8, &LensConfig::default(), range).unwrap();
        let est = dff_depth(&stack, &distances, &cfg).map_err(|e| e.to_string())?;
        let sharp = modified_laplacian(&img, cfg.window).unwrap();
        let floor = 1e-3 * sharp.data().iter().copied().fold(0.0f32, f32::max);
        let (mut textured, mut good) = (0usize, 0usize);
        for (s, e) in sharp.data().iter().zip(est.data()) {
            if *s > floor {
                textured += 1;
                good += ((*e as f64 - depth).abs() <= spacing) as usize;
            }
        }
        let rate = good as f64 / textured as f64;
        if rate < worst.0 {
            worst = (rate, depth);
        }
    }
    check(
        worst.0 >= 0.95,
        format!(
            "{} planes; worst plane at {:.3} m has {:.2}% of textured pixels within {spacing:.3} m (need >= 95%)",
            depths.len(),
            worst.1,
            100.0 * worst.0
        ),
    )
}

fn preprocessing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut failures = vec![];

    let mut morph_cases = 0;
    for _ in 0..40 {
        let v: Vec<f32> = (0..256)
            .map(|_| if rng.gen_bool(0.15) { f32::NAN } else { rng.gen_range(0.4..4.0) })
            .collect();
        let d = DepthMap::new(16, 16, v.clone()).unwrap();
        for r in 1..=2usize {
            for (min, got) in [(true, erode(&d, r)), (false, dilate(&d, r))] {
                morph_cases += 1;
                for y in 0..16usize {
                    for x in 0..16usize {
                        let mut best: Option<f32> = None;
                        for yy in y.saturating_sub(r)..=(y + r).min(15) {
                            for xx in x.saturating_sub(r)..=(x + r).min(15) {
                                let s = v[yy * 16 + xx];
                                if !s.is_nan() {
                                    best = Some(match best {
                                        None => s,
                                        Some(b) if min => b.min(s),
                                        Some(b) => b.max(s),
                                    });
                                }
                            }
                        }
                        let g = got.get(x, y);
                        let same = match best {
                            None => g.is_nan(),
                            Some(b) => g == b,
                        };
                        if !same {
                            failures.push(format!("morphology mismatch at ({x},{y}) r {r}"));
                        }
                    }
                }
            }
        }
    }

    for _ in 0..20 {
        let c = rng.gen_range(0.4f32..4.0);
        let sigma = rng.gen_range(0.5..3.0);
        let flat = DepthMap::filled(16, 16, c).unwrap();
        if gaussian_blur(&flat, sigma).unwrap() != flat {
            failures.push(format!("blur changed constant {c}"));
        }
        let d = DepthMap::new(16, 16, (0..256).map(|_| rng.gen_range(0.4f32..4.0)).collect()).unwrap();
        let (lo, hi) = d.range().unwrap();
        let (blo, bhi) = gaussian_blur(&d, sigma).unwrap().range().unwrap();
        if blo < lo || bhi > hi {
            failures.push(format!("blur widened [{lo}, {hi}] to [{blo}, {bhi}]"));
        }
    }

    let (img, _) = gen_scene(&SceneConfig {
        seed: 72,
        width: 96,
        height: 96,
        ..SceneConfig::default()
    })
    .unwrap();
    let img = gaussian_blur(&img, 1.0).unwrap();
    let mut round_trip = 0.0f64;
    for seed in 0..5 {
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
        round_trip = round_trip.max(err / n as f64);
    }
    if round_trip > 2.0 {
        failures.push(format!("homography round trip error {round_trip:.3} levels"));
    }

    let d = DepthMap::new(12, 9, (0..108).map(|i| 0.5 + 0.03 * i as f32).collect()).unwrap();
    let cam = CameraIntrinsics {
        fx: 60.0,
        fy: 60.0,
        cx: 5.5,
        cy: 4.0,
    };
    let same = register_depth_to_camera(&d, &cam, &cam, &RigExtrinsics { translation: [0.0; 3] }, (12, 9)).unwrap();
    if same != d {
        failures.push("registration with zero extrinsics is not the identity".into());
    }

    let summary = format!(
        "{morph_cases} morphology comparisons on random 16x16 maps, blur constants and range on 20 maps, homography round trip {round_trip:.3} levels (need <= 2), registration identity"
    );
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{summary}; failures: {}", failures.join("; ")))
    }
}

const TINY: &str = r#"
figure_examples = 2
compare_seeds = 2

[dataset]
count = 6
augment = 1
slices = 3
image_size = 16
label_size = 4

[train]
epochs = 2
batch_size = 4
learning_rate = 0.01

[net]
conv_widths = [4, 4, 4, 4, 4, 4]
hidden = 8
"#;

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut pending = vec![root.to_path_buf()];
    while let Some(dir) = pending.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                pending.push(p);
            } else {
                files.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    files
}

/// Runs every subcommand twice with the same seed into separate directories
/// and compares the outputs byte for byte. Returns the reports it produced.
fn cli_determinism(dir: &Path) -> (Outcome, Vec<EvalReport>) {
    fs::create_dir_all(dir).unwrap();
    let config = dir.join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    let data = dir.join("data");
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_focal-bench"))
            .args(args)
            .arg("--config")
            .arg(&config)
            .output()
            .unwrap();
        out.status.success()
    };
    let d = data.to_str().unwrap();
    if !run(&["generate", "--seed", "5", "--out", d]) {
        return (Err("generate failed".into()), vec![]);
    }
    let mut compared = vec![];
    let mut reports = vec![];
    let mut mismatched = vec![];
    let again = dir.join("data_again");
    run(&["generate", "--seed", "5", "--out", again.to_str().unwrap()]);
    compared.push("generate");
    if tree(&data) != tree(&again) {
        mismatched.push("generate");
    }
    let jobs: [(&str, &[&str]); 6] = [
        ("train single", &["train", "--mode", "single"]),
        ("train stack", &["train", "--mode", "stack"]),
        ("classic", &["classic"]),
        ("preprocess", &["preprocess"]),
        ("compare", &["compare"]),
        ("render", &["render"]),
    ];
    for (name, args) in jobs {
        let mut outs = vec![];
        for k in 0..2 {
            let out = dir.join(format!("{}_{k}", name.replace(' ', "_")));
            let mut all: Vec<String> = args.iter().map(|s| s.to_string()).collect();
            if name == "render" {
                all.extend(["--report".into(), dir.join("train_stack_0/report.json").display().to_string()]);
                all.extend(["--report".into(), dir.join("train_single_0/report.json").display().to_string()]);
            } else {
                all.extend(["--dataset".into(), d.into()]);
            }
            all.extend(["--seed".into(), "5".into(), "--out".into(), out.display().to_string()]);
            let refs: Vec<&str> = all.iter().map(String::as_str).collect();
            if !run(&refs) {
                return (Err(format!("{name} failed")), reports);
            }
            outs.push(out);
        }
        compared.push(name);
        if tree(&outs[0]) != tree(&outs[1]) {
            mismatched.push(name);
        }
        for entry in tree(&outs[0]).keys() {
            if entry.file_name().is_some_and(|f| f == "report.json") {
                reports.push(read_report(&outs[0].join(entry)).unwrap());
            }
        }
    }
    let outcome = check(
        mismatched.is_empty(),
        format!(
            "repeated with --seed 5: {}; differing outputs: {}",
            compared.join(", "),
            if mismatched.is_empty() { "none".into() } else { mismatched.join(", ") }
        ),
    );
    (outcome, reports)
}

fn report_consistency(reports: &[EvalReport]) -> Outcome {
    let mut worst = 0.0f64;
    let mut bad = vec![];
    for r in reports {
        for (split, m) in [(Split::Train, &r.train), (Split::Test, &r.test)] {
            let rows: Vec<_> = r.examples.iter().filter(|e| e.split == split).collect();
            let n: usize = rows.iter().map(|e| e.pixels).sum();
            let mse = rows.iter().map(|e| e.mse * e.pixels as f64).sum::<f64>() / n as f64;
            let mae = rows.iter().map(|e| e.mae * e.pixels as f64).sum::<f64>() / n as f64;
            worst = worst.max((mse - m.mse).abs()).max((mae - m.mae).abs());
            if m.mae * m.mae > m.mse || rows.iter().any(|e| e.mae * e.mae > e.mse * (1.0 + 1e-12)) {
                bad.push(format!("{} seed {} {split:?}: MAE^2 > MSE", r.mode.name(), r.seed));
            }
        }
    }
    let detail = format!(
        "{} reports, max recompute difference {worst:.2e} (need <= 1e-6){}",
        reports.len(),
        if bad.is_empty() { String::new() } else { format!("; {}", bad.join("; ")) }
    );
    check(!reports.is_empty() && worst <= 1e-6 && bad.is_empty(), detail)
}

fn main() {
    let dir = work_dir();
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = vec![];
    let mut report = |n: usize, name: &'static str, outcome: Outcome| {
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("[{tag}] {n} {name}: {detail} ({:.0} s)", start.elapsed().as_secs_f64());
        results.push((n, name, outcome));
    };

    report(3, "gradient suite", gradient_suite());
    report(4, "convolution oracle", conv_oracle());
    report(5, "overfit smoke test", overfit());
    report(6, "classical baseline on planes", classic_planes());
    report(7, "preprocessing invariants", preprocessing());
    let (det, mut reports) = cli_determinism(&dir.join("cli"));
    report(8, "CLI determinism", det);

    match run_benchmark(&dir) {
        Ok(b) => {
            report(1, "stack beats single", stack_beats_single(&b));
            report(2, "convergence", converges(&b));
            reports.extend(b.reports);
        }
        Err(e) => {
            report(1, "stack beats single", Err(format!("benchmark failed: {e}")));
            report(2, "convergence", Err(format!("benchmark failed: {e}")));
        }
    }
    report(9, "report consistency", report_consistency(&reports));

    results.sort_by_key(|r| r.0);
    println!();
    for (n, name, outcome) in &results {
        println!("criterion {n} {name}: {}", if outcome.is_ok() { "PASS" } else { "FAIL" });
    }
    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
