use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use focal_bench::report::{read_report, Split};
use focal_core::imaging::{load_manifest, write_depth, DEPTH_FILE};
use focal_core::DepthMap;
use tempfile::TempDir;

const TINY: &str = r#"
figure_examples = 3
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
learning_rate = 0.05

[net]
conv_widths = [4, 4, 4, 4, 4, 4]
hidden = 8
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_focal-bench"))
}

fn run(args: &[&str], config: &Path) -> Output {
    let out = bin().args(args).arg("--config").arg(config).output().unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

struct Fixture {
    dir: TempDir,
    config: PathBuf,
    data: PathBuf,
}

impl Fixture {
    fn new(toml: &str) -> Self {
        let dir = TempDir::new().unwrap();
        let config = dir.path().join("bench.toml");
        fs::write(&config, toml).unwrap();
        let data = dir.path().join("data");
        let out = run(&["generate", "--seed", "3", "--out", data.to_str().unwrap()], &config);
        assert_eq!(code(&out), 0);
        Self { dir, config, data }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        let mut all = args.to_vec();
        all.extend(["--dataset", self.data.to_str().unwrap()]);
        run(&all, &self.config)
    }
}

/// Every regular file under `root`, keyed by relative path.
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

#[test]
fn generate_is_byte_identical_for_a_seed() {
    let f = Fixture::new(TINY);
    let again = f.path("again");
    assert_eq!(code(&run(&["generate", "--seed", "3", "--out", again.to_str().unwrap()], &f.config)), 0);
    assert_eq!(tree(&f.data), tree(&again));
    let other = f.path("other");
    assert_eq!(code(&run(&["generate", "--seed", "4", "--out", other.to_str().unwrap()], &f.config)), 0);
    assert_ne!(tree(&f.data), tree(&other));
}

#[test]
fn train_is_byte_identical_for_a_seed() {
    let f = Fixture::new(TINY);
    let (a, b) = (f.path("a"), f.path("b"));
    for out in [&a, &b] {
        assert_eq!(code(&f.run(&["train", "--mode", "stack", "--seed", "9", "--out", out.to_str().unwrap()])), 0);
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.contains_key(Path::new("report.json")));
    assert!(ta.contains_key(Path::new("model.fdnn")));
    assert!(ta.contains_key(Path::new("loss_history.csv")));
    assert_eq!(ta, tb);
}

#[test]
fn example_counts_follow_augmentation() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("c.toml");
    fs::write(&config, TINY).unwrap();
    let out = dir.path().join("one");
    let o = bin()
        .args(["generate", "--count", "1", "--augment", "0", "--out", out.to_str().unwrap()])
        .arg("--config")
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(load_manifest(&out).unwrap().examples.len(), 1);

    let f = Fixture::new(TINY);
    let m = load_manifest(&f.data).unwrap();
    assert_eq!(m.examples.len(), 12);
    assert_eq!(m.scene_count(), 6);
}

#[test]
fn split_never_leaks_scenes() {
    let f = Fixture::new(&TINY.replace("augment = 1", "augment = 3"));
    let out = f.path("run");
    assert_eq!(code(&f.run(&["train", "--mode", "single", "--epochs", "1", "--out", out.to_str().unwrap()])), 0);
    let report = read_report(&out.join("report.json")).unwrap();
    let scenes = |s: Split| -> BTreeSet<usize> {
        report.examples.iter().filter(|e| e.split == s).map(|e| e.scene).collect()
    };
    let (train, test) = (scenes(Split::Train), scenes(Split::Test));
    assert!(!train.is_empty() && !test.is_empty());
    assert!(train.is_disjoint(&test));
    assert_eq!(report.examples.len(), 24);
}

#[test]
fn reports_are_internally_consistent() {
    let f = Fixture::new(TINY);
    for mode in ["single", "stack", "classic"] {
        let out = f.path(mode);
        let cmd = if mode == "classic" { "classic" } else { "train" };
        assert_eq!(code(&f.run(&[cmd, "--mode", mode, "--out", out.to_str().unwrap()])), 0);
        let r = read_report(&out.join("report.json")).unwrap();
        for (split, m) in [(Split::Train, &r.train), (Split::Test, &r.test)] {
            let rows: Vec<_> = r.examples.iter().filter(|e| e.split == split).collect();
            let n: usize = rows.iter().map(|e| e.pixels).sum();
            let mse = rows.iter().map(|e| e.mse * e.pixels as f64).sum::<f64>() / n as f64;
            let mae = rows.iter().map(|e| e.mae * e.pixels as f64).sum::<f64>() / n as f64;
            assert!((mse - m.mse).abs() <= 1e-6, "{mode} {split:?}");
            assert!((mae - m.mae).abs() <= 1e-6, "{mode} {split:?}");
            assert!(m.mae * m.mae <= m.mse);
            for e in rows {
                assert!(e.mae * e.mae <= e.mse * (1.0 + 1e-12));
            }
        }
        assert_eq!(r.seed, 0);
        assert_eq!(r.config.mode.name(), mode);
    }
}

#[test]
fn eval_reproduces_training_report() {
    let f = Fixture::new(TINY);
    let (t, e) = (f.path("t"), f.path("e"));
    assert_eq!(code(&f.run(&["train", "--mode", "single", "--out", t.to_str().unwrap()])), 0);
    let model = t.join("model.fdnn");
    let args = ["eval", "--mode", "single", "--model", model.to_str().unwrap(), "--out", e.to_str().unwrap()];
    assert_eq!(code(&f.run(&args)), 0);
    let (rt, re) = (read_report(&t.join("report.json")).unwrap(), read_report(&e.join("report.json")).unwrap());
    assert_eq!(rt.examples, re.examples);
    let wrong = ["eval", "--mode", "stack", "--model", model.to_str().unwrap(), "--out", e.to_str().unwrap()];
    assert_eq!(code(&f.run(&wrong)), 2);
}

#[test]
fn exit_codes() {
    let f = Fixture::new(TINY);
    let out = f.path("x");
    let o = out.to_str().unwrap();
    assert_eq!(code(&f.run(&["train", "--split", "1.5", "--out", o])), 2);
    assert_eq!(code(&f.run(&["train", "--batch-size", "0", "--out", o])), 2);
    assert_eq!(code(&f.run(&["train", "--slices", "5", "--out", o])), 2);
    assert_eq!(code(&f.run(&["eval", "--mode", "classic", "--model", "m", "--out", o])), 2);
    assert_eq!(code(&run(&["train", "--out", o], &f.config)), 2);

    let bad = f.path("bad.toml");
    fs::write(&bad, "[train]\nlearning_rat = 0.1\n").unwrap();
    assert_eq!(code(&run(&["generate", "--out", o], &bad)), 2);
    assert_eq!(code(&run(&["generate", "--out", o], &f.path("missing.toml"))), 2);

    assert_eq!(code(&f.run(&["train", "--mode", "stack", "--lr", "1e6", "--out", o])), 3);

    let missing = f.path("nowhere");
    let o2 = run(&["train", "--dataset", missing.to_str().unwrap(), "--out", o], &f.config);
    assert_eq!(code(&o2), 4);

    let broken = f.path("broken");
    fs::create_dir_all(&broken).unwrap();
    for (rel, bytes) in tree(&f.data) {
        let p = broken.join(&rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(&p, bytes).unwrap();
    }
    let first = &load_manifest(&broken).unwrap().examples[0];
    let png = broken.join(&first.stack_dir).join(focal_core::imaging::slice_file_name(0));
    fs::write(&png, b"not a png").unwrap();
    let o3 = run(&["train", "--dataset", broken.to_str().unwrap(), "--out", o], &f.config);
    assert_eq!(code(&o3), 4);

    let model = f.path("junk.fdnn");
    fs::write(&model, b"FDNN\x07").unwrap();
    assert_eq!(code(&f.run(&["eval", "--mode", "single", "--model", model.to_str().unwrap(), "--out", o])), 4);
}

#[test]
fn constant_labels_are_learned_by_both_modes() {
    let f = Fixture::new(TINY);
    for e in &load_manifest(&f.data).unwrap().examples {
        let d = DepthMap::filled(e.label_width, e.label_height, 2.0).unwrap();
        write_depth(&f.data.join(&e.stack_dir).join(DEPTH_FILE), &d).unwrap();
    }
    let mut mse = vec![];
    for mode in ["single", "stack"] {
        let out = f.path(mode);
        assert_eq!(code(&f.run(&["train", "--mode", mode, "--epochs", "5", "--out", out.to_str().unwrap()])), 0);
        mse.push(read_report(&out.join("report.json")).unwrap().test.mse);
    }
    assert!(mse.iter().all(|&m| m < 1.0), "{mse:?}");
}

#[test]
fn compare_writes_summary_and_figures() {
    let f = Fixture::new(TINY);
    let out = f.path("cmp");
    let o = f.run(&["compare", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("355.27") && text.contains("335.88"));
    for name in ["comparison.json", "comparison.md", "comparison.csv"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    for seed in [0, 1] {
        let dir = out.join(format!("seed_{seed}"));
        let single = read_report(&dir.join("single/report.json")).unwrap();
        let stack = read_report(&dir.join("stack/report.json")).unwrap();
        assert_eq!(single.dataset.sha256, stack.dataset.sha256);
        assert_eq!(fs::read_dir(dir.join("figures")).unwrap().count(), single.predictions.len());
    }
}

#[test]
fn render_handles_reports_with_and_without_predictions() {
    let f = Fixture::new(TINY);
    let run_dir = f.path("run");
    assert_eq!(code(&f.run(&["classic", "--out", run_dir.to_str().unwrap()])), 0);
    let report = run_dir.join("report.json");
    let figs = f.path("figs");
    let o = run(&["render", "--report", report.to_str().unwrap(), "--out", figs.to_str().unwrap()], &f.config);
    assert_eq!(code(&o), 0);
    let mut r = read_report(&report).unwrap();
    assert!(!r.predictions.is_empty());
    assert_eq!(fs::read_dir(&figs).unwrap().count(), r.predictions.len());

    r.predictions.clear();
    let empty = f.path("empty.json");
    focal_core::imaging::write_json(&empty, &r).unwrap();
    let figs = f.path("none");
    let o = run(&["render", "--report", empty.to_str().unwrap(), "--out", figs.to_str().unwrap()], &f.config);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_dir(&figs).unwrap().count(), 0);
}

#[test]
fn preprocess_writes_cleaned_copy() {
    let f = Fixture::new(TINY);
    let out = f.path("clean");
    assert_eq!(code(&f.run(&["preprocess", "--out", out.to_str().unwrap()])), 0);
    let (a, b) = (load_manifest(&f.data).unwrap(), load_manifest(&out).unwrap());
    assert_eq!(a.examples.len(), b.examples.len());
}
