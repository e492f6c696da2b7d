use std::path::Path;
use std::process::{Command, Output};

use rmfa::cli::{parse_config, RunManifest, RUN_MANIFEST};
use rmfa::io::{load_ppm, load_raw};
use rmfa::train::{EpochRecord, EvalRow};

fn rmfa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rmfa"))
        .args(args)
        .env_remove("RMFA_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, count: &str, size: &str, seed: &str) {
    ok(&rmfa(&[
        "synth",
        "--count",
        count,
        "--size",
        size,
        "--seed",
        seed,
        "--out",
        p(dir),
    ]));
}

const SMALL_CONFIG: &str = "\
# one small block, whole 32x32 images
preset = tiny
blocks = 1
width = 8
epochs = 4
restart_period = 4
batch_size = 3
checkpoint_every = 2
seed = 9
";

#[test]
fn synth_writes_pairs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "8", "64", "1");
    for i in 0..8 {
        let raw = load_raw(dir.path().join(format!("{i:04}.rawi"))).unwrap();
        let rgb = load_ppm(dir.path().join(format!("{i:04}.ppm"))).unwrap();
        assert_eq!(
            (raw.width, raw.height, rgb.width, rgb.height),
            (64, 64, 64, 64)
        );
    }
    let manifest = std::fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 8);
    let runs = std::fs::read_to_string(dir.path().join(RUN_MANIFEST)).unwrap();
    let rec: RunManifest = serde_json::from_str(runs.lines().next().unwrap()).unwrap();
    assert_eq!((rec.command.as_str(), rec.seed), ("synth", Some(1)));
}

#[test]
fn synth_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth(a.path(), "3", "32", "77");
    synth(b.path(), "3", "32", "77");
    for name in ["0000.rawi", "0001.ppm", "0002.rawi", "manifest.jsonl"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn synth_rejects_odd_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = rmfa(&[
        "synth",
        "--count",
        "2",
        "--size",
        "63",
        "--out",
        p(dir.path()),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("even dimensions required"));
}

#[test]
fn train_needs_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = rmfa(&[
        "train",
        "--data",
        p(&dir.path().join("missing.jsonl")),
        "--out",
        p(&dir.path().join("run")),
    ]);
    assert!(!out.status.success());
}

fn history(path: &Path) -> Vec<EpochRecord> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn train_resume_infer_eval() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    synth(&data, "6", "32", "3");
    let manifest = data.join("manifest.jsonl");
    let config = root.path().join("small.cfg");
    std::fs::write(&config, SMALL_CONFIG).unwrap();

    let full = root.path().join("full");
    let text = ok(&rmfa(&[
        "train",
        "--config",
        p(&config),
        "--data",
        p(&manifest),
        "--out",
        p(&full),
    ]));
    assert!(text.contains("epoch     3"));
    let h = history(&full.join("history.jsonl"));
    assert_eq!(
        h.iter().map(|r| r.epoch).collect::<Vec<_>>(),
        vec![0, 1, 2, 3]
    );
    assert!(
        full.join("checkpoint_00002.rmfc").exists() && full.join("checkpoint_00004.rmfc").exists()
    );

    let resumed = root.path().join("resumed");
    let ckpt = full.join("checkpoint_00002.rmfc");
    ok(&rmfa(&[
        "train",
        "--config",
        p(&config),
        "--data",
        p(&manifest),
        "--out",
        p(&resumed),
        "--resume",
        p(&ckpt),
    ]));
    let h2 = history(&resumed.join("history.jsonl"));
    assert_eq!(h2.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![2, 3]);
    assert_eq!(h2, h[2..]);
    assert_eq!(
        std::fs::read(resumed.join("weights.rmfw")).unwrap(),
        std::fs::read(full.join("weights.rmfw")).unwrap()
    );

    let weights = full.join("weights.rmfw");
    let (a, b) = (root.path().join("a.ppm"), root.path().join("b.ppm"));
    ok(&rmfa(&[
        "infer",
        "--weights",
        p(&weights),
        "--raw",
        p(&data.join("0000.rawi")),
        "--out",
        p(&a),
    ]));
    ok(&rmfa(&[
        "infer",
        "--weights",
        p(&full.join("final.rmfc")),
        "--raw",
        p(&data.join("0000.rawi")),
        "--out",
        p(&b),
    ]));
    let img = load_ppm(&a).unwrap();
    assert_eq!((img.width, img.height), (32, 32));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let eval_dir = root.path().join("eval");
    let table = ok(&rmfa(&[
        "eval",
        "--weights",
        p(&weights),
        "--data",
        p(&manifest),
        "--out",
        p(&eval_dir),
    ]));
    assert!(table.contains("mean"));
    let lines: Vec<String> = std::fs::read_to_string(eval_dir.join("eval.jsonl"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(lines.len(), 7);
    let rows: Vec<EvalRow> = lines[..6]
        .iter()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let summary: serde_json::Value = serde_json::from_str(&lines[6]).unwrap();
    let mean_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / 6.0;
    let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / 6.0;
    assert!((summary["mean_psnr"].as_f64().unwrap() - mean_psnr).abs() < 1e-12);
    assert!((summary["mean_ssim"].as_f64().unwrap() - mean_ssim).abs() < 1e-12);
    assert_eq!(summary["count"], 6);

    ok(&rmfa(&["eval", "--baseline", "--data", p(&manifest)]));
    assert!(!rmfa(&["eval", "--data", p(&manifest)]).status.success());
}

#[test]
fn ablate_control_has_zero_delta() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.cfg");
    std::fs::write(&config, "blocks = 1\nwidth = 8\n").unwrap();
    let text = ok(&rmfa(&[
        "ablate",
        "--kind",
        "control",
        "--budget",
        "3",
        "--pairs",
        "10",
        "--size",
        "24",
        "--config",
        p(&config),
        "--out",
        p(dir.path()),
    ]));
    assert!(text.contains("+0.000"), "{text}");
    let line = std::fs::read_to_string(dir.path().join("ablation.jsonl")).unwrap();
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["delta_psnr"], 0.0);
    assert!(
        v["reference"]["eval"]["mean_psnr"].is_number()
            && v["ablated"]["eval"]["mean_ssim"].is_number()
    );
}

#[test]
fn gradcheck_fails_on_injected_fault() {
    let out = rmfa(&["gradcheck", "--inject-fault"]);
    assert!(!out.status.success());
    let table = String::from_utf8_lossy(&out.stdout);
    for case in rmfa::autodiff::primitive_cases() {
        assert!(table.contains(&case.name), "missing {}", case.name);
    }
    let failing: Vec<&str> = table.lines().filter(|l| l.ends_with("FAIL")).collect();
    assert_eq!(failing.len(), 1, "{table}");
    assert!(failing[0].starts_with("faulty_sin"));
}

#[test]
fn config_parsing() {
    let c = parse_config(SMALL_CONFIG).unwrap();
    assert_eq!(
        (
            c.model.blocks,
            c.model.width,
            c.epochs,
            c.batch_size,
            c.seed
        ),
        (1, 8, 4, 3, 9)
    );
    let medium = parse_config("preset = medium\n").unwrap();
    assert_eq!(medium.batch_size, 32);
    assert_eq!(parse_config("").unwrap().batch_size, 64);
    assert!(parse_config("colour = blue\n").is_err());
    assert!(parse_config("epochs = 150\n").is_err());
    assert!(parse_config("no equals sign\n").is_err());
    assert!(parse_config("split_mode = four\ntone_mapping = false\n").is_ok());
}
