use std::path::{Path, PathBuf};

use rgbd_gan_cli::{main_with_args, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};

const TINY: &str = "\
model.resolution = 16
model.latent_dim = 16
model.mapping_layers = 1
model.gen_channels = 4:8,8:8,16:8
model.disc_channels = 16:8,8:8,4:8
model.branch_channels = 8
train.checkpoint_every = 50
data.toy_scenes = 12
metrics.pairs = 8
metrics.fake_samples = 8
metrics.holdout = 8
";

fn run(args: &[&str]) -> i32 {
    let mut v = vec!["rgbdgan", "-q"];
    v.extend_from_slice(args);
    main_with_args(v)
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    cfg: String,
    data: String,
}

fn fixture() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let cfg = root.join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let data = root.join("data");
    let code = run(&["make-toy-data", "--config", cfg.to_str().unwrap(), "--out", data.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(code, EXIT_OK);
    Fixture { _tmp: tmp, cfg: cfg.display().to_string(), data: data.display().to_string(), root }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(run(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(run(&["train", "--no-such-flag"]), EXIT_USAGE);
    assert_eq!(run(&["sweep"]), EXIT_USAGE);
    assert_eq!(run(&["--help"]), EXIT_OK);
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("r");
    // data.dir has no default.
    assert_eq!(run(&["train", "--run", p(&run_dir), "--steps", "1"]), EXIT_CONFIG);
    assert_eq!(run(&["train", "--run", p(&run_dir), "--set", "train.batch=one", "--data", "x"]), EXIT_CONFIG);
    assert_eq!(run(&["train", "--run", p(&run_dir), "--set", "bogus.key=1", "--data", "x"]), EXIT_CONFIG);
    assert!(!run_dir.exists());
}

#[test]
fn toy_data_has_manifest_and_echo() {
    let f = fixture();
    let data = Path::new(&f.data);
    let m = rgbd_gan::data::Manifest::read(data).unwrap();
    assert_eq!(m.records.len(), 24);
    assert!(data.join("config.cfg").is_file());
}

#[test]
fn train_then_every_checkpoint_command() {
    let f = fixture();
    let run_dir = f.root.join("train");
    assert_eq!(run(&["train", "--config", &f.cfg, "--data", &f.data, "--steps", "100", "--run", p(&run_dir)]), EXIT_OK);
    for name in ["config.cfg", "metrics.log", "checkpoints/latest", "checkpoints/step_000050.ckpt", "checkpoints/step_000100.ckpt"] {
        assert!(run_dir.join(name).is_file(), "{name}");
    }
    let rows = rgbd_train::read_metrics(&run_dir.join("metrics.log")).unwrap();
    assert_eq!(rows.last().unwrap().0, 100);
    assert!(rows.iter().all(|r| r.2.is_finite()));

    // Reruns refuse to overwrite.
    assert_eq!(run(&["train", "--config", &f.cfg, "--data", &f.data, "--steps", "1", "--run", p(&run_dir)]), EXIT_RUNTIME);

    let out = f.root.join("sweep");
    assert_eq!(run(&["sweep", "--checkpoint", p(&run_dir), "--angles", "-15,-7.5,0,7.5,15", "--run", p(&out)]), EXIT_OK);
    let grid = image::open(out.join("sweep.png")).unwrap();
    assert_eq!((grid.width(), grid.height()), (5 * 16, 2 * 16));

    let out = f.root.join("sample");
    assert_eq!(run(&["sample", "--checkpoint", p(&run_dir), "--n", "3", "--run", p(&out)]), EXIT_OK);
    assert!(out.join("sample_002_depth.png").is_file());

    let out = f.root.join("interp");
    assert_eq!(run(&["interpolate", "--checkpoint", p(&run_dir), "--which", "appearance", "--steps", "4", "--run", p(&out)]), EXIT_OK);
    assert_eq!(image::open(out.join("interpolation.png")).unwrap().width(), 4 * 16);

    let out = f.root.join("metrics");
    assert_eq!(run(&["metrics", "--config", &f.cfg, "--checkpoint", p(&run_dir), "--data", &f.data, "--run", p(&out)]), EXIT_OK);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    for k in ["rp", "rc", "dp_real", "dp_fake", "frechet_distance"] {
        assert!(report[k]["value"].as_f64().unwrap().is_finite(), "{k}");
        assert!(report[k]["n"].as_u64().unwrap() > 0);
    }
    assert_eq!(report["rp"]["n"], 8);

    let out = f.root.join("cloud");
    assert_eq!(run(&["export-pointcloud", "--checkpoint", p(&run_dir), "--run", p(&out)]), EXIT_OK);
    let ply = std::fs::read_to_string(out.join("pointcloud.ply")).unwrap();
    assert!(ply.contains("element vertex 256"));

    let out = f.root.join("predict");
    let rgb = Path::new(&f.data).join("rgb_00000_00.png");
    assert_eq!(run(&["predict-depth", "--checkpoint", p(&run_dir), "--rgb", p(&rgb), "--run", p(&out)]), EXIT_OK);
    assert!(out.join("predicted_depth.png").is_file());
}

#[test]
fn pointcloud_from_an_rgbd_pair() {
    let f = fixture();
    let data = Path::new(&f.data);
    let out = f.root.join("pair");
    let code = run(&[
        "export-pointcloud",
        "--config",
        &f.cfg,
        "--rgb",
        p(&data.join("rgb_00001_00.png")),
        "--depth",
        p(&data.join("depth_00001_00.png")),
        "--run",
        p(&out),
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(std::fs::read_to_string(out.join("pointcloud.ply")).unwrap().contains("element vertex 256"));
}

#[test]
fn resumed_training_appends_to_the_run() {
    let f = fixture();
    let run_dir = f.root.join("t");
    assert_eq!(run(&["train", "--config", &f.cfg, "--data", &f.data, "--steps", "4", "--run", p(&run_dir)]), EXIT_OK);
    assert_eq!(run(&["train", "--resume", p(&run_dir), "--steps", "6"]), EXIT_OK);
    assert!(run_dir.join("checkpoints/step_000006.ckpt").is_file());
    let rows = rgbd_train::read_metrics(&run_dir.join("metrics.log")).unwrap();
    let steps: Vec<u64> = rows.iter().map(|r| r.0).filter(|&s| rows.iter().any(|q| q.1 == "loss_d" && q.0 == s)).collect();
    assert_eq!(*steps.last().unwrap(), 6);
}
