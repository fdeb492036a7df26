mod common;

use std::net::TcpListener;

use common::*;
use nalgebra::Vector3;
use usfield::io;
use usfield::pose::Pose;

fn stderr(out: &std::process::Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn usage_errors_exit_1() {
    let out = usfield(&[]);
    assert_eq!(out.status.code(), Some(1));
    let out = usfield(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--bogus"));
    assert!(out.stdout.is_empty());
    let out = usfield(&["train", "--data", "x", "--out", "y", "--mode", "voxel"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_and_version_exit_0() {
    assert_eq!(usfield(&["--help"]).status.code(), Some(0));
    assert_eq!(usfield(&["--version"]).status.code(), Some(0));
    assert_eq!(usfield(&["render", "--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ckpt");
    let out = usfield(&["eval", "--ckpt", p(&missing), "--data", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error:"));
    let out = usfield(&["train", "--data", p(dir.path()), "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn phantom_gen_writes_a_readable_dataset() {
    let f = fixture();
    let data = io::read_dataset(&f.data).unwrap();
    assert_eq!(data.volumes.len(), 3);
    assert_eq!(data.volumes[0].volume.dims, [16, 16, 8]);
    let manifest: serde_json::Value = io::read_json(f.data.join("manifest.json")).unwrap();
    assert_eq!(manifest["generator_config_hash"], small_phantom().hash());
}

#[test]
fn train_writes_checkpoint_loss_csv_and_config() {
    let f = fixture();
    let run = f.ckpt.parent().unwrap();
    let model = io::read_checkpoint(&f.ckpt).unwrap();
    assert_eq!(model.params.config.hidden_width, 32);
    let csv = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 61);
    assert!(csv.starts_with("step,total,mse,ssim,grad,reg"));
    let cfg: usfield::trainer::TrainConfig = io::read_json(run.join("config.json")).unwrap();
    assert_eq!(cfg.iterations, 60);
}

#[test]
fn eval_prints_report_json() {
    let f = fixture();
    let out = usfield(&["eval", "--ckpt", p(&f.ckpt), "--data", p(&f.data), "--holdout", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["psnr_db", "ssim", "seam_ratio"] {
        assert!(report[key].as_f64().unwrap().is_finite(), "{key}");
    }
    let out = usfield(&["eval", "--ckpt", p(&f.ckpt), "--data", p(&f.data), "--holdout", "7"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn render_off_trajectory_produces_png() {
    let f = fixture();
    let pose_path = f.root.join("off.json");
    let pose = Pose::from_axis_angle(Vector3::z(), 0.3, Vector3::new(10.0, 0.0, 8.0));
    std::fs::write(&pose_path, serde_json::to_string(&pose).unwrap()).unwrap();
    let png = f.root.join("off.png");
    let out = usfield(&[
        "render",
        "--ckpt",
        p(&f.ckpt),
        "--pose",
        p(&pose_path),
        "--out",
        p(&png),
        "--opening-angle",
        "20",
        "--rays",
        "16",
        "--samples",
        "12",
        "--width",
        "40",
        "--height",
        "30",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let (w, h, pixels) = io::decode_png(&std::fs::read(&png).unwrap()).unwrap();
    assert_eq!((w, h), (40, 30));
    assert!(pixels.iter().any(|v| *v > 0));
}

#[test]
fn panorama_writes_volume() {
    let f = fixture();
    let vol = f.root.join("pano.vol");
    let out = usfield(&["panorama", "--ckpt", p(&f.ckpt), "--out", p(&vol), "--planes", "10"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let grid = io::read_volume(&vol).unwrap();
    assert_eq!(grid.dims, [16, 16, 10]);
    assert_eq!(grid.poses.len(), 10);
}

#[test]
fn point_and_mvg_runs_give_distinct_loadable_checkpoints() {
    let f = fixture();
    let cfg = f.root.join("ablation.json");
    io::write_json(&small_train(8), &cfg).unwrap();
    let mut models = Vec::new();
    for mode in ["point", "mvg"] {
        let out_dir = f.root.join(format!("ablation_{mode}"));
        let out = usfield(&[
            "train",
            "--data",
            p(&f.data),
            "--config",
            p(&cfg),
            "--out",
            p(&out_dir),
            "--mode",
            mode,
            "--seed",
            "5",
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        models.push(io::read_checkpoint(out_dir.join("model.ckpt")).unwrap());
    }
    assert_eq!(models[0].sampler.mode, usfield::frustum::SamplingMode::Point);
    assert_eq!(models[1].sampler.mode, usfield::frustum::SamplingMode::Mvg);
    assert_ne!(models[0].params, models[1].params);
}

#[test]
fn periodic_checkpoints_and_downsample_flag() {
    let f = fixture();
    let mut cfg = small_train(6);
    cfg.checkpoint_every = 3;
    let cfg_path = f.root.join("periodic.json");
    io::write_json(&cfg, &cfg_path).unwrap();
    let out_dir = f.root.join("periodic");
    let out = usfield(&[
        "train",
        "--data",
        p(&f.data),
        "--config",
        p(&cfg_path),
        "--out",
        p(&out_dir),
        "--elev-downsample",
        "4",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for step in [3, 6] {
        io::read_checkpoint(out_dir.join(format!("step_{step:06}.ckpt"))).unwrap();
    }
    let model = io::read_checkpoint(out_dir.join("model.ckpt")).unwrap();
    assert_eq!(model.probe.n_slices, 2);
}

#[test]
fn serve_on_a_taken_port_fails() {
    let f = fixture();
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let out = usfield(&["serve", "--ckpt", p(&f.ckpt), "--port", &port]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cannot bind"));
}

#[test]
fn serve_prints_address_and_answers() {
    use std::io::{BufRead, BufReader};
    let f = fixture();
    let mut child = bin()
        .args(["serve", "--ckpt", p(&f.ckpt)])
        .env("USFIELD_PORT", "0")
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap().parse().unwrap();
    let res = http(addr, "GET", "/health", None);
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(res.status, 200);
    assert_eq!(res.json(), serde_json::json!({"status": "ok"}));
}
