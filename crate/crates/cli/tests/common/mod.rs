#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use nalgebra::Vector3;
use usfield::field::FieldConfig;
use usfield::phantom::{Medium, PhantomConfig, Primitive, Shape, SweepSpec, Texture, TissueMap};
use usfield::pose::Pose;
use usfield::probe::ProbeSpec;
use usfield::trainer::{LrSchedule, TrainConfig};
use usfield::volume::GridSpec;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_usfield"))
}

pub fn usfield(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Three half-overlapping 16×16×8 volumes of a single inclusion.
pub fn small_phantom() -> PhantomConfig {
    let probe = ProbeSpec {
        r_in_mm: 1.0,
        r_out_mm: 8.0,
        opening_angle_deg: 360.0,
        n_rays: 24,
        n_samples: 8,
        s_lat_mm: 2.0 * std::f64::consts::PI * 4.5 / 24.0,
        s_dep_mm: 1.0,
        n_slices: 8,
    };
    let map = TissueMap {
        primitives: vec![Primitive {
            shape: Shape::Ellipsoid,
            pose: Pose::from_translation(Vector3::new(-2.0, 1.0, 8.0)),
            size_mm: [3.0, 2.5, 4.0],
            attenuation_per_mm: 0.03,
            backscatter: 0.85,
        }],
        background: Medium {
            attenuation_per_mm: 0.01,
            backscatter: 0.35,
        },
        texture: Texture {
            amplitude: 0.2,
            correlation_mm: 3.0,
        },
        seed: 3,
    };
    let sweep = SweepSpec {
        start: Pose::identity(),
        end: Pose::from_translation(Vector3::new(0.0, 0.0, 16.0)),
        n_volumes: 3,
        slices_per_volume: 8,
        overlap_fraction: 0.5,
        noise_std: 0.0,
        grid: GridSpec::new(16, 16, 1.0).unwrap(),
    };
    PhantomConfig { map, probe, sweep }
}

pub fn small_train(iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        field: FieldConfig {
            num_layers: 2,
            hidden_width: 32,
            num_bands: 4,
            ..FieldConfig::desk()
        },
        elevational_downsample: 2,
        holdout: Some(1),
        radius_scale: 2.0 / 9.0,
        lr: LrSchedule {
            initial: 3e-3,
            final_lr: 3e-4,
        },
        ..TrainConfig::desk()
    }
}

pub struct Fixture {
    _dir: tempfile::TempDir,
    pub root: PathBuf,
    pub data: PathBuf,
    pub ckpt: PathBuf,
}

/// Dataset and briefly trained checkpoint, built once per test binary via the CLI.
pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let phantom = root.join("phantom.json");
        usfield::io::write_json(&small_phantom(), &phantom).unwrap();
        let train = root.join("train.json");
        usfield::io::write_json(&small_train(60), &train).unwrap();
        let data = root.join("data");
        let out = usfield(&["phantom", "gen", "--config", p(&phantom), "--out", p(&data)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let run = root.join("run");
        let out = usfield(&["train", "--data", p(&data), "--config", p(&train), "--out", p(&run)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        Fixture {
            ckpt: run.join("model.ckpt"),
            data,
            root,
            _dir: dir,
        }
    })
}

pub struct HttpResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).expect("json body")
    }
}

/// One HTTP/1.1 request over a fresh connection.
pub fn http(addr: SocketAddr, method: &str, path: &str, body: Option<&str>) -> HttpResponse {
    let mut stream = TcpStream::connect(addr).expect("connect");
    let body = body.unwrap_or("");
    let req = format!(
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(req.as_bytes()).unwrap();
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw).unwrap();
    let split = raw.windows(4).position(|w| w == b"\r\n\r\n").expect("header end");
    let head = String::from_utf8(raw[..split].to_vec()).unwrap();
    let mut lines = head.split("\r\n");
    let status = lines.next().unwrap().split(' ').nth(1).unwrap().parse().unwrap();
    let headers: Vec<(String, String)> = lines
        .filter_map(|l| l.split_once(':'))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect();
    let mut body = raw[split + 4..].to_vec();
    let chunked = headers
        .iter()
        .any(|(k, v)| k.eq_ignore_ascii_case("transfer-encoding") && v.contains("chunked"));
    if chunked {
        body = dechunk(&body);
    }
    HttpResponse { status, headers, body }
}

fn dechunk(mut raw: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    loop {
        let eol = raw.windows(2).position(|w| w == b"\r\n").unwrap();
        let size = usize::from_str_radix(std::str::from_utf8(&raw[..eol]).unwrap().trim(), 16).unwrap();
        if size == 0 {
            return out;
        }
        out.extend_from_slice(&raw[eol + 2..eol + 2 + size]);
        raw = &raw[eol + 4 + size..];
    }
}

/// Angular extent (degrees) of the nonzero entries of `mask` on an
/// apex-centered `w × h` grid, measured from the +y axis.
pub fn wedge_extent_deg(mask: &[bool], w: usize, h: usize) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for j in 0..h {
        for i in 0..w {
            if mask[i + w * j] {
                let x = i as f64 + 0.5 - 0.5 * w as f64;
                let y = j as f64 + 0.5 - 0.5 * h as f64;
                let a = x.atan2(y).to_degrees();
                lo = lo.min(a);
                hi = hi.max(a);
            }
        }
    }
    hi - lo
}
