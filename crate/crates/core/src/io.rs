//! On-disk formats: volumes, pose files, datasets, checkpoints, loss CSV and
//! PNG slices.
//!
//! Volumes and checkpoints share one container: a compact JSON header, a
//! single `\n`, then a little-endian `f32` payload.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoding::SceneBounds;
use crate::error::{Error, Result};
use crate::field::{AdamState, FieldConfig, FieldParams, Mlp};
use crate::frustum::Sampler;
use crate::losses::LossReport;
use crate::phantom::{Dataset, PhantomConfig, SweepLayout, TrackedVolume};
use crate::pose::Pose;
use crate::probe::ProbeSpec;
use crate::trainer::TrainedModel;
use crate::volume::{GridSpec, VolumeGrid};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct VolumeHeader {
    dims: [usize; 3],
    spacing_mm: f64,
    dtype: String,
    order: String,
    poses: Vec<Pose>,
    /// Alternating run lengths of the fan mask, starting with masked-out voxels.
    mask_runs: Vec<usize>,
}

fn encode_runs(mask: &[bool]) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0;
    for &m in mask {
        if m == current {
            len += 1;
        } else {
            runs.push(len);
            current = m;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

fn decode_runs(runs: &[usize], n: usize, path: &Path) -> Result<Vec<bool>> {
    let mut mask = Vec::with_capacity(n);
    for (i, &r) in runs.iter().enumerate() {
        if mask.len() + r > n {
            return Err(Error::format(path, "mask runs exceed voxel count"));
        }
        mask.extend(std::iter::repeat_n(i % 2 == 1, r));
    }
    if mask.len() != n {
        return Err(Error::format(path, "mask runs do not cover every voxel"));
    }
    Ok(mask)
}

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn f32_values(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn split_container<'a>(bytes: &'a [u8], path: &Path) -> Result<(&'a [u8], &'a [u8])> {
    let nl = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| Error::format(path, "missing header terminator"))?;
    Ok((&bytes[..nl], &bytes[nl + 1..]))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Serialized volume bytes: header, newline, `f32` payload.
pub fn volume_bytes(grid: &VolumeGrid) -> Result<Vec<u8>> {
    let header = VolumeHeader {
        dims: grid.dims,
        spacing_mm: grid.spacing_mm,
        dtype: "f32le".into(),
        order: "x-fastest".into(),
        poses: grid.poses.clone(),
        mask_runs: encode_runs(&grid.fan_mask),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.extend(f32_bytes(&grid.data));
    Ok(out)
}

pub fn parse_volume(bytes: &[u8], path: &Path) -> Result<VolumeGrid> {
    let (head, payload) = split_container(bytes, path)?;
    let header: VolumeHeader =
        serde_json::from_slice(head).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    if header.dtype != "f32le" || header.order != "x-fastest" {
        return Err(Error::format(
            path,
            format!("unsupported layout {} / {}", header.dtype, header.order),
        ));
    }
    let n = header.dims.iter().product::<usize>();
    if payload.len() != 4 * n {
        return Err(Error::PayloadSize {
            expected: 4 * n,
            found: payload.len(),
        });
    }
    let mask = decode_runs(&header.mask_runs, n, path)?;
    let data = f32_values(payload);
    if data.iter().zip(&mask).any(|(v, m)| !m && *v != 0.0) {
        return Err(Error::format(path, "masked-out voxel holds a nonzero value"));
    }
    VolumeGrid::new(header.dims, header.spacing_mm, data, mask, header.poses)
}

pub fn write_volume(grid: &VolumeGrid, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &volume_bytes(grid)?)
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<VolumeGrid> {
    let path = path.as_ref();
    parse_volume(&read_file(path)?, path)
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseFile {
    poses: Vec<Pose>,
}

pub fn poses_json(poses: &[Pose]) -> Result<String> {
    Ok(serde_json::to_string(&PoseFile { poses: poses.to_vec() })?)
}

pub fn write_poses(poses: &[Pose], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), poses_json(poses)?.as_bytes())
}

pub fn parse_poses(text: &[u8], path: &Path) -> Result<Vec<Pose>> {
    let file: PoseFile =
        serde_json::from_slice(text).map_err(|e| Error::format(path, format!("bad pose file: {e}")))?;
    Ok(file.poses)
}

pub fn read_poses(path: impl AsRef<Path>) -> Result<Vec<Pose>> {
    let path = path.as_ref();
    parse_poses(&read_file(path)?, path)
}

/// A single pose, as a bare 16-number array or a one-entry pose file.
pub fn read_pose(path: impl AsRef<Path>) -> Result<Pose> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    if let Ok(p) = serde_json::from_slice::<Pose>(&bytes) {
        return Ok(p);
    }
    let poses = parse_poses(&bytes, path)?;
    match poses.as_slice() {
        [p] => Ok(*p),
        _ => Err(Error::format(path, format!("expected one pose, found {}", poses.len()))),
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    serde_json::from_slice(&read_file(path)?).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &serde_json::to_vec_pretty(value)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeEntry {
    pub volume: String,
    pub poses: String,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub probe: ProbeSpec,
    pub grid: GridSpec,
    pub volumes: Vec<VolumeEntry>,
    pub generator_config_hash: String,
    pub layout: SweepLayout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<PhantomConfig>,
}

/// Writes `manifest.json`, one volume file and one pose file per volume.
pub fn write_dataset(dataset: &Dataset, generator: Option<&PhantomConfig>, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for v in &dataset.volumes {
        let volume = format!("volume_{:03}.vol", v.index);
        let poses = format!("poses_{:03}.json", v.index);
        write_volume(&v.volume, dir.join(&volume))?;
        write_poses(&v.volume.poses, dir.join(&poses))?;
        entries.push(VolumeEntry {
            volume,
            poses,
            index: v.index,
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        probe: dataset.probe.clone(),
        grid: dataset.grid,
        volumes: entries,
        generator_config_hash: dataset.config_hash.clone(),
        layout: dataset.layout.clone(),
        generator: generator.cloned(),
    };
    let path = dir.join(MANIFEST_FILE);
    write_json(&manifest, &path)?;
    Ok(path)
}

/// Accepts a manifest path or the directory holding `manifest.json`.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut path = path.as_ref().to_path_buf();
    if path.is_dir() {
        path = path.join(MANIFEST_FILE);
    }
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let raw: serde_json::Value = read_json(&path)?;
    let found = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != MANIFEST_VERSION {
        return Err(Error::Version {
            found,
            expected: MANIFEST_VERSION,
        });
    }
    let manifest: DatasetManifest =
        serde_json::from_value(raw).map_err(|e| Error::format(&path, e.to_string()))?;
    let probe = manifest.probe.clone();
    let grid = manifest.grid;
    let mut volumes = Vec::new();
    for entry in &manifest.volumes {
        let vpath = dir.join(&entry.volume);
        if !vpath.is_file() {
            return Err(Error::MissingVolumeFile(vpath));
        }
        let ppath = dir.join(&entry.poses);
        if !ppath.is_file() {
            return Err(Error::MissingPoseFile(ppath));
        }
        let mut volume = read_volume(&vpath)?;
        let poses = read_poses(&ppath)?;
        let expected = [grid.width, grid.height, probe.n_slices];
        if volume.dims != expected {
            return Err(Error::DimMismatch(format!(
                "{} has dims {:?}, manifest implies {:?}",
                vpath.display(),
                volume.dims,
                expected
            )));
        }
        if poses.len() != probe.n_slices {
            return Err(Error::PoseCount(format!(
                "{} lists {} poses for {} slices per volume",
                ppath.display(),
                poses.len(),
                probe.n_slices
            )));
        }
        volume.poses = poses;
        volumes.push(TrackedVolume {
            index: entry.index,
            volume,
        });
    }
    Ok(Dataset {
        probe,
        grid,
        volumes,
        layout: manifest.layout,
        config_hash: manifest.generator_config_hash,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    field: FieldConfig,
    widths: Vec<usize>,
    step: u64,
    bounds: SceneBounds,
    probe: ProbeSpec,
    sampler: Sampler,
    radius_scale: f64,
    grid: GridSpec,
    layout: SweepLayout,
    trajectory: Vec<Pose>,
    last_loss: Option<LossReport>,
    /// `(name, f32 count)` of each payload section, in order.
    sections: Vec<(String, usize)>,
}

const CHECKPOINT_FORMAT: &str = "usfield-checkpoint";

pub fn checkpoint_bytes(model: &TrainedModel) -> Result<Vec<u8>> {
    let p = &model.params;
    let n = p.mlp.params().len();
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        field: p.config.clone(),
        widths: p.mlp.widths().to_vec(),
        step: p.adam.step,
        bounds: model.bounds,
        probe: model.probe.clone(),
        sampler: model.sampler,
        radius_scale: model.radius_scale,
        grid: model.grid,
        layout: model.layout.clone(),
        trajectory: model.trajectory.clone(),
        last_loss: model.last_loss,
        sections: vec![("params".into(), n), ("adam_m".into(), n), ("adam_v".into(), n)],
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.extend(f32_bytes(p.mlp.params()));
    out.extend(f32_bytes(&p.adam.m));
    out.extend(f32_bytes(&p.adam.v));
    Ok(out)
}

pub fn parse_checkpoint(bytes: &[u8], path: &Path) -> Result<TrainedModel> {
    let (head, payload) = split_container(bytes, path)?;
    let header: CheckpointHeader =
        serde_json::from_slice(head).map_err(|e| Error::format(path, format!("bad checkpoint header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::format(path, "not a checkpoint"));
    }
    if header.version != 1 {
        return Err(Error::Version {
            found: header.version,
            expected: 1,
        });
    }
    if header.widths != header.field.widths() {
        return Err(Error::DimMismatch(format!(
            "checkpoint widths {:?} disagree with its field config",
            header.widths
        )));
    }
    let n = header.field.param_count();
    let names: Vec<&str> = header.sections.iter().map(|(s, _)| s.as_str()).collect();
    if names != ["params", "adam_m", "adam_v"] || header.sections.iter().any(|(_, len)| *len != n) {
        return Err(Error::format(path, "unexpected checkpoint sections"));
    }
    if payload.len() != 12 * n {
        return Err(Error::PayloadSize {
            expected: 12 * n,
            found: payload.len(),
        });
    }
    let values = f32_values(payload);
    let mlp = Mlp::from_params(header.widths.clone(), values[..n].to_vec())?;
    let adam = AdamState {
        m: values[n..2 * n].to_vec(),
        v: values[2 * n..].to_vec(),
        step: header.step,
    };
    Ok(TrainedModel {
        params: FieldParams {
            config: header.field,
            mlp,
            adam,
        },
        bounds: header.bounds,
        probe: header.probe,
        sampler: header.sampler,
        radius_scale: header.radius_scale,
        grid: header.grid,
        layout: header.layout,
        trajectory: header.trajectory,
        last_loss: header.last_loss,
    })
}

pub fn write_checkpoint(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &checkpoint_bytes(model)?)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    parse_checkpoint(&read_file(path)?, path)
}

/// Loss history as CSV: `step,total,mse,ssim,grad,reg`.
pub fn write_loss_csv(history: &[LossReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let to_err = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(["step", "total", "mse", "ssim", "grad", "reg"]).map_err(to_err)?;
    for (step, r) in history.iter().enumerate() {
        w.write_record([
            step.to_string(),
            r.total.to_string(),
            r.mse.to_string(),
            r.ssim_loss.to_string(),
            r.grad_loss.to_string(),
            r.reg_loss.to_string(),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            _ => Err(Error::Usage(format!("axis must be x, y or z, got {s:?}"))),
        }
    }
}

/// `round(v · 255)` with halves rounded up, after clamping to `[0, 1]`.
pub fn quantize(v: f32) -> u8 {
    ((v.clamp(0.0, 1.0) as f64) * 255.0 + 0.5).floor() as u8
}

/// 8-bit pixels of one axis-aligned slice: `z` → W×H, `y` → W×D, `x` → H×D.
pub fn slice_pixels(grid: &VolumeGrid, axis: Axis, index: usize) -> Result<(u32, u32, Vec<u8>)> {
    let [w, h, d] = grid.dims;
    let limit = match axis {
        Axis::X => w,
        Axis::Y => h,
        Axis::Z => d,
    };
    if index >= limit {
        return Err(Error::Usage(format!(
            "slice index {index} out of range for {axis:?} axis of length {limit}"
        )));
    }
    let (cols, rows) = match axis {
        Axis::X => (h, d),
        Axis::Y => (w, d),
        Axis::Z => (w, h),
    };
    let mut px = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            let (i, j, k) = match axis {
                Axis::X => (index, c, r),
                Axis::Y => (c, index, r),
                Axis::Z => (c, r, index),
            };
            let v = grid.index(i, j, k);
            px.push(if grid.fan_mask[v] { quantize(grid.data[v]) } else { 0 });
        }
    }
    Ok((cols as u32, rows as u32, px))
}

pub fn encode_png(width: u32, height: u32, pixels: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Usage(format!("png header: {e}")))?;
        writer
            .write_image_data(pixels)
            .map_err(|e| Error::Usage(format!("png data: {e}")))?;
    }
    Ok(out)
}

pub fn slice_png(grid: &VolumeGrid, axis: Axis, index: usize) -> Result<Vec<u8>> {
    let (w, h, px) = slice_pixels(grid, axis, index)?;
    encode_png(w, h, &px)
}

pub fn export_slice_png(grid: &VolumeGrid, axis: Axis, index: usize, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &slice_png(grid, axis, index)?)
}

/// Decodes an 8-bit grayscale PNG into `(width, height, pixels)`.
pub fn decode_png(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>)> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Usage(format!("png decode: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Usage(format!("png decode: {e}")))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Usage("expected 8-bit grayscale".into()));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width, info.height, buf))
}
