//! Training loop, evaluation metrics and the sampling ablation.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::{feature_len, SceneBounds};
use crate::error::{Error, Result};
use crate::field::{
    exponential_lr, init, optimizer_step, AcousticSample, FieldConfig, FieldParams, ForwardCache,
    NeuralField,
};
use crate::frustum::{probe_segments, GaussianRadii, Sampler, SamplingMode};
use crate::losses::{self, tv_attenuation_with_grad, LossConfig, LossReport, RegularizerKind, Voxels};
use crate::phantom::{holdout_split, Dataset, SweepLayout, TrackedVolume};
use crate::pose::Pose;
use crate::probe::{cast_slice_rays, ProbeSpec};
use crate::render::{integrate_ray, integrate_ray_backward, render_panorama, render_volume, ScanMap};
use crate::volume::{GridSpec, VolumeGrid};

/// Reported PSNR for a perfect reconstruction.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    #[serde(rename = "final")]
    pub final_lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub volumes_per_step: usize,
    pub lr: LrSchedule,
    pub loss: LossConfig,
    pub field: FieldConfig,
    pub sampling_mode: SamplingMode,
    pub elevational_downsample: usize,
    pub seed: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Multiplier on the base frustum radii.
    pub radius_scale: f64,
    /// Volume withheld from training, if any.
    #[serde(default)]
    pub holdout: Option<usize>,
    /// Padding of the encoder's scene box around the swept region.
    #[serde(default = "default_margin")]
    pub bounds_margin_mm: f64,
}

fn default_margin() -> f64 {
    2.0
}

impl TrainConfig {
    /// Desk-scale preset for the reference phantom.
    pub fn desk() -> Self {
        let probe = ProbeSpec::desk_annular();
        Self {
            iterations: 2000,
            volumes_per_step: 1,
            lr: LrSchedule {
                initial: 1.5e-3,
                final_lr: 1.5e-4,
            },
            loss: LossConfig::default(),
            field: FieldConfig::desk(),
            sampling_mode: SamplingMode::Mvg,
            elevational_downsample: 2,
            seed: 0,
            checkpoint_every: 0,
            radius_scale: 2.0 / (probe.r_in_mm + probe.r_out_mm),
            holdout: Some(crate::phantom::REFERENCE_HOLDOUT),
            bounds_margin_mm: default_margin(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.volumes_per_step < 1 {
            return Err(Error::Config("volumes_per_step must be at least 1".into()));
        }
        if self.elevational_downsample < 1 {
            return Err(Error::Config("elevational_downsample must be at least 1".into()));
        }
        if !(self.lr.initial > 0.0 && self.lr.final_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.radius_scale > 0.0 && self.radius_scale.is_finite()) {
            return Err(Error::Config("radius_scale must be positive".into()));
        }
        self.loss.validate()?;
        self.field.validate()
    }
}

/// Probe as seen by the trainer after keeping every `k`-th slice.
pub fn downsampled_probe(probe: &ProbeSpec, k: usize) -> ProbeSpec {
    ProbeSpec {
        s_dep_mm: probe.s_dep_mm * k as f64,
        n_slices: probe.n_slices.div_ceil(k),
        ..probe.clone()
    }
}

/// Keeps planes `0, k, 2k, …`.
pub fn downsample_volume(volume: &VolumeGrid, k: usize) -> VolumeGrid {
    let planes: Vec<usize> = (0..volume.dims[2]).step_by(k).collect();
    volume.select_planes(&planes)
}

/// Everything needed to query and render a trained field.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub params: FieldParams,
    pub bounds: SceneBounds,
    /// Training probe, with s_dep already scaled by the downsampling factor.
    pub probe: ProbeSpec,
    pub sampler: Sampler,
    pub radius_scale: f64,
    pub grid: GridSpec,
    pub layout: SweepLayout,
    /// Every slice pose of the training manifest, in order.
    pub trajectory: Vec<Pose>,
    pub last_loss: Option<LossReport>,
}

impl TrainedModel {
    pub fn field(&self) -> NeuralField {
        NeuralField::new(self.params.mlp.clone(), self.bounds, self.params.config.num_bands)
            .expect("model widths match its config")
    }

    /// Renders every pose with `probe`'s geometry and the trained footprint.
    pub fn render(&self, probe: &ProbeSpec, poses: &[Pose], grid: GridSpec) -> VolumeGrid {
        render_volume(&self.field(), probe, poses, &self.sampler, grid)
    }

    pub fn panorama(&self, planes: usize) -> Result<VolumeGrid> {
        render_panorama(&self.field(), &self.probe, &self.layout.path, &self.sampler, planes, self.grid)
    }
}

/// Encoder box around every ray of every slice in the dataset.
pub fn scene_bounds(dataset: &Dataset, margin_mm: f64) -> Result<SceneBounds> {
    let probe = &dataset.probe;
    let points = dataset.all_poses().into_iter().flat_map(|pose| {
        cast_slice_rays(probe, &pose)
            .into_iter()
            .flat_map(|r| [r.origin, r.at(r.t_max)])
            .collect::<Vec<Vector3<f64>>>()
    });
    SceneBounds::enclosing(points, margin_mm)
}

pub fn training_sampler(probe: &ProbeSpec, mode: SamplingMode, radius_scale: f64) -> Result<Sampler> {
    Ok(Sampler::new(mode, GaussianRadii::for_probe(probe)?.scaled(radius_scale)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub history: Vec<LossReport>,
}

struct SliceInputs {
    features: Vec<f32>,
}

struct PreparedVolume {
    slices: Vec<SliceInputs>,
    truth: Vec<f64>,
    mask: Vec<bool>,
    dims: [usize; 3],
}

fn prepare(volume: &VolumeGrid, probe: &ProbeSpec, sampler: &Sampler, bounds: &SceneBounds, bands: usize) -> PreparedVolume {
    let segments = probe_segments(probe);
    let width = feature_len(bands);
    let slices = volume
        .poses
        .par_iter()
        .map(|pose| {
            let rays = cast_slice_rays(probe, pose);
            let mut features = vec![0.0f32; rays.len() * segments.len() * width];
            let mut rows = features.chunks_exact_mut(width);
            for ray in &rays {
                for g in sampler.frustums(ray, &segments) {
                    bounds.encode_gaussian(&g, bands, rows.next().expect("sized above"));
                }
            }
            SliceInputs { features }
        })
        .collect();
    PreparedVolume {
        slices,
        truth: volume.data_f64(),
        mask: volume.fan_mask.clone(),
        dims: volume.dims,
    }
}

struct SliceForward {
    cache: ForwardCache<f32>,
    samples: Vec<AcousticSample>,
    plane: Vec<f64>,
}

fn slice_forward(params: &FieldParams, inputs: &SliceInputs, probe: &ProbeSpec, scan: &ScanMap) -> Result<SliceForward> {
    let width = params.mlp.input_len();
    let batch = inputs.features.len() / width;
    let cache = params.mlp.forward(inputs.features.clone(), batch)?;
    let samples: Vec<AcousticSample> = cache
        .outputs()
        .into_iter()
        .map(|(a, b)| AcousticSample {
            attenuation_per_mm: a as f64,
            backscatter: b as f64,
        })
        .collect();
    let mut fan = vec![0.0; samples.len()];
    let seg = probe.segment_length_mm();
    for (s, o) in samples
        .chunks_exact(probe.n_samples)
        .zip(fan.chunks_exact_mut(probe.n_samples))
    {
        integrate_ray(s, seg, o);
    }
    let mut plane = vec![0.0; scan.grid.voxels()];
    scan.apply(&fan, &mut plane);
    Ok(SliceForward {
        cache,
        samples,
        plane,
    })
}

/// Loss and parameter gradient for one volume at `params`.
fn volume_gradient(
    params: &FieldParams,
    vol: &PreparedVolume,
    probe: &ProbeSpec,
    scan: &ScanMap,
    config: &TrainConfig,
    step: usize,
) -> Result<(LossReport, Vec<f64>)> {
    let forwards: Vec<SliceForward> = vol
        .slices
        .par_iter()
        .map(|s| slice_forward(params, s, probe, scan))
        .collect::<Result<_>>()?;
    let pred: Vec<f64> = forwards.iter().flat_map(|f| f.plane.iter().copied()).collect();
    let reg_active = config.loss.regularizer == RegularizerKind::TvAttenuation && config.loss.lambda_reg > 0.0;
    let n_slices = forwards.len() as f64;
    let reg: Vec<(f64, Vec<f64>)> = if reg_active {
        forwards
            .iter()
            .map(|f| {
                let alpha: Vec<f64> = f.samples.iter().map(|s| s.attenuation_per_mm).collect();
                tv_attenuation_with_grad(&alpha, probe.n_rays, probe.n_samples)
            })
            .collect()
    } else {
        Vec::new()
    };
    let reg_loss = reg.iter().map(|r| r.0).sum::<f64>() / n_slices.max(1.0);
    let (report, voxel_grad) = losses::total_loss_with_grad(
        &Voxels::new(vol.dims, &pred, &vol.mask),
        &Voxels::new(vol.dims, &vol.truth, &vol.mask),
        &config.loss,
        step,
        config.iterations,
        reg_loss,
    )?;
    let plane_len = scan.grid.voxels();
    let seg = probe.segment_length_mm();
    let per_slice: Vec<Vec<f32>> = forwards
        .par_iter()
        .enumerate()
        .map(|(k, f)| {
            let mut fan_grad = vec![0.0; scan.fan_len];
            scan.apply_adjoint(&voxel_grad[k * plane_len..(k + 1) * plane_len], &mut fan_grad);
            let mut sample_grads = vec![(0.0, 0.0); f.samples.len()];
            for ((s, g), out) in f
                .samples
                .chunks_exact(probe.n_samples)
                .zip(fan_grad.chunks_exact(probe.n_samples))
                .zip(sample_grads.chunks_exact_mut(probe.n_samples))
            {
                integrate_ray_backward(s, seg, g, out);
            }
            if reg_active {
                let w = config.loss.lambda_reg / n_slices;
                for (sg, r) in sample_grads.iter_mut().zip(&reg[k].1) {
                    sg.0 += w * r;
                }
            }
            let output_grads: Vec<(f32, f32)> = sample_grads.iter().map(|(a, b)| (*a as f32, *b as f32)).collect();
            let mut g = vec![0.0f32; params.mlp.params().len()];
            params.mlp.backward(&f.cache, &output_grads, &mut g)?;
            Ok(g)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0f64; params.mlp.params().len()];
    for g in &per_slice {
        for (t, v) in total.iter_mut().zip(g) {
            *t += *v as f64;
        }
    }
    Ok((report, total))
}

/// Trains a field on `dataset`, calling `on_checkpoint` every
/// `checkpoint_every` steps with a snapshot of the model.
pub fn train_with(
    dataset: &Dataset,
    config: &TrainConfig,
    on_checkpoint: &mut dyn FnMut(&TrainedModel, usize) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    dataset.probe.validate()?;
    let train_set = match config.holdout {
        Some(i) => holdout_split(dataset, i)?.0,
        None => dataset.clone(),
    };
    if train_set.volumes.is_empty() {
        return Err(Error::Training("dataset has no training volumes".into()));
    }
    let k = config.elevational_downsample;
    let probe = downsampled_probe(&dataset.probe, k);
    let sampler = training_sampler(&probe, config.sampling_mode, config.radius_scale)?;
    let bounds = scene_bounds(dataset, config.bounds_margin_mm)?;
    let scan = ScanMap::new(&probe, dataset.grid);
    let bands = config.field.num_bands;
    let prepared: Vec<PreparedVolume> = train_set
        .volumes
        .iter()
        .map(|v| prepare(&downsample_volume(&v.volume, k), &probe, &sampler, &bounds, bands))
        .collect();

    let mut model = TrainedModel {
        params: init(&config.field)?,
        bounds,
        probe: probe.clone(),
        sampler,
        radius_scale: config.radius_scale,
        grid: dataset.grid,
        layout: dataset.layout.clone(),
        trajectory: dataset.all_poses(),
        last_loss: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut history = Vec::with_capacity(config.iterations);
    for step in 0..config.iterations {
        let mut grads = vec![0.0f64; model.params.mlp.params().len()];
        let mut step_report: Option<LossReport> = None;
        for _ in 0..config.volumes_per_step {
            if order.is_empty() {
                order = (0..prepared.len()).collect();
                order.shuffle(&mut rng);
            }
            let v = order.pop().expect("refilled above");
            let (report, g) = volume_gradient(&model.params, &prepared[v], &probe, &scan, config, step)?;
            if !report.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    last_finite: Box::new(model.params.clone()),
                });
            }
            for (a, b) in grads.iter_mut().zip(&g) {
                *a += b;
            }
            step_report = Some(match step_report {
                None => report,
                Some(r) => LossReport {
                    total: r.total + report.total,
                    mse: r.mse + report.mse,
                    ssim_loss: r.ssim_loss + report.ssim_loss,
                    grad_loss: r.grad_loss + report.grad_loss,
                    reg_loss: r.reg_loss + report.reg_loss,
                },
            });
        }
        let m = config.volumes_per_step as f64;
        let r = step_report.expect("at least one volume per step");
        let report = LossReport {
            total: r.total / m,
            mse: r.mse / m,
            ssim_loss: r.ssim_loss / m,
            grad_loss: r.grad_loss / m,
            reg_loss: r.reg_loss / m,
        };
        let grads: Vec<f32> = grads.iter().map(|g| (g / m) as f32).collect();
        let lr = exponential_lr(config.lr.initial, config.lr.final_lr, step, config.iterations);
        optimizer_step(&mut model.params, &grads, lr)?;
        history.push(report);
        model.last_loss = Some(report);
        if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 {
            on_checkpoint(&model, step + 1)?;
        }
    }
    Ok(TrainOutcome { model, history })
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, config, &mut |_, _| Ok(()))
}

/// Training loss at `params` for one volume, without an optimizer step.
pub fn volume_loss(
    params: &FieldParams,
    dataset: &Dataset,
    volume: &TrackedVolume,
    config: &TrainConfig,
    step: usize,
) -> Result<LossReport> {
    let k = config.elevational_downsample;
    let probe = downsampled_probe(&dataset.probe, k);
    let sampler = training_sampler(&probe, config.sampling_mode, config.radius_scale)?;
    training_loss_with(params, dataset, volume, config, step, &sampler)
}

/// Same as [`volume_loss`] with an explicit sampler.
pub fn training_loss_with(
    params: &FieldParams,
    dataset: &Dataset,
    volume: &TrackedVolume,
    config: &TrainConfig,
    step: usize,
    sampler: &Sampler,
) -> Result<LossReport> {
    let k = config.elevational_downsample;
    let probe = downsampled_probe(&dataset.probe, k);
    let bounds = scene_bounds(dataset, config.bounds_margin_mm)?;
    let scan = ScanMap::new(&probe, dataset.grid);
    let prepared = prepare(&downsample_volume(&volume.volume, k), &probe, sampler, &bounds, config.field.num_bands);
    Ok(volume_gradient(params, &prepared, &probe, &scan, config, step)?.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub seam_ratio: f64,
    pub in_mask_voxels: usize,
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

/// Concatenates volumes along z for pooled statistics.
fn stack(volumes: &[&VolumeGrid]) -> Result<VolumeGrid> {
    let first = volumes
        .first()
        .ok_or_else(|| Error::Usage("nothing to evaluate".into()))?;
    let mut data = Vec::new();
    let mut mask = Vec::new();
    let mut depth = 0;
    for v in volumes {
        if v.dims[..2] != first.dims[..2] {
            return Err(Error::DimMismatch(format!("{:?} vs {:?}", v.dims, first.dims)));
        }
        data.extend_from_slice(&v.data);
        mask.extend_from_slice(&v.fan_mask);
        depth += v.dims[2];
    }
    VolumeGrid::new([first.dims[0], first.dims[1], depth], first.spacing_mm, data, mask, vec![])
}

/// PSNR and mean local SSIM of `pred` against `truth`, in-mask.
pub fn compare(pred: &VolumeGrid, truth: &VolumeGrid) -> Result<(f64, f64, usize)> {
    let count = truth.mask_count();
    if count == 0 {
        return Err(Error::Usage("evaluation mask is empty".into()));
    }
    let mse = losses::mse(pred, truth)?;
    let ssim = 1.0 - losses::ssim_loss(pred, truth)?;
    Ok((psnr_from_mse(mse), ssim, count))
}

/// Renders `volumes` at their poses and scores them; the seam ratio comes
/// from the model's panorama.
pub fn evaluate(model: &TrainedModel, probe: &ProbeSpec, volumes: &[TrackedVolume]) -> Result<EvalReport> {
    let rendered: Vec<VolumeGrid> = volumes
        .iter()
        .map(|v| {
            let grid = GridSpec::new(v.volume.dims[0], v.volume.dims[1], v.volume.spacing_mm)?;
            Ok(model.render(probe, &v.volume.poses, grid))
        })
        .collect::<Result<_>>()?;
    let pred = stack(&rendered.iter().collect::<Vec<_>>())?;
    let truth = stack(&volumes.iter().map(|v| &v.volume).collect::<Vec<_>>())?;
    let (psnr_db, ssim, in_mask_voxels) = compare(&pred, &truth)?;
    let panorama = model.panorama(model.layout.planes)?;
    let seam_ratio = seam_metric(&panorama, &model.layout.boundary_planes)?;
    Ok(EvalReport {
        psnr_db,
        ssim,
        seam_ratio,
        in_mask_voxels,
    })
}

/// Mean in-mask `|P[p] − P[p−1]|` for `p ≥ 1`.
fn plane_differences(panorama: &VolumeGrid) -> Vec<f64> {
    let n = panorama.plane_len();
    (1..panorama.dims[2])
        .map(|p| {
            let (mut sum, mut count) = (0.0, 0usize);
            for i in 0..n {
                let (a, b) = (p * n + i, (p - 1) * n + i);
                if panorama.fan_mask[a] && panorama.fan_mask[b] {
                    sum += (panorama.data[a] as f64 - panorama.data[b] as f64).abs();
                    count += 1;
                }
            }
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        })
        .collect()
}

/// Boundary-to-interior ratio of elevational differences; `1.0` is seam-free.
pub fn seam_metric(panorama: &VolumeGrid, boundary_planes: &[usize]) -> Result<f64> {
    let depth = panorama.dims[2];
    if boundary_planes.is_empty() {
        return Err(Error::Usage("no boundary planes given".into()));
    }
    if let Some(b) = boundary_planes.iter().find(|b| **b == 0 || **b >= depth) {
        return Err(Error::Usage(format!(
            "boundary plane {b} is not interior to a {depth}-plane panorama"
        )));
    }
    let diffs = plane_differences(panorama);
    let is_boundary = |p: usize| boundary_planes.contains(&p);
    let interior: Vec<f64> = (1..depth).filter(|p| !is_boundary(*p)).map(|p| diffs[p - 1]).collect();
    if interior.is_empty() {
        return Err(Error::Usage("panorama has no non-boundary interior planes".into()));
    }
    let seams: Vec<f64> = boundary_planes.iter().map(|p| diffs[p - 1]).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (b, i) = (mean(&seams), mean(&interior));
    if i == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    Ok(b / i)
}

/// Mean ground-truth panorama from overlapping volumes: each plane averages
/// every volume covering it. This is the stitched baseline the single-field
/// panorama is compared against.
pub fn stitched_panorama(dataset: &Dataset) -> Result<VolumeGrid> {
    let planes = dataset.layout.planes;
    let first = &dataset
        .volumes
        .first()
        .ok_or_else(|| Error::Usage("empty dataset".into()))?
        .volume;
    let n = first.plane_len();
    let start = dataset.layout.path[0].translation();
    let pitch = (dataset.layout.path[dataset.layout.path.len() - 1].translation() - start).norm() / planes as f64;
    let mut sum = vec![0.0f64; n * planes];
    let mut hits = vec![0usize; planes];
    for v in &dataset.volumes {
        for (k, pose) in v.volume.poses.iter().enumerate() {
            let p = ((pose.translation() - start).norm() / pitch).round() as usize;
            if p < planes {
                for (s, x) in sum[p * n..(p + 1) * n].iter_mut().zip(v.volume.plane(k)) {
                    *s += *x as f64;
                }
                hits[p] += 1;
            }
        }
    }
    let data = sum
        .chunks_exact(n)
        .zip(&hits)
        .flat_map(|(plane, h)| plane.iter().map(move |s| if *h > 0 { (s / *h as f64) as f32 } else { 0.0 }))
        .collect();
    let mask = (0..planes).flat_map(|_| first.fan_mask[..n].iter().copied()).collect();
    VolumeGrid::new([first.dims[0], first.dims[1], planes], first.spacing_mm, data, mask, vec![])
}

/// Mean of `history[..].total` in consecutive blocks of `window` steps.
pub fn block_means(history: &[LossReport], window: usize) -> Vec<f64> {
    history
        .chunks(window)
        .filter(|c| c.len() == window)
        .map(|c| c.iter().map(|r| r.total).sum::<f64>() / window as f64)
        .collect()
}

/// First step whose training MSE reaches `psnr_db`, if any.
pub fn steps_to_psnr(history: &[LossReport], psnr_db: f64) -> Option<usize> {
    history.iter().position(|r| psnr_from_mse(r.mse) >= psnr_db)
}
