//! Analytic tissue phantoms and a tracked-sweep simulator sharing the
//! renderer's Beer–Lambert integrator.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{AcousticField, AcousticSample};
use crate::frustum::{probe_segments, FrustumGaussian};
use crate::pose::Pose;
use crate::probe::{cast_slice_rays, ProbeSpec};
use crate::render::{integrate_ray, ScanMap};
use crate::volume::{GridSpec, VolumeGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// Semi-axes `size_mm` along the local axes.
    Ellipsoid,
    /// Elliptic cylinder along local z: radii `size_mm[0..2]`, half-length `size_mm[2]`.
    Tube,
    /// Local `z ≤ 0`; `size_mm` is ignored.
    HalfSpace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    /// Places the primitive's local frame in the world.
    pub pose: Pose,
    pub size_mm: [f64; 3],
    pub attenuation_per_mm: f64,
    pub backscatter: f64,
}

impl Primitive {
    pub fn contains(&self, world: &Vector3<f64>) -> bool {
        let p = self.pose.inverse().transform_point(world);
        let [a, b, c] = self.size_mm;
        match self.shape {
            Shape::Ellipsoid => (p.x / a).powi(2) + (p.y / b).powi(2) + (p.z / c).powi(2) <= 1.0,
            Shape::Tube => (p.x / a).powi(2) + (p.y / b).powi(2) <= 1.0 && p.z.abs() <= c,
            Shape::HalfSpace => p.z <= 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Medium {
    pub attenuation_per_mm: f64,
    pub backscatter: f64,
}

/// Smooth value noise scaling backscatter by `1 + amplitude · n`, `n ∈ [−1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub amplitude: f64,
    pub correlation_mm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TissueMap {
    pub primitives: Vec<Primitive>,
    pub background: Medium,
    pub texture: Texture,
    pub seed: u64,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn lattice_value(seed: u64, i: i64, j: i64, k: i64) -> f64 {
    let mut h = splitmix(seed);
    for c in [i, j, k] {
        h = splitmix(h ^ c as u64);
    }
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

impl TissueMap {
    pub fn validate(&self) -> Result<()> {
        let check = |what: &str, a: f64, b: f64| {
            if !(a >= 0.0 && a.is_finite()) || !(0.0..=1.0).contains(&b) {
                return Err(Error::Config(format!(
                    "{what}: attenuation must be ≥ 0 and backscatter in [0, 1], got ({a}, {b})"
                )));
            }
            Ok(())
        };
        check("background", self.background.attenuation_per_mm, self.background.backscatter)?;
        for (i, p) in self.primitives.iter().enumerate() {
            check(&format!("primitive {i}"), p.attenuation_per_mm, p.backscatter)?;
            if p.shape != Shape::HalfSpace && p.size_mm.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::Config(format!("primitive {i}: sizes must be positive")));
            }
        }
        if !(self.texture.amplitude >= 0.0) || !(self.texture.correlation_mm > 0.0) {
            return Err(Error::Config(
                "texture amplitude must be ≥ 0 and correlation length > 0".into(),
            ));
        }
        Ok(())
    }

    /// Texture value in `[−1, 1]` at a world point.
    pub fn noise(&self, p: &Vector3<f64>) -> f64 {
        let q = p / self.texture.correlation_mm;
        let base = q.map(f64::floor);
        let f = q - base;
        let w = f.map(smoothstep);
        let (i0, j0, k0) = (base.x as i64, base.y as i64, base.z as i64);
        let mut acc = 0.0;
        for dk in 0..2 {
            for dj in 0..2 {
                for di in 0..2 {
                    let wx = if di == 0 { 1.0 - w.x } else { w.x };
                    let wy = if dj == 0 { 1.0 - w.y } else { w.y };
                    let wz = if dk == 0 { 1.0 - w.z } else { w.z };
                    acc += wx * wy * wz * lattice_value(self.seed, i0 + di, j0 + dj, k0 + dk);
                }
            }
        }
        acc
    }

    /// Last-listed containing primitive wins; texture multiplies backscatter.
    pub fn sample(&self, p: &Vector3<f64>) -> AcousticSample {
        let (attenuation_per_mm, b) = self
            .primitives
            .iter()
            .rev()
            .find(|prim| prim.contains(p))
            .map(|prim| (prim.attenuation_per_mm, prim.backscatter))
            .unwrap_or((self.background.attenuation_per_mm, self.background.backscatter));
        let backscatter = if self.texture.amplitude > 0.0 {
            (b * (1.0 + self.texture.amplitude * self.noise(p))).clamp(0.0, 1.0)
        } else {
            b
        };
        AcousticSample {
            attenuation_per_mm,
            backscatter,
        }
    }
}

pub fn sample_tissue(map: &TissueMap, point: &Vector3<f64>) -> AcousticSample {
    map.sample(point)
}

/// The phantom queried at footprint means: exact ground-truth values.
impl AcousticField for TissueMap {
    fn query(&self, gaussians: &[FrustumGaussian]) -> Vec<AcousticSample> {
        gaussians.iter().map(|g| self.sample(&g.mean_point)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Start and end of the straight pull-back; the sweep spans exactly this segment.
    pub start: Pose,
    pub end: Pose,
    pub n_volumes: usize,
    pub slices_per_volume: usize,
    pub overlap_fraction: f64,
    pub noise_std: f64,
    pub grid: GridSpec,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_volumes < 1 || self.slices_per_volume < 1 {
            return Err(Error::Config("sweep needs at least one volume and one slice".into()));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::Config("overlap_fraction must lie in [0, 1)".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be non-negative".into()));
        }
        if self.length_mm() <= 0.0 {
            return Err(Error::Config("sweep start and end coincide".into()));
        }
        Ok(())
    }

    pub fn length_mm(&self) -> f64 {
        (self.end.translation() - self.start.translation()).norm()
    }

    /// Elevational extent of one volume.
    pub fn volume_extent_mm(&self) -> f64 {
        let n = self.n_volumes as f64;
        self.length_mm() / (1.0 + (n - 1.0) * (1.0 - self.overlap_fraction))
    }

    pub fn slice_spacing_mm(&self) -> f64 {
        self.volume_extent_mm() / self.slices_per_volume as f64
    }

    pub fn volume_stride_mm(&self) -> f64 {
        self.volume_extent_mm() * (1.0 - self.overlap_fraction)
    }

    /// Pose of slice `k` in volume `i`.
    pub fn slice_pose(&self, i: usize, k: usize) -> Pose {
        let s = i as f64 * self.volume_stride_mm() + k as f64 * self.slice_spacing_mm();
        Pose::interpolate(&self.start, &self.end, s / self.length_mm())
    }

    pub fn volume_poses(&self, i: usize) -> Vec<Pose> {
        (0..self.slices_per_volume).map(|k| self.slice_pose(i, k)).collect()
    }

    /// Panorama planes at the native slice pitch, with volume starts as seam planes.
    pub fn layout(&self) -> SweepLayout {
        let pitch = self.slice_spacing_mm();
        let planes = (self.length_mm() / pitch).round() as usize;
        let boundary_planes = (1..self.n_volumes)
            .map(|i| (i as f64 * self.volume_stride_mm() / pitch).round() as usize)
            .filter(|p| *p > 0 && *p + 1 < planes)
            .collect();
        SweepLayout {
            path: vec![self.start, self.end],
            planes,
            boundary_planes,
        }
    }
}

/// Panorama geometry of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepLayout {
    pub path: Vec<Pose>,
    pub planes: usize,
    pub boundary_planes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackedVolume {
    pub index: usize,
    pub volume: VolumeGrid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub probe: ProbeSpec,
    pub grid: GridSpec,
    pub volumes: Vec<TrackedVolume>,
    pub layout: SweepLayout,
    pub config_hash: String,
}

impl Dataset {
    /// Every slice pose in volume order.
    pub fn all_poses(&self) -> Vec<Pose> {
        self.volumes.iter().flat_map(|v| v.volume.poses.iter().copied()).collect()
    }
}

/// Renders one slice with point samples at segment midpoints.
fn simulate_slice(map: &TissueMap, probe: &ProbeSpec, pose: &Pose, scan: &ScanMap) -> Vec<f64> {
    let segments = probe_segments(probe);
    let seg_len = probe.segment_length_mm();
    let mut fan = vec![0.0; probe.n_rays * probe.n_samples];
    for (ray, row) in cast_slice_rays(probe, pose)
        .iter()
        .zip(fan.chunks_exact_mut(probe.n_samples))
    {
        let samples: Vec<AcousticSample> = segments
            .iter()
            .map(|s| map.sample(&ray.at(s.mu() - ray.apex_offset)))
            .collect();
        integrate_ray(&samples, seg_len, row);
    }
    let mut plane = vec![0.0; scan.grid.voxels()];
    scan.apply(&fan, &mut plane);
    plane
}

/// Simulates the `N` overlapping tracked volumes of a sweep.
pub fn simulate_sweep(map: &TissueMap, probe: &ProbeSpec, sweep: &SweepSpec) -> Result<Vec<TrackedVolume>> {
    map.validate()?;
    probe.validate()?;
    sweep.validate()?;
    if probe.n_slices != sweep.slices_per_volume {
        return Err(Error::Config(format!(
            "probe has {} slices per volume but the sweep asks for {}",
            probe.n_slices, sweep.slices_per_volume
        )));
    }
    let scan = ScanMap::new(probe, sweep.grid);
    let noise = if sweep.noise_std > 0.0 {
        Some(Normal::new(0.0, sweep.noise_std).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    (0..sweep.n_volumes)
        .map(|i| {
            let poses = sweep.volume_poses(i);
            let planes: Vec<Vec<f64>> = poses
                .par_iter()
                .map(|pose| simulate_slice(map, probe, pose, &scan))
                .collect();
            let mut data: Vec<f64> = planes.into_iter().flatten().collect();
            let mask: Vec<bool> = poses.iter().flat_map(|_| scan.mask.iter().copied()).collect();
            if let Some(dist) = &noise {
                let mut rng = ChaCha8Rng::seed_from_u64(map.seed);
                rng.set_stream(i as u64 + 1);
                for (v, m) in data.iter_mut().zip(&mask) {
                    if *m {
                        *v = (*v + dist.sample(&mut rng)).clamp(0.0, 1.0);
                    }
                }
            }
            let grid = sweep.grid;
            let volume = VolumeGrid::new(
                [grid.width, grid.height, poses.len()],
                grid.spacing_mm,
                data.iter().map(|v| *v as f32).collect(),
                mask,
                poses,
            )?;
            Ok(TrackedVolume { index: i, volume })
        })
        .collect()
}

/// Removes one strictly interior volume for hold-out evaluation.
pub fn holdout_split(dataset: &Dataset, holdout_index: usize) -> Result<(Dataset, TrackedVolume)> {
    let n = dataset.volumes.len();
    if holdout_index == 0 || holdout_index + 1 >= n {
        return Err(Error::Config(format!(
            "holdout index {holdout_index} of {n} volumes has no bordering sweep on both sides"
        )));
    }
    let mut train = dataset.clone();
    let held = train.volumes.remove(holdout_index);
    Ok((train, held))
}

/// Everything needed to regenerate a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub map: TissueMap,
    pub probe: ProbeSpec,
    pub sweep: SweepSpec,
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        self.map.validate()?;
        self.probe.validate()?;
        self.sweep.validate()
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Frozen desk-scale phantom: two ellipsoids and a vessel in textured
    /// background, nine half-overlapping 48×48×32 volumes over 160 mm.
    pub fn reference() -> Self {
        let probe = ProbeSpec::desk_annular();
        let at = |x: f64, y: f64, z: f64| Pose::from_translation(Vector3::new(x, y, z));
        let map = TissueMap {
            primitives: vec![
                Primitive {
                    shape: Shape::Ellipsoid,
                    pose: Pose::from_axis_angle(Vector3::y(), 0.25, Vector3::new(-8.0, 5.0, 52.0)),
                    size_mm: [7.0, 6.0, 24.0],
                    attenuation_per_mm: 0.03,
                    backscatter: 0.8,
                },
                Primitive {
                    shape: Shape::Ellipsoid,
                    pose: Pose::from_axis_angle(Vector3::x(), -0.2, Vector3::new(9.0, -9.0, 104.0)),
                    size_mm: [6.0, 7.0, 26.0],
                    attenuation_per_mm: 0.02,
                    backscatter: 0.15,
                },
                Primitive {
                    shape: Shape::Tube,
                    pose: Pose::from_axis_angle(Vector3::x(), 0.06, Vector3::new(3.0, 11.0, 80.0)),
                    size_mm: [3.5, 3.5, 90.0],
                    attenuation_per_mm: 0.005,
                    backscatter: 0.05,
                },
            ],
            background: Medium {
                attenuation_per_mm: 0.01,
                backscatter: 0.4,
            },
            texture: Texture {
                amplitude: 0.3,
                correlation_mm: 5.0,
            },
            seed: 7,
        };
        let sweep = SweepSpec {
            start: at(0.0, 0.0, 0.0),
            end: at(0.0, 0.0, 160.0),
            n_volumes: 9,
            slices_per_volume: probe.n_slices,
            overlap_fraction: 0.5,
            noise_std: 0.0,
            grid: GridSpec {
                width: 48,
                height: 48,
                spacing_mm: 1.0,
            },
        };
        Self { map, probe, sweep }
    }
}

/// Index of the reference hold-out volume.
pub const REFERENCE_HOLDOUT: usize = 4;

pub fn generate_dataset(config: &PhantomConfig) -> Result<Dataset> {
    config.validate()?;
    let volumes = simulate_sweep(&config.map, &config.probe, &config.sweep)?;
    Ok(Dataset {
        probe: config.probe.clone(),
        grid: config.sweep.grid,
        volumes,
        layout: config.sweep.layout(),
        config_hash: config.hash(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frustum::{GaussianRadii, Sampler, SamplingMode};
    use crate::render::render_volume;

    fn plain_map() -> TissueMap {
        TissueMap {
            primitives: vec![],
            background: Medium {
                attenuation_per_mm: 0.0,
                backscatter: 0.6,
            },
            texture: Texture {
                amplitude: 0.0,
                correlation_mm: 1.0,
            },
            seed: 1,
        }
    }

    fn small_probe() -> ProbeSpec {
        ProbeSpec {
            r_in_mm: 2.0,
            r_out_mm: 10.0,
            opening_angle_deg: 360.0,
            n_rays: 24,
            n_samples: 8,
            s_lat_mm: 1.0,
            s_dep_mm: 1.0,
            n_slices: 4,
        }
    }

    fn small_sweep(n: usize, noise: f64) -> SweepSpec {
        SweepSpec {
            start: Pose::identity(),
            end: Pose::from_translation(Vector3::new(0.0, 0.0, 4.0 * (1.0 + 0.5 * (n as f64 - 1.0)))),
            n_volumes: n,
            slices_per_volume: 4,
            overlap_fraction: 0.5,
            noise_std: noise,
            grid: GridSpec::new(20, 20, 1.0).unwrap(),
        }
    }

    fn ellipsoid(center: [f64; 3], b: f64) -> Primitive {
        Primitive {
            shape: Shape::Ellipsoid,
            pose: Pose::from_translation(Vector3::from(center)),
            size_mm: [2.0, 3.0, 4.0],
            attenuation_per_mm: 0.2,
            backscatter: b,
        }
    }

    #[test]
    fn sample_tissue_examples() {
        let mut map = plain_map();
        let far = Vector3::new(50.0, 0.0, 0.0);
        assert_eq!(sample_tissue(&map, &far), AcousticSample { attenuation_per_mm: 0.0, backscatter: 0.6 });
        map.primitives.push(ellipsoid([1.0, 2.0, 3.0], 0.9));
        let s = sample_tissue(&map, &Vector3::new(1.0, 2.0, 3.0));
        assert_eq!((s.attenuation_per_mm, s.backscatter), (0.2, 0.9));
        map.primitives.push(ellipsoid([1.5, 2.0, 3.0], 0.1));
        assert_eq!(sample_tissue(&map, &Vector3::new(1.2, 2.0, 3.0)).backscatter, 0.1);
        assert_eq!(sample_tissue(&map, &Vector3::new(1.0, 2.0, 6.9)).backscatter, 0.9);
    }

    #[test]
    fn tube_and_half_space() {
        let tube = Primitive {
            shape: Shape::Tube,
            pose: Pose::from_axis_angle(Vector3::y(), std::f64::consts::FRAC_PI_2, Vector3::zeros()),
            size_mm: [1.0, 1.0, 5.0],
            attenuation_per_mm: 0.0,
            backscatter: 0.0,
        };
        assert!(tube.contains(&Vector3::new(4.9, 0.5, 0.0)));
        assert!(!tube.contains(&Vector3::new(5.1, 0.0, 0.0)));
        assert!(!tube.contains(&Vector3::new(0.0, 0.0, 1.5)));
        let half = Primitive { shape: Shape::HalfSpace, pose: Pose::from_translation(Vector3::new(0.0, 0.0, 2.0)), ..tube };
        assert!(half.contains(&Vector3::new(100.0, -4.0, 1.9)));
        assert!(!half.contains(&Vector3::new(0.0, 0.0, 2.1)));
    }

    #[test]
    fn texture_is_bounded_smooth_and_seeded() {
        let mut map = plain_map();
        map.texture = Texture { amplitude: 0.5, correlation_mm: 3.0 };
        let mut other = map.clone();
        other.seed = 2;
        let mut differs = false;
        for i in 0..200 {
            let p = Vector3::new(i as f64 * 0.37, (i as f64 * 0.11).sin() * 9.0, i as f64 * 0.05);
            let n = map.noise(&p);
            assert!((-1.0..=1.0).contains(&n));
            let q = p + Vector3::new(1e-4, 0.0, 0.0);
            assert!((map.noise(&q) - n).abs() < 1e-3);
            assert_eq!(map.noise(&p), map.clone().noise(&p));
            differs |= other.noise(&p) != n;
            let b = map.sample(&p).backscatter;
            assert!((0.0..=1.0).contains(&b));
        }
        assert!(differs);
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut map = plain_map();
        map.background.backscatter = 1.2;
        assert!(map.validate().is_err());
        let mut map = plain_map();
        map.primitives.push(Primitive { attenuation_per_mm: -0.1, ..ellipsoid([0.0; 3], 0.5) });
        assert!(map.validate().is_err());
        let mut s = small_sweep(2, 0.0);
        s.overlap_fraction = 1.0;
        assert!(s.validate().is_err());
        s.overlap_fraction = 0.5;
        s.n_volumes = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn homogeneous_lossless_sweep_is_background() {
        let vols = simulate_sweep(&plain_map(), &small_probe(), &small_sweep(2, 0.0)).unwrap();
        assert_eq!(vols.len(), 2);
        for v in &vols {
            for (x, m) in v.volume.data.iter().zip(&v.volume.fan_mask) {
                if *m {
                    assert!((*x - 0.6).abs() < 1e-6);
                } else {
                    assert_eq!(*x, 0.0);
                }
            }
        }
    }

    #[test]
    fn overlapping_volumes_agree() {
        let mut map = plain_map();
        map.primitives.push(ellipsoid([2.0, 1.0, 3.0], 0.9));
        map.texture = Texture { amplitude: 0.3, correlation_mm: 2.0 };
        let sweep = small_sweep(2, 0.0);
        let vols = simulate_sweep(&map, &small_probe(), &sweep).unwrap();
        let (a, b) = (&vols[0].volume, &vols[1].volume);
        for k in 0..2 {
            for (x, y) in a.plane(k + 2).iter().zip(b.plane(k)) {
                assert!((x - y).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn renderer_reproduces_simulator() {
        let mut map = plain_map();
        map.background.attenuation_per_mm = 0.05;
        map.primitives.push(ellipsoid([2.0, 1.0, 3.0], 0.9));
        map.texture = Texture { amplitude: 0.3, correlation_mm: 2.0 };
        let probe = small_probe();
        let sweep = small_sweep(1, 0.0);
        let vols = simulate_sweep(&map, &probe, &sweep).unwrap();
        let sampler = Sampler::new(SamplingMode::Point, GaussianRadii::for_probe(&probe).unwrap());
        let rendered = render_volume(&map, &probe, &vols[0].volume.poses, &sampler, sweep.grid);
        assert_eq!(rendered.data, vols[0].volume.data);
        assert_eq!(rendered.fan_mask, vols[0].volume.fan_mask);
    }

    #[test]
    fn noise_is_seeded_and_clipped() {
        let sweep = small_sweep(2, 0.3);
        let a = simulate_sweep(&plain_map(), &small_probe(), &sweep).unwrap();
        let b = simulate_sweep(&plain_map(), &small_probe(), &sweep).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].volume.data, a[1].volume.data);
        assert!(a.iter().flat_map(|v| &v.volume.data).all(|x| (0.0..=1.0).contains(x)));
        let mut map = plain_map();
        map.seed = 99;
        let c = simulate_sweep(&map, &small_probe(), &sweep).unwrap();
        assert_ne!(a[0].volume.data, c[0].volume.data);
    }

    #[test]
    fn sweep_geometry() {
        let s = PhantomConfig::reference().sweep;
        assert!((s.volume_extent_mm() - 32.0).abs() < 1e-12);
        assert!((s.slice_spacing_mm() - 1.0).abs() < 1e-12);
        assert!((s.volume_stride_mm() - 16.0).abs() < 1e-12);
        let layout = s.layout();
        assert_eq!(layout.planes, 160);
        assert_eq!(layout.boundary_planes, vec![16, 32, 48, 64, 80, 96, 112, 128]);
        assert!((s.slice_pose(2, 5).translation().z - 37.0).abs() < 1e-12);
    }

    #[test]
    fn holdout_requires_interior_index() {
        let config = PhantomConfig {
            map: plain_map(),
            probe: small_probe(),
            sweep: SweepSpec { n_volumes: 9, ..small_sweep(9, 0.0) },
        };
        let data = generate_dataset(&config).unwrap();
        let (train, held) = holdout_split(&data, 4).unwrap();
        assert_eq!(train.volumes.len(), 8);
        assert_eq!(held.index, 4);
        assert!(train.volumes.iter().any(|v| v.index == 3) && train.volumes.iter().any(|v| v.index == 5));
        assert!(holdout_split(&data, 0).is_err());
        assert!(holdout_split(&data, 8).is_err());
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = PhantomConfig::reference();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.map.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
