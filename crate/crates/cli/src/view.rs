//! Single-slice rendering shared by the `render` command and the service.

use serde::{Deserialize, Serialize};
use usfield::io::{slice_png, Axis};
use usfield::pose::Pose;
use usfield::probe::ProbeSpec;
use usfield::trainer::TrainedModel;
use usfield::volume::{GridSpec, VolumeGrid};
use usfield::{Error, Result};

/// Geometry of one requested view. Missing probe fields fall back to the
/// model's training probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRequest {
    pub pose: Vec<f64>,
    #[serde(default)]
    pub opening_angle_deg: Option<f64>,
    #[serde(default)]
    pub r_in_mm: Option<f64>,
    #[serde(default)]
    pub r_out_mm: Option<f64>,
    #[serde(default)]
    pub n_rays: Option<usize>,
    #[serde(default)]
    pub n_samples: Option<usize>,
    #[serde(default)]
    pub width: Option<usize>,
    #[serde(default)]
    pub height: Option<usize>,
}

/// Upper bound on either image side, to keep a single request bounded.
pub const MAX_SIDE: usize = 2048;
/// Upper bound on rays × samples per request.
pub const MAX_QUERIES: usize = 1 << 20;

impl RenderRequest {
    pub fn at(pose: &Pose) -> Self {
        Self {
            pose: pose.to_row_major().to_vec(),
            opening_angle_deg: None,
            r_in_mm: None,
            r_out_mm: None,
            n_rays: None,
            n_samples: None,
            width: None,
            height: None,
        }
    }

    /// Resolves the request against `model` into a validated probe, pose and grid.
    pub fn resolve(&self, model: &TrainedModel) -> Result<(ProbeSpec, Pose, GridSpec)> {
        if self.pose.len() != 16 {
            return Err(Error::Usage(format!("pose: expected 16 numbers, got {}", self.pose.len())));
        }
        let pose = Pose::from_row_major(&self.pose).map_err(|e| Error::Usage(format!("pose: {e}")))?;
        let mut probe = model.probe.clone();
        if let Some(v) = self.opening_angle_deg {
            probe.opening_angle_deg = v;
        }
        if let Some(v) = self.r_in_mm {
            probe.r_in_mm = v;
        }
        if let Some(v) = self.r_out_mm {
            probe.r_out_mm = v;
        }
        if let Some(v) = self.n_rays {
            probe.n_rays = v;
        }
        if let Some(v) = self.n_samples {
            probe.n_samples = v;
        }
        probe.n_slices = 1;
        probe.validate()?;
        if probe.n_rays.saturating_mul(probe.n_samples) > MAX_QUERIES {
            return Err(Error::Usage(format!("n_rays × n_samples exceeds {MAX_QUERIES}")));
        }
        let width = self.width.unwrap_or(model.grid.width);
        let height = self.height.unwrap_or(model.grid.height);
        if width == 0 || height == 0 || width > MAX_SIDE || height > MAX_SIDE {
            return Err(Error::Usage(format!("width/height must lie in 1..={MAX_SIDE}")));
        }
        let spacing = 2.0 * probe.r_out_mm / width.max(height) as f64;
        Ok((probe, pose, GridSpec::new(width, height, spacing)?))
    }
}

/// Scan-converted slice for `request`.
pub fn render_slice(model: &TrainedModel, request: &RenderRequest) -> Result<VolumeGrid> {
    let (probe, pose, grid) = request.resolve(model)?;
    Ok(model.render(&probe, &[pose], grid))
}

/// 8-bit grayscale PNG of the slice for `request`.
pub fn render_png(model: &TrainedModel, request: &RenderRequest) -> Result<Vec<u8>> {
    slice_png(&render_slice(model, request)?, Axis::Z, 0)
}
