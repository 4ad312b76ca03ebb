//! Single-volume storage, normalization, and resampling.
//!
//! A volume is stored as raw little-endian `f32` in C order (`D` fastest)
//! next to a JSON sidecar with the same stem.

use std::fs;
use std::path::{Path, PathBuf};

use hvan_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{HvanError, Result};
use crate::planes::View;

/// Format tag every sidecar must carry.
pub const VOLUME_FORMAT: &str = "raw-f32le";

pub type Volume = Tensor<f32>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeMeta {
    pub format: String,
    /// `[H, W, D]`.
    pub shape: [usize; 3],
    pub view: View,
    /// Voxel spacing in millimetres.
    pub spacing: [f64; 3],
}

impl VolumeMeta {
    pub fn new(shape: [usize; 3], view: View) -> Self {
        Self {
            format: VOLUME_FORMAT.to_string(),
            shape,
            view,
            spacing: [1.0; 3],
        }
    }
}

/// Sidecar path for a raw volume path.
pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

pub fn write_volume(raw: &Path, volume: &Volume, meta: &VolumeMeta) -> Result<()> {
    if volume.shape() != meta.shape {
        return Err(HvanError::Shape(format!(
            "volume {:?} does not match metadata shape {:?}",
            volume.shape(),
            meta.shape
        )));
    }
    let bytes: Vec<u8> = volume.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(raw, bytes).map_err(|e| HvanError::io(raw, e))?;
    let side = sidecar_path(raw);
    let mut json = serde_json::to_string_pretty(meta)?;
    json.push('\n');
    fs::write(&side, json).map_err(|e| HvanError::io(&side, e))
}

pub fn read_volume(raw: &Path) -> Result<(Volume, VolumeMeta)> {
    let side = sidecar_path(raw);
    let text = fs::read_to_string(&side).map_err(|e| HvanError::io(&side, e))?;
    let meta: VolumeMeta = serde_json::from_str(&text)
        .map_err(|e| HvanError::Data(format!("{}: bad volume header: {e}", side.display())))?;
    if meta.format != VOLUME_FORMAT {
        return Err(HvanError::Data(format!(
            "{}: unsupported format tag `{}`",
            side.display(),
            meta.format
        )));
    }
    let bytes = fs::read(raw).map_err(|e| HvanError::io(raw, e))?;
    let n: usize = meta.shape.iter().product();
    if n == 0 || bytes.len() != 4 * n {
        return Err(HvanError::Data(format!(
            "{}: {} bytes, header shape {:?} needs {}",
            raw.display(),
            bytes.len(),
            meta.shape,
            4 * n
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let volume = Tensor::from_vec(&meta.shape, data)?;
    if !volume.all_finite() {
        return Err(HvanError::Data(format!("{}: non-finite voxels", raw.display())));
    }
    Ok((volume, meta))
}

/// Zero-mean, unit-variance copy. A constant volume maps to zeros.
pub fn zscore(v: &Volume) -> Volume {
    let n = v.len() as f64;
    let mean = v.data().iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.data().iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd == 0.0 {
        return Tensor::zeros(v.shape());
    }
    v.map(|x| ((x as f64 - mean) / sd) as f32)
}

/// Sample positions and weights mapping `n` source samples onto `m` with
/// corner alignment (`0 -> 0`, `m-1 -> n-1`).
fn linear_taps(n: usize, m: usize) -> Vec<(usize, usize, f64)> {
    (0..m)
        .map(|j| {
            let x = if m == 1 { 0.0 } else { j as f64 * (n - 1) as f64 / (m - 1) as f64 };
            let lo = (x.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            (lo, hi, x - lo as f64)
        })
        .collect()
}

/// Linear resampling of axis `axis` of a rank-3 volume to length `m`.
fn resize_axis(v: &Volume, axis: usize, m: usize) -> Volume {
    let s = v.shape();
    let n = s[axis];
    if n == m {
        return v.clone();
    }
    let taps = linear_taps(n, m);
    let mut out_shape = [s[0], s[1], s[2]];
    out_shape[axis] = m;
    let src = v.strides();
    Tensor::from_fn(&out_shape, |flat| {
        let d = flat % out_shape[2];
        let w = flat / out_shape[2] % out_shape[1];
        let h = flat / (out_shape[1] * out_shape[2]);
        let mut idx = [h, w, d];
        let (lo, hi, t) = taps[idx[axis]];
        idx[axis] = lo;
        let a = v.data()[idx[0] * src[0] + idx[1] * src[1] + idx[2] * src[2]] as f64;
        idx[axis] = hi;
        let b = v.data()[idx[0] * src[0] + idx[1] * src[1] + idx[2] * src[2]] as f64;
        (a + (b - a) * t) as f32
    })
}

/// Trilinear resampling to `target = [H, W, D]` with corner alignment.
pub fn resize_volume(v: &Volume, target: [usize; 3]) -> Result<Volume> {
    if v.rank() != 3 || v.shape().iter().any(|&n| n == 0) || target.iter().any(|&n| n == 0) {
        return Err(HvanError::Shape(format!(
            "cannot resize {:?} to {target:?}",
            v.shape()
        )));
    }
    let mut out = v.clone();
    for (axis, &m) in target.iter().enumerate() {
        out = resize_axis(&out, axis, m);
    }
    Ok(out)
}
