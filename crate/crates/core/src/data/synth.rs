//! Synthetic dual-view phantoms.
//!
//! Each case is a smooth background plus one soft-edged axis-aligned
//! ellipsoid. The ellipsoid's long axis lies along `H` or `D`; the label is 1
//! iff its elongation (long radius over short radius) exceeds
//! [`SynthConfig::threshold`]. Each view is degraded along its own scanning
//! axis (blur, decimation with a random phase, linear re-interpolation) and
//! receives independent noise, so the long axis is sharp in only one view.

use std::fs;
use std::path::Path;

use hvan_tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, ManifestRow, Split};
use super::volume::{write_volume, Volume, VolumeMeta};
use crate::error::{HvanError, Result};
use crate::network::DOWNSAMPLE;
use crate::planes::View;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Cube edge length in voxels.
    pub size: usize,
    pub test_fraction: f64,
    /// Gaussian blur along the scanning axis before decimation, in voxels.
    pub blur_sigma: f64,
    /// Keep one of every `decimation` samples along the scanning axis.
    pub decimation: usize,
    pub noise_std: f64,
    pub background_amplitude: f64,
    pub contrast: [f64; 2],
    /// Short-axis radius range in voxels.
    pub radius: [f64; 2],
    pub elongation_negative: [f64; 2],
    pub elongation_positive: [f64; 2],
    pub threshold: f64,
    /// Divide the sampled contrast by the elongation, so a lesion's
    /// intensity integrated along its long axis carries no label
    /// information and a blurred long axis cannot be read from brightness.
    pub mass_normalized: bool,
    /// Maximum offset of the lesion centre from the volume centre, per
    /// axis; unset places the lesion anywhere it fits.
    pub center_jitter: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 32,
            test_fraction: 0.2,
            blur_sigma: 1.5,
            decimation: 4,
            noise_std: 0.1,
            background_amplitude: 0.3,
            contrast: [0.8, 1.2],
            radius: [2.0, 3.5],
            elongation_negative: [1.0, 1.3],
            elongation_positive: [1.6, 2.0],
            threshold: 1.45,
            mass_normalized: false,
            center_jitter: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HvanError::Config(m.to_string()));
        if self.size == 0 || self.size % DOWNSAMPLE != 0 {
            return bad("synthetic volume size must be a positive multiple of 32");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("test fraction must be in [0, 1)");
        }
        if matches!(self.center_jitter, Some(j) if !(j >= 0.0)) {
            return bad("centre jitter must be non-negative");
        }
        if self.decimation == 0 || self.blur_sigma < 0.0 || self.noise_std < 0.0 {
            return bad("degradation parameters must be non-negative with decimation >= 1");
        }
        let ordered = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1];
        if !ordered(self.radius) || !ordered(self.elongation_negative) || !ordered(self.elongation_positive) {
            return bad("sampling ranges must be positive and ordered");
        }
        if self.elongation_negative[1] >= self.threshold || self.elongation_positive[0] <= self.threshold {
            return bad("elongation ranges must lie on opposite sides of the threshold");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LongAxis {
    H,
    D,
}

impl LongAxis {
    fn index(self) -> usize {
        match self {
            LongAxis::H => 0,
            LongAxis::D => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    /// Centre `(h, w, d)` in voxels.
    pub center: [f64; 3],
    pub radius: f64,
    pub elongation: f64,
    pub long_axis: LongAxis,
    pub contrast: f64,
}

impl Lesion {
    /// Semi-axes along `(H, W, D)`.
    pub fn semi_axes(&self) -> [f64; 3] {
        let mut a = [self.radius; 3];
        a[self.long_axis.index()] *= self.elongation;
        a
    }
}

/// One low-frequency cosine of the background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub frequency: [u32; 3],
    pub phase: f64,
    pub amplitude: f64,
}

/// Everything needed to re-derive a case's label and clean volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseMeta {
    pub id: String,
    pub label: u8,
    pub threshold: f64,
    pub lesion: Lesion,
    pub background: Vec<Wave>,
    /// Decimation phase of the transverse and sagittal degradations.
    pub phase: [usize; 2],
}

/// The label rule applied to sampled lesion parameters.
pub fn label_of(lesion: &Lesion, threshold: f64) -> u8 {
    u8::from(lesion.elongation > threshold)
}

fn uniform<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Draw case `index`'s parameters; the target label alternates with the
/// index so every prefix is balanced.
pub fn sample_case(cfg: &SynthConfig, seed: u64, index: usize) -> CaseMeta {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let positive = index % 2 == 1;
    let radius = uniform(&mut rng, cfg.radius);
    let elongation = uniform(
        &mut rng,
        if positive { cfg.elongation_positive } else { cfg.elongation_negative },
    );
    let long_axis = if rng.gen_bool(0.5) { LongAxis::H } else { LongAxis::D };
    let mut contrast = uniform(&mut rng, cfg.contrast);
    if cfg.mass_normalized {
        contrast /= elongation;
    }
    let n = cfg.size as f64;
    let mut lesion = Lesion {
        center: [0.0; 3],
        radius,
        elongation,
        long_axis,
        contrast,
    };
    let axes = lesion.semi_axes();
    for (c, a) in lesion.center.iter_mut().zip(axes) {
        let mut margin = (a + 2.0).min(n / 2.0 - 1.0);
        if let Some(j) = cfg.center_jitter {
            margin = margin.max((n - 1.0) / 2.0 - j);
        }
        *c = uniform(&mut rng, [margin, n - 1.0 - margin]);
    }
    let background = (0..3)
        .map(|_| Wave {
            frequency: [rng.gen_range(0..3), rng.gen_range(0..3), rng.gen_range(0..3)],
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
            amplitude: cfg.background_amplitude / 3.0,
        })
        .collect();
    let phase = [rng.gen_range(0..cfg.decimation), rng.gen_range(0..cfg.decimation)];
    CaseMeta {
        id: format!("case{index:04}"),
        label: label_of(&lesion, cfg.threshold),
        threshold: cfg.threshold,
        lesion,
        background,
        phase,
    }
}

/// Noise-free, undegraded volume of a case.
pub fn clean_volume(meta: &CaseMeta, size: usize) -> Vec<f64> {
    let n = size as f64;
    let a = meta.lesion.semi_axes();
    let c = meta.lesion.center;
    // edge width of about one voxel at the short axis
    let sharpness = meta.lesion.radius;
    let mut out = Vec::with_capacity(size * size * size);
    for h in 0..size {
        for w in 0..size {
            for d in 0..size {
                let p = [h as f64, w as f64, d as f64];
                let bg: f64 = meta
                    .background
                    .iter()
                    .map(|wv| {
                        let arg: f64 = (0..3).map(|i| wv.frequency[i] as f64 * p[i]).sum::<f64>()
                            * std::f64::consts::TAU
                            / n;
                        wv.amplitude * (arg + wv.phase).cos()
                    })
                    .sum();
                let rho = (0..3).map(|i| ((p[i] - c[i]) / a[i]).powi(2)).sum::<f64>().sqrt();
                let inside = 1.0 / (1.0 + (-(1.0 - rho) * sharpness).exp());
                out.push(bg + meta.lesion.contrast * inside);
            }
        }
    }
    out
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Simulate slice thickness along `axis` of a cube: blur, keep every
/// `factor`-th sample starting at `phase`, and linearly re-interpolate
/// (constant beyond the outermost kept samples).
pub fn degrade_axis(v: &[f64], size: usize, axis: usize, sigma: f64, factor: usize, phase: usize) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let stride = [size * size, size, 1][axis];
    let kept: Vec<usize> = (phase.min(size - 1)..size).step_by(factor.max(1)).collect();
    let mut out = vec![0.0; v.len()];
    let mut line = vec![0.0; size];
    let mut blurred = vec![0.0; size];
    for base in 0..v.len() {
        // visit each line once, from its first element
        if (base / stride) % size != 0 {
            continue;
        }
        for (i, x) in line.iter_mut().enumerate() {
            *x = v[base + i * stride];
        }
        for (i, b) in blurred.iter_mut().enumerate() {
            *b = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| {
                    let j = (i as i64 + k as i64 - r).clamp(0, size as i64 - 1) as usize;
                    w * line[j]
                })
                .sum();
        }
        for i in 0..size {
            let val = match kept.binary_search(&i) {
                Ok(_) => blurred[i],
                Err(0) => blurred[kept[0]],
                Err(k) if k == kept.len() => blurred[kept[k - 1]],
                Err(k) => {
                    let (lo, hi) = (kept[k - 1], kept[k]);
                    let t = (i - lo) as f64 / (hi - lo) as f64;
                    blurred[lo] * (1.0 - t) + blurred[hi] * t
                }
            };
            out[base + i * stride] = val;
        }
    }
    out
}

/// Both degraded, noisy views of a case, `[H, W, D]` each.
pub fn render_views(meta: &CaseMeta, cfg: &SynthConfig, seed: u64, index: usize) -> (Volume, Volume) {
    let n = cfg.size;
    let clean = clean_volume(meta, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_0015e);
    rng.set_stream(index as u64);
    let noise = Normal::new(0.0, cfg.noise_std).expect("validated noise level");
    let mut view = |v: View, phase: usize| {
        let axis = v.imaging_axis() - 2;
        let d = degrade_axis(&clean, n, axis, cfg.blur_sigma, cfg.decimation, phase);
        let data = d.into_iter().map(|x| (x + noise.sample(&mut rng)) as f32).collect();
        Tensor::from_vec(&[n, n, n], data).expect("cube shape")
    };
    let t = view(View::Transverse, meta.phase[0]);
    let s = view(View::Sagittal, meta.phase[1]);
    (t, s)
}

/// Write `n_cases` phantoms under `out_dir` (volumes and metadata in
/// `cases/`, plus `manifest.csv`). The last `test_fraction` of the cases
/// form the test split.
pub fn synth_generate(n_cases: usize, seed: u64, cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    if n_cases < 4 {
        return Err(HvanError::Config(format!("need at least 4 cases, got {n_cases}")));
    }
    let cases = out_dir.join("cases");
    fs::create_dir_all(&cases).map_err(|e| HvanError::io(&cases, e))?;
    let n_test = (n_cases as f64 * cfg.test_fraction).round() as usize;
    let mut rows = Vec::with_capacity(n_cases);
    for i in 0..n_cases {
        let meta = sample_case(cfg, seed, i);
        let (t, s) = render_views(&meta, cfg, seed, i);
        let rel_t = Path::new("cases").join(format!("{}_t.raw", meta.id));
        let rel_s = Path::new("cases").join(format!("{}_s.raw", meta.id));
        let shape = [cfg.size; 3];
        write_volume(&out_dir.join(&rel_t), &t, &VolumeMeta::new(shape, View::Transverse))?;
        write_volume(&out_dir.join(&rel_s), &s, &VolumeMeta::new(shape, View::Sagittal))?;
        let meta_path = cases.join(format!("{}.meta.json", meta.id));
        let mut json = serde_json::to_string_pretty(&meta)?;
        json.push('\n');
        fs::write(&meta_path, json).map_err(|e| HvanError::io(&meta_path, e))?;
        rows.push(ManifestRow {
            id: meta.id,
            path_t: rel_t,
            path_s: rel_s,
            label: meta.label,
            split: if i + n_test >= n_cases { Split::Test } else { Split::Train },
        });
    }
    let manifest = Manifest::new(out_dir, rows)?;
    manifest.write(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

/// Half-width of the window the blob moments are taken over.
const BLOB_WINDOW: usize = 10;

/// Intensity-weighted spatial variances `(var_H, var_W, var_D)` of the
/// brightest blob in a cube. The volume is lightly smoothed, the window
/// around its maximum is kept, and weights are the intensities above the
/// midpoint between the window's median and its peak.
pub fn blob_variances(v: &Volume) -> [f64; 3] {
    let s = v.shape();
    let n = s[0];
    assert!(s == [n, n, n], "blob moments need a cube, got {s:?}");
    let mut sm: Vec<f64> = v.data().iter().map(|&x| x as f64).collect();
    for axis in 0..3 {
        sm = degrade_axis(&sm, n, axis, 1.0, 1, 0);
    }
    let peak = (0..sm.len()).max_by(|&a, &b| sm[a].total_cmp(&sm[b])).expect("nonempty volume");
    let centre = [peak / (n * n), peak / n % n, peak % n];
    let lo = centre.map(|c| c.saturating_sub(BLOB_WINDOW));
    let hi = centre.map(|c| (c + BLOB_WINDOW + 1).min(n));
    let mut window = Vec::new();
    for h in lo[0]..hi[0] {
        for w in lo[1]..hi[1] {
            for d in lo[2]..hi[2] {
                window.push(([h, w, d], sm[(h * n + w) * n + d]));
            }
        }
    }
    let mut vals: Vec<f64> = window.iter().map(|&(_, x)| x).collect();
    vals.sort_by(f64::total_cmp);
    let cut = 0.5 * (vals[vals.len() / 2] + sm[peak]);
    let (mut w_sum, mut m1, mut m2) = (0.0, [0.0; 3], [0.0; 3]);
    for (p, x) in window {
        let w = x - cut;
        if w <= 0.0 {
            continue;
        }
        w_sum += w;
        for i in 0..3 {
            let q = p[i] as f64;
            m1[i] += w * q;
            m2[i] += w * q * q;
        }
    }
    [0, 1, 2].map(|i| {
        let mean = m1[i] / w_sum;
        (m2[i] / w_sum - mean * mean).max(1e-12)
    })
}

/// Elongation score from variances: the larger of the `H` and `D` spread
/// relative to the `W` spread.
pub fn elongation_score(var: [f64; 3]) -> f64 {
    (var[0].max(var[2]) / var[1]).sqrt()
}

/// Score from one view alone.
pub fn single_view_score(v: &Volume) -> f64 {
    elongation_score(blob_variances(v))
}

/// Score combining each axis from a view in which it lies in-plane: `H`
/// from the transverse view, `D` from the sagittal view, `W` from both.
pub fn fused_score(t: &Volume, s: &Volume) -> f64 {
    let vt = blob_variances(t);
    let vs = blob_variances(s);
    elongation_score([vt[0], 0.5 * (vt[1] + vs[1]), vs[2]])
}
