use std::fs;

use hvan::data::synth::{fused_score, render_views, sample_case, single_view_score, LongAxis};
use hvan::data::{read_volume, resize_volume, synth_generate, write_volume, zscore, Manifest, Split, SynthConfig, VolumeMeta};
use hvan::metrics::auc;
use hvan::planes::View;
use hvan::HvanError;
use hvan_tensor::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_volume(shape: [usize; 3], seed: u64) -> Tensor<f32> {
    Tensor::randn(&shape, 2.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn volume_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.raw");
    let v = random_volume([4, 5, 6], 1);
    let meta = VolumeMeta::new([4, 5, 6], View::Sagittal);
    write_volume(&path, &v, &meta).unwrap();
    assert_eq!(fs::metadata(&path).unwrap().len(), 4 * 120);
    let (back, back_meta) = read_volume(&path).unwrap();
    assert_eq!(back, v);
    assert_eq!(back_meta, meta);
}

#[test]
fn malformed_volume_files_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.raw");
    let v = random_volume([2, 2, 2], 2);
    let tagged = |format: &str| VolumeMeta { format: format.into(), ..VolumeMeta::new([2, 2, 2], View::Transverse) };
    write_volume(&path, &v, &tagged("raw-f64be")).unwrap();
    assert!(matches!(read_volume(&path), Err(HvanError::Data(_))));
    write_volume(&path, &v, &tagged("raw-f32le")).unwrap();
    fs::write(&path, [0u8; 12]).unwrap();
    assert!(matches!(read_volume(&path), Err(HvanError::Data(_))));
    assert!(matches!(read_volume(&dir.path().join("missing.raw")), Err(HvanError::Io { .. })));
    let wrong_shape = VolumeMeta::new([2, 2, 3], View::Transverse);
    assert!(matches!(write_volume(&path, &v, &wrong_shape), Err(HvanError::Shape(_))));
}

#[test]
fn zscore_standardizes() {
    let v = random_volume([6, 7, 8], 3).map(|x| 3.0 * x + 10.0);
    let z = zscore(&v);
    let n = z.len() as f64;
    let mean = z.data().iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = z.data().iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 1e-5, "{mean}");
    assert!((var - 1.0).abs() < 1e-4, "{var}");
}

#[test]
fn resize_identity_constant_and_ramp() {
    let v = random_volume([3, 4, 5], 4);
    assert_eq!(resize_volume(&v, [3, 4, 5]).unwrap(), v);
    let c = Tensor::full(&[3, 4, 5], 2.5f32);
    let r = resize_volume(&c, [7, 2, 9]).unwrap();
    assert_eq!(r.shape(), &[7, 2, 9]);
    assert!(r.data().iter().all(|&x| (x - 2.5).abs() < 1e-6));
    // a linear ramp stays linear under corner-aligned linear resampling
    let ramp = Tensor::from_fn(&[5, 3, 4], |i| {
        let (h, w, d) = (i / 12, i / 4 % 3, i % 4);
        (h as f32) * 2.0 - (w as f32) + 0.5 * d as f32
    });
    let up = resize_volume(&ramp, [9, 5, 7]).unwrap();
    for h in 0..9 {
        for w in 0..5 {
            for d in 0..7 {
                let want = (h as f64 * 4.0 / 8.0) * 2.0 - w as f64 * 2.0 / 4.0 + 0.5 * d as f64 * 3.0 / 6.0;
                assert!((up.get(&[h, w, d]) as f64 - want).abs() < 1e-5);
            }
        }
    }
    assert!(resize_volume(&v, [0, 2, 2]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn resize_stays_within_input_range(h in 1usize..6, w in 1usize..6, d in 1usize..6, th in 1usize..9, tw in 1usize..9, td in 1usize..9, seed in any::<u64>()) {
        let v = random_volume([h, w, d], seed);
        let r = resize_volume(&v, [th, tw, td]).unwrap();
        let lo = v.data().iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = v.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        prop_assert!(r.data().iter().all(|&x| x >= lo - 1e-5 && x <= hi + 1e-5));
        // corners are preserved; a length-1 target keeps the first sample
        prop_assert!((r.get(&[0, 0, 0]) - v.get(&[0, 0, 0])).abs() < 1e-6);
        let last = |n: usize, m: usize| if m == 1 { 0 } else { n - 1 };
        let corner = v.get(&[last(h, th), last(w, tw), last(d, td)]);
        prop_assert!((r.get(&[th - 1, tw - 1, td - 1]) - corner).abs() < 1e-6);
    }
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "cases"] {
        for e in fs::read_dir(dir.join(sub)).unwrap() {
            let p = e.unwrap().path();
            if p.is_file() {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synthetic_generation_is_deterministic_and_balanced() {
    let cfg = SynthConfig::default();
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m = synth_generate(8, 7, &cfg, a.path()).unwrap();
    synth_generate(8, 7, &cfg, b.path()).unwrap();
    synth_generate(8, 8, &cfg, c.path()).unwrap();
    let bytes = dir_bytes(a.path());
    assert_eq!(bytes.len(), 1 + 8 * 5);
    assert_eq!(bytes, dir_bytes(b.path()));
    assert_ne!(bytes, dir_bytes(c.path()));
    assert_eq!(m.rows.iter().filter(|r| r.label == 1).count(), 4);
    assert_eq!(m.split(Split::Test).len(), 2);
    assert_eq!(m.negative_fraction(Split::Train), Some(0.5));
}

#[test]
fn manifest_round_trips_and_splits_are_disjoint() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_generate(10, 2, &SynthConfig::default(), dir.path()).unwrap();
    let read = Manifest::read(&dir.path().join("manifest.csv")).unwrap();
    assert_eq!(read.rows, m.rows);
    let train: Vec<&str> = read.split(Split::Train).iter().map(|r| r.id.as_str()).collect();
    let test: Vec<&str> = read.split(Split::Test).iter().map(|r| r.id.as_str()).collect();
    assert_eq!(train.len() + test.len(), 10);
    assert!(train.iter().all(|id| !test.contains(id)));
    let cases = read.load_split(Split::Test).unwrap();
    assert_eq!(cases.len(), 2);
    assert_eq!(cases[0].vol_t.shape(), &[32, 32, 32]);

    fs::remove_file(dir.path().join("cases/case0003_s.raw")).unwrap();
    assert!(matches!(Manifest::read(&dir.path().join("manifest.csv")), Err(HvanError::Data(_))));
}

#[test]
fn labels_follow_elongation() {
    let cfg = SynthConfig::default();
    let mut axes = [0; 2];
    for i in 0..200 {
        let m = sample_case(&cfg, 9, i);
        assert_eq!(m.label, (m.lesion.elongation > cfg.threshold) as u8);
        assert_eq!(m.label as usize, i % 2);
        axes[(m.lesion.long_axis == LongAxis::D) as usize] += 1;
    }
    assert!(axes[0] > 70 && axes[1] > 70, "{axes:?}");
}

/// A moment-based reader that only sees each axis in a view where it is
/// sharp separates the classes better than one restricted to either view.
#[test]
fn fusing_views_beats_either_view_alone() {
    let cfg = SynthConfig::default();
    let (mut t, mut s, mut f, mut y) = (vec![], vec![], vec![], vec![]);
    for i in 0..200 {
        let m = sample_case(&cfg, 21, i);
        let (vt, vs) = render_views(&m, &cfg, 21, i);
        t.push(single_view_score(&vt));
        s.push(single_view_score(&vs));
        f.push(fused_score(&vt, &vs));
        y.push(m.label);
    }
    let (at, as_, af) = (auc(&t, &y).unwrap(), auc(&s, &y).unwrap(), auc(&f, &y).unwrap());
    println!("moment reader AUC: transverse {at:.3}, sagittal {as_:.3}, fused {af:.3}");
    assert!(af >= at.max(as_) + 0.03);
}

#[test]
fn invalid_synthetic_configs_are_rejected() {
    let base = SynthConfig::default();
    for bad in [
        SynthConfig { size: 48, ..base.clone() },
        SynthConfig { threshold: 1.2, ..base.clone() },
        SynthConfig { decimation: 0, ..base.clone() },
        SynthConfig { radius: [3.0, 2.0], ..base.clone() },
        SynthConfig { center_jitter: Some(-1.0), ..base.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(HvanError::Config(_))), "{bad:?}");
    }
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(synth_generate(3, 0, &base, dir.path()), Err(HvanError::Config(_))));
}
