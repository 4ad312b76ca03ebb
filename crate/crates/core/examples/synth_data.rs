//! Generate a small synthetic paired-view set on disk and score it with the
//! moment reader, which shows how much each view alone can tell.

use hvan::data::synth::{fused_score, single_view_score, synth_generate, SynthConfig};
use hvan::data::Split;
use hvan::metrics::auc;

fn main() -> hvan::Result<()> {
    let dir = tempfile::tempdir().expect("temporary directory");
    let cfg = SynthConfig::default();
    let manifest = synth_generate(40, 7, &cfg, dir.path())?;
    println!(
        "wrote {} cases to {} ({} train, {} test)",
        manifest.rows.len(),
        dir.path().display(),
        manifest.split(Split::Train).len(),
        manifest.split(Split::Test).len()
    );

    let (mut t, mut s, mut f, mut y) = (vec![], vec![], vec![], vec![]);
    for row in &manifest.rows {
        let pair = manifest.load(row)?;
        t.push(single_view_score(&pair.vol_t));
        s.push(single_view_score(&pair.vol_s));
        f.push(fused_score(&pair.vol_t, &pair.vol_s));
        y.push(row.label);
    }
    println!("moment reader AUC");
    println!("  transverse only {:.3}", auc(&t, &y)?);
    println!("  sagittal only   {:.3}", auc(&s, &y)?);
    println!("  both views      {:.3}", auc(&f, &y)?);
    Ok(())
}
