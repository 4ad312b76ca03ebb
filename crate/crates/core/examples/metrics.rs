//! Classification metrics and the focal loss on hand-made predictions.

use hvan::metrics::{auc, confusion_metrics, DEFAULT_THRESHOLD};
use hvan::train::focal_loss;

fn main() -> hvan::Result<()> {
    let probs = [0.92, 0.81, 0.67, 0.55, 0.48, 0.35, 0.30, 0.12, 0.70, 0.20];
    let labels = [1, 1, 0, 1, 0, 1, 0, 0, 1, 0];

    // AUC is the fraction of positive/negative pairs ranked correctly
    println!("AUC {:.4}", auc(&probs, &labels)?);
    let m = confusion_metrics(&probs, &labels, DEFAULT_THRESHOLD)?;
    println!("tp {} fp {} tn {} fn {}", m.tp, m.fp, m.tn, m.fn_);
    println!("{}", serde_json::to_string_pretty(&m)?);

    // the focal term discounts confident, correct predictions
    for gamma in [0.0, 1.0, 2.0, 5.0] {
        println!("focal loss, gamma {gamma}: {:.5}", focal_loss(&probs, &labels, 0.5, gamma));
    }
    Ok(())
}
