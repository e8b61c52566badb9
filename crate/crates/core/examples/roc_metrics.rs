//! AUC, cross-entropy and the ROC curve for a handful of scores.
//!
//! cargo run --example roc_metrics

use trojan_weights::metrics::{evaluate, roc_curve, trapezoid_area, DEFAULT_CLAMP};

fn main() -> trojan_weights::Result<()> {
    let probs = [0.9, 0.8, 0.7, 0.7, 0.4, 0.3, 0.2, 0.1];
    let labels = [1, 1, 0, 1, 0, 1, 0, 0];
    let report = evaluate(&probs, &labels, DEFAULT_CLAMP)?;
    println!("AUC {:.4}, CE {:.4}, {} positive / {} negative", report.auc, report.ce, report.n_pos, report.n_neg);
    let curve = roc_curve(&probs, &labels)?;
    for p in &curve {
        println!("fpr {:.3} tpr {:.3}", p.fpr, p.tpr);
    }
    println!("trapezoid area {:.4}", trapezoid_area(&curve));
    Ok(())
}
