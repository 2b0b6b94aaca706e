//! Segmentation and detection metrics and the evaluation report.

use crate::bayes::mean_uncertainty;
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::postprocess::{disruption_labels, disruption_scores, otsu_threshold, SegmentationMask};
use std::fmt::Write as _;

/// Dice index `2|A∩B| / (|A|+|B|)`; two empty masks score 1.
pub fn dice(pred: &SegmentationMask, truth: &SegmentationMask) -> Result<f64> {
    let (inter, total) = dice_counts(pred, truth)?;
    Ok(dice_from_counts(inter, total))
}

/// `(|A∩B|, |A|+|B|)`, for pooling Dice over several masks.
pub fn dice_counts(pred: &SegmentationMask, truth: &SegmentationMask) -> Result<(usize, usize)> {
    if (pred.height, pred.width) != (truth.height, truth.width) {
        return Err(Error::shape(format!(
            "dice: {}x{} vs {}x{}",
            pred.height, pred.width, truth.height, truth.width
        )));
    }
    let inter = pred
        .data
        .iter()
        .zip(&truth.data)
        .filter(|(&a, &b)| a != 0 && b != 0)
        .count();
    Ok((inter, pred.count() + truth.count()))
}

pub fn dice_from_counts(intersection: usize, total: usize) -> f64 {
    if total == 0 {
        1.0
    } else {
        2.0 * intersection as f64 / total as f64
    }
}

/// One point of a precision/recall curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: f32,
    pub recall: f64,
    pub precision: f64,
}

/// Points in order of decreasing score threshold (non-decreasing recall).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

/// Precision/recall curve and its area, computed as average precision:
/// `sum (R_i - R_{i-1}) * P_i` over thresholds at every distinct score,
/// highest first. Equal scores enter as one block.
pub fn pr_auc(scores: &[f32], labels: &[bool]) -> Result<(PrCurve, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!(
            "pr_auc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("pr_auc scores".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::invalid("pr_auc needs at least one positive label"));
    }
    let mut order: Vec<u32> = (0..scores.len() as u32).collect();
    order.sort_by(|&a, &b| scores[b as usize].total_cmp(&scores[a as usize]));
    let mut curve = PrCurve::default();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i] as usize];
        while i < order.len() && scores[order[i] as usize] == s {
            if labels[order[i] as usize] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        curve.points.push(PrPoint {
            threshold: s,
            recall,
            precision,
        });
    }
    Ok((curve, ap))
}

/// Per-B-scan A-scan scores with their ground-truth labels.
pub type ScoredColumns = (Vec<f32>, Vec<bool>);

/// Average precision of disruption detection over all pooled A-scans.
pub fn disruption_auc(volumes: &[ScoredColumns]) -> Result<f64> {
    let scores: Vec<f32> = volumes.iter().flat_map(|(s, _)| s.iter().copied()).collect();
    let labels: Vec<bool> = volumes.iter().flat_map(|(_, l)| l.iter().copied()).collect();
    if !labels.iter().any(|&l| l) {
        return Err(Error::invalid("no disrupted A-scans in the pooled set"));
    }
    Ok(pr_auc(&scores, &labels)?.1)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y = slope * x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<RegressionFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid(format!(
            "linear_fit needs two equally long vectors of length >= 2 ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("linear_fit: x is constant"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ss_tot: f64 = y.iter().map(|v| (v - ym).powi(2)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - slope * a - intercept).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 {
        0.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(RegressionFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Model output and ground truth for one volume. All tensors are
/// `[B, H, W]`.
#[derive(Clone, Debug)]
pub struct VolumeOutcome {
    pub id: String,
    pub mean_prob: Tensor,
    pub epistemic_std: Tensor,
    pub truth: Tensor,
}

/// Table-style summary of a split.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub volume_ids: Vec<String>,
    /// Volume-level Dice of Otsu masks pooled over the volume's B-scans.
    pub dice: Vec<f64>,
    /// Mean epistemic standard deviation per volume.
    pub mean_uncertainty: Vec<f64>,
    /// Average precision over every pixel of the split.
    pub photoreceptor_auc: f64,
    /// Average precision over every A-scan of the split; `None` when the
    /// split holds no disrupted A-scan.
    pub disruption_auc: Option<f64>,
    pub dice_mean: f64,
    /// Population standard deviation across volumes.
    pub dice_std: f64,
    /// Dice against mean uncertainty; `None` with fewer than two volumes or
    /// constant uncertainty.
    pub fit: Option<RegressionFit>,
}

fn check_stack(t: &Tensor, what: &str, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::shape(format!(
            "{what} has shape {:?}, expected {shape:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Computes every report field for a split.
pub fn evaluate(outcomes: &[VolumeOutcome]) -> Result<EvalReport> {
    if outcomes.is_empty() {
        return Err(Error::invalid("evaluate needs at least one volume"));
    }
    let mut report = EvalReport {
        volume_ids: Vec::new(),
        dice: Vec::new(),
        mean_uncertainty: Vec::new(),
        photoreceptor_auc: 0.0,
        disruption_auc: None,
        dice_mean: 0.0,
        dice_std: 0.0,
        fit: None,
    };
    let mut pixel_scores = Vec::new();
    let mut pixel_labels = Vec::new();
    let mut columns: Vec<ScoredColumns> = Vec::new();
    for o in outcomes {
        let shape = o.truth.shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::shape(format!("{}: truth must be [B, H, W]", o.id)));
        }
        check_stack(&o.mean_prob, "mean_prob", &shape)?;
        check_stack(&o.epistemic_std, "epistemic_std", &shape)?;
        let (mut inter, mut total) = (0usize, 0usize);
        let mut stds = Vec::with_capacity(shape[0]);
        for b in 0..shape[0] {
            let prob = o.mean_prob.index_axis0(b)?;
            let truth = SegmentationMask::from_binary(&o.truth.index_axis0(b)?)?;
            let (i, t) = dice_counts(&otsu_threshold(&prob)?, &truth)?;
            inter += i;
            total += t;
            pixel_scores.extend_from_slice(prob.data());
            pixel_labels.extend(truth.data.iter().map(|&v| v != 0));
            columns.push((disruption_scores(&prob)?, disruption_labels(&truth)));
            stds.push(o.epistemic_std.index_axis0(b)?);
        }
        report.volume_ids.push(o.id.clone());
        report.dice.push(dice_from_counts(inter, total));
        report.mean_uncertainty.push(mean_uncertainty(&stds)?);
    }
    report.photoreceptor_auc = pr_auc(&pixel_scores, &pixel_labels)?.1;
    if columns.iter().any(|(_, l)| l.iter().any(|&v| v)) {
        report.disruption_auc = Some(disruption_auc(&columns)?);
    }
    let n = report.dice.len() as f64;
    report.dice_mean = report.dice.iter().sum::<f64>() / n;
    report.dice_std =
        (report.dice.iter().map(|d| (d - report.dice_mean).powi(2)).sum::<f64>() / n).sqrt();
    report.fit = linear_fit(&report.mean_uncertainty, &report.dice).ok();
    Ok(report)
}

impl EvalReport {
    /// `key=value` summary with a fixed field order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "volumes={}", self.dice.len());
        let _ = writeln!(s, "photoreceptor_auc={}", self.photoreceptor_auc);
        let _ = writeln!(s, "dice_mean={}", self.dice_mean);
        let _ = writeln!(s, "dice_std={}", self.dice_std);
        match self.disruption_auc {
            Some(v) => {
                let _ = writeln!(s, "disruption_auc={v}");
            }
            None => {
                let _ = writeln!(s, "disruption_auc=NA");
            }
        }
        let mu = self.mean_uncertainty.iter().sum::<f64>() / self.mean_uncertainty.len() as f64;
        let _ = writeln!(s, "mean_uncertainty={mu}");
        match self.fit {
            Some(f) => {
                let _ = writeln!(s, "regression_slope={}", f.slope);
                let _ = writeln!(s, "regression_intercept={}", f.intercept);
                let _ = writeln!(s, "regression_r_squared={}", f.r_squared);
            }
            None => {
                let _ = writeln!(s, "regression_slope=NA");
                let _ = writeln!(s, "regression_intercept=NA");
                let _ = writeln!(s, "regression_r_squared=NA");
            }
        }
        s
    }

    /// One row per volume: `volume,dice,mean_uncertainty`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("volume,dice,mean_uncertainty\n");
        for ((id, d), u) in self.volume_ids.iter().zip(&self.dice).zip(&self.mean_uncertainty) {
            let _ = writeln!(s, "{id},{d},{u}");
        }
        s
    }

    /// Scatter of (mean uncertainty, Dice) per volume with the OLS line.
    pub fn to_svg(&self) -> String {
        scatter_svg(&self.mean_uncertainty, &self.dice, self.fit)
    }
}

fn scatter_svg(x: &[f64], y: &[f64], fit: Option<RegressionFit>) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const M: f64 = 48.0;
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (x0, x1) = span(x);
    let (y0, y1) = span(y);
    let px = |v: f64| M + (v - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |v: f64| H - M - (v - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<path d=\"M{M} {M} V{} H{}\" stroke=\"black\" fill=\"none\"/>",
        H - M,
        W - M
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">mean uncertainty</text>",
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 {})\">Dice</text>",
        H / 2.0,
        H / 2.0
    );
    for (a, b) in x.iter().zip(y) {
        let _ = writeln!(
            s,
            "<circle class=\"point\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\"/>",
            px(*a),
            py(*b)
        );
    }
    if let Some(f) = fit {
        let _ = writeln!(
            s,
            "<line class=\"fit\" x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"firebrick\"/>",
            px(x0),
            py(f.slope * x0 + f.intercept),
            px(x1),
            py(f.slope * x1 + f.intercept)
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\">R² = {:.4}</text>",
            W - M - 90.0,
            M - 10.0,
            f.r_squared
        );
    }
    s.push_str("</svg>\n");
    s
}

/// AUCs at one MC sample count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub samples: usize,
    pub photoreceptor_auc: f64,
    pub disruption_auc: Option<f64>,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("T,photoreceptor_auc,disruption_auc\n");
    for r in rows {
        let d = r.disruption_auc.map_or("NA".to_string(), |v| v.to_string());
        let _ = writeln!(s, "{},{},{}", r.samples, r.photoreceptor_auc, d);
    }
    s
}
