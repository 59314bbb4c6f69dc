//! Class-agnostic instance-segmentation Average Precision following the
//! standard scan benchmark protocol: greedy confidence-ordered matching per
//! IoU threshold, precision-envelope step integration, AP averaged over
//! thresholds 0.50:0.05:0.95 plus AP50 and AP25.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One predicted instance: its point set and a ranking confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct InstancePrediction {
    pub points: Vec<u32>,
    pub confidence: f64,
}

impl InstancePrediction {
    pub fn validate(&self, num_points: usize) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::invalid("empty instance prediction"));
        }
        if self.points.iter().any(|&p| p as usize >= num_points) {
            return Err(Error::invalid("prediction references an unknown point"));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::invalid("confidence must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Precision/recall samples at one IoU threshold, in ranking order.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PrCurve {
    pub iou_threshold: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub ap: f64,
}

/// The evaluation report for one scene.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct APReport {
    /// Mean AP over IoU thresholds 0.50:0.05:0.95.
    pub ap: f64,
    pub ap50: f64,
    pub ap25: f64,
    pub curves: Vec<PrCurve>,
}

impl APReport {
    pub fn text_table(&self) -> String {
        format!(
            "{:>8} {:>8} {:>8}\n{:>8.3} {:>8.3} {:>8.3}\n",
            "AP", "AP50", "AP25", self.ap, self.ap50, self.ap25
        )
    }
}

/// The ten averaged thresholds plus the two headline single thresholds.
pub fn standard_iou_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

/// Intersection over union of two point-index sets; 0 when both are empty.
pub fn mask_iou(a: &[u32], b: &[u32]) -> f64 {
    let sa: HashSet<u32> = a.iter().copied().collect();
    let mut intersection = 0usize;
    let mut b_unique: HashSet<u32> = HashSet::with_capacity(b.len());
    for &x in b {
        if b_unique.insert(x) && sa.contains(&x) {
            intersection += 1;
        }
    }
    let union = sa.len() + b_unique.len() - intersection;
    if union == 0 {
        0.0
    } else {
        intersection as f64 / union as f64
    }
}

/// Groups ground-truth ids (0 = unannotated, excluded) into instances.
pub fn gt_instances(gt_ids: &[u32]) -> Vec<Vec<u32>> {
    let mut map: std::collections::BTreeMap<u32, Vec<u32>> = std::collections::BTreeMap::new();
    for (point, &id) in gt_ids.iter().enumerate() {
        if id != 0 {
            map.entry(id).or_default().push(point as u32);
        }
    }
    map.into_values().collect()
}

/// Evaluates predictions against per-point ground-truth instance ids.
///
/// Unannotated points (gt id 0) are removed from predictions and ground
/// truth before matching; predictions left empty are dropped. Returns None
/// when the scene has no annotated instances (reported as a skip upstream).
pub fn average_precision(
    predictions: &[InstancePrediction],
    gt_ids: &[u32],
    iou_thresholds: &[f64],
) -> Result<Option<APReport>> {
    let gt = gt_instances(gt_ids);
    if gt.is_empty() {
        return Ok(None);
    }
    for p in predictions {
        p.validate(gt_ids.len())?;
    }
    // Rank by descending confidence, ties to the earlier prediction.
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| {
        predictions[b]
            .confidence
            .partial_cmp(&predictions[a].confidence)
            .unwrap()
            .then(a.cmp(&b))
    });
    let ranked: Vec<Vec<u32>> = order
        .iter()
        .map(|&idx| {
            predictions[idx]
                .points
                .iter()
                .copied()
                .filter(|&p| gt_ids[p as usize] != 0)
                .collect::<Vec<u32>>()
        })
        .filter(|points| !points.is_empty())
        .collect();

    let mut curves = Vec::with_capacity(iou_thresholds.len());
    for &threshold in iou_thresholds {
        curves.push(curve_at_threshold(&ranked, &gt, threshold));
    }
    let averaged: Vec<f64> = standard_iou_thresholds();
    let mean_ap = {
        let aps: Vec<f64> = averaged
            .iter()
            .map(|t| curve_at_threshold(&ranked, &gt, *t).ap)
            .collect();
        aps.iter().sum::<f64>() / aps.len() as f64
    };
    let ap50 = curve_at_threshold(&ranked, &gt, 0.50).ap;
    let ap25 = curve_at_threshold(&ranked, &gt, 0.25).ap;
    Ok(Some(APReport {
        ap: mean_ap,
        ap50,
        ap25,
        curves,
    }))
}

/// Greedy matching at a single threshold: each prediction, in rank order,
/// claims the unmatched ground-truth instance with the highest IoU >= t.
fn curve_at_threshold(ranked: &[Vec<u32>], gt: &[Vec<u32>], threshold: f64) -> PrCurve {
    let mut gt_taken = vec![false; gt.len()];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut precision = Vec::with_capacity(ranked.len());
    let mut recall = Vec::with_capacity(ranked.len());
    for pred in ranked {
        let mut best: Option<(f64, usize)> = None;
        for (g, gt_points) in gt.iter().enumerate() {
            if gt_taken[g] {
                continue;
            }
            let iou = mask_iou(pred, gt_points);
            if iou >= threshold {
                let better = match best {
                    None => true,
                    Some((bi, _)) => iou > bi,
                };
                if better {
                    best = Some((iou, g));
                }
            }
        }
        match best {
            Some((_, g)) => {
                gt_taken[g] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / gt.len() as f64);
    }
    let ap = step_integrate(&precision, &recall);
    PrCurve {
        iou_threshold: threshold,
        precision,
        recall,
        ap,
    }
}

/// Area under the precision envelope with step (not trapezoid) integration.
fn step_integrate(precision: &[f64], recall: &[f64]) -> f64 {
    if precision.is_empty() {
        return 0.0;
    }
    // Envelope: precision at rank k becomes max over ranks >= k.
    let mut envelope = precision.to_vec();
    for k in (0..envelope.len() - 1).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, &r) in envelope.iter().zip(recall) {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    ap
}
