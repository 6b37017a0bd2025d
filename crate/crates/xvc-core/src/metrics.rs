//! Standard depth-evaluation metrics and the motion/static split protocol.
//!
//! Error metrics (abs rel, sq rel, RMSE, RMSE log) divide by ground truth;
//! accuracy metrics δ₁..δ₃ count pixels whose depth ratio stays below
//! 1.25, 1.25², 1.25³. Pixels with ground truth outside (0, cap] are
//! excluded. Optional median scaling rescales predictions by
//! median(gt)/median(pred) before evaluation, the monocular-protocol
//! convention.

use crate::camera::DepthMap;
use crate::error::{Error, Result};

/// One evaluation's worth of metrics. `log10` (mean |log10 p - log10 g|) is
/// reported programmatically but not part of the fixed CSV schema.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub log10: f64,
    pub n_pixels: usize,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.delta1, self.delta2, self.delta3
        )
    }
}

fn median(sorted: &mut Vec<f64>) -> f64 {
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Evaluate a prediction against ground truth. Only pixels valid in both
/// maps with ground truth in (0, cap] participate.
pub fn evaluate_depth(
    pred: &DepthMap,
    gt: &DepthMap,
    cap: f64,
    median_scale: bool,
) -> Result<MetricReport> {
    if pred.height != gt.height || pred.width != gt.width {
        return Err(Error::contract(
            "evaluate_depth",
            format!(
                "shape mismatch: {}x{} vs {}x{}",
                pred.height, pred.width, gt.height, gt.width
            ),
        ));
    }
    if !(cap > 0.0) {
        return Err(Error::contract("evaluate_depth", format!("cap must be positive, got {cap}")));
    }
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for i in 0..gt.values.len() {
        if gt.valid[i] && pred.valid[i] && gt.values[i] > 0.0 && gt.values[i] <= cap {
            pairs.push((pred.values[i], gt.values[i]));
        }
    }
    if pairs.is_empty() {
        return Err(Error::domain("evaluate_depth", "no valid pixels after capping"));
    }
    let scale = if median_scale {
        let mut gts: Vec<f64> = pairs.iter().map(|&(_, g)| g).collect();
        let mut preds: Vec<f64> = pairs.iter().map(|&(p, _)| p).collect();
        median(&mut gts) / median(&mut preds)
    } else {
        1.0
    };

    let n = pairs.len() as f64;
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log, mut log10) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut d1, mut d2, mut d3) = (0usize, 0usize, 0usize);
    let (t1, t2, t3) = (1.25, 1.25f64.powi(2), 1.25f64.powi(3));
    for &(p0, g) in &pairs {
        let p = p0 * scale;
        let diff = p - g;
        abs_rel += diff.abs() / g;
        sq_rel += diff * diff / g;
        sq += diff * diff;
        sq_log += (p.ln() - g.ln()).powi(2);
        log10 += (p.log10() - g.log10()).abs();
        let ratio = (p / g).max(g / p);
        if ratio < t1 {
            d1 += 1;
        }
        if ratio < t2 {
            d2 += 1;
        }
        if ratio < t3 {
            d3 += 1;
        }
    }
    Ok(MetricReport {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (sq / n).sqrt(),
        rmse_log: (sq_log / n).sqrt(),
        delta1: d1 as f64 / n,
        delta2: d2 as f64 / n,
        delta3: d3 as f64 / n,
        log10: log10 / n,
        n_pixels: pairs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitLabel {
    Motion,
    Static,
}

impl std::str::FromStr for SplitLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "motion" => Ok(SplitLabel::Motion),
            "static" => Ok(SplitLabel::Static),
            other => Err(Error::Config(format!("unknown split label {other:?}"))),
        }
    }
}

/// Per-split aggregate (unweighted mean of per-image reports; pixel counts
/// summed). An empty split is omitted with a warning rather than an error.
#[derive(Debug, Clone, Default)]
pub struct SplitReport {
    pub motion: Option<MetricReport>,
    pub static_set: Option<MetricReport>,
    pub warnings: Vec<String>,
}

/// Unweighted mean of per-image reports.
pub fn mean_report(reports: &[MetricReport]) -> Option<MetricReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let mut acc = MetricReport {
        abs_rel: 0.0,
        sq_rel: 0.0,
        rmse: 0.0,
        rmse_log: 0.0,
        delta1: 0.0,
        delta2: 0.0,
        delta3: 0.0,
        log10: 0.0,
        n_pixels: 0,
    };
    for r in reports {
        acc.abs_rel += r.abs_rel / n;
        acc.sq_rel += r.sq_rel / n;
        acc.rmse += r.rmse / n;
        acc.rmse_log += r.rmse_log / n;
        acc.delta1 += r.delta1 / n;
        acc.delta2 += r.delta2 / n;
        acc.delta3 += r.delta3 / n;
        acc.log10 += r.log10 / n;
        acc.n_pixels += r.n_pixels;
    }
    Some(acc)
}

/// Evaluate pairs labelled motion/static and aggregate each split separately.
pub fn evaluate_split(
    pairs: &[(DepthMap, DepthMap)],
    labels: &[SplitLabel],
    cap: f64,
    median_scale: bool,
) -> Result<SplitReport> {
    if pairs.len() != labels.len() {
        return Err(Error::contract(
            "evaluate_split",
            format!("{} pairs but {} labels", pairs.len(), labels.len()),
        ));
    }
    let mut motion = Vec::new();
    let mut static_set = Vec::new();
    for ((pred, gt), label) in pairs.iter().zip(labels) {
        let report = evaluate_depth(pred, gt, cap, median_scale)?;
        match label {
            SplitLabel::Motion => motion.push(report),
            SplitLabel::Static => static_set.push(report),
        }
    }
    let mut out = SplitReport {
        motion: mean_report(&motion),
        static_set: mean_report(&static_set),
        warnings: Vec::new(),
    };
    if out.motion.is_none() {
        out.warnings.push("motion split is empty; omitted".into());
    }
    if out.static_set.is_none() {
        out.warnings.push("static split is empty; omitted".into());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn depth(values: Vec<f64>) -> DepthMap {
        let w = values.len();
        DepthMap::all_valid(1, w, values).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let gt = depth(vec![2.0, 5.0, 9.0]);
        let r = evaluate_depth(&gt, &gt, 80.0, false).unwrap();
        assert_eq!(r.abs_rel, 0.0);
        assert_eq!(r.rmse, 0.0);
        assert_eq!((r.delta1, r.delta2, r.delta3), (1.0, 1.0, 1.0));
        assert_eq!(r.n_pixels, 3);
    }

    #[test]
    fn hand_computed_fixture() {
        // gt = [4, 10], pred = [5, 8], no scaling:
        // abs_rel = (1/4 + 2/10)/2 = 0.225, rmse = sqrt((1 + 4)/2)
        let gt = depth(vec![4.0, 10.0]);
        let pred = depth(vec![5.0, 8.0]);
        let r = evaluate_depth(&pred, &gt, 80.0, false).unwrap();
        assert!((r.abs_rel - 0.225).abs() < 1e-9);
        assert!((r.rmse - 2.5f64.sqrt()).abs() < 1e-9);
        assert!((r.sq_rel - (0.25 + 0.4) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn median_scaling_removes_uniform_scale() {
        let gt = depth(vec![3.0, 6.0, 9.0, 12.0]);
        let pred = depth(vec![3.3, 5.8, 9.4, 11.7]);
        let base = evaluate_depth(&pred, &gt, 80.0, true).unwrap();
        for c in [2.0, 0.25, 17.5] {
            let scaled = depth(pred.values.iter().map(|v| v * c).collect());
            let r = evaluate_depth(&scaled, &gt, 80.0, true).unwrap();
            assert!((r.abs_rel - base.abs_rel).abs() < 1e-12, "c = {c}");
            assert!((r.rmse - base.rmse).abs() < 1e-12, "c = {c}");
            assert!((r.delta1 - base.delta1).abs() < 1e-12, "c = {c}");
        }
    }

    #[test]
    fn cap_excludes_far_pixels() {
        let gt = depth(vec![4.0, 100.0]);
        let pred = depth(vec![5.0, 5.0]);
        let r = evaluate_depth(&pred, &gt, 80.0, false).unwrap();
        assert_eq!(r.n_pixels, 1);
        assert!((r.abs_rel - 0.25).abs() < 1e-12);
        // every pixel capped out -> domain error
        assert!(evaluate_depth(&pred, &depth(vec![100.0, 200.0]), 80.0, false)
            .unwrap_err()
            .is_domain());
    }

    #[test]
    fn noise_degrades_rmse() {
        let gt = depth((1..=32).map(|i| i as f64).collect());
        let clean = evaluate_depth(&gt, &gt, 80.0, false).unwrap();
        let mut rng = crate::rng::SplitMix64::new(99);
        for _ in 0..10 {
            let noisy = depth(gt.values.iter().map(|v| v + rng.uniform(0.01, 0.5)).collect());
            let r = evaluate_depth(&noisy, &gt, 80.0, false).unwrap();
            assert!(r.rmse >= clean.rmse);
            assert!(r.rmse > 0.0);
        }
    }

    #[test]
    fn split_evaluation() {
        let gt = depth(vec![4.0, 10.0]);
        let pred = depth(vec![5.0, 8.0]);
        // one motion pair, no static pairs
        let report = evaluate_split(
            &[(gt.clone(), gt.clone())],
            &[SplitLabel::Motion],
            80.0,
            false,
        )
        .unwrap();
        let motion = report.motion.unwrap();
        assert_eq!(motion.abs_rel, 0.0);
        assert!(report.static_set.is_none());
        assert_eq!(report.warnings.len(), 1);

        // identical pairs in different splits agree
        let report = evaluate_split(
            &[(pred.clone(), gt.clone()), (pred.clone(), gt.clone())],
            &[SplitLabel::Motion, SplitLabel::Static],
            80.0,
            false,
        )
        .unwrap();
        let (m, s) = (report.motion.unwrap(), report.static_set.unwrap());
        assert_eq!(m.abs_rel, s.abs_rel);
        assert_eq!(m.rmse, s.rmse);
    }

    #[test]
    fn split_aggregation_matches_brute_force_mean() {
        let gts = [depth(vec![4.0, 10.0]), depth(vec![2.0, 8.0]), depth(vec![3.0, 6.0])];
        let preds = [depth(vec![5.0, 8.0]), depth(vec![2.5, 7.0]), depth(vec![3.3, 5.5])];
        let pairs: Vec<_> = preds.iter().cloned().zip(gts.iter().cloned()).collect();
        let labels = vec![SplitLabel::Motion; 3];
        let report = evaluate_split(&pairs, &labels, 80.0, false).unwrap();
        let agg = report.motion.unwrap();
        let singles: Vec<MetricReport> = pairs
            .iter()
            .map(|(p, g)| evaluate_depth(p, g, 80.0, false).unwrap())
            .collect();
        let brute: f64 = singles.iter().map(|r| r.abs_rel).sum::<f64>() / 3.0;
        assert!((agg.abs_rel - brute).abs() < 1e-12);
        let brute_rmse: f64 = singles.iter().map(|r| r.rmse).sum::<f64>() / 3.0;
        assert!((agg.rmse - brute_rmse).abs() < 1e-12);
    }

    #[test]
    fn delta_ordering_invariant() {
        let mut rng = crate::rng::SplitMix64::new(5);
        for _ in 0..20 {
            let gt = depth((0..16).map(|_| rng.uniform(1.0, 50.0)).collect());
            let pred = depth(gt.values.iter().map(|v| v * rng.uniform(0.5, 2.0)).collect());
            let r = evaluate_depth(&pred, &gt, 80.0, false).unwrap();
            assert!(r.delta1 <= r.delta2 && r.delta2 <= r.delta3);
        }
    }
}
