//! Center-distance matching, precision/recall/F1 and confidence-threshold optimization.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::types::{Annotation, DetectionRecord, Label};

/// Which records take part in matching.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassFilter {
    #[default]
    MitoticFigure,
    Imposter,
    All,
}

impl ClassFilter {
    pub fn accepts(self, label: Label) -> bool {
        match self {
            ClassFilter::MitoticFigure => label == Label::MitoticFigure,
            ClassFilter::Imposter => label == Label::Imposter,
            ClassFilter::All => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    /// Maximum center distance in pixels (30 px is 7.5 µm at 0.25 µm/px).
    pub radius: f64,
    pub class_filter: ClassFilter,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            radius: 30.0,
            class_filter: ClassFilter::MitoticFigure,
        }
    }
}

/// Counts plus matched `(detection index, ground-truth index)` pairs into the input slices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
}

impl EvalReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, threshold: f64) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        EvalReport {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
            threshold,
        }
    }
}

/// Threshold that keeps no detection: the next representable value above 1.
pub const KEEP_NONE_THRESHOLD: f64 = 1.000_000_000_000_000_2;

/// Indices of class-filtered detections in matching order: confidence descending,
/// then `y`, then `x`, then input position.
fn ranked(dets: &[DetectionRecord], filter: ClassFilter) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).filter(|&i| filter.accepts(dets[i].label)).collect();
    idx.sort_by(|&a, &b| dets[a].rank_cmp(&dets[b]).then(a.cmp(&b)));
    idx
}

/// Greedy matching over `order`; returns the ground-truth index matched by each entry.
fn greedy(dets: &[DetectionRecord], order: &[usize], gts: &[Annotation], config: &MatchConfig) -> Vec<Option<usize>> {
    let mut by_image: HashMap<u64, Vec<usize>> = HashMap::new();
    for (j, g) in gts.iter().enumerate() {
        if config.class_filter.accepts(g.label) {
            by_image.entry(g.image_id).or_default().push(j);
        }
    }
    let mut taken = vec![false; gts.len()];
    order
        .iter()
        .map(|&i| {
            let d = &dets[i];
            let candidates = by_image.get(&d.image_id)?;
            let mut best: Option<(f64, usize)> = None;
            for &j in candidates {
                if taken[j] {
                    continue;
                }
                let dist = d.center.distance(gts[j].center);
                if dist <= config.radius && best.is_none_or(|(bd, _)| dist < bd) {
                    best = Some((dist, j));
                }
            }
            let (_, j) = best?;
            taken[j] = true;
            Some(j)
        })
        .collect()
}

fn filtered_gt_count(gts: &[Annotation], filter: ClassFilter) -> usize {
    gts.iter().filter(|g| filter.accepts(g.label)).count()
}

/// Greedy one-to-one matching: detections in rank order each take the nearest unmatched
/// ground truth of the same image within `radius`. Detections and ground truth of other
/// classes are ignored.
pub fn match_detections(dets: &[DetectionRecord], gts: &[Annotation], config: &MatchConfig) -> MatchResult {
    let order = ranked(dets, config.class_filter);
    let matched = greedy(dets, &order, gts, config);
    let pairs: Vec<(usize, usize)> = order
        .iter()
        .zip(&matched)
        .filter_map(|(&i, m)| m.map(|j| (i, j)))
        .collect();
    let tp = pairs.len();
    MatchResult {
        tp,
        fp: order.len() - tp,
        fn_: filtered_gt_count(gts, config.class_filter) - tp,
        pairs,
    }
}

/// Report for detections with `confidence >= threshold`.
pub fn evaluate_at(dets: &[DetectionRecord], gts: &[Annotation], config: &MatchConfig, threshold: f64) -> EvalReport {
    let kept: Vec<DetectionRecord> = dets.iter().filter(|d| d.confidence >= threshold).cloned().collect();
    let m = match_detections(&kept, gts, config);
    EvalReport::from_counts(m.tp, m.fp, m.fn_, threshold)
}

/// Picks the confidence threshold with the best F1.
///
/// Candidates are the distinct detection confidences plus [`KEEP_NONE_THRESHOLD`]; ties go
/// to the lowest threshold. Matching is greedy in rank order, so the detections kept at a
/// threshold are a prefix of the ranking and their outcomes equal the prefix of one full
/// matching pass.
pub fn optimize_threshold(dets: &[DetectionRecord], gts: &[Annotation], config: &MatchConfig) -> EvalReport {
    let order = ranked(dets, config.class_filter);
    let matched = greedy(dets, &order, gts, config);
    let total_gt = filtered_gt_count(gts, config.class_filter);

    let mut best = EvalReport::from_counts(0, 0, total_gt, KEEP_NONE_THRESHOLD);
    let mut tp = 0;
    let mut k = 0;
    while k < order.len() {
        let t = dets[order[k]].confidence;
        while k < order.len() && dets[order[k]].confidence == t {
            tp += usize::from(matched[k].is_some());
            k += 1;
        }
        let report = EvalReport::from_counts(tp, k - tp, total_gt - tp, t);
        // thresholds are visited in descending order, so ">=" moves ties to the lower one
        if report.f1 >= best.f1 {
            best = report;
        }
    }
    best
}

/// Optimizes one threshold per group (for example per scanner). Records whose image has
/// no group are left out.
pub fn optimize_threshold_by_group<G>(
    dets: &[DetectionRecord],
    gts: &[Annotation],
    config: &MatchConfig,
    group_of: G,
) -> BTreeMap<String, EvalReport>
where
    G: Fn(u64) -> Option<String>,
{
    let mut groups: BTreeMap<String, (Vec<DetectionRecord>, Vec<Annotation>)> = BTreeMap::new();
    for d in dets {
        if let Some(g) = group_of(d.image_id) {
            groups.entry(g).or_default().0.push(d.clone());
        }
    }
    for a in gts {
        if let Some(g) = group_of(a.image_id) {
            groups.entry(g).or_default().1.push(a.clone());
        }
    }
    groups
        .into_iter()
        .map(|(g, (d, a))| (g, optimize_threshold(&d, &a, config)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageCounts {
    pub image_id: u64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Per-image counts at `threshold`, sorted by image id. Images with ground truth but no
/// detections are included.
pub fn per_image_counts(
    dets: &[DetectionRecord],
    gts: &[Annotation],
    config: &MatchConfig,
    threshold: f64,
) -> Vec<ImageCounts> {
    let mut det_groups: BTreeMap<u64, Vec<DetectionRecord>> = BTreeMap::new();
    for d in dets.iter().filter(|d| d.confidence >= threshold) {
        det_groups.entry(d.image_id).or_default().push(d.clone());
    }
    let mut gt_groups: BTreeMap<u64, Vec<Annotation>> = BTreeMap::new();
    for g in gts {
        gt_groups.entry(g.image_id).or_default().push(g.clone());
    }
    let mut ids: Vec<u64> = det_groups.keys().chain(gt_groups.keys()).copied().collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .map(|id| {
            let d = det_groups.get(&id).map_or(&[][..], Vec::as_slice);
            let g = gt_groups.get(&id).map_or(&[][..], Vec::as_slice);
            let m = match_detections(d, g, config);
            ImageCounts {
                image_id: id,
                tp: m.tp,
                fp: m.fp,
                fn_: m.fn_,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{BBox, Point};

    fn gt(id: u64, x: f64, y: f64) -> Annotation {
        Annotation::from_box(id, 1, BBox::centered(x, y, 50.0, 50.0), Label::MitoticFigure).unwrap()
    }

    fn det(x: f64, y: f64, conf: f64) -> DetectionRecord {
        DetectionRecord::new(
            1,
            Point::new(x, y),
            BBox::centered(x, y, 50.0, 50.0),
            Label::MitoticFigure,
            conf,
        )
        .unwrap()
    }

    #[test]
    fn perfect_detector() {
        let gts = vec![gt(1, 100.0, 100.0), gt(2, 300.0, 100.0)];
        let dets: Vec<_> = gts.iter().map(|g| det(g.center.x, g.center.y, 1.0)).collect();
        let m = match_detections(&dets, &gts, &MatchConfig::default());
        assert_eq!((m.tp, m.fp, m.fn_), (2, 0, 0));
        assert_eq!(evaluate_at(&dets, &gts, &MatchConfig::default(), 0.5).f1, 1.0);
    }

    #[test]
    fn counting_example() {
        let gts = vec![gt(1, 100.0, 100.0), gt(2, 400.0, 100.0), gt(3, 700.0, 100.0)];
        let dets = vec![det(110.0, 100.0, 0.9), det(250.0, 300.0, 0.8)];
        let r = evaluate_at(&dets, &gts, &MatchConfig::default(), 0.0);
        assert_eq!((r.tp, r.fp, r.fn_), (1, 1, 2));
        assert_eq!(r.precision, 0.5);
        assert!((r.recall - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.f1 - 0.4).abs() < 1e-12);
    }

    #[test]
    fn higher_confidence_wins_the_match() {
        let gts = vec![gt(1, 100.0, 100.0)];
        let dets = vec![det(105.0, 100.0, 0.8), det(120.0, 100.0, 0.9)];
        let m = match_detections(&dets, &gts, &MatchConfig::default());
        assert_eq!(m.pairs, vec![(1, 0)]);
        assert_eq!(m.fp, 1);
    }

    #[test]
    fn no_detections_picks_sentinel() {
        let gts = vec![gt(1, 0.0, 0.0), gt(2, 100.0, 0.0)];
        let r = optimize_threshold(&[], &gts, &MatchConfig::default());
        assert_eq!(r.threshold, KEEP_NONE_THRESHOLD);
        assert!(r.threshold > 1.0);
        assert_eq!((r.f1, r.fn_), (0.0, 2));
    }

    #[test]
    fn hand_swept_threshold() {
        let gts = vec![gt(1, 100.0, 100.0), gt(2, 500.0, 100.0)];
        let dets = vec![det(100.0, 100.0, 0.9), det(300.0, 300.0, 0.8), det(500.0, 100.0, 0.7)];
        assert!((evaluate_at(&dets, &gts, &MatchConfig::default(), 0.9).f1 - 2.0 / 3.0).abs() < 1e-12);
        let r = optimize_threshold(&dets, &gts, &MatchConfig::default());
        assert_eq!(r.threshold, 0.7);
        assert!((r.f1 - 0.8).abs() < 1e-12);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.recall, 1.0);
    }

    #[test]
    fn other_class_is_ignored() {
        let mut imp = gt(9, 100.0, 100.0);
        imp.label = Label::Imposter;
        let mut d = det(100.0, 100.0, 0.9);
        d.label = Label::Imposter;
        let m = match_detections(&[d.clone()], &[imp.clone()], &MatchConfig::default());
        assert_eq!((m.tp, m.fp, m.fn_), (0, 0, 0));
        let all = MatchConfig {
            class_filter: ClassFilter::All,
            ..Default::default()
        };
        assert_eq!(match_detections(&[d], &[imp], &all).tp, 1);
    }

    #[test]
    fn images_do_not_cross_match() {
        let g = gt(1, 100.0, 100.0);
        let mut d = det(100.0, 100.0, 0.9);
        d.image_id = 2;
        let m = match_detections(&[d], &[g], &MatchConfig::default());
        assert_eq!((m.tp, m.fp, m.fn_), (0, 1, 1));
    }

    #[test]
    fn per_image_breakdown_sums() {
        let mut gts = vec![gt(1, 100.0, 100.0), gt(2, 500.0, 100.0)];
        gts[1].image_id = 2;
        let dets = vec![det(100.0, 100.0, 0.9), det(700.0, 700.0, 0.8)];
        let rows = per_image_counts(&dets, &gts, &MatchConfig::default(), 0.0);
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].tp, rows[0].fp, rows[0].fn_), (1, 1, 0));
        assert_eq!((rows[1].tp, rows[1].fp, rows[1].fn_), (0, 0, 1));
    }

    #[test]
    fn grouped_thresholds_are_independent() {
        let mut gts = vec![gt(1, 100.0, 100.0), gt(2, 100.0, 100.0)];
        gts[1].image_id = 2;
        let mut dets = vec![det(100.0, 100.0, 0.9), det(100.0, 100.0, 0.4)];
        dets[1].image_id = 2;
        let groups = optimize_threshold_by_group(&dets, &gts, &MatchConfig::default(), |id| {
            Some(if id == 1 { "a".to_string() } else { "b".to_string() })
        });
        assert_eq!(groups["a"].threshold, 0.9);
        assert_eq!(groups["b"].threshold, 0.4);
        assert_eq!(groups["b"].f1, 1.0);
    }

    #[test]
    fn report_json_uses_fn_key() {
        let json = serde_json::to_string(&EvalReport::from_counts(1, 2, 3, 0.5)).unwrap();
        assert!(json.contains("\"fn\":3"), "{json}");
    }
}
