//! GAR accuracies and TGAL average precision under temporal IoU.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::heads::top_k;
use crate::numerics::Real;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no ground truth to evaluate")]
    Empty,
    #[error("{0}")]
    Shape(String),
    #[error("writing {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

/// Slack on tIoU threshold comparisons so overlaps that equal a grid value
/// up to rounding count as reaching it.
pub const TIOU_SLACK: Real = 1e-9;

/// Default tIoU grid: 0.50, 0.55, …, 0.95.
pub fn tiou_grid() -> Vec<Real> {
    (0..10).map(|i| (50 + 5 * i) as Real / 100.0).collect()
}

/// Temporal IoU of two closed intervals.
pub fn tiou(a: (Real, Real), b: (Real, Real)) -> Real {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union > 0.0 {
        inter / union
    } else if a == b {
        1.0
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GarAccuracy {
    /// Percentages.
    pub macc: Real,
    pub oacc: Real,
    pub top3_macc: Real,
    /// `confusion[truth][prediction]`.
    pub confusion: Vec<Vec<usize>>,
    /// Categories without ground truth (left out of the class means).
    pub absent: Vec<usize>,
}

/// Top-1 prediction is the argmax of each logit row (ties to the lower id).
pub fn gar_accuracy(logits: &[Vec<Real>], labels: &[usize], num_classes: usize) -> Result<GarAccuracy, MetricsError> {
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    if logits.len() != labels.len() {
        return Err(MetricsError::Shape(format!("{} predictions for {} labels", logits.len(), labels.len())));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    let mut top3 = vec![0usize; num_classes];
    for (row, &y) in logits.iter().zip(labels) {
        if row.len() != num_classes || y >= num_classes {
            return Err(MetricsError::Shape(format!("logits of {} with label {y} for {num_classes} classes", row.len())));
        }
        let ranked = top_k(row, 3);
        confusion[y][ranked[0]] += 1;
        if ranked.contains(&y) {
            top3[y] += 1;
        }
    }
    let totals: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
    let present: Vec<usize> = (0..num_classes).filter(|&c| totals[c] > 0).collect();
    let absent = (0..num_classes).filter(|&c| totals[c] == 0).collect();
    let mean = |hits: &dyn Fn(usize) -> usize| {
        100.0 * present.iter().map(|&c| hits(c) as Real / totals[c] as Real).sum::<Real>() / present.len() as Real
    };
    let macc = mean(&|c| confusion[c][c]);
    let top3_macc = mean(&|c| top3[c]);
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    Ok(GarAccuracy {
        macc,
        oacc: 100.0 * correct as Real / labels.len() as Real,
        top3_macc,
        confusion,
        absent,
    })
}

/// A decoded detection in input frames; also the detections file row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredDetection {
    pub round_id: String,
    pub start: Real,
    pub end: Real,
    pub category: usize,
    pub score: Real,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub round_id: String,
    pub start: Real,
    pub end: Real,
    pub category: usize,
}

/// Area under the precision envelope (all-point interpolation).
pub fn interpolated_ap(hits: &[bool], num_gt: usize) -> Real {
    if num_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut prec = Vec::with_capacity(hits.len());
    let mut rec = Vec::with_capacity(hits.len());
    for (i, &h) in hits.iter().enumerate() {
        tp += h as usize;
        prec.push(tp as Real / (i + 1) as Real);
        rec.push(tp as Real / num_gt as Real);
    }
    for i in (0..prec.len().saturating_sub(1)).rev() {
        prec[i] = prec[i].max(prec[i + 1]);
    }
    let mut ap = 0.0;
    let mut last_recall = 0.0;
    for i in 0..hits.len() {
        if rec[i] > last_recall {
            ap += (rec[i] - last_recall) * prec[i];
            last_recall = rec[i];
        }
    }
    ap
}

fn score_order(a: &ScoredDetection, b: &ScoredDetection) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.round_id.cmp(&b.round_id))
        .then(a.start.total_cmp(&b.start))
}

/// Greedy score-ordered TP flags: each detection takes the unmatched
/// same-category ground truth of highest tIoU in its round, if that tIoU
/// reaches the threshold.
pub fn match_detections(dets: &[ScoredDetection], gts: &[GroundTruth], threshold: Real) -> Vec<bool> {
    let mut order: Vec<&ScoredDetection> = dets.iter().collect();
    order.sort_by(|a, b| score_order(a, b));
    let mut by_round: HashMap<(&str, usize), Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_round.entry((g.round_id.as_str(), g.category)).or_default().push(i);
    }
    let mut used = vec![false; gts.len()];
    order
        .iter()
        .map(|d| {
            let Some(cands) = by_round.get(&(d.round_id.as_str(), d.category)) else {
                return false;
            };
            let mut best: Option<(usize, Real)> = None;
            for &gi in cands {
                if used[gi] {
                    continue;
                }
                let o = tiou((d.start, d.end), (gts[gi].start, gts[gi].end));
                if best.is_none_or(|(_, b)| o > b) {
                    best = Some((gi, o));
                }
            }
            match best {
                Some((gi, o)) if o >= threshold - TIOU_SLACK => {
                    used[gi] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

/// AP of one category (callers pass that category's detections and ground
/// truth); `None` when there is no ground truth.
pub fn average_precision(dets: &[ScoredDetection], gts: &[GroundTruth], threshold: Real) -> Option<Real> {
    if gts.is_empty() {
        return None;
    }
    Some(interpolated_ap(&match_detections(dets, gts, threshold), gts.len()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TgalReport {
    pub thresholds: Vec<Real>,
    /// `ap[category][threshold]` as fractions; `None` without ground truth.
    pub ap: Vec<Vec<Option<Real>>>,
    /// Percent, one per threshold, averaged over present categories.
    pub map_per_threshold: Vec<Real>,
    /// Percent, averaged over thresholds and present categories.
    pub map: Real,
    pub absent: Vec<usize>,
}

pub fn tgal_map(
    dets: &[ScoredDetection],
    gts: &[GroundTruth],
    num_classes: usize,
    thresholds: &[Real],
) -> Result<TgalReport, MetricsError> {
    if gts.is_empty() {
        return Err(MetricsError::Empty);
    }
    let ap: Vec<Vec<Option<Real>>> = (0..num_classes)
        .map(|c| {
            let d: Vec<_> = dets.iter().filter(|d| d.category == c).cloned().collect();
            let g: Vec<_> = gts.iter().filter(|g| g.category == c).cloned().collect();
            thresholds.iter().map(|&t| average_precision(&d, &g, t)).collect()
        })
        .collect();
    let present: Vec<usize> = (0..num_classes).filter(|&c| ap[c].iter().any(Option::is_some)).collect();
    let absent = (0..num_classes).filter(|c| !present.contains(c)).collect();
    let map_per_threshold: Vec<Real> = (0..thresholds.len())
        .map(|j| 100.0 * present.iter().map(|&c| ap[c][j].unwrap_or(0.0)).sum::<Real>() / present.len() as Real)
        .collect();
    let map = map_per_threshold.iter().sum::<Real>() / thresholds.len().max(1) as Real;
    Ok(TgalReport {
        thresholds: thresholds.to_vec(),
        ap,
        map_per_threshold,
        map,
        absent,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub gar: Option<GarAccuracy>,
    pub tgal: Option<TgalReport>,
}

pub const SUMMARY_CSV: &str = "summary.csv";
pub const CONFUSION_CSV: &str = "confusion.csv";
pub const AP_GRID_CSV: &str = "ap_grid.csv";
pub const MAP_CURVE_CSV: &str = "map_curve.csv";
pub const DETECTIONS_CSV: &str = "detections.csv";

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, MetricsError> {
    csv::Writer::from_path(path).map_err(|source| MetricsError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> MetricsError + '_ {
    move |source| MetricsError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn io_csv_err(path: &Path) -> impl Fn(std::io::Error) -> MetricsError + '_ {
    move |e| MetricsError::Csv {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

impl EvalReport {
    /// Writes the summary plus the confusion matrix (GAR) or AP grid and
    /// mAP-vs-tIoU curve (TGAL) into `dir`; returns the files written.
    pub fn write_csv(&self, dir: &Path, names: &[String]) -> Result<Vec<PathBuf>, MetricsError> {
        let mut written = Vec::new();
        let path = dir.join(SUMMARY_CSV);
        let mut w = writer(&path)?;
        w.write_record(["metric", "value"]).map_err(csv_err(&path))?;
        if let Some(g) = &self.gar {
            for (k, v) in [("mAcc", g.macc), ("oAcc", g.oacc), ("top3_mAcc", g.top3_macc)] {
                w.write_record([k.to_string(), format!("{v:.4}")]).map_err(csv_err(&path))?;
            }
        }
        if let Some(t) = &self.tgal {
            w.write_record(["mAP".to_string(), format!("{:.4}", t.map)]).map_err(csv_err(&path))?;
        }
        w.flush().map_err(io_csv_err(&path))?;
        written.push(path);

        let name = |c: usize| names.get(c).cloned().unwrap_or_else(|| c.to_string());
        if let Some(g) = &self.gar {
            let path = dir.join(CONFUSION_CSV);
            let mut w = writer(&path)?;
            let header: Vec<String> = std::iter::once("truth\\pred".to_string())
                .chain((0..g.confusion.len()).map(name))
                .collect();
            w.write_record(&header).map_err(csv_err(&path))?;
            for (c, row) in g.confusion.iter().enumerate() {
                let rec: Vec<String> = std::iter::once(name(c)).chain(row.iter().map(|v| v.to_string())).collect();
                w.write_record(&rec).map_err(csv_err(&path))?;
            }
            w.flush().map_err(io_csv_err(&path))?;
            written.push(path);
        }
        if let Some(t) = &self.tgal {
            let path = dir.join(AP_GRID_CSV);
            let mut w = writer(&path)?;
            let header: Vec<String> = std::iter::once("category".to_string())
                .chain(t.thresholds.iter().map(|v| format!("{v:.2}")))
                .collect();
            w.write_record(&header).map_err(csv_err(&path))?;
            for (c, row) in t.ap.iter().enumerate() {
                let rec: Vec<String> = std::iter::once(name(c))
                    .chain(row.iter().map(|v| v.map_or_else(|| "NA".to_string(), |a| format!("{:.4}", 100.0 * a))))
                    .collect();
                w.write_record(&rec).map_err(csv_err(&path))?;
            }
            w.flush().map_err(io_csv_err(&path))?;
            written.push(path);

            let path = dir.join(MAP_CURVE_CSV);
            let mut w = writer(&path)?;
            w.write_record(["tiou", "mAP"]).map_err(csv_err(&path))?;
            for (th, m) in t.thresholds.iter().zip(&t.map_per_threshold) {
                w.write_record([format!("{th:.2}"), format!("{m:.4}")]).map_err(csv_err(&path))?;
            }
            w.flush().map_err(io_csv_err(&path))?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn write_detections(path: &Path, dets: &[ScoredDetection]) -> Result<(), MetricsError> {
    let mut w = writer(path)?;
    for d in dets {
        w.serialize(d).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_csv_err(path))
}

pub fn read_detections(path: &Path) -> Result<Vec<ScoredDetection>, MetricsError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn det(round: &str, s: Real, e: Real, c: usize, score: Real) -> ScoredDetection {
        ScoredDetection {
            round_id: round.into(),
            start: s,
            end: e,
            category: c,
            score,
        }
    }

    fn gt(round: &str, s: Real, e: Real, c: usize) -> GroundTruth {
        GroundTruth {
            round_id: round.into(),
            start: s,
            end: e,
            category: c,
        }
    }

    #[test]
    fn tiou_examples() {
        assert_eq!(tiou((3.0, 9.0), (3.0, 9.0)), 1.0);
        assert_abs_diff_eq!(tiou((0.0, 10.0), (5.0, 15.0)), 5.0 / 15.0);
        assert_eq!(tiou((0.0, 1.0), (2.0, 3.0)), 0.0);
        assert_eq!(tiou((2.0, 2.0), (2.0, 2.0)), 1.0);
    }

    #[test]
    fn gar_counting_example() {
        // class A (0): 2 of 2 right; class B (1): 1 of 3 right
        let logits = vec![
            vec![1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
        ];
        let labels = [0, 0, 1, 1, 1];
        let r = gar_accuracy(&logits, &labels, 3).unwrap();
        assert_abs_diff_eq!(r.macc, 100.0 * (1.0 + 1.0 / 3.0) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.macc, 66.67, epsilon = 0.01);
        assert_abs_diff_eq!(r.oacc, 60.0, epsilon = 1e-12);
        assert_eq!(r.absent, vec![2]);
        let trace: usize = (0..3).map(|c| r.confusion[c][c]).sum();
        assert_abs_diff_eq!(r.oacc, 100.0 * trace as Real / 5.0);
        let rows: Vec<usize> = r.confusion.iter().map(|x| x.iter().sum()).collect();
        assert_eq!(rows, [2, 3, 0]);
    }

    #[test]
    fn gar_all_correct_and_top3() {
        let r = gar_accuracy(&[vec![0.0, 2.0, 1.0], vec![3.0, 0.0, 0.0]], &[1, 0], 3).unwrap();
        assert_eq!((r.macc, r.oacc, r.top3_macc), (100.0, 100.0, 100.0));
        // true class ranked third
        let r = gar_accuracy(&[vec![0.3, 0.9, 0.5, 0.1]], &[0], 4).unwrap();
        assert_eq!((r.oacc, r.top3_macc), (0.0, 100.0));
        assert!(gar_accuracy(&[], &[], 3).is_err());
    }

    #[test]
    fn ap_precision_recall_example() {
        // TP, FP, TP with 2 ground truths
        assert_abs_diff_eq!(interpolated_ap(&[true, false, true], 2), 0.5 + 0.5 * 2.0 / 3.0, epsilon = 1e-12);
        let gts = [gt("r", 0.0, 10.0, 0), gt("r", 20.0, 30.0, 0)];
        let dets = [det("r", 0.0, 10.0, 0, 0.9), det("r", 50.0, 60.0, 0, 0.8), det("r", 20.0, 30.0, 0, 0.7)];
        assert_abs_diff_eq!(average_precision(&dets, &gts, 0.5).unwrap(), 0.8333, epsilon = 1e-4);
    }

    #[test]
    fn ap_trivial_cases() {
        let gts = [gt("a", 0.0, 10.0, 0), gt("b", 5.0, 9.0, 0)];
        let exact: Vec<_> = gts.iter().map(|g| det(&g.round_id, g.start, g.end, 0, 0.5)).collect();
        assert_eq!(average_precision(&exact, &gts, 0.95), Some(1.0));
        // tIoU 0.4 < 0.5
        let one = [gt("a", 0.0, 10.0, 0)];
        assert_eq!(average_precision(&[det("a", 0.0, 4.0, 0, 0.9)], &one, 0.5), Some(0.0));
        assert_eq!(average_precision(&exact, &[], 0.5), None);
        // detections from another round never match
        assert_eq!(average_precision(&[det("b", 0.0, 10.0, 0, 0.9)], &one, 0.5), Some(0.0));
    }

    #[test]
    fn duplicates_count_once() {
        let gts = [gt("a", 0.0, 10.0, 0)];
        let dets = [det("a", 0.0, 10.0, 0, 0.9), det("a", 0.0, 10.0, 0, 0.8)];
        for t in tiou_grid() {
            assert_eq!(match_detections(&dets, &gts, t), [true, false]);
        }
    }

    #[test]
    fn map_perfect_and_threshold_counting() {
        let gts = vec![gt("a", 0.0, 100.0, 0), gt("a", 200.0, 300.0, 1), gt("b", 0.0, 50.0, 1)];
        let perfect: Vec<_> = gts.iter().map(|g| det(&g.round_id, g.start, g.end, g.category, 0.9)).collect();
        let r = tgal_map(&perfect, &gts, 3, &tiou_grid()).unwrap();
        assert_abs_diff_eq!(r.map, 100.0, epsilon = 1e-9);
        assert_eq!(r.absent, vec![2]);

        // stretch each detection so tIoU = 0.7 exactly: length L / 0.7 sharing the start
        let shifted: Vec<_> = gts
            .iter()
            .map(|g| det(&g.round_id, g.start, g.start + (g.end - g.start) / 0.7, g.category, 0.9))
            .collect();
        for (d, g) in shifted.iter().zip(&gts) {
            assert_abs_diff_eq!(tiou((d.start, d.end), (g.start, g.end)), 0.7, epsilon = 1e-12);
        }
        let r = tgal_map(&shifted, &gts, 3, &tiou_grid()).unwrap();
        assert_abs_diff_eq!(r.map, 50.0, epsilon = 1e-9);
    }

    /// Best AP over every one-to-one assignment of detections to
    /// same-round, same-category ground truths with tIoU ≥ threshold.
    fn exhaustive_ap(dets: &[ScoredDetection], gts: &[GroundTruth], thr: Real) -> Real {
        let mut order: Vec<&ScoredDetection> = dets.iter().collect();
        order.sort_by(|a, b| score_order(a, b));
        fn rec(i: usize, order: &[&ScoredDetection], gts: &[GroundTruth], thr: Real, used: &mut Vec<bool>, hits: &mut Vec<bool>, best: &mut Real) {
            if i == order.len() {
                *best = best.max(interpolated_ap(hits, gts.len()));
                return;
            }
            hits.push(false);
            rec(i + 1, order, gts, thr, used, hits, best);
            hits.pop();
            for g in 0..gts.len() {
                let d = order[i];
                if !used[g]
                    && gts[g].round_id == d.round_id
                    && gts[g].category == d.category
                    && tiou((d.start, d.end), (gts[g].start, gts[g].end)) >= thr - TIOU_SLACK
                {
                    used[g] = true;
                    hits.push(true);
                    rec(i + 1, order, gts, thr, used, hits, best);
                    hits.pop();
                    used[g] = false;
                }
            }
        }
        let mut best = 0.0;
        rec(0, &order, gts, thr, &mut vec![false; gts.len()], &mut Vec::new(), &mut best);
        best
    }

    #[test]
    fn greedy_matches_exhaustive_when_conflict_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut compared = 0;
        while compared < 300 {
            let n_gt = rng.gen_range(1..=4);
            let gts: Vec<_> = (0..n_gt).map(|i| gt("r", 100.0 * i as Real, 100.0 * i as Real + 60.0, 0)).collect();
            let n_det = rng.gen_range(1..=6);
            let dets: Vec<_> = (0..n_det)
                .map(|_| {
                    let s = rng.gen_range(-20.0..400.0);
                    det("r", s, s + rng.gen_range(20.0..90.0), 0, rng.gen())
                })
                .collect();
            let thr = 0.5;
            let hits = |d: &ScoredDetection| gts.iter().filter(|g| tiou((d.start, d.end), (g.start, g.end)) >= thr).count();
            let per_gt = |g: &GroundTruth| dets.iter().filter(|d| tiou((d.start, d.end), (g.start, g.end)) >= thr).count();
            if dets.iter().any(|d| hits(d) > 1) || gts.iter().any(|g| per_gt(g) > 1) {
                continue;
            }
            let greedy = average_precision(&dets, &gts, thr).unwrap();
            assert_abs_diff_eq!(greedy, exhaustive_ap(&dets, &gts, thr), epsilon = 1e-12);
            compared += 1;
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_case() -> impl Strategy<Value = (Vec<GroundTruth>, Vec<ScoredDetection>)> {
            let g = prop::collection::vec((0.0..500.0f64, 10.0..100.0f64), 1..5);
            let d = prop::collection::vec((0.0..500.0f64, 10.0..100.0f64, 0.0..1.0f64), 0..8);
            (g, d).prop_map(|(g, d)| {
                (
                    g.into_iter().map(|(s, l)| gt("r", s, s + l, 0)).collect(),
                    d.into_iter().map(|(s, l, p)| det("r", s, s + l, 0, p)).collect(),
                )
            })
        }

        proptest! {
            #[test]
            fn ap_non_increasing_in_threshold((gts, dets) in arb_case()) {
                let grid = tiou_grid();
                let aps: Vec<Real> = grid.iter().map(|&t| average_precision(&dets, &gts, t).unwrap()).collect();
                for w in aps.windows(2) {
                    prop_assert!(w[1] <= w[0] + 1e-12);
                }
            }

            #[test]
            fn lowest_scored_miss_never_helps((gts, mut dets) in arb_case()) {
                let before = average_precision(&dets, &gts, 0.5).unwrap();
                dets.push(det("r", 10_000.0, 10_010.0, 0, -1.0));
                prop_assert!(average_precision(&dets, &gts, 0.5).unwrap() <= before + 1e-12);
            }

            #[test]
            fn metrics_are_percentages(labels in prop::collection::vec(0usize..4, 1..30), seed: u64) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let logits: Vec<Vec<Real>> = labels.iter().map(|_| (0..4).map(|_| rand::Rng::gen(&mut rng)).collect()).collect();
                let r = gar_accuracy(&logits, &labels, 4).unwrap();
                for v in [r.macc, r.oacc, r.top3_macc] {
                    prop_assert!((0.0..=100.0).contains(&v));
                }
                prop_assert!(r.top3_macc >= r.macc - 1e-9);
            }
        }
    }

    #[test]
    fn csv_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let gar = gar_accuracy(&[vec![1.0, 0.0]], &[0], 2).unwrap();
        let tgal = tgal_map(&[det("a", 0.0, 10.0, 0, 0.9)], &[gt("a", 0.0, 10.0, 0)], 2, &tiou_grid()).unwrap();
        let report = EvalReport {
            gar: Some(gar),
            tgal: Some(tgal),
        };
        let files = report.write_csv(dir.path(), &["PnR".into(), "ISO".into()]).unwrap();
        assert_eq!(files.len(), 4);
        let curve = std::fs::read_to_string(dir.path().join(MAP_CURVE_CSV)).unwrap();
        assert_eq!(curve.lines().count(), 11);
        let grid = std::fs::read_to_string(dir.path().join(AP_GRID_CSV)).unwrap();
        assert!(grid.contains("ISO,NA"));

        let dets = vec![det("gar#1", 1.5, 9.0, 3, 0.25)];
        let p = dir.path().join(DETECTIONS_CSV);
        write_detections(&p, &dets).unwrap();
        assert_eq!(read_detections(&p).unwrap(), dets);
    }
}
