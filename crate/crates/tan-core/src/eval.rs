//! Metrics: per-class average precision, frame/video mAP under the dense
//! and sampled protocols, and proposal scoring.
//!
//! The AP variant is pinned: scores sort descending with ties broken by
//! original index, and AP is the mean over positives of precision at each
//! positive's rank. Classes with no positives are excluded from mAP and
//! listed in the report.

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Result, TanError};
use crate::graph::Graph;
use crate::model::{mean_over_rows, Model};
use crate::ops;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalProtocol {
    /// Every frame of every video.
    Dense,
    /// N uniformly spaced frames per video, clamped to the frames that
    /// exist (no duplicates).
    Sampled(usize),
}

impl EvalProtocol {
    pub fn describe(&self) -> String {
        match self {
            EvalProtocol::Dense => "dense".to_string(),
            EvalProtocol::Sampled(n) => format!("sampled:{n}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "dense" {
            return Ok(EvalProtocol::Dense);
        }
        if let Some(n) = s.strip_prefix("sampled:") {
            let n: usize = n
                .parse()
                .map_err(|_| TanError::Config(format!("bad sample count in protocol '{s}'")))?;
            if n == 0 {
                return Err(TanError::Config("sampled protocol needs n >= 1".into()));
            }
            return Ok(EvalProtocol::Sampled(n));
        }
        Err(TanError::Config(format!(
            "unknown protocol '{s}' (expected 'dense' or 'sampled:N')"
        )))
    }

    /// Frame indices this protocol evaluates for a video of length `t`.
    pub fn frame_indices(&self, t: usize) -> Vec<usize> {
        match *self {
            EvalProtocol::Dense => (0..t).collect(),
            EvalProtocol::Sampled(n) => {
                let mut idx: Vec<usize> = (0..n).map(|i| i * t / n).collect();
                idx.dedup();
                idx
            }
        }
    }
}

/// Precision-at-each-positive average precision. `None` when the class
/// has no positive labels (excluded-class signal).
pub fn average_precision(scores: &[f32], labels: &[bool]) -> Option<f64> {
    debug_assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Descending by score; ties keep original index order.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut tp = 0usize;
    let mut ap = 0.0f64;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
            ap += tp as f64 / (rank + 1) as f64;
        }
    }
    Some(ap / positives as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub protocol: String,
    /// Per-class frame AP; `None` marks classes with no positives.
    pub per_class_ap: Vec<Option<f64>>,
    pub frame_map: f64,
    pub video_map: f64,
    /// Classes excluded from the frame mAP for lack of positives.
    pub excluded: Vec<usize>,
}

impl MetricReport {
    pub fn to_csv(&self, header_comments: &[String]) -> String {
        let mut out = String::new();
        for c in header_comments {
            out.push_str(&format!("# {c}\n"));
        }
        out.push_str(&format!("# protocol={}\n", self.protocol));
        out.push_str("class,ap\n");
        for (k, ap) in self.per_class_ap.iter().enumerate() {
            match ap {
                Some(v) => out.push_str(&format!("{k},{v}\n")),
                None => out.push_str(&format!("{k},excluded\n")),
            }
        }
        out.push_str(&format!("frame_map,{}\n", self.frame_map));
        out.push_str(&format!("video_map,{}\n", self.video_map));
        out
    }
}

/// Sigmoid per-frame scores [T,K] for each video, flattened row-major.
pub fn score_dataset(model: &Model<f32>, data: &Dataset) -> Result<Vec<Vec<f32>>> {
    data.videos
        .iter()
        .map(|v| {
            let mut g = Graph::inference();
            let logits = model.forward_dense(&mut g, &v.clip_tensor()?)?;
            Ok(ops::sigmoid(&mut g, &logits)?.to_vec())
        })
        .collect()
}

/// Metrics from externally supplied per-video score matrices (each
/// [T_out, K] row-major). Output rows map onto label frames by uniform
/// index scaling when the model reduced the temporal extent.
pub fn metrics_from_scores(
    scores: &[Vec<f32>],
    data: &Dataset,
    protocol: EvalProtocol,
) -> Result<MetricReport> {
    if scores.len() != data.videos.len() {
        return Err(TanError::Dataset(format!(
            "{} score matrices for {} videos",
            scores.len(),
            data.videos.len()
        )));
    }
    let k = data.num_classes;

    // Frame-level AP over protocol-selected frames of every video.
    let mut frame_scores: Vec<Vec<f32>> = vec![Vec::new(); k];
    let mut frame_labels: Vec<Vec<bool>> = vec![Vec::new(); k];
    for (v, sm) in data.videos.iter().zip(scores) {
        if sm.len() % k != 0 {
            return Err(TanError::Dataset(format!(
                "video '{}': score matrix length {} is not a multiple of {k}",
                v.id,
                sm.len()
            )));
        }
        let t_out = sm.len() / k;
        for &ti in &protocol.frame_indices(v.t) {
            // Map a label frame onto the (possibly reduced) output row.
            let row = (ti * t_out / v.t).min(t_out - 1);
            for class in 0..k {
                frame_scores[class].push(sm[row * k + class]);
                frame_labels[class].push(v.label(ti, class));
            }
        }
    }
    let per_class_ap: Vec<Option<f64>> = (0..k)
        .map(|class| average_precision(&frame_scores[class], &frame_labels[class]))
        .collect();
    let excluded: Vec<usize> = per_class_ap
        .iter()
        .enumerate()
        .filter_map(|(i, ap)| ap.is_none().then_some(i))
        .collect();
    let present: Vec<f64> = per_class_ap.iter().flatten().copied().collect();
    let frame_map = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };

    // Video-level AP: mean score over all output rows vs OR-pooled labels.
    let mut video_ap = Vec::new();
    for class in 0..k {
        let mut vscores = Vec::with_capacity(data.videos.len());
        let mut vlabels = Vec::with_capacity(data.videos.len());
        for (v, sm) in data.videos.iter().zip(scores) {
            let t_out = sm.len() / k;
            let means = mean_over_rows(sm, t_out, k, 0, t_out - 1);
            vscores.push(means[class]);
            vlabels.push(v.video_labels()[class]);
        }
        if let Some(ap) = average_precision(&vscores, &vlabels) {
            video_ap.push(ap);
        }
    }
    let video_map = if video_ap.is_empty() {
        0.0
    } else {
        video_ap.iter().sum::<f64>() / video_ap.len() as f64
    };

    Ok(MetricReport {
        protocol: protocol.describe(),
        per_class_ap,
        frame_map,
        video_map,
        excluded,
    })
}

pub fn evaluate(model: &Model<f32>, data: &Dataset, protocol: EvalProtocol) -> Result<MetricReport> {
    let scores = score_dataset(model, data)?;
    metrics_from_scores(&scores, data, protocol)
}

/// Mean of per-frame scores over the inclusive interval, scaled by the
/// proposal's actionness. A full-interval proposal with actionness 1
/// reproduces the video score exactly.
pub fn score_proposal(
    frame_scores: &Tensor<f32>,
    interval: (usize, usize),
    actionness: f32,
) -> Result<Vec<f32>> {
    if frame_scores.ndim() != 2 {
        return Err(TanError::shape(
            "score_proposal",
            format!("expected [T,K] scores, got {:?}", frame_scores.shape()),
        ));
    }
    let (t, k) = (frame_scores.dim(0), frame_scores.dim(1));
    let (s, e) = interval;
    if s > e || e >= t {
        return Err(TanError::Config(format!(
            "inverted or out-of-range interval [{s},{e}] for {t} frames"
        )));
    }
    if !(0.0..=1.0).contains(&actionness) {
        return Err(TanError::Config(format!(
            "actionness {actionness} outside [0,1]"
        )));
    }
    let mut means = mean_over_rows(&frame_scores.read(), t, k, s, e);
    for m in &mut means {
        *m *= actionness;
    }
    Ok(means)
}

/// Dense prediction dump: `video_id,frame_idx,class_id,score` per line.
pub fn predictions_csv(scores: &[Vec<f32>], data: &Dataset, header_comments: &[String]) -> String {
    let mut out = String::new();
    for c in header_comments {
        out.push_str(&format!("# {c}\n"));
    }
    out.push_str("video_id,frame_idx,class_id,score\n");
    let k = data.num_classes;
    for (v, sm) in data.videos.iter().zip(scores) {
        let t_out = sm.len() / k;
        for row in 0..t_out {
            for class in 0..k {
                out.push_str(&format!("{},{},{},{}\n", v.id, row, class, sm[row * k + class]));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_ranked_ap_case() {
        let ap = average_precision(&[0.9, 0.8, 0.1], &[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_ranking_is_one() {
        let ap = average_precision(&[0.9, 0.7, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn ties_break_by_original_index() {
        // Equal scores, labels [1,0]: the positive at index 0 ranks first.
        let ap = average_precision(&[0.5, 0.5], &[true, false]).unwrap();
        assert_eq!(ap, 1.0);
        // Mirrored labels: the positive now ranks second.
        let ap2 = average_precision(&[0.5, 0.5], &[false, true]).unwrap();
        assert_eq!(ap2, 0.5);
    }

    #[test]
    fn no_positives_is_excluded_not_a_number() {
        assert!(average_precision(&[0.3, 0.2], &[false, false]).is_none());
    }

    #[test]
    fn sampled_indices_clamp_without_duplicates() {
        let idx = EvalProtocol::Sampled(25).frame_indices(16);
        assert_eq!(idx, (0..16).collect::<Vec<_>>());
        let idx4 = EvalProtocol::Sampled(4).frame_indices(16);
        assert_eq!(idx4, vec![0, 4, 8, 12]);
        let idx1 = EvalProtocol::Sampled(1).frame_indices(16);
        assert_eq!(idx1, vec![0]);
    }

    #[test]
    fn protocol_parsing() {
        assert_eq!(EvalProtocol::parse("dense").unwrap(), EvalProtocol::Dense);
        assert_eq!(
            EvalProtocol::parse("sampled:25").unwrap(),
            EvalProtocol::Sampled(25)
        );
        assert!(EvalProtocol::parse("sampled:0").is_err());
        assert!(EvalProtocol::parse("nope").is_err());
    }

    #[test]
    fn proposal_scoring_hand_cases() {
        let scores = Tensor::from_vec(
            vec![6, 1],
            vec![0.0f32, 0.0, 0.2, 0.4, 0.6, 0.8],
        )
        .unwrap();
        let s = score_proposal(&scores, (2, 5), 0.5).unwrap();
        assert!((s[0] - 0.25).abs() < 1e-7);
        let zero = score_proposal(&scores, (0, 5), 0.0).unwrap();
        assert_eq!(zero, vec![0.0]);
        assert!(score_proposal(&scores, (4, 2), 1.0).is_err());
        assert!(score_proposal(&scores, (0, 6), 1.0).is_err());
    }
}
