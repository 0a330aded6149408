//! Frame-level AUROC (rank / Mann-Whitney formulation) and the evaluation
//! report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::pipeline::{PipelineError, Result};

/// Probability that a random positive outranks a random negative, ties
/// counted one half. Errors when only one class is present.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(PipelineError::Usage(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(PipelineError::Eval(format!(
            "AUROC needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // average ranks over tie groups (ranks are 1-based)
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] != 0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// ROC curve points as (fpr, tpr), sweeping the threshold from high to low.
pub fn roc_points(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    let n_pos = labels.iter().filter(|&&l| l != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(PipelineError::Eval("ROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if labels[idx] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        i = j + 1;
    }
    Ok(points)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CategoryReport {
    /// `None` when the category slice contains a single class; the condition
    /// is listed in `EvalReport::errors`.
    pub auroc: Option<f64>,
    pub bgsub_auroc: Option<f64>,
    pub num_frames: usize,
    pub num_anomalous: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bgsub_auroc: Option<f64>,
    pub per_category: BTreeMap<String, CategoryReport>,
    pub num_frames: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

/// Assemble the evaluation report from per-video scores.
///
/// Per-category AUROC follows the usual convention: frames of that category's
/// videos are pooled with the frames of all `normal`-category videos.
pub fn evaluate(
    videos: &[(String, Vec<f64>, Vec<u8>)],
    bgsub: Option<&[(String, Vec<f64>)]>,
    categories: &BTreeMap<String, String>,
) -> Result<EvalReport> {
    let mut all_scores = Vec::new();
    let mut all_labels = Vec::new();
    for (_, scores, labels) in videos {
        all_scores.extend_from_slice(scores);
        all_labels.extend_from_slice(labels);
    }
    let mut errors = Vec::new();
    let total = auroc(&all_scores, &all_labels)?;

    let bg_lookup: BTreeMap<&str, &[f64]> = bgsub
        .map(|b| b.iter().map(|(id, s)| (id.as_str(), s.as_slice())).collect())
        .unwrap_or_default();
    let bg_total = if bgsub.is_some() {
        let mut s = Vec::new();
        for (id, _, labels) in videos {
            match bg_lookup.get(id.as_str()) {
                Some(b) if b.len() == labels.len() => s.extend_from_slice(b),
                _ => {
                    return Err(PipelineError::Eval(format!(
                        "baseline scores missing or mis-sized for video {id}"
                    )))
                }
            }
        }
        Some(auroc(&s, &all_labels)?)
    } else {
        None
    };

    let mut by_cat: BTreeMap<String, Vec<&(String, Vec<f64>, Vec<u8>)>> = BTreeMap::new();
    for v in videos {
        let cat = categories.get(&v.0).cloned().unwrap_or_else(|| "uncategorized".into());
        by_cat.entry(cat).or_default().push(v);
    }
    let normals: Vec<&(String, Vec<f64>, Vec<u8>)> =
        by_cat.get("normal").cloned().unwrap_or_default();

    let mut per_category = BTreeMap::new();
    for (cat, vids) in &by_cat {
        if cat == "normal" {
            continue;
        }
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        let mut bg_scores = Vec::new();
        for v in vids.iter().chain(normals.iter()) {
            scores.extend_from_slice(&v.1);
            labels.extend_from_slice(&v.2);
            if let Some(b) = bg_lookup.get(v.0.as_str()) {
                bg_scores.extend_from_slice(b);
            }
        }
        let num_anomalous = labels.iter().filter(|&&l| l != 0).count();
        let cat_auroc = match auroc(&scores, &labels) {
            Ok(v) => Some(v),
            Err(e) => {
                errors.push(format!("category {cat}: {e}"));
                None
            }
        };
        let cat_bg = if bgsub.is_some() && bg_scores.len() == labels.len() {
            auroc(&bg_scores, &labels).ok()
        } else {
            None
        };
        per_category.insert(
            cat.clone(),
            CategoryReport {
                auroc: cat_auroc,
                bgsub_auroc: cat_bg,
                num_frames: labels.len(),
                num_anomalous,
            },
        );
    }
    Ok(EvalReport {
        auroc: total,
        bgsub_auroc: bg_total,
        per_category,
        num_frames: all_labels.len(),
        errors,
    })
}

#[cfg(test)]
pub mod oracle {
    //! Brute-force pairwise AUROC used to validate the rank formulation.

    pub fn auroc_pairwise(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0f64;
        let mut pairs = 0.0f64;
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] == 0 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] != 0 {
                    continue;
                }
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn perfectly_separated_is_one() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [1, 1, 0, 0];
        assert_eq!(auroc(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn perfectly_inverted_is_zero() {
        let scores = [0.1, 0.2, 0.8, 0.9];
        let labels = [1, 1, 0, 0];
        assert_eq!(auroc(&scores, &labels).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_three_quarters() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [0, 0, 1, 1];
        assert!((auroc(&scores, &labels).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_error() {
        assert!(auroc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(auroc(&[0.1, 0.2], &[0, 0]).is_err());
    }

    #[test]
    fn ties_count_half() {
        let scores = [0.5, 0.5];
        let labels = [1, 0];
        assert_eq!(auroc(&scores, &labels).unwrap(), 0.5);
    }

    #[test]
    fn matches_pairwise_oracle_on_random_vectors() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        for _ in 0..50 {
            let n = rng.gen_range(4..80);
            // coarse grid of score values forces plenty of ties
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..7) as f64 / 6.0).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            labels[0] = 1;
            labels[1] = 0;
            let fast = auroc(&scores, &labels).unwrap();
            let slow = oracle::auroc_pairwise(&scores, &labels);
            assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
        }
    }

    #[test]
    fn invariant_under_strictly_increasing_transform() {
        let mut rng = ChaCha20Rng::seed_from_u64(33);
        let scores: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut labels: Vec<u8> = (0..40).map(|_| rng.gen_range(0..2) as u8).collect();
        labels[0] = 1;
        labels[1] = 0;
        let base = auroc(&scores, &labels).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|&s| (3.0 * s + 1.0).exp()).collect();
        assert!((auroc(&transformed, &labels).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn roc_points_start_and_end_at_corners() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [1, 0, 1, 0];
        let pts = roc_points(&scores, &labels).unwrap();
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
        for w in pts.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn evaluate_reports_per_category() {
        let videos = vec![
            ("n0".to_string(), vec![0.0, 0.1, 0.0], vec![0, 0, 0]),
            ("a0".to_string(), vec![0.2, 0.9, 0.8], vec![0, 1, 1]),
            ("a1".to_string(), vec![0.1, 0.7], vec![0, 1]),
        ];
        let mut cats = BTreeMap::new();
        cats.insert("n0".into(), "normal".into());
        cats.insert("a0".into(), "collapse".into());
        cats.insert("a1".into(), "run".into());
        let report = evaluate(&videos, None, &cats).unwrap();
        assert_eq!(report.num_frames, 8);
        assert!(report.per_category.contains_key("collapse"));
        assert!(report.per_category.contains_key("run"));
        assert!(report.auroc > 0.9);
        assert!(report.errors.is_empty());
    }
}
