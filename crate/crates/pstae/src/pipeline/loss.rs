//! Descriptor reconstruction losses: mean over frames of the squared
//! Frobenius norm of the descriptor difference.

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::net::FeaturedClip;
use crate::pipeline::{PipelineError, Result};

fn check_shapes(f: &FeaturedClip, fhat: &FeaturedClip) -> Result<()> {
    if f.temporal_len() != fhat.temporal_len() {
        return Err(PipelineError::Usage(format!(
            "clip lengths differ: {} vs {}",
            f.temporal_len(),
            fhat.temporal_len()
        )));
    }
    for (a, b) in f.frames.iter().zip(&fhat.frames) {
        if a.features.shape() != b.features.shape() {
            return Err(PipelineError::Usage(format!(
                "frame shapes differ: {:?} vs {:?}",
                a.features.shape(),
                b.features.shape()
            )));
        }
    }
    Ok(())
}

/// Squared Frobenius norm of the per-frame descriptor difference.
pub fn per_frame_loss(f: &FeaturedClip, fhat: &FeaturedClip) -> Result<Vec<f64>> {
    check_shapes(f, fhat)?;
    Ok(f.frames
        .iter()
        .zip(&fhat.frames)
        .map(|(a, b)| {
            a.features
                .data()
                .iter()
                .zip(b.features.data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum()
        })
        .collect())
}

/// Mean of the per-frame terms.
pub fn reconstruction_loss(f: &FeaturedClip, fhat: &FeaturedClip) -> Result<f64> {
    let per_frame = per_frame_loss(f, fhat)?;
    Ok(per_frame.iter().sum::<f64>() / per_frame.len().max(1) as f64)
}

/// Per-anchor squared reconstruction error of one frame; sums to that frame's
/// loss term.
pub fn anchor_errors(f: &Tensor, fhat: &Tensor) -> Vec<f64> {
    let cols = f.shape()[1];
    let rows = f.shape()[0];
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut e = 0.0;
        for c in 0..cols {
            let d = f.data()[r * cols + c] - fhat.data()[r * cols + c];
            e += d * d;
        }
        out.push(e);
    }
    out
}

/// Differentiable loss node for training: mean over frames of
/// `sum((target - output)^2)`.
pub fn reconstruction_loss_graph(
    g: &mut Graph,
    targets: &[Tensor],
    outputs: &[NodeId],
) -> Result<NodeId> {
    if targets.len() != outputs.len() || targets.is_empty() {
        return Err(PipelineError::Usage(format!(
            "{} target frames vs {} output frames",
            targets.len(),
            outputs.len()
        )));
    }
    let mut total: Option<NodeId> = None;
    for (t, &out) in targets.iter().zip(outputs) {
        let tc = g.constant(t);
        let d = g.squared_diff(out, tc)?;
        let s = g.sum_all(d);
        total = Some(match total {
            None => s,
            Some(acc) => g.add(acc, s)?,
        });
    }
    Ok(g.scale(total.expect("nonempty"), 1.0 / targets.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::FeaturedFrame;

    fn clip_of(frames: Vec<Tensor>) -> FeaturedClip {
        FeaturedClip {
            frames: frames
                .into_iter()
                .map(|features| FeaturedFrame { coords: vec![[0.0; 3]; features.shape()[0]], features })
                .collect(),
        }
    }

    #[test]
    fn identical_clips_have_zero_loss() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let a = clip_of(vec![t.clone()]);
        let b = clip_of(vec![t]);
        assert_eq!(reconstruction_loss(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_single_frame() {
        let f = clip_of(vec![Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()]);
        let z = clip_of(vec![Tensor::zeros(vec![2, 2])]);
        assert_eq!(reconstruction_loss(&f, &z).unwrap(), 30.0);
    }

    #[test]
    fn two_frames_average() {
        let f = clip_of(vec![
            Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            Tensor::new(vec![1, 2], vec![3.0, 1.0]).unwrap(),
        ]);
        let z = clip_of(vec![Tensor::zeros(vec![2, 2]), Tensor::zeros(vec![1, 2])]);
        assert_eq!(per_frame_loss(&f, &z).unwrap(), vec![30.0, 10.0]);
        assert_eq!(reconstruction_loss(&f, &z).unwrap(), 20.0);
    }

    #[test]
    fn mean_of_per_frame_equals_total() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        let rand_t = |rng: &mut rand_chacha::ChaCha20Rng| {
            let data: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
            Tensor::new(vec![4, 3], data).unwrap()
        };
        let f = clip_of((0..5).map(|_| rand_t(&mut rng)).collect());
        let h = clip_of((0..5).map(|_| rand_t(&mut rng)).collect());
        let per = per_frame_loss(&f, &h).unwrap();
        let mean = per.iter().sum::<f64>() / per.len() as f64;
        assert!((mean - reconstruction_loss(&f, &h).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let a = clip_of(vec![Tensor::zeros(vec![2, 2])]);
        let b = clip_of(vec![Tensor::zeros(vec![2, 3])]);
        assert!(reconstruction_loss(&a, &b).is_err());
    }

    #[test]
    fn graph_loss_matches_value_loss() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        let targets: Vec<Tensor> = (0..3)
            .map(|_| {
                let data: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
                Tensor::new(vec![3, 2], data).unwrap()
            })
            .collect();
        let outputs_t: Vec<Tensor> = (0..3)
            .map(|_| {
                let data: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
                Tensor::new(vec![3, 2], data).unwrap()
            })
            .collect();
        let mut g = Graph::new();
        let outputs: Vec<_> = outputs_t.iter().map(|t| g.constant(t)).collect();
        let loss = reconstruction_loss_graph(&mut g, &targets, &outputs).unwrap();
        let f = clip_of(targets.clone());
        let h = clip_of(outputs_t.clone());
        assert!((g.value(loss)[0] - reconstruction_loss(&f, &h).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn anchor_errors_sum_to_frame_loss() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        let data_a: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let data_b: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = Tensor::new(vec![5, 4], data_a).unwrap();
        let b = Tensor::new(vec![5, 4], data_b).unwrap();
        let errs = anchor_errors(&a, &b);
        let f = clip_of(vec![a]);
        let h = clip_of(vec![b]);
        let frame_loss = per_frame_loss(&f, &h).unwrap()[0];
        assert!((errs.iter().sum::<f64>() - frame_loss).abs() < 1e-12);
        assert_eq!(errs.len(), 5);
    }
}
