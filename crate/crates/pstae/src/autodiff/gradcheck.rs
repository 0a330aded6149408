//! Finite-difference validation of reverse-mode gradients.

use super::{AutodiffError, Graph, NodeId, Result, Tensor};

/// Compare reverse-mode gradients against central finite differences.
///
/// `build` must construct the same graph for any values of the leaves and
/// return a scalar output. Every leaf is registered with `requires_grad`,
/// perturbed entry by entry, and the max relative error over all entries is
/// returned, with denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn gradient_check<F>(build: F, leaves: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let run = |values: &[Tensor]| -> Result<(Graph, Vec<NodeId>, NodeId)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|t| g.leaf(t, true)).collect();
        let out = build(&mut g, &ids)?;
        if g.value(out).len() != 1 {
            return Err(AutodiffError::Usage("gradient_check needs a scalar output".into()));
        }
        if !g.value(out)[0].is_finite() {
            return Err(AutodiffError::NonFinite("gradient_check forward pass".into()));
        }
        Ok((g, ids, out))
    };

    let (mut graph, ids, out) = run(leaves)?;
    graph.backward(out)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(leaves)
        .map(|(&id, leaf)| {
            graph.grad(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; leaf.numel()])
        })
        .collect();

    let mut max_rel = 0.0f64;
    let mut work: Vec<Tensor> = leaves.to_vec();
    for (li, leaf) in leaves.iter().enumerate() {
        for ei in 0..leaf.numel() {
            let orig = leaf.data()[ei];
            work[li].data_mut()[ei] = orig + epsilon;
            let (g_plus, _, out_plus) = run(&work)?;
            let f_plus = g_plus.value(out_plus)[0];
            work[li].data_mut()[ei] = orig - epsilon;
            let (g_minus, _, out_minus) = run(&work)?;
            let f_minus = g_minus.value(out_minus)[0];
            work[li].data_mut()[ei] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * epsilon);
            if !numeric.is_finite() {
                return Err(AutodiffError::NonFinite(format!(
                    "finite difference at leaf {li} entry {ei}"
                )));
            }
            let a = analytic[li][ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use std::sync::Arc;

    fn rand_tensor(rng: &mut ChaCha20Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn linear_layer_with_mse_checks_out() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let x = rand_tensor(&mut rng, &[2, 3]);
        let w = rand_tensor(&mut rng, &[3, 2]);
        let b = rand_tensor(&mut rng, &[2]);
        let target = rand_tensor(&mut rng, &[2, 2]);
        let err = gradient_check(
            |g, ids| {
                let t = g.constant(&target);
                let h = g.matmul(ids[0], ids[1])?;
                let h = g.add_bias(h, ids[2])?;
                let h = g.relu(h);
                g.mse(h, t)
            },
            &[x, w, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn constant_graph_has_zero_error() {
        let leaf = Tensor::new(vec![3], vec![0.5, -0.25, 1.5]).unwrap();
        let err = gradient_check(
            |g, _ids| {
                let c = g.constant(&Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
                Ok(g.sum_all(c))
            },
            &[leaf],
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn gather_interp_concat_max_chain_checks_out() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let x = rand_tensor(&mut rng, &[4, 3]);
        let w = rand_tensor(&mut rng, &[6, 2]);
        let err = gradient_check(
            |g, ids| {
                let gathered = g.gather_rows(ids[0], Arc::new(vec![0, 2, 3, 1]))?;
                let cat = g.concat(1, &[gathered, ids[0]])?;
                let h = g.matmul(cat, ids[1])?;
                let h = g.relu(h);
                let r = g.reshape(h, vec![2, 2, 2])?;
                let m = g.max_axis(r, 1)?;
                let interp = g.interp_rows(
                    m,
                    Arc::new(vec![0, 1, 1, 0]),
                    Arc::new(vec![0.3, 0.7, 0.2, 0.8]),
                    2,
                )?;
                Ok(g.mean_all(interp))
            },
            &[x, w],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn cross_entropy_checks_out() {
        let mut rng = ChaCha20Rng::seed_from_u64(37);
        let logits = rand_tensor(&mut rng, &[3, 4]);
        let err = gradient_check(
            |g, ids| g.cross_entropy(ids[0], Arc::new(vec![1, 3, 0])),
            &[logits],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "max relative error {err}");
    }
}
