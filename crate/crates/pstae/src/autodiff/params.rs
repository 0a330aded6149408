//! Named parameter storage shared by every network in the crate.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::{AutodiffError, Result, Tensor};

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Vec<f64>>,
    pub frozen: bool,
}

/// Ordered parameter set. Insertion order is the canonical order used for
/// checkpoints and gradient reduction, which keeps runs reproducible.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor, frozen: bool) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(AutodiffError::Usage(format!("duplicate parameter {name:?}")));
        }
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param { name: name.to_string(), value, grad: None, frozen });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index.get(name).copied().map(move |i| &mut self.params[i])
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &[f64]) -> Result<()> {
        let p = self
            .get_mut(name)
            .ok_or_else(|| AutodiffError::Usage(format!("unknown parameter {name:?}")))?;
        if grad.len() != p.value.numel() {
            return Err(AutodiffError::ShapeMismatch {
                op: "accumulate_grad",
                detail: format!("{name}: {} vs {}", grad.len(), p.value.numel()),
            });
        }
        match &mut p.grad {
            Some(g) => {
                for (d, s) in g.iter_mut().zip(grad) {
                    *d += s;
                }
            }
            None => p.grad = Some(grad.to_vec()),
        }
        Ok(())
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            if let Some(g) = &mut p.grad {
                for v in g.iter_mut() {
                    *v *= factor;
                }
            }
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn freeze_all(&mut self) {
        for p in &mut self.params {
            p.frozen = true;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Merge another set into this one (names must not collide).
    pub fn extend(&mut self, other: ParamSet) -> Result<()> {
        for p in other.params {
            if self.index.contains_key(&p.name) {
                return Err(AutodiffError::Usage(format!("duplicate parameter {:?}", p.name)));
            }
            self.index.insert(p.name.clone(), self.params.len());
            self.params.push(p);
        }
        Ok(())
    }
}

/// Uniform init in +-sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform(rng: &mut ChaCha20Rng, fan_in: usize, fan_out: usize, shape: Vec<usize>) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("shape/value count agree by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn insertion_order_is_stable() {
        let mut ps = ParamSet::new();
        ps.insert("b", Tensor::zeros(vec![2]), false).unwrap();
        ps.insert("a", Tensor::zeros(vec![3]), false).unwrap();
        let names: Vec<&str> = ps.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["b", "a"]);
        assert_eq!(ps.num_values(), 5);
    }

    #[test]
    fn glorot_bound_holds() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let t = glorot_uniform(&mut rng, 8, 8, vec![8, 8]);
        let bound = (6.0 / 16.0f64).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
        // seeded: same seed, same values
        let mut rng2 = ChaCha20Rng::seed_from_u64(7);
        let t2 = glorot_uniform(&mut rng2, 8, 8, vec![8, 8]);
        assert_eq!(t.data(), t2.data());
    }
}
