use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use super::{NumericsError, Real};

/// SGD with classical momentum; weight decay is added to the gradient.
///
/// `v ← μ·v + g + λ·w`, `w ← w − lr·v`.
#[derive(Clone, Debug)]
pub struct SgdState {
    pub lr: Real,
    pub momentum: Real,
    pub weight_decay: Real,
    velocity: Vec<Tensor>,
    frozen: Vec<bool>,
}

impl SgdState {
    pub fn new(store: &ParamStore, lr: Real, momentum: Real, weight_decay: Real) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: store.ids().map(|id| Tensor::zeros(store.get(id).shape())).collect(),
            frozen: vec![false; store.len()],
        }
    }

    /// Frozen parameters are left untouched by [`step`](Self::step),
    /// weight decay included.
    pub fn freeze(&mut self, id: ParamId, frozen: bool) {
        self.frozen[id.0] = frozen;
    }

    pub fn velocity(&self, id: ParamId) -> &Tensor {
        &self.velocity[id.0]
    }

    /// Applies one update. `grads` holds at most one entry per parameter;
    /// parameters without a gradient still decay and coast on momentum.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) -> Result<(), NumericsError> {
        let mut by_id: Vec<Option<&Tensor>> = vec![None; store.len()];
        for (id, g) in grads {
            if g.shape() != store.get(*id).shape() {
                return Err(NumericsError::Shape(format!(
                    "gradient {:?} for parameter {} of shape {:?}",
                    g.shape(),
                    store.name(*id),
                    store.get(*id).shape()
                )));
            }
            by_id[id.0] = Some(g);
        }
        for id in store.ids().collect::<Vec<_>>() {
            if self.frozen[id.0] {
                continue;
            }
            let v = &mut self.velocity[id.0];
            let w = store.get_mut(id);
            let g = by_id[id.0];
            for i in 0..w.len() {
                let gi = g.map_or(0.0, |g| g.data()[i]);
                let vi = self.momentum * v.data()[i] + gi + self.weight_decay * w.data()[i];
                v.data_mut()[i] = vi;
                w.data_mut()[i] -= self.lr * vi;
            }
        }
        Ok(())
    }
}
