use crate::data::ActivityInstance;
use crate::error::{shape_err, ModelError};
use crate::numerics::{Real, Tensor};

/// Regression supervision at one instance center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CenterTarget {
    /// `round(center_f)`.
    pub index: usize,
    pub category: usize,
    /// Exact center in feature frames.
    pub center: Real,
    /// Half-width in feature frames.
    pub half: Real,
}

impl CenterTarget {
    pub fn offset(&self) -> Real {
        self.center - self.index as Real
    }

    /// Ground-truth interval in feature frames.
    pub fn interval(&self) -> (Real, Real) {
        (self.center - self.half, self.center + self.half)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TgalTargets {
    /// `[T_f, N_cls]` Gaussian-splatted class map; exactly 1 at centers.
    pub cls: Tensor,
    pub centers: Vec<CenterTarget>,
}

impl TgalTargets {
    pub fn num_positive(&self) -> usize {
        self.cls.data().iter().filter(|&&v| v >= 1.0).count()
    }
}

/// Builds heatmap targets for a round of `frames` input frames.
pub fn encode_tgal_targets(
    instances: &[ActivityInstance],
    frames: usize,
    ds: usize,
    t_f: usize,
    num_classes: usize,
) -> Result<TgalTargets, ModelError> {
    let mut cls = Tensor::zeros(&[t_f, num_classes]);
    let mut centers = Vec::with_capacity(instances.len());
    for inst in instances {
        if inst.end <= inst.start || inst.end >= frames {
            return shape_err(format!(
                "instance [{}, {}] is empty or outside a {frames}-frame sequence",
                inst.start, inst.end
            ));
        }
        if inst.category >= num_classes {
            return shape_err(format!("category {} with {num_classes} classes", inst.category));
        }
        let center = (inst.start + inst.end) as Real / 2.0 / ds as Real;
        let width = (inst.end - inst.start) as Real / ds as Real;
        let index = center.round() as usize;
        if index >= t_f {
            return shape_err(format!("center {center} beyond {t_f} feature frames"));
        }
        let sigma = (width / 3.0).max(1.0);
        for t in 0..t_f {
            let d = t as Real - index as Real;
            let v = (-d * d / (2.0 * sigma * sigma)).exp();
            let cell = &mut cls.data_mut()[t * num_classes + inst.category];
            *cell = cell.max(v);
        }
        centers.push(CenterTarget {
            index,
            category: inst.category,
            center,
            half: width / 2.0,
        });
    }
    Ok(TgalTargets { cls, centers })
}
