//! Reverse-mode vs central finite-difference comparison.

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use super::{NumericsError, Real};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub h: Real,
    /// Maximum accepted relative error.
    pub tol: Real,
    /// Denominator floor of the relative error, so that coordinates with
    /// vanishing gradient are compared absolutely.
    pub floor: Real,
    /// One-sided slopes differing by more than this fraction flag a kink.
    pub kink_tol: Real,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
            kink_tol: 1e-2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoordReport {
    pub index: usize,
    pub analytic: Real,
    pub numeric: Real,
    pub rel_err: Real,
    pub smooth: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub coords: Vec<CoordReport>,
    pub max_rel_err: Real,
    pub non_smooth: usize,
    pub passed: bool,
}

/// Central difference at one coordinate plus a kink test: one-sided slopes
/// that disagree by more than `kink_tol` and keep disagreeing when the step
/// shrinks tenfold indicate a non-differentiable point (for smooth functions
/// the gap is proportional to the step). When the smaller step is clean the
/// kink lies between the two steps and the smaller step's difference is used.
fn probe_coord(
    at: &mut dyn FnMut(Real) -> Result<Real, NumericsError>,
    index: usize,
    x: Real,
    f0: Real,
    analytic: Real,
    cfg: &GradCheckConfig,
) -> Result<CoordReport, NumericsError> {
    let h = cfg.h;
    let (fp, fm) = (at(x + h)?, at(x - h)?);
    let numeric = (fp - fm) / (2.0 * h);
    let gap = |fp: Real, fm: Real, h: Real| {
        let (fwd, bwd) = ((fp - f0) / h, (f0 - fm) / h);
        (fwd - bwd).abs() / fwd.abs().max(bwd.abs()).max(cfg.floor)
    };
    let g1 = gap(fp, fm, h);
    let mut numeric = numeric;
    let smooth = if g1 <= cfg.kink_tol {
        true
    } else {
        // a kink within `h` but not at `x` itself: trust the smaller step
        let h2 = h / 10.0;
        let (fp2, fm2) = (at(x + h2)?, at(x - h2)?);
        let g2 = gap(fp2, fm2, h2);
        if g2 <= cfg.kink_tol {
            numeric = (fp2 - fm2) / (2.0 * h2);
        }
        g2 <= 0.5 * g1
    };
    let rel_err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(cfg.floor);
    Ok(CoordReport {
        index,
        analytic,
        numeric,
        rel_err,
        smooth,
    })
}

fn summarize(coords: &[CoordReport]) -> (Real, usize) {
    let max = coords.iter().map(|c| c.rel_err).fold(0.0, Real::max);
    (max, coords.iter().filter(|c| !c.smooth).count())
}

/// Checks `f` at `point`. `f` must build a scalar from the provided variable
/// and be deterministic.
pub fn grad_check<F>(f: F, point: &Tensor, cfg: GradCheckConfig) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, NumericsError>,
{
    let eval = |t: &Tensor| -> Result<Real, NumericsError> {
        let mut g = Graph::inference();
        let x = g.input(t.clone());
        let y = f(&mut g, x)?;
        let v = g.value(y);
        if v.len() != 1 {
            return Err(NumericsError::NonScalarLoss(v.shape().to_vec()));
        }
        let val = v.item();
        if !val.is_finite() {
            return Err(NumericsError::NonFinite("function value".into()));
        }
        Ok(val)
    };

    let mut g = Graph::new();
    let x = g.variable(point.clone());
    let y = f(&mut g, x)?;
    let grads = g.backward(y)?;
    let analytic = grads.wrt(x).cloned().unwrap_or_else(|| Tensor::zeros(point.shape()));
    let f0 = eval(point)?;

    let mut coords = Vec::with_capacity(point.len());
    let mut probe = point.clone();
    for i in 0..point.len() {
        let orig = point.data()[i];
        let mut at = |x: Real| {
            probe.data_mut()[i] = x;
            let v = eval(&probe);
            probe.data_mut()[i] = orig;
            v
        };
        coords.push(probe_coord(&mut at, i, orig, f0, analytic.data()[i], &cfg)?);
    }
    let (max_rel_err, non_smooth) = summarize(&coords);
    Ok(GradCheckReport {
        passed: max_rel_err < cfg.tol && non_smooth == 0,
        coords,
        max_rel_err,
        non_smooth,
    })
}

/// Checks the gradients of the stored parameters `ids` of a scalar built
/// by `f`. At most `max_coords` evenly spaced coordinates are probed per
/// parameter.
pub fn grad_check_params<F>(
    f: F,
    store: &ParamStore,
    ids: &[ParamId],
    max_coords: usize,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, NumericsError>,
{
    let eval = |s: &ParamStore| -> Result<Real, NumericsError> {
        let mut g = Graph::inference();
        let y = f(&mut g, s)?;
        let v = g.value(y);
        if v.len() != 1 {
            return Err(NumericsError::NonScalarLoss(v.shape().to_vec()));
        }
        let val = v.item();
        if !val.is_finite() {
            return Err(NumericsError::NonFinite("function value".into()));
        }
        Ok(val)
    };
    let mut g = Graph::new();
    let y = f(&mut g, store)?;
    let grads = g.backward(y)?.param_grads();
    let f0 = eval(store)?;
    let mut probe = store.clone();
    let mut coords = Vec::new();
    for &id in ids {
        let n = store.get(id).len();
        let analytic = grads
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, t)| t.clone())
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
        let step = n.div_ceil(max_coords.max(1)).max(1);
        for i in (0..n).step_by(step) {
            let orig = store.get(id).data()[i];
            let mut at = |x: Real| {
                probe.get_mut(id).data_mut()[i] = x;
                let v = eval(&probe);
                probe.get_mut(id).data_mut()[i] = orig;
                v
            };
            coords.push(probe_coord(&mut at, i, orig, f0, analytic.data()[i], &cfg)?);
        }
    }
    let (max_rel_err, non_smooth) = summarize(&coords);
    Ok(GradCheckReport {
        passed: max_rel_err < cfg.tol && non_smooth == 0,
        coords,
        max_rel_err,
        non_smooth,
    })
}
