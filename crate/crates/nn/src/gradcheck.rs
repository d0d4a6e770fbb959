//! Central finite-difference checks of analytic gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{Bound, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    /// Largest |analytic − numeric| over the checked coordinates.
    pub max_abs: f64,
    /// Largest |analytic − numeric| / max(|analytic|, |numeric|).
    pub max_rel: f64,
    pub checked: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheck {
    /// Every coordinate within `rel_tol` relative error, or within `abs_floor`
    /// absolute error.
    pub fn passes(&self, rel_tol: f64, abs_floor: f64) -> bool {
        self.analytic.iter().zip(&self.numeric).all(|(a, n)| {
            let d = (a - n).abs();
            d <= abs_floor || d <= rel_tol * a.abs().max(n.abs())
        })
    }

    fn record(&mut self, a: f64, n: f64) {
        let d = (a - n).abs();
        self.max_abs = self.max_abs.max(d);
        let scale = a.abs().max(n.abs());
        if scale > 0.0 {
            self.max_rel = self.max_rel.max(d / scale);
        }
        self.checked += 1;
        self.analytic.push(a);
        self.numeric.push(n);
    }
}

/// Compares the gradient of the scalar `f(x)` against central differences
/// with the given `step`, coordinate by coordinate.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let eval = |t: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(t.clone());
        let y = f(&mut g, v)?;
        Ok(g.value(y).item())
    };
    let mut g = Graph::new();
    let v = g.leaf(x.clone());
    let y = f(&mut g, v)?;
    g.backward(y)?;
    let analytic = g.grad(v).unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));

    let mut report = GradCheck::default();
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let fp = eval(&probe)?;
        probe.data_mut()[i] = orig - step;
        let fm = eval(&probe)?;
        probe.data_mut()[i] = orig;
        report.record(analytic.data()[i], (fp - fm) / (2.0 * step));
    }
    Ok(report)
}

/// Like [`grad_check`] but over selected `(name, flat_index)` coordinates of a
/// parameter store.
pub fn grad_check_params<F>(f: F, store: &ParamStore, coords: &[(String, usize)], step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let b = s.bind(&mut g, false);
        let y = f(&mut g, &b)?;
        Ok(g.value(y).item())
    };
    let mut g = Graph::new();
    let bound = store.bind(&mut g, true);
    let y = f(&mut g, &bound)?;
    g.backward(y)?;
    let grads = bound.gradients(&g);

    let mut report = GradCheck::default();
    let mut probe = store.clone();
    for (name, idx) in coords {
        let a = grads.get(name).map_or(0.0, |t| t.data()[*idx]);
        let orig = store.get(name).ok_or_else(|| crate::error::NnError::MissingParam(name.clone()))?.data()[*idx];
        probe.get_mut(name).expect("present").data_mut()[*idx] = orig + step;
        let fp = eval(&probe)?;
        probe.get_mut(name).expect("present").data_mut()[*idx] = orig - step;
        let fm = eval(&probe)?;
        probe.get_mut(name).expect("present").data_mut()[*idx] = orig;
        report.record(a, (fp - fm) / (2.0 * step));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let r = grad_check(
            |g, x| {
                let s = g.square(x);
                Ok(g.sum(s))
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert_eq!(r.analytic, vec![2.0, 4.0]);
        assert!(r.max_abs < 1e-8, "{}", r.max_abs);
    }

    #[test]
    fn softplus_chain() {
        let x = Tensor::new(vec![4], vec![-1.3, -0.2, 0.4, 2.1]).unwrap();
        let r = grad_check(
            |g, x| {
                let a = g.softplus(x);
                let b = g.tanh(a);
                let c = g.mul(a, b)?;
                Ok(g.sum(c))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(r.max_abs < 1e-6, "{}", r.max_abs);
    }
}
