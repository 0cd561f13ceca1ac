//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::numcore::graph::{Graph, ParamSet, Var};
use crate::numcore::tensor::Tensor;
use crate::scalar::Scalar;

/// Central differences of the scalar built by `f`, one coordinate at a time.
pub fn numeric_gradient<T, F>(params: &ParamSet<T>, eps: T, mut f: F) -> Result<Vec<Tensor<T>>>
where
    T: Scalar,
    F: FnMut(&ParamSet<T>, &mut Graph<T>) -> Result<Var>,
{
    let mut eval = |ps: &ParamSet<T>| -> Result<T> {
        let mut g = Graph::new();
        let root = f(ps, &mut g)?;
        g.value(root).item()
    };
    let mut work = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for id in params.ids() {
        let mut grad = Tensor::zeros_like(params.get(id));
        for k in 0..grad.len() {
            let orig = params.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + eps;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig - eps;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig;
            grad.data_mut()[k] = (up - down) / (eps + eps);
        }
        out.push(grad);
    }
    Ok(out)
}

/// `max |analytic − numeric| / max(1, |analytic|)` over every coordinate.
pub fn max_relative_error<T: Scalar>(analytic: &[Tensor<T>], numeric: &[Tensor<T>]) -> T {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.data().iter().zip(n.data()))
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(T::one()))
        .fold(T::zero(), T::max)
}

/// Compares backward-pass gradients of `f` against central differences.
pub fn grad_check<T, F>(params: &ParamSet<T>, eps: T, mut f: F) -> Result<T>
where
    T: Scalar,
    F: FnMut(&ParamSet<T>, &mut Graph<T>) -> Result<Var>,
{
    let mut g = Graph::new();
    let root = f(params, &mut g)?;
    let analytic = g.backward(root)?.for_params(params);
    let numeric = numeric_gradient(params, eps, f)?;
    Ok(max_relative_error(&analytic, &numeric))
}
