//! Central finite-difference verification of backward rules.

use super::{Graph, Tensor};
use crate::error::{Error, Result};

fn eval<F>(f: &F, x: &[f64], shape: &[usize]) -> Result<f64>
where
    F: Fn(&mut Graph, &Tensor) -> Result<Tensor>,
{
    let mut g = Graph::new();
    let t = g.leaf(x.to_vec(), shape, false)?;
    let out = f(&mut g, &t)?;
    if out.numel() != 1 {
        return Err(Error::contract(
            "finite_difference_check",
            format!("function must return a scalar, got shape {:?}", out.shape()),
        ));
    }
    Ok(g.scalar_value(&out))
}

fn analytic_grad<F>(f: &F, x: &[f64], shape: &[usize]) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph, &Tensor) -> Result<Tensor>,
{
    let mut g = Graph::new();
    let t = g.leaf(x.to_vec(), shape, true)?;
    let out = f(&mut g, &t)?;
    if out.numel() != 1 {
        return Err(Error::contract(
            "finite_difference_check",
            format!("function must return a scalar, got shape {:?}", out.shape()),
        ));
    }
    g.backward(&out)?;
    Ok(g.grad(&t).expect("leaf requires grad").to_vec())
}

/// Max over coordinates of |analytic − central difference| / max(1, |central|).
///
/// The analytic gradient comes from `f`'s backward pass; the numeric reference
/// from central differences of `f` itself. For operations with surrogate
/// gradients use [`finite_difference_check_against`] so the reference is the
/// declared surrogate rather than the non-smooth forward.
pub fn finite_difference_check<F>(f: F, x: &[f64], shape: &[usize], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &Tensor) -> Result<Tensor>,
{
    finite_difference_check_against(&f, &f, x, shape, eps)
}

/// Like [`finite_difference_check`], but central differences are taken on
/// `reference` while the analytic gradient comes from `f`'s backward pass.
pub fn finite_difference_check_against<F, R>(
    f: &F,
    reference: &R,
    x: &[f64],
    shape: &[usize],
    eps: f64,
) -> Result<f64>
where
    F: Fn(&mut Graph, &Tensor) -> Result<Tensor>,
    R: Fn(&mut Graph, &Tensor) -> Result<Tensor>,
{
    if eps <= 0.0 {
        return Err(Error::contract(
            "finite_difference_check",
            format!("eps must be positive, got {}", eps),
        ));
    }
    let analytic = analytic_grad(f, x, shape)?;
    let mut max_rel = 0.0f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let fp = eval(reference, &probe, shape)?;
        probe[i] = x[i] - eps;
        let fm = eval(reference, &probe, shape)?;
        probe[i] = x[i];
        let numeric = (fp - fm) / (2.0 * eps);
        let rel = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_to_fd() {
        let f = |g: &mut Graph, x: &Tensor| {
            let sq = g.mul(x, x)?;
            g.sum(&sq, None)
        };
        let err = finite_difference_check(f, &[1.0, 2.0, 3.0], &[3], 1e-5).unwrap();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn rejects_non_positive_eps() {
        let f = |g: &mut Graph, x: &Tensor| g.sum(x, None);
        let err = finite_difference_check(f, &[1.0], &[1], 0.0).unwrap_err();
        assert!(err.is_contract());
    }

    #[test]
    fn wrong_backward_is_caught() {
        let f = |g: &mut Graph, x: &Tensor| {
            let sq = crate::tensor::fixtures::square_wrong_backward(g, x);
            g.sum(&sq, None)
        };
        let err = finite_difference_check(f, &[1.0, 2.0], &[2], 1e-5).unwrap();
        assert!(err > 0.1, "negative control must fail, got {err}");
    }

    #[test]
    fn composite_matches_fd_tightly() {
        // exp(x)·x + log(x² + 1) summed, on a random-ish 5-vector.
        let f = |g: &mut Graph, x: &Tensor| {
            let e = g.exp(x)?;
            let ex = g.mul(&e, x)?;
            let sq = g.mul(x, x)?;
            let sq1 = g.add_scalar(&sq, 1.0)?;
            let l = g.log(&sq1)?;
            let s = g.add(&ex, &l)?;
            g.sum(&s, None)
        };
        let x = [0.37, -1.22, 0.85, 2.01, -0.44];
        let err = finite_difference_check(f, &x, &[5], 1e-5).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }
}
