//! Negative-control fixtures for the gradient-check harness.

use super::{Graph, Tensor};

/// x² forward with a deliberately wrong backward rule (3x instead of 2x).
/// Exists solely so gradient-check harnesses can prove they detect bad
/// backward implementations; never use it in real losses.
pub fn square_wrong_backward(g: &mut Graph, a: &Tensor) -> Tensor {
    let av = g.data_arc(a);
    let data: Vec<f64> = av.iter().map(|&x| x * x).collect();
    let id = a.id();
    let backward = Box::new(move |up: &[f64], sink: &mut super::GradSink<'_>| {
        for (i, &u) in up.iter().enumerate() {
            sink.add(id, i, u * 3.0 * av[i]);
        }
    });
    g.record("square_wrong_backward", &[a], a.shape().to_vec(), data, backward)
}
