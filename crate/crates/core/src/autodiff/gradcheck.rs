//! Central finite-difference verification of reverse-mode gradients,
//! used by the test suites and exposed for diagnostics.

use super::graph::Graph;
use super::tensor::Tensor;
use super::graph::ValueId;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat element index where the worst error occurred.
    pub worst: (String, usize),
    pub coords_checked: usize,
}

/// Compare analytic parameter gradients against central differences
/// (f(p + h) - f(p - h)) / 2h at up to `max_coords_per_param` coordinates of
/// every parameter, evenly spread across each tensor.
///
/// Relative error uses max(|analytic|, |numeric|, 1e-6) as the denominator
/// so near-zero gradients are compared absolutely.
pub fn gradient_check(
    graph: &mut Graph<f64>,
    loss: ValueId,
    bindings: &[(ValueId, Tensor<f64>)],
    h: f64,
    max_coords_per_param: usize,
) -> Result<GradCheckReport> {
    graph.forward(bindings)?;
    graph.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = (0..graph.n_params())
        .map(|i| graph.param_grad(i).expect("backward fills all params").clone())
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (String::new(), 0),
        coords_checked: 0,
    };

    for pi in 0..graph.n_params() {
        let n = graph.param_value(pi).len();
        if n == 0 {
            continue;
        }
        let step = (n / max_coords_per_param.max(1)).max(1);
        let mut j = 0;
        while j < n {
            let orig = graph.param_value(pi).data()[j];

            graph.param_value_mut(pi).data_mut()[j] = orig + h;
            graph.forward(bindings)?;
            let up = graph.value(loss)?.data()[0];

            graph.param_value_mut(pi).data_mut()[j] = orig - h;
            graph.forward(bindings)?;
            let down = graph.value(loss)?.data()[0];

            graph.param_value_mut(pi).data_mut()[j] = orig;

            let numeric = (up - down) / (2.0 * h);
            let exact = analytic[pi].data()[j];
            let rel = (numeric - exact).abs() / numeric.abs().max(exact.abs()).max(1e-6);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (graph.param_names()[pi].clone(), j);
            }
            report.coords_checked += 1;
            j += step;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::graph::he_uniform;
    use super::super::ops::Op;
    use super::*;
    use super::super::tensor::sample_standard_normal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Every op with parameters upstream, glued into one scalar loss:
    /// conv -> relu -> conv_transpose -> sigmoid -> reshape -> matmul
    /// -> add_row_vec -> clamp -> exp/square/slice/sum arithmetic -> mean.
    #[test]
    fn every_layer_kind_passes_finite_difference_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut g: Graph<f64> = Graph::new();
        let x = g.input("x").unwrap();

        let w1 = he_uniform(&[3, 3, 1, 2], 9, &mut rng);
        let b1 = Tensor::zeros(&[2]);
        let w1 = g.param("conv.w", w1).unwrap();
        let b1 = g.param("conv.b", b1).unwrap();
        let c1 = g.apply(Op::Conv2d { stride: 2 }, &[x, w1, b1]).unwrap();
        let r1 = g.apply(Op::Relu, &[c1]).unwrap();

        let w2 = he_uniform(&[3, 3, 3, 2], 18, &mut rng);
        let b2 = he_uniform(&[3], 3, &mut rng);
        let w2 = g.param("convt.w", w2).unwrap();
        let b2 = g.param("convt.b", b2).unwrap();
        let c2 = g
            .apply(Op::ConvTranspose2d { stride: 2 }, &[r1, w2, b2])
            .unwrap();
        let s2 = g.apply(Op::Sigmoid, &[c2]).unwrap();

        let flat = g
            .apply(
                Op::Reshape {
                    per_sample: vec![4 * 4 * 3],
                },
                &[s2],
            )
            .unwrap();
        let w3 = he_uniform(&[48, 6], 48, &mut rng);
        let b3 = he_uniform(&[6], 6, &mut rng);
        let w3 = g.param("dense.w", w3).unwrap();
        let b3 = g.param("dense.b", b3).unwrap();
        let mm = g.apply(Op::MatMul, &[flat, w3]).unwrap();
        let d = g.apply(Op::AddRowVec, &[mm, b3]).unwrap();

        let cl = g.apply(Op::Clamp { lo: -2.0, hi: 2.0 }, &[d]).unwrap();
        let left = g.apply(Op::SliceCols { start: 0, end: 3 }, &[cl]).unwrap();
        let right = g.apply(Op::SliceCols { start: 3, end: 6 }, &[cl]).unwrap();
        let ex = g.apply(Op::Exp, &[left]).unwrap();
        let sq = g.apply(Op::Square, &[right]).unwrap();
        let prod = g.apply(Op::Mul, &[ex, sq]).unwrap();
        let shifted = g.apply(Op::AddScalar(0.25), &[prod]).unwrap();
        let scaled = g.apply(Op::MulScalar(0.5), &[shifted]).unwrap();
        let diff = g.apply(Op::Sub, &[scaled, sq]).unwrap();
        let summed = g.apply(Op::SumCols, &[diff]).unwrap();
        let back = g
            .apply(
                Op::Reshape {
                    per_sample: vec![1],
                },
                &[summed],
            )
            .unwrap();
        let loss = g.apply(Op::MeanAll, &[back]).unwrap();

        let xin: Tensor<f64> = sample_standard_normal(&[2, 4, 4, 1], &mut rng);
        let report = gradient_check(&mut g, loss, &[(x, xin)], 1e-5, 64).unwrap();
        assert!(
            report.max_rel_err < 1e-6,
            "max rel err {} at {:?}",
            report.max_rel_err,
            report.worst
        );
        assert!(report.coords_checked > 100);
    }

    #[test]
    fn softmax_cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut g: Graph<f64> = Graph::new();
        let x = g.input("x").unwrap();
        let t = g.input("t").unwrap();
        let w = g.param("w", he_uniform(&[5, 4], 5, &mut rng)).unwrap();
        let b = g.param("b", Tensor::zeros(&[4])).unwrap();
        let mm = g.apply(Op::MatMul, &[x, w]).unwrap();
        let logits = g.apply(Op::AddRowVec, &[mm, b]).unwrap();
        let loss = g.apply(Op::SoftmaxCrossEntropy, &[logits, t]).unwrap();

        let xin: Tensor<f64> = sample_standard_normal(&[6, 5], &mut rng);
        let mut targets = Tensor::zeros(&[6, 4]);
        for row in 0..6 {
            targets.data_mut()[row * 4 + row % 4] = 1.0;
        }
        let report = gradient_check(&mut g, loss, &[(x, xin), (t, targets)], 1e-6, 40).unwrap();
        assert!(report.max_rel_err < 1e-6, "max rel err {}", report.max_rel_err);
    }
}
