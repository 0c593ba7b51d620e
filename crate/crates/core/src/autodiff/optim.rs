use super::graph::Graph;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Plain SGD: p <- p - lr * g.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
}

/// Adam with bias correction. First/second moment buffers are allocated on
/// the first step, one pair per parameter.
#[derive(Debug, Clone)]
pub struct Adam<T: Real> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

/// Optimizer state: learning rate, moment accumulators where the variant
/// needs them, and the step counter.
#[derive(Debug, Clone)]
pub enum Optimizer<T: Real> {
    Sgd(Sgd),
    Adam(Adam<T>),
}

impl<T: Real> Optimizer<T> {
    pub fn sgd(lr: f64) -> Result<Optimizer<T>> {
        check_lr(lr)?;
        Ok(Optimizer::Sgd(Sgd { lr }))
    }

    pub fn adam(lr: f64) -> Result<Optimizer<T>> {
        Optimizer::adam_with(lr, 0.9, 0.999, 1e-8)
    }

    pub fn adam_with(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Optimizer<T>> {
        check_lr(lr)?;
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if eps <= 0.0 {
            return Err(Error::config(format!("eps must be positive, got {eps}")));
        }
        Ok(Optimizer::Adam(Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }))
    }

    pub fn step_count(&self) -> u64 {
        match self {
            Optimizer::Sgd(_) => 0,
            Optimizer::Adam(a) => a.step,
        }
    }

    /// Apply one update from the gradients of the most recent backward pass,
    /// then clear them. Calling this without a backward pass is an error.
    pub fn step(&mut self, graph: &mut Graph<T>) -> Result<()> {
        if !graph.grads_ready {
            return Err(Error::graph(
                "optimizer step without gradients; run backward first",
            ));
        }
        match self {
            Optimizer::Sgd(s) => {
                let lr = T::from_f64(s.lr);
                for i in 0..graph.params.len() {
                    let slot = graph.param_slot(i);
                    let grad = graph.grads[slot]
                        .take()
                        .ok_or_else(|| Error::graph(format!("missing gradient for param {i}")))?;
                    for (p, &g) in graph.params[i].data_mut().iter_mut().zip(grad.data()) {
                        *p = *p - lr * g;
                    }
                }
            }
            Optimizer::Adam(a) => {
                if a.m.is_empty() {
                    a.m = graph
                        .params
                        .iter()
                        .map(|p| Tensor::zeros(p.shape()))
                        .collect();
                    a.v = a.m.clone();
                }
                if a.m.len() != graph.params.len() {
                    return Err(Error::graph(format!(
                        "optimizer tracks {} params, graph has {}",
                        a.m.len(),
                        graph.params.len()
                    )));
                }
                a.step += 1;
                // fold both bias corrections into the step size
                let lr_t = a.lr * (1.0 - a.beta2.powi(a.step as i32)).sqrt()
                    / (1.0 - a.beta1.powi(a.step as i32));
                let (lr_t, b1, b2, omb1, omb2, eps) = (
                    T::from_f64(lr_t),
                    T::from_f64(a.beta1),
                    T::from_f64(a.beta2),
                    T::from_f64(1.0 - a.beta1),
                    T::from_f64(1.0 - a.beta2),
                    T::from_f64(a.eps),
                );
                for i in 0..graph.params.len() {
                    let slot = graph.param_slot(i);
                    let grad = graph.grads[slot]
                        .take()
                        .ok_or_else(|| Error::graph(format!("missing gradient for param {i}")))?;
                    let (m, v) = (&mut a.m[i], &mut a.v[i]);
                    for (((p, &g), m), v) in graph.params[i]
                        .data_mut()
                        .iter_mut()
                        .zip(grad.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *m = b1 * *m + omb1 * g;
                        *v = b2 * *v + omb2 * g * g;
                        *p = *p - lr_t * *m / (v.sqrt() + eps);
                    }
                }
            }
        }
        graph.clear_grads();
        Ok(())
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if lr <= 0.0 || !lr.is_finite() {
        return Err(Error::config(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    Ok(())
}
