use super::ops::Op;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use rand::Rng;
use std::collections::BTreeMap;

/// Handle to a value in a [`Graph`]: an input placeholder, a trainable
/// parameter, or an op result.
pub type ValueId = usize;

enum Source {
    Input,
    Param(usize),
    Op(Op, Vec<ValueId>),
}

/// Define-then-run computation graph. Values are appended in topological
/// order by construction, so a single in-order sweep evaluates the graph and
/// a reverse sweep differentiates it.
///
/// `forward` takes named bindings for any subset of values, including op
/// results (an override short-circuits that op). Downstream values whose
/// inputs are all available are computed; the rest are left unevaluated.
/// This lets one joint graph serve as encoder (bind the image input, read
/// the posterior), decoder (bind the latent code directly, read the
/// reconstruction), and training loss.
pub struct Graph<T: Real> {
    slots: Vec<Source>,
    pub(super) params: Vec<Tensor<T>>,
    param_names: Vec<String>,
    param_slots: Vec<ValueId>,
    names: BTreeMap<String, ValueId>,
    values: Vec<Option<Tensor<T>>>,
    pub(super) grads: Vec<Option<Tensor<T>>>,
    pub(super) grads_ready: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Graph<T> {
        Graph {
            slots: Vec::new(),
            params: Vec::new(),
            param_names: Vec::new(),
            param_slots: Vec::new(),
            names: BTreeMap::new(),
            values: Vec::new(),
            grads: Vec::new(),
            grads_ready: false,
        }
    }

    fn push(&mut self, src: Source) -> ValueId {
        self.slots.push(src);
        self.slots.len() - 1
    }

    /// Declare a named input placeholder.
    pub fn input(&mut self, name: &str) -> Result<ValueId> {
        let id = self.push(Source::Input);
        self.set_name(id, name)?;
        Ok(id)
    }

    /// Declare a trainable parameter with an explicit initial value.
    pub fn param(&mut self, name: &str, init: Tensor<T>) -> Result<ValueId> {
        let index = self.params.len();
        self.params.push(init);
        self.param_names.push(name.to_string());
        let id = self.push(Source::Param(index));
        self.param_slots.push(id);
        self.set_name(id, name)?;
        Ok(id)
    }

    /// Append an op over existing values.
    pub fn apply(&mut self, op: Op, inputs: &[ValueId]) -> Result<ValueId> {
        if inputs.len() != op.arity() {
            return Err(Error::graph(format!(
                "{} expects {} inputs, got {}",
                op.name(),
                op.arity(),
                inputs.len()
            )));
        }
        for &i in inputs {
            if i >= self.slots.len() {
                return Err(Error::graph(format!(
                    "{}: input id {} does not exist",
                    op.name(),
                    i
                )));
            }
        }
        Ok(self.push(Source::Op(op, inputs.to_vec())))
    }

    /// Attach a name to a value so it can be bound or read by name.
    pub fn set_name(&mut self, id: ValueId, name: &str) -> Result<()> {
        if id >= self.slots.len() {
            return Err(Error::graph(format!("no value with id {id}")));
        }
        if self.names.contains_key(name) {
            return Err(Error::graph(format!("duplicate value name {name:?}")));
        }
        self.names.insert(name.to_string(), id);
        Ok(())
    }

    pub fn lookup(&self, name: &str) -> Result<ValueId> {
        self.names
            .get(name)
            .copied()
            .ok_or_else(|| Error::graph(format!("unknown value name {name:?}")))
    }

    pub fn n_values(&self) -> usize {
        self.slots.len()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn param_value(&self, index: usize) -> &Tensor<T> {
        &self.params[index]
    }

    pub fn param_value_mut(&mut self, index: usize) -> &mut Tensor<T> {
        self.grads_ready = false;
        &mut self.params[index]
    }

    /// Gradient of the most recent backward pass w.r.t. parameter `index`.
    pub fn param_grad(&self, index: usize) -> Option<&Tensor<T>> {
        self.grads.get(self.param_slots[index])?.as_ref()
    }

    /// Clear forward values and gradients; parameters are kept. The next
    /// forward may use a different batch size.
    pub fn reset(&mut self) {
        self.values.clear();
        self.grads.clear();
        self.grads_ready = false;
    }

    pub fn clear_grads(&mut self) {
        self.grads.clear();
        self.grads_ready = false;
    }

    pub fn grads_ready(&self) -> bool {
        self.grads_ready
    }

    /// Evaluate the graph under the given bindings. A binding may target any
    /// value; op values with a binding are not recomputed. Ops whose inputs
    /// are unavailable (e.g. an unbound input placeholder upstream) are
    /// skipped, not errors; reading such a value afterwards is the error.
    pub fn forward(&mut self, bindings: &[(ValueId, Tensor<T>)]) -> Result<()> {
        self.reset();
        self.values = vec![None; self.slots.len()];
        for (id, t) in bindings {
            if *id >= self.slots.len() {
                return Err(Error::graph(format!("binding for unknown id {id}")));
            }
            self.values[*id] = Some(t.clone());
        }
        for id in 0..self.slots.len() {
            if self.values[id].is_some() {
                continue;
            }
            match &self.slots[id] {
                Source::Input => {}
                Source::Param(i) => self.values[id] = Some(self.params[*i].clone()),
                Source::Op(op, ins) => {
                    if ins.iter().all(|&i| self.values[i].is_some()) {
                        let inputs: Vec<&Tensor<T>> =
                            ins.iter().map(|&i| self.values[i].as_ref().unwrap()).collect();
                        let out = op.forward(&inputs)?;
                        self.values[id] = Some(out);
                    }
                }
            }
        }
        Ok(())
    }

    /// `forward` with name-keyed bindings.
    pub fn forward_named(&mut self, bindings: &[(&str, Tensor<T>)]) -> Result<()> {
        let mut resolved = Vec::with_capacity(bindings.len());
        for (name, t) in bindings {
            resolved.push((self.lookup(name)?, t.clone()));
        }
        self.forward(&resolved)
    }

    pub fn value(&self, id: ValueId) -> Result<&Tensor<T>> {
        self.values
            .get(id)
            .and_then(|v| v.as_ref())
            .ok_or_else(|| Error::graph(format!("value {id} was not computed by this forward")))
    }

    pub fn value_named(&self, name: &str) -> Result<&Tensor<T>> {
        self.value(self.lookup(name)?)
    }

    /// Reverse-mode sweep from a scalar value. Populates a gradient for
    /// every parameter that feeds the loss; parameters outside the reached
    /// subgraph get an explicit zero gradient of matching shape.
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        let loss_shape = self.value(loss)?.shape().to_vec();
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(Error::graph(format!(
                "backward target must be a scalar, got shape {loss_shape:?}"
            )));
        }
        self.grads = vec![None; self.slots.len()];
        self.grads[loss] = Some(Tensor::filled(&loss_shape, T::one()));

        for id in (0..self.slots.len()).rev() {
            if self.grads[id].is_none() || self.values[id].is_none() {
                continue;
            }
            if let Source::Op(op, ins) = &self.slots[id] {
                let grad = self.grads[id].take().unwrap();
                let inputs: Vec<&Tensor<T>> =
                    ins.iter().map(|&i| self.values[i].as_ref().unwrap()).collect();
                let output = self.values[id].as_ref().unwrap();
                let input_grads = op.backward(&grad, &inputs, output)?;
                self.grads[id] = Some(grad);
                for (&in_id, g) in ins.iter().zip(input_grads) {
                    let Some(g) = g else { continue };
                    match &mut self.grads[in_id] {
                        Some(acc) => {
                            if acc.shape() != g.shape() {
                                return Err(Error::graph(format!(
                                    "gradient shape {:?} conflicts with {:?} at value {in_id}",
                                    g.shape(),
                                    acc.shape()
                                )));
                            }
                            for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                                *a = *a + b;
                            }
                        }
                        slot => *slot = Some(g),
                    }
                }
            }
        }

        for (i, &slot) in self.param_slots.iter().enumerate() {
            if self.grads[slot].is_none() {
                self.grads[slot] = Some(Tensor::zeros(self.params[i].shape()));
            }
        }
        self.grads_ready = true;
        Ok(())
    }

    pub fn grad(&self, id: ValueId) -> Option<&Tensor<T>> {
        self.grads.get(id)?.as_ref()
    }

    pub(super) fn param_slot(&self, index: usize) -> ValueId {
        self.param_slots[index]
    }

    /// Named parameter snapshot, e.g. for checkpointing.
    pub fn param_entries(&self) -> Vec<(String, Tensor<T>)> {
        self.param_names
            .iter()
            .cloned()
            .zip(self.params.iter().cloned())
            .collect()
    }

    /// Replace parameter values by name. Every graph parameter must be
    /// present with a matching shape; extra entries are rejected.
    pub fn load_param_values(&mut self, entries: Vec<(String, Tensor<T>)>) -> Result<()> {
        let mut by_name: BTreeMap<String, Tensor<T>> = entries.into_iter().collect();
        for (i, name) in self.param_names.iter().enumerate() {
            let t = by_name
                .remove(name)
                .ok_or_else(|| Error::checkpoint(format!("missing parameter {name:?}")))?;
            if t.shape() != self.params[i].shape() {
                return Err(Error::checkpoint(format!(
                    "parameter {name:?} has shape {:?}, expected {:?}",
                    t.shape(),
                    self.params[i].shape()
                )));
            }
            self.params[i] = t;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::checkpoint(format!(
                "unexpected parameter {extra:?} in checkpoint"
            )));
        }
        self.grads_ready = false;
        Ok(())
    }
}

/// He-style uniform init: bound = sqrt(6 / fan_in), suited to relu stacks.
pub fn he_uniform<T: Real, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let len: usize = shape.iter().product();
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        data.push(T::from_f64(rng.random_range(-bound..bound)));
    }
    Tensor::new(shape.to_vec(), data).expect("length matches shape by construction")
}

#[cfg(test)]
mod tests {
    use super::super::ops::Op;
    use super::*;

    fn t2(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![rows, cols], v.to_vec()).unwrap()
    }

    #[test]
    fn forward_through_identity_passes_input_unchanged() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.input("x").unwrap();
        let x_in = t2(2, 2, &[1.0, -2.0, 3.0, 0.5]);
        g.forward(&[(x, x_in.clone())]).unwrap();
        assert_eq!(g.value(x).unwrap(), &x_in);
    }

    #[test]
    fn dense_layer_forward_matches_hand_result() {
        // weight [[2]], bias [1], input [3] -> 3*2 + 1 = 7
        let mut g: Graph<f64> = Graph::new();
        let x = g.input("x").unwrap();
        let w = g.param("w", t2(1, 1, &[2.0])).unwrap();
        let b = g.param("b", Tensor::new(vec![1], vec![1.0]).unwrap()).unwrap();
        let mm = g.apply(Op::MatMul, &[x, w]).unwrap();
        let y = g.apply(Op::AddRowVec, &[mm, b]).unwrap();
        g.forward(&[(x, t2(1, 1, &[3.0]))]).unwrap();
        assert_eq!(g.value(y).unwrap().data(), &[7.0]);
    }

    #[test]
    fn unreached_parameter_gets_zero_gradient() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.input("x").unwrap();
        let w = g.param("w", t2(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let unused = g
            .param("unused", Tensor::new(vec![3], vec![5.0, 6.0, 7.0]).unwrap())
            .unwrap();
        let mm = g.apply(Op::MatMul, &[x, w]).unwrap();
        let loss = g.apply(Op::MeanAll, &[mm]).unwrap();
        g.forward(&[(x, t2(1, 2, &[1.0, 1.0]))]).unwrap();
        g.backward(loss).unwrap();
        let gu = g.grad(unused).unwrap();
        assert_eq!(gu.shape(), &[3]);
        assert!(gu.data().iter().all(|&v| v == 0.0));
        assert!(g.param_grad(0).unwrap().data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn binding_an_op_value_overrides_its_computation() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.input("x").unwrap();
        let doubled = g.apply(Op::MulScalar(2.0), &[x]).unwrap();
        let shifted = g.apply(Op::AddScalar(1.0), &[doubled]).unwrap();
        // bind the intermediate directly; x stays unbound
        g.forward(&[(doubled, t2(1, 1, &[10.0]))]).unwrap();
        assert_eq!(g.value(shifted).unwrap().data(), &[11.0]);
        assert!(g.value(x).is_err());
    }

    #[test]
    fn unavailable_values_are_skipped_not_errors() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.input("x").unwrap();
        let y = g.input("y").unwrap();
        let gx = g.apply(Op::Square, &[x]).unwrap();
        let gy = g.apply(Op::Square, &[y]).unwrap();
        g.forward(&[(x, t2(1, 1, &[3.0]))]).unwrap();
        assert_eq!(g.value(gx).unwrap().data(), &[9.0]);
        assert!(g.value(gy).is_err());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.input("x").unwrap();
        let s = g.apply(Op::Square, &[x]).unwrap();
        g.forward(&[(x, t2(2, 2, &[1.0, 2.0, 3.0, 4.0]))]).unwrap();
        assert!(g.backward(s).is_err());
    }

    #[test]
    fn reset_allows_a_different_batch_size() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.input("x").unwrap();
        let w = g.param("w", t2(2, 1, &[1.0, 1.0])).unwrap();
        let mm = g.apply(Op::MatMul, &[x, w]).unwrap();
        let loss = g.apply(Op::MeanAll, &[mm]).unwrap();
        g.forward(&[(x, t2(3, 2, &[1.0; 6]))]).unwrap();
        g.backward(loss).unwrap();
        g.reset();
        assert!(!g.grads_ready());
        g.forward(&[(x, t2(5, 2, &[2.0; 10]))]).unwrap();
        assert_eq!(g.value(mm).unwrap().shape(), &[5, 1]);
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut g: Graph<f64> = Graph::new();
        g.input("x").unwrap();
        assert!(g.input("x").is_err());
    }

    #[test]
    fn fan_in_scales_he_bound() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        use rand::SeedableRng;
        let t: Tensor<f64> = he_uniform(&[200, 50], 200, &mut rng);
        let bound = (6.0f64 / 200.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() < bound));
        // values actually spread over the interval
        let spread = t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(spread > bound * 0.9);
    }
}
