//! Named parameter storage and the dense layers built on it.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces every tensor, keeping names; shapes must agree.
    pub fn load_values(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.tensors.len() {
            return Err(Error::Incompatible {
                what: "parameter count".into(),
                expected: self.tensors.len().to_string(),
                found: values.len().to_string(),
            });
        }
        for (k, v) in values.iter().enumerate() {
            if v.shape() != self.tensors[k].shape() {
                return Err(Error::Incompatible {
                    what: format!("shape of parameter {}", self.names[k]),
                    expected: format!("{:?}", self.tensors[k].shape()),
                    found: format!("{:?}", v.shape()),
                });
            }
        }
        self.tensors = values;
        Ok(())
    }

    pub fn zero_all(&mut self) {
        for t in &mut self.tensors {
            t.data_mut().fill(0.0);
        }
    }

    /// Places every tensor in `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Graph handles for a [`ParamStore`], index-aligned with it.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Handles already placed in a graph, in [`ParamStore`] order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Gaussian weights with variance `gain² / fan_in`.
pub fn init_weight(rng: &mut impl Rng, fan_in: usize, fan_out: usize, gain: f64) -> Tensor {
    let normal = Normal::new(0.0, gain / (fan_in as f64).sqrt()).expect("positive std");
    Tensor::from_fn(fan_in, fan_out, |_, _| normal.sample(rng))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            init_weight(rng, d_in, d_out, gain),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, d_out));
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.linear(x, p.var(self.weight), p.var(self.bias))
    }
}

/// Fully connected layers with ReLU between them (none after the last).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths` lists every layer boundary, input first.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        last_gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i + 1 == n {
                    last_gain
                } else {
                    std::f64::consts::SQRT_2
                };
                Linear::new(
                    store,
                    &format!("{name}.{i}"),
                    widths[i],
                    widths[i + 1],
                    gain,
                    rng,
                )
            })
            .collect();
        Self { layers }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, mut x: Var) -> Result<Var> {
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                x = g.relu(x);
            }
            x = layer.forward(g, p, x)?;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn load_values_checks_shapes() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::zeros(2, 3));
        let err = store
            .load_values(vec![Tensor::zeros(3, 2)])
            .unwrap_err()
            .to_string();
        assert!(err.contains("(2, 3)") && err.contains("(3, 2)"), "{err}");
        assert!(store.load_values(vec![Tensor::full(2, 3, 1.0)]).is_ok());
        assert_eq!(store.get(ParamId(0)).sum(), 6.0);
    }

    #[test]
    fn mlp_matches_manual_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[4, 5, 2], 1.0, &mut rng);
        let x = Tensor::from_fn(3, 4, |r, c| (r as f64 - c as f64) * 0.3);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = mlp.forward(&mut g, &p, xv).unwrap();
        let h = x
            .matmul(store.get(mlp.layers[0].weight))
            .unwrap()
            .map(|v| v.max(0.0));
        let expect = h.matmul(store.get(mlp.layers[1].weight)).unwrap();
        for (a, b) in g.value(y).data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
