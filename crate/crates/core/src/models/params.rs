use rand::Rng;
use rand_distr::StandardNormal;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::io::checkpoint::Checkpoint;
use crate::tensor::Tensor;

/// Ordered, named parameter tensors of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), t));
    }

    /// Conv weight `[c_out, c_in, kernel]` drawn from N(0, 1/fan_in).
    pub fn init_conv(&mut self, name: &str, shape: [usize; 3], rng: &mut impl Rng) {
        let fan_in = (shape[1] * shape[2]) as f64;
        let std = 1.0 / fan_in.sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("shape"));
    }

    pub fn init_bias(&mut self, name: &str, len: usize) {
        self.insert(name, Tensor::zeros(&[len]));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Registers every tensor as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound<'_> {
        let vars = self.entries.iter().map(|(_, t)| g.leaf(t.clone(), trainable)).collect();
        Bound { set: self, vars }
    }

    pub fn map_values(&self, f: impl Fn(&Tensor) -> Tensor) -> Self {
        Self {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), f(t))).collect(),
        }
    }

    pub fn write_to(&self, ckpt: &mut Checkpoint, prefix: &str) {
        for (n, t) in &self.entries {
            ckpt.push(format!("{prefix}{n}"), t.clone());
        }
    }

    /// Replaces every tensor with the checkpoint's `prefix`-named one,
    /// checking names and shapes against `self`.
    pub fn load_from(&mut self, ckpt: &Checkpoint, prefix: &str) -> Result<()> {
        for (n, t) in &mut self.entries {
            let key = format!("{prefix}{n}");
            let src = ckpt
                .tensor(&key)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks tensor `{key}`")))?;
            if src.shape() != t.shape() {
                return Err(Error::Config(format!(
                    "tensor `{key}` has shape {:?}, model expects {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            *t = src.clone();
        }
        Ok(())
    }
}

/// A [`ParamSet`] registered on a graph.
pub struct Bound<'p> {
    set: &'p ParamSet,
    vars: Vec<Var>,
}

impl Bound<'_> {
    fn index(&self, name: &str) -> usize {
        self.set
            .entries
            .iter()
            .position(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn var(&self, name: &str) -> Var {
        self.vars[self.index(name)]
    }

    /// Routes `name` to another node, e.g. a probe leaf in a gradient check.
    pub fn substitute(&mut self, name: &str, var: Var) {
        let i = self.index(name);
        self.vars[i] = var;
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, Var)> {
        self.set.entries.iter().map(|(n, _)| n.as_str()).zip(self.vars.iter().copied())
    }
}
