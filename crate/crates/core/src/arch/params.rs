use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Result};
use crate::tensor::{Real, Tensor4};

/// Handle of a parameter inside a [`ParamStore`], assigned at build time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Initial value rule for a parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `[-bound, bound]`.
    Uniform { bound: f64 },
    Zeros,
}

impl Init {
    /// `U(-a, a)` with `a = sqrt(1 / fan_in)`.
    pub fn fan_in(fan_in: usize) -> Self {
        Init::Uniform { bound: (1.0 / fan_in.max(1) as f64).sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: [usize; 4],
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Ordered list of parameter shapes produced while building a model.
#[derive(Clone, Debug, Default)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
}

impl ParamLayout {
    pub fn register(&mut self, name: impl Into<String>, dims: [usize; 4], init: Init) -> ParamId {
        let name = name.into();
        debug_assert!(self.specs.iter().all(|s| s.name != name), "duplicate parameter {name}");
        self.specs.push(ParamSpec { name, dims, init });
        ParamId(self.specs.len() - 1)
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn total_scalars(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }
}

/// One learnable tensor with its Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor4<T>,
    pub m: Tensor4<T>,
    pub v: Tensor4<T>,
}

/// Named, ordered parameters plus optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
    step: u64,
}

impl<T: Real> ParamStore<T> {
    /// Samples every parameter from its [`Init`] rule. Values are drawn in
    /// 64-bit from a ChaCha8 stream seeded with `seed`, in layout order, so
    /// stores of either width built from the same seed agree.
    pub fn initialize(layout: &ParamLayout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layout
            .specs()
            .iter()
            .map(|spec| {
                let value = match spec.init {
                    Init::Zeros => Tensor4::zeros(spec.dims),
                    Init::Uniform { bound } => Tensor4::from_fn(spec.dims, |_| {
                        T::lit(rng.gen_range(-bound..=bound))
                    }),
                };
                Param {
                    name: spec.name.clone(),
                    m: Tensor4::zeros(spec.dims),
                    v: Tensor4::zeros(spec.dims),
                    value,
                }
            })
            .collect();
        Self::from_params(params, 0).expect("layout names are unique")
    }

    pub fn from_params(params: Vec<Param<T>>, step: u64) -> Result<Self> {
        let mut index = HashMap::with_capacity(params.len());
        for (i, p) in params.iter().enumerate() {
            if p.m.dims() != p.value.dims() || p.v.dims() != p.value.dims() {
                return config_err(format!("moments of {} are not shaped like the parameter", p.name));
            }
            if index.insert(p.name.clone(), i).is_some() {
                return config_err(format!("duplicate parameter name {}", p.name));
            }
        }
        Ok(Self { params, index, step })
    }

    /// Checks names and shapes against a layout.
    pub fn check_layout(&self, layout: &ParamLayout) -> Result<()> {
        if self.params.len() != layout.len() {
            return config_err(format!(
                "store has {} parameters, model expects {}",
                self.params.len(),
                layout.len()
            ));
        }
        for (p, s) in self.params.iter().zip(layout.specs()) {
            if p.name != s.name || p.value.dims() != s.dims {
                return config_err(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    p.name,
                    p.value.dims(),
                    s.name,
                    s.dims
                ));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: ParamId) -> &Tensor4<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor4<T> {
        &mut self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn total_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads(self.params.iter().map(|p| Tensor4::zeros(p.value.dims())).collect())
    }

    /// Converts values and moments to another scalar width.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    m: p.m.cast(),
                    v: p.v.cast(),
                })
                .collect(),
            index: self.index.clone(),
            step: self.step,
        }
    }
}

/// Gradient buffers aligned one-to-one with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T>(pub Vec<Tensor4<T>>);

impl<T: Real> Grads<T> {
    pub fn get(&self, id: ParamId) -> &Tensor4<T> {
        &self.0[id.0]
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor4<T>) -> Result<()> {
        self.0[id.0].add_assign(g)
    }

    pub fn accumulate_slice(&mut self, id: ParamId, g: &[T]) -> Result<()> {
        let dst = self.0[id.0].data_mut();
        if dst.len() != g.len() {
            return config_err(format!("gradient length {} vs parameter {}", g.len(), dst.len()));
        }
        for (d, &v) in dst.iter_mut().zip(g) {
            *d = *d + v;
        }
        Ok(())
    }

    /// Element-wise sum with another gradient set, in place.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if self.0.len() != other.0.len() {
            return config_err("merging gradient sets of different length");
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|v| {
                let f = v.to_f64().unwrap_or(f64::NAN);
                f * f
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
