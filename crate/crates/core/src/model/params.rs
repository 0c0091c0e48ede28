use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};

/// How a tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            name: name.into(),
            shape,
            data: vec![0.0; n],
        }
    }
}

/// Named parameter arrays in a fixed order.
///
/// Values are kept exactly representable as `f32` so that the on-disk form
/// loses nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    tensors: Vec<Tensor>,
}

/// 64-bit FNV-1a; a stable per-tensor seed offset.
pub(crate) fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

pub(crate) fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

impl ParamSet {
    /// Initializes each tensor from its own stream derived from `seed` and
    /// its name, so a tensor's values do not depend on which other tensors
    /// exist.
    pub fn init(spec: &[(String, Vec<usize>, Init)], seed: u64) -> Self {
        let tensors = spec
            .iter()
            .map(|(name, shape, init)| {
                let mut t = Tensor::zeros(name.clone(), shape.clone());
                match *init {
                    Init::Zeros => {}
                    Init::Ones => t.data.fill(1.0),
                    Init::Normal(std) => {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name));
                        let normal = Normal::new(0.0, std).expect("finite std");
                        for x in &mut t.data {
                            *x = round_f32(normal.sample(&mut rng));
                        }
                    }
                }
                t
            })
            .collect();
        ParamSet { tensors }
    }

    pub fn from_tensors(tensors: Vec<Tensor>) -> Self {
        ParamSet { tensors }
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.shape.clone()))
                .collect(),
        }
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn replace(&mut self, tensor: Tensor) {
        match self.index(&tensor.name) {
            Some(i) => self.tensors[i] = tensor,
            None => self.tensors.push(tensor),
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn fill(&mut self, value: f64) {
        for t in &mut self.tensors {
            t.data.fill(value);
        }
    }

    pub fn mat(&self, i: usize) -> ArrayView2<'_, f64> {
        let t = &self.tensors[i];
        ArrayView2::from_shape((t.shape[0], t.shape[1]), &t.data).expect("2-d tensor")
    }

    pub fn mat_mut(&mut self, i: usize) -> ArrayViewMut2<'_, f64> {
        let t = &mut self.tensors[i];
        ArrayViewMut2::from_shape((t.shape[0], t.shape[1]), &mut t.data).expect("2-d tensor")
    }

    pub fn vec(&self, i: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.tensors[i].data[..])
    }

    pub fn vec_mut(&mut self, i: usize) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(&mut self.tensors[i].data[..])
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.tensors.iter().flat_map(|t| t.data.iter()).map(|x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flat_map(|t| t.data.iter()).all(|x| x.is_finite())
    }
}
