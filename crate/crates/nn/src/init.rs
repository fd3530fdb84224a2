use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::tensor::Tensor;

/// Weight initialisation schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    GlorotUniform,
    /// Normal with std sqrt(2 / fan_in).
    HeNormal,
    /// Normal with a fixed standard deviation.
    Normal(f32),
    Constant(f32),
}

impl Init {
    pub fn tensor(
        self,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = match self {
            Init::GlorotUniform => {
                let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("valid range");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            Init::HeNormal => {
                let dist = Normal::new(0.0, (2.0 / fan_in as f32).sqrt()).expect("valid std");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("valid std");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            Init::Constant(v) => vec![v; n],
        };
        Tensor::from_vec(shape, data)
    }
}
