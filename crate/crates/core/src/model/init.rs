use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::Result;
use crate::numerics::{ModelParams, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform on `±√(6 / (fan_in + fan_out))` for a `[fan_in, fan_out]` matrix.
    Xavier,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub path: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(path: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self {
            path: path.into(),
            shape: shape.to_vec(),
            init,
        }
    }
}

/// Draws every parameter from one seeded stream, in the order of `specs`.
pub fn init_params(specs: &[ParamSpec], seed: u64) -> Result<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::new();
    for spec in specs {
        let n: usize = spec.shape.iter().product();
        let data = match spec.init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Xavier => {
                let (fan_in, fan_out) = (spec.shape[0], spec.shape[spec.shape.len() - 1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-a, a).expect("finite bounds");
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
        };
        params.insert(spec.path.clone(), Tensor::new(spec.shape.clone(), data)?)?;
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xavier_bounds_and_determinism() {
        let specs = vec![
            ParamSpec::new("a", &[4, 6], Init::Xavier),
            ParamSpec::new("b", &[6], Init::Zeros),
            ParamSpec::new("c", &[6], Init::Ones),
        ];
        let p1 = init_params(&specs, 7).unwrap();
        let p2 = init_params(&specs, 7).unwrap();
        let p3 = init_params(&specs, 8).unwrap();
        assert!(p1.bitwise_eq(&p2));
        assert!(!p1.bitwise_eq(&p3));
        let bound = (6.0f64 / 10.0).sqrt();
        assert!(p1.get("a").unwrap().data().iter().all(|x| x.abs() <= bound));
        assert!(p1.get("b").unwrap().data().iter().all(|&x| x == 0.0));
        assert!(p1.get("c").unwrap().data().iter().all(|&x| x == 1.0));
    }
}
