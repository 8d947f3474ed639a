use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Binomial, Distribution as _, Exp, Normal, Poisson, Uniform};

use super::EngineError;

/// Deterministic random stream. Every stochastic consumer in a simulation
/// owns its own substream keyed by a stable string id, so adding or removing
/// one consumer does not perturb the draws of the others.
pub struct SeededRng {
    inner: ChaCha12Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> SeededRng {
        SeededRng {
            inner: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    /// Derives an independent substream from a root seed and a stable key.
    pub fn substream(root: u64, key: &str) -> SeededRng {
        SeededRng::new(splitmix64(root ^ fnv1a(key)))
    }

    pub fn next_f64(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn gen_range_usize(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// A named sampling distribution with family-specific parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Dist {
    Exponential { mean: f64 },
    Gaussian { mean: f64, sigma: f64 },
    Uniform { a: f64, b: f64 },
    Binomial { n: u64, p: f64 },
    Poisson { lambda: f64 },
}

impl Dist {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: &str| Err(EngineError::BadParams(msg.to_string()));
        match *self {
            Dist::Exponential { mean } => {
                if mean <= 0.0 || !mean.is_finite() {
                    return bad("exponential mean must be > 0");
                }
            }
            Dist::Gaussian { mean, sigma } => {
                if !mean.is_finite() || !(sigma > 0.0) || !sigma.is_finite() {
                    return bad("gaussian requires finite mean and sigma > 0");
                }
            }
            Dist::Uniform { a, b } => {
                if !(a <= b) || !a.is_finite() || !b.is_finite() {
                    return bad("uniform requires a <= b");
                }
            }
            Dist::Binomial { n, p } => {
                if !(0.0..=1.0).contains(&p) || n == 0 {
                    return bad("binomial requires n >= 1 and 0 <= p <= 1");
                }
            }
            Dist::Poisson { lambda } => {
                if lambda <= 0.0 || !lambda.is_finite() {
                    return bad("poisson lambda must be > 0");
                }
            }
        }
        Ok(())
    }

    /// Draws one variate. Errors on invalid parameters.
    pub fn sample(&self, rng: &mut SeededRng) -> Result<f64, EngineError> {
        self.validate()?;
        let v = match *self {
            Dist::Exponential { mean } => Exp::new(1.0 / mean).unwrap().sample(&mut rng.inner),
            Dist::Gaussian { mean, sigma } => {
                Normal::new(mean, sigma).unwrap().sample(&mut rng.inner)
            }
            Dist::Uniform { a, b } => {
                if a == b {
                    a
                } else {
                    Uniform::new(a, b).sample(&mut rng.inner)
                }
            }
            Dist::Binomial { n, p } => Binomial::new(n, p).unwrap().sample(&mut rng.inner) as f64,
            Dist::Poisson { lambda } => f64::from(Poisson::new(lambda).unwrap().sample(&mut rng.inner)),
        };
        Ok(v)
    }

    /// Draws a strictly positive variate, resampling non-positive values.
    /// Used for inter-fault and recovery intervals (a gaussian tail can dip
    /// below zero; intervals cannot).
    pub fn sample_positive(&self, rng: &mut SeededRng) -> Result<f64, EngineError> {
        for _ in 0..1000 {
            let v = self.sample(rng)?;
            if v > 0.0 {
                return Ok(v);
            }
        }
        Err(EngineError::BadParams(
            "distribution produced no positive variate in 1000 draws".to_string(),
        ))
    }

    /// The distribution family with the given mean, following the MTTF
    /// coupling rule: exponential mean = m, uniform on [0, 2m], gaussian
    /// mean = m with caller-chosen sigma, poisson lambda = m.
    pub fn with_mean(family: &str, mean: f64, sigma: Option<f64>) -> Result<Dist, EngineError> {
        let d = match family {
            "exponential" => Dist::Exponential { mean },
            "uniform" => Dist::Uniform { a: 0.0, b: 2.0 * mean },
            "gaussian" => Dist::Gaussian {
                mean,
                sigma: sigma.unwrap_or(mean / 4.0),
            },
            "poisson" => Dist::Poisson { lambda: mean },
            other => {
                return Err(EngineError::BadParams(format!(
                    "unknown distribution family `{other}`"
                )))
            }
        };
        d.validate()?;
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_f64(), b.next_f64());
        }
    }

    #[test]
    fn substreams_differ() {
        let mut a = SeededRng::substream(42, "pu1");
        let mut b = SeededRng::substream(42, "pu2");
        assert_ne!(a.next_f64(), b.next_f64());
    }

    #[test]
    fn uniform_bounds() {
        let d = Dist::Uniform { a: 0.0, b: 1.0 };
        let mut rng = SeededRng::new(7);
        for _ in 0..1000 {
            let v = d.sample(&mut rng).unwrap();
            assert!((0.0..1.0).contains(&v));
        }
    }

    #[test]
    fn exponential_empirical_mean() {
        // Law of large numbers: mean of 1e5 draws within 3*theta/sqrt(1e5).
        let theta = 4.0;
        let d = Dist::Exponential { mean: theta };
        let mut rng = SeededRng::new(42);
        let n = 100_000;
        let sum: f64 = (0..n).map(|_| d.sample(&mut rng).unwrap()).sum();
        let mean = sum / n as f64;
        let tol = 3.0 * theta / (n as f64).sqrt();
        assert!((mean - theta).abs() < tol, "mean {mean} vs {theta} tol {tol}");
    }

    #[test]
    fn bad_params_rejected() {
        assert!(Dist::Exponential { mean: 0.0 }.validate().is_err());
        assert!(Dist::Uniform { a: 2.0, b: 1.0 }.validate().is_err());
        assert!(Dist::Binomial { n: 10, p: 1.5 }.validate().is_err());
        assert!(Dist::Gaussian { mean: 1.0, sigma: 0.0 }.validate().is_err());
    }

    #[test]
    fn mttf_coupling_means() {
        // Uniform on [0, 2m] and poisson lambda = m both have mean m.
        match Dist::with_mean("uniform", 50.0, None).unwrap() {
            Dist::Uniform { a, b } => {
                assert_eq!(a, 0.0);
                assert_eq!(b, 100.0);
            }
            _ => panic!(),
        }
        match Dist::with_mean("poisson", 50.0, None).unwrap() {
            Dist::Poisson { lambda } => assert_eq!(lambda, 50.0),
            _ => panic!(),
        }
    }
}
