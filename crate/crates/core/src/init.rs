//! Weight initializers.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// Standard deviation used by the fixed-scale `RN` and `TN` initializers.
pub const FIXED_INIT_STD: f64 = 0.1;

/// `TN` redraws samples falling outside this many standard deviations.
pub const TRUNCATION_STDS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitMethod {
    /// Normal with std 0.1.
    RandomNormal,
    /// Normal with std 0.1, resampled outside ±2 std.
    TruncatedNormal,
    /// Glorot: variance `2 / (fan_in + fan_out)`.
    VarianceScalingXavier,
    /// He: variance `2 / fan_in`.
    VarianceScalingHe,
}

impl InitMethod {
    pub const ALL: [InitMethod; 4] = [
        InitMethod::RandomNormal,
        InitMethod::TruncatedNormal,
        InitMethod::VarianceScalingXavier,
        InitMethod::VarianceScalingHe,
    ];

    pub fn variance(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            InitMethod::RandomNormal | InitMethod::TruncatedNormal => FIXED_INIT_STD * FIXED_INIT_STD,
            InitMethod::VarianceScalingXavier => 2.0 / (fan_in + fan_out) as f64,
            InitMethod::VarianceScalingHe => 2.0 / fan_in as f64,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InitMethod::RandomNormal => "rn",
            InitMethod::TruncatedNormal => "tn",
            InitMethod::VarianceScalingXavier => "vsx",
            InitMethod::VarianceScalingHe => "vsh",
        }
    }
}

impl fmt::Display for InitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "rn" => Ok(InitMethod::RandomNormal),
            "tn" => Ok(InitMethod::TruncatedNormal),
            "vsx" => Ok(InitMethod::VarianceScalingXavier),
            "vsh" => Ok(InitMethod::VarianceScalingHe),
            _ => Err(Error::Config(format!("unknown init method `{s}` (rn|tn|vsx|vsh)"))),
        }
    }
}

/// Draws a weight tensor. For conv kernels pass `fan_in = kh·kw·cin` and
/// `fan_out = kh·kw·cout`.
pub fn initialize<T: Real>(
    method: InitMethod,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut Rng,
) -> Result<Tensor<T>> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::Domain(format!("fan_in/fan_out must be >= 1, got {fan_in}/{fan_out}")));
    }
    let std = method.variance(fan_in, fan_out).sqrt();
    match method {
        InitMethod::TruncatedNormal => {
            let n: usize = shape.iter().product();
            let bound = TRUNCATION_STDS * std;
            let data = (0..n)
                .map(|_| loop {
                    let v = std * rng.standard_normal();
                    if v.abs() <= bound {
                        break T::of_f64(v);
                    }
                })
                .collect();
            Tensor::new(shape, data)
        }
        _ => rng.normal(shape, 0.0, std),
    }
}
