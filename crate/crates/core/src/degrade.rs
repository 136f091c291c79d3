//! Benign transmission noise between embedding and revealing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::imaging::{decode_image, encode_jpeg, ImageTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DegradationKind {
    None,
    /// Additive N(0, σ²) per value, σ in normalized intensity.
    Gaussian { sigma: f64 },
    /// Photon noise: Poisson(v·peak)/peak.
    Poisson { peak: f64 },
    Jpeg { quality: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    #[serde(flatten)]
    pub kind: DegradationKind,
    #[serde(default)]
    pub seed: u64,
}

impl Degradation {
    pub fn none() -> Self {
        Self {
            kind: DegradationKind::None,
            seed: 0,
        }
    }

    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self {
            kind: DegradationKind::Gaussian { sigma },
            seed,
        }
    }

    pub fn poisson(peak: f64, seed: u64) -> Self {
        Self {
            kind: DegradationKind::Poisson { peak },
            seed,
        }
    }

    pub fn jpeg(quality: u8) -> Self {
        Self {
            kind: DegradationKind::Jpeg { quality },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DegradationKind::None => Ok(()),
            DegradationKind::Gaussian { sigma } if (0.0..=1.0).contains(&sigma) => Ok(()),
            DegradationKind::Gaussian { sigma } => Err(Error::arg(format!("gaussian sigma {sigma} outside [0, 1]"))),
            DegradationKind::Poisson { peak } if peak.is_finite() && peak > 0.0 => Ok(()),
            DegradationKind::Poisson { peak } => Err(Error::arg(format!("poisson peak {peak} must be positive"))),
            DegradationKind::Jpeg { quality } if (1..=100).contains(&quality) => Ok(()),
            DegradationKind::Jpeg { quality } => Err(Error::arg(format!("jpeg quality {quality} outside 1..=100"))),
        }
    }
}

/// Applies the channel; output is clamped to `[0, 1]`.
pub fn apply(deg: &Degradation, img: &ImageTensor) -> Result<ImageTensor> {
    deg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(deg.seed);
    let mut out = match deg.kind {
        DegradationKind::None => return Ok(img.clone()),
        DegradationKind::Gaussian { sigma } => {
            if sigma == 0.0 {
                return Ok(img.clone());
            }
            let normal = Normal::new(0.0, sigma).expect("valid sigma");
            let mut out = img.clone();
            out.data_mut().iter_mut().for_each(|v| *v += normal.sample(&mut rng));
            out
        }
        DegradationKind::Poisson { peak } => {
            let mut out = img.clone();
            for v in out.data_mut() {
                let lambda = v.clamp(0.0, 1.0) * peak;
                *v = if lambda > 0.0 {
                    Poisson::new(lambda).expect("positive rate").sample(&mut rng) / peak
                } else {
                    0.0
                };
            }
            out
        }
        DegradationKind::Jpeg { quality } => decode_image(&encode_jpeg(img, quality)?)?,
    };
    out.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(out)
}

/// Inserts the channel into a computation graph. The forward value is the
/// real degraded image and the backward pass is the identity.
pub fn apply_differentiable(tape: &mut Tape, x: Var, deg: &Degradation) -> Result<Var> {
    if let DegradationKind::Poisson { .. } = deg.kind {
        return Err(Error::Unsupported("poisson noise is evaluation-only".into()));
    }
    if let DegradationKind::None = deg.kind {
        return Ok(x);
    }
    let img = tape.value(x).to_image()?;
    let degraded = apply(deg, &img)?;
    Ok(tape.straight_through(x, Tensor::from_image(&degraded)))
}
