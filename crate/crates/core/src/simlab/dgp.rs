//! Data-generating processes, the controlled-noise initial fits, and Monte-Carlo truths.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ObservedDataset, OutcomeScale};
use crate::error::{Error, Result};
use crate::math::{expit, logit};
use crate::nuisance::KnownPropensity;

/// `(a, b)` giving a true VTE of about 0.010, 0.025 and 0.060 in [`DgpSpec::Wellspec`].
pub const WELLSPEC_PRESETS: [(f64, f64); 3] = [(1.58, 1.58), (2.661, 2.661), (4.854, 4.854)];

pub const MIN_TRUTH_DRAWS: usize = 1_000_000;

/// Simulation designs. All have four covariates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DgpSpec {
    /// Known-g design whose initial fits are the truth plus controlled noise of order `n^rate`.
    ControlledNoise { rate: f64 },
    /// Logistic outcome `expit(0.14(2A + W1 + aAW1 − bAW2 + W2 − W3 + W4))`.
    Wellspec { a: f64, b: f64 },
    /// Trigonometric outcome, linear-logistic propensity.
    Case1,
    /// [`DgpSpec::Case1`] with `cos(W1)` unscaled, as typeset.
    Case1AsPrinted,
    Case2,
    Case3,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DgpSpec::ControlledNoise { rate } if !(rate < 0.0) => Err(Error::InvalidArgument(format!(
                "controlled-noise rate must be negative, got {rate}"
            ))),
            DgpSpec::Wellspec { a, b } if !(a.is_finite() && b.is_finite()) => {
                Err(Error::InvalidArgument("wellspec coefficients must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            DgpSpec::ControlledNoise { rate } => format!("controlled-noise(rate={rate})"),
            DgpSpec::Wellspec { a, b } => format!("wellspec(a={a},b={b})"),
            DgpSpec::Case1 => "case1".into(),
            DgpSpec::Case1AsPrinted => "case1-as-printed".into(),
            DgpSpec::Case2 => "case2".into(),
            DgpSpec::Case3 => "case3".into(),
        }
    }

    /// Named built-in propensities, for replaying a simulation design on data.
    pub fn from_name(name: &str) -> Option<DgpSpec> {
        match name {
            "controlled-noise" => Some(DgpSpec::ControlledNoise { rate: -1.0 / 3.0 }),
            "wellspec" => Some(DgpSpec::Wellspec { a: 0.0, b: 0.0 }),
            "case1" => Some(DgpSpec::Case1),
            "case1-as-printed" => Some(DgpSpec::Case1AsPrinted),
            "case2" => Some(DgpSpec::Case2),
            "case3" => Some(DgpSpec::Case3),
            _ => None,
        }
    }

    pub fn draw_w<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 4] {
        let w1 = rng.random_range(-3.0..3.0);
        let w2 = match self {
            DgpSpec::ControlledNoise { .. } => f64::from(rng.random_bool(0.5)),
            _ => StandardNormal.sample(rng),
        };
        let w3 = StandardNormal.sample(rng);
        let w4 = StandardNormal.sample(rng);
        [w1, w2, w3, w4]
    }

    /// `P(A = 1 | W)`.
    pub fn g0(&self, w: &[f64]) -> f64 {
        let (w1, w2, w3, w4) = (w[0], w[1], w[2], w[3]);
        match self {
            DgpSpec::ControlledNoise { .. } => {
                expit(0.5 * (-0.8 * w1 + 0.39 * w2 + 0.08 * w3 - 0.12 * w4 - 0.15))
            }
            DgpSpec::Wellspec { .. } | DgpSpec::Case1 | DgpSpec::Case1AsPrinted => {
                expit(-0.4 * w1 + 0.195 * w2 + 0.04 * w3 - 0.06 * w4 - 0.075)
            }
            DgpSpec::Case2 | DgpSpec::Case3 => {
                expit(0.4 * (-0.4 * w1 * w2 + 0.63 * w2 * w2 - 0.66 * w1.cos() - 0.25))
            }
        }
    }

    /// `E[Y | A = a, W]`.
    pub fn q0(&self, a: f64, w: &[f64]) -> f64 {
        let (w1, w2, w3, w4) = (w[0], w[1], w[2], w[3]);
        match *self {
            DgpSpec::ControlledNoise { .. } => expit(
                0.2 * (0.1 * a + 2.0 * a * w1 - 10.0 * a * w2 + 3.0 * a * w3 + w1 + w2 + 0.4 * w3 + 0.3 * w4),
            ),
            DgpSpec::Wellspec { a: ca, b: cb } => {
                expit(0.14 * (2.0 * a + w1 + ca * a * w1 - cb * a * w2 + w2 - w3 + w4))
            }
            DgpSpec::Case1 | DgpSpec::Case1AsPrinted => {
                let c = if matches!(self, DgpSpec::Case1) { 0.14 } else { 1.0 };
                expit(
                    0.28 * a + 2.8 * w1.cos() * a + c * w1.cos() - 0.56 * a * w2 * w2
                        + 0.42 * w4.cos() * a
                        + 0.14 * a * w1 * w1,
                )
            }
            DgpSpec::Case2 => {
                let big = f64::from(w2.abs() > 1.0);
                let small = f64::from(w2 <= 1.0);
                expit(0.1 * w1 * w2 + 1.5 * a * w1.cos() + 0.15 * w1 - 0.4 * w2 * big - w2 * small)
            }
            DgpSpec::Case3 => expit(
                0.2 * w1 * w2 + 0.1 * w2 * w2 - 0.8 * a * (w1.cos() + 0.5 * a * w1 * w2 * w2) - 0.35,
            ),
        }
    }

    pub fn blip0(&self, w: &[f64]) -> f64 {
        self.q0(1.0, w) - self.q0(0.0, w)
    }

    pub fn known_propensity(&self) -> KnownPropensity {
        let spec = *self;
        Arc::new(move |w: &[f64]| spec.g0(w))
    }
}

/// `n` iid draws of `(W, A ~ Bernoulli(g₀), Y ~ Bernoulli(Q̄₀(A, W)))`.
pub fn draw_dataset<R: Rng + ?Sized>(spec: &DgpSpec, n: usize, rng: &mut R) -> Result<ObservedDataset> {
    spec.validate()?;
    let mut w = DMatrix::zeros(n, 4);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let wi = spec.draw_w(rng);
        for (j, v) in wi.iter().enumerate() {
            w[(i, j)] = *v;
        }
        let ai = f64::from(rng.random::<f64>() < spec.g0(&wi));
        let yi = f64::from(rng.random::<f64>() < spec.q0(ai, &wi));
        a.push(ai);
        y.push(yi);
    }
    ObservedDataset::new(w, a, y, OutcomeScale::identity())
}

fn noise_bias(a: f64, w: &[f64], scale: f64) -> f64 {
    1.5 * scale * (-0.2 + 1.5 * a + 0.2 * w[0] + w[1] - a * w[2] + w[3])
}

fn noise_sd(w: &[f64], scale: f64) -> f64 {
    0.8 * scale * (3.5 + 0.5 * w[0] + 0.15 * w[1] + 0.33 * w[2] * w[3] - w[3]).abs()
}

/// Initial predictions `(Q̄⁰(1,W), Q̄⁰(0,W))` equal to the truth plus
/// heteroskedastic logit-scale noise of order `n^rate`.
///
/// `Z` is drawn for every subject first, then `X`.
pub fn perturb_controlled_noise<R: Rng + ?Sized>(
    spec: &DgpSpec,
    w: &DMatrix<f64>,
    n: usize,
    rate: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(rate < 0.0) {
        return Err(Error::InvalidArgument(format!("rate must be negative, got {rate}")));
    }
    let m = w.nrows();
    let scale = (n as f64).powf(rate);
    let z: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
    let x: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
    let mut qbar1 = Vec::with_capacity(m);
    let mut qbar0 = Vec::with_capacity(m);
    for i in 0..m {
        let wi: Vec<f64> = w.row(i).iter().copied().collect();
        let b1 = noise_bias(1.0, &wi, scale) + z[i] * noise_sd(&wi, scale);
        let b0 = noise_bias(0.0, &wi, scale) + x[i] * noise_sd(&wi, scale);
        qbar1.push(expit(logit(spec.q0(1.0, &wi)) + b1));
        qbar0.push(expit(logit(spec.q0(0.0, &wi)) + 0.5 * b1 + 0.75f64.sqrt() * b0));
    }
    Ok((qbar1, qbar0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    pub ate0: f64,
    pub vte0: f64,
    pub mc_draws: usize,
    /// Monte-Carlo standard errors of `ate0` and `vte0`.
    pub mc_se_ate: f64,
    pub mc_se_vte: f64,
}

const TRUTH_CHUNK: usize = 1 << 16;

/// Mean and variance of `blip(W)` over `draws` covariate draws, with MC standard errors.
pub fn mc_blip_moments<D, B>(draw_w: D, blip: B, draws: usize, seed: u64) -> TrueParams
where
    D: Fn(&mut ChaCha8Rng) -> [f64; 4] + Sync,
    B: Fn(&[f64]) -> f64 + Sync,
{
    let chunks = draws.div_ceil(TRUTH_CHUNK);
    let blips: Vec<f64> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = TRUTH_CHUNK.min(draws - c * TRUTH_CHUNK);
            (0..len).map(|_| blip(&draw_w(&mut rng))).collect::<Vec<_>>().into_iter()
        })
        .collect();
    let n = draws as f64;
    let mean = blips.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for b in &blips {
        let c2 = (b - mean).powi(2);
        m2 += c2;
        m4 += c2 * c2;
    }
    m2 /= n;
    m4 /= n;
    TrueParams {
        ate0: mean,
        vte0: m2,
        mc_draws: draws,
        mc_se_ate: (m2 / n).sqrt(),
        mc_se_vte: ((m4 - m2 * m2).max(0.0) / n).sqrt(),
    }
}

/// True `(ATE, VTE)` of a design by Monte Carlo over its covariate law.
pub fn true_params(spec: &DgpSpec, draws: usize, seed: u64) -> Result<TrueParams> {
    spec.validate()?;
    if draws < MIN_TRUTH_DRAWS {
        return Err(Error::InvalidArgument(format!(
            "truth needs at least {MIN_TRUTH_DRAWS} draws, got {draws}"
        )));
    }
    Ok(mc_blip_moments(|rng| spec.draw_w(rng), |w| spec.blip0(w), draws, seed))
}
