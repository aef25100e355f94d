//! Parameter storage, Adam, seeded initialization and the finite-difference
//! harness used to verify every hand-written backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Hashgrid,
    Mlp,
    Saliency,
}

/// A trainable tensor with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T> {
    pub name: String,
    pub role: Role,
    pub shape: Vec<usize>,
    pub values: Vec<T>,
    pub grads: Vec<T>,
}

impl<T: Real> ParamTensor<T> {
    pub fn from_values(name: impl Into<String>, role: Role, shape: Vec<usize>, values: Vec<T>) -> Self {
        let len: usize = shape.iter().product();
        assert_eq!(len, values.len(), "shape does not match value count");
        Self {
            name: name.into(),
            role,
            shape,
            grads: vec![T::zero(); len],
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn cast<U: Real>(&self) -> ParamTensor<U> {
        ParamTensor {
            name: self.name.clone(),
            role: self.role,
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            grads: self.grads.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

pub fn zero_grads<'a, T: Real + 'a>(params: impl IntoIterator<Item = &'a mut ParamTensor<T>>) {
    for p in params {
        p.zero_grad();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-15,
        }
    }
}

/// First/second moment estimates for one [`ParamTensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
    pub cfg: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize, cfg: AdamConfig) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
            cfg,
        }
    }
}

/// One bias-corrected Adam update of `param` from its accumulated grads.
pub fn adam_step<T: Real>(param: &mut ParamTensor<T>, state: &mut AdamState<T>) -> Result<()> {
    adam_step_scaled(param, state, 1.0)
}

/// Adam with the learning rate multiplied by `lr_scale` (for decay schedules).
pub fn adam_step_scaled<T: Real>(
    param: &mut ParamTensor<T>,
    state: &mut AdamState<T>,
    lr_scale: f64,
) -> Result<()> {
    let n = param.values.len();
    if param.grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Config(format!(
            "adam state for '{}' sized {}/{} but tensor has {} values and {} grads",
            param.name,
            state.m.len(),
            state.v.len(),
            n,
            param.grads.len()
        )));
    }
    state.t += 1;
    let cfg = state.cfg;
    let t = state.t as i32;
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let one = T::one();
    let bc1 = T::lit(1.0 - cfg.beta1.powi(t));
    let bc2 = T::lit(1.0 - cfg.beta2.powi(t));
    let lr = T::lit(cfg.lr * lr_scale);
    let eps = T::lit(cfg.eps);
    for (((x, &g), m), v) in param
        .values
        .iter_mut()
        .zip(param.grads.iter())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *x -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitScheme {
    Uniform { low: f64, high: f64 },
    Ones,
    Zeros,
}

/// Deterministic tensor initialization from `(shape, scheme, seed)`.
pub fn seeded_init<T: Real>(
    name: impl Into<String>,
    role: Role,
    shape: Vec<usize>,
    scheme: InitScheme,
    seed: u64,
) -> Result<ParamTensor<T>> {
    let len: usize = shape.iter().product();
    let values = match scheme {
        InitScheme::Ones => vec![T::one(); len],
        InitScheme::Zeros => vec![T::zero(); len],
        InitScheme::Uniform { low, high } => {
            if !(low < high) {
                return Err(Error::Config(format!("uniform init needs low < high, got [{low}, {high}]")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..len).map(|_| T::lit(rng.gen_range(low..high))).collect()
        }
    };
    Ok(ParamTensor::from_values(name, role, shape, values))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Coordinates whose relative error exceeds this are flagged.
    pub tol: f64,
    /// Denominator floor: `|a - n| / max(|a|, |n|, floor)`. Keeps near-zero
    /// gradients from turning rounding noise into huge relative errors.
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordError {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub errors: Vec<CoordError>,
    pub max_rel_error: f64,
    pub flagged: Vec<usize>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.flagged.is_empty()
    }

    pub fn merge(mut self, other: GradCheckReport) -> GradCheckReport {
        let offset = self.errors.len();
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.flagged.extend(other.flagged.iter().map(|i| i + offset));
        self.errors.extend(other.errors.into_iter().map(|mut e| {
            e.index += offset;
            e
        }));
        self
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} coords, max rel error {:.3e}, {} flagged",
            self.errors.len(),
            self.max_rel_error,
            self.flagged.len()
        )
    }
}

/// Compares `analytic` against central differences of `f` over every
/// coordinate of `values`. `f` is evaluated with `values` perturbed in place;
/// the original value is restored after each coordinate.
pub fn finite_diff_check<T: Real>(
    mut f: impl FnMut(&[T]) -> T,
    values: &mut [T],
    analytic: &[T],
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(opts.h > 0.0) {
        return Err(Error::Config("finite difference step must be positive".into()));
    }
    if analytic.len() != values.len() {
        return Err(Error::Config(format!(
            "analytic gradient has {} entries for {} values",
            analytic.len(),
            values.len()
        )));
    }
    let h = T::lit(opts.h);
    let mut errors = Vec::with_capacity(values.len());
    let mut flagged = Vec::new();
    let mut max_rel = 0.0f64;
    for i in 0..values.len() {
        let orig = values[i];
        values[i] = orig + h;
        let fp = f(values);
        values[i] = orig - h;
        let fm = f(values);
        values[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite objective while perturbing coordinate {i}"
            )));
        }
        // step actually taken, after rounding orig +- h to T
        let span = ((orig + h) - (orig - h)).to_f64_lossy();
        let numeric = (fp.to_f64_lossy() - fm.to_f64_lossy()) / span;
        let a = analytic[i].to_f64_lossy();
        let denom = a.abs().max(numeric.abs()).max(opts.floor);
        let rel = if denom > 0.0 { (a - numeric).abs() / denom } else { 0.0 };
        if rel > opts.tol {
            flagged.push(i);
        }
        max_rel = max_rel.max(rel);
        errors.push(CoordError {
            index: i,
            analytic: a,
            numeric,
            rel_error: rel,
        });
    }
    Ok(GradCheckReport {
        errors,
        max_rel_error: max_rel,
        flagged,
    })
}
