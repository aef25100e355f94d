//! Density/color MLP decoder with the zero-skipping gate.
//!
//! Density net: `v -> H -> H -> 1 + G` (ReLU hidden, no hidden biases). The
//! first output is the raw density, the rest are geometry features.
//! Color net: `[geo, SH(dir)] -> H -> H -> 3` with a sigmoid output.
//! The gate multiplies `softplus(raw)` only.

use serde::{Deserialize, Serialize};

use crate::diff_optim::{seeded_init, InitScheme, ParamTensor, Role};
use crate::error::{Error, Result};
use crate::real::{sigmoid, softplus, Real};

pub const SH_COEFFS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderLayout {
    pub hidden: usize,
    pub geo: usize,
}

impl Default for DecoderLayout {
    fn default() -> Self {
        Self { hidden: 64, geo: 15 }
    }
}

impl DecoderLayout {
    pub fn shapes(&self, input_dim: usize) -> [(&'static str, Vec<usize>); 8] {
        let h = self.hidden;
        let out = 1 + self.geo;
        let cin = self.geo + SH_COEFFS;
        [
            ("density.0", vec![h, input_dim]),
            ("density.1", vec![h, h]),
            ("density.2", vec![out, h]),
            ("density.2.bias", vec![out]),
            ("color.0", vec![h, cin]),
            ("color.1", vec![h, h]),
            ("color.2", vec![3, h]),
            ("color.2.bias", vec![3]),
        ]
    }

    pub fn param_count(&self, input_dim: usize) -> usize {
        self.shapes(input_dim)
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Real spherical harmonics through degree 3.
pub fn sh_encode<T: Real>(d: [T; 3]) -> [T; SH_COEFFS] {
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let (x, y, z) = if n > T::zero() {
        (d[0] / n, d[1] / n, d[2] / n)
    } else {
        (T::zero(), T::zero(), T::one())
    };
    let c = |v: f64| T::lit(v);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        c(0.282_094_791_773_878_14),
        c(-0.488_602_511_902_919_9) * y,
        c(0.488_602_511_902_919_9) * z,
        c(-0.488_602_511_902_919_9) * x,
        c(1.092_548_430_592_079_2) * x * y,
        c(-1.092_548_430_592_079_2) * y * z,
        c(0.946_174_695_757_56) * zz - c(0.315_391_565_252_52),
        c(-1.092_548_430_592_079_2) * x * z,
        c(0.546_274_215_296_039_6) * (xx - yy),
        c(0.590_043_589_926_643_5) * y * (c(-3.0) * xx + yy),
        c(2.890_611_442_640_554) * x * y * z,
        c(0.457_045_799_464_465_7) * y * (c(1.0) - c(5.0) * zz),
        c(0.373_176_332_590_115_4) * z * (c(5.0) * zz - c(3.0)),
        c(0.457_045_799_464_465_7) * x * (c(1.0) - c(5.0) * zz),
        c(1.445_305_721_320_277) * z * (xx - yy),
        c(0.590_043_589_926_643_5) * x * (-xx + c(3.0) * yy),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    None,
    Hard,
    Soft,
}

impl std::str::FromStr for GateMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(GateMode::None),
            "hard" => Ok(GateMode::Hard),
            "soft" => Ok(GateMode::Soft),
            other => Err(Error::Usage(format!("unknown gate mode '{other}' (none|hard|soft)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    pub mode: GateMode,
    /// Fixed steepness; when unset the epoch schedule applies.
    pub alpha: Option<f64>,
    pub epoch_threshold: u64,
    pub alpha_early: f64,
    pub alpha_late: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            mode: GateMode::Soft,
            alpha: None,
            epoch_threshold: 1000,
            alpha_early: 1e4,
            alpha_late: 1e5,
        }
    }
}

impl GateConfig {
    /// Early steepness strictly below the threshold epoch, late from it on.
    pub fn alpha_schedule(&self, epoch: u64) -> f64 {
        if let Some(a) = self.alpha {
            return a;
        }
        if epoch < self.epoch_threshold {
            self.alpha_early
        } else {
            self.alpha_late
        }
    }
}

/// `tanh(alpha * |v|)`.
pub fn soft_gate<T: Real>(v: &[T], alpha: T) -> T {
    (alpha * l2_norm(v)).tanh()
}

pub fn hard_gate<T: Real>(v: &[T]) -> T {
    if v.iter().all(|x| *x == T::zero()) {
        T::zero()
    } else {
        T::one()
    }
}

#[inline]
fn l2_norm<T: Real>(v: &[T]) -> T {
    v.iter().map(|x| *x * *x).sum::<T>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder<T> {
    pub layout: DecoderLayout,
    pub input_dim: usize,
    /// Layer order: density.0, density.1, density.2, density.2.bias,
    /// color.0, color.1, color.2, color.2.bias.
    pub params: Vec<ParamTensor<T>>,
}

/// Everything the backward pass needs from one batched forward.
#[derive(Debug, Clone, Default)]
pub struct DecoderCache<T> {
    pub rows: usize,
    pub v: Vec<T>,
    pub h1: Vec<T>,
    pub h2: Vec<T>,
    pub out: Vec<T>,
    pub norm: Vec<T>,
    pub gate: Vec<T>,
    pub density: Vec<T>,
    pub cin: Vec<T>,
    pub k1: Vec<T>,
    pub k2: Vec<T>,
    pub sigma: Vec<T>,
    pub rgb: Vec<T>,
    pub mode: Option<GateMode>,
    pub alpha: T,
}

#[inline]
fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// `out (N x o) = x (N x i) * W^T` with `W` stored `o x i`.
fn linear<T: Real>(x: &[T], rows: usize, w: &[T], wi: usize, wo: usize, out: &mut Vec<T>) {
    out.clear();
    out.resize(rows * wo, T::zero());
    T::gemm(rows, wi, wo, T::one(), x, wi as isize, 1, w, 1, wi as isize, T::zero(), out, wo as isize, 1);
}

/// `dW (o x i) += dy^T (o x N) * x (N x i)`.
fn accumulate_weight_grad<T: Real>(dy: &[T], x: &[T], rows: usize, wi: usize, wo: usize, dw: &mut [T]) {
    T::gemm(wo, rows, wi, T::one(), dy, 1, wo as isize, x, wi as isize, 1, T::one(), dw, wi as isize, 1);
}

/// `dx (N x i) = dy (N x o) * W (o x i)`.
fn input_grad<T: Real>(dy: &[T], rows: usize, w: &[T], wi: usize, wo: usize, dx: &mut Vec<T>) {
    dx.clear();
    dx.resize(rows * wi, T::zero());
    T::gemm(rows, wo, wi, T::one(), dy, wo as isize, 1, w, wi as isize, 1, T::zero(), dx, wi as isize, 1);
}

fn relu_mask<T: Real>(grad: &mut [T], act: &[T]) {
    for (g, a) in grad.iter_mut().zip(act) {
        if *a <= T::zero() {
            *g = T::zero();
        }
    }
}

impl<T: Real> Decoder<T> {
    /// Weights from uniform(-sqrt(1/fan_in), sqrt(1/fan_in)); biases zero.
    pub fn new(layout: DecoderLayout, input_dim: usize, seed: u64) -> Result<Self> {
        if layout.hidden == 0 || input_dim == 0 {
            return Err(Error::Config("decoder widths must be positive".into()));
        }
        let params = layout
            .shapes(input_dim)
            .into_iter()
            .enumerate()
            .map(|(i, (name, shape))| {
                let scheme = if shape.len() == 1 {
                    InitScheme::Zeros
                } else {
                    let bound = (1.0 / shape[1] as f64).sqrt();
                    InitScheme::Uniform { low: -bound, high: bound }
                };
                seeded_init(name, Role::Mlp, shape, scheme, seed.wrapping_add(i as u64 * 0x9E37_79B9))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layout,
            input_dim,
            params,
        })
    }

    pub fn from_params(layout: DecoderLayout, input_dim: usize, params: Vec<ParamTensor<T>>) -> Result<Self> {
        let shapes = layout.shapes(input_dim);
        if params.len() != shapes.len() || params.iter().zip(&shapes).any(|(p, (_, s))| &p.shape != s) {
            return Err(Error::Config("decoder parameter shapes do not match layout".into()));
        }
        Ok(Self {
            layout,
            input_dim,
            params,
        })
    }

    /// Batched forward. `v` is `N x input_dim`, `sh` is `N x 16`.
    /// Results land in `cache.sigma` (N) and `cache.rgb` (N x 3).
    pub fn forward(&self, v: &[T], sh: &[T], rows: usize, mode: GateMode, alpha: T, cache: &mut DecoderCache<T>) {
        let h = self.layout.hidden;
        let g = self.layout.geo;
        let out_dim = 1 + g;
        let cin_dim = g + SH_COEFFS;
        let ind = self.input_dim;
        debug_assert_eq!(v.len(), rows * ind);
        debug_assert_eq!(sh.len(), rows * SH_COEFFS);
        let p = &self.params;

        cache.rows = rows;
        cache.mode = Some(mode);
        cache.alpha = alpha;
        cache.v.clear();
        cache.v.extend_from_slice(v);

        linear(v, rows, &p[0].values, ind, h, &mut cache.h1);
        relu_inplace(&mut cache.h1);
        linear(&cache.h1, rows, &p[1].values, h, h, &mut cache.h2);
        relu_inplace(&mut cache.h2);
        linear(&cache.h2, rows, &p[2].values, h, out_dim, &mut cache.out);
        for row in cache.out.chunks_exact_mut(out_dim) {
            for (o, b) in row.iter_mut().zip(&p[3].values) {
                *o += *b;
            }
        }

        cache.norm.clear();
        cache.gate.clear();
        cache.density.clear();
        cache.sigma.clear();
        for j in 0..rows {
            let vj = &v[j * ind..(j + 1) * ind];
            let norm = l2_norm(vj);
            let gate = match mode {
                GateMode::None => T::one(),
                GateMode::Hard => hard_gate(vj),
                GateMode::Soft => (alpha * norm).tanh(),
            };
            let density = softplus(cache.out[j * out_dim]);
            cache.norm.push(norm);
            cache.gate.push(gate);
            cache.density.push(density);
            cache.sigma.push(gate * density);
        }

        cache.cin.clear();
        cache.cin.reserve(rows * cin_dim);
        for j in 0..rows {
            cache.cin.extend_from_slice(&cache.out[j * out_dim + 1..(j + 1) * out_dim]);
            cache.cin.extend_from_slice(&sh[j * SH_COEFFS..(j + 1) * SH_COEFFS]);
        }
        linear(&cache.cin, rows, &p[4].values, cin_dim, h, &mut cache.k1);
        relu_inplace(&mut cache.k1);
        linear(&cache.k1, rows, &p[5].values, h, h, &mut cache.k2);
        relu_inplace(&mut cache.k2);
        linear(&cache.k2, rows, &p[6].values, h, 3, &mut cache.rgb);
        for row in cache.rgb.chunks_exact_mut(3) {
            for (o, b) in row.iter_mut().zip(&p[7].values) {
                *o = sigmoid(*o + *b);
            }
        }
    }

    /// Accumulates weight gradients and writes `dL/dv` (N x input_dim) into `dv`.
    pub fn backward(&mut self, cache: &DecoderCache<T>, dsigma: &[T], drgb: &[T], dv: &mut Vec<T>) {
        let rows = cache.rows;
        let h = self.layout.hidden;
        let g = self.layout.geo;
        let out_dim = 1 + g;
        let cin_dim = g + SH_COEFFS;
        let ind = self.input_dim;
        let mode = cache.mode.expect("backward before forward");
        let p = &mut self.params;

        // color branch
        let mut dz: Vec<T> = cache
            .rgb
            .iter()
            .zip(drgb)
            .map(|(c, d)| *d * *c * (T::one() - *c))
            .collect();
        accumulate_weight_grad(&dz, &cache.k2, rows, h, 3, &mut p[6].grads);
        for row in dz.chunks_exact(3) {
            for (b, d) in p[7].grads.iter_mut().zip(row) {
                *b += *d;
            }
        }
        let mut dk2 = Vec::new();
        input_grad(&dz, rows, &p[6].values, h, 3, &mut dk2);
        relu_mask(&mut dk2, &cache.k2);
        accumulate_weight_grad(&dk2, &cache.k1, rows, h, h, &mut p[5].grads);
        let mut dk1 = Vec::new();
        input_grad(&dk2, rows, &p[5].values, h, h, &mut dk1);
        relu_mask(&mut dk1, &cache.k1);
        accumulate_weight_grad(&dk1, &cache.cin, rows, cin_dim, h, &mut p[4].grads);
        let mut dcin = Vec::new();
        input_grad(&dk1, rows, &p[4].values, cin_dim, h, &mut dcin);

        // density output: raw density then geometry features
        dz.clear();
        dz.resize(rows * out_dim, T::zero());
        dv.clear();
        dv.resize(rows * ind, T::zero());
        for j in 0..rows {
            let ds = dsigma[j];
            let raw = cache.out[j * out_dim];
            dz[j * out_dim] = ds * cache.gate[j] * sigmoid(raw);
            dz[j * out_dim + 1..(j + 1) * out_dim].copy_from_slice(&dcin[j * cin_dim..j * cin_dim + g]);
            if mode == GateMode::Soft && cache.norm[j] > T::zero() && ds != T::zero() {
                let gate = cache.gate[j];
                let coef = ds * cache.density[j] * cache.alpha * (T::one() - gate * gate) / cache.norm[j];
                for (d, x) in dv[j * ind..(j + 1) * ind].iter_mut().zip(&cache.v[j * ind..(j + 1) * ind]) {
                    *d = coef * *x;
                }
            }
        }
        accumulate_weight_grad(&dz, &cache.h2, rows, h, out_dim, &mut p[2].grads);
        for row in dz.chunks_exact(out_dim) {
            for (b, d) in p[3].grads.iter_mut().zip(row) {
                *b += *d;
            }
        }
        let mut dh2 = Vec::new();
        input_grad(&dz, rows, &p[2].values, h, out_dim, &mut dh2);
        relu_mask(&mut dh2, &cache.h2);
        accumulate_weight_grad(&dh2, &cache.h1, rows, h, h, &mut p[1].grads);
        let mut dh1 = Vec::new();
        input_grad(&dh2, rows, &p[1].values, h, h, &mut dh1);
        relu_mask(&mut dh1, &cache.h1);
        accumulate_weight_grad(&dh1, &cache.v, rows, ind, h, &mut p[0].grads);
        // dv += dh1 * W0
        T::gemm(rows, h, ind, T::one(), &dh1, h as isize, 1, &p[0].values, ind as isize, 1, T::one(), dv, ind as isize, 1);
    }

    /// Single-sample convenience wrapper: `(sigma, rgb)`.
    pub fn gated_density(&self, v: &[T], dir: [T; 3], mode: GateMode, alpha: T) -> Result<(T, [T; 3])> {
        let sh = sh_encode(dir);
        let mut cache = DecoderCache::default();
        self.forward(v, &sh, 1, mode, alpha, &mut cache);
        let sigma = cache.sigma[0];
        let rgb = [cache.rgb[0], cache.rgb[1], cache.rgb[2]];
        if !sigma.is_finite() || rgb.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numerical(format!(
                "decoder produced sigma={sigma:?} rgb={rgb:?} for |v|={:?}",
                l2_norm(v)
            )));
        }
        Ok((sigma, rgb))
    }
}
