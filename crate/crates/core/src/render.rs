//! Cameras, rays, stratified sampling and emission-absorption compositing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

pub type Mat4 = [[f64; 4]; 4];

pub const IDENTITY: Mat4 = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

/// Pinhole camera, Blender convention (-z forward, +y up).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    /// Camera-to-world, row-major.
    pub pose: Mat4,
}

impl Camera {
    pub fn from_angle_x(width: u32, height: u32, camera_angle_x: f64, pose: Mat4) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config("camera needs a nonzero image size".into()));
        }
        if !(camera_angle_x > 0.0 && camera_angle_x < std::f64::consts::PI) {
            return Err(Error::Config(format!("camera_angle_x {camera_angle_x} outside (0, pi)")));
        }
        let cam = Self {
            width,
            height,
            focal: 0.5 * width as f64 / (0.5 * camera_angle_x).tan(),
            pose,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn camera_angle_x(&self) -> f64 {
        2.0 * (0.5 * self.width as f64 / self.focal).atan()
    }

    /// Rotation block must be orthonormal within 1e-4.
    pub fn validate(&self) -> Result<()> {
        let r = |i: usize, j: usize| self.pose[i][j];
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..3).map(|k| r(k, a) * r(k, b)).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-4 || !dot.is_finite() {
                    return Err(Error::Load(format!(
                        "camera pose rotation is not orthonormal (column {a}.{b} = {dot})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn origin(&self) -> [f64; 3] {
        [self.pose[0][3], self.pose[1][3], self.pose[2][3]]
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Ray through the center of pixel `(u, v)` (column, row).
    pub fn ray(&self, u: u32, v: u32, near: f64, far: f64) -> Ray {
        let cx = 0.5 * self.width as f64;
        let cy = 0.5 * self.height as f64;
        let local = [
            (u as f64 + 0.5 - cx) / self.focal,
            -(v as f64 + 0.5 - cy) / self.focal,
            -1.0,
        ];
        let mut dir = [0.0; 3];
        for (i, d) in dir.iter_mut().enumerate() {
            *d = (0..3).map(|k| self.pose[i][k] * local[k]).sum();
        }
        Ray {
            origin: self.origin(),
            dir: normalize(dir),
            near,
            far,
        }
    }
}

pub fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n > 0.0 {
        v.map(|x| x / n)
    } else {
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub dir: [f64; 3],
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> [f64; 3] {
        [
            self.origin[0] + t * self.dir[0],
            self.origin[1] + t * self.dir[1],
            self.origin[2] + t * self.dir[2],
        ]
    }

    /// Narrows `[near, far]` to the part inside an axis-aligned box. `None`
    /// when the ray misses it.
    pub fn clip_to_box(&self, lo: [f64; 3], hi: [f64; 3]) -> Option<Ray> {
        let mut t0 = self.near;
        let mut t1 = self.far;
        for a in 0..3 {
            let d = self.dir[a];
            if d.abs() < 1e-12 {
                if self.origin[a] < lo[a] || self.origin[a] > hi[a] {
                    return None;
                }
                continue;
            }
            let ta = (lo[a] - self.origin[a]) / d;
            let tb = (hi[a] - self.origin[a]) / d;
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
        (t1 > t0).then_some(Ray { near: t0, far: t1, ..*self })
    }
}

pub fn rays_from_camera(cam: &Camera, pixels: &[(u32, u32)], near: f64, far: f64) -> Result<Vec<Ray>> {
    pixels
        .iter()
        .map(|&(u, v)| {
            if u >= cam.width || v >= cam.height {
                Err(Error::Usage(format!("pixel ({u}, {v}) outside {}x{} image", cam.width, cam.height)))
            } else {
                Ok(cam.ray(u, v, near, far))
            }
        })
        .collect()
}

/// Sample distances along one ray and the interval each one represents.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySamples {
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
}

/// `n` samples, one per equal-width bin of `[near, far]`: the bin midpoint, or
/// a uniform point in the bin when `jitter` is on.
pub fn stratified_samples<R: Rng + ?Sized>(ray: &Ray, n: usize, jitter: bool, rng: &mut R) -> RaySamples {
    let n = n.max(1);
    let step = (ray.far - ray.near) / n as f64;
    let t: Vec<f64> = (0..n)
        .map(|k| {
            let off = if jitter { rng.gen::<f64>() * step } else { 0.5 * step };
            ray.near + k as f64 * step + off
        })
        .collect();
    let delta = (0..n)
        .map(|k| if k + 1 < n { t[k + 1] - t[k] } else { ray.far - t[k] })
        .collect();
    RaySamples { t, delta }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Composite<T> {
    pub rgb: [T; 3],
    pub opacity: T,
}

/// `alpha_i = 1 - exp(-sigma_i delta_i)`, `T_i = prod_{j<i} (1 - alpha_j)`,
/// `color = sum T_i alpha_i c_i + T_end * background`.
pub fn composite<T: Real>(sigma: &[T], rgb: &[T], delta: &[T], background: [T; 3]) -> Result<Composite<T>> {
    let mut trans = T::one();
    let mut out = [T::zero(); 3];
    for i in 0..sigma.len() {
        let s = sigma[i];
        if !s.is_finite() {
            return Err(Error::Numerical(format!("non-finite density {s:?} at sample {i}")));
        }
        let alpha = T::one() - (-s * delta[i]).exp();
        let w = trans * alpha;
        for c in 0..3 {
            out[c] += w * rgb[i * 3 + c];
        }
        trans *= T::one() - alpha;
    }
    for c in 0..3 {
        out[c] += trans * background[c];
    }
    Ok(Composite {
        rgb: out,
        opacity: T::one() - trans,
    })
}

/// Per-sample compositing weights `T_i alpha_i` and the final transmittance.
pub fn composite_weights<T: Real>(sigma: &[T], delta: &[T]) -> (Vec<T>, T) {
    let mut trans = T::one();
    let w = sigma
        .iter()
        .zip(delta)
        .map(|(s, d)| {
            let alpha = T::one() - (-*s * *d).exp();
            let w = trans * alpha;
            trans *= T::one() - alpha;
            w
        })
        .collect();
    (w, trans)
}

/// Adjoint of [`composite`] for an upstream pixel gradient.
///
/// `dc_i = T_i alpha_i * dpixel`,
/// `dsigma_k = delta_k * dpixel . (T_{k+1} c_k - S_k)` with `S_k` the color
/// contributed by everything behind sample `k` (background included).
pub fn composite_backward<T: Real>(
    sigma: &[T],
    rgb: &[T],
    delta: &[T],
    background: [T; 3],
    dpixel: [T; 3],
    dsigma: &mut [T],
    drgb: &mut [T],
) {
    let n = sigma.len();
    // forward pass for T_i (before) and alpha_i
    let mut trans = Vec::with_capacity(n + 1);
    let mut alpha = Vec::with_capacity(n);
    let mut t = T::one();
    for i in 0..n {
        trans.push(t);
        let a = T::one() - (-sigma[i] * delta[i]).exp();
        alpha.push(a);
        t *= T::one() - a;
    }
    trans.push(t);
    let mut suffix = [t * background[0], t * background[1], t * background[2]];
    for k in (0..n).rev() {
        let w = trans[k] * alpha[k];
        let mut acc = T::zero();
        for c in 0..3 {
            let col = rgb[k * 3 + c];
            drgb[k * 3 + c] = w * dpixel[c];
            acc += dpixel[c] * (trans[k + 1] * col - suffix[c]);
            suffix[c] += w * col;
        }
        dsigma[k] = delta[k] * acc;
    }
}

/// Linear RGB image, row-major, 3 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width as usize * height as usize * 3],
        }
    }

    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn pixel(&self, u: u32, v: u32) -> [f32; 3] {
        let i = (v as usize * self.width as usize + u as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, u: u32, v: u32, rgb: [f32; 3]) {
        let i = (v as usize * self.width as usize + u as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

pub fn mse_loss<T: Real>(rendered: &[T], target: &[T]) -> Result<T> {
    if rendered.len() != target.len() {
        return Err(Error::Usage(format!(
            "image sizes differ: {} vs {} values",
            rendered.len(),
            target.len()
        )));
    }
    if rendered.is_empty() {
        return Ok(T::zero());
    }
    let sum: T = rendered.iter().zip(target).map(|(a, b)| (*a - *b) * (*a - *b)).sum();
    Ok(sum / T::lit(rendered.len() as f64))
}

pub fn image_mse(rendered: &Image, target: &Image) -> Result<f64> {
    if (rendered.width, rendered.height) != (target.width, target.height) {
        return Err(Error::Usage(format!(
            "image sizes differ: {}x{} vs {}x{}",
            rendered.width, rendered.height, target.width, target.height
        )));
    }
    let a: Vec<f64> = rendered.data.iter().map(|v| *v as f64).collect();
    let b: Vec<f64> = target.data.iter().map(|v| *v as f64).collect();
    mse_loss(&a, &b)
}

/// `-10 log10(mse)`; zero error maps to `+inf`.
pub fn psnr(mse: f64) -> Result<f64> {
    if mse < 0.0 || mse.is_nan() {
        return Err(Error::Usage(format!("mse must be non-negative, got {mse}")));
    }
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}
