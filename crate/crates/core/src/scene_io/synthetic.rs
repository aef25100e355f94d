//! Analytic scenes: closed-form density and color fields, a dense-quadrature
//! reference renderer and a camera-sphere dataset generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Frame, Split};
use crate::error::{Error, Result};
use crate::hash_encoding::{hash_index, HashGridConfig};
use crate::model::UnitCubeMap;
use crate::render::{composite, normalize, stratified_samples, Camera, Image, Mat4};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Empty,
    SolidSphere { radius: f64 },
    HollowSphere { radius: f64, thickness: f64 },
    Box { half_extent: [f64; 3] },
    TwoBlob { centers: [[f64; 3]; 2], radius: f64 },
}

impl Shape {
    /// Signed distance to the occupied region (negative inside).
    pub fn signed_distance(&self, x: [f64; 3]) -> f64 {
        let len = |v: [f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        match *self {
            Shape::Empty => f64::INFINITY,
            Shape::SolidSphere { radius } => len(x) - radius,
            Shape::HollowSphere { radius, thickness } => (len(x) - (radius - 0.5 * thickness)).abs() - 0.5 * thickness,
            Shape::Box { half_extent } => {
                let q = [0, 1, 2].map(|a| x[a].abs() - half_extent[a]);
                let outside = len(q.map(|v| v.max(0.0)));
                outside + q[0].max(q[1]).max(q[2]).min(0.0)
            }
            Shape::TwoBlob { centers, radius } => centers
                .iter()
                .map(|c| len([x[0] - c[0], x[1] - c[1], x[2] - c[2]]) - radius)
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Radius of a centered ball containing the occupied region.
    pub fn bounding_radius(&self) -> f64 {
        let len = |v: [f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        match *self {
            Shape::Empty => 0.0,
            Shape::SolidSphere { radius } | Shape::HollowSphere { radius, .. } => radius,
            Shape::Box { half_extent } => len(half_extent),
            Shape::TwoBlob { centers, radius } => len(centers[0]).max(len(centers[1])) + radius,
        }
    }
}

/// Ring of cameras on a sphere around the origin, all looking at it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraRig {
    pub distance: f64,
    pub camera_angle_x: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            distance: 4.0,
            camera_angle_x: 0.6911112070083618,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub shape: Shape,
    /// Peak density inside the shape.
    pub density: f64,
    /// Width of the sigmoid edge, world units.
    pub softness: f64,
    pub color: [f64; 3],
    /// Amplitude of the outward-normal color variation.
    pub tint: f64,
    pub rig: CameraRig,
    pub background: [f32; 3],
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::hollow_sphere()
    }
}

impl SceneSpec {
    pub fn hollow_sphere() -> Self {
        Self {
            shape: Shape::HollowSphere {
                radius: 0.75,
                thickness: 0.15,
            },
            density: 150.0,
            softness: 0.01,
            color: [0.75, 0.45, 0.3],
            tint: 0.2,
            rig: CameraRig::default(),
            background: [1.0, 1.0, 1.0],
        }
    }

    pub fn solid_sphere() -> Self {
        Self {
            shape: Shape::SolidSphere { radius: 0.75 },
            ..Self::hollow_sphere()
        }
    }

    pub fn empty() -> Self {
        Self {
            shape: Shape::Empty,
            ..Self::hollow_sphere()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "hollow_sphere" => Ok(Self::hollow_sphere()),
            "solid_sphere" => Ok(Self::solid_sphere()),
            "empty" => Ok(Self::empty()),
            "box" => Ok(Self {
                shape: Shape::Box {
                    half_extent: [0.5, 0.4, 0.3],
                },
                ..Self::hollow_sphere()
            }),
            "two_blob" => Ok(Self {
                shape: Shape::TwoBlob {
                    centers: [[-0.5, 0.0, 0.0], [0.5, 0.0, 0.0]],
                    radius: 0.3,
                },
                ..Self::hollow_sphere()
            }),
            other => Err(Error::Usage(format!(
                "unknown scene '{other}' (hollow_sphere, solid_sphere, empty, box, two_blob)"
            ))),
        }
    }

    pub fn density(&self, x: [f64; 3]) -> f64 {
        let d = self.shape.signed_distance(x);
        if d.is_infinite() {
            return 0.0;
        }
        self.density / (1.0 + (d / self.softness).exp())
    }

    pub fn color(&self, x: [f64; 3]) -> [f64; 3] {
        let n = normalize(x);
        [0, 1, 2].map(|c| (self.color[c] + self.tint * n[c]).clamp(0.0, 1.0))
    }

    /// Ball outside which the density is negligible.
    pub fn support_radius(&self) -> f64 {
        self.shape.bounding_radius() + 40.0 * self.softness
    }
}

fn ray_ball(origin: [f64; 3], dir: [f64; 3], radius: f64) -> Option<(f64, f64)> {
    let b: f64 = (0..3).map(|a| origin[a] * dir[a]).sum();
    let c: f64 = (0..3).map(|a| origin[a] * origin[a]).sum::<f64>() - radius * radius;
    let disc = b * b - c;
    (disc > 0.0).then(|| (-b - disc.sqrt(), -b + disc.sqrt()))
}

/// Reference image by dense midpoint quadrature of the analytic fields over
/// the part of each ray inside the scene's support, composited with the same
/// routine as the learned renderer.
pub fn oracle_render(scene: &SceneSpec, cam: &Camera, n_dense: usize, near: f64, far: f64) -> Result<Image> {
    if n_dense < 256 {
        return Err(Error::Usage(format!("oracle needs at least 256 samples per ray, got {n_dense}")));
    }
    let support = scene.support_radius();
    let bg = scene.background.map(|c| c as f64);
    let rows: Vec<Result<Vec<f32>>> = (0..cam.height)
        .into_par_iter()
        .map(|v| {
            let mut row = Vec::with_capacity(cam.width as usize * 3);
            let mut sigma = vec![0.0; n_dense];
            let mut rgb = vec![0.0; n_dense * 3];
            for u in 0..cam.width {
                let mut ray = cam.ray(u, v, near, far);
                let px = match ray_ball(ray.origin, ray.dir, support) {
                    Some((t0, t1)) if t1.min(far) > t0.max(near) => {
                        ray.near = t0.max(near);
                        ray.far = t1.min(far);
                        let s = stratified_samples(&ray, n_dense, false, &mut rand::rngs::mock::StepRng::new(0, 0));
                        for (i, t) in s.t.iter().enumerate() {
                            let x = ray.at(*t);
                            sigma[i] = scene.density(x);
                            rgb[i * 3..i * 3 + 3].copy_from_slice(&scene.color(x));
                        }
                        composite(&sigma, &rgb, &s.delta, bg)?.rgb
                    }
                    _ => bg,
                };
                row.extend(px.map(|c| c as f32));
            }
            Ok(row)
        })
        .collect();
    let mut img = Image::new(cam.width, cam.height);
    img.data.clear();
    for r in rows {
        img.data.extend(r?);
    }
    Ok(img)
}

/// Camera-to-world pose at `eye` looking at the origin, world +z up.
pub fn look_at(eye: [f64; 3]) -> Mat4 {
    let back = normalize(eye);
    let up = if back[2].abs() > 0.999 { [0.0, 1.0, 0.0] } else { [0.0, 0.0, 1.0] };
    let cross = |a: [f64; 3], b: [f64; 3]| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    let right = normalize(cross(up, back));
    let up = cross(back, right);
    let mut m = crate::render::IDENTITY;
    for r in 0..3 {
        m[r][0] = right[r];
        m[r][1] = up[r];
        m[r][2] = back[r];
        m[r][3] = eye[r];
    }
    m
}

/// `n` eyes spread over a sphere (Fibonacci lattice) with a seeded azimuth.
pub fn camera_eyes(n: usize, distance: f64, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let az = offset + golden * i as f64;
            [distance * r * az.cos(), distance * r * az.sin(), distance * z]
        })
        .collect()
}

pub const GEN_DENSE_SAMPLES: usize = 512;

/// Renders `n_views` oracle images of `scene` from seeded viewpoints.
pub fn gen_synthetic(scene: &SceneSpec, split: Split, n_views: usize, resolution: u32, seed: u64) -> Result<Dataset> {
    let near = super::dataset::DEFAULT_NEAR;
    let far = super::dataset::DEFAULT_FAR;
    let mut frames = Vec::with_capacity(n_views);
    for (i, eye) in camera_eyes(n_views, scene.rig.distance, seed).into_iter().enumerate() {
        let camera = Camera::from_angle_x(resolution, resolution, scene.rig.camera_angle_x, look_at(eye))?;
        let image = oracle_render(scene, &camera, GEN_DENSE_SAMPLES, near, far)?;
        frames.push(Frame {
            file_path: format!("./{split}/r_{i}"),
            image,
            camera,
        });
    }
    Ok(Dataset {
        split,
        frames,
        map: UnitCubeMap::default(),
        background: scene.background,
        near,
        far,
    })
}

/// Two lattice corners of a single hashed level that share one table entry,
/// with saliency nodes placed exactly on the level's corners.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionFixture {
    pub hash: HashGridConfig,
    pub saliency_resolution: usize,
    pub voxels: [[u32; 3]; 2],
    pub bucket: usize,
    /// Target feature of the visible blob; the hidden blob's target is zero.
    pub target: Vec<f64>,
}

impl CollisionFixture {
    /// Single level at resolution 15 with a 2^6 table, so saliency nodes of a
    /// 16^3 grid coincide with the level's corners. Searches for the first
    /// colliding pair at least `min_separation` apart on some axis.
    pub fn new(min_separation: u32) -> Result<Self> {
        let hash = HashGridConfig {
            levels: 1,
            feature_dim: 2,
            log2_table_size: 6,
            base_res: 15,
            max_res: 15,
        };
        let n = hash.base_res;
        let size = hash.table_size();
        let mut seen: Vec<Option<[u32; 3]>> = vec![None; size];
        for z in 1..n {
            for y in 1..n {
                for x in 1..n {
                    let b = hash_index([x, y, z], size);
                    match seen[b] {
                        Some(prev)
                            if (0..3).any(|a| prev[a].abs_diff([x, y, z][a]) >= min_separation) =>
                        {
                            return Ok(Self {
                                hash,
                                saliency_resolution: n as usize + 1,
                                voxels: [prev, [x, y, z]],
                                bucket: b,
                                target: vec![0.8, -0.5],
                            });
                        }
                        Some(_) => {}
                        None => seen[b] = Some([x, y, z]),
                    }
                }
            }
        }
        Err(Error::Config("no colliding corner pair found".into()))
    }

    /// Unit-cube positions of the two corners.
    pub fn positions(&self) -> [[f64; 3]; 2] {
        let n = self.hash.base_res as f64;
        self.voxels.map(|v| v.map(|c| c as f64 / n))
    }
}
