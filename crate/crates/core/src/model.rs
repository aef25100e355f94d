//! The full radiance field: hash encoding, saliency weighting and the gated
//! decoder, plus batched ray marching with an exact backward pass.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{sh_encode, Decoder, DecoderCache, DecoderLayout, GateConfig, GateMode, SH_COEFFS};
use crate::diff_optim::ParamTensor;
use crate::error::{Error, Result};
use crate::hash_encoding::{param_count, CornerReads, HashGrid, HashGridConfig, ParamCount};
use crate::real::Real;
use crate::render::{composite, composite_backward, stratified_samples, Camera, Image, Ray};
use crate::saliency::{SaliencyGrid, SaliencyReads};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaliencyConfig {
    pub enabled: bool,
    pub resolution: usize,
    /// Inference only: samples with `p` below this skip the decoder and get
    /// zero density.
    pub skip_threshold: Option<f64>,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            resolution: 64,
            skip_threshold: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hashgrid: HashGridConfig,
    pub decoder: DecoderLayout,
    pub saliency: SaliencyConfig,
    pub gate: GateConfig,
}

impl ModelConfig {
    pub fn param_count(&self) -> Result<ParamCount> {
        param_count(
            &self.hashgrid,
            &self.decoder,
            self.saliency.enabled.then_some(self.saliency.resolution),
        )
    }
}

/// Affine map from world space to the unit cube: `u = (w - center) * scale + 0.5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitCubeMap {
    pub center: [f64; 3],
    pub scale: f64,
}

impl Default for UnitCubeMap {
    /// Bounding radius 1.5 mapped into the cube with a 5% margin.
    fn default() -> Self {
        Self::from_radius([0.0; 3], 1.5, 0.05)
    }
}

impl UnitCubeMap {
    pub fn from_radius(center: [f64; 3], radius: f64, margin: f64) -> Self {
        Self {
            center,
            scale: (0.5 - margin) / radius,
        }
    }

    pub fn to_unit(&self, w: [f64; 3]) -> [f64; 3] {
        [
            (w[0] - self.center[0]) * self.scale + 0.5,
            (w[1] - self.center[1]) * self.scale + 0.5,
            (w[2] - self.center[2]) * self.scale + 0.5,
        ]
    }

    pub fn to_world(&self, u: [f64; 3]) -> [f64; 3] {
        [
            (u[0] - 0.5) / self.scale + self.center[0],
            (u[1] - 0.5) / self.scale + self.center[1],
            (u[2] - 0.5) / self.scale + self.center[2],
        ]
    }

    /// World-space box that maps onto `[0,1]^3`.
    pub fn world_box(&self) -> ([f64; 3], [f64; 3]) {
        (self.to_world([0.0; 3]), self.to_world([1.0; 3]))
    }
}

/// Samples of a set of rays, flattened.
#[derive(Debug, Clone, Default)]
pub struct MarchPlan<T> {
    /// `(first sample, sample count)` per ray.
    pub ranges: Vec<(usize, usize)>,
    pub positions: Vec<[T; 3]>,
    pub delta: Vec<T>,
    /// Per-ray SH coefficients of the view direction.
    pub sh: Vec<[T; SH_COEFFS]>,
}

impl<T: Real> MarchPlan<T> {
    pub fn sample_count(&self) -> usize {
        self.positions.len()
    }

    pub fn ray_count(&self) -> usize {
        self.ranges.len()
    }
}

/// Keeps samples with `n . x + d <= 0` (world space).
pub type ClipPlane = [f64; 4];

/// Builds the sample plan for `rays`. Each ray's `[near, far]` is first
/// narrowed to the world box of `map`; rays missing it get no samples.
pub fn plan_rays<T: Real, R: Rng + ?Sized>(
    rays: &[Ray],
    map: &UnitCubeMap,
    samples_per_ray: usize,
    jitter: bool,
    rng: &mut R,
    clip: Option<ClipPlane>,
) -> MarchPlan<T> {
    let (lo, hi) = map.world_box();
    let mut plan = MarchPlan {
        ranges: Vec::with_capacity(rays.len()),
        positions: Vec::with_capacity(rays.len() * samples_per_ray),
        delta: Vec::with_capacity(rays.len() * samples_per_ray),
        sh: Vec::with_capacity(rays.len()),
    };
    for ray in rays {
        let start = plan.positions.len();
        plan.sh.push(sh_encode(ray.dir.map(T::lit)));
        if let Some(r) = ray.clip_to_box(lo, hi) {
            let s = stratified_samples(&r, samples_per_ray, jitter, rng);
            for (t, d) in s.t.iter().zip(&s.delta) {
                let w = r.at(*t);
                if let Some(p) = clip {
                    if p[0] * w[0] + p[1] * w[1] + p[2] * w[2] + p[3] > 0.0 {
                        continue;
                    }
                }
                plan.positions.push(map.to_unit(w).map(T::lit));
                plan.delta.push(T::lit(*d));
            }
        }
        plan.ranges.push((start, plan.positions.len() - start));
    }
    plan
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldOptions<T> {
    pub alpha: T,
    pub background: [T; 3],
    pub skip_threshold: Option<T>,
}

/// Intermediate values of one batched forward.
#[derive(Debug, Clone, Default)]
pub struct FieldCache<T> {
    /// Samples that reached the decoder, as indices into the plan.
    pub kept: Vec<usize>,
    pub hash: Vec<CornerReads<T>>,
    pub features: Vec<T>,
    pub saliency: Vec<SaliencyReads<T>>,
    pub v: Vec<T>,
    pub sh: Vec<T>,
    pub decoder: DecoderCache<T>,
    /// Full-length (plan) density and color; skipped samples are zero.
    pub sigma: Vec<T>,
    pub rgb: Vec<T>,
    pub pixels: Vec<[T; 3]>,
    pub background: [T; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct NerfModel<T> {
    pub cfg: ModelConfig,
    pub hash: HashGrid<T>,
    pub saliency: Option<SaliencyGrid<T>>,
    pub decoder: Decoder<T>,
}

impl<T: Real> NerfModel<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let hash = HashGrid::new(cfg.hashgrid, seed)?;
        let decoder = Decoder::new(cfg.decoder, hash.output_dim(), seed.wrapping_add(0x5EED))?;
        let saliency = if cfg.saliency.enabled {
            Some(SaliencyGrid::new(cfg.saliency.resolution)?)
        } else {
            None
        };
        Ok(Self {
            cfg,
            hash,
            saliency,
            decoder,
        })
    }

    /// Fixed order: hash grid, decoder layers, saliency grid.
    pub fn params(&self) -> Vec<&ParamTensor<T>> {
        let mut v = vec![&self.hash.table];
        v.extend(self.decoder.params.iter());
        if let Some(s) = &self.saliency {
            v.push(&s.grid);
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        let mut v = vec![&mut self.hash.table];
        v.extend(self.decoder.params.iter_mut());
        if let Some(s) = &mut self.saliency {
            v.push(&mut s.grid);
        }
        v
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn gate_mode(&self) -> GateMode {
        self.cfg.gate.mode
    }

    pub fn cast<U: Real>(&self) -> NerfModel<U> {
        NerfModel {
            cfg: self.cfg,
            hash: HashGrid {
                cfg: self.hash.cfg,
                levels: self.hash.levels.clone(),
                table: self.hash.table.cast(),
            },
            saliency: self.saliency.as_ref().map(|s| SaliencyGrid {
                resolution: s.resolution,
                grid: s.grid.cast(),
            }),
            decoder: Decoder {
                layout: self.decoder.layout,
                input_dim: self.decoder.input_dim,
                params: self.decoder.params.iter().map(|p| p.cast()).collect(),
            },
        }
    }

    /// Density and color at every planned sample, then one composite per ray.
    pub fn forward(&self, plan: &MarchPlan<T>, opts: &FieldOptions<T>, cache: &mut FieldCache<T>) -> Result<()> {
        let n = plan.sample_count();
        let dim = self.hash.output_dim();
        cache.background = opts.background;

        cache.saliency.clear();
        cache.kept.clear();
        if let Some(sal) = &self.saliency {
            cache.saliency.reserve(n);
            for (j, x) in plan.positions.iter().enumerate() {
                let r = sal.reads(*x);
                let keep = opts.skip_threshold.is_none_or(|thr| r.p >= thr);
                if keep {
                    cache.kept.push(j);
                    cache.saliency.push(r);
                }
            }
        } else {
            cache.kept.extend(0..n);
        }
        let m = cache.kept.len();

        let kept_pos: Vec<[T; 3]> = cache.kept.iter().map(|&j| plan.positions[j]).collect();
        cache.features.clear();
        cache.features.resize(m * dim, T::zero());
        self.hash.encode_batch(&kept_pos, &mut cache.features, &mut cache.hash);

        cache.v.clear();
        cache.v.extend_from_slice(&cache.features);
        if !cache.saliency.is_empty() {
            for (row, r) in cache.v.chunks_exact_mut(dim).zip(&cache.saliency) {
                row.iter_mut().for_each(|x| *x *= r.p);
            }
        }

        // per-sample SH rows, ray by ray
        cache.sh.clear();
        cache.sh.reserve(m * SH_COEFFS);
        let mut ray = 0;
        for &j in &cache.kept {
            while j >= plan.ranges[ray].0 + plan.ranges[ray].1 {
                ray += 1;
            }
            cache.sh.extend_from_slice(&plan.sh[ray]);
        }

        self.decoder
            .forward(&cache.v, &cache.sh, m, self.gate_mode(), opts.alpha, &mut cache.decoder);

        cache.sigma.clear();
        cache.sigma.resize(n, T::zero());
        cache.rgb.clear();
        cache.rgb.resize(n * 3, T::zero());
        for (i, &j) in cache.kept.iter().enumerate() {
            cache.sigma[j] = cache.decoder.sigma[i];
            cache.rgb[j * 3..j * 3 + 3].copy_from_slice(&cache.decoder.rgb[i * 3..i * 3 + 3]);
        }

        cache.pixels.clear();
        for &(start, count) in &plan.ranges {
            let c = composite(
                &cache.sigma[start..start + count],
                &cache.rgb[start * 3..(start + count) * 3],
                &plan.delta[start..start + count],
                opts.background,
            )?;
            cache.pixels.push(c.rgb);
        }
        Ok(())
    }

    /// Accumulates parameter gradients for upstream pixel gradients `dpixels`.
    pub fn backward(&mut self, plan: &MarchPlan<T>, cache: &FieldCache<T>, dpixels: &[[T; 3]]) {
        let n = plan.sample_count();
        let dim = self.hash.output_dim();
        let mut dsigma = vec![T::zero(); n];
        let mut drgb = vec![T::zero(); n * 3];
        for (r, &(start, count)) in plan.ranges.iter().enumerate() {
            composite_backward(
                &cache.sigma[start..start + count],
                &cache.rgb[start * 3..(start + count) * 3],
                &plan.delta[start..start + count],
                cache.background,
                dpixels[r],
                &mut dsigma[start..start + count],
                &mut drgb[start * 3..(start + count) * 3],
            );
        }
        let m = cache.kept.len();
        let ds: Vec<T> = cache.kept.iter().map(|&j| dsigma[j]).collect();
        let mut dc = Vec::with_capacity(m * 3);
        for &j in &cache.kept {
            dc.extend_from_slice(&drgb[j * 3..j * 3 + 3]);
        }
        let mut dv = Vec::new();
        self.decoder.backward(&cache.decoder, &ds, &dc, &mut dv);

        if let Some(sal) = &mut self.saliency {
            for (i, r) in cache.saliency.iter().enumerate() {
                let row = &mut dv[i * dim..(i + 1) * dim];
                let f = &cache.features[i * dim..(i + 1) * dim];
                let dp: T = row.iter().zip(f).map(|(a, b)| *a * *b).sum();
                sal.backward_reads(r, dp);
                row.iter_mut().for_each(|x| *x *= r.p);
            }
        }
        self.hash.backward_batch(&cache.hash, &dv);
    }

    /// Renders a full image; rows are processed in parallel, each pixel
    /// independently, so the result does not depend on the thread count.
    pub fn render_image(&self, cam: &Camera, map: &UnitCubeMap, opts: &RenderOptions) -> Result<Image> {
        let w = cam.width;
        let h = cam.height;
        let fopts = FieldOptions {
            alpha: T::lit(opts.alpha),
            background: opts.background.map(|b| T::lit(b as f64)),
            skip_threshold: opts.skip_threshold.map(T::lit),
        };
        let rows_per_chunk = (opts.chunk_rays / w as usize).max(1);
        let chunks: Vec<Result<Vec<f32>>> = (0..h)
            .collect::<Vec<_>>()
            .par_chunks(rows_per_chunk)
            .map(|rows| {
                let rays: Vec<Ray> = rows
                    .iter()
                    .flat_map(|&v| (0..w).map(move |u| cam.ray(u, v, opts.near, opts.far)))
                    .collect();
                let plan = plan_rays::<T, _>(&rays, map, opts.samples_per_ray, false, &mut NoRng, opts.clip_plane);
                let mut cache = FieldCache::default();
                self.forward(&plan, &fopts, &mut cache)?;
                Ok(cache
                    .pixels
                    .iter()
                    .flat_map(|p| p.map(|c| c.to_f64_lossy() as f32))
                    .collect())
            })
            .collect();
        let mut img = Image::new(w, h);
        img.data.clear();
        for c in chunks {
            img.data.extend(c?);
        }
        Ok(img)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub samples_per_ray: usize,
    pub near: f64,
    pub far: f64,
    pub background: [f32; 3],
    pub alpha: f64,
    pub skip_threshold: Option<f64>,
    pub clip_plane: Option<ClipPlane>,
    pub chunk_rays: usize,
}

/// Stands in for an RNG where sampling is deterministic (no jitter).
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("jitter disabled")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("jitter disabled")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("jitter disabled")
    }
    fn try_fill_bytes(&mut self, _: &mut [u8]) -> std::result::Result<(), rand::Error> {
        unreachable!("jitter disabled")
    }
}

/// Checks a batch of pixels for non-finite values.
pub fn check_finite<T: Real>(pixels: &[[T; 3]], what: &str) -> Result<()> {
    if let Some(i) = pixels.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
        return Err(Error::Numerical(format!("{what}: non-finite value at ray {i}: {:?}", pixels[i])));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff_optim::{finite_diff_check, GradCheckOptions, InitScheme};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn micro_cfg(gate: GateMode, saliency: bool) -> ModelConfig {
        ModelConfig {
            hashgrid: HashGridConfig {
                levels: 3,
                feature_dim: 2,
                log2_table_size: 6,
                base_res: 2,
                max_res: 6,
            },
            decoder: DecoderLayout { hidden: 4, geo: 2 },
            saliency: SaliencyConfig {
                enabled: saliency,
                resolution: 4,
                skip_threshold: None,
            },
            gate: GateConfig {
                mode: gate,
                alpha: Some(3.0),
                ..Default::default()
            },
        }
    }

    fn randomized(cfg: ModelConfig, seed: u64) -> NerfModel<f64> {
        let mut m: NerfModel<f64> = NerfModel::new(cfg, seed).unwrap();
        m.hash = HashGrid::with_init(cfg.hashgrid, InitScheme::Uniform { low: -1.0, high: 1.0 }, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        for p in &mut m.decoder.params {
            p.values.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
        if let Some(s) = &mut m.saliency {
            s.grid.values.iter_mut().for_each(|v| *v = rng.gen_range(-2.0..2.0));
        }
        m
    }

    fn two_rays() -> Vec<Ray> {
        vec![
            Ray {
                origin: [0.1, 0.2, 3.0],
                dir: crate::render::normalize([0.05, -0.1, -1.0]),
                near: 2.0,
                far: 4.0,
            },
            Ray {
                origin: [-2.5, 0.3, 0.1],
                dir: crate::render::normalize([1.0, 0.05, 0.02]),
                near: 1.5,
                far: 3.5,
            },
        ]
    }

    #[test]
    fn full_field_gradients_match_finite_differences() {
        let map = UnitCubeMap::from_radius([0.0; 3], 1.0, 0.05);
        for (gate, sal) in [(GateMode::Soft, true), (GateMode::None, false), (GateMode::Hard, true)] {
            let mut model = randomized(micro_cfg(gate, sal), 17);
            let plan: MarchPlan<f64> = plan_rays(&two_rays(), &map, 4, true, &mut ChaCha8Rng::seed_from_u64(2), None);
            assert_eq!(plan.sample_count(), 8);
            let opts = FieldOptions {
                alpha: 3.0,
                background: [1.0, 1.0, 1.0],
                skip_threshold: None,
            };
            let target = [[0.2, 0.5, 0.7], [0.9, 0.1, 0.4]];
            let loss = |m: &NerfModel<f64>| {
                let mut c = FieldCache::default();
                m.forward(&plan, &opts, &mut c).unwrap();
                c.pixels
                    .iter()
                    .zip(&target)
                    .flat_map(|(p, t)| (0..3).map(move |k| (p[k] - t[k]).powi(2)))
                    .sum::<f64>()
                    / 6.0
            };
            let mut cache = FieldCache::default();
            model.forward(&plan, &opts, &mut cache).unwrap();
            let dp: Vec<[f64; 3]> = cache
                .pixels
                .iter()
                .zip(&target)
                .map(|(p, t)| [0, 1, 2].map(|k| 2.0 * (p[k] - t[k]) / 6.0))
                .collect();
            model.zero_grads();
            model.backward(&plan, &cache, &dp);
            let count = model.params().len();
            for k in 0..count {
                let analytic = model.params()[k].grads.clone();
                let mut probe = model.clone();
                let mut vals = probe.params()[k].values.clone();
                let r = finite_diff_check(
                    |x| {
                        probe.params_mut()[k].values.copy_from_slice(x);
                        loss(&probe)
                    },
                    &mut vals,
                    &analytic,
                    GradCheckOptions {
                        h: 1e-6,
                        tol: 1e-6,
                        floor: 1e-4,
                    },
                )
                .unwrap();
                assert!(r.passed(), "{gate:?} tensor {k}: {r}");
            }
        }
    }

    #[test]
    fn skipping_keeps_confident_samples_only() {
        let map = UnitCubeMap::from_radius([0.0; 3], 1.0, 0.05);
        let mut model = randomized(micro_cfg(GateMode::Soft, true), 5);
        let sal = model.saliency.as_mut().unwrap();
        sal.grid.values.iter_mut().for_each(|v| *v = -30.0);
        let plan: MarchPlan<f64> = plan_rays(&two_rays(), &map, 4, false, &mut NoRng, None);
        let mut cache = FieldCache::default();
        let opts = FieldOptions {
            alpha: 3.0,
            background: [0.3, 0.6, 0.9],
            skip_threshold: Some(1e-2),
        };
        model.forward(&plan, &opts, &mut cache).unwrap();
        assert!(cache.kept.is_empty());
        for p in &cache.pixels {
            assert_eq!(*p, [0.3, 0.6, 0.9]);
        }
    }

    #[test]
    fn clip_plane_drops_samples() {
        let map = UnitCubeMap::from_radius([0.0; 3], 1.0, 0.05);
        let rays = two_rays();
        let all: MarchPlan<f64> = plan_rays(&rays, &map, 8, false, &mut NoRng, None);
        let half: MarchPlan<f64> = plan_rays(&rays, &map, 8, false, &mut NoRng, Some([0.0, 0.0, 1.0, 0.0]));
        assert!(half.sample_count() < all.sample_count());
        for x in &half.positions {
            assert!(map.to_world([x[0], x[1], x[2]])[2] <= 1e-12);
        }
    }

    #[test]
    fn unit_cube_map_round_trip() {
        let map = UnitCubeMap::default();
        let (lo, hi) = map.world_box();
        for a in 0..3 {
            assert!((lo[a] + 1.5 / 0.9).abs() < 1e-12);
            assert!((hi[a] - 1.5 / 0.9).abs() < 1e-12);
        }
        let u = map.to_unit([1.5, -1.5, 0.0]);
        assert!((u[0] - 0.95).abs() < 1e-12 && (u[1] - 0.05).abs() < 1e-12);
    }
}
