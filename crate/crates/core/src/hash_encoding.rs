//! Multi-resolution hash-grid encoding.
//!
//! Level `l` covers the unit cube with `N_l` cells per axis. Coarse levels whose
//! `(N_l + 1)^3` corners fit in the table are stored densely; finer levels index
//! a table of `2^log2_table_size` entries through a spatial hash, so distinct
//! corners may share an entry.

use serde::{Deserialize, Serialize};

use crate::decoder::DecoderLayout;
use crate::diff_optim::{seeded_init, InitScheme, ParamTensor, Role};
use crate::error::{Error, Result};
use crate::real::Real;

pub const HASH_PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HashGridConfig {
    pub levels: usize,
    pub feature_dim: usize,
    pub log2_table_size: u32,
    pub base_res: u32,
    pub max_res: u32,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            levels: 16,
            feature_dim: 2,
            log2_table_size: 19,
            base_res: 16,
            max_res: 1024,
        }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.feature_dim == 0 {
            return Err(Error::Config("hash grid needs at least one level and one feature".into()));
        }
        if !(1..=28).contains(&self.log2_table_size) {
            return Err(Error::Config(format!(
                "log2_table_size {} outside supported range 1..=28",
                self.log2_table_size
            )));
        }
        if self.base_res == 0 {
            return Err(Error::Config("base resolution must be positive".into()));
        }
        if self.base_res > self.max_res {
            return Err(Error::Config(format!(
                "base resolution {} exceeds max resolution {}",
                self.base_res, self.max_res
            )));
        }
        Ok(())
    }

    /// Per-level growth factor; `None` for a single level.
    pub fn growth(&self) -> Option<f64> {
        (self.levels > 1).then(|| {
            ((self.max_res as f64).ln() - (self.base_res as f64).ln()) / (self.levels - 1) as f64
        })
        .map(f64::exp)
    }

    pub fn table_size(&self) -> usize {
        1usize << self.log2_table_size
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.feature_dim
    }
}

/// `N_l = floor(N_min * b^l)`, with the last level pinned to `N_max`.
pub fn level_resolutions(cfg: &HashGridConfig) -> Result<Vec<u32>> {
    cfg.validate()?;
    let Some(b) = cfg.growth() else {
        return Ok(vec![cfg.base_res]);
    };
    let res = (0..cfg.levels)
        .map(|l| {
            if l + 1 == cfg.levels {
                cfg.max_res
            } else {
                // guard against b^l landing a hair under an integer
                (cfg.base_res as f64 * b.powi(l as i32) * (1.0 + 1e-12)).floor() as u32
            }
        })
        .collect();
    Ok(res)
}

/// Spatial hash of an integer corner, reduced modulo a power-of-two table.
#[inline]
pub fn hash_index(voxel: [u32; 3], table_size: usize) -> usize {
    debug_assert!(table_size.is_power_of_two());
    let h = voxel[0].wrapping_mul(HASH_PRIMES[0])
        ^ voxel[1].wrapping_mul(HASH_PRIMES[1])
        ^ voxel[2].wrapping_mul(HASH_PRIMES[2]);
    (h as usize) & (table_size - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageMode {
    Dense,
    Hashed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelInfo {
    pub resolution: u32,
    pub mode: StorageMode,
    pub entries: usize,
    /// First entry of this level inside the flat table.
    pub offset: usize,
}

pub fn level_layout(cfg: &HashGridConfig) -> Result<Vec<LevelInfo>> {
    let cap = cfg.table_size();
    let mut offset = 0;
    let levels = level_resolutions(cfg)?
        .into_iter()
        .map(|n| {
            let corners = (n as usize + 1).pow(3);
            let (mode, entries) = if corners <= cap {
                (StorageMode::Dense, corners)
            } else {
                (StorageMode::Hashed, cap)
            };
            let info = LevelInfo {
                resolution: n,
                mode,
                entries,
                offset,
            };
            offset += entries;
            info
        })
        .collect();
    Ok(levels)
}

/// The 8 corner reads of one level: flat entry indices and trilinear weights.
/// Corner `k` takes the upper neighbour on axis `a` iff bit `a` of `k` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerReads<T> {
    pub entries: [u32; 8],
    pub weights: [T; 8],
}

/// Cell lookup shared with the saliency grid: scales `x` (already in [0,1])
/// by `cells`, returns the lower corner and the fractional offset.
#[inline]
pub(crate) fn cell_coords<T: Real>(x: [T; 3], cells: u32) -> ([u32; 3], [T; 3]) {
    let n = T::lit(cells as f64);
    let mut base = [0u32; 3];
    let mut frac = [T::zero(); 3];
    for a in 0..3 {
        let pos = x[a] * n;
        let fl = pos.floor();
        let i = fl.to_u32().unwrap_or(0).min(cells.saturating_sub(1));
        base[a] = i;
        frac[a] = (pos - T::lit(i as f64)).max(T::zero()).min(T::one());
    }
    (base, frac)
}

#[inline]
pub(crate) fn trilinear_weights<T: Real>(frac: [T; 3]) -> [T; 8] {
    let one = T::one();
    let mut w = [T::zero(); 8];
    for (k, wk) in w.iter_mut().enumerate() {
        let wx = if k & 1 != 0 { frac[0] } else { one - frac[0] };
        let wy = if k & 2 != 0 { frac[1] } else { one - frac[1] };
        let wz = if k & 4 != 0 { frac[2] } else { one - frac[2] };
        *wk = wx * wy * wz;
    }
    w
}

/// Clamps into the unit cube; reports whether anything moved.
#[inline]
pub fn clamp_unit<T: Real>(x: [T; 3]) -> ([T; 3], bool) {
    let mut out = x;
    let mut clamped = false;
    for v in out.iter_mut() {
        let c = v.max(T::zero()).min(T::one());
        if c != *v || v.is_nan() {
            clamped = true;
        }
        *v = if v.is_nan() { T::zero() } else { c };
    }
    (out, clamped)
}

/// Trainable multi-level feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct HashGrid<T> {
    pub cfg: HashGridConfig,
    pub levels: Vec<LevelInfo>,
    pub table: ParamTensor<T>,
}

impl<T: Real> HashGrid<T> {
    /// Features drawn from uniform(-1e-4, 1e-4).
    pub fn new(cfg: HashGridConfig, seed: u64) -> Result<Self> {
        Self::with_init(cfg, InitScheme::Uniform { low: -1e-4, high: 1e-4 }, seed)
    }

    pub fn with_init(cfg: HashGridConfig, scheme: InitScheme, seed: u64) -> Result<Self> {
        let levels = level_layout(&cfg)?;
        let total: usize = levels.iter().map(|l| l.entries).sum();
        let table = seeded_init("hashgrid", Role::Hashgrid, vec![total, cfg.feature_dim], scheme, seed)?;
        Ok(Self { cfg, levels, table })
    }

    pub fn output_dim(&self) -> usize {
        self.cfg.output_dim()
    }

    pub fn level_entry(&self, level: usize, corner: [u32; 3]) -> usize {
        let info = &self.levels[level];
        let local = match info.mode {
            StorageMode::Dense => {
                let side = info.resolution as usize + 1;
                corner[0] as usize + side * (corner[1] as usize + side * corner[2] as usize)
            }
            StorageMode::Hashed => hash_index(corner, info.entries),
        };
        info.offset + local
    }

    /// Entry indices and weights of the 8 corners surrounding `x` at `level`.
    /// `x` must already lie in the unit cube.
    #[inline]
    pub fn corners(&self, level: usize, x: [T; 3]) -> CornerReads<T> {
        let info = &self.levels[level];
        let (base, frac) = cell_coords(x, info.resolution);
        let weights = trilinear_weights(frac);
        let mut entries = [0u32; 8];
        for (k, e) in entries.iter_mut().enumerate() {
            let c = [
                base[0] + (k & 1) as u32,
                base[1] + ((k >> 1) & 1) as u32,
                base[2] + ((k >> 2) & 1) as u32,
            ];
            *e = self.level_entry(level, c) as u32;
        }
        CornerReads { entries, weights }
    }

    /// Writes the `L*F` feature vector of `x` into `out`. Returns `true` when
    /// `x` had to be clamped into the unit cube.
    pub fn encode_into(&self, x: [T; 3], out: &mut [T]) -> bool {
        let f = self.cfg.feature_dim;
        let (x, clamped) = clamp_unit(x);
        for level in 0..self.levels.len() {
            let reads = self.corners(level, x);
            let dst = &mut out[level * f..(level + 1) * f];
            dst.iter_mut().for_each(|v| *v = T::zero());
            for (e, w) in reads.entries.iter().zip(reads.weights) {
                let src = &self.table.values[*e as usize * f..(*e as usize + 1) * f];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * *s;
                }
            }
        }
        clamped
    }

    pub fn encode(&self, x: [T; 3]) -> Vec<T> {
        let mut out = vec![T::zero(); self.output_dim()];
        self.encode_into(x, &mut out);
        out
    }

    /// Scatters `upstream` (length `L*F`) into the table gradients.
    pub fn encode_backward(&mut self, x: [T; 3], upstream: &[T]) {
        let f = self.cfg.feature_dim;
        let (x, _) = clamp_unit(x);
        for level in 0..self.levels.len() {
            let reads = self.corners(level, x);
            let up = &upstream[level * f..(level + 1) * f];
            if up.iter().all(|u| *u == T::zero()) {
                continue;
            }
            for (e, w) in reads.entries.iter().zip(reads.weights) {
                let dst = &mut self.table.grads[*e as usize * f..(*e as usize + 1) * f];
                for (d, u) in dst.iter_mut().zip(up) {
                    *d += w * *u;
                }
            }
        }
    }

    /// Batched forward; `out` is row-major `N x L*F`. The corner reads are
    /// kept in `cache` for [`HashGrid::backward_batch`].
    pub fn encode_batch(&self, xs: &[[T; 3]], out: &mut [T], cache: &mut Vec<CornerReads<T>>) {
        let f = self.cfg.feature_dim;
        let dim = self.output_dim();
        let levels = self.levels.len();
        cache.clear();
        cache.reserve(xs.len() * levels);
        for (j, x) in xs.iter().enumerate() {
            let (x, _) = clamp_unit(*x);
            let row = &mut out[j * dim..(j + 1) * dim];
            for level in 0..levels {
                let reads = self.corners(level, x);
                let dst = &mut row[level * f..(level + 1) * f];
                dst.iter_mut().for_each(|v| *v = T::zero());
                for (e, w) in reads.entries.iter().zip(reads.weights) {
                    let base = *e as usize * f;
                    for (d, s) in dst.iter_mut().zip(&self.table.values[base..base + f]) {
                        *d += w * *s;
                    }
                }
                cache.push(reads);
            }
        }
    }

    /// Serial, fixed-order scatter of `d_features` (`N x L*F`) into the table.
    pub fn backward_batch(&mut self, cache: &[CornerReads<T>], d_features: &[T]) {
        let f = self.cfg.feature_dim;
        let levels = self.levels.len();
        let grads = &mut self.table.grads;
        for (slot, reads) in cache.iter().enumerate() {
            let (j, level) = (slot / levels, slot % levels);
            let up = &d_features[j * levels * f + level * f..j * levels * f + (level + 1) * f];
            if up.iter().all(|u| *u == T::zero()) {
                continue;
            }
            for (e, w) in reads.entries.iter().zip(reads.weights) {
                let base = *e as usize * f;
                for (d, u) in grads[base..base + f].iter_mut().zip(up) {
                    *d += w * *u;
                }
            }
        }
    }
}

/// Trainable parameter totals by component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub hashgrid: usize,
    pub mlp: usize,
    pub saliency: usize,
    pub total: usize,
}

pub fn param_count(cfg: &HashGridConfig, mlp: &DecoderLayout, saliency_res: Option<usize>) -> Result<ParamCount> {
    let hashgrid = level_layout(cfg)?.iter().map(|l| l.entries).sum::<usize>() * cfg.feature_dim;
    let mlp = mlp.param_count(cfg.output_dim());
    let saliency = saliency_res.map_or(0, |t| t.pow(3));
    Ok(ParamCount {
        hashgrid,
        mlp,
        saliency,
        total: hashgrid + mlp + saliency,
    })
}
