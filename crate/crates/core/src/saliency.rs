//! Trainable `T x T x T` saliency grid.
//!
//! Raw node values `g` sit on the corners of a `(T-1)^3`-cell lattice spanning
//! the unit cube. A query interpolates the 8 surrounding nodes and squashes the
//! result through a sigmoid, giving a weight `p` in (0, 1) that scales the
//! hash-grid feature vector.

use crate::diff_optim::{seeded_init, InitScheme, ParamTensor, Role};
use crate::error::{Error, Result};
use crate::hash_encoding::{cell_coords, clamp_unit, trilinear_weights};
use crate::real::{sigmoid, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaliencyReads<T> {
    pub nodes: [u32; 8],
    pub weights: [T; 8],
    pub p: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyGrid<T> {
    pub resolution: usize,
    pub grid: ParamTensor<T>,
}

impl<T: Real> SaliencyGrid<T> {
    /// All-ones initialization.
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::Config(format!("saliency resolution must be at least 2, got {resolution}")));
        }
        let grid = seeded_init("saliency", Role::Saliency, vec![resolution; 3], InitScheme::Ones, 0)?;
        Ok(Self { resolution, grid })
    }

    pub fn from_values(resolution: usize, values: Vec<T>) -> Result<Self> {
        if resolution < 2 || values.len() != resolution.pow(3) {
            return Err(Error::Config(format!(
                "saliency grid of resolution {resolution} needs {} values, got {}",
                resolution.pow(3),
                values.len()
            )));
        }
        Ok(Self {
            resolution,
            grid: ParamTensor::from_values("saliency", Role::Saliency, vec![resolution; 3], values),
        })
    }

    #[inline]
    pub fn node_index(&self, node: [usize; 3]) -> usize {
        let t = self.resolution;
        node[0] + t * (node[1] + t * node[2])
    }

    /// Unit-cube position of a node.
    pub fn node_position(&self, node: [usize; 3]) -> [T; 3] {
        let s = T::lit((self.resolution - 1) as f64);
        node.map(|c| T::lit(c as f64) / s)
    }

    #[inline]
    pub fn reads(&self, x: [T; 3]) -> SaliencyReads<T> {
        let (x, _) = clamp_unit(x);
        let cells = (self.resolution - 1) as u32;
        let (base, frac) = cell_coords(x, cells);
        let weights = trilinear_weights(frac);
        let mut nodes = [0u32; 8];
        let mut z = T::zero();
        for (k, n) in nodes.iter_mut().enumerate() {
            let c = [
                base[0] as usize + (k & 1),
                base[1] as usize + ((k >> 1) & 1),
                base[2] as usize + ((k >> 2) & 1),
            ];
            *n = self.node_index(c) as u32;
            z += weights[k] * self.grid.values[*n as usize];
        }
        SaliencyReads {
            nodes,
            weights,
            p: sigmoid(z),
        }
    }

    /// `p = sigmoid(trilinear(g, x))`.
    pub fn saliency_weight(&self, x: [T; 3]) -> T {
        self.reads(x).p
    }

    /// Accumulates `dp * p(1-p) * w_i` into the node gradients.
    pub fn backward_reads(&mut self, reads: &SaliencyReads<T>, dp: T) {
        if dp == T::zero() {
            return;
        }
        let dz = dp * reads.p * (T::one() - reads.p);
        for (n, w) in reads.nodes.iter().zip(reads.weights) {
            self.grid.grads[*n as usize] += w * dz;
        }
    }

    /// Mean of `sigmoid(g)` over every node: the normalized L1 norm of the
    /// squashed grid.
    pub fn sparsity_l1(&self) -> T {
        let n = T::lit(self.grid.values.len() as f64);
        self.grid.values.iter().map(|g| sigmoid(*g)).sum::<T>() / n
    }

    /// Adds `scale * d(sparsity_l1)/dg = scale * p(1-p) / T^3` to every node.
    pub fn sparsity_backward(&mut self, scale: T) {
        if scale == T::zero() {
            return;
        }
        let n = T::lit(self.grid.values.len() as f64);
        for (g, d) in self.grid.values.iter().zip(self.grid.grads.iter_mut()) {
            let p = sigmoid(*g);
            *d += scale * p * (T::one() - p) / n;
        }
    }

    /// `T x T` image of node weights `p` on the plane `axis = index`.
    /// Axis 0 gives rows along z and columns along y, axis 1 rows z and
    /// columns x, axis 2 rows y and columns x.
    pub fn slice_export(&self, axis: usize, index: usize) -> Result<SliceImage> {
        let t = self.resolution;
        if axis > 2 {
            return Err(Error::Usage(format!("slice axis must be 0, 1 or 2, got {axis}")));
        }
        if index >= t {
            return Err(Error::Usage(format!("slice index {index} out of range for resolution {t}")));
        }
        let mut data = Vec::with_capacity(t * t);
        for row in 0..t {
            for col in 0..t {
                let node = match axis {
                    0 => [index, col, row],
                    1 => [col, index, row],
                    _ => [col, row, index],
                };
                data.push(sigmoid(self.grid.values[self.node_index(node)]).to_f64_lossy() as f32);
            }
        }
        Ok(SliceImage {
            width: t,
            height: t,
            data,
        })
    }
}

/// `v = p * f`.
pub fn apply_saliency<T: Real>(p: T, f: &[T], out: &mut [T]) {
    for (o, v) in out.iter_mut().zip(f) {
        *o = p * *v;
    }
}

/// Single-channel image in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_ones_and_all_zeros() {
        let g: SaliencyGrid<f64> = SaliencyGrid::new(8).unwrap();
        let s1 = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((s1 - 0.73106).abs() < 1e-5);
        for x in [[0.0, 0.0, 0.0], [0.31, 0.77, 0.5], [1.0, 1.0, 1.0]] {
            assert!((g.saliency_weight(x) - s1).abs() < 1e-12);
        }
        assert!((g.sparsity_l1() - s1).abs() < 1e-12);
        let z = SaliencyGrid::<f64>::from_values(4, vec![0.0; 64]).unwrap();
        assert_eq!(z.saliency_weight([0.2, 0.4, 0.6]), 0.5);
        assert_eq!(z.sparsity_l1(), 0.5);
    }

    #[test]
    fn node_coincident_query_is_exact() {
        let mut g: SaliencyGrid<f64> = SaliencyGrid::new(5).unwrap();
        let node = [1, 3, 2];
        let i = g.node_index(node);
        g.grid.values[i] = -20.0;
        let p = g.saliency_weight(g.node_position(node));
        // 1 / (1 + e^20)
        assert!((p - 2.0611536e-9).abs() < 1e-15, "{p}");
        assert!(p > 0.0);
    }

    #[test]
    fn saturated_halves_average_to_half() {
        let mut values = vec![20.0f64; 64];
        values[32..].iter_mut().for_each(|v| *v = -20.0);
        let g = SaliencyGrid::from_values(4, values).unwrap();
        assert!((g.sparsity_l1() - 0.5).abs() < 1e-8);
    }

    #[test]
    fn apply_saliency_scales() {
        let mut out = [0.0; 2];
        apply_saliency(0.5, &[0.2, -0.4], &mut out);
        assert_eq!(out, [0.1, -0.2]);
        apply_saliency(0.3, &[0.0, 0.0], &mut out);
        assert_eq!(out, [0.0, 0.0]);
    }

    #[test]
    fn saturated_node_passes_no_gradient() {
        let mut g = SaliencyGrid::from_values(2, vec![40.0f64; 8]).unwrap();
        let r = g.reads([0.5, 0.5, 0.5]);
        g.backward_reads(&r, 1.0);
        assert!(g.grid.grads.iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn slice_export_shapes_and_errors() {
        let g: SaliencyGrid<f32> = SaliencyGrid::new(6).unwrap();
        let img = g.slice_export(2, 5).unwrap();
        assert_eq!((img.width, img.height, img.data.len()), (6, 6, 36));
        assert!(img.data.iter().all(|v| (v - 0.731_058_6).abs() < 1e-6));
        assert!(matches!(g.slice_export(3, 0), Err(Error::Usage(_))));
        assert!(matches!(g.slice_export(0, 6), Err(Error::Usage(_))));
    }

    #[test]
    fn slice_orientation() {
        let mut g: SaliencyGrid<f64> = SaliencyGrid::from_values(3, vec![-30.0; 27]).unwrap();
        let i = g.node_index([2, 1, 0]);
        g.grid.values[i] = 30.0;
        let img = g.slice_export(2, 0).unwrap();
        // row = y = 1, col = x = 2
        assert!(img.data[3 + 2] > 0.99);
        assert_eq!(img.data.iter().filter(|v| **v > 0.5).count(), 1);
    }

    #[test]
    fn sparsity_gradient_matches_closed_form() {
        let values: Vec<f64> = (0..27).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
        let mut g = SaliencyGrid::from_values(3, values.clone()).unwrap();
        g.sparsity_backward(1.0);
        for (v, d) in values.iter().zip(&g.grid.grads) {
            let p = sigmoid(*v);
            assert!((d - p * (1.0 - p) / 27.0).abs() < 1e-15);
            assert!(*d >= 0.0);
        }
    }

    proptest! {
        #[test]
        fn raising_a_node_never_lowers_p(
            seed in 0u64..1000, node in 0usize..27, bump in 0.0f64..5.0,
            x in 0.0f64..=1.0, y in 0.0f64..=1.0, z in 0.0f64..=1.0,
        ) {
            let values: Vec<f64> = (0..27).map(|i| ((i as u64 * 31 + seed) as f64 * 0.91).sin() * 4.0).collect();
            let a = SaliencyGrid::from_values(3, values.clone()).unwrap();
            let mut raised = values;
            raised[node] += bump;
            let b = SaliencyGrid::from_values(3, raised).unwrap();
            prop_assert!(b.saliency_weight([x, y, z]) >= a.saliency_weight([x, y, z]));
            let p = a.saliency_weight([x, y, z]);
            prop_assert!(p > 0.0 && p < 1.0);
        }
    }
}
