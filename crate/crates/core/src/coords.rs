//! Normalized coordinate space of the deformation networks.
//!
//! World millimetres map affinely onto the `[-1, 1]` cube. With isotropic
//! normalization the longest physical axis spans the cube and shorter axes
//! are centred inside it, which amounts to virtual zero padding.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::rng::Rng;
use crate::volume::{Grid, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormTransform {
    /// Normalized units per mm, per axis.
    pub scale: Vec3,
    pub offset: Vec3,
    /// Physical extent covered by the cube after padding, mm.
    pub padded_extent: Vec3,
}

impl NormTransform {
    #[inline]
    pub fn to_normalized(&self, world: Vec3) -> Vec3 {
        [
            world[0] * self.scale[0] + self.offset[0],
            world[1] * self.scale[1] + self.offset[1],
            world[2] * self.scale[2] + self.offset[2],
        ]
    }

    #[inline]
    pub fn to_world(&self, n: Vec3) -> Vec3 {
        [
            (n[0] - self.offset[0]) / self.scale[0],
            (n[1] - self.offset[1]) / self.scale[1],
            (n[2] - self.offset[2]) / self.scale[2],
        ]
    }

    /// Converts a displacement in normalized units to mm.
    #[inline]
    pub fn delta_to_mm(&self, d: Vec3) -> Vec3 {
        [d[0] / self.scale[0], d[1] / self.scale[1], d[2] / self.scale[2]]
    }

    pub fn is_isotropic(&self) -> bool {
        self.scale[0] == self.scale[1] && self.scale[1] == self.scale[2]
    }
}

/// Normalization for a grid. The field of view is `dims * spacing`, centred
/// on the middle voxel, so every voxel centre lies strictly inside the cube.
pub fn make_norm_transform(grid: &Grid, isotropic: bool) -> NormTransform {
    let extent = grid.extent();
    let center = grid.world([
        (grid.dims[0] as f64 - 1.0) / 2.0,
        (grid.dims[1] as f64 - 1.0) / 2.0,
        (grid.dims[2] as f64 - 1.0) / 2.0,
    ]);
    let (scale, padded_extent) = if isotropic {
        let longest = extent.iter().copied().fold(0.0, f64::max);
        ([2.0 / longest; 3], [longest; 3])
    } else {
        (
            [2.0 / extent[0], 2.0 / extent[1], 2.0 / extent[2]],
            extent,
        )
    };
    NormTransform {
        scale,
        offset: [
            -center[0] * scale[0],
            -center[1] * scale[1],
            -center[2] * scale[2],
        ],
        padded_extent,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordBatch {
    /// Normalized coordinates.
    pub coords: Vec<Vec3>,
    pub domain: Domain,
    /// Seed of the stream the batch was drawn from, for provenance.
    pub seed: u64,
}

impl CoordBatch {
    pub fn new(coords: Vec<Vec3>, domain: Domain) -> Self {
        CoordBatch {
            coords,
            domain,
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Draws voxel centres uniformly, with replacement, from a mask's foreground.
#[derive(Debug, Clone)]
pub struct ForegroundSampler {
    centers: Vec<Vec3>,
    domain: Domain,
}

impl ForegroundSampler {
    pub fn new(mask: &Volume3D, t: &NormTransform, domain: Domain) -> Result<Self> {
        mask.check_mask()?;
        let grid = mask.grid();
        let centers: Vec<Vec3> = mask
            .foreground()
            .into_iter()
            .map(|idx| {
                let [i, j, k] = grid.ijk(idx);
                t.to_normalized(grid.world([i as f64, j as f64, k as f64]))
            })
            .collect();
        if centers.is_empty() {
            return Err(Error::Domain("mask has no foreground voxels".into()));
        }
        Ok(ForegroundSampler { centers, domain })
    }

    pub fn foreground_len(&self) -> usize {
        self.centers.len()
    }

    pub fn sample(&self, n: usize, rng: &mut Rng, seed: u64) -> CoordBatch {
        let len = self.centers.len() as u64;
        let coords = (0..n)
            .map(|_| self.centers[rng.gen_range(0..len) as usize])
            .collect();
        CoordBatch {
            coords,
            domain: self.domain,
            seed,
        }
    }
}

pub fn sample_foreground(
    mask: &Volume3D,
    t: &NormTransform,
    domain: Domain,
    n: usize,
    rng: &mut Rng,
    seed: u64,
) -> Result<CoordBatch> {
    Ok(ForegroundSampler::new(mask, t, domain)?.sample(n, rng, seed))
}

/// Distance in voxels within which a query counts as lying on a sample.
const ON_SAMPLE: f64 = 1e-9;

#[derive(Clone, Copy)]
struct AxisTaps {
    value: [(usize, f64); 2],
    deriv: [(usize, f64); 2],
}

fn axis_taps(p: f64, n: usize) -> AxisTaps {
    const NONE: [(usize, f64); 2] = [(0, 0.0), (0, 0.0)];
    if n == 1 {
        return AxisTaps {
            value: [(0, 1.0), (0, 0.0)],
            deriv: NONE,
        };
    }
    let last = (n - 1) as f64;
    if p.is_nan() || p < 0.0 {
        return AxisTaps {
            value: [(0, 1.0), (0, 0.0)],
            deriv: NONE,
        };
    }
    if p > last {
        return AxisTaps {
            value: [(n - 1, 1.0), (n - 1, 0.0)],
            deriv: NONE,
        };
    }
    let i0 = (p.floor() as usize).min(n - 2);
    let f = p - i0 as f64;
    let nearest = p.round();
    let deriv = if (p - nearest).abs() < ON_SAMPLE && nearest > 0.0 && nearest < last {
        let c = nearest as usize;
        // on an interior sample: average of the two one-sided slopes
        [(c - 1, -0.5), (c + 1, 0.5)]
    } else {
        [(i0, -1.0), (i0 + 1, 1.0)]
    };
    AxisTaps {
        value: [(i0, 1.0 - f), (i0 + 1, f)],
        deriv,
    }
}

/// Trilinear interpolation with its gradient w.r.t. normalized coordinates.
///
/// Queries outside the grid clamp to the border voxel and get a zero
/// gradient component along each clamped axis.
#[derive(Debug, Clone)]
pub struct Interpolator {
    grid: Grid,
    data: Vec<f64>,
    /// d(voxel index)/d(normalized coordinate), per axis.
    index_per_norm: Vec3,
    t: NormTransform,
}

impl Interpolator {
    pub fn new(v: &Volume3D, t: &NormTransform) -> Self {
        let grid = *v.grid();
        Interpolator {
            data: v.to_f64(),
            index_per_norm: [
                1.0 / (grid.spacing[0] * t.scale[0]),
                1.0 / (grid.spacing[1] * t.scale[1]),
                1.0 / (grid.spacing[2] * t.scale[2]),
            ],
            grid,
            t: *t,
        }
    }

    pub fn transform(&self) -> &NormTransform {
        &self.t
    }

    /// Value and gradient (per normalized unit) at a normalized coordinate.
    pub fn sample(&self, coord: Vec3) -> (f64, Vec3) {
        let p = self.grid.index_of(self.t.to_world(coord));
        let (value, g) = self.sample_index(p);
        (
            value,
            [
                g[0] * self.index_per_norm[0],
                g[1] * self.index_per_norm[1],
                g[2] * self.index_per_norm[2],
            ],
        )
    }

    pub fn value(&self, coord: Vec3) -> f64 {
        self.sample(coord).0
    }

    /// Value and gradient per voxel index at a continuous voxel index.
    pub fn sample_index(&self, p: Vec3) -> (f64, Vec3) {
        let [nx, ny, nz] = self.grid.dims;
        let t = [axis_taps(p[0], nx), axis_taps(p[1], ny), axis_taps(p[2], nz)];
        let at = |i: usize, j: usize, k: usize| self.data[i + nx * (j + ny * k)];
        let mut value = 0.0;
        for &(k, wz) in &t[2].value {
            for &(j, wy) in &t[1].value {
                for &(i, wx) in &t[0].value {
                    value += wx * wy * wz * at(i, j, k);
                }
            }
        }
        let mut grad = [0.0; 3];
        // taps along the differentiated axis are combined before weighting so
        // that a locally constant volume yields an exactly zero gradient
        for &(k, wz) in &t[2].value {
            for &(j, wy) in &t[1].value {
                let [(i0, d0), (i1, d1)] = t[0].deriv;
                grad[0] += wy * wz * (d1 * at(i1, j, k) + d0 * at(i0, j, k));
            }
        }
        for &(k, wz) in &t[2].value {
            for &(i, wx) in &t[0].value {
                let [(j0, d0), (j1, d1)] = t[1].deriv;
                grad[1] += wx * wz * (d1 * at(i, j1, k) + d0 * at(i, j0, k));
            }
        }
        for &(j, wy) in &t[1].value {
            for &(i, wx) in &t[0].value {
                let [(k0, d0), (k1, d1)] = t[2].deriv;
                grad[2] += wx * wy * (d1 * at(i, j, k1) + d0 * at(i, j, k0));
            }
        }
        (value, grad)
    }
}

/// One-off trilinear lookup; build an [`Interpolator`] for repeated queries.
pub fn trilinear_sample(v: &Volume3D, coord: Vec3, t: &NormTransform) -> (f64, Vec3) {
    Interpolator::new(v, t).sample(coord)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn grid(dims: [usize; 3], spacing: Vec3) -> Grid {
        Grid::new(dims, spacing, [0.0; 3]).unwrap()
    }

    #[test]
    fn isotropic_cube_covers_full_range() {
        let g = grid([100, 100, 100], [1.0; 3]);
        let t = make_norm_transform(&g, true);
        assert!(t.is_isotropic());
        let lo = t.to_normalized(g.world([-0.5; 3]));
        let hi = t.to_normalized(g.world([99.5; 3]));
        for a in 0..3 {
            assert!((lo[a] + 1.0).abs() < 1e-12);
            assert!((hi[a] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn anisotropic_fov_is_padded() {
        // 400 x 400 x 35 mm field of view
        let g = grid([100, 100, 14], [4.0, 4.0, 2.5]);
        let t = make_norm_transform(&g, true);
        let lo = t.to_normalized(g.world([-0.5, -0.5, -0.5]));
        let hi = t.to_normalized(g.world([99.5, 99.5, 13.5]));
        assert!((lo[2] + 0.0875).abs() < 1e-12, "{lo:?}");
        assert!((hi[2] - 0.0875).abs() < 1e-12, "{hi:?}");
        assert!((hi[0] - 1.0).abs() < 1e-12);
        assert_eq!(t.padded_extent, [400.0; 3]);

        let t2 = make_norm_transform(&g, false);
        let hi2 = t2.to_normalized(g.world([99.5, 99.5, 13.5]));
        assert!((hi2[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn world_norm_roundtrip() {
        use rand::Rng as _;
        let g = Grid::new([50, 60, 20], [0.8, 0.7, 2.5], [-30.0, 12.0, 5.0]).unwrap();
        let t = make_norm_transform(&g, true);
        let mut rng = stream(1, Stream::Test);
        for _ in 0..1000 {
            let w = [
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-100.0..100.0),
            ];
            let back = t.to_world(t.to_normalized(w));
            for a in 0..3 {
                assert!((back[a] - w[a]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_voxel_mask_sampling() {
        let g = grid([4, 4, 4], [1.0; 3]);
        let m = Volume3D::mask_from_fn(g, |ijk| ijk == [1, 2, 3]);
        let t = make_norm_transform(&g, true);
        let mut rng = stream(3, Stream::Test);
        let b = sample_foreground(&m, &t, Domain::Target, 5, &mut rng, 3).unwrap();
        let want = t.to_normalized([1.0, 2.0, 3.0]);
        assert_eq!(b.coords, vec![want; 5]);
    }

    #[test]
    fn empty_mask_is_domain_error() {
        let g = grid([3, 3, 3], [1.0; 3]);
        let m = Volume3D::mask_from_fn(g, |_| false);
        let t = make_norm_transform(&g, true);
        let mut rng = stream(0, Stream::Test);
        assert!(matches!(
            sample_foreground(&m, &t, Domain::Source, 1, &mut rng, 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn sampling_is_deterministic_and_in_mask() {
        let g = Grid::new([9, 7, 5], [1.2, 0.9, 2.0], [3.0, -4.0, 1.0]).unwrap();
        let m = Volume3D::mask_from_fn(g, |[i, j, k]| (i + 2 * j + k) % 3 == 0);
        let t = make_norm_transform(&g, true);
        let a = sample_foreground(&m, &t, Domain::Target, 500, &mut stream(11, Stream::Test), 11)
            .unwrap();
        let b = sample_foreground(&m, &t, Domain::Target, 500, &mut stream(11, Stream::Test), 11)
            .unwrap();
        assert_eq!(a, b);
        for c in &a.coords {
            assert!(c.iter().all(|v| (-1.0..=1.0).contains(v)));
            let p = g.index_of(t.to_world(*c));
            let ijk = [p[0].round() as usize, p[1].round() as usize, p[2].round() as usize];
            for ax in 0..3 {
                assert!((p[ax] - ijk[ax] as f64).abs() < 1e-9);
            }
            assert_eq!(m.at(ijk[0], ijk[1], ijk[2]), 1.0);
        }
    }

    #[test]
    fn selection_frequencies_are_uniform() {
        // half of a 10x10x2 grid is foreground: 100 voxels, p = 1/100 each
        let g = grid([10, 10, 2], [1.0; 3]);
        let m = Volume3D::mask_from_fn(g, |[_, _, k]| k == 0);
        let t = make_norm_transform(&g, true);
        let sampler = ForegroundSampler::new(&m, &t, Domain::Source).unwrap();
        let n = 100_000usize;
        let batch = sampler.sample(n, &mut stream(5, Stream::Test), 5);
        let mut counts = std::collections::HashMap::new();
        for c in &batch.coords {
            let p = g.index_of(t.to_world(*c));
            let key = (p[0].round() as i64, p[1].round() as i64, p[2].round() as i64);
            *counts.entry(key).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 100);
        let p = 1.0 / 100.0;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for (&key, &count) in &counts {
            assert_eq!(key.2, 0);
            assert!(
                (count as f64 - mean).abs() < 4.0 * sd,
                "voxel {key:?} drawn {count} times, expected {mean} +- {sd}"
            );
        }
    }

    fn ramp_volume() -> (Volume3D, NormTransform) {
        let g = Grid::new([6, 5, 4], [1.5, 1.0, 2.0], [2.0, 0.0, -3.0]).unwrap();
        let data = (0..g.len())
            .map(|idx| {
                let [i, j, k] = g.ijk(idx);
                ((i * i) as f32) * 0.3 + (j as f32) * 1.7 - (k * j) as f32 * 0.2 + (i * k) as f32
            })
            .collect();
        let v = Volume3D::from_f32(g, data).unwrap();
        let t = make_norm_transform(&g, true);
        (v, t)
    }

    #[test]
    fn voxel_center_value_and_central_gradient() {
        let (v, t) = ramp_volume();
        let g = *v.grid();
        let (i, j, k) = (2usize, 2usize, 1usize);
        let coord = t.to_normalized(g.world([i as f64, j as f64, k as f64]));
        let (value, grad) = trilinear_sample(&v, coord, &t);
        assert!((value - v.at(i, j, k)).abs() < 1e-9);
        let central = [
            (v.at(i + 1, j, k) - v.at(i - 1, j, k)) / 2.0 / (g.spacing[0] * t.scale[0]),
            (v.at(i, j + 1, k) - v.at(i, j - 1, k)) / 2.0 / (g.spacing[1] * t.scale[1]),
            (v.at(i, j, k + 1) - v.at(i, j, k - 1)) / 2.0 / (g.spacing[2] * t.scale[2]),
        ];
        for a in 0..3 {
            assert!(
                (grad[a] - central[a]).abs() <= 1e-6 * central[a].abs().max(1.0),
                "axis {a}: {} vs {}",
                grad[a],
                central[a]
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences_inside_cell() {
        let (v, t) = ramp_volume();
        let interp = Interpolator::new(&v, &t);
        let g = *v.grid();
        let h = 1e-7;
        for p in [[1.3, 2.6, 0.4], [3.7, 0.2, 2.9], [0.5, 3.5, 1.5]] {
            let x = t.to_normalized(g.world(p));
            let (_, grad) = interp.sample(x);
            for a in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[a] += h;
                xm[a] -= h;
                let fd = (interp.value(xp) - interp.value(xm)) / (2.0 * h);
                assert!(
                    (fd - grad[a]).abs() <= 1e-6 * grad[a].abs().max(1.0),
                    "{fd} vs {}",
                    grad[a]
                );
            }
        }
    }

    #[test]
    fn constant_volume_has_zero_gradient() {
        let g = grid([4, 4, 4], [1.0; 3]);
        let v = Volume3D::from_f32(g, vec![2.5; 64]).unwrap();
        let t = make_norm_transform(&g, true);
        let interp = Interpolator::new(&v, &t);
        for x in [[0.1, -0.3, 0.7], [1.5, 0.0, -2.0], [0.0; 3]] {
            let (value, grad) = interp.sample(x);
            assert!((value - 2.5).abs() < 1e-12);
            assert_eq!(grad, [0.0; 3]);
        }
    }

    #[test]
    fn midpoint_between_voxels() {
        let g = grid([2, 1, 1], [1.0; 3]);
        let v = Volume3D::from_f32(g, vec![0.0, 1.0]).unwrap();
        let t = make_norm_transform(&g, true);
        let (value, _) = trilinear_sample(&v, t.to_normalized([0.5, 0.0, 0.0]), &t);
        assert!((value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn out_of_bounds_clamps() {
        let (v, t) = ramp_volume();
        let g = *v.grid();
        let interp = Interpolator::new(&v, &t);
        let (value, grad) = interp.sample(t.to_normalized(g.world([-3.0, 2.0, 1.0])));
        assert!((value - v.at(0, 2, 1)).abs() < 1e-9);
        assert_eq!(grad[0], 0.0);
        assert!(grad[1] != 0.0);
        let (value, grad) = interp.sample(t.to_normalized(g.world([5.0, 9.0, 1.0])));
        assert!((value - v.at(5, 4, 1)).abs() < 1e-9);
        assert_eq!(grad[1], 0.0);
    }

    #[test]
    fn linear_within_cell() {
        let (v, t) = ramp_volume();
        let g = *v.grid();
        let interp = Interpolator::new(&v, &t);
        // two queries in the same cell, differing along one axis only
        let a = g.world([2.2, 1.5, 1.5]);
        let b = g.world([2.8, 1.5, 1.5]);
        let m = [(a[0] + b[0]) / 2.0, a[1], a[2]];
        let va = interp.value(t.to_normalized(a));
        let vb = interp.value(t.to_normalized(b));
        let vm = interp.value(t.to_normalized(m));
        assert!((vm - (va + vb) / 2.0).abs() < 1e-9);
    }
}
