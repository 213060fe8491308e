//! Consensus inference from a trained pair.
//!
//! The forward network gives one estimate of where a target point lands in
//! the source image. The backward network, inverted locally around the
//! forward estimate by a second-order Taylor step, gives another. The
//! result is their midpoint and the distance between them, in mm, is the
//! uncertainty.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coords::{Interpolator, NormTransform};
use crate::error::{Error, Result};
use crate::linalg::{add, condition_number, inverse, mat_vec, norm, scale, sub, Mat3, Vec3};
use crate::siren::{eval_spatial, DerivOrder, SirenParams, SpatialEval};
use crate::trainer::InrPair;
use crate::volume::{Dtype, Grid, LandmarkSet, Volume3D};

/// Anything that can be evaluated like a deformation network.
pub trait Field: Sync {
    fn eval(&self, pts: &[Vec3], order: DerivOrder) -> Vec<SpatialEval>;
}

impl Field for SirenParams {
    fn eval(&self, pts: &[Vec3], order: DerivOrder) -> Vec<SpatialEval> {
        eval_spatial(self, pts, order)
    }
}

/// `x -> A x + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineField {
    pub a: Mat3,
    pub b: Vec3,
}

impl Field for AffineField {
    fn eval(&self, pts: &[Vec3], order: DerivOrder) -> Vec<SpatialEval> {
        pts.iter()
            .map(|&x| SpatialEval {
                phi: add(mat_vec(&self.a, x), self.b),
                jac: (order >= DerivOrder::Jacobian).then_some(self.a),
                hess: (order >= DerivOrder::Hessian).then_some([[[0.0; 3]; 3]; 3]),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Jacobians with a larger (Frobenius) condition number are not inverted.
    pub cond_threshold: f64,
    /// Uncertainty cap, also reported for degenerate samples.
    pub saturation_mm: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            cond_threshold: 1e6,
            saturation_mm: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeformationSample {
    pub x: Vec3,
    pub fwd: Vec3,
    pub inv_b: Vec3,
    pub mid: Vec3,
    pub uncertainty_mm: f64,
    pub degenerate: bool,
}

/// `H[v, v]` per output component.
fn hess_quad(h: &[Mat3; 3], v: Vec3) -> Vec3 {
    std::array::from_fn(|k| {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += h[k][i][j] * v[i] * v[j];
            }
        }
        s
    })
}

/// Second-order estimate of `B^{-1}(x)` expanded around `y = F(x)`, given
/// `B` and its derivatives at `y`. Returns `None` when the Jacobian is too
/// ill-conditioned to invert.
pub fn taylor_inverse(x: Vec3, y: Vec3, at_y: &SpatialEval, cond_threshold: f64) -> Option<Vec3> {
    let j = at_y.jac.expect("first-order evaluation");
    let cond = condition_number(&j);
    if !(cond <= cond_threshold) {
        return None;
    }
    let j_inv = inverse(&j)?;
    let delta = sub(x, at_y.phi);
    let v = mat_vec(&j_inv, delta);
    let second = match &at_y.hess {
        Some(h) => mat_vec(&j_inv, hess_quad(h, v)),
        None => [0.0; 3],
    };
    let out = sub(add(y, v), scale(second, 0.5));
    out.iter().all(|c| c.is_finite()).then_some(out)
}

/// Inverts `backward` near `forward(x)` for each query; returns
/// `(forward(x), estimate, degenerate)` per point.
pub fn invert_backward_with(
    forward: &dyn Field,
    backward: &dyn Field,
    xs: &[Vec3],
    cond_threshold: f64,
) -> Vec<(Vec3, Vec3, bool)> {
    let ys: Vec<Vec3> = forward.eval(xs, DerivOrder::Value).iter().map(|e| e.phi).collect();
    let at_y = backward.eval(&ys, DerivOrder::Hessian);
    xs.par_iter()
        .zip(&ys)
        .zip(&at_y)
        .map(|((&x, &y), e)| match taylor_inverse(x, y, e, cond_threshold) {
            Some(inv) => (y, inv, false),
            // fall back to the forward estimate so the midpoint stays defined
            None => (y, y, true),
        })
        .collect()
}

pub fn invert_backward(pair: &InrPair, x: Vec3, cfg: &InferenceConfig) -> (Vec3, bool) {
    let (_, inv, deg) =
        invert_backward_with(&pair.forward, &pair.backward, &[x], cfg.cond_threshold)[0];
    (inv, deg)
}

/// Consensus samples for normalized target-domain queries, with generic
/// fields and the source transform that converts disagreement to mm.
pub fn cc_transform_with(
    forward: &dyn Field,
    backward: &dyn Field,
    t_source: &NormTransform,
    xs: &[Vec3],
    cfg: &InferenceConfig,
) -> Vec<DeformationSample> {
    invert_backward_with(forward, backward, xs, cfg.cond_threshold)
        .into_iter()
        .zip(xs)
        .map(|((fwd, inv_b, degenerate), &x)| {
            let mid = std::array::from_fn(|k| (fwd[k] + inv_b[k]) / 2.0);
            let uncertainty_mm = if degenerate {
                cfg.saturation_mm
            } else {
                norm(t_source.delta_to_mm(sub(fwd, inv_b))).min(cfg.saturation_mm)
            };
            DeformationSample {
                x,
                fwd,
                inv_b,
                mid,
                uncertainty_mm,
                degenerate,
            }
        })
        .collect()
}

pub fn cc_transform(pair: &InrPair, xs: &[Vec3], cfg: &InferenceConfig) -> Vec<DeformationSample> {
    cc_transform_with(&pair.forward, &pair.backward, &pair.t_source, xs, cfg)
}

/// Displacement (mm, per axis) and uncertainty volumes on the target grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseField {
    pub disp: [Volume3D; 3],
    pub uncertainty: Volume3D,
}

fn roi_points(grid: &Grid, roi: Option<&Volume3D>) -> Result<Vec<usize>> {
    match roi {
        Some(m) => {
            if m.grid() != grid {
                return Err(Error::Contract("roi mask is not on the output grid".into()));
            }
            m.check_mask()?;
            Ok(m.foreground())
        }
        None => Ok((0..grid.len()).collect()),
    }
}

fn f32_volume(grid: Grid, data: Vec<f32>) -> Volume3D {
    Volume3D::from_f32(grid, data).expect("length matches grid")
}

fn roi_world(grid: &Grid, idx: &[usize]) -> Vec<Vec3> {
    idx.iter()
        .map(|&i| {
            let [a, b, c] = grid.ijk(i);
            grid.world([a as f64, b as f64, c as f64])
        })
        .collect()
}

fn raster(grid: &Grid, idx: &[usize], disp: impl Iterator<Item = Vec3>) -> [Volume3D; 3] {
    let mut out = [vec![0f32; grid.len()], vec![0f32; grid.len()], vec![0f32; grid.len()]];
    for (&i, d) in idx.iter().zip(disp) {
        for k in 0..3 {
            out[k][i] = d[k] as f32;
        }
    }
    out.map(|c| f32_volume(*grid, c))
}

/// Rasterizes consensus displacements over the roi voxels of `grid`
/// (target domain); zero outside.
pub fn dense_field(
    pair: &InrPair,
    grid: &Grid,
    roi: Option<&Volume3D>,
    cfg: &InferenceConfig,
) -> Result<DenseField> {
    let idx = roi_points(grid, roi)?;
    let xs: Vec<Vec3> = roi_world(grid, &idx)
        .into_iter()
        .map(|w| pair.t_target.to_normalized(w))
        .collect();
    let samples = cc_transform(pair, &xs, cfg);
    let mut unc = vec![0f32; grid.len()];
    for (&i, s) in idx.iter().zip(&samples) {
        unc[i] = s.uncertainty_mm as f32;
    }
    // both ends through the same inverse map, so a zero field is exactly zero
    let disp = samples
        .iter()
        .map(|s| sub(pair.t_source.to_world(s.mid), pair.t_target.to_world(s.x)));
    Ok(DenseField {
        disp: raster(grid, &idx, disp),
        uncertainty: f32_volume(*grid, unc),
    })
}

/// Displacements of a lone forward network over the roi voxels of `grid`.
pub fn forward_dense_field(
    forward: &dyn Field,
    t_source: &NormTransform,
    t_target: &NormTransform,
    grid: &Grid,
    roi: Option<&Volume3D>,
) -> Result<[Volume3D; 3]> {
    let idx = roi_points(grid, roi)?;
    let xs: Vec<Vec3> = roi_world(grid, &idx)
        .into_iter()
        .map(|w| t_target.to_normalized(w))
        .collect();
    let ys = forward.eval(&xs, DerivOrder::Value);
    let disp = xs
        .iter()
        .zip(&ys)
        .map(|(&x, e)| sub(t_source.to_world(e.phi), t_target.to_world(x)));
    Ok(raster(grid, &idx, disp))
}

/// Resamples `moving` at every voxel of the field's grid displaced by the
/// field (mm), trilinear with border clamp.
pub fn warp_image(moving: &Volume3D, disp: &[Volume3D; 3]) -> Result<Volume3D> {
    let grid = *disp[0].grid();
    if disp[1].grid() != &grid || disp[2].grid() != &grid {
        return Err(Error::Contract("displacement components lie on different grids".into()));
    }
    // identity transform: voxel lookups go through sample_index directly
    let interp = Interpolator::new(moving, &crate::coords::make_norm_transform(moving.grid(), false));
    let mg = moving.grid();
    let comps: Vec<Vec<f64>> = disp.iter().map(|d| d.to_f64()).collect();
    let out: Vec<f32> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let [a, b, c] = grid.ijk(i);
            let w = grid.world([a as f64, b as f64, c as f64]);
            let p = [w[0] + comps[0][i], w[1] + comps[1][i], w[2] + comps[2][i]];
            interp.sample_index(mg.index_of(p)).0 as f32
        })
        .collect();
    let warped = f32_volume(grid, out);
    Ok(match moving.dtype() {
        Dtype::Float32 => warped,
        Dtype::Uint8 => {
            let data = warped
                .to_f64()
                .iter()
                .map(|v| v.round().clamp(0.0, 255.0) as u8)
                .collect();
            Volume3D::from_u8(grid, data)?
        }
    })
}

/// Landmarks mapped from target world mm to source world mm.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedLandmarks {
    /// Midpoint estimates.
    pub consensus: LandmarkSet,
    /// Forward network alone.
    pub forward_only: LandmarkSet,
    pub uncertainty_mm: Vec<f64>,
    pub degenerate: Vec<bool>,
}

fn with_points(lm: &LandmarkSet, points: Vec<Vec3>) -> LandmarkSet {
    LandmarkSet {
        points,
        labels: lm.labels.clone(),
    }
}

pub fn transform_landmarks_with(
    forward: &dyn Field,
    backward: &dyn Field,
    t_source: &NormTransform,
    t_target: &NormTransform,
    lm: &LandmarkSet,
    cfg: &InferenceConfig,
) -> TransformedLandmarks {
    let xs: Vec<Vec3> = lm.points.iter().map(|&p| t_target.to_normalized(p)).collect();
    let samples = cc_transform_with(forward, backward, t_source, &xs, cfg);
    TransformedLandmarks {
        consensus: with_points(lm, samples.iter().map(|s| t_source.to_world(s.mid)).collect()),
        forward_only: with_points(lm, samples.iter().map(|s| t_source.to_world(s.fwd)).collect()),
        uncertainty_mm: samples.iter().map(|s| s.uncertainty_mm).collect(),
        degenerate: samples.iter().map(|s| s.degenerate).collect(),
    }
}

pub fn transform_landmarks(pair: &InrPair, lm: &LandmarkSet, cfg: &InferenceConfig) -> TransformedLandmarks {
    transform_landmarks_with(&pair.forward, &pair.backward, &pair.t_source, &pair.t_target, lm, cfg)
}

/// Landmarks through a lone forward network.
pub fn forward_landmarks(
    forward: &dyn Field,
    t_source: &NormTransform,
    t_target: &NormTransform,
    lm: &LandmarkSet,
) -> LandmarkSet {
    let xs: Vec<Vec3> = lm.points.iter().map(|&p| t_target.to_normalized(p)).collect();
    let ys = forward.eval(&xs, DerivOrder::Value);
    with_points(lm, ys.iter().map(|e| t_source.to_world(e.phi)).collect())
}
