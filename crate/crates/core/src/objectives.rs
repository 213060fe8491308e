//! Loss terms and their adjoints w.r.t. the network outputs.
//!
//! Every term is a mean over samples, and every adjoint is the exact
//! derivative of that mean, so the trainer can push them straight into
//! [`ForwardPass::backward`].

use serde::{Deserialize, Serialize};

use crate::coords::Interpolator;
use crate::error::{Error, Result};
use crate::linalg::{cofactor, det, Mat3, Vec3};
use crate::siren::{Adjoints, DerivOrder, ForwardPass, Gradients, SirenParams, SpatialEval};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    Jacobian,
    SymmetricJacobian,
    Bending,
}

impl RegKind {
    /// Derivative order the networks must be evaluated to.
    pub fn order(self) -> DerivOrder {
        match self {
            RegKind::Jacobian | RegKind::SymmetricJacobian => DerivOrder::Jacobian,
            RegKind::Bending => DerivOrder::Hessian,
        }
    }

    pub fn default_alpha(self) -> f64 {
        match self {
            RegKind::Jacobian | RegKind::SymmetricJacobian => 0.05,
            RegKind::Bending => 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub reg_kind: RegKind,
}

impl LossWeights {
    pub fn for_kind(reg_kind: RegKind) -> Self {
        LossWeights {
            alpha: reg_kind.default_alpha(),
            beta: 1e-3,
            tau: 10.0,
            reg_kind,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Parameter(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Parameter(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Parameter(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::for_kind(RegKind::SymmetricJacobian)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data_f: f64,
    pub data_b: f64,
    pub reg_f: f64,
    pub reg_b: f64,
    pub cycle_fb: f64,
    pub cycle_bf: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.data_f,
            self.data_b,
            self.reg_f,
            self.reg_b,
            self.cycle_fb,
            self.cycle_bf,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

impl std::fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "data_f={} data_b={} reg_f={} reg_b={} cycle_fb={} cycle_bf={} total={}",
            self.data_f, self.data_b, self.reg_f, self.reg_b, self.cycle_fb, self.cycle_bf, self.total
        )
    }
}

pub fn total_loss(
    data_f: f64,
    data_b: f64,
    reg_f: f64,
    reg_b: f64,
    cycle_fb: f64,
    cycle_bf: f64,
    w: &LossWeights,
) -> LossBreakdown {
    LossBreakdown {
        data_f,
        data_b,
        reg_f,
        reg_b,
        cycle_fb,
        cycle_bf,
        total: data_f + data_b + w.alpha * (reg_f + reg_b) + w.beta * (cycle_fb + cycle_bf),
    }
}

// Relative variance floor below which an intensity vector counts as flat.
const FLAT: f64 = 1e-24;

/// Pearson correlation with its gradient w.r.t. both arguments. Flat input
/// gives zero correlation and zero gradients.
pub fn ncc_with_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "ncc over vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Contract("ncc needs at least two samples".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut saa, mut sbb, mut sab, mut qa, mut qb) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        saa += da * da;
        sbb += db * db;
        sab += da * db;
        qa += x * x;
        qb += y * y;
    }
    if saa <= FLAT * qa || sbb <= FLAT * qb || saa == 0.0 || sbb == 0.0 {
        return Ok((0.0, vec![0.0; a.len()], vec![0.0; b.len()]));
    }
    let denom = (saa * sbb).sqrt();
    let r = sab / denom;
    // mean-centring terms cancel in the gradient since the deviations sum to zero
    let ga = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (y - mb) / denom - r * (x - ma) / saa)
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x - ma) / denom - r * (y - mb) / sbb)
        .collect();
    Ok((r, ga, gb))
}

pub fn ncc(a: &[f64], b: &[f64]) -> Result<f64> {
    ncc_with_grad(a, b).map(|(r, _, _)| r)
}

/// `-NCC(fixed(x), moving(phi(x)))` over the whole batch, with `dL/dphi`.
///
/// `coords` live in the fixed image's normalized space and `phi` in the
/// moving image's.
pub fn data_loss(
    fixed: &Interpolator,
    moving: &Interpolator,
    coords: &[Vec3],
    phi: &[Vec3],
) -> Result<(f64, Vec<Vec3>)> {
    if coords.len() != phi.len() {
        return Err(Error::Contract(format!(
            "{} coordinates but {} deformed points",
            coords.len(),
            phi.len()
        )));
    }
    let a: Vec<f64> = coords.iter().map(|&x| fixed.value(x)).collect();
    let (b, grads): (Vec<f64>, Vec<Vec3>) = phi.iter().map(|&y| moving.sample(y)).unzip();
    let (r, _, gb) = ncc_with_grad(&a, &b)?;
    let adj = gb
        .iter()
        .zip(&grads)
        .map(|(&g, d)| [-g * d[0], -g * d[1], -g * d[2]])
        .collect();
    Ok((-r, adj))
}

fn jacobians(evals: &[SpatialEval]) -> Result<Vec<Mat3>> {
    evals
        .iter()
        .map(|e| {
            e.jac
                .ok_or_else(|| Error::Contract("Jacobian penalty needs first-order evaluations".into()))
        })
        .collect()
}

fn scaled(m: &Mat3, s: f64) -> Mat3 {
    let mut out = *m;
    for row in &mut out {
        for v in row {
            *v *= s;
        }
    }
    out
}

/// Mean `|1 - det J|`.
pub fn jac_det_loss(evals: &[SpatialEval]) -> Result<(f64, Vec<Mat3>)> {
    let jacs = jacobians(evals)?;
    if jacs.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = jacs.len() as f64;
    let mut loss = 0.0;
    let adj = jacs
        .iter()
        .map(|j| {
            let d = det(j);
            loss += (1.0 - d).abs();
            // d|1-d|/dd = sign(d-1), zero at the kink
            let s = if d > 1.0 {
                1.0
            } else if d < 1.0 {
                -1.0
            } else {
                0.0
            };
            scaled(&cofactor(j), s / n)
        })
        .collect();
    Ok((loss / n, adj))
}

/// Per-sample symmetric penalty `min((d-1)^2/d, tau)` and its derivative in `d`.
pub fn sym_jac_penalty(d: f64, tau: f64) -> (f64, f64) {
    if !(d > 0.0) {
        return (tau, 0.0);
    }
    let v = (d - 1.0) * (d - 1.0) / d;
    if v >= tau {
        (tau, 0.0)
    } else {
        (v, 1.0 - 1.0 / (d * d))
    }
}

/// Mean clipped symmetric determinant penalty.
pub fn sym_jac_det_loss(evals: &[SpatialEval], tau: f64) -> Result<(f64, Vec<Mat3>)> {
    let jacs = jacobians(evals)?;
    if jacs.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = jacs.len() as f64;
    let mut loss = 0.0;
    let adj = jacs
        .iter()
        .map(|j| {
            let (v, dv) = sym_jac_penalty(det(j), tau);
            loss += v;
            if dv == 0.0 {
                [[0.0; 3]; 3]
            } else {
                scaled(&cofactor(j), dv / n)
            }
        })
        .collect();
    Ok((loss / n, adj))
}

/// Mean bending energy: squared pure second derivatives plus twice the
/// squared mixed ones, summed over output components.
pub fn bending_loss(evals: &[SpatialEval]) -> Result<(f64, Vec<[Mat3; 3]>)> {
    if evals.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = evals.len() as f64;
    let mut loss = 0.0;
    let mut adj = Vec::with_capacity(evals.len());
    for e in evals {
        let h = e
            .hess
            .ok_or_else(|| Error::Contract("bending energy needs second-order evaluations".into()))?;
        let mut a = [[[0.0; 3]; 3]; 3];
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    // summing the full matrix counts each mixed term twice
                    loss += h[k][i][j] * h[k][i][j];
                    a[k][i][j] = 2.0 * h[k][i][j] / n;
                }
            }
        }
        adj.push(a);
    }
    Ok((loss / n, adj))
}

/// Adds `scale * reg` adjoints for the configured regularizer; returns the
/// unscaled loss.
pub fn add_regularizer(
    w: &LossWeights,
    evals: &[SpatialEval],
    scale: f64,
    adj: &mut Adjoints,
) -> Result<f64> {
    match w.reg_kind {
        RegKind::Jacobian => {
            let (l, a) = jac_det_loss(evals)?;
            adj.add_jac(scale, &a);
            Ok(l)
        }
        RegKind::SymmetricJacobian => {
            let (l, a) = sym_jac_det_loss(evals, w.tau)?;
            adj.add_jac(scale, &a);
            Ok(l)
        }
        RegKind::Bending => {
            let (l, a) = bending_loss(evals)?;
            adj.add_hess(scale, &a);
            Ok(l)
        }
    }
}

/// Cycle error of `outer` evaluated at already-mapped points `mapped =
/// inner(x)`. Returns the loss, `dL/dmapped` (to be pushed back through the
/// inner network) and the gradient for `outer`'s parameters.
pub fn cycle_terms(
    x: &[Vec3],
    mapped: &[Vec3],
    outer: &SirenParams,
) -> Result<(f64, Vec<Vec3>, Gradients)> {
    if x.len() != mapped.len() {
        return Err(Error::Contract(format!(
            "{} coordinates but {} mapped points",
            x.len(),
            mapped.len()
        )));
    }
    if x.is_empty() {
        return Ok((0.0, Vec::new(), outer.zeros_like()));
    }
    let n = x.len() as f64;
    let pass = ForwardPass::new(outer, mapped, DerivOrder::Value);
    let z = pass.phi();
    let mut loss = 0.0;
    let mut adj = Adjoints::zeros(x.len(), DerivOrder::Value);
    for ((a, zi), xi) in adj.phi.iter_mut().zip(&z).zip(x) {
        for k in 0..3 {
            let r = zi[k] - xi[k];
            loss += r * r;
            a[k] = 2.0 * r / n;
        }
    }
    let (g_outer, mapped_adj) = pass.backward(&adj)?;
    Ok((loss / n, mapped_adj, g_outer))
}

/// Mean `|outer(inner(x)) - x|^2` with gradients for `(inner, outer)`.
pub fn cycle_loss(
    x: &[Vec3],
    inner: &SirenParams,
    outer: &SirenParams,
) -> Result<(f64, Gradients, Gradients)> {
    let pass = ForwardPass::new(inner, x, DerivOrder::Value);
    let (loss, mapped_adj, g_outer) = cycle_terms(x, &pass.phi(), outer)?;
    let adj = Adjoints {
        phi: mapped_adj,
        jac: None,
        hess: None,
    };
    let (g_inner, _) = pass.backward(&adj)?;
    Ok((loss, g_inner, g_outer))
}
