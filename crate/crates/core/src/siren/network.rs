use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3, IDENTITY};
use crate::rng::Rng;

use super::fastmath::sincos_slice;
use super::pool;

/// Samples per work unit. Batches are split into chunks of this size and
/// per-chunk gradients are summed in chunk order, so results do not depend
/// on the number of worker threads.
pub const CHUNK: usize = 512;

/// Second-derivative streams, upper triangle of the symmetric Hessian.
const PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

#[inline]
fn pair_index(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    match (a, b) {
        (0, 0) => 0,
        (0, 1) => 1,
        (0, 2) => 2,
        (1, 1) => 3,
        (1, 2) => 4,
        _ => 5,
    }
}

/// Highest spatial derivative propagated through the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DerivOrder {
    Value = 0,
    Jacobian = 1,
    Hessian = 2,
}

impl DerivOrder {
    pub fn from_u8(order: u8) -> Result<Self> {
        match order {
            0 => Ok(DerivOrder::Value),
            1 => Ok(DerivOrder::Jacobian),
            2 => Ok(DerivOrder::Hessian),
            o => Err(Error::Contract(format!("derivative order must be 0, 1 or 2, got {o}"))),
        }
    }

    /// Rows propagated per sample: value, 3 first and 6 second derivatives.
    #[inline]
    pub fn streams(self) -> usize {
        match self {
            DerivOrder::Value => 1,
            DerivOrder::Jacobian => 4,
            DerivOrder::Hessian => 10,
        }
    }
}

/// One fully connected layer, `weight` is row-major `fan_out x fan_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            fan_in,
            fan_out,
            weight: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
        }
    }
}

/// Sinusoidal MLP `u(x)`; the deformation is `phi(x) = x + u(x)`.
/// Every layer but the last applies `sin(omega0 * (W h + b))`; the last is
/// linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SirenParams {
    pub layers: Vec<Layer>,
    pub omega0: f64,
}

/// Gradients share the parameter layout.
pub type Gradients = SirenParams;

impl SirenParams {
    /// Network with every parameter zero (the identity deformation).
    pub fn zeros(hidden_layers: usize, width: usize, omega0: f64) -> Self {
        let sizes = layer_sizes(hidden_layers, width);
        SirenParams {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            omega0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        SirenParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.fan_in, l.fan_out))
                .collect(),
            omega0: self.omega0,
        }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].fan_in];
        sizes.extend(self.layers.iter().map(|l| l.fan_out));
        sizes
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameter blocks in a fixed order with their names.
    pub fn blocks(&self) -> Vec<(String, &[f64])> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("layer{i}.weight"), l.weight.as_slice()),
                    (format!("layer{i}.bias"), l.bias.as_slice()),
                ]
            })
            .collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn check_shapes(&self) -> Result<()> {
        if self.layers.len() < 2 {
            return Err(Error::Contract("network needs at least two layers".into()));
        }
        if self.layers[0].fan_in != 3 || self.layers.last().unwrap().fan_out != 3 {
            return Err(Error::Contract("network must map 3 -> 3".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weight.len() != l.fan_in * l.fan_out || l.bias.len() != l.fan_out {
                return Err(Error::Contract(format!("layer {i} buffers do not match its shape")));
            }
            if i > 0 && self.layers[i - 1].fan_out != l.fan_in {
                return Err(Error::Contract(format!("layer {i} input does not chain")));
            }
        }
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return Err(Error::Contract("omega0 must be positive".into()));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &SirenParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.fan_in == b.fan_in && a.fan_out == b.fan_out)
    }

    pub fn add_assign(&mut self, other: &SirenParams) {
        self.axpy(1.0, other);
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &SirenParams) {
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in l.weight.iter_mut().zip(&o.weight) {
                *x += a * y;
            }
            for (x, y) in l.bias.iter_mut().zip(&o.bias) {
                *x += a * y;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(&l.bias))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(&l.bias))
            .all(|v| v.is_finite())
    }
}

fn layer_sizes(hidden_layers: usize, width: usize) -> Vec<usize> {
    let mut sizes = vec![3];
    sizes.extend(std::iter::repeat(width).take(hidden_layers));
    sizes.push(3);
    sizes
}

/// Sinusoidal-network initialization: first layer `U(-1/fan_in, 1/fan_in)`,
/// hidden layers `U(-c, c)` with `c = sqrt(6 / fan_in) / omega0`, output
/// layer scaled by a further `1 / omega0`, zero biases.
pub fn init_siren(hidden_layers: usize, width: usize, omega0: f64, rng: &mut Rng) -> SirenParams {
    assert!(hidden_layers > 0 && width > 0, "layer counts must be positive");
    let sizes = layer_sizes(hidden_layers, width);
    let last = sizes.len() - 2;
    let layers = sizes
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = if i == 0 {
                1.0 / fan_in as f64
            } else {
                let c = (6.0 / fan_in as f64).sqrt() / omega0;
                if i == last {
                    c / omega0
                } else {
                    c
                }
            };
            let weight = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            Layer {
                fan_in,
                fan_out,
                weight,
                bias: vec![0.0; fan_out],
            }
        })
        .collect();
    SirenParams { layers, omega0 }
}

/// Deformation and its spatial derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialEval {
    pub phi: Vec3,
    /// `jac[k][i] = d phi_k / d x_i`.
    pub jac: Option<Mat3>,
    /// `hess[k][i][j] = d^2 phi_k / d x_i d x_j`.
    pub hess: Option<[Mat3; 3]>,
}

/// Loss adjoints w.r.t. the outputs of a forward pass, one entry per sample.
#[derive(Debug, Clone, Default)]
pub struct Adjoints {
    pub phi: Vec<Vec3>,
    pub jac: Option<Vec<Mat3>>,
    pub hess: Option<Vec<[Mat3; 3]>>,
}

impl Adjoints {
    pub fn zeros(n: usize, order: DerivOrder) -> Self {
        Adjoints {
            phi: vec![[0.0; 3]; n],
            jac: (order >= DerivOrder::Jacobian).then(|| vec![[[0.0; 3]; 3]; n]),
            hess: (order >= DerivOrder::Hessian).then(|| vec![[[[0.0; 3]; 3]; 3]; n]),
        }
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn add_phi(&mut self, scale: f64, phi: &[Vec3]) {
        for (a, b) in self.phi.iter_mut().zip(phi) {
            for k in 0..3 {
                a[k] += scale * b[k];
            }
        }
    }

    pub fn add_jac(&mut self, scale: f64, jac: &[Mat3]) {
        let n = self.phi.len();
        let dst = self.jac.get_or_insert_with(|| vec![[[0.0; 3]; 3]; n]);
        for (a, b) in dst.iter_mut().zip(jac) {
            for r in 0..3 {
                for c in 0..3 {
                    a[r][c] += scale * b[r][c];
                }
            }
        }
    }

    pub fn add_hess(&mut self, scale: f64, hess: &[[Mat3; 3]]) {
        let n = self.phi.len();
        let dst = self.hess.get_or_insert_with(|| vec![[[[0.0; 3]; 3]; 3]; n]);
        for (a, b) in dst.iter_mut().zip(hess) {
            for k in 0..3 {
                for r in 0..3 {
                    for c in 0..3 {
                        a[k][r][c] += scale * b[k][r][c];
                    }
                }
            }
        }
    }

    fn required_order(&self) -> DerivOrder {
        if self.hess.is_some() {
            DerivOrder::Hessian
        } else if self.jac.is_some() {
            DerivOrder::Jacobian
        } else {
            DerivOrder::Value
        }
    }
}

/// Intermediate values of one chunk, kept for the reverse pass.
struct ChunkTape {
    n: usize,
    /// Input of each layer, `rows x fan_in`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations `omega0 (W h + b)` of each sine layer, `rows x fan_out`.
    pre: Vec<Vec<f64>>,
    /// sin/cos of the value-row pre-activations, `n x fan_out`.
    sin: Vec<Vec<f64>>,
    cos: Vec<Vec<f64>>,
    /// Linear output `u` and its derivatives, `rows x 3`.
    out: Vec<f64>,
}

/// Result of a forward pass, retaining what the reverse pass needs.
pub struct ForwardPass<'a> {
    params: &'a SirenParams,
    order: DerivOrder,
    coords: Vec<Vec3>,
    chunks: Vec<ChunkTape>,
}

/// `c (rows x n) = alpha * a (rows x k) * b^T` where `b` is row-major `n x k`.
fn gemm_abt(rows: usize, k: usize, n: usize, alpha: f64, a: &[f64], b: &[f64], c: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            rows, k, n, alpha,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), 1, k as isize,
            0.0, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c (rows x n) = alpha * a (rows x k) * b` with `b` row-major `k x n`.
fn gemm_ab(rows: usize, k: usize, n: usize, alpha: f64, a: &[f64], b: &[f64], c: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            rows, k, n, alpha,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            0.0, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c (m x n) += alpha * a^T * b` for row-major `a (rows x m)`, `b (rows x n)`.
fn gemm_atb_acc(rows: usize, m: usize, n: usize, alpha: f64, a: &[f64], b: &[f64], c: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            m, rows, n, alpha,
            a.as_ptr(), 1, m as isize,
            b.as_ptr(), n as isize, 1,
            1.0, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

fn forward_chunk(p: &SirenParams, coords: &[Vec3], order: DerivOrder) -> ChunkTape {
    let n = coords.len();
    let ks = order.streams();
    let rows = n * ks;
    let mut x0 = pool::take_zeroed(rows * 3);
    for (s, c) in coords.iter().enumerate() {
        x0[s * ks * 3..s * ks * 3 + 3].copy_from_slice(c);
        if ks > 1 {
            for i in 0..3 {
                x0[(s * ks + 1 + i) * 3 + i] = 1.0;
            }
        }
    }
    let w0 = p.omega0;
    let last = p.layers.len() - 1;
    let mut inputs = Vec::with_capacity(p.layers.len());
    let mut pre = Vec::with_capacity(last);
    let mut sins = Vec::with_capacity(last);
    let mut coss = Vec::with_capacity(last);
    let mut h = x0;
    for layer in &p.layers[..last] {
        let width = layer.fan_out;
        let mut a = pool::take(rows * width);
        gemm_abt(rows, layer.fan_in, width, w0, &h, &layer.weight, &mut a);
        let mut out = pool::take(rows * width);
        let mut sn = pool::take(n * width);
        let mut cs = pool::take(n * width);
        for s in 0..n {
            let base = s * ks;
            {
                let row = &mut a[base * width..(base + 1) * width];
                for (v, b) in row.iter_mut().zip(&layer.bias) {
                    *v += w0 * b;
                }
            }
            sincos_slice(
                &a[base * width..(base + 1) * width],
                &mut sn[s * width..(s + 1) * width],
                &mut cs[s * width..(s + 1) * width],
            );
            out[base * width..(base + 1) * width].copy_from_slice(&sn[s * width..(s + 1) * width]);
            if ks == 1 {
                continue;
            }
            for i in 0..3 {
                let r = (base + 1 + i) * width;
                for m in 0..width {
                    out[r + m] = cs[s * width + m] * a[r + m];
                }
            }
            if ks == 10 {
                for (pidx, &(i, j)) in PAIRS.iter().enumerate() {
                    let r = (base + 4 + pidx) * width;
                    let ri = (base + 1 + i) * width;
                    let rj = (base + 1 + j) * width;
                    for m in 0..width {
                        out[r + m] = cs[s * width + m] * a[r + m]
                            - sn[s * width + m] * a[ri + m] * a[rj + m];
                    }
                }
            }
        }
        inputs.push(h);
        pre.push(a);
        sins.push(sn);
        coss.push(cs);
        h = out;
    }
    let layer = &p.layers[last];
    let mut u = pool::take(rows * 3);
    gemm_abt(rows, layer.fan_in, 3, 1.0, &h, &layer.weight, &mut u);
    for s in 0..n {
        for k in 0..3 {
            u[s * ks * 3 + k] += layer.bias[k];
        }
    }
    inputs.push(h);
    ChunkTape {
        n,
        inputs,
        pre,
        sin: sins,
        cos: coss,
        out: u,
    }
}

/// Reverse pass of one chunk; accumulates into `grads` and returns the
/// adjoint w.r.t. the input coordinates.
fn backward_chunk(
    p: &SirenParams,
    tape: &ChunkTape,
    order: DerivOrder,
    adj: &Adjoints,
    offset: usize,
    grads: &mut Gradients,
) -> Vec<Vec3> {
    let n = tape.n;
    let ks = order.streams();
    let rows = n * ks;
    let w0 = p.omega0;
    let mut ub = pool::take_zeroed(rows * 3);
    for s in 0..n {
        let g = offset + s;
        let base = s * ks;
        ub[base * 3..base * 3 + 3].copy_from_slice(&adj.phi[g]);
        if let (Some(jac), true) = (&adj.jac, ks > 1) {
            let ja = &jac[g];
            for i in 0..3 {
                for k in 0..3 {
                    ub[(base + 1 + i) * 3 + k] = ja[k][i];
                }
            }
        }
        if let (Some(hess), true) = (&adj.hess, ks == 10) {
            let ha = &hess[g];
            for (pidx, &(i, j)) in PAIRS.iter().enumerate() {
                for k in 0..3 {
                    let mut v = ha[k][i][j];
                    if i != j {
                        v += ha[k][j][i];
                    }
                    ub[(base + 4 + pidx) * 3 + k] = v;
                }
            }
        }
    }
    let last = p.layers.len() - 1;
    {
        let layer = &p.layers[last];
        let g = &mut grads.layers[last];
        gemm_atb_acc(rows, 3, layer.fan_in, 1.0, &ub, &tape.inputs[last], &mut g.weight);
        for s in 0..n {
            for k in 0..3 {
                g.bias[k] += ub[s * ks * 3 + k];
            }
        }
    }
    let mut hb = pool::take(rows * p.layers[last].fan_in);
    gemm_ab(rows, 3, p.layers[last].fan_in, 1.0, &ub, &p.layers[last].weight, &mut hb);

    for l in (0..last).rev() {
        let layer = &p.layers[l];
        let width = layer.fan_out;
        let a = &tape.pre[l];
        let sn = &tape.sin[l];
        let cs = &tape.cos[l];
        let mut ab = pool::take(rows * width);
        for s in 0..n {
            let base = s * ks;
            for m in 0..width {
                let sv = sn[s * width + m];
                let cv = cs[s * width + m];
                let mut a0b = cv * hb[base * width + m];
                if ks > 1 {
                    let ai = [
                        a[(base + 1) * width + m],
                        a[(base + 2) * width + m],
                        a[(base + 3) * width + m],
                    ];
                    let mut aib = [0.0; 3];
                    for i in 0..3 {
                        let hbi = hb[(base + 1 + i) * width + m];
                        aib[i] = cv * hbi;
                        a0b -= sv * hbi * ai[i];
                    }
                    if ks == 10 {
                        for (pidx, &(i, j)) in PAIRS.iter().enumerate() {
                            let r = (base + 4 + pidx) * width + m;
                            let hbp = hb[r];
                            ab[r] = cv * hbp;
                            if i == j {
                                aib[i] -= 2.0 * sv * hbp * ai[i];
                            } else {
                                aib[i] -= sv * hbp * ai[j];
                                aib[j] -= sv * hbp * ai[i];
                            }
                            a0b -= hbp * (sv * a[r] + cv * ai[i] * ai[j]);
                        }
                    }
                    for i in 0..3 {
                        ab[(base + 1 + i) * width + m] = aib[i];
                    }
                }
                ab[base * width + m] = a0b;
            }
        }
        let g = &mut grads.layers[l];
        gemm_atb_acc(rows, width, layer.fan_in, w0, &ab, &tape.inputs[l], &mut g.weight);
        for s in 0..n {
            let row = &ab[s * ks * width..(s * ks + 1) * width];
            for (gb, v) in g.bias.iter_mut().zip(row) {
                *gb += w0 * v;
            }
        }
        let mut prev = pool::take(rows * layer.fan_in);
        gemm_ab(rows, width, layer.fan_in, w0, &ab, &layer.weight, &mut prev);
        pool::give(ab);
        pool::give(std::mem::replace(&mut hb, prev));
    }
    pool::give(ub);
    // phi = x + u: identity path plus the value rows of the first-layer adjoint
    let xb = (0..n)
        .map(|s| {
            let r = s * ks * 3;
            let d = &adj.phi[offset + s];
            [d[0] + hb[r], d[1] + hb[r + 1], d[2] + hb[r + 2]]
        })
        .collect();
    pool::give(hb);
    xb
}

impl Drop for ChunkTape {
    fn drop(&mut self) {
        let bufs = self
            .inputs
            .drain(..)
            .chain(self.pre.drain(..))
            .chain(self.sin.drain(..))
            .chain(self.cos.drain(..))
            .chain(std::iter::once(std::mem::take(&mut self.out)));
        for b in bufs {
            pool::give(b);
        }
    }
}

impl<'a> ForwardPass<'a> {
    pub fn new(params: &'a SirenParams, coords: &[Vec3], order: DerivOrder) -> Self {
        let chunks = coords
            .par_chunks(CHUNK)
            .map(|c| forward_chunk(params, c, order))
            .collect();
        ForwardPass {
            params,
            order,
            coords: coords.to_vec(),
            chunks,
        }
    }

    pub fn order(&self) -> DerivOrder {
        self.order
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Deformed positions `phi(x)` only.
    pub fn phi(&self) -> Vec<Vec3> {
        let ks = self.order.streams();
        let mut out = Vec::with_capacity(self.coords.len());
        let mut g = 0;
        for tape in &self.chunks {
            for s in 0..tape.n {
                let x = self.coords[g];
                let r = s * ks * 3;
                out.push([x[0] + tape.out[r], x[1] + tape.out[r + 1], x[2] + tape.out[r + 2]]);
                g += 1;
            }
        }
        out
    }

    pub fn evals(&self) -> Vec<SpatialEval> {
        let ks = self.order.streams();
        let mut out = Vec::with_capacity(self.coords.len());
        let mut g = 0;
        for tape in &self.chunks {
            for s in 0..tape.n {
                let x = self.coords[g];
                let u = |stream: usize, k: usize| tape.out[(s * ks + stream) * 3 + k];
                let phi = [x[0] + u(0, 0), x[1] + u(0, 1), x[2] + u(0, 2)];
                let jac = (ks > 1).then(|| {
                    let mut j = IDENTITY;
                    for k in 0..3 {
                        for i in 0..3 {
                            j[k][i] += u(1 + i, k);
                        }
                    }
                    j
                });
                let hess = (ks == 10).then(|| {
                    let mut h = [[[0.0; 3]; 3]; 3];
                    for (k, hk) in h.iter_mut().enumerate() {
                        for i in 0..3 {
                            for j in 0..3 {
                                hk[i][j] = u(4 + pair_index(i, j), k);
                            }
                        }
                    }
                    h
                });
                out.push(SpatialEval { phi, jac, hess });
                g += 1;
            }
        }
        out
    }

    /// Exact reverse pass. Returns parameter gradients and the adjoint
    /// w.r.t. each input coordinate (through both the identity path and
    /// the network).
    pub fn backward(&self, adj: &Adjoints) -> Result<(Gradients, Vec<Vec3>)> {
        let n = self.coords.len();
        if adj.phi.len() != n
            || adj.jac.as_ref().is_some_and(|j| j.len() != n)
            || adj.hess.as_ref().is_some_and(|h| h.len() != n)
        {
            return Err(Error::Contract(format!(
                "adjoints cover {} samples, forward pass has {n}",
                adj.phi.len()
            )));
        }
        if adj.required_order() > self.order {
            return Err(Error::Contract(format!(
                "adjoints need derivative order {:?}, forward pass computed {:?}",
                adj.required_order(),
                self.order
            )));
        }
        let partials: Vec<(Gradients, Vec<Vec3>)> = self
            .chunks
            .par_iter()
            .enumerate()
            .map(|(ci, tape)| {
                let mut g = self.params.zeros_like();
                let xb = backward_chunk(self.params, tape, self.order, adj, ci * CHUNK, &mut g);
                (g, xb)
            })
            .collect();
        let mut grads = self.params.zeros_like();
        let mut input_adj = Vec::with_capacity(n);
        for (g, xb) in partials {
            grads.add_assign(&g);
            input_adj.extend(xb);
        }
        Ok((grads, input_adj))
    }
}

pub fn eval_spatial(p: &SirenParams, coords: &[Vec3], order: DerivOrder) -> Vec<SpatialEval> {
    ForwardPass::new(p, coords, order).evals()
}

/// Exact `dL/dtheta` for loss adjoints w.r.t. `phi`, `jac` and `hess` at `coords`.
pub fn param_gradients(p: &SirenParams, coords: &[Vec3], adj: &Adjoints) -> Result<Gradients> {
    let order = adj.required_order();
    ForwardPass::new(p, coords, order)
        .backward(adj)
        .map(|(g, _)| g)
}
