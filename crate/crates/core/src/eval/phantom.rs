//! Synthetic image pairs with an analytic deformation.
//!
//! The fixed image is a procedural texture evaluated in closed form. The
//! true forward map `T(x) = x + u(x)` takes fixed (target) world points to
//! moving (source) world points, so the moving image is the texture pulled
//! back through `T^{-1}`, found per voxel by Newton iteration.

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{add, det, dot, inverse, mat_vec, norm, sub, Mat3, Vec3, IDENTITY};
use crate::rng::{stream, Rng, Stream};
use crate::volume::{Grid, LandmarkSet, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    /// Smooth sinusoidal shear, one period across the field of view.
    Sinusoid,
    /// Localized radial squeeze towards the centre; near-singular at high amplitude.
    GaussianCompression,
    /// One half of the volume contracts, the other does not, with a sharp seam.
    PiecewiseContraction,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinusoid" => Ok(PhantomKind::Sinusoid),
            "gaussian_compression" => Ok(PhantomKind::GaussianCompression),
            "piecewise_contraction" => Ok(PhantomKind::PiecewiseContraction),
            other => Err(Error::Parameter(format!("unknown phantom kind {other:?}"))),
        }
    }
}

impl PhantomKind {
    pub fn name(self) -> &'static str {
        match self {
            PhantomKind::Sinusoid => "sinusoid",
            PhantomKind::GaussianCompression => "gaussian_compression",
            PhantomKind::PiecewiseContraction => "piecewise_contraction",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    /// Voxels per axis.
    pub size: usize,
    pub amplitude_mm: f64,
    pub seed: u64,
    #[serde(default = "one")]
    pub spacing_mm: f64,
}

fn one() -> f64 {
    1.0
}

impl PhantomSpec {
    pub fn new(kind: PhantomKind, size: usize, amplitude_mm: f64, seed: u64) -> Self {
        PhantomSpec {
            kind,
            size,
            amplitude_mm,
            seed,
            spacing_mm: 1.0,
        }
    }
}

/// The analytic forward displacement of a phantom, in world mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueField {
    kind: PhantomKind,
    amplitude: f64,
    center: Vec3,
    /// Half the field of view, mm.
    radius: f64,
    phase: Vec3,
}

const SEAM_WIDTH_MM: f64 = 1.5;

fn logistic(t: f64) -> (f64, f64) {
    let s = 1.0 / (1.0 + (-t).exp());
    (s, s * (1.0 - s))
}

impl TrueField {
    fn sigma(&self) -> f64 {
        0.35 * self.radius
    }

    /// `u(x)` and `du/dx` (`jac[k][i] = du_k/dx_i`).
    pub fn eval(&self, x: Vec3) -> (Vec3, Mat3) {
        let a = self.amplitude;
        let p = sub(x, self.center);
        let mut u = [0.0; 3];
        let mut j = [[0.0; 3]; 3];
        match self.kind {
            PhantomKind::Sinusoid => {
                let w = PI / self.radius;
                for k in 0..3 {
                    let n = (k + 1) % 3;
                    let (s, c) = (w * p[n] + self.phase[k]).sin_cos();
                    u[k] = a * s;
                    j[k][n] = a * w * c;
                }
            }
            PhantomKind::GaussianCompression => {
                let sg = self.sigma();
                let r2 = dot(p, p);
                let g = (-r2 / (2.0 * sg * sg)).exp();
                let f = a / sg * g;
                for k in 0..3 {
                    u[k] = -f * p[k];
                    for i in 0..3 {
                        let delta = if i == k { 1.0 } else { 0.0 };
                        j[k][i] = -f * (delta - p[k] * p[i] / (sg * sg));
                    }
                }
            }
            PhantomKind::PiecewiseContraction => {
                let (s, ds) = logistic(p[0] / SEAM_WIDTH_MM);
                let c = a / self.radius;
                for k in 1..3 {
                    u[k] = -c * s * p[k];
                    j[k][k] = -c * s;
                    j[k][0] = -c * ds / SEAM_WIDTH_MM * p[k];
                }
            }
        }
        (u, j)
    }

    /// `T(x) = x + u(x)`.
    pub fn map(&self, x: Vec3) -> Vec3 {
        add(x, self.eval(x).0)
    }

    pub fn jacobian(&self, x: Vec3) -> Mat3 {
        let (_, du) = self.eval(x);
        let mut j = IDENTITY;
        for k in 0..3 {
            for i in 0..3 {
                j[k][i] += du[k][i];
            }
        }
        j
    }

    /// Solves `T(x) = y` by Newton iteration from `y`.
    pub fn invert(&self, y: Vec3) -> Result<Vec3> {
        let mut x = y;
        for _ in 0..60 {
            let r = sub(y, self.map(x));
            if norm(r) <= 1e-12 * (1.0 + norm(y)) {
                return Ok(x);
            }
            let ji = inverse(&self.jacobian(x))
                .ok_or_else(|| Error::Parameter(format!("singular true field near {x:?}")))?;
            x = add(x, mat_vec(&ji, r));
        }
        let r = norm(sub(y, self.map(x)));
        if r <= 1e-9 {
            Ok(x)
        } else {
            Err(Error::Parameter(format!(
                "true field not invertible at {y:?} (residual {r:e} mm)"
            )))
        }
    }
}

/// Band-limited procedural texture: random plane waves plus blobs.
#[derive(Debug, Clone, PartialEq)]
struct Texture {
    waves: Vec<(Vec3, f64, f64)>,
    blobs: Vec<(Vec3, f64, f64)>,
}

impl Texture {
    fn new(rng: &mut Rng, center: Vec3, radius: f64) -> Self {
        let waves = (0..24)
            .map(|_| {
                let dir = unit(rng);
                let wavelength = rng.gen_range(6.0..16.0);
                let k = dir.map(|d| d * 2.0 * PI / wavelength);
                (k, rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.02..0.06))
            })
            .collect();
        let blobs = (0..12)
            .map(|_| {
                let d = unit(rng);
                let r = rng.gen_range(0.0..0.8) * radius;
                let c = add(center, d.map(|v| v * r));
                (c, rng.gen_range(3.0..6.0), rng.gen_range(-0.4..0.4))
            })
            .collect();
        Texture { waves, blobs }
    }

    fn at(&self, x: Vec3) -> f64 {
        let mut v = 0.5;
        for (k, phase, amp) in &self.waves {
            v += amp * (dot(*k, x) + phase).cos();
        }
        for (c, width, amp) in &self.blobs {
            let d = sub(x, *c);
            v += amp * (-dot(d, d) / (2.0 * width * width)).exp();
        }
        v
    }
}

fn unit(rng: &mut Rng) -> Vec3 {
    loop {
        let v: Vec3 = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let n = norm(v);
        if n > 1e-3 && n <= 1.0 {
            return v.map(|c| c / n);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub spec: PhantomSpec,
    pub fixed: Volume3D,
    pub moving: Volume3D,
    pub field: TrueField,
    /// True forward displacement at fixed voxel centres, mm per axis.
    pub true_disp: [Volume3D; 3],
    pub landmarks_fixed: LandmarkSet,
    pub landmarks_moving: LandmarkSet,
    pub mask: Volume3D,
    pub min_det: f64,
}

pub const MIN_DET: f64 = 0.05;
pub const NUM_LANDMARKS: usize = 100;

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    if spec.size < 4 {
        return Err(Error::Parameter(format!("phantom size must be at least 4, got {}", spec.size)));
    }
    if !(spec.amplitude_mm >= 0.0 && spec.amplitude_mm.is_finite()) {
        return Err(Error::Parameter(format!(
            "amplitude must be a nonnegative number, got {}",
            spec.amplitude_mm
        )));
    }
    let n = spec.size;
    let grid = Grid::new([n; 3], [spec.spacing_mm; 3], [0.0; 3])?;
    let center = grid.world([(n as f64 - 1.0) / 2.0; 3]);
    let radius = n as f64 * spec.spacing_mm / 2.0;
    let mut rng = stream(spec.seed, Stream::Phantom);
    let phase = std::array::from_fn(|_| rng.gen_range(0.0..2.0 * PI));
    let field = TrueField {
        kind: spec.kind,
        amplitude: spec.amplitude_mm,
        center,
        radius,
        phase,
    };

    let centres: Vec<Vec3> = (0..grid.len())
        .map(|i| {
            let [a, b, c] = grid.ijk(i);
            grid.world([a as f64, b as f64, c as f64])
        })
        .collect();
    let (mut min_det, mut worst) = (f64::INFINITY, [0.0; 3]);
    for &x in &centres {
        let d = det(&field.jacobian(x));
        if d < min_det {
            min_det = d;
            worst = x;
        }
    }
    if !(min_det > MIN_DET) {
        return Err(Error::Parameter(format!(
            "requested {} field is not safely invertible: min det = {min_det:.4} (must exceed {MIN_DET}) at {worst:?} mm",
            spec.kind.name()
        )));
    }

    let texture = Texture::new(&mut rng, center, radius);
    let fixed: Vec<f32> = centres.iter().map(|&x| texture.at(x) as f32).collect();
    let moving = centres
        .iter()
        .map(|&y| field.invert(y).map(|x| texture.at(x) as f32))
        .collect::<Result<Vec<f32>>>()?;
    let mut disp = [Vec::new(), Vec::new(), Vec::new()];
    for &x in &centres {
        let (u, _) = field.eval(x);
        for k in 0..3 {
            disp[k].push(u[k] as f32);
        }
    }
    let [dx, dy, dz] = disp;

    let ball = 0.45 * radius * 2.0;
    let mask = Volume3D::mask_from_fn(grid, |[i, j, k]| {
        norm(sub(grid.world([i as f64, j as f64, k as f64]), center)) <= ball
    });

    let mut lrng = stream(spec.seed, Stream::Landmarks);
    // landmarks stay a little inside the mask so their images remain in the volume
    let lm_radius = 0.8 * ball;
    let points: Vec<Vec3> = (0..NUM_LANDMARKS)
        .map(|_| loop {
            let v: Vec3 = std::array::from_fn(|_| lrng.gen_range(-1.0..1.0));
            if norm(v) <= 1.0 {
                break add(center, v.map(|c| c * lm_radius));
            }
        })
        .collect();
    let moved = points.iter().map(|&p| field.map(p)).collect();

    Ok(Phantom {
        spec: *spec,
        fixed: Volume3D::from_f32(grid, fixed)?,
        moving: Volume3D::from_f32(grid, moving)?,
        field,
        true_disp: [
            Volume3D::from_f32(grid, dx)?,
            Volume3D::from_f32(grid, dy)?,
            Volume3D::from_f32(grid, dz)?,
        ],
        landmarks_fixed: LandmarkSet::new(points),
        landmarks_moving: LandmarkSet::new(moved),
        mask,
        min_det,
    })
}

/// Amplitude at which the compression phantom's minimum determinant hits
/// `target_det`, for a given size and spacing.
pub fn compression_amplitude_for_det(size: usize, spacing_mm: f64, target_det: f64) -> f64 {
    // at the centre the Jacobian is (1 - A/sigma) I
    let sigma = 0.35 * size as f64 * spacing_mm / 2.0;
    sigma * (1.0 - target_det.cbrt())
}
