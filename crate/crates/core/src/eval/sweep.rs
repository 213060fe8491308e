//! Multi-seed registration sweeps and their summary artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{
    failure_rate, propagation_consensus, propagation_discrepancy, tre, uncertainty_correlation,
};
use super::phantom::Phantom;
use crate::error::{Error, Result};
use crate::inference::{forward_landmarks, transform_landmarks, InferenceConfig};
use crate::linalg::Vec3;
use crate::objectives::{LossBreakdown, LossWeights, RegKind};
use crate::trainer::{train_pair, train_single, TrainConfig};
use crate::volume::{LandmarkSet, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "jac")]
    Jac,
    #[serde(rename = "sjac")]
    Sjac,
    #[serde(rename = "bend")]
    Bend,
    #[serde(rename = "sjac+cycle")]
    SjacCycle,
    #[serde(rename = "bend+cycle")]
    BendCycle,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Jac,
        Strategy::Sjac,
        Strategy::Bend,
        Strategy::SjacCycle,
        Strategy::BendCycle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Jac => "jac",
            Strategy::Sjac => "sjac",
            Strategy::Bend => "bend",
            Strategy::SjacCycle => "sjac+cycle",
            Strategy::BendCycle => "bend+cycle",
        }
    }

    pub fn reg_kind(self) -> RegKind {
        match self {
            Strategy::Jac => RegKind::Jacobian,
            Strategy::Sjac | Strategy::SjacCycle => RegKind::SymmetricJacobian,
            Strategy::Bend | Strategy::BendCycle => RegKind::Bending,
        }
    }

    pub fn cycle(self) -> bool {
        matches!(self, Strategy::SjacCycle | Strategy::BendCycle)
    }

    /// `base` with this strategy's regularizer (default weights unless the
    /// base already uses the same kind) and cycle setting.
    pub fn configure(self, base: &TrainConfig) -> TrainConfig {
        let kind = self.reg_kind();
        let weights = if base.weights.reg_kind == kind {
            base.weights
        } else {
            LossWeights {
                alpha: kind.default_alpha(),
                reg_kind: kind,
                ..base.weights
            }
        };
        TrainConfig {
            weights,
            cycle_enabled: self.cycle(),
            ..*base
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown strategy {s:?}")))
    }
}

/// Images, masks and corresponding landmarks for a sweep.
#[derive(Debug, Clone)]
pub struct SweepInputs {
    pub fixed: Volume3D,
    pub moving: Volume3D,
    pub mask_fixed: Volume3D,
    pub mask_moving: Volume3D,
    /// World mm in the fixed image.
    pub landmarks_fixed: LandmarkSet,
    /// Ground-truth correspondences, world mm in the moving image.
    pub landmarks_moving: LandmarkSet,
}

impl SweepInputs {
    pub fn from_phantom(p: &Phantom) -> Self {
        SweepInputs {
            fixed: p.fixed.clone(),
            moving: p.moving.clone(),
            mask_fixed: p.mask.clone(),
            mask_moving: p.mask.clone(),
            landmarks_fixed: p.landmarks_fixed.clone(),
            landmarks_moving: p.landmarks_moving.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub epochs: usize,
    /// Set when training or evaluation aborted; the error fields below are then NaN-free defaults.
    pub error: Option<String>,
    pub mean_tre_mm: f64,
    pub std_tre_mm: f64,
    /// Forward network alone (equals the above for single-network strategies).
    pub mean_tre_forward_mm: f64,
    pub tre_mm: Vec<f64>,
    pub tre_forward_mm: Vec<f64>,
    /// Only for cycle-consistent strategies.
    pub mean_uncertainty_mm: Option<f64>,
    pub uncertainty_mm: Option<Vec<f64>>,
    pub degenerate: usize,
    pub failed: bool,
    pub final_loss: Option<LossBreakdown>,
    /// Estimated landmark positions in the moving image.
    pub landmarks: Vec<Vec3>,
}

impl SeedResult {
    /// A seed that produced no result.
    pub fn aborted(seed: u64, epochs: usize, error: impl Into<String>) -> Self {
        SeedResult {
            seed,
            epochs,
            error: Some(error.into()),
            mean_tre_mm: 0.0,
            std_tre_mm: 0.0,
            mean_tre_forward_mm: 0.0,
            tre_mm: Vec::new(),
            tre_forward_mm: Vec::new(),
            mean_uncertainty_mm: None,
            uncertainty_mm: None,
            degenerate: 0,
            failed: true,
            final_loss: None,
            landmarks: Vec::new(),
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn evaluate_seed(
    inputs: &SweepInputs,
    strategy: Strategy,
    cfg: &TrainConfig,
    icfg: &InferenceConfig,
    threshold_mm: f64,
) -> Result<SeedResult> {
    let gt = &inputs.landmarks_moving;
    let no_log = &mut |_: usize, _: &LossBreakdown| Ok(());
    let (est, fwd_only, unc, degenerate, final_loss) = if strategy.cycle() {
        let pair = train_pair(
            &inputs.fixed,
            &inputs.moving,
            &inputs.mask_fixed,
            &inputs.mask_moving,
            cfg,
            no_log,
        )?;
        let out = transform_landmarks(&pair, &inputs.landmarks_fixed, icfg);
        let degenerate = out.degenerate.iter().filter(|&&d| d).count();
        (out.consensus, out.forward_only, Some(out.uncertainty_mm), degenerate, pair.final_loss)
    } else {
        let single = train_single(&inputs.fixed, &inputs.moving, &inputs.mask_fixed, cfg, no_log)?;
        let est = forward_landmarks(&single.forward, &single.t_source, &single.t_target, &inputs.landmarks_fixed);
        (est.clone(), est, None, 0, single.final_loss)
    };
    let t = tre(&est, gt)?;
    let tf = tre(&fwd_only, gt)?;
    Ok(SeedResult {
        seed: cfg.seed,
        epochs: cfg.epochs,
        error: None,
        mean_tre_mm: t.mean_mm,
        std_tre_mm: t.std_mm,
        mean_tre_forward_mm: tf.mean_mm,
        failed: !(t.mean_mm <= threshold_mm),
        tre_mm: t.per_point_mm,
        tre_forward_mm: tf.per_point_mm,
        mean_uncertainty_mm: unc.as_deref().map(mean),
        uncertainty_mm: unc,
        degenerate,
        final_loss: Some(final_loss),
        landmarks: est.points,
    })
}

/// Trains and evaluates one seed. Hard failures are recorded, not returned.
pub fn run_seed(
    inputs: &SweepInputs,
    strategy: Strategy,
    seed: u64,
    base: &TrainConfig,
    icfg: &InferenceConfig,
    threshold_mm: f64,
) -> SeedResult {
    let cfg = TrainConfig {
        seed,
        ..strategy.configure(base)
    };
    evaluate_seed(inputs, strategy, &cfg, icfg, threshold_mm)
        .unwrap_or_else(|e| SeedResult::aborted(seed, cfg.epochs, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub strategy: Strategy,
    pub config: TrainConfig,
    pub inference: InferenceConfig,
    pub failure_threshold_mm: f64,
    /// Free-form description of the inputs (phantom spec or file hashes).
    pub inputs: serde_json::Value,
    pub seeds: Vec<SeedResult>,
    pub failure_rate: f64,
    pub mean_tre_mm: Option<f64>,
    /// Per completed seed, distance to the median trajectory (>= 3 seeds).
    pub propagation_discrepancy_mm: Option<Vec<f64>>,
    /// Pearson r between per-seed mean uncertainty and mean error.
    pub uncertainty_error_r: Option<f64>,
}

/// Summarizes per-seed results; seeds must be distinct.
pub fn assemble_sweep(
    strategy: Strategy,
    base: &TrainConfig,
    icfg: &InferenceConfig,
    threshold_mm: f64,
    inputs: serde_json::Value,
    mut seeds: Vec<SeedResult>,
) -> Result<SweepResult> {
    seeds.sort_by_key(|s| s.seed);
    if seeds.windows(2).any(|w| w[0].seed == w[1].seed) {
        return Err(Error::Contract("sweep seeds must be distinct".into()));
    }
    let means: Vec<f64> = seeds
        .iter()
        .map(|s| if s.ok() { s.mean_tre_mm } else { f64::NAN })
        .collect();
    let done: Vec<&SeedResult> = seeds.iter().filter(|s| s.ok()).collect();
    let discrepancy = if done.len() >= 3 {
        let runs: Vec<LandmarkSet> = done.iter().map(|s| LandmarkSet::new(s.landmarks.clone())).collect();
        let consensus = propagation_consensus(&runs)?;
        Some(propagation_discrepancy(&runs, &consensus, None)?)
    } else {
        None
    };
    let (u, e): (Vec<f64>, Vec<f64>) = done
        .iter()
        .filter_map(|s| s.mean_uncertainty_mm.map(|u| (u, s.mean_tre_mm)))
        .unzip();
    let r = uncertainty_correlation(&u, &e).ok();
    Ok(SweepResult {
        strategy,
        config: strategy.configure(base),
        inference: *icfg,
        failure_threshold_mm: threshold_mm,
        inputs,
        failure_rate: failure_rate(&means, threshold_mm),
        mean_tre_mm: (!done.is_empty()).then(|| done.iter().map(|s| s.mean_tre_mm).sum::<f64>() / done.len() as f64),
        propagation_discrepancy_mm: discrepancy,
        uncertainty_error_r: r,
        seeds,
    })
}

pub fn run_sweep(
    inputs: &SweepInputs,
    strategy: Strategy,
    seeds: &[u64],
    base: &TrainConfig,
    icfg: &InferenceConfig,
    threshold_mm: f64,
    description: serde_json::Value,
) -> Result<SweepResult> {
    let results = seeds
        .iter()
        .map(|&s| run_seed(inputs, strategy, s, base, icfg, threshold_mm))
        .collect();
    assemble_sweep(strategy, base, icfg, threshold_mm, description, results)
}

pub const SWEEP_FILE: &str = "sweep.json";
pub const FAILURE_TABLE_FILE: &str = "failure_rates.csv";
pub const SCATTER_FILE: &str = "uncertainty_vs_error.csv";
pub const SEED_TABLE_FILE: &str = "seeds.csv";

pub fn sweep_json(r: &SweepResult) -> Result<String> {
    let mut text = serde_json::to_string_pretty(r)?;
    text.push('\n');
    Ok(text)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `sweep.json`, the failure-rate table, the per-seed table and the
/// per-landmark uncertainty/error scatter.
pub fn write_sweep_outputs(dir: &Path, r: &SweepResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join(SWEEP_FILE), &sweep_json(r)?)?;

    let ok = r.seeds.iter().filter(|s| s.ok()).count();
    let failed = r.seeds.iter().filter(|s| s.failed).count();
    write(
        &dir.join(FAILURE_TABLE_FILE),
        &format!(
            "strategy,seeds,completed,failed,failure_rate_percent\n{},{},{ok},{failed},{}\n",
            r.strategy.name(),
            r.seeds.len(),
            100.0 * r.failure_rate
        ),
    )?;

    let mut seeds = String::from("seed,status,mean_tre_mm,std_tre_mm,mean_tre_forward_mm,mean_uncertainty_mm,failed\n");
    for s in &r.seeds {
        let unc = s.mean_uncertainty_mm.map(|u| u.to_string()).unwrap_or_default();
        let status = if s.ok() { "ok" } else { "error" };
        let _ = writeln!(
            seeds,
            "{},{status},{},{},{},{unc},{}",
            s.seed, s.mean_tre_mm, s.std_tre_mm, s.mean_tre_forward_mm, s.failed
        );
    }
    write(&dir.join(SEED_TABLE_FILE), &seeds)?;

    let mut scatter = String::from("seed,landmark,uncertainty_mm,error_mm,forward_error_mm\n");
    for s in r.seeds.iter().filter(|s| s.ok()) {
        for (i, e) in s.tre_mm.iter().enumerate() {
            let unc = s
                .uncertainty_mm
                .as_ref()
                .map(|u| u[i].to_string())
                .unwrap_or_default();
            let _ = writeln!(scatter, "{},{i},{unc},{e},{}", s.seed, s.tre_forward_mm[i]);
        }
    }
    write(&dir.join(SCATTER_FILE), &scatter)
}

pub fn read_sweep(path: &Path) -> Result<SweepResult> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
