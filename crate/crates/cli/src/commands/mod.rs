pub mod infer;
pub mod phantom;
pub mod register;
pub mod sweep;

use std::path::{Path, PathBuf};

use ccreg::eval::{PhantomKind, Strategy};
use ccreg::volume::{load_volume, LandmarkUnits, Volume3D};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::run::{CmdError, RunContext};

/// How landmark rows are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    /// World coordinates in mm.
    Mm,
    /// Voxel indices on the image the landmarks belong to.
    Voxel,
}

impl From<Units> for LandmarkUnits {
    fn from(u: Units) -> Self {
        match u {
            Units::Mm => LandmarkUnits::WorldMm,
            Units::Voxel => LandmarkUnits::VoxelIndex,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RegisterArgs {
    /// Fixed (target) image header.
    #[arg(long)]
    pub fixed: PathBuf,
    /// Moving (source) image header.
    #[arg(long)]
    pub moving: PathBuf,
    #[arg(long)]
    pub fixed_mask: PathBuf,
    /// Required unless --no-cycle.
    #[arg(long)]
    pub moving_mask: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Overrides the seed in --config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON object overriding training defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Train one forward network without the cycle terms.
    #[arg(long)]
    pub no_cycle: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InferArgs {
    /// Checkpoint directory written by `register`.
    #[arg(long)]
    pub pair: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Landmarks in the fixed image (CSV rows x,y,z[,label]).
    #[arg(long)]
    pub landmarks: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mm")]
    pub landmark_units: Units,
    /// Restricts the dense field to this mask; also defines the output grid.
    #[arg(long)]
    pub roi_mask: Option<PathBuf>,
    /// Image defining the output grid when no roi mask is given.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Moving image to warp with the consensus field.
    #[arg(long)]
    pub moving: Option<PathBuf>,
    /// JSON object overriding inference defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub strategy: Strategy,
    /// Run seeds 1..=N.
    #[arg(long, conflicts_with = "seed_list")]
    pub seeds: Option<u64>,
    /// Explicit comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seed_list: Option<Vec<u64>>,
    /// Phantom input (default when no image inputs are given).
    #[arg(long)]
    pub phantom_kind: Option<PhantomKind>,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 4.0)]
    pub amplitude_mm: f64,
    #[arg(long, default_value_t = 0)]
    pub phantom_seed: u64,
    #[arg(long, requires_all = ["moving", "fixed_mask", "moving_mask", "fixed_landmarks", "moving_landmarks"])]
    pub fixed: Option<PathBuf>,
    #[arg(long)]
    pub moving: Option<PathBuf>,
    #[arg(long)]
    pub fixed_mask: Option<PathBuf>,
    #[arg(long)]
    pub moving_mask: Option<PathBuf>,
    #[arg(long)]
    pub fixed_landmarks: Option<PathBuf>,
    /// Ground-truth correspondences of --fixed-landmarks, same order.
    #[arg(long)]
    pub moving_landmarks: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mm")]
    pub landmark_units: Units,
    /// JSON object overriding training defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// JSON object overriding inference defaults.
    #[arg(long)]
    pub inference_config: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    pub failure_threshold_mm: f64,
    /// Worker processes.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PhantomArgs {
    #[arg(long, default_value = "sinusoid")]
    pub kind: PhantomKind,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 4.0)]
    pub amplitude_mm: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub spacing_mm: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct WorkerArgs {
    #[arg(long)]
    pub job: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn load_hashed(ctx: &mut RunContext, path: &Path) -> Result<Volume3D, CmdError> {
    ctx.hash_volume(path)?;
    Ok(load_volume(path)?)
}

pub fn load_mask(ctx: &mut RunContext, path: &Path) -> Result<Volume3D, CmdError> {
    let m = load_hashed(ctx, path)?;
    m.check_mask()
        .map_err(|e| CmdError::Input(format!("{}: {e}", path.display())))?;
    Ok(m)
}
