use std::path::Path;

use ccreg::inference::{
    dense_field, forward_dense_field, forward_landmarks, transform_landmarks, warp_image,
    InferenceConfig,
};
use ccreg::trainer::{load_checkpoint, Checkpoint, PAIR_FILE};
use ccreg::volume::{load_landmarks, save_landmarks, save_volume, Volume3D};
use serde_json::json;

use super::{load_hashed, load_mask, InferArgs};
use crate::run::{io_error, read_json_file, CmdError, RunContext};

pub const DISP_FILES: [&str; 3] = ["disp_x.json", "disp_y.json", "disp_z.json"];
pub const UNCERTAINTY_FILE: &str = "uncertainty.json";
pub const WARPED_FILE: &str = "warped.json";
pub const LANDMARKS_FILE: &str = "landmarks.csv";
pub const LANDMARKS_FORWARD_FILE: &str = "landmarks_forward.csv";

fn save_all(dir: &Path, disp: &[Volume3D; 3]) -> Result<(), CmdError> {
    for (v, name) in disp.iter().zip(DISP_FILES) {
        save_volume(v, dir.join(name))?;
    }
    Ok(())
}

pub fn run(args: &InferArgs, ctx: &mut RunContext) -> Result<i32, CmdError> {
    let icfg: InferenceConfig = match &args.config {
        Some(p) => {
            ctx.hash_file(p)?;
            read_json_file(p)?
        }
        None => InferenceConfig::default(),
    };
    ctx.config = json!({ "inference": icfg });
    ctx.hash_file(&args.pair.join(PAIR_FILE))?;
    let checkpoint = load_checkpoint(&args.pair)?;

    let roi = args.roi_mask.as_deref().map(|p| load_mask(ctx, p)).transpose()?;
    let reference = args.reference.as_deref().map(|p| load_hashed(ctx, p)).transpose()?;
    let grid = match (&roi, &reference) {
        (Some(m), _) => *m.grid(),
        (None, Some(r)) => *r.grid(),
        (None, None) => {
            return Err(CmdError::Input(
                "an output grid is needed: pass --roi-mask or --reference".into(),
            ))
        }
    };
    let moving = args.moving.as_deref().map(|p| load_hashed(ctx, p)).transpose()?;
    let landmarks = match &args.landmarks {
        Some(p) => {
            ctx.hash_file(p)?;
            Some(load_landmarks(p, args.landmark_units.into(), &grid)?)
        }
        None => None,
    };

    std::fs::create_dir_all(&args.out_dir).map_err(|e| io_error(&args.out_dir, e))?;
    let disp = match &checkpoint {
        Checkpoint::Pair(pair) => {
            ctx.seed = Some(pair.seed);
            let field = dense_field(pair, &grid, roi.as_ref(), &icfg)?;
            save_volume(&field.uncertainty, args.out_dir.join(UNCERTAINTY_FILE))?;
            field.disp
        }
        Checkpoint::Single(single) => {
            ctx.seed = Some(single.seed);
            forward_dense_field(&single.forward, &single.t_source, &single.t_target, &grid, roi.as_ref())?
        }
    };
    save_all(&args.out_dir, &disp)?;

    if let Some(m) = &moving {
        save_volume(&warp_image(m, &disp)?, args.out_dir.join(WARPED_FILE))?;
    }
    if let Some(lm) = &landmarks {
        match &checkpoint {
            Checkpoint::Pair(pair) => {
                let out = transform_landmarks(pair, lm, &icfg);
                save_landmarks(
                    &out.consensus,
                    Some(("uncertainty_mm", &out.uncertainty_mm)),
                    args.out_dir.join(LANDMARKS_FILE),
                )?;
                save_landmarks(&out.forward_only, None, args.out_dir.join(LANDMARKS_FORWARD_FILE))?;
            }
            Checkpoint::Single(single) => {
                let out = forward_landmarks(&single.forward, &single.t_source, &single.t_target, lm);
                save_landmarks(&out, None, args.out_dir.join(LANDMARKS_FILE))?;
            }
        }
    }
    Ok(0)
}
