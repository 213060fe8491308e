use ccreg::eval::{generate_phantom, PhantomSpec};
use ccreg::volume::{save_landmarks, save_volume};
use serde_json::json;

use super::PhantomArgs;
use crate::run::{io_error, CmdError, RunContext};

pub const FIXED_FILE: &str = "fixed.json";
pub const MOVING_FILE: &str = "moving.json";
pub const MASK_FILE: &str = "mask.json";
pub const TRUE_DISP_FILES: [&str; 3] = ["true_disp_x.json", "true_disp_y.json", "true_disp_z.json"];
pub const LANDMARKS_FIXED_FILE: &str = "landmarks_fixed.csv";
pub const LANDMARKS_MOVING_FILE: &str = "landmarks_moving.csv";

pub fn run(args: &PhantomArgs, ctx: &mut RunContext) -> Result<i32, CmdError> {
    let spec = PhantomSpec {
        spacing_mm: args.spacing_mm,
        ..PhantomSpec::new(args.kind, args.size, args.amplitude_mm, args.seed)
    };
    ctx.seed = Some(args.seed);
    ctx.config = json!({ "phantom": spec });
    let p = generate_phantom(&spec)?;
    ctx.config["min_det"] = json!(p.min_det);

    let dir = &args.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    save_volume(&p.fixed, dir.join(FIXED_FILE))?;
    save_volume(&p.moving, dir.join(MOVING_FILE))?;
    save_volume(&p.mask, dir.join(MASK_FILE))?;
    for (v, name) in p.true_disp.iter().zip(TRUE_DISP_FILES) {
        save_volume(v, dir.join(name))?;
    }
    save_landmarks(&p.landmarks_fixed, None, dir.join(LANDMARKS_FIXED_FILE))?;
    save_landmarks(&p.landmarks_moving, None, dir.join(LANDMARKS_MOVING_FILE))?;
    eprintln!(
        "{} phantom {}^3, amplitude {} mm, min det {:.4}",
        spec.kind.name(),
        spec.size,
        spec.amplitude_mm,
        p.min_det
    );
    Ok(0)
}
