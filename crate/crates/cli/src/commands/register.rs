use std::fs::File;
use std::io::{BufWriter, Write};
use std::time::Instant;

use ccreg::objectives::LossBreakdown;
use ccreg::trainer::{
    save_pair, save_single, train_pair, train_single, MetricsWriter, RunRecord, TrainConfig,
};
use serde_json::json;

use super::{load_hashed, load_mask, RegisterArgs};
use crate::run::{io_error, read_json_file, CmdError, RunContext};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const RUN_FILE: &str = "run.json";

pub fn resolve_config(args: &RegisterArgs, ctx: &mut RunContext) -> Result<TrainConfig, CmdError> {
    let mut cfg: TrainConfig = match &args.config {
        Some(p) => {
            ctx.hash_file(p)?;
            read_json_file(p)?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.no_cycle {
        cfg.cycle_enabled = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(args: &RegisterArgs, ctx: &mut RunContext) -> Result<i32, CmdError> {
    let cfg = resolve_config(args, ctx)?;
    ctx.seed = Some(cfg.seed);
    ctx.config = json!({
        "mode": if args.no_cycle { "single" } else { "pair" },
        "train": cfg,
        "config_hash": cfg.hash(),
        "effective_beta": cfg.effective_beta(),
    });

    // every input is loaded before anything is written
    let fixed = load_hashed(ctx, &args.fixed)?;
    let moving = load_hashed(ctx, &args.moving)?;
    let mask_fixed = load_mask(ctx, &args.fixed_mask)?;
    let mask_moving = match (&args.moving_mask, args.no_cycle) {
        (Some(p), _) => Some(load_mask(ctx, p)?),
        (None, true) => None,
        (None, false) => {
            return Err(CmdError::Input(
                "--moving-mask is required unless --no-cycle is given".into(),
            ))
        }
    };

    std::fs::create_dir_all(&args.out_dir).map_err(|e| io_error(&args.out_dir, e))?;
    let metrics_path = args.out_dir.join(METRICS_FILE);
    let file = File::create(&metrics_path).map_err(|e| io_error(&metrics_path, e))?;
    let mut metrics = MetricsWriter::new(BufWriter::new(file));
    let mut completed = 0usize;
    let log_every = (cfg.epochs / 10).max(1);
    let mut hook = |epoch: usize, loss: &LossBreakdown| {
        metrics.record(epoch, loss)?;
        completed += 1;
        if completed % log_every == 0 || completed == cfg.epochs {
            eprintln!("epoch {completed}/{}: {loss}", cfg.epochs);
        }
        Ok(())
    };

    let start = Instant::now();
    let trained = if args.no_cycle {
        train_single(&fixed, &moving, &mask_fixed, &cfg, &mut hook).and_then(|s| {
            save_single(&s, &args.out_dir)?;
            Ok(s.final_loss)
        })
    } else {
        let mask_moving = mask_moving.as_ref().expect("checked above");
        train_pair(&fixed, &moving, &mask_fixed, mask_moving, &cfg, &mut hook).and_then(|p| {
            save_pair(&p, &args.out_dir)?;
            Ok(p.final_loss)
        })
    };
    let mut out = metrics.into_inner();
    out.flush().map_err(|e| io_error(&metrics_path, e))?;

    let mut record = RunRecord::new(&cfg);
    record.wall_time_s = start.elapsed().as_secs_f64();
    record.epochs_completed = completed;
    match &trained {
        Ok(loss) => record.final_loss = Some(*loss),
        Err(e) => record.error = Some(e.to_string()),
    }
    record.write(&args.out_dir.join(RUN_FILE))?;
    trained?;
    Ok(0)
}
