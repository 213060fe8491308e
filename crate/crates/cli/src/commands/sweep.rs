use std::fs;
use std::path::Path;
use std::process::Command;

use ccreg::eval::{
    assemble_sweep, generate_phantom, run_seed, write_sweep_outputs, PhantomKind, PhantomSpec,
    SeedResult, SweepInputs, SweepResult,
};
use ccreg::inference::InferenceConfig;
use ccreg::trainer::TrainConfig;
use ccreg::volume::load_landmarks;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{load_hashed, load_mask, SweepArgs, WorkerArgs};
use crate::run::{io_error, read_json_file, CmdError, RunContext, EXIT_PARTIAL};

/// Everything a worker process needs besides the input files.
#[derive(Debug, Serialize, Deserialize)]
struct Job {
    args: SweepArgs,
    seeds: Vec<u64>,
}

struct Resolved {
    base: TrainConfig,
    icfg: InferenceConfig,
    seeds: Vec<u64>,
    inputs: SweepInputs,
    description: Value,
}

fn seed_list(args: &SweepArgs) -> Result<Vec<u64>, CmdError> {
    let seeds = match (&args.seed_list, args.seeds) {
        (Some(list), _) => list.clone(),
        (None, Some(n)) => (1..=n).collect(),
        (None, None) => return Err(CmdError::Input("pass --seeds N or --seed-list".into())),
    };
    if seeds.is_empty() {
        return Err(CmdError::Input("no seeds to run".into()));
    }
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != seeds.len() {
        return Err(CmdError::Input("seeds must be distinct".into()));
    }
    Ok(sorted)
}

fn resolve(args: &SweepArgs, ctx: &mut RunContext) -> Result<Resolved, CmdError> {
    let base: TrainConfig = match &args.config {
        Some(p) => {
            ctx.hash_file(p)?;
            read_json_file(p)?
        }
        None => TrainConfig::default(),
    };
    base.validate()?;
    let icfg: InferenceConfig = match &args.inference_config {
        Some(p) => {
            ctx.hash_file(p)?;
            read_json_file(p)?
        }
        None => InferenceConfig::default(),
    };
    if !(args.failure_threshold_mm > 0.0) {
        return Err(CmdError::Input("--failure-threshold-mm must be positive".into()));
    }
    if args.parallel == 0 {
        return Err(CmdError::Input("--parallel must be at least 1".into()));
    }
    let seeds = seed_list(args)?;

    let (inputs, description) = match &args.fixed {
        Some(fixed_path) => {
            if args.phantom_kind.is_some() {
                return Err(CmdError::Input("give either image inputs or --phantom-kind, not both".into()));
            }
            let need = |p: &Option<std::path::PathBuf>| p.clone().expect("clap enforces requires_all");
            let fixed = load_hashed(ctx, fixed_path)?;
            let moving = load_hashed(ctx, &need(&args.moving))?;
            let mask_fixed = load_mask(ctx, &need(&args.fixed_mask))?;
            let mask_moving = load_mask(ctx, &need(&args.moving_mask))?;
            let (lf, lm) = (need(&args.fixed_landmarks), need(&args.moving_landmarks));
            ctx.hash_file(&lf)?;
            ctx.hash_file(&lm)?;
            let landmarks_fixed = load_landmarks(&lf, args.landmark_units.into(), fixed.grid())?;
            let landmarks_moving = load_landmarks(&lm, args.landmark_units.into(), moving.grid())?;
            if landmarks_fixed.len() != landmarks_moving.len() || landmarks_fixed.is_empty() {
                return Err(CmdError::Input(format!(
                    "landmark files must be non-empty and of equal length ({} vs {})",
                    landmarks_fixed.len(),
                    landmarks_moving.len()
                )));
            }
            let description = json!({ "images": ctx.inputs.clone() });
            (
                SweepInputs { fixed, moving, mask_fixed, mask_moving, landmarks_fixed, landmarks_moving },
                description,
            )
        }
        None => {
            let spec = PhantomSpec::new(
                args.phantom_kind.unwrap_or(PhantomKind::Sinusoid),
                args.size,
                args.amplitude_mm,
                args.phantom_seed,
            );
            let p = generate_phantom(&spec)?;
            (SweepInputs::from_phantom(&p), json!({ "phantom": spec, "min_det": p.min_det }))
        }
    };
    Ok(Resolved { base, icfg, seeds, inputs, description })
}

fn run_seeds(args: &SweepArgs, r: &Resolved, seeds: &[u64]) -> Vec<SeedResult> {
    seeds
        .iter()
        .map(|&seed| {
            let s = run_seed(&r.inputs, args.strategy, seed, &r.base, &r.icfg, args.failure_threshold_mm);
            match &s.error {
                None => eprintln!("seed {seed}: mean TRE {:.3} mm", s.mean_tre_mm),
                Some(e) => eprintln!("seed {seed}: {e}"),
            }
            s
        })
        .collect()
}

/// Splits the seeds over `k` child processes; a crashed worker's seeds are
/// recorded as errors.
fn run_parallel(args: &SweepArgs, r: &Resolved, k: usize) -> Result<Vec<SeedResult>, CmdError> {
    let scratch = args.out_dir.join(".workers");
    fs::create_dir_all(&scratch).map_err(|e| io_error(&scratch, e))?;
    let exe = std::env::current_exe().map_err(|e| CmdError::Input(format!("cannot locate executable: {e}")))?;
    let groups: Vec<Vec<u64>> = (0..k)
        .map(|w| r.seeds.iter().copied().skip(w).step_by(k).collect())
        .filter(|g: &Vec<u64>| !g.is_empty())
        .collect();
    let mut children = Vec::new();
    for (w, seeds) in groups.iter().enumerate() {
        let job_path = scratch.join(format!("job{w}.json"));
        let out_path = scratch.join(format!("result{w}.json"));
        let job = Job { args: args.clone(), seeds: seeds.clone() };
        fs::write(&job_path, serde_json::to_string(&job)?).map_err(|e| io_error(&job_path, e))?;
        let child = Command::new(&exe)
            .arg("sweep-worker")
            .arg("--job")
            .arg(&job_path)
            .arg("--out")
            .arg(&out_path)
            .spawn()
            .map_err(|e| CmdError::Input(format!("cannot start worker: {e}")))?;
        children.push((child, out_path, seeds));
    }
    let mut results = Vec::new();
    for (mut child, out_path, seeds) in children {
        let status = child.wait().map_err(|e| CmdError::Input(format!("worker wait failed: {e}")))?;
        let parsed: Option<Vec<SeedResult>> = status
            .success()
            .then(|| read_json_file(&out_path).ok())
            .flatten();
        match parsed {
            Some(r) => results.extend(r),
            None => results.extend(seeds.iter().map(|&s| {
                SeedResult::aborted(s, r.base.epochs, format!("worker process failed ({status})"))
            })),
        }
    }
    let _ = fs::remove_dir_all(&scratch);
    Ok(results)
}

fn report(sweep: &SweepResult) {
    let ok = sweep.seeds.iter().filter(|s| s.ok()).count();
    eprintln!(
        "{}: {} seeds, {ok} completed, failure rate {:.1}%, mean TRE {}",
        sweep.strategy.name(),
        sweep.seeds.len(),
        100.0 * sweep.failure_rate,
        sweep.mean_tre_mm.map(|m| format!("{m:.3} mm")).unwrap_or_else(|| "n/a".into())
    );
}

pub fn run(args: &SweepArgs, ctx: &mut RunContext) -> Result<i32, CmdError> {
    let r = resolve(args, ctx)?;
    ctx.config = json!({
        "strategy": args.strategy,
        "train": args.strategy.configure(&r.base),
        "inference": r.icfg,
        "failure_threshold_mm": args.failure_threshold_mm,
        "seeds": r.seeds,
        "inputs": r.description,
    });
    fs::create_dir_all(&args.out_dir).map_err(|e| io_error(&args.out_dir, e))?;
    let k = args.parallel.min(r.seeds.len());
    let results = if k <= 1 {
        run_seeds(args, &r, &r.seeds)
    } else {
        run_parallel(args, &r, k)?
    };
    let sweep = assemble_sweep(
        args.strategy,
        &r.base,
        &r.icfg,
        args.failure_threshold_mm,
        r.description.clone(),
        results,
    )?;
    write_sweep_outputs(&args.out_dir, &sweep)?;
    report(&sweep);
    Ok(if sweep.seeds.iter().all(|s| s.ok()) { 0 } else { EXIT_PARTIAL })
}

pub fn worker(w: &WorkerArgs) -> Result<(), CmdError> {
    let job: Job = read_json_file(&w.job)?;
    let r = resolve(&job.args, &mut RunContext::default())?;
    let results = run_seeds(&job.args, &r, &job.seeds);
    write_json(&w.out, &results)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CmdError> {
    fs::write(path, serde_json::to_string(value)?).map_err(|e| io_error(path, e))
}
