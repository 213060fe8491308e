//! Joint optimization of the forward/backward network pair.
//!
//! Convention: the forward network maps target (fixed image) coordinates to
//! source (moving image) coordinates; the backward network the reverse.
//! Each epoch draws a fresh batch from both foregrounds, evaluates all six
//! loss terms and takes one Adam step on each network.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coords::{make_norm_transform, Domain, ForegroundSampler, Interpolator, NormTransform};
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::objectives::{
    add_regularizer, cycle_terms, data_loss, total_loss, LossBreakdown, LossWeights,
};
use crate::rng::{stream, Stream, RNG_ALGORITHM};
use crate::siren::{
    adam_step, init_siren, load_params, save_params, sha256_hex, AdamState, Adjoints, ForwardPass,
    Gradients, ParamManifest, SirenParams,
};
use crate::volume::Volume3D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub omega0: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden_layers: 3,
            width: 256,
            omega0: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_per_inr: usize,
    pub weights: LossWeights,
    pub net: NetConfig,
    pub seed: u64,
    pub cycle_enabled: bool,
    /// Pad the shorter axes so all three share one normalization scale.
    pub isotropic: bool,
    /// Draw new coordinates every epoch. Off reuses the first batch (debugging).
    pub resample: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2500,
            lr: 1e-4,
            batch_per_inr: 10_000,
            weights: LossWeights::default(),
            net: NetConfig::default(),
            seed: 0,
            cycle_enabled: true,
            isotropic: true,
            resample: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_per_inr < 2 {
            return Err(Error::Parameter(
                "epochs must be positive and batch_per_inr at least 2".into(),
            ));
        }
        if self.net.hidden_layers == 0 || self.net.width == 0 {
            return Err(Error::Parameter("network needs at least one hidden layer".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Parameter(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.net.omega0 > 0.0 && self.net.omega0.is_finite()) {
            return Err(Error::Parameter(format!("omega0 must be positive, got {}", self.net.omega0)));
        }
        self.weights.validate()
    }

    /// Cycle weight actually applied.
    pub fn effective_beta(&self) -> f64 {
        if self.cycle_enabled {
            self.weights.beta
        } else {
            0.0
        }
    }

    /// Hash of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InrPair {
    pub forward: SirenParams,
    pub backward: SirenParams,
    pub t_source: NormTransform,
    pub t_target: NormTransform,
    pub config_hash: String,
    pub seed: u64,
    pub final_loss: LossBreakdown,
}

impl InrPair {
    /// Both networks zero: identity maps.
    pub fn identity(net: NetConfig, t_source: NormTransform, t_target: NormTransform) -> Self {
        let zero = SirenParams::zeros(net.hidden_layers, net.width, net.omega0);
        InrPair {
            forward: zero.clone(),
            backward: zero,
            t_source,
            t_target,
            config_hash: String::new(),
            seed: 0,
            final_loss: LossBreakdown::default(),
        }
    }
}

/// A forward network trained on its own, without a backward partner.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleInr {
    pub forward: SirenParams,
    pub t_source: NormTransform,
    pub t_target: NormTransform,
    pub config_hash: String,
    pub seed: u64,
    pub final_loss: LossBreakdown,
}

/// Called after every epoch with the epoch index and its loss breakdown.
pub type EpochHook<'a> = &'a mut dyn FnMut(usize, &LossBreakdown) -> Result<()>;

fn check_inputs(image: &Volume3D, mask: &Volume3D, what: &str) -> Result<()> {
    if !image.same_grid(mask) {
        return Err(Error::Contract(format!("{what} mask grid does not match its image")));
    }
    mask.check_mask()
}

struct Setup {
    t_target: NormTransform,
    t_source: NormTransform,
    fixed: Interpolator,
    moving: Interpolator,
    target_sampler: ForegroundSampler,
    source_sampler: Option<ForegroundSampler>,
}

fn setup(
    fixed: &Volume3D,
    moving: &Volume3D,
    mask_fixed: &Volume3D,
    mask_moving: Option<&Volume3D>,
    cfg: &TrainConfig,
) -> Result<Setup> {
    cfg.validate()?;
    check_inputs(fixed, mask_fixed, "fixed")?;
    if let Some(m) = mask_moving {
        check_inputs(moving, m, "moving")?;
    }
    let t_target = make_norm_transform(fixed.grid(), cfg.isotropic);
    let t_source = make_norm_transform(moving.grid(), cfg.isotropic);
    let target_sampler = ForegroundSampler::new(mask_fixed, &t_target, Domain::Target)
        .map_err(|e| Error::Domain(format!("fixed mask: {e}")))?;
    let source_sampler = mask_moving
        .map(|m| {
            ForegroundSampler::new(m, &t_source, Domain::Source)
                .map_err(|e| Error::Domain(format!("moving mask: {e}")))
        })
        .transpose()?;
    Ok(Setup {
        fixed: Interpolator::new(fixed, &t_target),
        moving: Interpolator::new(moving, &t_source),
        t_target,
        t_source,
        target_sampler,
        source_sampler,
    })
}

struct HalfStep {
    data: f64,
    reg: f64,
    cycle: f64,
    grads: Gradients,
    /// Gradient for the partner network, from acting as the cycle's outer map.
    partner_grads: Option<Gradients>,
}

/// Data, regularizer and (optionally) cycle terms for one network on its
/// own half-batch. `own` samples at `x`, `other` at the mapped points.
fn half_step(
    net: &SirenParams,
    partner: Option<&SirenParams>,
    x: &[Vec3],
    own: &Interpolator,
    other: &Interpolator,
    w: &LossWeights,
    beta: f64,
) -> Result<HalfStep> {
    let pass = ForwardPass::new(net, x, w.reg_kind.order());
    let evals = pass.evals();
    let phi: Vec<Vec3> = evals.iter().map(|e| e.phi).collect();
    let (data, data_adj) = data_loss(own, other, x, &phi)?;
    let mut adj = Adjoints::zeros(x.len(), w.reg_kind.order());
    adj.add_phi(1.0, &data_adj);
    let reg = add_regularizer(w, &evals, w.alpha, &mut adj)?;
    drop(evals);
    let (cycle, partner_grads) = match partner {
        Some(p) => {
            let (c, mapped_adj, g) = cycle_terms(x, &phi, p)?;
            adj.add_phi(beta, &mapped_adj);
            (c, Some(g))
        }
        None => (0.0, None),
    };
    let (grads, _) = pass.backward(&adj)?;
    Ok(HalfStep {
        data,
        reg,
        cycle,
        grads,
        partner_grads,
    })
}

fn non_finite(epoch: usize, b: &LossBreakdown) -> Error {
    Error::NonFiniteLoss {
        epoch,
        breakdown: b.to_string(),
    }
}

/// Trains the forward/backward pair jointly.
pub fn train_pair(
    fixed: &Volume3D,
    moving: &Volume3D,
    mask_fixed: &Volume3D,
    mask_moving: &Volume3D,
    cfg: &TrainConfig,
    on_epoch: EpochHook<'_>,
) -> Result<InrPair> {
    let s = setup(fixed, moving, mask_fixed, Some(mask_moving), cfg)?;
    let source_sampler = s.source_sampler.as_ref().expect("source mask given");
    let net = cfg.net;
    let mut fwd = init_siren(net.hidden_layers, net.width, net.omega0, &mut stream(cfg.seed, Stream::InitForward));
    let mut bwd = init_siren(net.hidden_layers, net.width, net.omega0, &mut stream(cfg.seed, Stream::InitBackward));
    let mut adam_f = AdamState::new(&fwd);
    let mut adam_b = AdamState::new(&bwd);
    let mut rng_t = stream(cfg.seed, Stream::SampleTarget);
    let mut rng_s = stream(cfg.seed, Stream::SampleSource);
    let beta = cfg.effective_beta();
    let w = cfg.weights;
    let mut fixed_batch = None;
    let mut last = LossBreakdown::default();

    for epoch in 0..cfg.epochs {
        let (xt, xs) = match (&fixed_batch, cfg.resample) {
            (Some((t, s)), false) => (Clone::clone(t), Clone::clone(s)),
            _ => {
                let xt = s.target_sampler.sample(cfg.batch_per_inr, &mut rng_t, cfg.seed).coords;
                let xs = source_sampler.sample(cfg.batch_per_inr, &mut rng_s, cfg.seed).coords;
                if !cfg.resample {
                    fixed_batch = Some((xt.clone(), xs.clone()));
                }
                (xt, xs)
            }
        };
        let cycle_partner = |p| cfg.cycle_enabled.then_some(p);
        // Forward: fixed intensities at x, moving intensities at phi_F(x).
        let hf = half_step(&fwd, cycle_partner(&bwd), &xt, &s.fixed, &s.moving, &w, beta)?;
        let hb = half_step(&bwd, cycle_partner(&fwd), &xs, &s.moving, &s.fixed, &w, beta)?;
        let applied = LossWeights { beta, ..w };
        let b = total_loss(hf.data, hb.data, hf.reg, hb.reg, hf.cycle, hb.cycle, &applied);
        if !b.is_finite() {
            return Err(non_finite(epoch, &b));
        }
        let mut gf = hf.grads;
        let mut gb = hb.grads;
        if let Some(g) = &hb.partner_grads {
            gf.axpy(beta, g);
        }
        if let Some(g) = &hf.partner_grads {
            gb.axpy(beta, g);
        }
        adam_step(&mut fwd, &gf, &mut adam_f, cfg.lr)?;
        adam_step(&mut bwd, &gb, &mut adam_b, cfg.lr)?;
        on_epoch(epoch, &b)?;
        last = b;
    }
    Ok(InrPair {
        forward: fwd,
        backward: bwd,
        t_source: s.t_source,
        t_target: s.t_target,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        final_loss: last,
    })
}

/// Trains one forward network with data and regularizer terms only; the
/// cycle weight is zero regardless of the configuration.
pub fn train_single(
    fixed: &Volume3D,
    moving: &Volume3D,
    mask_fixed: &Volume3D,
    cfg: &TrainConfig,
    on_epoch: EpochHook<'_>,
) -> Result<SingleInr> {
    let s = setup(fixed, moving, mask_fixed, None, cfg)?;
    let net = cfg.net;
    let mut fwd = init_siren(net.hidden_layers, net.width, net.omega0, &mut stream(cfg.seed, Stream::InitForward));
    let mut adam_f = AdamState::new(&fwd);
    let mut rng_t = stream(cfg.seed, Stream::SampleTarget);
    let w = LossWeights { beta: 0.0, ..cfg.weights };
    let mut fixed_batch: Option<Vec<Vec3>> = None;
    let mut last = LossBreakdown::default();
    for epoch in 0..cfg.epochs {
        let xt = match (&fixed_batch, cfg.resample) {
            (Some(x), false) => x.clone(),
            _ => {
                let x = s.target_sampler.sample(cfg.batch_per_inr, &mut rng_t, cfg.seed).coords;
                if !cfg.resample {
                    fixed_batch = Some(x.clone());
                }
                x
            }
        };
        let h = half_step(&fwd, None, &xt, &s.fixed, &s.moving, &w, 0.0)?;
        let b = total_loss(h.data, 0.0, h.reg, 0.0, 0.0, 0.0, &w);
        if !b.is_finite() {
            return Err(non_finite(epoch, &b));
        }
        adam_step(&mut fwd, &h.grads, &mut adam_f, cfg.lr)?;
        on_epoch(epoch, &b)?;
        last = b;
    }
    let cfg_single = TrainConfig {
        cycle_enabled: false,
        ..*cfg
    };
    Ok(SingleInr {
        forward: fwd,
        t_source: s.t_source,
        t_target: s.t_target,
        config_hash: cfg_single.hash(),
        seed: cfg.seed,
        final_loss: last,
    })
}

#[derive(Debug, Serialize)]
struct EpochRecord<'a> {
    epoch: usize,
    #[serde(flatten)]
    loss: &'a LossBreakdown,
}

/// Line-delimited per-epoch loss log.
pub struct MetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> Self {
        MetricsWriter { out }
    }

    pub fn record(&mut self, epoch: usize, loss: &LossBreakdown) -> Result<()> {
        let line = serde_json::to_string(&EpochRecord { epoch, loss })?;
        writeln!(self.out, "{line}")
            .map_err(|e| Error::io("metrics.jsonl", e))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Run metadata written next to the checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub config_hash: String,
    pub seed: u64,
    pub rng_algorithm: String,
    pub wall_time_s: f64,
    pub epochs_completed: usize,
    pub final_loss: Option<LossBreakdown>,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn new(cfg: &TrainConfig) -> Self {
        RunRecord {
            config: *cfg,
            config_hash: cfg.hash(),
            seed: cfg.seed,
            rng_algorithm: RNG_ALGORITHM.to_string(),
            wall_time_s: 0.0,
            epochs_completed: 0,
            final_loss: None,
            error: None,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairManifest {
    pub kind: String,
    pub t_source: NormTransform,
    pub t_target: NormTransform,
    pub config_hash: String,
    pub seed: u64,
    pub final_loss: LossBreakdown,
    pub forward: ParamManifest,
    pub backward: Option<ParamManifest>,
}

pub const PAIR_FILE: &str = "pair.json";

fn check_manifest(loaded: &ParamManifest, recorded: &ParamManifest, name: &str) -> Result<()> {
    if loaded != recorded {
        return Err(Error::Integrity(format!(
            "{name} checkpoint does not match the hashes recorded in {PAIR_FILE}"
        )));
    }
    Ok(())
}

pub fn save_pair(pair: &InrPair, dir: &Path) -> Result<()> {
    let forward = save_params(&pair.forward, dir, "forward", pair.seed, &pair.config_hash)?;
    let backward = save_params(&pair.backward, dir, "backward", pair.seed, &pair.config_hash)?;
    write_json(
        &dir.join(PAIR_FILE),
        &PairManifest {
            kind: "pair".into(),
            t_source: pair.t_source,
            t_target: pair.t_target,
            config_hash: pair.config_hash.clone(),
            seed: pair.seed,
            final_loss: pair.final_loss,
            forward,
            backward: Some(backward),
        },
    )
}

pub fn save_single(single: &SingleInr, dir: &Path) -> Result<()> {
    let forward = save_params(&single.forward, dir, "forward", single.seed, &single.config_hash)?;
    write_json(
        &dir.join(PAIR_FILE),
        &PairManifest {
            kind: "single".into(),
            t_source: single.t_source,
            t_target: single.t_target,
            config_hash: single.config_hash.clone(),
            seed: single.seed,
            final_loss: single.final_loss,
            forward,
            backward: None,
        },
    )
}

/// A checkpoint directory: a trained pair or a lone forward network.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Pair(InrPair),
    Single(SingleInr),
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let m: PairManifest = read_json(&dir.join(PAIR_FILE))?;
    let (forward, fm) = load_params(dir, "forward")?;
    check_manifest(&fm, &m.forward, "forward")?;
    match (&m.backward, m.kind.as_str()) {
        (Some(bm_rec), "pair") => {
            let (backward, bm) = load_params(dir, "backward")?;
            check_manifest(&bm, bm_rec, "backward")?;
            Ok(Checkpoint::Pair(InrPair {
                forward,
                backward,
                t_source: m.t_source,
                t_target: m.t_target,
                config_hash: m.config_hash,
                seed: m.seed,
                final_loss: m.final_loss,
            }))
        }
        (None, "single") => Ok(Checkpoint::Single(SingleInr {
            forward,
            t_source: m.t_source,
            t_target: m.t_target,
            config_hash: m.config_hash,
            seed: m.seed,
            final_loss: m.final_loss,
        })),
        _ => Err(Error::Format(format!(
            "{}: unknown checkpoint kind {:?}",
            dir.join(PAIR_FILE).display(),
            m.kind
        ))),
    }
}

pub fn load_pair(dir: &Path) -> Result<InrPair> {
    match load_checkpoint(dir)? {
        Checkpoint::Pair(p) => Ok(p),
        Checkpoint::Single(_) => Err(Error::Contract(format!(
            "{} holds a single network, not a pair",
            dir.display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::RegKind;
    use crate::volume::Grid;

    fn blob(dims: [usize; 3], shift: f64) -> (Volume3D, Volume3D) {
        let grid = Grid::new(dims, [1.0; 3], [0.0; 3]).unwrap();
        let c: Vec3 = std::array::from_fn(|a| (dims[a] as f64 - 1.0) / 2.0);
        let mut data = Vec::with_capacity(grid.len());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let p = [i as f64 - c[0] - shift, j as f64 - c[1], k as f64 - c[2]];
                    let r2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
                    data.push(((-r2 / 8.0).exp() + 0.3 * (0.9 * p[0]).sin() * (0.7 * p[1]).cos()) as f32);
                }
            }
        }
        let img = Volume3D::from_f32(grid, data).unwrap();
        let mask = Volume3D::mask_from_fn(grid, |_| true);
        (img, mask)
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 30,
            lr: 1e-4,
            batch_per_inr: 200,
            net: NetConfig {
                hidden_layers: 2,
                width: 16,
                omega0: 30.0,
            },
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults_match_reference_procedure() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.lr, c.batch_per_inr), (2500, 1e-4, 10_000));
        assert_eq!((c.net.hidden_layers, c.net.width, c.net.omega0), (3, 256, 30.0));
        assert_eq!(c.weights.reg_kind, RegKind::SymmetricJacobian);
        assert_eq!((c.weights.alpha, c.weights.beta, c.weights.tau), (0.05, 1e-3, 10.0));
        assert!(c.cycle_enabled);
        let partial: TrainConfig = serde_json::from_str(r#"{"epochs": 7}"#).unwrap();
        assert_eq!(partial, TrainConfig { epochs: 7, ..c });
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 7}"#).is_err());
        assert_ne!(c.hash(), partial.hash());
    }

    #[test]
    fn identical_seeds_give_identical_pairs() {
        let (img, mask) = blob([10, 9, 8], 0.0);
        let (mov, mmask) = blob([10, 9, 8], 1.0);
        let cfg = small_cfg();
        let run = || train_pair(&img, &mov, &mask, &mmask, &cfg, &mut |_, _| Ok(())).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        let other = train_pair(&img, &mov, &mask, &mmask, &TrainConfig { seed: 6, ..cfg }, &mut |_, _| Ok(()))
            .unwrap();
        assert_ne!(a.forward, other.forward);
    }

    #[test]
    fn both_networks_move_every_epoch() {
        let (img, mask) = blob([10, 9, 8], 0.0);
        let (mov, mmask) = blob([10, 9, 8], 1.0);
        let cfg = TrainConfig { epochs: 1, ..small_cfg() };
        let mut prev = train_pair(&img, &mov, &mask, &mmask, &cfg, &mut |_, _| Ok(())).unwrap();
        for epochs in 2..5 {
            let cur = train_pair(&img, &mov, &mask, &mmask, &TrainConfig { epochs, ..cfg }, &mut |_, _| Ok(()))
                .unwrap();
            let mut df = cur.forward.clone();
            df.axpy(-1.0, &prev.forward);
            let mut db = cur.backward.clone();
            db.axpy(-1.0, &prev.backward);
            assert!(df.norm() > 0.0 && db.norm() > 0.0, "epoch {epochs}");
            prev = cur;
        }
    }

    #[test]
    fn breakdown_follows_weights() {
        let (img, mask) = blob([10, 9, 8], 0.0);
        let (mov, mmask) = blob([10, 9, 8], 1.0);
        let cfg = TrainConfig { epochs: 3, ..small_cfg() };
        let w = cfg.weights;
        let mut seen = Vec::new();
        train_pair(&img, &mov, &mask, &mmask, &cfg, &mut |e, b| {
            seen.push((e, *b));
            Ok(())
        })
        .unwrap();
        assert_eq!(seen.len(), 3);
        for (_, b) in &seen {
            let hand = b.data_f + b.data_b + w.alpha * (b.reg_f + b.reg_b) + w.beta * (b.cycle_fb + b.cycle_bf);
            assert!((b.total - hand).abs() < 1e-12);
            assert!(b.cycle_fb > 0.0 && b.cycle_bf > 0.0);
        }
        let mut no_cycle = Vec::new();
        train_pair(&img, &mov, &mask, &mmask, &TrainConfig { cycle_enabled: false, ..cfg }, &mut |_, b| {
            no_cycle.push(*b);
            Ok(())
        })
        .unwrap();
        assert!(no_cycle.iter().all(|b| b.cycle_fb == 0.0 && b.cycle_bf == 0.0));
        let mut single = Vec::new();
        train_single(&img, &mov, &mask, &cfg, &mut |_, b| {
            single.push(*b);
            Ok(())
        })
        .unwrap();
        assert!(single.iter().all(|b| b.cycle_fb == 0.0 && b.data_b == 0.0 && b.reg_b == 0.0));
    }

    #[test]
    fn input_errors() {
        let (img, mask) = blob([6, 6, 6], 0.0);
        let empty = Volume3D::mask_from_fn(*mask.grid(), |_| false);
        let cfg = TrainConfig { epochs: 1, ..small_cfg() };
        let err = train_pair(&img, &img, &empty, &mask, &cfg, &mut |_, _| Ok(())).unwrap_err();
        assert!(matches!(err, Error::Domain(_)), "{err}");
        let (other, _) = blob([5, 6, 6], 0.0);
        let err = train_pair(&img, &other, &mask, &mask, &cfg, &mut |_, _| Ok(())).unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "{err}");
        let err = train_single(&img, &img, &mask, &TrainConfig { epochs: 0, ..cfg }, &mut |_, _| Ok(()))
            .unwrap_err();
        assert!(matches!(err, Error::Parameter(_)), "{err}");
    }

    #[test]
    fn non_finite_loss_aborts_with_epoch() {
        let (img, mask) = blob([8, 8, 8], 0.0);
        let bad = Volume3D::from_f32(
            *img.grid(),
            img.to_f64().iter().enumerate().map(|(i, v)| if i == 100 { f32::NAN } else { *v as f32 }).collect(),
        )
        .unwrap();
        let cfg = TrainConfig { epochs: 5, batch_per_inr: 600, ..small_cfg() };
        match train_single(&img, &bad, &mask, &cfg, &mut |_, _| Ok(())) {
            Err(Error::NonFiniteLoss { epoch, breakdown }) => {
                assert_eq!(epoch, 0);
                assert!(breakdown.contains("data_f=NaN"), "{breakdown}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let (img, mask) = blob([8, 8, 8], 0.0);
        let cfg = TrainConfig { epochs: 2, ..small_cfg() };
        let pair = train_pair(&img, &img, &mask, &mask, &cfg, &mut |_, _| Ok(())).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_pair(&pair, dir.path()).unwrap();
        assert_eq!(load_pair(dir.path()).unwrap(), pair);
        let single = train_single(&img, &img, &mask, &cfg, &mut |_, _| Ok(())).unwrap();
        let sdir = tempfile::tempdir().unwrap();
        save_single(&single, sdir.path()).unwrap();
        assert_eq!(load_checkpoint(sdir.path()).unwrap(), Checkpoint::Single(single));
        assert!(load_pair(sdir.path()).is_err());
        // tamper with one payload
        let f = dir.path().join("backward.layer1.f64");
        let mut bytes = fs::read(&f).unwrap();
        bytes[3] ^= 1;
        fs::write(&f, bytes).unwrap();
        assert!(matches!(load_pair(dir.path()), Err(Error::Integrity(_))));
    }

    #[test]
    fn metrics_lines_are_json() {
        let mut w = MetricsWriter::new(Vec::new());
        let b = LossBreakdown {
            data_f: -0.5,
            total: -0.5,
            ..Default::default()
        };
        w.record(3, &b).unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(v["epoch"], 3);
        assert_eq!(v["data_f"], -0.5);
        assert_eq!(v["cycle_bf"], 0.0);
    }
}
