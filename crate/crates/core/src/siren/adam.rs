use serde::{Deserialize, Serialize};

use super::network::{Gradients, SirenParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first: SirenParams,
    pub second: SirenParams,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &SirenParams) -> Self {
        Self::with_betas(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &SirenParams, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One bias-corrected Adam update in place. Fails, leaving both the
/// parameters and the state untouched, if any gradient entry is non-finite.
pub fn adam_step(
    params: &mut SirenParams,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.first) {
        return Err(Error::Contract("gradient or optimizer state shape mismatch".into()));
    }
    for (name, block) in grads.blocks() {
        if block.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { block: name });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let g_blocks = grads.blocks();
    let m_blocks = state.first.blocks_mut();
    let v_blocks = state.second.blocks_mut();
    for (((p, (_, g)), m), v) in params
        .blocks_mut()
        .into_iter()
        .zip(g_blocks)
        .zip(m_blocks)
        .zip(v_blocks)
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use crate::siren::init_siren;

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = init_siren(1, 4, 30.0, &mut stream(1, Stream::Test));
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let zero = p.zeros_like();
        adam_step(&mut p, &zero, &mut s, 1e-3).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = SirenParams::zeros(1, 1, 30.0);
        let mut g = p.zeros_like();
        g.layers[0].weight[0] = 1.0;
        let mut s = AdamState::new(&p);
        let lr = 1e-4;
        adam_step(&mut p, &g, &mut s, lr).unwrap();
        // m_hat = 1, v_hat = 1
        let expected = -lr / (1.0 + 1e-8);
        assert!((p.layers[0].weight[0] - expected).abs() < 1e-18);
        assert_eq!(p.layers[0].weight[1], 0.0);
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut p = SirenParams::zeros(2, 3, 30.0);
        let mut g = p.zeros_like();
        g.layers[1].bias[2] = f64::NAN;
        let mut s = AdamState::new(&p);
        let before = p.clone();
        match adam_step(&mut p, &g, &mut s, 1e-3) {
            Err(Error::NonFiniteGradient { block }) => assert_eq!(block, "layer1.bias"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(p, before);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = init_siren(2, 8, 30.0, &mut stream(4, Stream::Test));
            let mut s = AdamState::new(&p);
            for step in 0..5 {
                let mut g = p.clone();
                for l in &mut g.layers {
                    for (i, w) in l.weight.iter_mut().enumerate() {
                        *w = (*w * 3.0 + step as f64 * 0.1 + i as f64 * 1e-3).sin();
                    }
                }
                adam_step(&mut p, &g, &mut s, 1e-3).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
