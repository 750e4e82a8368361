//! Adam with per-block learning rates and sparse updates.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::params::ParamBlock;

/// Per-block step sizes. Positions decay exponentially from `position` to
/// `position_final` over the run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    pub position: f64,
    pub position_final: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color: f64,
    pub embedding: f64,
    pub network: f64,
    pub asg: f64,
    pub fresnel: f64,
    pub camera: f64,
    pub light: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 1.6e-4,
            position_final: 1.6e-6,
            rotation: 1e-3,
            scale: 5e-3,
            opacity: 2.5e-2,
            color: 2.5e-2,
            embedding: 1e-3,
            network: 1e-3,
            asg: 1e-3,
            fresnel: 1e-3,
            camera: 1e-4,
            light: 1e-4,
        }
    }
}

impl LearningRates {
    /// Step size for `block` at iteration `iter` of `total`.
    pub fn for_block(&self, block: ParamBlock, iter: u32, total: u32) -> f64 {
        match block {
            ParamBlock::Position => {
                let t = if total == 0 { 1.0 } else { (iter as f64 / total as f64).clamp(0.0, 1.0) };
                libm::exp((1.0 - t) * libm::log(self.position) + t * libm::log(self.position_final))
            }
            ParamBlock::Rotation => self.rotation,
            ParamBlock::Scale => self.scale,
            ParamBlock::Opacity => self.opacity,
            ParamBlock::DiffuseColor | ParamBlock::SpecularColor | ParamBlock::SssColor => self.color,
            ParamBlock::Embedding => self.embedding,
            ParamBlock::SssNet | ParamBlock::ShadowNet => self.network,
            ParamBlock::AsgLobes | ParamBlock::AsgWeights => self.asg,
            ParamBlock::Fresnel => self.fresnel,
            ParamBlock::CameraDelta => self.camera,
            ParamBlock::LightDelta => self.light,
        }
    }
}

/// Moment estimates of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of updates applied to this block so far.
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: BTreeMap<ParamBlock, AdamState>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            state: BTreeMap::new(),
        }
    }
}

impl Adam {
    /// Updates `params` in place. Elements whose gradient is exactly zero are
    /// left untouched (moments included); a block whose gradient is entirely zero
    /// does not advance its step count. Returns whether anything changed.
    pub fn step(&mut self, block: ParamBlock, params: &mut [f64], grad: &[f64], lr: f64) -> bool {
        assert_eq!(params.len(), grad.len(), "gradient length for {block}");
        if grad.iter().all(|g| *g == 0.0) {
            return false;
        }
        let st = self.state.entry(block).or_insert_with(|| AdamState {
            m: vec![0.0; params.len()],
            v: vec![0.0; params.len()],
            steps: 0,
        });
        if st.m.len() != params.len() {
            st.m = vec![0.0; params.len()];
            st.v = vec![0.0; params.len()];
            st.steps = 0;
        }
        st.steps += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, st.steps as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, st.steps as f64);
        for (i, &g) in grad.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            st.m[i] = self.beta1 * st.m[i] + (1.0 - self.beta1) * g;
            st.v[i] = self.beta2 * st.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = st.m[i] / bc1;
            let v_hat = st.v[i] / bc2;
            params[i] -= lr * m_hat / (libm::sqrt(v_hat) + self.eps);
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut adam = Adam::default();
        let mut p = vec![1.0, -2.0, 3.5];
        let before = p.clone();
        assert!(!adam.step(ParamBlock::Opacity, &mut p, &[0.0; 3], 0.1));
        assert_eq!(p, before);
        assert!(adam.state.is_empty());
    }

    #[test]
    fn sparse_elements_are_untouched() {
        let mut adam = Adam::default();
        let mut p = vec![1.0, 1.0];
        adam.step(ParamBlock::Opacity, &mut p, &[0.5, 0.0], 0.1);
        assert_eq!(p[1], 1.0);
        // first Adam step moves by about lr against the gradient sign
        assert!((p[0] - 0.9).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut adam = Adam::default();
        let mut p = vec![3.0, -4.0];
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            adam.step(ParamBlock::Position, &mut p, &g, 0.01);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-2), "{p:?}");
    }

    #[test]
    fn position_rate_decays_geometrically() {
        let lr = LearningRates::default();
        assert!((lr.for_block(ParamBlock::Position, 0, 100) - 1.6e-4).abs() < 1e-18);
        assert!((lr.for_block(ParamBlock::Position, 100, 100) - 1.6e-6).abs() < 1e-18);
        assert!((lr.for_block(ParamBlock::Position, 50, 100) - 1.6e-5).abs() < 1e-15);
    }
}
