use crate::autodiff::Tensor;
use crate::model::ModelParams;

use super::{TrainConfig, TrainError};

/// Adam moment buffers, one pair per parameter tensor, and the step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    /// Zeroed buffers shaped like `params`.
    pub fn for_tensors<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first: Vec<Vec<f64>> = params.into_iter().map(|t| vec![0.0; t.numel()]).collect();
        OptimizerState {
            second: first.clone(),
            first,
            step: 0,
        }
    }

    pub fn for_model(params: &ModelParams) -> Self {
        Self::for_tensors(params.weights.entries().into_iter().map(|(_, t)| t))
    }
}

/// One bias-corrected Adam update from the gradients stored on `params`.
/// Nothing is modified when a gradient is missing or a buffer is misshapen.
pub fn adam_step_tensors(params: &mut [&mut Tensor], state: &mut OptimizerState, cfg: &TrainConfig) -> Result<(), TrainError> {
    if state.first.len() != params.len() || state.second.len() != params.len() {
        return Err(TrainError::OptimizerState(format!(
            "{} moment buffers for {} parameters",
            state.first.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        let Some(g) = p.grad() else {
            return Err(TrainError::OptimizerState(format!("parameter {i} has no gradient")));
        };
        if g.len() != p.numel() || state.first[i].len() != p.numel() || state.second[i].len() != p.numel() {
            return Err(TrainError::OptimizerState(format!("buffer shape mismatch for parameter {i}")));
        }
    }

    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - cfg.beta1.powf(t);
    let c2 = 1.0 - cfg.beta2.powf(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = p.take_grad().expect("checked above");
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// [`adam_step_tensors`] over every weight of the model, in entry order.
pub fn adam_step(params: &mut ModelParams, state: &mut OptimizerState, cfg: &TrainConfig) -> Result<(), TrainError> {
    let mut tensors = params.weights.values_mut();
    adam_step_tensors(&mut tensors, state, cfg)
}

/// Scales all gradients so that their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut [&mut Tensor], max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .filter_map(|p| p.grad())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let factor = max_norm / norm;
        for p in params.iter_mut() {
            if let Some(mut g) = p.take_grad() {
                g.iter_mut().for_each(|x| *x *= factor);
                p.set_grad(g).expect("length unchanged");
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_grad(values: &[f64], grad: &[f64]) -> Tensor {
        let mut t = Tensor::vector(values.to_vec()).with_requires_grad(true);
        t.set_grad(grad.to_vec()).unwrap();
        t
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let cfg = TrainConfig::default();
        let mut p = with_grad(&[0.3, -1.2], &[0.0, 0.0]);
        let mut state = OptimizerState::for_tensors([&p]);
        adam_step_tensors(&mut [&mut p], &mut state, &cfg).unwrap();
        assert_eq!(p.data(), &[0.3, -1.2]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = TrainConfig::default();
        for g in [1e-3, 0.5, -7.0] {
            let mut p = with_grad(&[1.0], &[g]);
            let mut state = OptimizerState::for_tensors([&p]);
            adam_step_tensors(&mut [&mut p], &mut state, &cfg).unwrap();
            let moved = 1.0 - p.data()[0];
            assert!((moved.abs() - cfg.lr).abs() < 1e-6 * cfg.lr + cfg.lr * cfg.eps / g.abs());
            assert_eq!(moved.signum(), g.signum());
        }
    }

    #[test]
    fn quadratic_magnitude_decreases_monotonically() {
        let cfg = TrainConfig {
            lr: 0.01,
            ..TrainConfig::default()
        };
        let mut w = Tensor::vector(vec![1.0]).with_requires_grad(true);
        let mut state = OptimizerState::for_tensors([&w]);
        let mut prev = 1.0;
        for _ in 0..50 {
            let g = 2.0 * w.data()[0];
            w.set_grad(vec![g]).unwrap();
            adam_step_tensors(&mut [&mut w], &mut state, &cfg).unwrap();
            let now = w.data()[0].abs();
            assert!(now < prev, "{now} !< {prev}");
            prev = now;
        }
    }

    #[test]
    fn missing_gradient_is_a_state_error() {
        let cfg = TrainConfig::default();
        let mut p = Tensor::vector(vec![1.0]).with_requires_grad(true);
        let mut state = OptimizerState::for_tensors([&p]);
        assert!(matches!(
            adam_step_tensors(&mut [&mut p], &mut state, &cfg),
            Err(TrainError::OptimizerState(_))
        ));
        assert_eq!(state.step, 0);
    }

    #[test]
    fn clipping_rescales_to_the_bound() {
        let mut a = with_grad(&[0.0], &[3.0]);
        let mut b = with_grad(&[0.0], &[4.0]);
        let norm = clip_grad_norm(&mut [&mut a, &mut b], 1.0);
        assert_eq!(norm, 5.0);
        assert!((a.grad().unwrap()[0] - 0.6).abs() < 1e-15);
        assert!((b.grad().unwrap()[0] - 0.8).abs() < 1e-15);
        let norm = clip_grad_norm(&mut [&mut a, &mut b], 10.0);
        assert!((norm - 1.0).abs() < 1e-15);
        assert!((a.grad().unwrap()[0] - 0.6).abs() < 1e-15);
    }
}
