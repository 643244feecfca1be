use super::NnError;

/// Moment estimates of the Adam optimizer over one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update in place. The gradient is validated before
/// anything is modified.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<(), NnError> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(NnError::Dimension {
            expected: params.len(),
            got: grads.len(),
        });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(NnError::NonFiniteGradient(i));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2, 1e-4);
        adam_step(&mut p, &[0.0, 0.0], &mut s).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_matches_hand_recurrence() {
        // m1 = 0.1 g, v1 = 0.001 g^2, m_hat = g, v_hat = g^2
        // update = -lr * g / (|g| + eps)
        let g = 0.37;
        let lr = 1e-4;
        let mut p = vec![0.5];
        let mut s = AdamState::new(1, lr);
        adam_step(&mut p, &[g], &mut s).unwrap();
        let m1: f64 = 0.1 * g;
        let v1: f64 = 0.001 * g * g;
        let expected = 0.5 - lr * (m1 / 0.1) / ((v1 / (1.0 - 0.999)).sqrt() + 1e-8);
        assert!((p[0] - expected).abs() < 1e-16);
        assert!((p[0] - (0.5 - lr * g / (g + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_reports_index() {
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new(3, 1e-3);
        let err = adam_step(&mut p, &[0.0, f64::NAN, 1.0], &mut s).unwrap_err();
        assert_eq!(err, NnError::NonFiniteGradient(1));
        assert_eq!(s.step, 0);
        assert_eq!(p, vec![0.0; 3]);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = vec![0.1, 0.2, 0.3];
            let mut s = AdamState::new(3, 1e-2);
            for k in 0..5 {
                let g: Vec<f64> = p.iter().map(|x| x * (k as f64 + 1.0)).collect();
                adam_step(&mut p, &g, &mut s).unwrap();
            }
            (p, s)
        };
        assert_eq!(run(), run());
    }
}
