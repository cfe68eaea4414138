//! RMSProp with global gradient-norm clipping.

use std::fmt;

use super::tensor::Tensor;

/// The optimizer was constructed for a different parameter list than the one
/// passed to `step`.
#[derive(Debug, Clone, PartialEq)]
pub struct MisalignedState {
    pub expected: usize,
    pub got: usize,
}

impl fmt::Display for MisalignedState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "optimizer state holds {} parameters, step got {}", self.expected, self.got)
    }
}

impl std::error::Error for MisalignedState {}

/// RMSProp: `v <- alpha*v + (1-alpha)*g^2; p <- p - lr*g/(sqrt(v) + eps)`.
///
/// State entries are aligned index-for-index with the parameter list the
/// optimizer was built from.
pub struct RmsProp {
    lr: f64,
    alpha: f64,
    eps: f64,
    sq_avg: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(params: &[Tensor], lr: f64, alpha: f64, eps: f64) -> RmsProp {
        RmsProp { lr, alpha, eps, sq_avg: params.iter().map(|p| vec![0.0; p.numel()]).collect() }
    }

    /// Applies one update using each parameter's accumulated gradient.
    /// Parameters without a populated gradient are treated as zero-gradient
    /// (their running average still decays).
    pub fn step(&mut self, params: &[Tensor]) -> Result<(), MisalignedState> {
        if params.len() != self.sq_avg.len() {
            return Err(MisalignedState { expected: self.sq_avg.len(), got: params.len() });
        }
        for (p, v) in params.iter().zip(self.sq_avg.iter_mut()) {
            if p.numel() != v.len() {
                return Err(MisalignedState { expected: v.len(), got: p.numel() });
            }
            let grad = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
            let mut data = p.to_vec();
            for ((pv, vv), g) in data.iter_mut().zip(v.iter_mut()).zip(&grad) {
                *vv = self.alpha * *vv + (1.0 - self.alpha) * g * g;
                *pv -= self.lr * g / (vv.sqrt() + self.eps);
            }
            p.set_data(&data);
        }
        Ok(())
    }
}

/// Scales all gradients by `max_norm / norm` when their joint L2 norm
/// exceeds `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm(params: &[Tensor], max_norm: f64) -> f64 {
    let mut sq_sum = 0.0;
    for p in params {
        if let Some(g) = p.grad() {
            sq_sum += g.iter().map(|v| v * v).sum::<f64>();
        }
    }
    let norm = sq_sum.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for p in params {
            if let Some(g) = p.grad() {
                let scaled: Vec<f64> = g.iter().map(|v| v * scale).collect();
                p.zero_grad();
                p.add_to_grad(&scaled);
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param_with_grad(data: &[f64], grad: &[f64]) -> Tensor {
        let t = Tensor::param(&[data.len()], data.to_vec()).unwrap();
        t.add_to_grad(grad);
        t
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let p = param_with_grad(&[1.0, -2.0], &[0.0, 0.0]);
        let mut opt = RmsProp::new(&[p.clone()], 0.0005, 0.99, 1e-5);
        opt.step(&[p.clone()]).unwrap();
        assert_eq!(p.to_vec(), vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_closed_form() {
        let p = param_with_grad(&[0.0], &[1.0]);
        let mut opt = RmsProp::new(&[p.clone()], 0.0005, 0.99, 1e-5);
        opt.step(&[p.clone()]).unwrap();
        // v = 0.01, delta = -0.0005 / (0.1 + 1e-5)
        let expected = -0.0005 / (0.1 + 1e-5);
        assert!((p.to_vec()[0] - expected).abs() < 1e-15, "{}", p.to_vec()[0]);
        assert!((p.to_vec()[0] + 0.0049995).abs() < 1e-6);
    }

    #[test]
    fn repeated_identical_steps_shrink() {
        let p = param_with_grad(&[0.0], &[1.0]);
        let mut opt = RmsProp::new(&[p.clone()], 0.0005, 0.99, 1e-5);
        opt.step(&[p.clone()]).unwrap();
        let d1 = p.to_vec()[0].abs();
        let before = p.to_vec()[0];
        p.zero_grad();
        p.add_to_grad(&[1.0]);
        opt.step(&[p.clone()]).unwrap();
        let d2 = (p.to_vec()[0] - before).abs();
        assert!(d2 < d1, "second step {d2} should be smaller than first {d1}");
    }

    #[test]
    fn misaligned_state_is_an_error() {
        let p = param_with_grad(&[0.0], &[1.0]);
        let q = param_with_grad(&[0.0], &[1.0]);
        let mut opt = RmsProp::new(&[p.clone()], 0.0005, 0.99, 1e-5);
        assert!(opt.step(&[p, q]).is_err());
    }

    #[test]
    fn clip_examples() {
        let p = param_with_grad(&[0.0, 0.0], &[3.0, 4.0]);
        let norm = clip_global_norm(&[p.clone()], 10.0);
        assert_eq!(norm, 5.0);
        assert_eq!(p.grad().unwrap(), vec![3.0, 4.0]);

        let q = param_with_grad(&[0.0, 0.0], &[30.0, 40.0]);
        let norm = clip_global_norm(&[q.clone()], 10.0);
        assert_eq!(norm, 50.0);
        assert_eq!(q.grad().unwrap(), vec![6.0, 8.0]);
    }
}
