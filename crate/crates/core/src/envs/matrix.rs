//! Single-state two-player three-action matrix games.
//!
//! Both games end after one joint action; the state and the observations
//! are the constant scalar 1. The difficulty parameter `k` tunes how
//! tempting the suboptimal payoffs are.

use super::{validate_action, EnvError, EnvSpec, Environment, StepResult};

fn matrix_spec() -> EnvSpec {
    EnvSpec {
        n_agents: 2,
        actions_per_agent: vec![3, 3],
        state_dim: 1,
        obs_dim: 1,
        episode_limit: 1,
    }
}

/// Coordination game with a punished optimum:
///
/// ```text
///        A     B     C
///   A  [  8,  -12,  -12 ]
///   B  [-12,   k,    0  ]
///   C  [-12,   0,    k  ]
/// ```
///
/// Agents must pick the same action to score; miscoordinating on the
/// optimal action A costs -12, so monotone factorizations retreat to the
/// safe B/C block and the closer `k` gets to 8 the deeper that suboptimal
/// basin becomes.
pub struct MatrixGameI {
    k: f64,
    terminated: bool,
}

impl MatrixGameI {
    pub fn new(k: f64) -> MatrixGameI {
        MatrixGameI { k, terminated: true }
    }

    pub fn payoff(&self, row: usize, col: usize) -> f64 {
        match (row, col) {
            (0, 0) => 8.0,
            (1, 1) | (2, 2) => self.k,
            (0, _) | (_, 0) => -12.0,
            _ => 0.0,
        }
    }
}

impl Environment for MatrixGameI {
    fn env_info(&self) -> EnvSpec {
        matrix_spec()
    }

    fn reset(&mut self, _seed: u64) -> (Vec<f64>, Vec<Vec<f64>>) {
        self.terminated = false;
        (vec![1.0], vec![vec![1.0], vec![1.0]])
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError> {
        if self.terminated {
            return Err(EnvError::Terminated);
        }
        validate_action(&self.env_info(), joint_action)?;
        self.terminated = true;
        Ok(StepResult {
            reward: self.payoff(joint_action[0], joint_action[1]),
            next_state: vec![1.0],
            next_obs: vec![vec![1.0], vec![1.0]],
            terminated: true,
        })
    }

    fn optimal_return(&self) -> f64 {
        8.0
    }
}

/// Risk-trap game. Row-player x column-player payoffs:
///
/// ```text
///        A     B     C
///   A  [-2k,   0,   12 ]
///   B  [  0,  10,    0 ]
///   C  [ 11,   0,  -2k ]
/// ```
///
/// (A,C) is optimal and (C,A) nearly so. The matrix is symmetric under
/// transposing and swapping A with C, so both players face the same
/// expected-value landscape: at k = 0 the ambitious actions (row A,
/// column C) have the best uniform-partner payoff, but for k > 1 action B
/// dominates in expectation for both, luring IGM-based methods into the
/// (B,B) trap worth 10.
pub struct MatrixGameII {
    k: f64,
    terminated: bool,
}

impl MatrixGameII {
    pub fn new(k: f64) -> MatrixGameII {
        MatrixGameII { k, terminated: true }
    }

    pub fn payoff(&self, row: usize, col: usize) -> f64 {
        match (row, col) {
            (0, 2) => 12.0,
            (2, 0) => 11.0,
            (1, 1) => 10.0,
            (0, 0) | (2, 2) => -2.0 * self.k,
            _ => 0.0,
        }
    }
}

impl Environment for MatrixGameII {
    fn env_info(&self) -> EnvSpec {
        matrix_spec()
    }

    fn reset(&mut self, _seed: u64) -> (Vec<f64>, Vec<Vec<f64>>) {
        self.terminated = false;
        (vec![1.0], vec![vec![1.0], vec![1.0]])
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError> {
        if self.terminated {
            return Err(EnvError::Terminated);
        }
        validate_action(&self.env_info(), joint_action)?;
        self.terminated = true;
        Ok(StepResult {
            reward: self.payoff(joint_action[0], joint_action[1]),
            next_state: vec![1.0],
            next_obs: vec![vec![1.0], vec![1.0]],
            terminated: true,
        })
    }

    fn optimal_return(&self) -> f64 {
        12.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn game_one_payoffs() {
        let mut env = MatrixGameI::new(7.5);
        env.reset(0);
        let res = env.step(&[0, 0]).unwrap();
        assert_eq!(res.reward, 8.0);
        assert!(res.terminated);

        env.reset(0);
        assert_eq!(env.step(&[1, 1]).unwrap().reward, 7.5);
        env.reset(0);
        assert_eq!(env.step(&[2, 2]).unwrap().reward, 7.5);
        env.reset(0);
        assert_eq!(env.step(&[0, 1]).unwrap().reward, -12.0);
        env.reset(0);
        assert_eq!(env.step(&[2, 0]).unwrap().reward, -12.0);
        env.reset(0);
        assert_eq!(env.step(&[1, 2]).unwrap().reward, 0.0);
    }

    #[test]
    fn game_two_payoffs_and_expected_value_trap() {
        let env = MatrixGameII::new(2.0);
        assert_eq!(env.payoff(0, 2), 12.0);
        assert_eq!(env.payoff(2, 0), 11.0);
        assert_eq!(env.payoff(1, 1), 10.0);
        assert_eq!(env.payoff(0, 0), -4.0);
        assert_eq!(env.payoff(2, 2), -4.0);
        assert_eq!(env.payoff(1, 0), 0.0);
        assert_eq!(env.payoff(1, 2), 0.0);
        assert_eq!(env.payoff(2, 1), 0.0);

        // Against a uniform partner, B must dominate for BOTH players
        // (ties allowed exactly at k=1, strict beyond).
        for k in [1.0, 1.5, 2.0] {
            let env = MatrixGameII::new(k);
            let row_ev = |r: usize| (0..3).map(|c| env.payoff(r, c)).sum::<f64>() / 3.0;
            let col_ev = |c: usize| (0..3).map(|r| env.payoff(r, c)).sum::<f64>() / 3.0;
            assert!(row_ev(1) >= row_ev(0) && row_ev(1) >= row_ev(2), "k={k}");
            assert!(col_ev(1) >= col_ev(0) && col_ev(1) >= col_ev(2), "k={k}");
            if k > 1.0 {
                assert!(row_ev(1) > row_ev(0) && row_ev(1) > row_ev(2));
                assert!(col_ev(1) > col_ev(0) && col_ev(1) > col_ev(2));
            }
        }

        // At k=0 the ambitious corner is the expected-value argmax instead.
        let env = MatrixGameII::new(0.0);
        let row_ev = |r: usize| (0..3).map(|c| env.payoff(r, c)).sum::<f64>() / 3.0;
        let col_ev = |c: usize| (0..3).map(|r| env.payoff(r, c)).sum::<f64>() / 3.0;
        assert!(row_ev(0) > row_ev(1) && col_ev(2) > col_ev(1));
    }

    #[test]
    fn step_after_termination_is_an_error() {
        let mut env = MatrixGameI::new(0.0);
        env.reset(0);
        env.step(&[0, 0]).unwrap();
        assert_eq!(env.step(&[0, 0]).unwrap_err(), EnvError::Terminated);
    }

    #[test]
    fn invalid_action_is_an_error() {
        let mut env = MatrixGameI::new(0.0);
        env.reset(0);
        assert!(matches!(env.step(&[0, 3]), Err(EnvError::InvalidAction { agent: 1, .. })));
    }

    #[test]
    fn reset_is_deterministic() {
        let mut env = MatrixGameII::new(1.0);
        let a = env.reset(42);
        let b = env.reset(42);
        assert_eq!(a, b);
        assert_eq!(a.0, vec![1.0]);
        assert_eq!(a.1, vec![vec![1.0], vec![1.0]]);
    }
}
