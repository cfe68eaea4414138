//! Multi-step matrix game probing both representation and exploration.
//!
//! Two agents, two actions. From the initial state the diagonal joint
//! actions enter one of two chains: upper-left (0,0) starts chain 1,
//! lower-right (1,1) starts chain 2, and any off-diagonal action ends the
//! episode with reward 0. Inside a chain the entry action must be repeated
//! until it has been played eight times in total, each repeat paying 0 and
//! any deviation ending the episode with 0. After eight repeats chain 1
//! reaches terminal decision state T1 and chain 2 reaches T2. At T1 only
//! (1,1) pays 13; at T2 every joint action pays 10. Every payout ends the
//! episode, so the optimal return is 13 via chain 1 and the tempting safe
//! return is 10 via chain 2.

use super::{validate_action, EnvError, EnvSpec, Environment, StepResult};

const CHAIN_LEN: usize = 8;
// one-hot step count 0..=8, then one-hot last joint action
// (none, (0,0), (0,1), (1,0), (1,1)).
const ENC_DIM: usize = (CHAIN_LEN + 1) + 5;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Initial,
    Chain { entry: usize, count: usize },
    Done,
}

pub struct MultiStepMatrixGame {
    phase: Phase,
    last_joint: Option<(usize, usize)>,
}

impl MultiStepMatrixGame {
    pub fn new() -> MultiStepMatrixGame {
        MultiStepMatrixGame { phase: Phase::Done, last_joint: None }
    }

    fn encode(&self) -> Vec<f64> {
        let mut v = vec![0.0; ENC_DIM];
        let count = match self.phase {
            Phase::Initial => 0,
            Phase::Chain { count, .. } => count,
            Phase::Done => CHAIN_LEN,
        };
        v[count] = 1.0;
        let joint_slot = match self.last_joint {
            None => 0,
            Some((a, b)) => 1 + a * 2 + b,
        };
        v[CHAIN_LEN + 1 + joint_slot] = 1.0;
        v
    }

    fn observe(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        let enc = self.encode();
        (enc.clone(), vec![enc.clone(), enc])
    }
}

impl Default for MultiStepMatrixGame {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for MultiStepMatrixGame {
    fn env_info(&self) -> EnvSpec {
        EnvSpec {
            n_agents: 2,
            actions_per_agent: vec![2, 2],
            state_dim: ENC_DIM,
            obs_dim: ENC_DIM,
            episode_limit: CHAIN_LEN + 1,
        }
    }

    fn reset(&mut self, _seed: u64) -> (Vec<f64>, Vec<Vec<f64>>) {
        self.phase = Phase::Initial;
        self.last_joint = None;
        self.observe()
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError> {
        if self.phase == Phase::Done {
            return Err(EnvError::Terminated);
        }
        validate_action(&self.env_info(), joint_action)?;
        let joint = (joint_action[0], joint_action[1]);
        let (reward, terminated) = match self.phase {
            Phase::Initial => match joint {
                (0, 0) => {
                    self.phase = Phase::Chain { entry: 0, count: 1 };
                    (0.0, false)
                }
                (1, 1) => {
                    self.phase = Phase::Chain { entry: 1, count: 1 };
                    (0.0, false)
                }
                _ => (0.0, true),
            },
            Phase::Chain { entry, count } => {
                if count < CHAIN_LEN {
                    if joint == (entry, entry) {
                        self.phase = Phase::Chain { entry, count: count + 1 };
                        (0.0, false)
                    } else {
                        (0.0, true)
                    }
                } else if entry == 0 {
                    // T1: only the lower-right joint action pays.
                    (if joint == (1, 1) { 13.0 } else { 0.0 }, true)
                } else {
                    // T2: everything pays the safe reward.
                    (10.0, true)
                }
            }
            Phase::Done => unreachable!(),
        };
        self.last_joint = Some(joint);
        if terminated {
            self.phase = Phase::Done;
        }
        let (next_state, next_obs) = self.observe();
        Ok(StepResult { reward, next_state, next_obs, terminated })
    }

    fn optimal_return(&self) -> f64 {
        13.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(env: &mut MultiStepMatrixGame, actions: &[(usize, usize)]) -> (f64, bool) {
        env.reset(0);
        let mut total = 0.0;
        let mut done = false;
        for &(a, b) in actions {
            let res = env.step(&[a, b]).unwrap();
            total += res.reward;
            done = res.terminated;
            if done {
                break;
            }
        }
        (total, done)
    }

    #[test]
    fn optimal_path_returns_13() {
        let mut env = MultiStepMatrixGame::new();
        let mut actions = vec![(0, 0); 8];
        actions.push((1, 1));
        assert_eq!(run(&mut env, &actions), (13.0, true));
    }

    #[test]
    fn safe_chain_returns_10_for_any_final_action() {
        for final_joint in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let mut env = MultiStepMatrixGame::new();
            let mut actions = vec![(1, 1); 8];
            actions.push(final_joint);
            assert_eq!(run(&mut env, &actions), (10.0, true), "final {final_joint:?}");
        }
    }

    #[test]
    fn wrong_final_action_in_chain_one_pays_zero() {
        for final_joint in [(0, 0), (0, 1), (1, 0)] {
            let mut env = MultiStepMatrixGame::new();
            let mut actions = vec![(0, 0); 8];
            actions.push(final_joint);
            assert_eq!(run(&mut env, &actions), (0.0, true), "final {final_joint:?}");
        }
    }

    #[test]
    fn off_diagonal_first_step_terminates_with_zero() {
        for joint in [(0, 1), (1, 0)] {
            let mut env = MultiStepMatrixGame::new();
            env.reset(0);
            let res = env.step(&[joint.0, joint.1]).unwrap();
            assert_eq!(res.reward, 0.0);
            assert!(res.terminated);
        }
    }

    #[test]
    fn breaking_the_repeat_chain_terminates_with_zero() {
        let mut env = MultiStepMatrixGame::new();
        env.reset(0);
        env.step(&[0, 0]).unwrap();
        env.step(&[0, 0]).unwrap();
        let res = env.step(&[1, 0]).unwrap();
        assert_eq!(res.reward, 0.0);
        assert!(res.terminated);
        assert!(env.step(&[0, 0]).is_err());
    }

    #[test]
    fn observations_encode_step_count_and_last_joint_action() {
        let mut env = MultiStepMatrixGame::new();
        let (state, obs) = env.reset(0);
        assert_eq!(state.len(), ENC_DIM);
        assert_eq!(obs[0], obs[1]);
        assert_eq!(state[0], 1.0); // count 0
        assert_eq!(state[CHAIN_LEN + 1], 1.0); // last joint action "none"

        let res = env.step(&[0, 0]).unwrap();
        assert_eq!(res.next_state[1], 1.0); // count 1
        assert_eq!(res.next_state[CHAIN_LEN + 2], 1.0); // slot for (0,0)
        assert_eq!(res.next_state.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn exactly_two_terminal_decision_states_are_reachable() {
        // Reaching count 8 is only possible via the two diagonal chains, and
        // their encodings at the decision point differ in the last-joint slot.
        let mut env = MultiStepMatrixGame::new();
        let mut enc1 = None;
        let mut enc2 = None;
        for entry in [0usize, 1usize] {
            env.reset(0);
            let mut last = None;
            for _ in 0..8 {
                last = Some(env.step(&[entry, entry]).unwrap());
            }
            let res = last.unwrap();
            assert!(!res.terminated);
            if entry == 0 {
                enc1 = Some(res.next_state);
            } else {
                enc2 = Some(res.next_state);
            }
        }
        let (enc1, enc2) = (enc1.unwrap(), enc2.unwrap());
        assert_ne!(enc1, enc2);
        assert_eq!(enc1[CHAIN_LEN], 1.0);
        assert_eq!(enc2[CHAIN_LEN], 1.0);
    }
}
