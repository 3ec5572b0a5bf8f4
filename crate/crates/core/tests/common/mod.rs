#![allow(dead_code)]

use clvdqn_core::oracles::TabularMdp;
use clvdqn_core::{RfmiState, TransitionTuple};

/// Three states, two actions, deterministic. Action 1 is optimal everywhere
/// and also has the larger immediate reward in every state.
pub fn toy_mdp() -> TabularMdp {
    TabularMdp {
        next: vec![vec![0, 1], vec![0, 2], vec![1, 2]],
        reward: vec![vec![0.0, 0.5], vec![0.0, 0.8], vec![0.2, 1.0]],
    }
}

/// State `s` one-hot encoded in the first three of the five state slots.
pub fn one_hot(s: usize) -> RfmiState {
    let mut v = [0.0; 5];
    v[s] = 1.0;
    RfmiState::from_array(v)
}

/// Every (state, action) pair repeated `copies` times.
pub fn toy_transitions(mdp: &TabularMdp, copies: usize) -> Vec<TransitionTuple> {
    let mut out = Vec::new();
    for _ in 0..copies {
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                out.push(TransitionTuple::new(one_hot(s), a, 0.0, one_hot(mdp.next[s][a]), mdp.reward[s][a]));
            }
        }
    }
    out
}
