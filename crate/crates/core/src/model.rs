use crate::action_space::{ActionSpace, MixedAction, Mode};
use crate::error::Result;
use crate::nn::Mlp;
use crate::rfmi::{NormStats, RfmiState, INACTION};

/// A Q-network together with the input normalization and action space it was trained for.
///
/// All methods take raw (unnormalized) states and report continuous
/// attributes in raw units.
#[derive(Debug, Clone, PartialEq)]
pub struct QModel {
    pub net: Mlp,
    pub norm: NormStats,
    pub space: ActionSpace,
}

/// A greedy choice in raw units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recommendation {
    pub action: usize,
    /// Continuous attribute; `None` for inaction and in discrete mode.
    pub acont: Option<f64>,
    pub q_value: f64,
}

impl QModel {
    pub fn new(net: Mlp, norm: NormStats, space: ActionSpace) -> Result<Self> {
        space.validate()?;
        space.check_net(&net)?;
        Ok(Self { net, norm, space })
    }

    pub fn mode(&self) -> Mode {
        self.space.mode
    }

    pub fn n_actions(&self) -> usize {
        self.space.spec.n_discrete
    }

    pub fn normalized_state(&self, state: &RfmiState) -> [f64; 5] {
        self.norm.state(state)
    }

    fn to_raw(&self, a: MixedAction) -> Recommendation {
        let acont = match self.space.mode {
            Mode::Mixed if a.action != INACTION => Some(self.norm.acont_inverse(a.acont)),
            _ => None,
        };
        Recommendation { action: a.action, acont, q_value: a.q_value }
    }

    pub fn recommend(&self, state: &RfmiState) -> Result<Recommendation> {
        let a = self.space.best(&self.net, &self.normalized_state(state))?;
        Ok(self.to_raw(a))
    }

    /// Value of every discrete action at `state`.
    pub fn action_values(&self, state: &RfmiState) -> Result<Vec<Recommendation>> {
        let values = self.space.values(&self.net, &self.normalized_state(state))?;
        Ok(values.into_iter().map(|a| self.to_raw(a)).collect())
    }
}
