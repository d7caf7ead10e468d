//! Shielded deep Q-learning over the certified gain library.
//!
//! Actions are indices into the admissible library, so every gain the agent
//! can apply is certified by construction.

mod checkpoint;
mod network;
mod policy;
mod replay;
mod reward;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use network::{
    gradient_check, td_loss, td_loss_and_gradient, td_targets, Activation, Adam, Gradients, Layer, QNetwork,
    Transition,
};
pub use policy::{argmax, epsilon_at, select_action, DwellState};
pub use replay::ReplayBuffer;
pub use reward::{is_safety_violation, reward, RewardTerms, RewardWeights, SafetyLimits};
pub use train::{evaluate, train, EpisodeSummary, TrainOutcome};

use crate::error::{Error, Result};
use crate::plant::State14;

/// Observation length: 14 normalized state components plus the phase.
pub const OBSERVATION_DIM: usize = 15;

/// Per-component normalizers applied to the raw state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObservationScales {
    pub position: f64,
    pub velocity: f64,
    pub angle: f64,
    pub rate: f64,
    pub thrust: f64,
    pub thrust_rate: f64,
}

impl ObservationScales {
    /// Positions by 5 m, velocities by 5 m/s, angles by pi/3, rates by
    /// 5 rad/s, thrust and its rate by `m g`.
    pub fn for_hover_thrust(mg: f64) -> Self {
        Self {
            position: 5.0,
            velocity: 5.0,
            angle: std::f64::consts::FRAC_PI_3,
            rate: 5.0,
            thrust: mg,
            thrust_rate: mg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.position,
            self.velocity,
            self.angle,
            self.rate,
            self.thrust,
            self.thrust_rate,
        ];
        if all.iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(())
        } else {
            Err(Error::validation("observation scales", "must all be positive"))
        }
    }

    fn per_component(&self) -> [f64; 14] {
        let mut s = [0.0; 14];
        s[0..3].fill(self.position);
        s[3..6].fill(self.velocity);
        s[6..9].fill(self.angle);
        s[9..12].fill(self.rate);
        s[12] = self.thrust;
        s[13] = self.thrust_rate;
        s
    }
}

/// `[x / scale, min(t / tf, 1)]`.
pub fn observe(x: &State14, t: f64, tf: f64, scales: &ObservationScales) -> Vec<f64> {
    let xv = x.to_vector();
    let mut obs: Vec<f64> = xv.iter().zip(scales.per_component()).map(|(v, s)| v / s).collect();
    obs.push((t / tf).clamp(0.0, 1.0));
    obs
}

/// Learning hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    pub episodes: usize,
    pub gamma: f64,
    pub lr: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of all training steps over which epsilon decays linearly.
    pub eps_decay_fraction: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub dwell_steps: usize,
    /// Replay buffer and batched updates; off means one update per step on
    /// the latest transition.
    pub replay: bool,
    /// Bootstrap from a periodically synced parameter copy; off means the
    /// live network bootstraps its own target.
    pub target_network: bool,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Gradient updates between target syncs.
    pub target_sync: usize,
    /// Environment steps between gradient updates.
    pub train_every: usize,
    /// Transitions collected before the first update.
    pub warmup: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            gamma: 0.99,
            lr: 1e-3,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_fraction: 0.6,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            dwell_steps: 10,
            replay: true,
            target_network: true,
            replay_capacity: 50_000,
            batch_size: 64,
            target_sync: 500,
            train_every: 4,
            warmup: 1_000,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::validation(field, reason))
            }
        };
        check(self.episodes >= 1, "agent.episodes", "must be at least 1")?;
        check(self.gamma > 0.0 && self.gamma < 1.0, "agent.gamma", "must lie in (0, 1)")?;
        check(self.lr >= 0.0 && self.lr.is_finite(), "agent.lr", "must be finite and >= 0")?;
        let unit = |e: f64| (0.0..=1.0).contains(&e);
        check(unit(self.eps_start), "agent.eps_start", "must lie in [0, 1]")?;
        check(unit(self.eps_end), "agent.eps_end", "must lie in [0, 1]")?;
        check(
            unit(self.eps_decay_fraction),
            "agent.eps_decay_fraction",
            "must lie in [0, 1]",
        )?;
        check(
            !self.hidden.is_empty() && self.hidden.iter().all(|h| *h > 0),
            "agent.hidden",
            "needs at least one positive layer width",
        )?;
        check(self.dwell_steps >= 1, "agent.dwell_steps", "must be at least 1")?;
        check(self.replay_capacity >= 1, "agent.replay_capacity", "must be at least 1")?;
        check(self.batch_size >= 1, "agent.batch_size", "must be at least 1")?;
        check(self.target_sync >= 1, "agent.target_sync", "must be at least 1")?;
        check(self.train_every >= 1, "agent.train_every", "must be at least 1")
    }
}
