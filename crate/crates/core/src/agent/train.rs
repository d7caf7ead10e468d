use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{td_loss_and_gradient, td_targets, Adam, QNetwork, Transition};
use super::policy::{epsilon_at, select_action, DwellState};
use super::replay::ReplayBuffer;
use super::{AgentConfig, OBSERVATION_DIM};
use crate::error::{Error, Result};
use crate::harness::episode::{run_episode, EnvConfig, EpisodeLog, GainTable, Termination};

/// Per-episode training statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub episode_return: f64,
    /// Mean TD loss over the updates made during the episode, NaN if none.
    pub mean_loss: f64,
    /// Exploration rate at the episode's first step.
    pub epsilon: f64,
    pub switches: usize,
    pub steps: usize,
    pub updates: usize,
    pub termination: Termination,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: QNetwork,
    pub log: Vec<EpisodeSummary>,
    pub seed: u64,
}

struct Learner {
    net: QNetwork,
    target: Option<QNetwork>,
    adam: Adam,
    replay: Option<ReplayBuffer>,
    updates: usize,
}

impl Learner {
    fn update(&mut self, batch: &[&Transition], cfg: &AgentConfig) -> Result<f64> {
        let targets = td_targets(self.target.as_ref().unwrap_or(&self.net), batch, cfg.gamma);
        let (loss, grads) = td_loss_and_gradient(&self.net, batch, &targets);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        self.adam.step(&mut self.net, &grads);
        self.updates += 1;
        if let Some(target) = self.target.as_mut() {
            if self.updates % cfg.target_sync == 0 {
                target.clone_from(&self.net);
            }
        }
        Ok(loss)
    }
}

/// Shielded DQN training. Actions index `table`, so only its gains are ever
/// applied. Deterministic in `seed`.
pub fn train(env: &EnvConfig, table: &GainTable, cfg: &AgentConfig, seed: u64) -> Result<TrainOutcome> {
    if table.is_empty() {
        return Err(Error::EmptyLibrary);
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = QNetwork::new(OBSERVATION_DIM, &cfg.hidden, table.len(), cfg.activation, &mut rng);
    let mut learner = Learner {
        target: cfg.target_network.then(|| net.clone()),
        adam: Adam::new(&net, cfg.lr),
        replay: cfg.replay.then(|| ReplayBuffer::new(cfg.replay_capacity)),
        net,
        updates: 0,
    };
    let steps_per_episode = env.steps();
    let total_steps = cfg.episodes * steps_per_episode;
    let mut global_step = 0usize;
    let mut log = Vec::with_capacity(cfg.episodes);

    for episode in 0..cfg.episodes {
        let mut dwell = DwellState::new(0, cfg.dwell_steps);
        let epsilon0 = epsilon_at(global_step, total_steps, cfg.eps_start, cfg.eps_end, cfg.eps_decay_fraction);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        let mut failure: Option<Error> = None;
        let updates_before = learner.updates;

        // The policy and learner share the RNG and network; the episode
        // runner calls `policy` then `on_transition` strictly alternately.
        let shared = std::cell::RefCell::new((&mut learner, &mut rng, &mut global_step));
        let episode_log: EpisodeLog = run_episode(
            env,
            table,
            seed,
            cfg.dwell_steps,
            |obs, step| {
                let (l, r, g) = &mut *shared.borrow_mut();
                if step > 0 {
                    dwell.tick();
                }
                let eps = epsilon_at(**g, total_steps, cfg.eps_start, cfg.eps_end, cfg.eps_decay_fraction);
                let q = l.net.forward(obs);
                select_action(&q, eps, &mut dwell, *r)
            },
            |t| {
                if failure.is_some() {
                    return;
                }
                let (l, r, g) = &mut *shared.borrow_mut();
                **g += 1;
                let result = if let Some(buffer) = l.replay.as_mut() {
                    buffer.push(t);
                    let ready = buffer.len() >= cfg.warmup.max(cfg.batch_size);
                    if ready && **g % cfg.train_every == 0 {
                        let batch: Vec<Transition> =
                            buffer.sample(cfg.batch_size, *r).into_iter().cloned().collect();
                        let refs: Vec<&Transition> = batch.iter().collect();
                        l.update(&refs, cfg).map(Some)
                    } else {
                        Ok(None)
                    }
                } else {
                    l.update(&[&t], cfg).map(Some)
                };
                match result {
                    Ok(Some(loss)) => {
                        loss_sum += loss;
                        loss_count += 1;
                    }
                    Ok(None) => {}
                    Err(e) => failure = Some(e),
                }
            },
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        log.push(EpisodeSummary {
            episode,
            episode_return: episode_log.episode_return,
            mean_loss: if loss_count > 0 {
                loss_sum / loss_count as f64
            } else {
                f64::NAN
            },
            epsilon: epsilon0,
            switches: episode_log.switches(),
            steps: episode_log.rows.len(),
            updates: learner.updates - updates_before,
            termination: episode_log.termination,
        });
    }
    Ok(TrainOutcome {
        net: learner.net,
        log,
        seed,
    })
}

/// Greedy rollout with the dwell shield.
pub fn evaluate(net: &QNetwork, env: &EnvConfig, table: &GainTable, dwell_steps: usize, seed: u64) -> Result<EpisodeLog> {
    if net.output_dim() != table.len() {
        return Err(Error::validation(
            "checkpoint",
            format!(
                "network has {} outputs but the library has {} entries",
                net.output_dim(),
                table.len()
            ),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dwell = DwellState::new(0, dwell_steps.max(1));
    run_episode(
        env,
        table,
        seed,
        dwell_steps,
        |obs, step| {
            if step > 0 {
                dwell.tick();
            }
            select_action(&net.forward(obs), 0.0, &mut dwell, &mut rng)
        },
        |_| {},
    )
}
