//! Closed-loop episodes: plant + reference + snap controller with a gain
//! chosen per step from a table of scheduled gains.

use nalgebra::{Vector3, Vector4};

use crate::agent::{is_safety_violation, observe, reward, ObservationScales, RewardWeights, SafetyLimits, Transition};
use crate::certification::{certify, AdmissibleLibrary, Matrix14, QChoice};
use crate::controller::{evaluate, inversion_terms, ErrorVector, GainVector};
use crate::error::{Error, Result};
use crate::plant::{recover_torque, rk4_integrate, state_derivative, Input4, PlantParams, State14};
use crate::reference::{sample, TrajectoryConfig};

/// Everything needed to simulate one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub plant: PlantParams,
    pub trajectory: TrajectoryConfig,
    /// Episode length [s].
    pub duration: f64,
    pub weights: RewardWeights,
    pub safety: SafetyLimits,
    pub scales: ObservationScales,
}

impl Default for EnvConfig {
    fn default() -> Self {
        let plant = PlantParams::default();
        Self {
            plant,
            trajectory: TrajectoryConfig::default(),
            duration: 10.0,
            weights: RewardWeights::default(),
            safety: SafetyLimits::default(),
            scales: ObservationScales::for_hover_thrust(plant.hover_thrust()),
        }
    }
}

impl EnvConfig {
    /// Number of integration steps, `round(duration / dt)`.
    pub fn steps(&self) -> usize {
        (self.duration / self.plant.dt).round() as usize
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.plant.dt
    }

    pub fn initial_state(&self) -> State14 {
        State14::hover_at(self.trajectory.r0)
    }
}

/// A gain the episode may apply, with its grid coordinates and Lyapunov
/// matrix when known.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduledGain {
    pub gain: GainVector,
    pub lambda: f64,
    pub mu: f64,
    pub p: Option<Matrix14>,
}

/// The action set of an episode. Library tables come straight from the
/// certified library; an override table holds one uncertified gain.
#[derive(Clone, Debug, PartialEq)]
pub struct GainTable {
    pub gains: Vec<ScheduledGain>,
    pub off_library: bool,
}

impl GainTable {
    pub fn from_library(library: &AdmissibleLibrary) -> Self {
        Self {
            gains: library
                .entries
                .iter()
                .map(|e| ScheduledGain {
                    gain: *e.gain(),
                    lambda: e.lambda,
                    mu: e.mu,
                    p: e.certificate.lyapunov.as_ref().map(|l| l.p),
                })
                .collect(),
            off_library: false,
        }
    }

    /// Single arbitrary gain. `V` is still logged when the gain is Hurwitz.
    pub fn override_gain(k: GainVector, r_bar: f64) -> Result<Self> {
        let cert = certify(&k, r_bar, QChoice::Identity, 0.0)?;
        Ok(Self {
            gains: vec![ScheduledGain {
                gain: k,
                lambda: f64::NAN,
                mu: f64::NAN,
                p: cert.lyapunov.map(|l| l.p),
            }],
            off_library: true,
        })
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }
}

/// How an episode ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Completed,
    SafetyViolation,
    SingularAttitude,
    SingularInversion,
    NumericalBlowup,
}

impl Termination {
    pub fn name(&self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::SafetyViolation => "safety_violation",
            Termination::SingularAttitude => "singular_attitude",
            Termination::SingularInversion => "singular_inversion",
            Termination::NumericalBlowup => "numerical_blowup",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Termination::Completed,
            Termination::SafetyViolation,
            Termination::SingularAttitude,
            Termination::SingularInversion,
            Termination::NumericalBlowup,
        ]
        .into_iter()
        .find(|t| t.name() == s)
    }

    pub fn is_failure(&self) -> bool {
        *self != Termination::Completed
    }

    /// Maps simulation errors to a termination cause; other errors propagate.
    fn from_error(e: Error) -> Result<Self> {
        match e {
            Error::SingularAttitude { .. } => Ok(Termination::SingularAttitude),
            Error::SingularInversion(_) => Ok(Termination::SingularInversion),
            Error::NumericalBlowup => Ok(Termination::NumericalBlowup),
            other => Err(other),
        }
    }
}

/// One logged time step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub x: State14,
    pub z: ErrorVector,
    pub s: Vector4<f64>,
    pub u: Input4,
    pub tau: Vector3<f64>,
    /// Reward of the transition leaving this row (failure penalty included);
    /// on the final row of a completed episode, the stage reward there.
    pub reward: f64,
    /// Index into the gain table.
    pub action: usize,
    pub lambda: f64,
    pub mu: f64,
    pub gain: GainVector,
    /// `z' P z` for the applied gain, NaN when no certificate exists.
    pub v: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub rows: Vec<StepRecord>,
    pub seed: u64,
    /// Sum of transition rewards (the final row of a completed episode is
    /// not a transition).
    pub episode_return: f64,
    pub termination: Termination,
    pub dwell_steps: usize,
    pub off_library: bool,
}

impl EpisodeLog {
    pub fn switches(&self) -> usize {
        self.rows.windows(2).filter(|w| w[0].action != w[1].action).count()
    }
}

/// One step of the sampled closed loop: RK4 over `[t, t + dt]` with the
/// controller re-evaluated at every stage and the gain held.
pub fn closed_loop_step(x: &State14, t: f64, k: &GainVector, plant: &PlantParams, traj: &TrajectoryConfig) -> Result<State14> {
    let next = rk4_integrate(&x.to_vector(), plant.dt, |tau, y| {
        let xs = State14::from_vector(y);
        let u = evaluate(&xs, &sample(t + tau, traj), k, plant)?.u;
        Ok(state_derivative(&xs, &u, plant))
    })?;
    Ok(State14::from_vector(&next))
}

/// Runs one episode. `policy(obs, step)` returns an index into `table`;
/// `on_transition` receives every `(obs, action, reward, next_obs, done)`
/// tuple. The final completed row is logged with `policy`'s choice but
/// produces no transition.
pub fn run_episode<P, T>(
    cfg: &EnvConfig,
    table: &GainTable,
    seed: u64,
    dwell_steps: usize,
    mut policy: P,
    mut on_transition: T,
) -> Result<EpisodeLog>
where
    P: FnMut(&[f64], usize) -> usize,
    T: FnMut(Transition),
{
    if table.is_empty() {
        return Err(Error::EmptyLibrary);
    }
    let n = cfg.steps();
    let tf = cfg.trajectory.tf;
    let mut x = cfg.initial_state();
    let mut rows = Vec::with_capacity(n + 1);
    let mut total = 0.0;
    let mut prev_action: Option<usize> = None;
    let mut termination = Termination::Completed;
    let mut obs = observe(&x, 0.0, tf, &cfg.scales);

    for step in 0..=n {
        let t = cfg.time(step);
        let action = policy(&obs, step);
        let entry = table.gains.get(action).ok_or(Error::IndexOutOfRange {
            index: action,
            len: table.len(),
        })?;
        let reference = sample(t, &cfg.trajectory);
        let out = evaluate(&x, &reference, &entry.gain, &cfg.plant)?;
        let tau = recover_torque(&x, &out.u.u_eta, &cfg.plant)?;
        let switched = prev_action.is_some_and(|p| p != action);
        prev_action = Some(action);
        let z = out.z.to_vector();
        let v = entry.p.as_ref().map_or(f64::NAN, |p| (z.transpose() * p * z)[0]);
        let stage = reward(&x, &reference, &out.u, &tau, switched, &cfg.weights, false).total();
        let mut row = StepRecord {
            t,
            x,
            z,
            s: out.s.to_vector(),
            u: out.u,
            tau,
            reward: stage,
            action,
            lambda: entry.lambda,
            mu: entry.mu,
            gain: entry.gain,
            v,
        };
        if step == n {
            rows.push(row);
            break;
        }

        let t_next = cfg.time(step + 1);
        let next = closed_loop_step(&x, t, &entry.gain, &cfg.plant, &cfg.trajectory).and_then(|next| {
            if is_safety_violation(&next, &sample(t_next, &cfg.trajectory), &cfg.safety) {
                return Ok(Err(Termination::SafetyViolation));
            }
            inversion_terms(&next, &cfg.plant)?;
            Ok(Ok(next))
        });
        let next = match next {
            Ok(inner) => inner,
            Err(e) => Err(Termination::from_error(e)?),
        };
        match next {
            Ok(next) => {
                let next_obs = observe(&next, t_next, tf, &cfg.scales);
                on_transition(Transition {
                    obs: std::mem::replace(&mut obs, next_obs.clone()),
                    action,
                    reward: stage,
                    next_obs,
                    done: false,
                });
                total += stage;
                rows.push(row);
                x = next;
            }
            Err(cause) => {
                row.reward = stage - cfg.weights.rho_fail;
                total += row.reward;
                on_transition(Transition {
                    obs: obs.clone(),
                    action,
                    reward: row.reward,
                    next_obs: obs.clone(),
                    done: true,
                });
                rows.push(row);
                termination = cause;
                break;
            }
        }
    }
    Ok(EpisodeLog {
        rows,
        seed,
        episode_return: total,
        termination,
        dwell_steps,
        off_library: table.off_library,
    })
}

/// Constant-gain episode with table entry `index`.
pub fn run_fixed_gain_episode(cfg: &EnvConfig, table: &GainTable, index: usize, seed: u64) -> Result<EpisodeLog> {
    if index >= table.len() {
        return Err(Error::IndexOutOfRange {
            index,
            len: table.len(),
        });
    }
    run_episode(cfg, table, seed, 1, |_, _| index, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certification::{build_library, GainBounds, DEFAULT_MARGIN};
    use crate::reference::snap_sup_norm;

    fn library(cfg: &EnvConfig) -> AdmissibleLibrary {
        build_library(
            &GainBounds::default(),
            5,
            3,
            QChoice::Identity,
            DEFAULT_MARGIN,
            snap_sup_norm(&cfg.trajectory),
        )
        .unwrap()
    }

    #[test]
    fn completed_episode_has_n_plus_one_rows() {
        let cfg = EnvConfig {
            duration: 1.0,
            ..Default::default()
        };
        let lib = library(&cfg);
        let table = GainTable::from_library(&lib);
        let log = run_fixed_gain_episode(&cfg, &table, lib.mid_index(), 0).unwrap();
        assert_eq!(log.rows.len(), 101);
        assert_eq!(log.termination, Termination::Completed);
        for (i, r) in log.rows.iter().enumerate() {
            assert_eq!(r.t, i as f64 * 0.01);
            assert!(r.reward <= 0.0);
        }
        let transitions: f64 = log.rows[..100].iter().map(|r| r.reward).sum();
        assert_eq!(log.episode_return, transitions);
    }

    #[test]
    fn hover_start_at_target_stays_put() {
        let mut cfg = EnvConfig {
            duration: 2.0,
            ..Default::default()
        };
        cfg.trajectory.r0 = cfg.trajectory.r_star;
        let lib = library(&cfg);
        let log = run_fixed_gain_episode(&cfg, &GainTable::from_library(&lib), 0, 0).unwrap();
        for r in &log.rows {
            assert_eq!(r.x, State14::hover_at(cfg.trajectory.r_star));
            assert_eq!(r.reward, 0.0);
        }
    }

    #[test]
    fn transitions_chain_and_switch_penalty_applies() {
        let cfg = EnvConfig {
            duration: 0.2,
            ..Default::default()
        };
        let lib = library(&cfg);
        let table = GainTable::from_library(&lib);
        let mut seen = Vec::new();
        let log = run_episode(&cfg, &table, 3, 5, |_, step| (step / 5) % 2, |t| seen.push(t)).unwrap();
        assert_eq!(seen.len(), 20);
        for w in seen.windows(2) {
            assert_eq!(w[0].next_obs, w[1].obs);
        }
        let w_s = cfg.weights.w_s;
        for (i, r) in log.rows.iter().enumerate() {
            let expected_switch = i > 0 && i % 5 == 0;
            let without = reward(
                &r.x,
                &sample(r.t, &cfg.trajectory),
                &r.u,
                &r.tau,
                false,
                &cfg.weights,
                false,
            )
            .total();
            let penalty = if expected_switch { w_s } else { 0.0 };
            assert!((r.reward - (without - penalty)).abs() < 1e-15);
        }
        assert_eq!(log.switches(), 4);
    }

    #[test]
    fn violent_gain_terminates_with_penalty() {
        // Large displacement with an override gain saturates the tilt bound.
        let mut cfg = EnvConfig {
            duration: 3.0,
            ..Default::default()
        };
        cfg.trajectory.r_star = Vector3::new(40.0, 0.0, 0.0);
        cfg.trajectory.tf = 1.0;
        let k = GainBounds::default().k_max;
        let table = GainTable::override_gain(GainVector::from_slice(&k), 0.0).unwrap();
        let mut last = None;
        let log = run_fixed_gain_episode(&cfg, &table, 0, 0).unwrap();
        run_episode(&cfg, &table, 0, 1, |_, _| 0, |t| last = Some(t)).unwrap();
        assert!(log.termination.is_failure(), "{:?}", log.termination);
        assert!(log.rows.len() < cfg.steps() + 1);
        let final_row = log.rows.last().unwrap();
        assert!(final_row.reward <= -cfg.weights.rho_fail);
        let last = last.unwrap();
        assert!(last.done);
        assert_eq!(last.reward, final_row.reward);
    }
}
