//! Multi-timescale stochastic-approximation learner for average-reward
//! Nash equilibria.
//!
//! The learner drives a [`Env`] and never looks at the kernel. When a
//! [`Game`] handle is supplied, it is only used to score the iterates for the
//! history (φ computed from the learner's own gain and bias estimates).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analytic::{residuals, EvalResult};
use crate::error::{Error, Result};
use crate::game::{Game, Player, StateId, ROOT};
use crate::policy::{project_simplex, sample_probs, Policy, PolicyPair};
use crate::simenv::Env;

/// Policy updates smaller than this leave the coordinate unchanged.
const MIN_UPDATE: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: u64,
    pub warmup: u64,
    /// Fast step size during warmup.
    pub c_v: f64,
    /// Numerator of the visit-count step size after warmup.
    pub c_v_post: f64,
    /// Sharpness of the smoothed sign `tanh(c·x)`.
    pub sharpness: f64,
    /// Exploration floor used when projecting policies during training.
    pub floor: f64,
    pub seed: u64,
    pub stride: u64,
    /// Stop once |φ_T| falls to this value (needs a game handle).
    pub phi_stop: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2_500_000,
            warmup: 7000,
            c_v: 0.5,
            c_v_post: 1.6,
            sharpness: 10.0,
            floor: 1e-3,
            seed: 0,
            stride: 500,
            phi_stop: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, max_actions: usize) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Validation("history stride must be positive".into()));
        }
        if !(self.floor >= 0.0) || self.floor * max_actions as f64 >= 1.0 {
            return Err(Error::Validation(format!(
                "exploration floor {} infeasible for {max_actions} actions",
                self.floor
            )));
        }
        if !(self.c_v > 0.0 && self.c_v_post > 0.0 && self.sharpness > 1.0) {
            return Err(Error::Validation("step-size constants must be positive and sharpness > 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedules {
    pub v: f64,
    pub rho: f64,
    pub eps: f64,
    pub pi: f64,
}

/// Step sizes at iteration `n` for a state visited `kappa` times since
/// warmup (clamped to at least 1).
pub fn schedules(n: u64, kappa: u64, cfg: &TrainConfig) -> Schedules {
    if n < cfg.warmup {
        return Schedules {
            v: cfg.c_v,
            rho: 1.0,
            eps: cfg.c_v,
            pi: 1.0,
        };
    }
    let tau = (n - cfg.warmup + 1) as f64;
    let fast = cfg.c_v_post / kappa.max(1) as f64;
    Schedules {
        v: fast,
        rho: 1.0 / (1.0 + tau * tau.ln()),
        eps: fast,
        pi: 1.0 / tau,
    }
}

pub fn td_residual(r: f64, rho: f64, v: &[f64], s: StateId, next: StateId) -> f64 {
    r - rho + v[next] - v[s]
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState {
    /// Completed iterations.
    pub n: u64,
    pub rho: [f64; 2],
    pub v: [Vec<f64>; 2],
    pub eps: [Vec<Vec<f64>>; 2],
    pub pi: PolicyPair,
    /// Visits per state counted from the end of warmup.
    pub visits: Vec<u64>,
    pub current: StateId,
    /// Smallest and largest reward seen per player, including the initial 0.
    reward_range: [(f64, f64); 2],
}

impl TrainerState {
    /// Zero iterates and uniform policies over the environment's action sets.
    pub fn new(env: &Env) -> Self {
        let n = env.num_states();
        let uniform = |player: Player| {
            Policy::from_probs(
                player,
                (0..n)
                    .map(|s| {
                        let k = env.num_actions(s, player);
                        vec![1.0 / k as f64; k]
                    })
                    .collect(),
            )
        };
        let zeros = |player: Player| (0..n).map(|s| vec![0.0; env.num_actions(s, player)]).collect::<Vec<_>>();
        Self {
            n: 0,
            rho: [0.0; 2],
            v: [vec![0.0; n], vec![0.0; n]],
            eps: [zeros(Player::Defender), zeros(Player::Attacker)],
            pi: PolicyPair {
                defender: uniform(Player::Defender),
                attacker: uniform(Player::Attacker),
            },
            visits: vec![0; n],
            current: ROOT,
            reward_range: [(0.0, 0.0); 2],
        }
    }

    /// The learner's gain and bias iterates as an evaluation estimate.
    pub fn estimates(&self) -> EvalResult {
        EvalResult::from_estimates(self.rho, self.v.clone())
    }
}

fn action_stream(seed: u64, n: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng.set_word_pos(u128::from(n) * 16);
    rng
}

/// One pass of the learning loop: sample a joint action, step the
/// environment and update every iterate at the visited state.
pub fn train_step(state: &mut TrainerState, env: &mut Env, cfg: &TrainConfig) -> Result<()> {
    let s = state.current;
    if env.current() != s {
        return Err(Error::Validation("environment and trainer disagree on the current state".into()));
    }
    let n = state.n;
    let mut rng = action_stream(cfg.seed, n);
    let d = sample_probs(state.pi.defender.probs(s), &mut rng);
    let a = sample_probs(state.pi.attacker.probs(s), &mut rng);
    let step = env.step(d, a)?;
    let next = step.next;

    if n >= cfg.warmup {
        state.visits[s] += 1;
    }
    let sched = schedules(n, state.visits[s], cfg);
    let rewards = [step.r_d, step.r_a];
    let td = [
        td_residual(rewards[0], state.rho[0], &state.v[0], s, next),
        td_residual(rewards[1], state.rho[1], &state.v[1], s, next),
    ];
    let td_sum = td[0] + td[1];

    for player in Player::BOTH {
        let k = player.index();
        let own = if k == 0 { d } else { a };
        let r = rewards[k];

        state.v[k][s] += sched.v * td[k];

        let nf = n as f64;
        state.rho[k] += sched.rho * ((nf * state.rho[k] + r) / (nf + 1.0) - state.rho[k]);
        let range = &mut state.reward_range[k];
        range.0 = range.0.min(r);
        range.1 = range.1.max(r);
        assert!(
            state.rho[k] >= range.0 - 1e-9 && state.rho[k] <= range.1 + 1e-9,
            "average-reward iterate left the reward range"
        );

        let eps_old = state.eps[k][s][own];
        state.eps[k][s][own] += sched.eps * (td_sum - eps_old);

        let row = state.pi.get_mut(player).probs_mut(s);
        if row.len() > 1 {
            let update = -sched.pi * row[own].sqrt() * td[k].abs() * (cfg.sharpness * -eps_old).tanh();
            if update.abs() >= MIN_UPDATE {
                row[own] += update;
                let projected = project_simplex(row, cfg.floor);
                row.copy_from_slice(&projected);
            }
        }
    }

    state.current = next;
    state.n += 1;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistoryRow {
    pub n: u64,
    #[serde(rename = "rho_D")]
    pub rho_d: f64,
    #[serde(rename = "rho_A")]
    pub rho_a: f64,
    #[serde(rename = "phi_D")]
    pub phi_d: Option<f64>,
    #[serde(rename = "phi_A")]
    pub phi_a: Option<f64>,
    #[serde(rename = "phi_T")]
    pub phi_t: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

fn record(state: &TrainerState, game: Option<&Game>) -> HistoryRow {
    let phi = game.map(|g| residuals(g, &state.pi, &state.estimates()).phi);
    HistoryRow {
        n: state.n,
        rho_d: state.rho[0],
        rho_a: state.rho[1],
        phi_d: phi.map(|p| p[0]),
        phi_a: phi.map(|p| p[1]),
        phi_t: phi.map(|p| p[0] + p[1]),
    }
}

/// Runs the learner for `cfg.iterations` steps (fewer if the φ stop fires)
/// and returns the final state together with the sampled history.
pub fn train_with_state(env: &mut Env, cfg: &TrainConfig, game: Option<&Game>) -> Result<(TrainerState, TrainHistory)> {
    let max_actions = (0..env.num_states())
        .flat_map(|s| Player::BOTH.map(|p| env.num_actions(s, p)))
        .max()
        .unwrap_or(1);
    cfg.validate(max_actions)?;
    env.reset();
    let mut state = TrainerState::new(env);
    let mut history = TrainHistory::default();
    while state.n < cfg.iterations {
        train_step(&mut state, env, cfg)?;
        if state.n == 1 || state.n % cfg.stride == 0 || state.n == cfg.iterations {
            let row = record(&state, game);
            let stop = matches!((cfg.phi_stop, row.phi_t), (Some(limit), Some(phi)) if phi.abs() <= limit);
            history.rows.push(row);
            if stop {
                break;
            }
        }
    }
    Ok((state, history))
}

/// Trains and returns the final policies, projected onto the simplex without
/// the exploration floor.
pub fn train(env: &mut Env, cfg: &TrainConfig, game: Option<&Game>) -> Result<(PolicyPair, TrainHistory)> {
    let (state, history) = train_with_state(env, cfg, game)?;
    Ok((final_policies(&state.pi), history))
}

pub fn final_policies(pi: &PolicyPair) -> PolicyPair {
    let reproject = |p: &Policy| {
        Policy::from_probs(
            p.player(),
            p.table().iter().map(|row| project_simplex(row, 0.0)).collect(),
        )
    };
    PolicyPair {
        defender: reproject(&pi.defender),
        attacker: reproject(&pi.attacker),
    }
}
