//! Exact, kernel-aware computations: policy evaluation, equilibrium
//! residuals, gradients, best responses and equilibrium certification.
//!
//! Everything here is restricted to the states reachable from `s0`; values at
//! other states are reported as zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{classify_chain, Game, Player, StateId, ROOT};
use crate::policy::{Policy, PolicyPair};

/// Bellman residual above which an evaluation is reported as singular.
pub const EVAL_TOL: f64 = 1e-9;

/// Gain and bias of both players under a fixed policy pair.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    /// Indexed by [`Player::index`].
    pub rho: [f64; 2],
    /// Bias over all states, normalized to `v(s0) = 0`.
    pub v: [Vec<f64>; 2],
    /// Largest Bellman residual over reachable states, together with the
    /// gap between the solved gain and the stationary-distribution gain.
    pub residual_norm: f64,
}

impl EvalResult {
    /// Wraps arbitrary estimates, e.g. a learner's iterates.
    pub fn from_estimates(rho: [f64; 2], v: [Vec<f64>; 2]) -> Self {
        Self {
            rho,
            v,
            residual_norm: f64::NAN,
        }
    }

    pub fn rho(&self, player: Player) -> f64 {
        self.rho[player.index()]
    }

    pub fn v(&self, player: Player) -> &[f64] {
        &self.v[player.index()]
    }
}

/// Per-(player, state, own action) residual table.
pub type ActionTable = [Vec<Vec<f64>>; 2];

#[derive(Clone, Debug, PartialEq)]
pub struct Residuals {
    pub omega: ActionTable,
    pub delta: f64,
    pub phi: [f64; 2],
}

impl Residuals {
    pub fn phi_total(&self) -> f64 {
        self.phi[0] + self.phi[1]
    }

    /// Smallest Ω over reachable states.
    pub fn min_omega(&self, g: &Game) -> f64 {
        g.reachable_states()
            .into_iter()
            .flat_map(|s| self.omega.iter().flat_map(move |t| t[s].iter().copied()))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Stationary distribution of an irreducible stochastic matrix.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    if n == 0 || p.ncols() != n {
        return Err(Error::Singular("stationary distribution needs a square, nonempty matrix".into()));
    }
    // pᵀ(P − I) = 0 with the last balance equation replaced by Σp = 1
    let mut a = p.transpose() - DMatrix::identity(n, n);
    a.row_mut(n - 1).fill(1.0);
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("chain restriction is not irreducible".into()))?;
    if x.iter().any(|&q| !q.is_finite() || q <= 0.0) {
        return Err(Error::Singular("chain restriction is not irreducible".into()));
    }
    Ok(x)
}

/// Expected reward and next-state distribution for one player's action
/// with the opponent marginalized out.
fn marginal(g: &Game, pi: &PolicyPair, player: Player, s: StateId, own: usize) -> ([f64; 2], Vec<(StateId, f64)>) {
    let opp = pi.get(player.opponent()).probs(s);
    let mut r = [0.0; 2];
    let mut next: Vec<(StateId, f64)> = Vec::new();
    for (o, &w) in opp.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let (d, a) = match player {
            Player::Defender => (own, o),
            Player::Attacker => (o, own),
        };
        let out = g.outcome(s, d, a);
        r[0] += w * out.expected[0];
        r[1] += w * out.expected[1];
        for &(t, p) in &out.next {
            match next.iter_mut().find(|x| x.0 == t) {
                Some(x) => x.1 += w * p,
                None => next.push((t, w * p)),
            }
        }
    }
    (r, next)
}

/// Solves `ρ + v(s) = r(s) + Σ P(s, s') v(s')` over `states` (which must
/// start with `s0` and be closed under `rows`), anchoring `v(s0) = 0`.
/// Returns `(ρ, v)` with `v` indexed like `states`.
fn solve_gain_bias(states: &[StateId], rows: &[Vec<(StateId, f64)>], rewards: &[f64], n_states: usize) -> Result<(f64, Vec<f64>)> {
    debug_assert_eq!(states.first(), Some(&ROOT));
    let m = states.len();
    let mut pos = vec![usize::MAX; n_states];
    for (i, &s) in states.iter().enumerate() {
        pos[s] = i;
    }
    // unknown 0 is ρ (taking the slot of the pinned v(s0)), unknown i ≥ 1 is v(states[i])
    let mut a = DMatrix::zeros(m, m);
    let mut b = DVector::zeros(m);
    for i in 0..m {
        a[(i, 0)] += 1.0;
        if i != 0 {
            a[(i, i)] += 1.0;
        }
        for &(t, p) in &rows[i] {
            let j = pos[t];
            if j == usize::MAX {
                return Err(Error::Singular(format!("transition leaves the evaluated set at state {t}")));
            }
            if j != 0 {
                a[(i, j)] -= p;
            }
        }
        b[i] = rewards[i];
    }
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("gain/bias system is singular".into()))?;
    let mut v = vec![0.0; m];
    v[1..m].copy_from_slice(&x.as_slice()[1..m]);
    Ok((x[0], v))
}

fn bellman_residual(states: &[StateId], rows: &[Vec<(StateId, f64)>], rewards: &[f64], rho: f64, v: &[f64]) -> f64 {
    states
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let ev: f64 = rows[i].iter().map(|&(t, p)| p * v[t]).sum();
            (rho + v[s] - rewards[i] - ev).abs()
        })
        .fold(0.0, f64::max)
}

pub fn evaluate_policy_pair(g: &Game, pi: &PolicyPair) -> Result<EvalResult> {
    pi.validate(g)?;
    let states = g.reachable_states();
    let n = g.num_states();
    let chain = g.induced_chain(pi);
    let restricted = DMatrix::from_fn(states.len(), states.len(), |i, j| chain[(states[i], states[j])]);
    let classes = classify_chain(&restricted);
    if classes.recurrent.len() != 1 {
        return Err(Error::NotUnichain {
            classes: classes.recurrent.len(),
        });
    }
    let recurrent: Vec<usize> = classes.recurrent[0].clone();
    let p_rec = DMatrix::from_fn(recurrent.len(), recurrent.len(), |i, j| restricted[(recurrent[i], recurrent[j])]);
    let stationary = stationary_distribution(&p_rec)?;

    let rows: Vec<Vec<(StateId, f64)>> = states
        .iter()
        .map(|&s| states.iter().filter(|&&t| chain[(s, t)] > 0.0).map(|&t| (t, chain[(s, t)])).collect())
        .collect();

    let mut rho = [0.0; 2];
    let mut v = [vec![0.0; n], vec![0.0; n]];
    let mut residual = 0.0f64;
    for player in Player::BOTH {
        let k = player.index();
        let rewards: Vec<f64> = states.iter().map(|&s| expected_reward(g, pi, s, player)).collect();
        let (gain, bias) = solve_gain_bias(&states, &rows, &rewards, n)?;
        for (i, &s) in states.iter().enumerate() {
            v[k][s] = bias[i];
        }
        let stationary_gain: f64 = recurrent.iter().enumerate().map(|(i, &r)| stationary[i] * rewards[r]).sum();
        residual = residual
            .max(bellman_residual(&states, &rows, &rewards, gain, &v[k]))
            .max((gain - stationary_gain).abs());
        rho[k] = gain;
    }
    if residual > EVAL_TOL * (1.0 + rho[0].abs().max(rho[1].abs())) {
        return Err(Error::Singular(format!("evaluation residual {residual:e} too large")));
    }
    Ok(EvalResult {
        rho,
        v,
        residual_norm: residual,
    })
}

fn expected_reward(g: &Game, pi: &PolicyPair, s: StateId, player: Player) -> f64 {
    let pd = pi.defender.probs(s);
    let pa = pi.attacker.probs(s);
    let mut r = 0.0;
    for (d, &wd) in pd.iter().enumerate() {
        for (a, &wa) in pa.iter().enumerate() {
            r += wd * wa * g.outcome(s, d, a).expected[player.index()];
        }
    }
    r
}

/// Ω for every player, reachable state and own action, against the given
/// gain/bias estimates.
pub fn omega(g: &Game, pi: &PolicyPair, eval: &EvalResult) -> ActionTable {
    let n = g.num_states();
    let mut table: ActionTable = [vec![Vec::new(); n], vec![Vec::new(); n]];
    for s in 0..n {
        for player in Player::BOTH {
            let k = player.index();
            let count = g.num_actions(s, player);
            table[k][s] = if g.is_reachable(s) {
                (0..count)
                    .map(|own| {
                        let (r, next) = marginal(g, pi, player, s, own);
                        let ev: f64 = next.iter().map(|&(t, p)| p * eval.v[k][t]).sum();
                        eval.rho[k] + eval.v[k][s] - r[k] - ev
                    })
                    .collect()
            } else {
                vec![0.0; count]
            };
        }
    }
    table
}

/// Policy-weighted sums of Ω per player.
pub fn weighted_sums(pi: &PolicyPair, omega: &ActionTable) -> [f64; 2] {
    let mut phi = [0.0; 2];
    for player in Player::BOTH {
        let k = player.index();
        let policy = pi.get(player);
        for (s, row) in omega[k].iter().enumerate() {
            phi[k] += row.iter().zip(policy.probs(s)).map(|(o, p)| o * p).sum::<f64>();
        }
    }
    phi
}

pub fn delta(pi: &PolicyPair, omega: &ActionTable) -> f64 {
    let phi = weighted_sums(pi, omega);
    phi[0] + phi[1]
}

/// Ω, Δ and φ against arbitrary gain/bias estimates.
pub fn residuals(g: &Game, pi: &PolicyPair, eval: &EvalResult) -> Residuals {
    let omega = omega(g, pi, eval);
    let phi = weighted_sums(pi, &omega);
    Residuals {
        delta: phi[0] + phi[1],
        omega,
        phi,
    }
}

/// φ_D, φ_A and φ_T under exact evaluation of `pi`.
pub fn td_errors(g: &Game, pi: &PolicyPair) -> Result<(f64, f64, f64)> {
    let eval = evaluate_policy_pair(g, pi)?;
    let res = residuals(g, pi, &eval);
    Ok((res.phi[0], res.phi[1], res.phi_total()))
}

/// Gradient of Δ with respect to each policy coordinate, with (ρ, v) held
/// fixed.
pub fn exact_gradient(g: &Game, pi: &PolicyPair, eval: &EvalResult) -> ActionTable {
    let omega = omega(g, pi, eval);
    let n = g.num_states();
    let mut grad: ActionTable = [vec![Vec::new(); n], vec![Vec::new(); n]];
    for s in 0..n {
        for player in Player::BOTH {
            let k = player.index();
            let other = player.opponent();
            let o = other.index();
            grad[k][s] = if g.is_reachable(s) {
                let opp = pi.get(other).probs(s);
                (0..g.num_actions(s, player))
                    .map(|own| {
                        // the opponent's residual, averaged over its own
                        // actions with this action of ours fixed
                        let slice: f64 = opp
                            .iter()
                            .enumerate()
                            .map(|(b, &w)| {
                                let (d, a) = match player {
                                    Player::Defender => (own, b),
                                    Player::Attacker => (b, own),
                                };
                                let out = g.outcome(s, d, a);
                                let ev: f64 = out.next.iter().map(|&(t, p)| p * eval.v[o][t]).sum();
                                w * (eval.rho[o] + eval.v[o][s] - out.expected[o] - ev)
                            })
                            .sum();
                        omega[k][s][own] + slice
                    })
                    .collect()
            } else {
                vec![0.0; g.num_actions(s, player)]
            };
        }
    }
    grad
}

/// Gain-maximizing deterministic policy for `player` against a fixed
/// opponent, by average-reward policy iteration.
pub fn best_response(g: &Game, opponent: &Policy, player: Player) -> Result<(Policy, f64)> {
    if opponent.player() != player.opponent() {
        return Err(Error::Incompatible("opponent policy belongs to the responding player".into()));
    }
    opponent.validate(g)?;
    let states = g.reachable_states();
    let n = g.num_states();
    let k = player.index();
    let placeholder = crate::policy::uniform_policy(g, player);
    let pair = match player {
        Player::Defender => PolicyPair {
            defender: placeholder,
            attacker: opponent.clone(),
        },
        Player::Attacker => PolicyPair {
            defender: opponent.clone(),
            attacker: placeholder,
        },
    };
    // per reachable state and own action: (expected own reward, next-state distribution)
    let models: Vec<Vec<(f64, Vec<(StateId, f64)>)>> = states
        .iter()
        .map(|&s| {
            (0..g.num_actions(s, player))
                .map(|own| {
                    let (r, next) = marginal(g, &pair, player, s, own);
                    (r[k], next)
                })
                .collect()
        })
        .collect();

    let mut choice = vec![0usize; n];
    let max_actions = (0..n).map(|s| g.num_actions(s, player)).max().unwrap_or(1);
    let limit = n * max_actions;
    for _ in 0..limit.max(1) {
        let rows: Vec<Vec<(StateId, f64)>> = states.iter().enumerate().map(|(i, &s)| models[i][choice[s]].1.clone()).collect();
        let rewards: Vec<f64> = states.iter().enumerate().map(|(i, &s)| models[i][choice[s]].0).collect();
        let (_, bias) = solve_gain_bias(&states, &rows, &rewards, n)?;
        let mut v = vec![0.0; n];
        for (i, &s) in states.iter().enumerate() {
            v[s] = bias[i];
        }
        let mut changed = false;
        for (i, &s) in states.iter().enumerate() {
            let q = |a: usize| models[i][a].0 + models[i][a].1.iter().map(|&(t, p)| p * v[t]).sum::<f64>();
            let current = q(choice[s]);
            let (best, best_q) = (0..models[i].len())
                .map(|a| (a, q(a)))
                .fold((choice[s], current), |acc, x| if x.1 > acc.1 { x } else { acc });
            // keep the incumbent unless the improvement is numerically real
            if best != choice[s] && best_q > current + 1e-10 * (1.0 + current.abs()) {
                choice[s] = best;
                changed = true;
            }
        }
        if !changed {
            let policy = Policy::deterministic(g, player, &choice);
            let gain = evaluate_policy_pair(g, &pair.with(policy.clone()))?.rho[k];
            return Ok((policy, gain));
        }
    }
    Err(Error::NoConvergence(limit))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    /// Best-response gain minus candidate gain, per player.
    pub gaps: [f64; 2],
    pub residuals: Residuals,
    pub min_omega: f64,
    pub eval: EvalResult,
    pub pass: bool,
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerValues {
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "A")]
    pub a: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiValues {
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "T")]
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateDump {
    pub gaps: PlayerValues,
    pub rho: PlayerValues,
    pub delta: f64,
    pub min_omega: f64,
    pub phi: PhiValues,
    pub verdict: bool,
    pub tol: f64,
}

impl Certificate {
    pub fn to_dump(&self) -> CertificateDump {
        CertificateDump {
            gaps: PlayerValues {
                d: self.gaps[0],
                a: self.gaps[1],
            },
            rho: PlayerValues {
                d: self.eval.rho[0],
                a: self.eval.rho[1],
            },
            delta: self.residuals.delta,
            min_omega: self.min_omega,
            phi: PhiValues {
                d: self.residuals.phi[0],
                a: self.residuals.phi[1],
                t: self.residuals.phi_total(),
            },
            verdict: self.pass,
            tol: self.tol,
        }
    }
}

pub fn certify_arne(g: &Game, pi: &PolicyPair, tol: f64) -> Result<Certificate> {
    let eval = evaluate_policy_pair(g, pi)?;
    let residuals = residuals(g, pi, &eval);
    let min_omega = residuals.min_omega(g);
    let mut gaps = [0.0; 2];
    for player in Player::BOTH {
        let (_, gain) = best_response(g, pi.get(player.opponent()), player)?;
        gaps[player.index()] = gain - eval.rho[player.index()];
    }
    let pass = gaps.iter().all(|&x| x <= tol) && min_omega >= -tol && residuals.delta.abs() <= tol;
    Ok(Certificate {
        gaps,
        residuals,
        min_omega,
        eval,
        pass,
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{build_game_unchecked, AtkAction, CostSpec, DefAction, FnRates, FnSpec, GameParams, RewardParams, State};
    use crate::ifg::{Ifg, IfgNode, NodeKind};
    use crate::policy::{uniform_policy, Policy};
    use crate::simenv::Env;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn nodes(n: usize) -> Vec<IfgNode> {
        (0..n)
            .map(|id| IfgNode {
                id,
                kind: NodeKind::Process,
                label: format!("n{id}"),
            })
            .collect()
    }

    fn one_stage(params: &mut GameParams) {
        params.stages = 1;
        for v in [
            &mut params.alpha_d,
            &mut params.beta_d,
            &mut params.sigma_d,
            &mut params.alpha_a,
            &mut params.beta_a,
            &mut params.sigma_a,
        ] {
            v.truncate(1);
        }
        params.cost_d = CostSpec::PerStage {
            default_per_stage: vec![-1.0],
        };
    }

    /// Entry 0 → destination 1, one stage.
    fn toy() -> Game {
        let ifg = Ifg::new(nodes(2), vec![(0, 1)], vec![0], vec![vec![1]]).unwrap();
        let mut params = GameParams::ransomware();
        one_stage(&mut params);
        params.build(ifg).unwrap()
    }

    /// Entry 0 → {1, 2}, 1 → 3, 2 → 3, destination 3, one stage.
    fn diamond(fn_rate: f64) -> Game {
        let ifg = Ifg::new(nodes(4), vec![(0, 1), (0, 2), (1, 3), (2, 3)], vec![0], vec![vec![3]]).unwrap();
        let mut params = GameParams::ransomware();
        one_stage(&mut params);
        params.fn_rates = FnSpec::Default { default: fn_rate };
        params.build(ifg).unwrap()
    }

    fn random_pair(g: &Game, rng: &mut ChaCha8Rng) -> PolicyPair {
        let draw = |player: Player, rng: &mut ChaCha8Rng| {
            Policy::from_probs(
                player,
                (0..g.num_states())
                    .map(|s| {
                        let w: Vec<f64> = (0..g.num_actions(s, player)).map(|_| rng.gen_range(0.05..1.0)).collect();
                        let total: f64 = w.iter().sum();
                        w.into_iter().map(|x| x / total).collect()
                    })
                    .collect(),
            )
        };
        PolicyPair {
            defender: draw(Player::Defender, rng),
            attacker: draw(Player::Attacker, rng),
        }
    }

    #[test]
    fn stationary_examples() {
        let p = stationary_distribution(&DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5])).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        let p = stationary_distribution(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
        let p = stationary_distribution(&DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.5, 0.5])).unwrap();
        assert!((p[0] - 5.0 / 6.0).abs() < 1e-14 && (p[1] - 1.0 / 6.0).abs() < 1e-14);
        assert!(stationary_distribution(&DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn quitting_toy_cycle() {
        let g = toy();
        let e = g.state_id(State::Pair { node: 0, stage: 1 });
        let mut pi = PolicyPair::uniform(&g);
        let quit = g.atk_index(e, AtkAction::Quit).unwrap();
        let mut choice = vec![0; g.num_states()];
        choice[e] = quit;
        pi.attacker = Policy::deterministic(&g, Player::Attacker, &choice);
        pi.defender = Policy::deterministic(&g, Player::Defender, &vec![0; g.num_states()]);
        let eval = evaluate_policy_pair(&g, &pi).unwrap();
        assert!((eval.rho[1] + 15.0).abs() < 1e-12);
        assert!((eval.rho[0] - 15.0).abs() < 1e-12);
        assert!(eval.residual_norm <= 1e-9);

        // trajectory average over a million steps
        let mut env = Env::new(&g, 17);
        let steps = 1_000_000;
        let (mut sum_d, mut sum_a) = (0.0, 0.0);
        for _ in 0..steps {
            let s = env.current();
            let step = env.step(0, choice[s]).unwrap();
            sum_d += step.r_d;
            sum_a += step.r_a;
        }
        assert!((sum_d / steps as f64 - 15.0).abs() < 1e-2);
        assert!((sum_a / steps as f64 + 15.0).abs() < 1e-2);
    }

    #[test]
    fn zero_reward_game_has_zero_values() {
        let ifg = Ifg::new(nodes(4), vec![(0, 1), (0, 2), (1, 3), (2, 3)], vec![0], vec![vec![3]]).unwrap();
        let n_states = 5;
        let params = RewardParams {
            alpha_d: vec![0.0],
            beta_d: vec![0.0],
            sigma_d: vec![0.0],
            alpha_a: vec![0.0],
            beta_a: vec![0.0],
            sigma_a: vec![0.0],
            cost_d: vec![0.0; n_states],
            strict_table: true,
        };
        let g = build_game_unchecked(ifg, params, FnRates(vec![0.2; n_states])).unwrap();
        let pi = PolicyPair::uniform(&g);
        let eval = evaluate_policy_pair(&g, &pi).unwrap();
        assert_eq!(eval.rho, [0.0, 0.0]);
        assert!(eval.v.iter().flatten().all(|&x| x.abs() < 1e-12));
        let cert = certify_arne(&g, &pi, 1e-9).unwrap();
        assert!(cert.pass);
    }

    #[test]
    fn omega_identity_and_forced_states() {
        let g = diamond(0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let pi = random_pair(&g, &mut rng);
            let eval = evaluate_policy_pair(&g, &pi).unwrap();
            let res = residuals(&g, &pi, &eval);
            for player in Player::BOTH {
                let k = player.index();
                for s in g.reachable_states() {
                    let sum: f64 = res.omega[k][s].iter().zip(pi.get(player).probs(s)).map(|(o, p)| o * p).sum();
                    assert!(sum.abs() <= 1e-9);
                    if res.omega[k][s].len() == 1 {
                        assert!(res.omega[k][s][0].abs() <= 1e-9);
                    }
                }
            }
            assert!(res.delta.abs() <= 1e-9);
            assert!((res.phi_total() - res.phi[0] - res.phi[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn omega_by_hand_on_toy() {
        // uniform vs uniform on the two-node toy: at the entry state the
        // defender chooses between NoInspect and Inspect(dest); the
        // attacker between Move(dest) and Quit
        let g = toy();
        let pi = PolicyPair::uniform(&g);
        let eval = evaluate_policy_pair(&g, &pi).unwrap();
        let res = residuals(&g, &pi, &eval);
        let e = g.state_id(State::Pair { node: 0, stage: 1 });
        let t = g.state_id(State::Pair { node: 1, stage: 1 });
        let (rd, vd) = (eval.rho[0], &eval.v[0]);
        // NoInspect: attacker moves (β_D = −30, to t) or quits (σ_D = 30, to s0)
        let by_hand = rd + vd[e] - (0.5 * -30.0 + 0.5 * 30.0) - (0.5 * vd[t]);
        assert!((res.omega[0][e][0] - by_hand).abs() < 1e-12);
        // Inspect(t): detection w.p. 0.8 (40 − 0 cost at entry), slip w.p. 0.2
        // (reward 0), or quit (σ_D = 30 plus zero entry cost)
        let by_hand = rd + vd[e] - (0.5 * 0.8 * 40.0 + 0.5 * 30.0) - 0.5 * 0.2 * vd[t];
        let inspect = g.def_index(e, DefAction::Inspect(t)).unwrap();
        assert!((res.omega[0][e][inspect] - by_hand).abs() < 1e-12);
    }

    #[test]
    fn perturbed_bias_breaks_delta() {
        let g = diamond(0.2);
        let pi = PolicyPair::uniform(&g);
        let mut eval = evaluate_policy_pair(&g, &pi).unwrap();
        let u = g.state_id(State::Pair { node: 1, stage: 1 });
        eval.v[0][u] += 1.0;
        let res = residuals(&g, &pi, &eval);
        assert!(res.delta.abs() > 1e-3);
    }

    /// Δ written as a bilinear form over joint actions, with (ρ, v) fixed.
    fn delta_polynomial(g: &Game, pi: &PolicyPair, eval: &EvalResult) -> f64 {
        let mut total = 0.0;
        for s in g.reachable_states() {
            for (d, &wd) in pi.defender.probs(s).iter().enumerate() {
                for (a, &wa) in pi.attacker.probs(s).iter().enumerate() {
                    let out = g.outcome(s, d, a);
                    for k in 0..2 {
                        let ev: f64 = out.next.iter().map(|&(t, p)| p * eval.v[k][t]).sum();
                        total += wd * wa * (eval.rho[k] + eval.v[k][s] - out.expected[k] - ev);
                    }
                }
            }
        }
        total
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = diamond(0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = 1e-5;
        for _ in 0..5 {
            let pi = random_pair(&g, &mut rng);
            let exact = evaluate_policy_pair(&g, &pi).unwrap();
            // use a perturbed estimate so the gradient is not trivially tied to Ω
            let mut eval = exact.clone();
            eval.rho[0] += 0.7;
            eval.v[1][1] -= 1.3;
            let grad = exact_gradient(&g, &pi, &eval);
            for player in Player::BOTH {
                let k = player.index();
                for s in g.reachable_states() {
                    for a in 0..g.num_actions(s, player) {
                        let mut plus = pi.clone();
                        plus.get_mut(player).probs_mut(s)[a] += h;
                        let mut minus = pi.clone();
                        minus.get_mut(player).probs_mut(s)[a] -= h;
                        let fd = (delta_polynomial(&g, &plus, &eval) - delta_polynomial(&g, &minus, &eval)) / (2.0 * h);
                        let err = (fd - grad[k][s][a]).abs() / grad[k][s][a].abs().max(1.0);
                        assert!(err <= 1e-6, "player {k} state {s} action {a}: {fd} vs {}", grad[k][s][a]);
                    }
                }
            }
        }
    }

    #[test]
    fn best_response_matches_enumeration() {
        let g = diamond(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let pi = random_pair(&g, &mut rng);
            for player in Player::BOTH {
                let (_, gain) = best_response(&g, pi.get(player.opponent()), player).unwrap();
                let best = enumerate_best(&g, &pi, player);
                assert!((gain - best).abs() <= 1e-9, "{gain} vs {best}");
                let own = evaluate_policy_pair(&g, &pi).unwrap().rho[player.index()];
                assert!(gain >= own - 1e-9);
            }
        }
    }

    fn enumerate_best(g: &Game, pi: &PolicyPair, player: Player) -> f64 {
        let counts: Vec<usize> = (0..g.num_states()).map(|s| g.num_actions(s, player)).collect();
        let mut choice = vec![0usize; counts.len()];
        let mut best = f64::NEG_INFINITY;
        loop {
            let candidate = pi.with(Policy::deterministic(g, player, &choice));
            best = best.max(evaluate_policy_pair(g, &candidate).unwrap().rho[player.index()]);
            let mut i = 0;
            loop {
                if i == counts.len() {
                    return best;
                }
                choice[i] += 1;
                if choice[i] < counts[i] {
                    break;
                }
                choice[i] = 0;
                i += 1;
            }
        }
    }

    #[test]
    fn certification_detects_profitable_deviation() {
        // with perfect detection, inspecting the attacker's only route beats
        // mixing uniformly
        let g = diamond(0.0);
        let pi = PolicyPair::uniform(&g);
        let cert = certify_arne(&g, &pi, 0.5).unwrap();
        assert!(cert.gaps[0] > 0.5);
        assert!(!cert.pass);
        let dump = serde_json::to_value(cert.to_dump()).unwrap();
        assert_eq!(dump["verdict"], false);
        assert!(dump["gaps"]["D"].as_f64().unwrap() > 0.5);
    }

    #[test]
    fn forced_single_action_best_response() {
        let g = toy();
        let uniform = uniform_policy(&g, Player::Attacker);
        let (policy, gain) = best_response(&g, &uniform, Player::Defender).unwrap();
        policy.validate(&g).unwrap();
        let eval = evaluate_policy_pair(
            &g,
            &PolicyPair {
                defender: policy,
                attacker: uniform,
            },
        )
        .unwrap();
        assert!((eval.rho[0] - gain).abs() < 1e-12);
    }
}
