//! Stationary randomized policies, baselines, simplex projection and
//! sampling.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{DefAction, Game, Player, StateId};

/// Tolerance on the sum of each per-state probability vector.
pub const SUM_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    player: Player,
    table: Vec<Vec<f64>>,
}

impl Policy {
    /// Wraps a probability table without checking it against a game.
    pub fn from_probs(player: Player, table: Vec<Vec<f64>>) -> Self {
        Self { player, table }
    }

    pub fn player(&self) -> Player {
        self.player
    }

    pub fn num_states(&self) -> usize {
        self.table.len()
    }

    pub fn probs(&self, s: StateId) -> &[f64] {
        &self.table[s]
    }

    pub fn probs_mut(&mut self, s: StateId) -> &mut [f64] {
        &mut self.table[s]
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }

    /// Deterministic policy choosing `choice[s]` at every state.
    pub fn deterministic(g: &Game, player: Player, choice: &[usize]) -> Self {
        let table = (0..g.num_states())
            .map(|s| {
                let mut row = vec![0.0; g.num_actions(s, player)];
                row[choice[s]] = 1.0;
                row
            })
            .collect();
        Self { player, table }
    }

    /// Checks shape and simplex membership against `g`.
    pub fn validate(&self, g: &Game) -> Result<()> {
        if self.table.len() != g.num_states() {
            return Err(Error::Incompatible(format!(
                "policy covers {} states, game has {}",
                self.table.len(),
                g.num_states()
            )));
        }
        for (s, row) in self.table.iter().enumerate() {
            if row.len() != g.num_actions(s, self.player) {
                return Err(Error::Incompatible(format!(
                    "state {} has {} probabilities for {} actions",
                    g.state_label(s),
                    row.len(),
                    g.num_actions(s, self.player)
                )));
            }
            let total: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > SUM_TOL {
                return Err(Error::Validation(format!(
                    "state {} is not a probability vector",
                    g.state_label(s)
                )));
            }
        }
        Ok(())
    }

    pub fn to_dump(&self, g: &Game) -> PolicyDump {
        PolicyDump {
            player: self.player,
            states: self
                .table
                .iter()
                .enumerate()
                .map(|(s, probs)| StateDump {
                    state: s,
                    label: Some(g.state_label(s)),
                    actions: g.action_labels(s, self.player),
                    probs: probs.clone(),
                })
                .collect(),
        }
    }

    /// Rebuilds a policy from a dump, requiring the action labels to match
    /// the game's enumeration exactly.
    pub fn from_dump(g: &Game, dump: &PolicyDump) -> Result<Self> {
        let n = g.num_states();
        let mut table: Vec<Option<Vec<f64>>> = vec![None; n];
        for entry in &dump.states {
            if entry.state >= n {
                return Err(Error::Incompatible(format!("state id {} out of range", entry.state)));
            }
            if entry.actions != g.action_labels(entry.state, dump.player) {
                return Err(Error::Incompatible(format!(
                    "action labels at {} do not match the game",
                    g.state_label(entry.state)
                )));
            }
            if entry.probs.len() != entry.actions.len() {
                return Err(Error::Incompatible(format!(
                    "probability count at {} does not match its actions",
                    g.state_label(entry.state)
                )));
            }
            table[entry.state] = Some(entry.probs.clone());
        }
        let table = table
            .into_iter()
            .enumerate()
            .map(|(s, row)| row.ok_or_else(|| Error::Incompatible(format!("state {} missing", g.state_label(s)))))
            .collect::<Result<Vec<_>>>()?;
        let policy = Self {
            player: dump.player,
            table,
        };
        policy.validate(g)?;
        Ok(policy)
    }

    pub fn save(&self, g: &Game, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_dump(g)).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(g: &Game, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let dump: PolicyDump = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_dump(g, &dump)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyDump {
    pub player: Player,
    pub states: Vec<StateDump>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateDump {
    pub state: StateId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub actions: Vec<String>,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyPair {
    pub defender: Policy,
    pub attacker: Policy,
}

impl PolicyPair {
    pub fn uniform(g: &Game) -> Self {
        Self {
            defender: uniform_policy(g, Player::Defender),
            attacker: uniform_policy(g, Player::Attacker),
        }
    }

    pub fn get(&self, player: Player) -> &Policy {
        match player {
            Player::Defender => &self.defender,
            Player::Attacker => &self.attacker,
        }
    }

    pub fn get_mut(&mut self, player: Player) -> &mut Policy {
        match player {
            Player::Defender => &mut self.defender,
            Player::Attacker => &mut self.attacker,
        }
    }

    /// Copy of this pair with `player`'s policy replaced.
    pub fn with(&self, policy: Policy) -> Self {
        let mut pair = self.clone();
        let player = policy.player();
        *pair.get_mut(player) = policy;
        pair
    }

    pub fn validate(&self, g: &Game) -> Result<()> {
        if self.defender.player() != Player::Defender || self.attacker.player() != Player::Attacker {
            return Err(Error::Incompatible("policy pair has swapped players".into()));
        }
        self.defender.validate(g)?;
        self.attacker.validate(g)
    }
}

pub fn uniform_policy(g: &Game, player: Player) -> Policy {
    let table = (0..g.num_states())
        .map(|s| {
            let k = g.num_actions(s, player);
            vec![1.0 / k as f64; k]
        })
        .collect();
    Policy { player, table }
}

/// Defender baseline that inspects destination out-neighbors with
/// probability one, split evenly when there are several.
pub fn cut_policy(g: &Game) -> Policy {
    let table = (0..g.num_states())
        .map(|s| {
            let actions = g.def_actions(s);
            let hits: Vec<usize> = actions
                .iter()
                .enumerate()
                .filter(|(_, d)| matches!(d, DefAction::Inspect(t) if g.is_destination_state(*t)))
                .map(|(i, _)| i)
                .collect();
            let mut row = vec![0.0; actions.len()];
            if hits.is_empty() {
                row[0] = 1.0;
            } else {
                for &i in &hits {
                    row[i] = 1.0 / hits.len() as f64;
                }
            }
            row
        })
        .collect();
    Policy {
        player: Player::Defender,
        table,
    }
}

/// Euclidean projection of `v` onto `{p : Σp = 1, p_i ≥ floor}`.
///
/// Substituting `q = p − floor` reduces this to projecting `v − floor` onto
/// the simplex of mass `1 − n·floor`, solved exactly by the sort-and-threshold
/// rule.
pub fn project_simplex(v: &[f64], floor: f64) -> Vec<f64> {
    let n = v.len();
    assert!(n > 0, "cannot project an empty vector");
    assert!(floor >= 0.0 && floor * (n as f64) < 1.0, "floor {floor} infeasible for dimension {n}");
    let mass = 1.0 - floor * n as f64;
    let mut sorted: Vec<f64> = v.iter().map(|x| x - floor).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        cumulative += x;
        let t = (cumulative - mass) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - floor - theta).max(0.0) + floor).collect()
}

/// Draws an action index from `policy` at `s`.
pub fn sample<R: Rng + ?Sized>(policy: &Policy, s: StateId, rng: &mut R) -> usize {
    sample_probs(policy.probs(s), rng)
}

pub fn sample_probs<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    if probs.len() == 1 {
        return 0;
    }
    let u: f64 = rng.gen::<f64>() * probs.iter().sum::<f64>();
    let mut cumulative = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    // rounding can leave u just above the last partial sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}
