//! The two-player average-reward stochastic game built on top of an IFG.
//!
//! States are the root `s0` plus one state per (node, stage) pair. Actions
//! are stored per state in a fixed order, and every query below addresses
//! actions by their index in that order:
//!
//! - defender: `NoInspect` first, then `Inspect(t)` for each out-neighbor `t`;
//! - attacker: `Move(t)` for each out-neighbor `t`, then `Quit` when allowed.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use nalgebra::DMatrix;
use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ifg::{Ifg, NodeId};
use crate::policy::PolicyPair;

/// Dense state index; the root `s0` is always 0.
pub type StateId = usize;

pub const ROOT: StateId = 0;

/// Probability mass tolerance for kernel rows.
pub const KERNEL_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Player {
    #[serde(rename = "D")]
    Defender,
    #[serde(rename = "A")]
    Attacker,
}

impl Player {
    pub const BOTH: [Player; 2] = [Player::Defender, Player::Attacker];

    pub fn index(self) -> usize {
        match self {
            Player::Defender => 0,
            Player::Attacker => 1,
        }
    }

    pub fn opponent(self) -> Player {
        match self {
            Player::Defender => Player::Attacker,
            Player::Attacker => Player::Defender,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Player::Defender => "D",
            Player::Attacker => "A",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum State {
    Root,
    /// Tagged flow at `node` during attack stage `stage` (1-based).
    Pair { node: NodeId, stage: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DefAction {
    NoInspect,
    Inspect(StateId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AtkAction {
    Quit,
    Move(StateId),
}

impl AtkAction {
    fn target(self) -> Option<StateId> {
        match self {
            AtkAction::Move(t) => Some(t),
            AtkAction::Quit => None,
        }
    }
}

/// Per-stage reward, penalty and cost parameters, resolved against a game's
/// state space. Stage arrays are indexed by `stage - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardParams {
    pub alpha_d: Vec<f64>,
    pub beta_d: Vec<f64>,
    pub sigma_d: Vec<f64>,
    pub alpha_a: Vec<f64>,
    pub beta_a: Vec<f64>,
    pub sigma_a: Vec<f64>,
    /// Security cost per state, ≤ 0.
    pub cost_d: Vec<f64>,
    /// When false, the destination penalty applies to the defender whatever
    /// it inspected (plus the security cost if it inspected).
    pub strict_table: bool,
}

impl RewardParams {
    pub fn stages(&self) -> usize {
        self.alpha_d.len()
    }

    fn validate(&self, n_states: usize) -> Result<()> {
        let m = self.stages();
        let arrays = [
            ("alpha_D", &self.alpha_d, 1.0),
            ("beta_D", &self.beta_d, -1.0),
            ("sigma_D", &self.sigma_d, 1.0),
            ("alpha_A", &self.alpha_a, -1.0),
            ("beta_A", &self.beta_a, 1.0),
            ("sigma_A", &self.sigma_a, -1.0),
        ];
        for (name, values, sign) in arrays {
            if values.len() != m {
                return Err(Error::Validation(format!("{name} has {} entries, expected {m}", values.len())));
            }
            if let Some(x) = values.iter().find(|&&x| !(x * sign > 0.0)) {
                let want = if sign > 0.0 { "> 0" } else { "< 0" };
                return Err(Error::Validation(format!("{name} entry {x} must be {want}")));
            }
        }
        if self.cost_d.len() != n_states {
            return Err(Error::Validation(format!(
                "cost_D covers {} states, game has {n_states}",
                self.cost_d.len()
            )));
        }
        if let Some(c) = self.cost_d.iter().find(|&&c| !(c <= 0.0)) {
            return Err(Error::Validation(format!("security cost {c} must be <= 0")));
        }
        Ok(())
    }
}

/// False-negative rate of inspection at each state, in `[0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FnRates(pub Vec<f64>);

pub const DEFAULT_FN_RATE: f64 = 0.2;

/// Next-state distribution and expected one-step rewards of one joint
/// action.
#[derive(Clone, Debug, PartialEq)]
pub struct JointOutcome {
    pub next: Vec<(StateId, f64)>,
    /// Expected reward per player, indexed by [`Player::index`].
    pub expected: [f64; 2],
}

#[derive(Clone, Debug)]
pub struct Game {
    ifg: Ifg,
    def_actions: Vec<Vec<DefAction>>,
    atk_actions: Vec<Vec<AtkAction>>,
    params: RewardParams,
    fn_rates: FnRates,
    /// `outcomes[s][d * |A_A(s)| + a]`
    outcomes: Vec<Vec<JointOutcome>>,
    reachable: Vec<bool>,
}

/// Builds the game, enforcing the sign constraints on the reward parameters.
pub fn build_game(ifg: Ifg, params: RewardParams, fn_rates: FnRates) -> Result<Game> {
    params.validate(ifg.node_count() * ifg.stages() + 1)?;
    build_game_unchecked(ifg, params, fn_rates)
}

/// Same as [`build_game`] but accepts reward parameters of any sign (for
/// degenerate games such as the all-zero reward game).
pub fn build_game_unchecked(ifg: Ifg, params: RewardParams, fn_rates: FnRates) -> Result<Game> {
    let n = ifg.node_count();
    let m = ifg.stages();
    let n_states = n * m + 1;
    if params.stages() != m {
        return Err(Error::Validation(format!(
            "reward parameters cover {} stages, graph has {m}",
            params.stages()
        )));
    }
    if params.cost_d.len() != n_states {
        return Err(Error::Validation("cost_D does not cover the state space".into()));
    }
    if fn_rates.0.len() != n_states {
        return Err(Error::Validation("FN rates do not cover the state space".into()));
    }
    if let Some(x) = fn_rates.0.iter().find(|&&x| !(0.0..1.0).contains(&x)) {
        return Err(Error::Validation(format!("FN rate {x} outside [0, 1)")));
    }

    let pair = |node: NodeId, stage: usize| 1 + (stage - 1) * n + node;
    let mut def_actions = vec![vec![DefAction::NoInspect]; n_states];
    let mut atk_actions = vec![Vec::new(); n_states];
    atk_actions[ROOT] = ifg.entries().iter().map(|&e| AtkAction::Move(pair(e, 1))).collect();
    atk_actions[ROOT].sort_by_key(|a| a.target());
    for stage in 1..=m {
        for node in 0..n {
            let s = pair(node, stage);
            if ifg.is_destination(node, stage) {
                let next = if stage < m { pair(node, stage + 1) } else { ROOT };
                atk_actions[s] = vec![AtkAction::Move(next)];
            } else {
                let targets: Vec<StateId> = ifg.out_neighbors(node).iter().map(|&v| pair(v, stage)).collect();
                def_actions[s].extend(targets.iter().map(|&t| DefAction::Inspect(t)));
                atk_actions[s] = targets.iter().map(|&t| AtkAction::Move(t)).collect();
                atk_actions[s].push(AtkAction::Quit);
            }
        }
    }

    let mut game = Game {
        ifg,
        def_actions,
        atk_actions,
        params,
        fn_rates,
        outcomes: Vec::new(),
        reachable: Vec::new(),
    };
    game.outcomes = (0..n_states)
        .map(|s| {
            let mut row = Vec::with_capacity(game.def_actions[s].len() * game.atk_actions[s].len());
            for &d in &game.def_actions[s] {
                for &a in &game.atk_actions[s] {
                    let next = game.kernel(d, a);
                    let mut expected = [0.0; 2];
                    for &(t, p) in &next {
                        let r = game.reward_of(s, d, a, t);
                        expected[0] += p * r.0;
                        expected[1] += p * r.1;
                    }
                    row.push(JointOutcome { next, expected });
                }
            }
            row
        })
        .collect();
    game.reachable = game.structural_reach();
    for s in (0..n_states).filter(|&s| game.reachable[s]) {
        debug_assert!(!game.atk_actions[s].is_empty(), "reachable state {s} has no attacker action");
    }
    Ok(game)
}

impl Game {
    pub fn ifg(&self) -> &Ifg {
        &self.ifg
    }

    pub fn num_states(&self) -> usize {
        self.def_actions.len()
    }

    pub fn stages(&self) -> usize {
        self.ifg.stages()
    }

    pub fn params(&self) -> &RewardParams {
        &self.params
    }

    pub fn fn_rates(&self) -> &FnRates {
        &self.fn_rates
    }

    pub fn state(&self, s: StateId) -> State {
        if s == ROOT {
            State::Root
        } else {
            let n = self.ifg.node_count();
            State::Pair {
                node: (s - 1) % n,
                stage: (s - 1) / n + 1,
            }
        }
    }

    pub fn state_id(&self, state: State) -> StateId {
        match state {
            State::Root => ROOT,
            State::Pair { node, stage } => 1 + (stage - 1) * self.ifg.node_count() + node,
        }
    }

    /// Stage used for reward lookups; the root counts as stage 1.
    pub fn stage_of(&self, s: StateId) -> usize {
        match self.state(s) {
            State::Root => 1,
            State::Pair { stage, .. } => stage,
        }
    }

    /// Whether `s` is a destination state of its own stage.
    pub fn is_destination_state(&self, s: StateId) -> bool {
        match self.state(s) {
            State::Root => false,
            State::Pair { node, stage } => self.ifg.is_destination(node, stage),
        }
    }

    pub fn def_actions(&self, s: StateId) -> &[DefAction] {
        &self.def_actions[s]
    }

    pub fn atk_actions(&self, s: StateId) -> &[AtkAction] {
        &self.atk_actions[s]
    }

    pub fn num_actions(&self, s: StateId, player: Player) -> usize {
        match player {
            Player::Defender => self.def_actions[s].len(),
            Player::Attacker => self.atk_actions[s].len(),
        }
    }

    /// States reachable from the root under some joint action sequence.
    pub fn is_reachable(&self, s: StateId) -> bool {
        self.reachable[s]
    }

    pub fn reachable_states(&self) -> Vec<StateId> {
        (0..self.num_states()).filter(|&s| self.reachable[s]).collect()
    }

    pub fn def_index(&self, s: StateId, d: DefAction) -> Result<usize> {
        self.def_actions[s]
            .iter()
            .position(|&x| x == d)
            .ok_or_else(|| Error::InvalidAction(format!("{d:?} not available at {}", self.state_label(s))))
    }

    pub fn atk_index(&self, s: StateId, a: AtkAction) -> Result<usize> {
        self.atk_actions[s]
            .iter()
            .position(|&x| x == a)
            .ok_or_else(|| Error::InvalidAction(format!("{a:?} not available at {}", self.state_label(s))))
    }

    fn check_indices(&self, s: StateId, d: usize, a: usize) -> Result<()> {
        if s >= self.num_states() {
            return Err(Error::InvalidAction(format!("unknown state {s}")));
        }
        if d >= self.def_actions[s].len() || a >= self.atk_actions[s].len() {
            return Err(Error::InvalidAction(format!(
                "action pair ({d}, {a}) out of range at {}",
                self.state_label(s)
            )));
        }
        Ok(())
    }

    /// Joint outcome table entry; indices must be valid.
    pub fn outcome(&self, s: StateId, d: usize, a: usize) -> &JointOutcome {
        &self.outcomes[s][d * self.atk_actions[s].len() + a]
    }

    /// Next-state distribution for a joint action given by indices.
    pub fn transition_dist(&self, s: StateId, d: usize, a: usize) -> Result<&[(StateId, f64)]> {
        self.check_indices(s, d, a)?;
        Ok(&self.outcome(s, d, a).next)
    }

    /// One-step rewards `(r_D, r_A)` for the transition `s → next`.
    pub fn reward(&self, s: StateId, d: usize, a: usize, next: StateId) -> Result<(f64, f64)> {
        self.check_indices(s, d, a)?;
        Ok(self.reward_of(s, self.def_actions[s][d], self.atk_actions[s][a], next))
    }

    fn kernel(&self, d: DefAction, a: AtkAction) -> Vec<(StateId, f64)> {
        match (d, a) {
            (_, AtkAction::Quit) => vec![(ROOT, 1.0)],
            (DefAction::Inspect(t), AtkAction::Move(m)) if t == m => {
                let fnr = self.fn_rates.0[t];
                if fnr > 0.0 {
                    vec![(t, fnr), (ROOT, 1.0 - fnr)]
                } else {
                    vec![(ROOT, 1.0)]
                }
            }
            (_, AtkAction::Move(m)) => vec![(m, 1.0)],
        }
    }

    fn reward_of(&self, s: StateId, d: DefAction, a: AtkAction, next: StateId) -> (f64, f64) {
        let p = &self.params;
        let j = self.stage_of(s) - 1;
        let cost = p.cost_d[s];
        let detected = matches!((d, a), (DefAction::Inspect(t), AtkAction::Move(m)) if t == m) && next == ROOT;
        let reached = next != ROOT
            && matches!(self.state(next), State::Pair { node, stage } if stage == j + 1 && self.ifg.is_destination(node, stage));
        let inspects = matches!(d, DefAction::Inspect(_));
        let quits = a == AtkAction::Quit;
        let hit = matches!((d, a), (DefAction::Inspect(t), AtkAction::Move(m)) if t == m);

        let r_d = if detected {
            p.alpha_d[j] + cost
        } else if reached && !inspects {
            p.beta_d[j]
        } else if reached && !p.strict_table && !hit {
            p.beta_d[j] + cost
        } else if inspects && quits {
            p.sigma_d[j] + cost
        } else if quits {
            p.sigma_d[j]
        } else if inspects && !hit {
            cost
        } else {
            0.0
        };
        let r_a = if detected {
            p.alpha_a[j]
        } else if reached {
            p.beta_a[j]
        } else if quits {
            p.sigma_a[j]
        } else {
            0.0
        };
        (r_d, r_a)
    }

    fn structural_reach(&self) -> Vec<bool> {
        let mut seen = vec![false; self.num_states()];
        seen[ROOT] = true;
        let mut queue = VecDeque::from([ROOT]);
        while let Some(s) = queue.pop_front() {
            for o in &self.outcomes[s] {
                for &(t, p) in &o.next {
                    if p > 0.0 && !seen[t] {
                        seen[t] = true;
                        queue.push_back(t);
                    }
                }
            }
        }
        seen
    }

    pub fn state_label(&self, s: StateId) -> String {
        match self.state(s) {
            State::Root => "s0".into(),
            State::Pair { node, stage } => format!("u{node}/j{stage}"),
        }
    }

    pub fn parse_state_label(&self, label: &str) -> Option<StateId> {
        if label == "s0" {
            return Some(ROOT);
        }
        let (node, stage) = label.strip_prefix('u')?.split_once("/j")?;
        let node: NodeId = node.parse().ok()?;
        let stage: usize = stage.parse().ok()?;
        (node < self.ifg.node_count() && (1..=self.stages()).contains(&stage))
            .then(|| self.state_id(State::Pair { node, stage }))
    }

    pub fn action_labels(&self, s: StateId, player: Player) -> Vec<String> {
        match player {
            Player::Defender => self.def_actions[s]
                .iter()
                .map(|d| match d {
                    DefAction::NoInspect => "0".to_string(),
                    DefAction::Inspect(t) => format!("inspect:{}", self.state_label(*t)),
                })
                .collect(),
            Player::Attacker => self.atk_actions[s]
                .iter()
                .map(|a| match a {
                    AtkAction::Quit => "quit".to_string(),
                    AtkAction::Move(t) => format!("move:{}", self.state_label(*t)),
                })
                .collect(),
        }
    }

    /// Row-stochastic transition matrix of the chain induced by `pi`.
    pub fn induced_chain(&self, pi: &PolicyPair) -> DMatrix<f64> {
        let n = self.num_states();
        let mut chain = DMatrix::zeros(n, n);
        for s in 0..n {
            let pd = pi.defender.probs(s);
            let pa = pi.attacker.probs(s);
            for (d, &wd) in pd.iter().enumerate() {
                for (a, &wa) in pa.iter().enumerate() {
                    let w = wd * wa;
                    if w == 0.0 {
                        continue;
                    }
                    for &(t, p) in &self.outcome(s, d, a).next {
                        chain[(s, t)] += w * p;
                    }
                }
            }
        }
        chain
    }
}

impl fmt::Display for Game {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "game: {} states ({} reachable), {} stages",
            self.num_states(),
            self.reachable.iter().filter(|&&r| r).count(),
            self.stages()
        )
    }
}

/// Communicating-class decomposition of a finite Markov chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainClasses {
    /// Closed communicating classes, each sorted, ordered by smallest member.
    pub recurrent: Vec<Vec<usize>>,
    pub transient: Vec<usize>,
}

impl ChainClasses {
    pub fn class_of(&self, s: usize) -> Option<usize> {
        self.recurrent.iter().position(|c| c.binary_search(&s).is_ok())
    }
}

pub fn classify_chain(chain: &DMatrix<f64>) -> ChainClasses {
    let n = chain.nrows();
    let mut g: DiGraph<(), ()> = DiGraph::with_capacity(n, n);
    for _ in 0..n {
        g.add_node(());
    }
    for s in 0..n {
        for t in 0..n {
            if chain[(s, t)] > 0.0 {
                g.add_edge(NodeIndex::new(s), NodeIndex::new(t), ());
            }
        }
    }
    let mut recurrent = Vec::new();
    let mut transient = Vec::new();
    for scc in tarjan_scc(&g) {
        let mut members: Vec<usize> = scc.iter().map(|i| i.index()).collect();
        members.sort_unstable();
        let closed = members
            .iter()
            .all(|&s| (0..n).all(|t| chain[(s, t)] <= 0.0 || members.binary_search(&t).is_ok()));
        if closed {
            recurrent.push(members);
        } else {
            transient.extend(members);
        }
    }
    recurrent.sort_by_key(|c| c[0]);
    transient.sort_unstable();
    ChainClasses { recurrent, transient }
}

/// Security cost specification: one default per stage, or explicit values
/// keyed by state label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CostSpec {
    PerStage { default_per_stage: Vec<f64> },
    PerState(BTreeMap<String, f64>),
}

/// False-negative specification: a default for every state, or explicit
/// values keyed by state label (unlisted states use [`DEFAULT_FN_RATE`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FnSpec {
    Default { default: f64 },
    PerState(BTreeMap<String, f64>),
}

/// Game parameter file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameParams {
    pub stages: usize,
    #[serde(rename = "alpha_D")]
    pub alpha_d: Vec<f64>,
    #[serde(rename = "beta_D")]
    pub beta_d: Vec<f64>,
    #[serde(rename = "sigma_D")]
    pub sigma_d: Vec<f64>,
    #[serde(rename = "alpha_A")]
    pub alpha_a: Vec<f64>,
    #[serde(rename = "beta_A")]
    pub beta_a: Vec<f64>,
    #[serde(rename = "sigma_A")]
    pub sigma_a: Vec<f64>,
    #[serde(rename = "cost_D")]
    pub cost_d: CostSpec,
    #[serde(rename = "fn", default = "default_fn_spec")]
    pub fn_rates: FnSpec,
    #[serde(default = "default_strict")]
    pub strict_table: bool,
}

fn default_fn_spec() -> FnSpec {
    FnSpec::Default {
        default: DEFAULT_FN_RATE,
    }
}

fn default_strict() -> bool {
    true
}

impl GameParams {
    /// The three-stage ransomware parameter set.
    pub fn ransomware() -> Self {
        Self {
            stages: 3,
            alpha_d: vec![40.0, 80.0, 120.0],
            beta_d: vec![-30.0, -60.0, -90.0],
            sigma_d: vec![30.0, 50.0, 70.0],
            alpha_a: vec![-20.0, -40.0, -60.0],
            beta_a: vec![20.0, 40.0, 60.0],
            sigma_a: vec![-30.0, -50.0, -70.0],
            cost_d: CostSpec::PerStage {
                default_per_stage: vec![-1.0, -2.0, -3.0],
            },
            fn_rates: default_fn_spec(),
            strict_table: true,
        }
    }

    /// Resolves per-state costs and FN rates against `ifg`.
    pub fn resolve(&self, ifg: &Ifg) -> Result<(RewardParams, FnRates)> {
        if self.stages != ifg.stages() {
            return Err(Error::Validation(format!(
                "parameters declare {} stages, graph has {}",
                self.stages,
                ifg.stages()
            )));
        }
        let n = ifg.node_count();
        let n_states = n * self.stages + 1;
        let label_to_state = |label: &str| -> Result<StateId> {
            if label == "s0" {
                return Ok(ROOT);
            }
            label
                .strip_prefix('u')
                .and_then(|rest| rest.split_once("/j"))
                .and_then(|(node, stage)| Some((node.parse::<usize>().ok()?, stage.parse::<usize>().ok()?)))
                .filter(|&(node, stage)| node < n && (1..=self.stages).contains(&stage))
                .map(|(node, stage)| 1 + (stage - 1) * n + node)
                .ok_or_else(|| Error::Validation(format!("unknown state label {label:?}")))
        };
        let cost_d = match &self.cost_d {
            CostSpec::PerStage { default_per_stage } => {
                if default_per_stage.len() != self.stages {
                    return Err(Error::Validation("cost_D.default_per_stage needs one value per stage".into()));
                }
                let mut cost = vec![0.0; n_states];
                for stage in 1..=self.stages {
                    for node in 0..n {
                        if !ifg.is_destination(node, stage) && !ifg.is_entry(node) {
                            cost[1 + (stage - 1) * n + node] = default_per_stage[stage - 1];
                        }
                    }
                }
                cost
            }
            CostSpec::PerState(map) => {
                let mut cost = vec![0.0; n_states];
                for (label, &c) in map {
                    cost[label_to_state(label)?] = c;
                }
                cost
            }
        };
        let fn_rates = match &self.fn_rates {
            FnSpec::Default { default } => vec![*default; n_states],
            FnSpec::PerState(map) => {
                let mut rates = vec![DEFAULT_FN_RATE; n_states];
                for (label, &x) in map {
                    rates[label_to_state(label)?] = x;
                }
                rates
            }
        };
        Ok((
            RewardParams {
                alpha_d: self.alpha_d.clone(),
                beta_d: self.beta_d.clone(),
                sigma_d: self.sigma_d.clone(),
                alpha_a: self.alpha_a.clone(),
                beta_a: self.beta_a.clone(),
                sigma_a: self.sigma_a.clone(),
                cost_d,
                strict_table: self.strict_table,
            },
            FnRates(fn_rates),
        ))
    }

    pub fn build(&self, ifg: Ifg) -> Result<Game> {
        let (params, fn_rates) = self.resolve(&ifg)?;
        build_game(ifg, params, fn_rates)
    }
}
