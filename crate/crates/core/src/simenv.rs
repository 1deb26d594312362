//! Sampling environment for learners.
//!
//! The environment owns the game but only exposes action enumerations and
//! sampled transitions. There is no accessor for the kernel, the FN rates or
//! expected rewards, so a learner driving it sees what a real deployment would.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::game::{AtkAction, DefAction, Game, Player, StateId, ROOT};

/// One sampled transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub next: StateId,
    pub r_d: f64,
    pub r_a: f64,
}

impl Step {
    pub fn reward(&self, player: Player) -> f64 {
        match player {
            Player::Defender => self.r_d,
            Player::Attacker => self.r_a,
        }
    }
}

pub struct Env<'g> {
    game: &'g Game,
    rng: ChaCha8Rng,
    current: StateId,
    step_count: u64,
}

impl<'g> Env<'g> {
    pub fn new(game: &'g Game, seed: u64) -> Self {
        Self {
            game,
            rng: ChaCha8Rng::seed_from_u64(seed),
            current: ROOT,
            step_count: 0,
        }
    }

    pub fn reset(&mut self) -> StateId {
        self.current = ROOT;
        self.step_count = 0;
        ROOT
    }

    pub fn current(&self) -> StateId {
        self.current
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn num_states(&self) -> usize {
        self.game.num_states()
    }

    pub fn num_actions(&self, s: StateId, player: Player) -> usize {
        self.game.num_actions(s, player)
    }

    pub fn def_actions(&self, s: StateId) -> &[DefAction] {
        self.game.def_actions(s)
    }

    pub fn atk_actions(&self, s: StateId) -> &[AtkAction] {
        self.game.atk_actions(s)
    }

    pub fn state_label(&self, s: StateId) -> String {
        self.game.state_label(s)
    }

    /// Plays the joint action given by indices into the current state's
    /// action lists.
    pub fn step(&mut self, d: usize, a: usize) -> Result<Step> {
        let s = self.current;
        let dist = self.game.transition_dist(s, d, a)?;
        // each step reads its own block of the stream, so the draw depends
        // only on (seed, step_count)
        self.rng.set_word_pos(u128::from(self.step_count) * 16);
        let next = if dist.len() == 1 {
            dist[0].0
        } else {
            let u: f64 = self.rng.gen();
            let mut cumulative = 0.0;
            let mut pick = dist[dist.len() - 1].0;
            for &(t, p) in dist {
                cumulative += p;
                if u < cumulative {
                    pick = t;
                    break;
                }
            }
            pick
        };
        let (r_d, r_a) = self.game.reward(s, d, a, next)?;
        self.current = next;
        self.step_count += 1;
        Ok(Step { next, r_d, r_a })
    }

    pub fn step_actions(&mut self, d: DefAction, a: AtkAction) -> Result<Step> {
        let s = self.current;
        let di = self.game.def_index(s, d)?;
        let ai = self.game.atk_index(s, a).map_err(|_| {
            Error::InvalidAction(format!("{a:?} not available at {}", self.game.state_label(s)))
        })?;
        self.step(di, ai)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{GameParams, State};
    use crate::ifg::{Ifg, IfgNode, NodeKind};

    fn game() -> Game {
        let nodes = (0..4)
            .map(|id| IfgNode {
                id,
                kind: NodeKind::Process,
                label: format!("n{id}"),
            })
            .collect();
        let ifg = Ifg::new(nodes, vec![(0, 1), (1, 2), (1, 3)], vec![0], vec![vec![2]]).unwrap();
        let mut params = GameParams::ransomware();
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
        params.cost_d = crate::game::CostSpec::PerStage {
            default_per_stage: vec![-1.0],
        };
        params.build(ifg).unwrap()
    }

    #[test]
    fn reset_returns_root() {
        let g = game();
        let mut env = Env::new(&g, 1);
        assert_eq!(env.current(), ROOT);
        env.step(0, 0).unwrap();
        assert_ne!(env.current(), ROOT);
        assert_eq!(env.reset(), ROOT);
        assert_eq!(env.step_count(), 0);
        assert_eq!(env.reset(), ROOT);
    }

    #[test]
    fn quit_and_plain_moves() {
        let g = game();
        let mut env = Env::new(&g, 2);
        let e = g.state_id(State::Pair { node: 0, stage: 1 });
        let u1 = g.state_id(State::Pair { node: 1, stage: 1 });
        assert_eq!(env.step_actions(DefAction::NoInspect, AtkAction::Move(e)).unwrap().next, e);
        let step = env.step_actions(DefAction::NoInspect, AtkAction::Move(u1)).unwrap();
        assert_eq!(step.next, u1);
        let step = env.step_actions(DefAction::NoInspect, AtkAction::Quit).unwrap();
        assert_eq!((step.next, step.r_d, step.r_a), (ROOT, 30.0, -30.0));
    }

    #[test]
    fn invalid_action_is_rejected() {
        let g = game();
        let mut env = Env::new(&g, 3);
        assert!(matches!(env.step(0, 7), Err(Error::InvalidAction(_))));
        assert!(matches!(
            env.step_actions(DefAction::NoInspect, AtkAction::Quit),
            Err(Error::InvalidAction(_))
        ));
        assert_eq!(env.current(), ROOT);
    }

    #[test]
    fn empirical_frequencies_match_kernel() {
        let g = game();
        let u1 = g.state_id(State::Pair { node: 1, stage: 1 });
        let t = g.state_id(State::Pair { node: 2, stage: 1 });
        let d = g.def_index(u1, DefAction::Inspect(t)).unwrap();
        let a = g.atk_index(u1, AtkAction::Move(t)).unwrap();
        let p = g.transition_dist(u1, d, a).unwrap()[0].1;
        let mut env = Env::new(&g, 4);
        let n = 1_000_000u32;
        let mut slipped = 0u32;
        for _ in 0..n {
            env.current = u1;
            if env.step(d, a).unwrap().next == t {
                slipped += 1;
            }
        }
        let sigma = (p * (1.0 - p) / f64::from(n)).sqrt();
        assert!((f64::from(slipped) / f64::from(n) - p).abs() <= 3.0 * sigma);
    }

    #[test]
    fn trajectories_are_reproducible() {
        let g = game();
        let run = |seed| {
            let mut env = Env::new(&g, seed);
            let mut path = Vec::new();
            for i in 0..200usize {
                let s = env.current();
                let d = i % env.num_actions(s, Player::Defender);
                let a = (i / 2) % env.num_actions(s, Player::Attacker);
                path.push(env.step(d, a).unwrap().next);
            }
            path
        };
        assert_eq!(run(8), run(8));
    }
}
