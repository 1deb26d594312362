//! Acceptance suite. Every test prints one `PASS`/`FAIL` line for its
//! criterion before asserting, so a full run reads as a report.

use std::sync::OnceLock;
use std::time::Instant;

use arne_core::analytic::{best_response, certify_arne, evaluate_policy_pair, exact_gradient, residuals, Certificate, EvalResult};
use arne_core::game::{classify_chain, Game, GameParams, Player, ROOT};
use arne_core::ifg::{
    assert_acyclic, collapse_multi_edges, generate_synthetic, prune_attack_subgraph, remove_cycles_by_versioning, Ifg, IfgNode, NodeKind,
    RawLogGraph, SyntheticParams,
};
use arne_core::policy::{cut_policy, sample_probs, uniform_policy, Policy, PolicyPair};
use arne_core::rlarne::{train, TrainConfig, TrainHistory};
use arne_core::simenv::Env;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id} [{name}]: {verdict} ({detail})");
}

fn ransomware_params(stages: usize) -> GameParams {
    let mut params = GameParams::ransomware();
    params.stages = stages;
    for v in [
        &mut params.alpha_d,
        &mut params.beta_d,
        &mut params.sigma_d,
        &mut params.alpha_a,
        &mut params.beta_a,
        &mut params.sigma_a,
    ] {
        v.truncate(stages);
    }
    if let arne_core::game::CostSpec::PerStage { default_per_stage } = &mut params.cost_d {
        default_per_stage.truncate(stages);
    }
    params
}

fn synthetic_game(p: &SyntheticParams) -> Game {
    let ifg = generate_synthetic(p).expect("synthetic graph");
    ransomware_params(p.stages).build(ifg).expect("game")
}

fn random_interior(g: &Game, player: Player, rng: &mut ChaCha8Rng) -> Policy {
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
}

fn random_pair(g: &Game, rng: &mut ChaCha8Rng) -> PolicyPair {
    PolicyPair {
        defender: random_interior(g, Player::Defender, rng),
        attacker: random_interior(g, Player::Attacker, rng),
    }
}

fn random_deterministic(g: &Game, player: Player, rng: &mut ChaCha8Rng) -> Policy {
    let choice: Vec<usize> = (0..g.num_states()).map(|s| rng.gen_range(0..g.num_actions(s, player))).collect();
    Policy::deterministic(g, player, &choice)
}

/// Δ as a bilinear form over joint actions with (ρ, v) fixed, computed from
/// the raw outcome table independently of the library's gradient code.
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
fn criterion_1_gradient_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut draws = 0;
    let mut seed = 0;
    while draws < 50 {
        seed += 1;
        let stages = 1 + (seed as usize % 2);
        let params = SyntheticParams {
            n_nodes: 4 + (seed as usize % 2),
            stages,
            n_entries: 1,
            dests_per_stage: vec![1; stages],
            edge_density: 0.4,
            seed,
        };
        let Ok(ifg) = generate_synthetic(&params) else { continue };
        let g = ransomware_params(stages).build(ifg).unwrap();
        if g.reachable_states().len() > 12 {
            continue;
        }
        let pi = random_pair(&g, &mut rng);
        let eval = evaluate_policy_pair(&g, &pi).unwrap();
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
                    let rel = (fd - grad[k][s][a]).abs() / grad[k][s][a].abs().max(1.0);
                    worst = worst.max(rel);
                }
            }
        }
        draws += 1;
    }
    let pass = worst <= 1e-6;
    report(1, "gradient oracle", pass, format!("max relative error {worst:.2e} over {draws} draws, {:.2?}", start.elapsed()));
    assert!(pass);
}

#[test]
fn criterion_2_unichain() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut checked = 0;
    let mut violations = 0;
    for seed in 0..20u64 {
        let stages = 1 + (seed as usize % 3);
        let n_entries = 1 + (seed as usize % 2);
        let params = SyntheticParams {
            n_nodes: 8 + (seed as usize % 7),
            stages,
            n_entries,
            dests_per_stage: vec![1; stages],
            edge_density: 0.15 + 0.02 * (seed % 5) as f64,
            seed,
        };
        let g = synthetic_game(&params);
        for _ in 0..100 {
            let pi = PolicyPair {
                defender: random_deterministic(&g, Player::Defender, &mut rng),
                attacker: random_deterministic(&g, Player::Attacker, &mut rng),
            };
            let classes = classify_chain(&g.induced_chain(&pi));
            let ok = classes.recurrent.len() == 1 && classes.recurrent[0].contains(&ROOT);
            if !ok {
                violations += 1;
            }
            checked += 1;
        }
    }
    let pass = violations == 0;
    report(2, "unichain", pass, format!("{violations} violations in {checked} policy pairs, {:.2?}", start.elapsed()));
    assert!(pass);
}

#[test]
fn criterion_3_monte_carlo_agreement() {
    let start = Instant::now();
    let g = synthetic_game(&SyntheticParams {
        n_nodes: 10,
        stages: 3,
        n_entries: 2,
        dests_per_stage: vec![1, 1, 1],
        edge_density: 0.2,
        seed: 303,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let steps = 1_000_000u64;
    const BATCH: u64 = 10_000;
    let mut worst = 0.0f64;
    let mut worst_se = 0.0f64;
    for pair_index in 0..10u64 {
        let pi = random_pair(&g, &mut rng);
        let eval = evaluate_policy_pair(&g, &pi).unwrap();
        let mut env = Env::new(&g, 1000 + pair_index);
        let mut actions = ChaCha8Rng::seed_from_u64(2000 + pair_index);
        let mut sums = [0.0; 2];
        // batch means give a standard error for the trajectory average
        let mut batch = [0.0; 2];
        let mut batch_means: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for i in 1..=steps {
            let s = env.current();
            let d = sample_probs(pi.defender.probs(s), &mut actions);
            let a = sample_probs(pi.attacker.probs(s), &mut actions);
            let step = env.step(d, a).unwrap();
            sums[0] += step.r_d;
            sums[1] += step.r_a;
            batch[0] += step.r_d;
            batch[1] += step.r_a;
            if i % BATCH == 0 {
                for k in 0..2 {
                    batch_means[k].push(batch[k] / BATCH as f64);
                    batch[k] = 0.0;
                }
            }
        }
        for k in 0..2 {
            worst = worst.max((sums[k] / steps as f64 - eval.rho[k]).abs());
            let m = &batch_means[k];
            let mean = m.iter().sum::<f64>() / m.len() as f64;
            let var = m.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m.len() - 1) as f64;
            worst_se = worst_se.max((var / m.len() as f64).sqrt());
        }
    }
    let pass = worst <= 1e-2;
    report(
        3,
        "monte carlo agreement",
        pass,
        format!(
            "max |rho_mc - rho| = {worst:.4} over 10 pairs, largest standard error {worst_se:.4}, {:.2?}",
            start.elapsed()
        ),
    );
    assert!(pass);
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

fn nodes(n: usize) -> Vec<IfgNode> {
    (0..n)
        .map(|id| IfgNode {
            id,
            kind: NodeKind::Process,
            label: format!("n{id}"),
        })
        .collect()
}

#[test]
fn criterion_4_best_response_oracle() {
    let start = Instant::now();
    // one-stage graphs with at most three non-root reachable states
    let shapes: Vec<(usize, Vec<(usize, usize)>, Vec<usize>)> = vec![
        (2, vec![(0, 1)], vec![0]),
        (3, vec![(0, 1), (1, 2)], vec![0]),
        (3, vec![(0, 1), (0, 2), (1, 2)], vec![0]),
        (3, vec![(0, 2), (1, 2)], vec![0, 1]),
        (3, vec![(0, 1), (0, 2)], vec![0]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for (n, edges, entries) in &shapes {
        let dest = vec![vec![n - 1]];
        let ifg = Ifg::new(nodes(*n), edges.clone(), entries.clone(), dest).unwrap();
        for fn_rate in [0.0, 0.2, 0.6] {
            let mut params = ransomware_params(1);
            params.fn_rates = arne_core::game::FnSpec::Default { default: fn_rate };
            let g = params.build(ifg.clone()).unwrap();
            assert!(g.reachable_states().len() <= 4);
            for _ in 0..4 {
                let pi = random_pair(&g, &mut rng);
                for player in Player::BOTH {
                    let (_, gain) = best_response(&g, pi.get(player.opponent()), player).unwrap();
                    worst = worst.max((gain - enumerate_best(&g, &pi, player)).abs());
                    cases += 1;
                }
            }
        }
    }
    let pass = worst <= 1e-9;
    report(4, "best response oracle", pass, format!("max gain difference {worst:.2e} over {cases} cases, {:.2?}", start.elapsed()));
    assert!(pass);
}

struct TrainedRun {
    game: Game,
    policies: PolicyPair,
    history: TrainHistory,
    certificate: Certificate,
    seconds: f64,
}

const CERT_TOL: f64 = 0.5;

fn trained_run() -> &'static TrainedRun {
    static RUN: OnceLock<TrainedRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let game = synthetic_game(&SyntheticParams {
            n_nodes: 10,
            stages: 3,
            n_entries: 2,
            dests_per_stage: vec![1, 1, 1],
            edge_density: 0.2,
            seed: 505,
        });
        let cfg = TrainConfig {
            iterations: 250_000,
            ..TrainConfig::default()
        };
        let mut env = Env::new(&game, cfg.seed);
        let (policies, history) = train(&mut env, &cfg, Some(&game)).unwrap();
        let certificate = certify_arne(&game, &policies, CERT_TOL).unwrap();
        TrainedRun {
            game,
            policies,
            history,
            certificate,
            seconds: start.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn criterion_5_training_converges() {
    let run = trained_run();
    let first = run.history.rows.first().and_then(|r| r.phi_t).unwrap();
    let last = run.history.rows.last().and_then(|r| r.phi_t).unwrap();
    let ratio = last.abs() / first.abs();
    let gaps = run.certificate.gaps;
    let pass = ratio <= 0.05 && gaps.iter().all(|&x| x <= CERT_TOL);
    report(
        5,
        "trained residual decay",
        pass,
        format!(
            "|phi_T| {:.3} -> {:.3} (ratio {ratio:.3}), gaps D={:.3} A={:.3}, {:.1}s",
            first.abs(),
            last.abs(),
            gaps[0],
            gaps[1],
            run.seconds
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_ordering() {
    let run = trained_run();
    let g = &run.game;
    let start = Instant::now();
    let rho_d = |defender: Policy| {
        let pair = PolicyPair {
            defender,
            attacker: run.policies.attacker.clone(),
        };
        evaluate_policy_pair(g, &pair).unwrap().rho[0]
    };
    let arne = rho_d(run.policies.defender.clone());
    let uniform = rho_d(uniform_policy(g, Player::Defender));
    let cut = rho_d(cut_policy(g));
    let pass = arne >= uniform - CERT_TOL && arne >= cut - CERT_TOL;
    report(
        6,
        "baseline ordering",
        pass,
        format!("rho_D arne={arne:.3} uniform={uniform:.3} cut={cut:.3}, {:.2?}", start.elapsed()),
    );
    assert!(pass);
}

#[test]
fn criterion_7_residual_suite() {
    let run = trained_run();
    let g = &run.game;
    let start = Instant::now();
    let eval = evaluate_policy_pair(g, &run.policies).unwrap();
    let res = residuals(g, &run.policies, &eval);
    let min_omega = res.min_omega(g);
    let mut identity = 0.0f64;
    for player in Player::BOTH {
        let k = player.index();
        for s in g.reachable_states() {
            let sum: f64 = res.omega[k][s].iter().zip(run.policies.get(player).probs(s)).map(|(o, p)| o * p).sum();
            identity = identity.max(sum.abs());
        }
    }
    let pass = min_omega >= -CERT_TOL && res.delta.abs() <= CERT_TOL && identity <= 1e-9;
    report(
        7,
        "arne residuals",
        pass,
        format!(
            "min omega {min_omega:.3}, |delta| {:.2e}, max |sum pi*omega| {identity:.2e}, {:.2?}",
            res.delta.abs(),
            start.elapsed()
        ),
    );
    assert!(pass);
}

fn reach(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut r = vec![vec![false; n]; n];
    for &(u, v) in edges {
        r[u][v] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if r[i][k] {
                for j in 0..n {
                    if r[k][j] {
                        r[i][j] = true;
                    }
                }
            }
        }
    }
    r
}

#[test]
fn criterion_8_graph_pipeline() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut failures = 0;
    for _ in 0..100 {
        let n = rng.gen_range(4..=12);
        let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        // at least one cycle, plus random extra edges with repeats
        let a = rng.gen_range(1..n);
        let b = rng.gen_range(0..a);
        edges.push((a, b));
        for _ in 0..rng.gen_range(n..3 * n) {
            let u = rng.gen_range(0..n);
            let v = rng.gen_range(0..n);
            if u != v {
                edges.push((u, v));
                if rng.gen_bool(0.2) {
                    edges.push((u, v));
                }
            }
        }
        let raw = RawLogGraph { nodes: nodes(n), edges };
        let simple = collapse_multi_edges(&raw);
        let pruned = prune_attack_subgraph(&simple, &[0], &[vec![n - 1]]).unwrap();
        let out = remove_cycles_by_versioning(&pruned);
        let og = &out.annotated.graph;

        let mut sorted = og.edges.clone();
        sorted.sort_unstable();
        sorted.dedup();
        let simple_ok = sorted.len() == og.edges.len() && og.edges.iter().all(|&(u, v)| u != v);
        let acyclic = assert_acyclic(og);

        let m = og.node_count();
        let pn = pruned.graph.node_count();
        let before = reach(pn, &pruned.graph.edges);
        let after = reach(m, &og.edges);
        // every output edge is an input edge between the originals
        let sound = og
            .edges
            .iter()
            .all(|&(u, v)| pruned.graph.edges.contains(&(out.origin[u], out.origin[v])));
        // every input reachability pair between distinct nodes is realized
        // from the original copy
        let complete = (0..pn).all(|u| {
            let u0 = (0..m).find(|&x| out.origin[x] == u && out.version[x] == 0).unwrap();
            (0..pn).all(|v| u == v || !before[u][v] || (0..m).any(|y| out.origin[y] == v && after[u0][y]))
        });
        if !(simple_ok && acyclic && sound && complete) {
            failures += 1;
        }
    }
    let pass = failures == 0;
    report(8, "graph pipeline", pass, format!("{failures} failures in 100 graphs, {:.2?}", start.elapsed()));
    assert!(pass);
}
