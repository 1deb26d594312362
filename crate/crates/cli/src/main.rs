mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use arne_core::analytic::{certify_arne, evaluate_policy_pair};
use arne_core::game::{Game, Player};
use arne_core::ifg::{
    assert_acyclic, collapse_multi_edges, generate_synthetic, load_graph, merge_directory_nodes,
    prune_attack_subgraph, remove_cycles_by_versioning, Ifg, NodeId, SyntheticParams,
};
use arne_core::policy::{cut_policy, uniform_policy, Policy, PolicyPair};
use arne_core::rlarne::train;
use arne_core::simenv::Env;
use clap::{Parser, Subcommand};

use config::{Baseline, ExperimentConfig, Manifest, Overrides};

/// Bad arguments or configuration; exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "arne", version, about = "DIFT-APT game training and certification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random layered attack graph.
    GenGraph(GenGraphArgs),
    /// Reduce a raw log graph to an acyclic attack graph.
    Prune(PruneArgs),
    /// Train policies with RL-ARNE.
    Train(Overrides),
    /// Check whether a policy pair is an average-reward Nash equilibrium.
    Certify(PolicyArgs),
    /// Compare the defender's gain under ARNE and the baseline policies.
    Compare(PolicyArgs),
}

#[derive(clap::Args)]
struct GenGraphArgs {
    #[arg(long, default_value_t = 18)]
    nodes: usize,
    #[arg(long, default_value_t = 3)]
    stages: usize,
    #[arg(long, default_value_t = 2)]
    entries: usize,
    /// Destinations per stage, comma separated; defaults to one per stage.
    #[arg(long, value_delimiter = ',')]
    dests: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.12)]
    density: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "graph.json")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct PruneArgs {
    /// Raw graph file.
    #[arg(long)]
    graph: PathBuf,
    /// Entry nodes, comma separated; defaults to the file's annotation.
    #[arg(long, value_delimiter = ',')]
    entries: Option<Vec<NodeId>>,
    /// Destination nodes of one stage, comma separated. Repeat per stage.
    #[arg(long = "dest")]
    dests: Vec<String>,
    /// Merge file nodes whose label starts with PREFIX into one node: PREFIX=LABEL.
    #[arg(long = "merge")]
    merge: Vec<String>,
    #[arg(long, default_value = "pruned.json")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct PolicyArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Directory holding policy_D.json and policy_A.json; defaults to the output directory.
    #[arg(long)]
    policies: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use arne_core::Error as E;
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<E>() {
        Some(E::Parse(_) | E::Validation(_) | E::Incompatible(_) | E::Infeasible(_) | E::InfeasibleParams(_)) => 2,
        Some(E::Io { .. }) => 2,
        _ => 3,
    }
}

fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::GenGraph(args) => gen_graph(&args),
        Command::Prune(args) => prune(&args),
        Command::Train(ov) => cmd_train(&ov),
        Command::Certify(args) => certify(&args),
        Command::Compare(args) => compare(&args),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn gen_graph(args: &GenGraphArgs) -> anyhow::Result<ExitCode> {
    let params = SyntheticParams {
        n_nodes: args.nodes,
        stages: args.stages,
        n_entries: args.entries,
        dests_per_stage: args.dests.clone().unwrap_or_else(|| vec![1; args.stages]),
        edge_density: args.density,
        seed: args.seed,
    };
    let ifg = generate_synthetic(&params)?;
    write_json(&args.out, &ifg.to_graph_file())?;
    println!("{} nodes, {} edges -> {}", ifg.node_count(), ifg.edge_count(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn parse_ids(text: &str) -> anyhow::Result<Vec<NodeId>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| UsageError(format!("bad node id {t:?}")).into())
        })
        .collect()
}

fn prune(args: &PruneArgs) -> anyhow::Result<ExitCode> {
    let loaded = load_graph(&args.graph)?;
    let raw = loaded.annotated.graph;
    println!("input: {} nodes, {} edges", raw.node_count(), raw.edge_count());
    if loaded.dropped_self_loops > 0 {
        println!("dropped {} self-loops", loaded.dropped_self_loops);
    }
    let entries = args.entries.clone().unwrap_or(loaded.annotated.entries);
    let destinations = if args.dests.is_empty() {
        loaded.annotated.destinations
    } else {
        args.dests.iter().map(|d| parse_ids(d)).collect::<anyhow::Result<_>>()?
    };
    let groups = args
        .merge
        .iter()
        .map(|m| {
            m.split_once('=')
                .map(|(p, l)| (p.to_string(), l.to_string()))
                .ok_or_else(|| UsageError(format!("--merge expects PREFIX=LABEL, got {m:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let collapsed = collapse_multi_edges(&raw);
    println!("collapsed: {} nodes, {} edges", collapsed.node_count(), collapsed.edge_count());
    let mut pruned = prune_attack_subgraph(&collapsed, &entries, &destinations)?;
    println!("pruned: {} nodes, {} edges", pruned.graph.node_count(), pruned.graph.edge_count());
    if !groups.is_empty() {
        pruned = merge_directory_nodes(&pruned, &groups);
        println!("merged: {} nodes, {} edges", pruned.graph.node_count(), pruned.graph.edge_count());
    }
    let versioned = remove_cycles_by_versioning(&pruned);
    anyhow::ensure!(assert_acyclic(&versioned.annotated.graph), "versioning left a cycle");
    println!(
        "versioned: {} nodes, {} edges ({} new versions)",
        versioned.annotated.graph.node_count(),
        versioned.annotated.graph.edge_count(),
        versioned.new_versions()
    );
    let ifg = Ifg::from_annotated(versioned.annotated)?;
    write_json(&args.out, &ifg.to_graph_file())?;
    Ok(ExitCode::SUCCESS)
}

fn build_game(cfg: &ExperimentConfig) -> anyhow::Result<Game> {
    Ok(cfg.game.build(cfg.ifg()?)?)
}

fn cmd_train(ov: &Overrides) -> anyhow::Result<ExitCode> {
    let cfg = ExperimentConfig::load(ov)?;
    let game = build_game(&cfg)?;
    let train_cfg = cfg.train.to_config();
    let mut env = Env::new(&game, train_cfg.seed);
    let (pi, history) = train(&mut env, &train_cfg, Some(&game))?;

    create_dir(&cfg.out)?;
    let history_path = cfg.out.join("history.csv");
    let mut writer = csv::Writer::from_path(&history_path).with_context(|| format!("writing {}", history_path.display()))?;
    for row in &history.rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    pi.defender.save(&game, &cfg.out.join("policy_D.json"))?;
    pi.attacker.save(&game, &cfg.out.join("policy_A.json"))?;
    write_json(&cfg.out.join("manifest.json"), &Manifest::new(&cfg)?)?;

    if let Some(last) = history.rows.last() {
        println!(
            "n={} rho_D={:.4} rho_A={:.4} phi_T={}",
            last.n,
            last.rho_d,
            last.rho_a,
            last.phi_t.map_or_else(|| "-".into(), |p| format!("{p:.4}"))
        );
    }
    println!("wrote {}", cfg.out.display());
    Ok(ExitCode::SUCCESS)
}

fn load_pair(game: &Game, dir: &Path) -> anyhow::Result<PolicyPair> {
    let defender = Policy::load(game, &dir.join("policy_D.json"))?;
    let attacker = Policy::load(game, &dir.join("policy_A.json"))?;
    if defender.player() != Player::Defender || attacker.player() != Player::Attacker {
        return Err(arne_core::Error::Incompatible("policy files hold the wrong players".into()).into());
    }
    Ok(PolicyPair { defender, attacker })
}

fn certify(args: &PolicyArgs) -> anyhow::Result<ExitCode> {
    let cfg = ExperimentConfig::load(&args.overrides)?;
    let tol = args.tol.unwrap_or(cfg.tol);
    let game = build_game(&cfg)?;
    let pi = load_pair(&game, args.policies.as_deref().unwrap_or(&cfg.out))?;
    let cert = certify_arne(&game, &pi, tol)?;
    create_dir(&cfg.out)?;
    write_json(&cfg.out.join("certificate.json"), &cert.to_dump())?;
    println!(
        "gap_D={:.6} gap_A={:.6} min_omega={:.6} delta={:.3e} tol={tol}: {}",
        cert.gaps[0],
        cert.gaps[1],
        cert.min_omega,
        cert.residuals.delta,
        if cert.pass { "PASS" } else { "FAIL" }
    );
    Ok(if cert.pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn compare(args: &PolicyArgs) -> anyhow::Result<ExitCode> {
    let cfg = ExperimentConfig::load(&args.overrides)?;
    let tol = args.tol.unwrap_or(cfg.tol);
    let game = build_game(&cfg)?;
    let arne = load_pair(&game, args.policies.as_deref().unwrap_or(&cfg.out))?;
    // the attacker keeps its ARNE policy in every row
    let rows = cfg
        .compare
        .iter()
        .map(|&b| {
            let defender = match b {
                Baseline::Arne => arne.defender.clone(),
                Baseline::Uniform => uniform_policy(&game, Player::Defender),
                Baseline::Cut => cut_policy(&game),
            };
            let eval = evaluate_policy_pair(&game, &arne.with(defender))?;
            Ok((b, eval.rho))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    create_dir(&cfg.out)?;
    let path = cfg.out.join("compare.csv");
    let mut writer = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    writer.write_record(["policy", "rho_D", "rho_A"])?;
    for (b, rho) in &rows {
        writer.write_record([b.name().to_string(), rho[0].to_string(), rho[1].to_string()])?;
        println!("{:<8} rho_D={:>10.4} rho_A={:>10.4}", b.name(), rho[0], rho[1]);
    }
    writer.flush()?;
    if let Some((_, arne_rho)) = rows.iter().find(|(b, _)| *b == Baseline::Arne) {
        let worst = rows
            .iter()
            .filter(|(b, _)| *b != Baseline::Arne)
            .map(|(_, rho)| rho[0])
            .fold(f64::NEG_INFINITY, f64::max);
        if worst.is_finite() && arne_rho[0] < worst - tol {
            println!("warning: a baseline beats the ARNE defender by more than {tol}");
        }
    }
    Ok(ExitCode::SUCCESS)
}
