//! Information-flow graphs: ingestion, attack-subgraph pruning, directory
//! merging, cycle removal by node versioning, and a synthetic generator.
//!
//! The pipeline mirrors how an attack-related IFG is extracted from a raw
//! provenance graph: collapse parallel edges, keep only nodes on
//! entry→stage-1 or destination→destination flows, merge directory files,
//! and finally split nodes into versions until the graph is acyclic.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;

use petgraph::algo::{is_cyclic_directed, tarjan_scc};
use petgraph::graph::{DiGraph, NodeIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense node index, `0..N`.
pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Process,
    File,
    Socket,
    Other,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IfgNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub label: String,
}

/// Multigraph as converted from system logs. May hold parallel edges and
/// cycles.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawLogGraph {
    pub nodes: Vec<IfgNode>,
    pub edges: Vec<(NodeId, NodeId)>,
}

impl RawLogGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn successors(&self) -> Vec<Vec<NodeId>> {
        let mut succ = vec![Vec::new(); self.nodes.len()];
        for &(u, v) in &self.edges {
            succ[u].push(v);
        }
        for s in &mut succ {
            s.sort_unstable();
            s.dedup();
        }
        succ
    }

    fn predecessors(&self) -> Vec<Vec<NodeId>> {
        let mut pred = vec![Vec::new(); self.nodes.len()];
        for &(u, v) in &self.edges {
            pred[v].push(u);
        }
        for p in &mut pred {
            p.sort_unstable();
            p.dedup();
        }
        pred
    }

    fn to_petgraph(&self) -> DiGraph<(), ()> {
        let mut g = DiGraph::with_capacity(self.nodes.len(), self.edges.len());
        for _ in &self.nodes {
            g.add_node(());
        }
        for &(u, v) in &self.edges {
            g.add_edge(NodeIndex::new(u), NodeIndex::new(v), ());
        }
        g
    }
}

/// A graph together with its attack annotations (entry points and per-stage
/// destination sets). Every pruning step carries the annotations along.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatedGraph {
    pub graph: RawLogGraph,
    pub entries: Vec<NodeId>,
    pub destinations: Vec<Vec<NodeId>>,
}

/// On-disk graph schema.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphFile {
    pub nodes: Vec<IfgNode>,
    pub edges: Vec<(NodeId, NodeId)>,
    #[serde(default)]
    pub entries: Vec<NodeId>,
    #[serde(default)]
    pub destinations: Vec<Vec<NodeId>>,
}

#[derive(Clone, Debug)]
pub struct LoadedGraph {
    pub annotated: AnnotatedGraph,
    pub dropped_self_loops: usize,
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<LoadedGraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_graph(&text)
}

pub fn parse_graph(text: &str) -> Result<LoadedGraph> {
    let file: GraphFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    from_graph_file(file)
}

pub fn from_graph_file(file: GraphFile) -> Result<LoadedGraph> {
    if file.nodes.is_empty() {
        return Err(Error::Validation("empty graph".into()));
    }
    let n = file.nodes.len();
    let mut nodes = file.nodes;
    nodes.sort_by_key(|node| node.id);
    for (i, node) in nodes.iter().enumerate() {
        if node.id != i {
            return Err(Error::Validation(format!(
                "node ids must be dense from 0; expected {i}, found {}",
                node.id
            )));
        }
    }
    let check = |id: NodeId, what: &str| {
        if id >= n {
            Err(Error::Validation(format!("{what} references unknown node {id}")))
        } else {
            Ok(())
        }
    };
    let mut edges = Vec::with_capacity(file.edges.len());
    let mut dropped_self_loops = 0;
    for (u, v) in file.edges {
        check(u, "edge")?;
        check(v, "edge")?;
        if u == v {
            dropped_self_loops += 1;
        } else {
            edges.push((u, v));
        }
    }
    for &e in &file.entries {
        check(e, "entry")?;
    }
    for dest in &file.destinations {
        for &d in dest {
            check(d, "destination")?;
        }
    }
    Ok(LoadedGraph {
        annotated: AnnotatedGraph {
            graph: RawLogGraph { nodes, edges },
            entries: file.entries,
            destinations: file.destinations,
        },
        dropped_self_loops,
    })
}

/// Keeps at most one edge per ordered pair. Edge order follows first
/// occurrence.
pub fn collapse_multi_edges(g: &RawLogGraph) -> RawLogGraph {
    let mut seen = BTreeSet::new();
    let edges = g.edges.iter().copied().filter(|e| seen.insert(*e)).collect();
    RawLogGraph {
        nodes: g.nodes.clone(),
        edges,
    }
}

fn bfs(adj: &[Vec<NodeId>], sources: impl IntoIterator<Item = NodeId>) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::new();
    for s in sources {
        if !seen[s] {
            seen[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

/// Which nodes lie on an entry→D_1 path or a D_j→D_j' path (j ≠ j').
/// Entries and destinations themselves are always kept.
fn qualifying_nodes(
    succ: &[Vec<NodeId>],
    pred: &[Vec<NodeId>],
    entries: &[NodeId],
    destinations: &[Vec<NodeId>],
) -> Vec<bool> {
    let n = succ.len();
    let from_entries = bfs(succ, entries.iter().copied());
    let to_first = bfs(pred, destinations[0].iter().copied());
    let from_stage: Vec<Vec<bool>> = destinations
        .iter()
        .map(|d| bfs(succ, d.iter().copied()))
        .collect();
    let to_stage: Vec<Vec<bool>> = destinations
        .iter()
        .map(|d| bfs(pred, d.iter().copied()))
        .collect();
    let mut keep = vec![false; n];
    for x in 0..n {
        let via_entry = from_entries[x] && to_first[x];
        let via_stages = (0..destinations.len()).any(|j| {
            from_stage[j][x] && (0..destinations.len()).any(|k| k != j && to_stage[k][x])
        });
        keep[x] = via_entry || via_stages;
    }
    for &e in entries {
        keep[e] = true;
    }
    for d in destinations.iter().flatten() {
        keep[*d] = true;
    }
    keep
}

fn validate_annotations(n: usize, entries: &[NodeId], destinations: &[Vec<NodeId>]) -> Result<()> {
    if entries.is_empty() {
        return Err(Error::Validation("no entry points".into()));
    }
    if destinations.is_empty() {
        return Err(Error::Validation("no destination stages".into()));
    }
    for (j, d) in destinations.iter().enumerate() {
        if d.is_empty() {
            return Err(Error::Validation(format!("destination set of stage {} is empty", j + 1)));
        }
    }
    for &id in entries.iter().chain(destinations.iter().flatten()) {
        if id >= n {
            return Err(Error::Validation(format!("annotation references unknown node {id}")));
        }
    }
    let entry_set: BTreeSet<_> = entries.iter().collect();
    for (j, d) in destinations.iter().enumerate() {
        if let Some(x) = d.iter().find(|x| entry_set.contains(x)) {
            return Err(Error::Validation(format!(
                "node {x} is both an entry and a stage-{} destination",
                j + 1
            )));
        }
    }
    Ok(())
}

/// Induced subgraph on `keep`, re-indexed densely in original order.
fn induced(annotated: &AnnotatedGraph, keep: &[bool]) -> AnnotatedGraph {
    let mut remap = vec![usize::MAX; keep.len()];
    let mut nodes = Vec::new();
    for (old, node) in annotated.graph.nodes.iter().enumerate() {
        if keep[old] {
            remap[old] = nodes.len();
            nodes.push(IfgNode {
                id: nodes.len(),
                kind: node.kind,
                label: node.label.clone(),
            });
        }
    }
    let edges = annotated
        .graph
        .edges
        .iter()
        .filter(|(u, v)| keep[*u] && keep[*v])
        .map(|&(u, v)| (remap[u], remap[v]))
        .collect();
    let map_set = |ids: &[NodeId]| -> Vec<NodeId> {
        ids.iter().filter(|&&i| keep[i]).map(|&i| remap[i]).collect()
    };
    AnnotatedGraph {
        graph: RawLogGraph { nodes, edges },
        entries: map_set(&annotated.entries),
        destinations: annotated.destinations.iter().map(|d| map_set(d)).collect(),
    }
}

/// Extracts the attack-related subgraph: entries, destinations, nodes on an
/// entry→D_1 path and nodes on a D_j→D_j' path, with the induced edges.
pub fn prune_attack_subgraph(
    g: &RawLogGraph,
    entries: &[NodeId],
    destinations: &[Vec<NodeId>],
) -> Result<AnnotatedGraph> {
    validate_annotations(g.node_count(), entries, destinations)?;
    let succ = g.successors();
    let pred = g.predecessors();
    let from_entries = bfs(&succ, entries.iter().copied());
    if !destinations[0].iter().any(|&d| from_entries[d]) {
        return Err(Error::Infeasible(
            "no information-flow path from an entry point to a stage-1 destination".into(),
        ));
    }
    let keep = qualifying_nodes(&succ, &pred, entries, destinations);
    let annotated = AnnotatedGraph {
        graph: g.clone(),
        entries: entries.to_vec(),
        destinations: destinations.to_vec(),
    };
    Ok(induced(&annotated, &keep))
}

/// Collapses every group of file nodes whose label starts with a prefix
/// into a single node carrying the group's merged label.
pub fn merge_directory_nodes(g: &AnnotatedGraph, groups: &[(String, String)]) -> AnnotatedGraph {
    let n = g.graph.node_count();
    // representative[i] = index of the node that absorbs node i
    let mut representative: Vec<NodeId> = (0..n).collect();
    let mut relabel: HashMap<NodeId, String> = HashMap::new();
    for (prefix, merged) in groups {
        let members: Vec<NodeId> = g
            .graph
            .nodes
            .iter()
            .filter(|node| {
                node.kind == NodeKind::File
                    && representative[node.id] == node.id
                    && node.label.starts_with(prefix.as_str())
            })
            .map(|node| node.id)
            .collect();
        let Some(&head) = members.first() else {
            continue;
        };
        for &m in &members {
            representative[m] = head;
        }
        relabel.insert(head, merged.clone());
    }

    let mut remap = vec![usize::MAX; n];
    let mut nodes = Vec::new();
    for node in &g.graph.nodes {
        if representative[node.id] == node.id {
            remap[node.id] = nodes.len();
            nodes.push(IfgNode {
                id: nodes.len(),
                kind: node.kind,
                label: relabel.get(&node.id).cloned().unwrap_or_else(|| node.label.clone()),
            });
        }
    }
    let target = |i: NodeId| remap[representative[i]];
    let mut seen = BTreeSet::new();
    let edges = g
        .graph
        .edges
        .iter()
        .map(|&(u, v)| (target(u), target(v)))
        .filter(|&(u, v)| u != v && seen.insert((u, v)))
        .collect();
    let map_set = |ids: &[NodeId]| -> Vec<NodeId> {
        let mut out: Vec<NodeId> = Vec::new();
        for &i in ids {
            let t = target(i);
            if !out.contains(&t) {
                out.push(t);
            }
        }
        out
    };
    AnnotatedGraph {
        graph: RawLogGraph { nodes, edges },
        entries: map_set(&g.entries),
        destinations: g.destinations.iter().map(|d| map_set(d)).collect(),
    }
}

pub fn assert_acyclic(g: &RawLogGraph) -> bool {
    !is_cyclic_directed(&g.to_petgraph())
}

/// Output of node versioning. Versions of an original node share its
/// metadata; `origin[i]` is the original id of output node `i` and
/// `version[i]` its version number (0 for the original copy).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VersionedGraph {
    pub annotated: AnnotatedGraph,
    pub origin: Vec<NodeId>,
    pub version: Vec<usize>,
}

impl VersionedGraph {
    pub fn new_versions(&self) -> usize {
        self.version.iter().filter(|&&v| v > 0).count()
    }
}

/// Back edges of a depth-first search over one strongly connected component,
/// rooted at its smallest member.
fn scc_back_edges(members: &[NodeId], in_scc: &[bool], succ: &[Vec<NodeId>]) -> BTreeSet<(NodeId, NodeId)> {
    let root = *members.iter().min().expect("nonempty component");
    let mut on_stack: HashMap<NodeId, bool> = HashMap::new();
    let mut back = BTreeSet::new();
    // (node, next successor position)
    let mut stack: Vec<(NodeId, usize)> = vec![(root, 0)];
    on_stack.insert(root, true);
    while let Some(&mut (u, ref mut pos)) = stack.last_mut() {
        let next = succ[u][*pos..].iter().position(|&w| in_scc[w]).map(|p| *pos + p);
        match next {
            Some(p) => {
                *pos = p + 1;
                let w = succ[u][p];
                match on_stack.get(&w) {
                    Some(true) => {
                        back.insert((u, w));
                    }
                    Some(false) => {}
                    None => {
                        on_stack.insert(w, true);
                        stack.push((w, 0));
                    }
                }
            }
            None => {
                stack.pop();
                on_stack.insert(u, false);
            }
        }
    }
    back
}

/// Removes cycles by splitting nodes into versions.
///
/// Inside each strongly connected component a DFS classifies edges; every
/// edge closing a cycle (a back edge) is redirected to a fresh version of
/// its target, one layer up. Layers are added until every ordered pair of
/// component members is connected by some version path, and versions that
/// never help connect such a pair are dropped. Edges entering a component
/// target version 0; edges leaving it start from every kept version.
///
/// The input must be a simple digraph without self-loops.
pub fn remove_cycles_by_versioning(g: &AnnotatedGraph) -> VersionedGraph {
    let graph = &g.graph;
    let n = graph.node_count();
    if assert_acyclic(graph) {
        return VersionedGraph {
            annotated: g.clone(),
            origin: (0..n).collect(),
            version: vec![0; n],
        };
    }
    let succ = graph.successors();
    let comp_of = {
        let mut comp_of = vec![0usize; n];
        for (c, scc) in tarjan_scc(&graph.to_petgraph()).into_iter().enumerate() {
            for idx in scc {
                comp_of[idx.index()] = c;
            }
        }
        comp_of
    };
    let mut components: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
    for u in 0..n {
        components.entry(comp_of[u]).or_default().push(u);
    }

    // versions[u] = list of (layer, output id); layer 0 keeps the input id
    let mut versions: Vec<Vec<(usize, NodeId)>> = (0..n).map(|u| vec![(0, u)]).collect();
    let mut origin: Vec<NodeId> = (0..n).collect();
    let mut version: Vec<usize> = vec![0; n];
    let mut edges: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();

    for members in components.values() {
        if members.len() == 1 {
            continue;
        }
        let mut in_scc = vec![false; n];
        for &m in members {
            in_scc[m] = true;
        }
        let back = scc_back_edges(members, &in_scc, &succ);

        // minimum number of back edges on a path x ⇝ y (0-1 BFS)
        let local: HashMap<NodeId, usize> = members.iter().enumerate().map(|(i, &m)| (m, i)).collect();
        let k = members.len();
        let mut min_back = vec![vec![usize::MAX; k]; k];
        for (xi, &x) in members.iter().enumerate() {
            let dist = &mut min_back[xi];
            let mut deque = VecDeque::from([x]);
            dist[xi] = 0;
            while let Some(u) = deque.pop_front() {
                let du = dist[local[&u]];
                for &w in succ[u].iter().filter(|&&w| in_scc[w]) {
                    let cost = usize::from(back.contains(&(u, w)));
                    let wi = local[&w];
                    if du + cost < dist[wi] {
                        dist[wi] = du + cost;
                        if cost == 0 {
                            deque.push_front(w);
                        } else {
                            deque.push_back(w);
                        }
                    }
                }
            }
        }
        // reaching the DFS root from any other member needs a back edge
        let layers = min_back.iter().flatten().copied().max().unwrap_or(0);
        debug_assert!(layers >= 1);

        // layered graph over (member, layer); keep layer 0 plus versions that
        // reach a witness (y, l) with l = min_back(x, y) for some x
        let node_of = |mi: usize, l: usize| l * k + mi;
        let total = k * (layers + 1);
        let mut layered_pred = vec![Vec::new(); total];
        for &u in members {
            for &w in succ[u].iter().filter(|&&w| in_scc[w]) {
                let (ui, wi) = (local[&u], local[&w]);
                if back.contains(&(u, w)) {
                    for l in 0..layers {
                        layered_pred[node_of(wi, l + 1)].push(node_of(ui, l));
                    }
                } else {
                    for l in 0..=layers {
                        layered_pred[node_of(wi, l)].push(node_of(ui, l));
                    }
                }
            }
        }
        let mut witnesses = BTreeSet::new();
        for row in &min_back {
            for (yi, &l) in row.iter().enumerate() {
                if l >= 1 {
                    witnesses.insert(node_of(yi, l));
                }
            }
        }
        let useful = bfs(&layered_pred, witnesses.iter().copied());
        for l in 1..=layers {
            for (mi, &m) in members.iter().enumerate() {
                if useful[node_of(mi, l)] {
                    let id = origin.len();
                    origin.push(m);
                    version.push(l);
                    versions[m].push((l, id));
                }
            }
        }
        let id_of = |m: NodeId, l: usize| -> Option<NodeId> {
            versions[m].iter().find(|(layer, _)| *layer == l).map(|&(_, id)| id)
        };
        for &u in members {
            for &w in succ[u].iter().filter(|&&w| in_scc[w]) {
                let shift = usize::from(back.contains(&(u, w)));
                for l in 0..=layers {
                    if let (Some(a), Some(b)) = (id_of(u, l), id_of(w, l + shift)) {
                        edges.insert((a, b));
                    }
                }
            }
        }
    }

    // edges between components: from every version of the tail to version 0
    for &(u, v) in &graph.edges {
        if comp_of[u] != comp_of[v] {
            for &(_, a) in &versions[u] {
                edges.insert((a, v));
            }
        }
    }

    let mut nodes: Vec<IfgNode> = graph.nodes.clone();
    for id in n..origin.len() {
        let base = &graph.nodes[origin[id]];
        nodes.push(IfgNode {
            id,
            kind: base.kind,
            label: format!("{}#{}", base.label, version[id]),
        });
    }
    let all_versions = |ids: &[NodeId]| -> Vec<NodeId> {
        ids.iter().flat_map(|&i| versions[i].iter().map(|&(_, id)| id)).collect()
    };
    VersionedGraph {
        annotated: AnnotatedGraph {
            graph: RawLogGraph {
                nodes,
                edges: edges.into_iter().collect(),
            },
            entries: g.entries.clone(),
            destinations: g.destinations.iter().map(|d| all_versions(d)).collect(),
        },
        origin,
        version,
    }
}

/// Validated, acyclic information-flow graph with attack annotations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ifg {
    nodes: Vec<IfgNode>,
    edges: Vec<(NodeId, NodeId)>,
    succ: Vec<Vec<NodeId>>,
    entries: Vec<NodeId>,
    destinations: Vec<Vec<NodeId>>,
}

impl Ifg {
    pub fn new(
        nodes: Vec<IfgNode>,
        edges: Vec<(NodeId, NodeId)>,
        entries: Vec<NodeId>,
        destinations: Vec<Vec<NodeId>>,
    ) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Validation("empty graph".into()));
        }
        let n = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::Validation(format!("node ids must be dense; position {i} has id {}", node.id)));
            }
        }
        validate_annotations(n, &entries, &destinations)?;
        let mut seen = BTreeSet::new();
        for &(u, v) in &edges {
            if u >= n || v >= n {
                return Err(Error::Validation(format!("edge ({u}, {v}) references unknown node")));
            }
            if u == v {
                return Err(Error::Validation(format!("self-loop at node {u}")));
            }
            if !seen.insert((u, v)) {
                return Err(Error::Validation(format!("parallel edge ({u}, {v})")));
            }
        }
        let raw = RawLogGraph {
            nodes: nodes.clone(),
            edges: edges.clone(),
        };
        if !assert_acyclic(&raw) {
            return Err(Error::Validation("graph contains a cycle".into()));
        }
        let succ = raw.successors();
        Ok(Self {
            nodes,
            edges,
            succ,
            entries,
            destinations,
        })
    }

    pub fn from_annotated(g: AnnotatedGraph) -> Result<Self> {
        Self::new(g.graph.nodes, g.graph.edges, g.entries, g.destinations)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn stages(&self) -> usize {
        self.destinations.len()
    }

    pub fn nodes(&self) -> &[IfgNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn entries(&self) -> &[NodeId] {
        &self.entries
    }

    pub fn destinations(&self) -> &[Vec<NodeId>] {
        &self.destinations
    }

    /// Destination set of `stage` (1-based).
    pub fn stage_destinations(&self, stage: usize) -> &[NodeId] {
        &self.destinations[stage - 1]
    }

    pub fn is_entry(&self, u: NodeId) -> bool {
        self.entries.contains(&u)
    }

    pub fn is_destination(&self, u: NodeId, stage: usize) -> bool {
        self.destinations[stage - 1].contains(&u)
    }

    pub fn out_neighbors(&self, u: NodeId) -> &[NodeId] {
        &self.succ[u]
    }

    /// Nodes violating the post-pruning path property.
    pub fn unqualified_nodes(&self) -> Vec<NodeId> {
        let raw = self.to_raw();
        let keep = qualifying_nodes(&self.succ, &raw.predecessors(), &self.entries, &self.destinations);
        (0..self.nodes.len()).filter(|&u| !keep[u]).collect()
    }

    pub fn to_raw(&self) -> RawLogGraph {
        RawLogGraph {
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
        }
    }

    pub fn to_graph_file(&self) -> GraphFile {
        GraphFile {
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
            entries: self.entries.clone(),
            destinations: self.destinations.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub n_nodes: usize,
    pub stages: usize,
    pub n_entries: usize,
    pub dests_per_stage: Vec<usize>,
    pub edge_density: f64,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            n_nodes: 18,
            stages: 3,
            n_entries: 2,
            dests_per_stage: vec![1, 1, 1],
            edge_density: 0.12,
            seed: 7,
        }
    }
}

const GENERATOR_ATTEMPTS: u64 = 1000;

/// Random layered attack DAG. Nodes are laid out as entries, then for each
/// stage its intermediate nodes followed by its destinations; every
/// intermediate node gets one edge in from earlier in its stage and one edge
/// out towards the stage's destinations, so all nodes lie on a qualifying
/// path. Extra forward edges are added until `edge_density` of all node
/// pairs are connected. Node ids are shuffled afterwards.
pub fn generate_synthetic(p: &SyntheticParams) -> Result<Ifg> {
    if p.stages == 0 || p.dests_per_stage.len() != p.stages {
        return Err(Error::InfeasibleParams(format!(
            "need one destination count per stage ({} stages, {} counts)",
            p.stages,
            p.dests_per_stage.len()
        )));
    }
    if p.n_entries == 0 || p.dests_per_stage.contains(&0) {
        return Err(Error::InfeasibleParams("entries and destinations must be nonempty".into()));
    }
    let fixed = p.n_entries + p.dests_per_stage.iter().sum::<usize>();
    if p.n_nodes < fixed {
        return Err(Error::InfeasibleParams(format!(
            "{} nodes cannot hold {} entries and destinations",
            p.n_nodes, fixed
        )));
    }
    if !(p.edge_density > 0.0 && p.edge_density <= 1.0) {
        return Err(Error::InfeasibleParams(format!("edge density {} outside (0, 1]", p.edge_density)));
    }
    for attempt in 0..GENERATOR_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        rng.set_stream(attempt);
        let ifg = synthesize(p, &mut rng)?;
        if ifg.unqualified_nodes().is_empty() {
            return Ok(ifg);
        }
    }
    Err(Error::InfeasibleParams(format!(
        "no valid graph found in {GENERATOR_ATTEMPTS} attempts"
    )))
}

fn synthesize(p: &SyntheticParams, rng: &mut ChaCha8Rng) -> Result<Ifg> {
    let n = p.n_nodes;
    let intermediates = n - p.n_entries - p.dests_per_stage.iter().sum::<usize>();
    let mut per_stage = vec![0usize; p.stages];
    for _ in 0..intermediates {
        per_stage[rng.gen_range(0..p.stages)] += 1;
    }

    // positions are a topological order
    let entries: Vec<usize> = (0..p.n_entries).collect();
    let mut next = p.n_entries;
    let mut stage_mid = Vec::with_capacity(p.stages);
    let mut stage_dest = Vec::with_capacity(p.stages);
    for j in 0..p.stages {
        stage_mid.push((next..next + per_stage[j]).collect::<Vec<_>>());
        next += per_stage[j];
        stage_dest.push((next..next + p.dests_per_stage[j]).collect::<Vec<_>>());
        next += p.dests_per_stage[j];
    }

    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for j in 0..p.stages {
        let sources: &[usize] = if j == 0 { &entries } else { &stage_dest[j - 1] };
        let mid = &stage_mid[j];
        let dest = &stage_dest[j];
        for (i, &x) in mid.iter().enumerate() {
            let upstream: Vec<usize> = sources.iter().chain(&mid[..i]).copied().collect();
            let downstream: Vec<usize> = mid[i + 1..].iter().chain(dest).copied().collect();
            edges.insert((*upstream.choose(rng).unwrap(), x));
            edges.insert((x, *downstream.choose(rng).unwrap()));
        }
        let stage_targets: Vec<usize> = mid.iter().chain(dest).copied().collect();
        for &s in sources {
            if !edges.iter().any(|&(u, _)| u == s) {
                edges.insert((s, *stage_targets.choose(rng).unwrap()));
            }
        }
        let feeders: Vec<usize> = sources.iter().chain(mid).copied().collect();
        for &d in dest {
            if !edges.iter().any(|&(_, v)| v == d) {
                edges.insert((*feeders.choose(rng).unwrap(), d));
            }
        }
    }
    let pairs = n * (n - 1) / 2;
    let target = (p.edge_density * pairs as f64).round() as usize;
    let candidates: Vec<(usize, usize)> = (0..n)
        .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
        .filter(|&(_, v)| v >= p.n_entries)
        .collect();
    let mut extra: Vec<(usize, usize)> = candidates.into_iter().filter(|e| !edges.contains(e)).collect();
    extra.shuffle(rng);
    for e in extra {
        if edges.len() >= target {
            break;
        }
        edges.insert(e);
    }

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut nodes: Vec<IfgNode> = (0..n)
        .map(|id| IfgNode {
            id,
            kind: NodeKind::Other,
            label: String::new(),
        })
        .collect();
    for &pos in &entries {
        nodes[perm[pos]].kind = NodeKind::Socket;
        nodes[perm[pos]].label = format!("socket{pos}");
    }
    for j in 0..p.stages {
        for &pos in &stage_mid[j] {
            let kind = if rng.gen_bool(0.5) { NodeKind::Process } else { NodeKind::File };
            nodes[perm[pos]].kind = kind;
            nodes[perm[pos]].label = format!("node{pos}");
        }
        for (k, &pos) in stage_dest[j].iter().enumerate() {
            nodes[perm[pos]].kind = NodeKind::File;
            nodes[perm[pos]].label = format!("target{}_{}", j + 1, k);
        }
    }
    let mut mapped: Vec<(usize, usize)> = edges.into_iter().map(|(u, v)| (perm[u], perm[v])).collect();
    mapped.sort_unstable();
    let entry_ids = entries.iter().map(|&pos| perm[pos]).collect();
    let dest_ids = stage_dest.iter().map(|d| d.iter().map(|&pos| perm[pos]).collect()).collect();
    Ifg::new(nodes, mapped, entry_ids, dest_ids)
}
