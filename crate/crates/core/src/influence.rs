//! Social graph construction, user self-influence, and the influence-
//! personalized PageRank used to rank users.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::TweetRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserNode {
    pub user_id: String,
    /// Follower count (`N_i`).
    pub followers: u64,
    /// Declared follow count from the data; the solver uses graph out-degree.
    pub following: u64,
    /// Retweets received by this user's posts.
    pub retweets_sent: u64,
    pub verified: bool,
}

impl UserNode {
    pub fn new(user_id: impl Into<String>) -> Self {
        Self {
            user_id: user_id.into(),
            followers: 0,
            following: 0,
            retweets_sent: 0,
            verified: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphOrigin {
    ExplicitEdgeFile,
    DerivedFromMentions,
}

/// Directed graph; an edge `(a, b)` means `a` links to `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialGraph {
    nodes: BTreeMap<String, UserNode>,
    edges: BTreeSet<(String, String)>,
    pub origin: GraphOrigin,
}

impl SocialGraph {
    pub fn new(origin: GraphOrigin) -> Self {
        Self {
            nodes: BTreeMap::new(),
            edges: BTreeSet::new(),
            origin,
        }
    }

    /// Inserts or replaces a node.
    pub fn add_node(&mut self, node: UserNode) {
        self.nodes.insert(node.user_id.clone(), node);
    }

    /// Adds `from → to`; returns false if it was already present.
    pub fn add_edge(&mut self, from: &str, to: &str) -> Result<bool> {
        for id in [from, to] {
            if !self.nodes.contains_key(id) {
                return Err(Error::Domain(format!("edge endpoint {id:?} is not a node")));
            }
        }
        Ok(self.edges.insert((from.to_string(), to.to_string())))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &UserNode> {
        self.nodes.values()
    }

    pub fn node(&self, id: &str) -> Option<&UserNode> {
        self.nodes.get(id)
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.edges.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn out_degree(&self, id: &str) -> usize {
        self.edges.iter().filter(|(a, _)| a == id).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InfluenceParams {
    pub alpha: f64,
    pub beta: f64,
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InfluenceParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            damping: 0.85,
            tol: 1e-6,
            max_iter: 100,
        }
    }
}

impl InfluenceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config(format!(
                "alpha and beta must be nonnegative (alpha={}, beta={})",
                self.alpha, self.beta
            )));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Config(format!("damping must lie in [0, 1), got {}", self.damping)));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("tol must be positive and max_iter at least 1".into()));
        }
        Ok(())
    }
}

/// Follower count relative to the dataset maximum. A zero maximum scores 0.
pub fn relationship_breadth(node: &UserNode, n_max: u64) -> f64 {
    if n_max == 0 {
        0.0
    } else {
        node.followers as f64 / n_max as f64
    }
}

pub fn verification_bonus(verified: bool) -> f64 {
    if verified {
        1.5
    } else {
        1.0
    }
}

pub fn authority(node: &UserNode, nr_max: u64, alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha >= 0.0 && beta >= 0.0) {
        return Err(Error::Config(format!(
            "alpha and beta must be nonnegative (alpha={alpha}, beta={beta})"
        )));
    }
    let activity = if nr_max == 0 {
        0.0
    } else {
        node.retweets_sent as f64 / nr_max as f64
    };
    Ok(alpha * verification_bonus(node.verified) + beta * activity)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Maxima {
    pub followers: u64,
    pub retweets_sent: u64,
}

impl Maxima {
    pub fn of<'a>(nodes: impl IntoIterator<Item = &'a UserNode>) -> Self {
        nodes.into_iter().fold(Maxima::default(), |m, n| Maxima {
            followers: m.followers.max(n.followers),
            retweets_sent: m.retweets_sent.max(n.retweets_sent),
        })
    }
}

pub fn self_influence(node: &UserNode, maxima: Maxima, alpha: f64, beta: f64) -> Result<f64> {
    Ok(relationship_breadth(node, maxima.followers) + authority(node, maxima.retweets_sent, alpha, beta)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRow {
    pub pr_people: f64,
    pub uad: f64,
    pub pr_influence: f64,
    pub pr_uir_raw: f64,
    pub pr_uir_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceTable {
    pub rows: BTreeMap<String, InfluenceRow>,
    pub iterations: usize,
    pub residual: f64,
    /// Max per-node change after each iteration.
    pub residual_history: Vec<f64>,
}

impl InfluenceTable {
    pub fn get(&self, user_id: &str) -> Option<&InfluenceRow> {
        self.rows.get(user_id)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Median of the normalized scores, used for authors absent from the table.
    pub fn median_norm(&self) -> f64 {
        let mut v: Vec<f64> = self.rows.values().map(|r| r.pr_uir_norm).collect();
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    /// Writes `user_id,pr_people,uad,pr_influence,pr_uir_raw,pr_uir_norm`
    /// rows in rank order, truncated to `top_k` when given.
    pub fn write_csv<W: Write>(&self, out: W, top_k: Option<usize>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Parse(format!("csv write: {e}"));
        w.write_record(["user_id", "pr_people", "uad", "pr_influence", "pr_uir_raw", "pr_uir_norm"])
            .map_err(csv_err)?;
        let ranked = rank_users(self);
        for id in ranked.iter().take(top_k.unwrap_or(usize::MAX)) {
            let r = &self.rows[id];
            w.write_record([
                id.clone(),
                r.pr_people.to_string(),
                r.uad.to_string(),
                r.pr_influence.to_string(),
                r.pr_uir_raw.to_string(),
                r.pr_uir_norm.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Parse(format!("csv flush: {e}")))?;
        Ok(())
    }
}

/// Jacobi iteration of
/// `PR_i = PR_influence_i + d · Σ_{j→i} PR_j / LR_j + (1 − d)`
/// from the all-ones vector, with `LR_j` the out-degree of `j`. Nodes
/// without out-links pass nothing on.
pub fn uir_pagerank(g: &SocialGraph, params: &InfluenceParams) -> Result<InfluenceTable> {
    params.validate()?;
    if g.node_count() == 0 {
        return Err(Error::Domain("influence ranking needs a nonempty graph".into()));
    }
    let ids: Vec<&String> = g.nodes.keys().collect();
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let n = ids.len();

    let maxima = Maxima::of(g.nodes.values());
    let mut pr_people = vec![0.0; n];
    let mut uad = vec![0.0; n];
    for (i, id) in ids.iter().enumerate() {
        let node = &g.nodes[*id];
        pr_people[i] = relationship_breadth(node, maxima.followers);
        uad[i] = authority(node, maxima.retweets_sent, params.alpha, params.beta)?;
    }
    let personal: Vec<f64> = pr_people.iter().zip(&uad).map(|(a, b)| a + b).collect();

    let edges: Vec<(usize, usize)> = g.edges().map(|(a, b)| (index[a], index[b])).collect();
    let (x, history) = solve_personalized(&personal, &edges, params)?;
    let residual = *history.last().expect("max_iter >= 1");

    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rows = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let norm = if hi > lo { (x[i] - lo) / (hi - lo) } else { 0.0 };
            (
                (*id).clone(),
                InfluenceRow {
                    pr_people: pr_people[i],
                    uad: uad[i],
                    pr_influence: personal[i],
                    pr_uir_raw: x[i],
                    pr_uir_norm: norm,
                },
            )
        })
        .collect();
    Ok(InfluenceTable {
        rows,
        iterations: history.len(),
        residual,
        residual_history: history,
    })
}

/// Fixed-point iteration over index-based edges; returns the iterate and the
/// per-iteration max change.
pub fn solve_personalized(
    personal: &[f64],
    edges: &[(usize, usize)],
    params: &InfluenceParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = personal.len();
    let mut out_deg = vec![0usize; n];
    let mut in_links: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(Error::Domain(format!("edge ({a}, {b}) outside {n} nodes")));
        }
        out_deg[a] += 1;
        in_links[b].push(a);
    }
    let d = params.damping;
    let mut x = vec![1.0; n];
    let mut next = vec![0.0; n];
    let mut history = Vec::new();
    for _ in 0..params.max_iter {
        for i in 0..n {
            let inflow: f64 = in_links[i].iter().map(|&j| x[j] / out_deg[j] as f64).sum();
            next[i] = personal[i] + d * inflow + (1.0 - d);
        }
        let change = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut x, &mut next);
        history.push(change);
        if !change.is_finite() {
            return Err(Error::Numeric("influence iteration diverged".into()));
        }
        if change < params.tol {
            return Ok((x, history));
        }
    }
    Err(Error::Convergence {
        iterations: history.len(),
        residual: history.last().copied().unwrap_or(f64::NAN),
    })
}

/// Descending by score, ties by id.
pub fn rank_by_score(scores: &BTreeMap<String, f64>) -> Vec<String> {
    let mut v: Vec<(&String, f64)> = scores.iter().map(|(k, &s)| (k, s)).collect();
    v.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => a.0.cmp(b.0),
        o => o,
    });
    v.into_iter().map(|(k, _)| k.clone()).collect()
}

/// Users ordered by raw score, highest first.
pub fn rank_users(table: &InfluenceTable) -> Vec<String> {
    let scores = table.rows.iter().map(|(k, r)| (k.clone(), r.pr_uir_raw)).collect();
    rank_by_score(&scores)
}

fn nodes_from_records(records: &[TweetRecord], origin: GraphOrigin) -> SocialGraph {
    let mut g = SocialGraph::new(origin);
    for r in records {
        let node = g
            .nodes
            .entry(r.user_id.clone())
            .or_insert_with(|| UserNode::new(r.user_id.clone()));
        node.followers = node.followers.max(r.followers);
        node.following = node.following.max(r.following);
        node.retweets_sent += r.retweets;
        node.verified |= r.verified;
    }
    g
}

/// One edge `author → mentioned` per distinct pair. Handles are matched to
/// authors case-insensitively; unmatched handles become attribute-less
/// nodes. Self-mentions are dropped.
pub fn derive_graph_from_mentions(records: &[TweetRecord]) -> SocialGraph {
    let mut g = nodes_from_records(records, GraphOrigin::DerivedFromMentions);
    let by_lower: HashMap<String, String> = g.nodes.keys().map(|k| (k.to_lowercase(), k.clone())).collect();
    for r in records {
        for m in &r.mentions {
            let target = by_lower.get(&m.to_lowercase()).cloned().unwrap_or_else(|| m.clone());
            if target == r.user_id {
                continue;
            }
            g.nodes
                .entry(target.clone())
                .or_insert_with(|| UserNode::new(target.clone()));
            g.edges.insert((r.user_id.clone(), target));
        }
    }
    g
}

/// Graph with node attributes from `records` and edges from a
/// `from_user,to_user` CSV. Unknown endpoints become attribute-less nodes.
pub fn load_edge_file(path: &Path, records: &[TweetRecord]) -> Result<SocialGraph> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_edges(file, records)
}

pub fn read_edges<R: std::io::Read>(reader: R, records: &[TweetRecord]) -> Result<SocialGraph> {
    let mut g = nodes_from_records(records, GraphOrigin::ExplicitEdgeFile);
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("edge file header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(fi), Some(ti)) = (col("from_user"), col("to_user")) else {
        let missing = ["from_user", "to_user"]
            .into_iter()
            .filter(|n| col(n).is_none())
            .map(String::from)
            .collect();
        return Err(Error::Schema { missing });
    };
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::Parse(format!("edge file row {}: {e}", line + 2)))?;
        let (a, b) = (row.get(fi).unwrap_or("").trim(), row.get(ti).unwrap_or("").trim());
        if a.is_empty() || b.is_empty() || a == b {
            continue;
        }
        for id in [a, b] {
            g.nodes.entry(id.to_string()).or_insert_with(|| UserNode::new(id));
        }
        g.edges.insert((a.to_string(), b.to_string()));
    }
    Ok(g)
}
