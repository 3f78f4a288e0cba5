use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::classify::classify_edit;
use crate::corpus::{validate_edits, Edit, ErrorType};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeKind {
    Keep,
    /// Replace source `start..end` with `replacement`.
    Edit {
        start: usize,
        end: usize,
        replacement: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeEdge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
}

/// Alignment lattice between a source and a hypothesis.
///
/// Vertices are the positions of a single minimum-cost alignment, stored as
/// `(source index, hypothesis index)` in path order. Every edge goes from a
/// lower to a higher vertex index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditLattice {
    pub source: Vec<String>,
    pub hypothesis: Vec<String>,
    pub vertices: Vec<(usize, usize)>,
    pub edges: Vec<LatticeEdge>,
    pub merge_window: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Keep,
    Sub,
    Del,
    Ins,
}

/// Levenshtein alignment; on equal cost the backtrace prefers
/// match, then substitution, deletion, insertion.
fn align(src: &[String], hyp: &[String]) -> Vec<Op> {
    let (n, m) = (src.len(), hyp.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[i - 1][j - 1] + usize::from(src[i - 1] != hyp[j - 1]);
            d[i][j] = diag.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let (mut i, mut j) = (n, m);
    let mut ops = Vec::with_capacity(n + m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && src[i - 1] == hyp[j - 1] && d[i][j] == d[i - 1][j - 1] {
            ops.push(Op::Keep);
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + 1 {
            ops.push(Op::Sub);
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ops.push(Op::Del);
            i -= 1;
        } else {
            ops.push(Op::Ins);
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

/// Builds the lattice: one edge per alignment operation, plus merged edit
/// edges for every contiguous sub-run of edit operations whose gaps are at
/// most `merge_window` kept tokens.
pub fn build_lattice(source: &[String], hypothesis: &[String], merge_window: usize) -> EditLattice {
    let ops = align(source, hypothesis);
    let mut vertices = Vec::with_capacity(ops.len() + 1);
    let (mut i, mut j) = (0, 0);
    vertices.push((0, 0));
    for op in &ops {
        match op {
            Op::Keep | Op::Sub => {
                i += 1;
                j += 1;
            }
            Op::Del => i += 1,
            Op::Ins => j += 1,
        }
        vertices.push((i, j));
    }
    let edit_between = |a: usize, b: usize| {
        let (si, sj) = vertices[a];
        let (ei, ej) = vertices[b];
        EdgeKind::Edit {
            start: si,
            end: ei,
            replacement: hypothesis[sj..ej].to_vec(),
        }
    };
    let mut edges = Vec::new();
    for (k, op) in ops.iter().enumerate() {
        let kind = if *op == Op::Keep { EdgeKind::Keep } else { edit_between(k, k + 1) };
        edges.push(LatticeEdge { from: k, to: k + 1, kind });
    }
    let edit_ops: Vec<usize> = (0..ops.len()).filter(|&k| ops[k] != Op::Keep).collect();
    let mut runs: Vec<Vec<usize>> = Vec::new();
    for &k in &edit_ops {
        match runs.last_mut() {
            Some(run) if k - run.last().unwrap() - 1 <= merge_window => run.push(k),
            _ => runs.push(vec![k]),
        }
    }
    for run in &runs {
        for a in 0..run.len() {
            for b in a + 1..run.len() {
                edges.push(LatticeEdge {
                    from: run[a],
                    to: run[b] + 1,
                    kind: edit_between(run[a], run[b] + 1),
                });
            }
        }
    }
    EditLattice {
        source: source.to_vec(),
        hypothesis: hypothesis.to_vec(),
        vertices,
        edges,
        merge_window,
    }
}

impl EditLattice {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn edit_edges(&self) -> impl Iterator<Item = &LatticeEdge> {
        self.edges.iter().filter(|e| matches!(e.kind, EdgeKind::Edit { .. }))
    }

    /// Outgoing edges of every vertex, in insertion order.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for (k, e) in self.edges.iter().enumerate() {
            adj[e.from].push(k);
        }
        adj
    }
}

/// Outcome of matching one hypothesis against its gold edits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Edits on the selected path. Matched edits carry the gold type;
    /// others are typed by the classifier.
    pub chosen: Vec<Edit>,
    /// For each chosen edit, the index of the gold edit it matched.
    pub chosen_gold: Vec<Option<usize>>,
    /// For each gold edit, whether it was matched.
    pub gold_matched: Vec<bool>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

type Key = (usize, usize, Vec<String>);

#[derive(Clone)]
struct Best {
    tp: usize,
    edits: usize,
    keys: Vec<Key>,
    edges: Vec<usize>,
}

fn better(a: &Best, b: &Best) -> bool {
    match a.tp.cmp(&b.tp) {
        Ordering::Greater => return true,
        Ordering::Less => return false,
        Ordering::Equal => {}
    }
    match a.edits.cmp(&b.edits) {
        Ordering::Less => return true,
        Ordering::Greater => return false,
        Ordering::Equal => {}
    }
    a.keys < b.keys
}

pub(crate) fn gold_index(gold: &[Edit]) -> HashMap<Key, usize> {
    gold.iter()
        .enumerate()
        .map(|(k, e)| ((e.start, e.end, e.replacement.clone()), k))
        .collect()
}

/// Chooses the complete lattice path with the most gold matches, breaking
/// ties by fewer edit edges and then by the lexicographically smallest list
/// of `(start, end, replacement)`. Each gold edit is matched at most once.
pub fn max_match(lattice: &EditLattice, gold: &[Edit]) -> Result<MatchResult> {
    validate_edits(lattice.source.len(), gold)
        .map_err(|e| Error::Validation(format!("gold edits do not fit the source: {e}")))?;
    let index = gold_index(gold);
    let adj = lattice.adjacency();
    let last = lattice.vertices.len() - 1;
    // best[v][flag]: best suffix from v; flag = the gold insertion at this
    // vertex's source index is already used on the path.
    let mut best: Vec<[Option<Best>; 2]> = vec![[None, None]; lattice.vertices.len()];
    let done = Best {
        tp: 0,
        edits: 0,
        keys: Vec::new(),
        edges: Vec::new(),
    };
    best[last] = [Some(done.clone()), Some(done)];
    for v in (0..last).rev() {
        for flag in [false, true] {
            let mut cur: Option<Best> = None;
            for &k in &adj[v] {
                let e = &lattice.edges[k];
                let w = e.to;
                let same_index = lattice.vertices[w].0 == lattice.vertices[v].0;
                let cand = match &e.kind {
                    EdgeKind::Keep => {
                        let next_flag = flag && same_index;
                        let s = best[w][usize::from(next_flag)].as_ref().unwrap();
                        Best {
                            edges: std::iter::once(k).chain(s.edges.iter().copied()).collect(),
                            ..s.clone()
                        }
                    }
                    EdgeKind::Edit { start, end, replacement } => {
                        let key = (*start, *end, replacement.clone());
                        let insertion = start == end;
                        let matched = index.contains_key(&key) && !(insertion && flag);
                        let next_flag = same_index && (flag || (matched && insertion));
                        let s = best[w][usize::from(next_flag)].as_ref().unwrap();
                        Best {
                            tp: s.tp + usize::from(matched),
                            edits: s.edits + 1,
                            keys: std::iter::once(key).chain(s.keys.iter().cloned()).collect(),
                            edges: std::iter::once(k).chain(s.edges.iter().copied()).collect(),
                        }
                    }
                };
                if cur.as_ref().map_or(true, |c| better(&cand, c)) {
                    cur = Some(cand);
                }
            }
            best[v][usize::from(flag)] = cur;
        }
    }
    let path = best[0][0].take().expect("lattice always has a complete path");
    Ok(resolve_path(lattice, gold, &index, &path.edges))
}

/// Scores a fixed path (given as edge indices), applying the
/// at-most-once matching rule in path order.
pub(crate) fn resolve_path(lattice: &EditLattice, gold: &[Edit], index: &HashMap<Key, usize>, path: &[usize]) -> MatchResult {
    let mut gold_matched = vec![false; gold.len()];
    let mut chosen = Vec::new();
    let mut chosen_gold = Vec::new();
    for &k in path {
        if let EdgeKind::Edit { start, end, replacement } = &lattice.edges[k].kind {
            let key = (*start, *end, replacement.clone());
            let hit = index.get(&key).copied().filter(|&g| !gold_matched[g]);
            let etype = match hit {
                Some(g) => {
                    gold_matched[g] = true;
                    gold[g].etype
                }
                None => ErrorType::Other,
            };
            let mut edit = Edit::new(*start, *end, replacement.clone(), etype);
            if hit.is_none() {
                edit.etype = classify_edit(&edit, &lattice.source);
            }
            chosen.push(edit);
            chosen_gold.push(hit);
        }
    }
    let tp = gold_matched.iter().filter(|m| **m).count();
    MatchResult {
        fp: chosen.len() - tp,
        fn_: gold.len() - tp,
        tp,
        chosen,
        chosen_gold,
        gold_matched,
    }
}
