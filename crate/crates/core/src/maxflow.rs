//! Edge-disjoint `u_i → v_j` paths by unit-capacity max-flow, with the
//! matching minimum edge cut.

use std::collections::VecDeque;

use serde::Serialize;

use crate::graph::{BipartiteGraph, Vertex};

/// A maximum set of edge-disjoint paths from `u_i` to `v_j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PathSet {
    pub paths: Vec<Vec<Vertex>>,
    pub k: usize,
    /// Longest path, in edges; 0 when there are no paths.
    pub max_len: usize,
}

/// Minimum edge cut between `u_i` and `v_j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CutCertificate {
    /// Vertices on the `u_i` side, as canonical indices, increasing.
    pub left_side: Vec<usize>,
    /// Crossing edges as `(row, col)`, row-major.
    pub cut_edges: Vec<(usize, usize)>,
}

/// Both halves of one max-flow computation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowCertificate {
    pub paths: PathSet,
    pub cut: CutCertificate,
}

#[derive(Debug, Clone, Copy)]
struct Arc {
    to: usize,
    cap: i8,
    flow: i8,
    rev: usize,
}

struct Network {
    arcs: Vec<Vec<Arc>>,
}

impl Network {
    fn add(&mut self, from: usize, to: usize) {
        let (rf, rt) = (self.arcs[to].len(), self.arcs[from].len());
        self.arcs[from].push(Arc {
            to,
            cap: 1,
            flow: 0,
            rev: rf,
        });
        self.arcs[to].push(Arc {
            to: from,
            cap: 0,
            flow: 0,
            rev: rt,
        });
    }

    /// BFS tree in the residual graph; `parent[v] = (u, arc index)`.
    fn bfs(&self, s: usize) -> Vec<Option<(usize, usize)>> {
        let mut parent = vec![None; self.arcs.len()];
        let mut seen = vec![false; self.arcs.len()];
        seen[s] = true;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for (k, a) in self.arcs[u].iter().enumerate() {
                if a.cap > a.flow && !seen[a.to] {
                    seen[a.to] = true;
                    parent[a.to] = Some((u, k));
                    queue.push_back(a.to);
                }
            }
        }
        parent
    }

    /// Flow on the original arc `a → b`, zero if there is none.
    fn flow(&self, a: usize, b: usize) -> i32 {
        self.arcs[a]
            .iter()
            .filter(|arc| arc.to == b && arc.cap == 1)
            .map(|arc| arc.flow as i32)
            .sum()
    }
}

/// Runs the max-flow once and returns both the path set and the cut.
pub fn max_flow(graph: &BipartiteGraph, i: usize, j: usize) -> FlowCertificate {
    let n = graph.n_left();
    let nv = graph.vertex_count();
    let (s, t) = (i, n + j);
    let empty = || FlowCertificate {
        paths: PathSet {
            paths: Vec::new(),
            k: 0,
            max_len: 0,
        },
        cut: CutCertificate {
            left_side: vec![s],
            cut_edges: Vec::new(),
        },
    };
    if i >= n || j >= graph.n_right() {
        return empty();
    }

    // Forward arcs leave each vertex in ascending neighbor order, so BFS
    // prefers lower indices. Arcs into s and out of t are omitted.
    let mut net = Network {
        arcs: vec![Vec::new(); nv],
    };
    for x in 0..nv {
        for &y in graph.neighbors(x) {
            if y != s && x != t {
                net.add(x, y);
            }
        }
    }

    loop {
        let parent = net.bfs(s);
        if parent[t].is_none() {
            break;
        }
        let mut v = t;
        while let Some((u, k)) = parent[v] {
            let rev = net.arcs[u][k].rev;
            net.arcs[u][k].flow += 1;
            net.arcs[v][rev].flow -= 1;
            v = u;
        }
    }

    // Net flow on each undirected edge after cancelling antiparallel pairs.
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); nv];
    for &(r, c) in graph.edges() {
        let (a, b) = (r, n + c);
        let f = net.flow(a, b) - net.flow(b, a);
        match f {
            1 => out[a].push(b),
            -1 => out[b].push(a),
            _ => {}
        }
    }
    for list in &mut out {
        list.sort_unstable();
        list.reverse();
    }

    let mut paths = Vec::new();
    while !out[s].is_empty() {
        let mut walk = vec![s];
        let mut pos = vec![usize::MAX; nv];
        pos[s] = 0;
        let mut v = s;
        while v != t {
            let w = out[v].pop().expect("flow is conserved");
            if pos[w] != usize::MAX {
                // Closed a cycle: drop it; its arcs are already consumed.
                for &x in &walk[pos[w] + 1..] {
                    pos[x] = usize::MAX;
                }
                walk.truncate(pos[w] + 1);
            } else {
                pos[w] = walk.len();
                walk.push(w);
            }
            v = w;
        }
        paths.push(
            walk.into_iter()
                .map(|x| Vertex::from_index(x, n))
                .collect::<Vec<_>>(),
        );
    }

    let parent = net.bfs(s);
    let mut in_s = vec![false; nv];
    in_s[s] = true;
    for v in 0..nv {
        if parent[v].is_some() {
            in_s[v] = true;
        }
    }
    let left_side = (0..nv).filter(|&v| in_s[v]).collect();
    let cut_edges = graph
        .edges()
        .iter()
        .copied()
        .filter(|&(r, c)| in_s[r] != in_s[n + c])
        .collect();

    let k = paths.len();
    let max_len = paths.iter().map(|p| p.len() - 1).max().unwrap_or(0);
    FlowCertificate {
        paths: PathSet { paths, k, max_len },
        cut: CutCertificate {
            left_side,
            cut_edges,
        },
    }
}

/// Maximum set of edge-disjoint paths from `u_i` to `v_j`.
pub fn max_disjoint_paths(graph: &BipartiteGraph, i: usize, j: usize) -> PathSet {
    max_flow(graph, i, j).paths
}

/// Minimum edge cut separating `u_i` from `v_j`.
pub fn min_cut(graph: &BipartiteGraph, i: usize, j: usize) -> CutCertificate {
    max_flow(graph, i, j).cut
}
