//! Primal network simplex specialised to the bipartite transportation problem.
//!
//! Nodes `0..n` are supplies (rows), nodes `n..n+m` are demands (columns).
//! The basis is a spanning tree of `n + m - 1` arcs; potentials satisfy
//! `pot[i] + pot[n + j] = c_ij` on every basic arc.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy)]
struct BasicArc {
    row: usize,
    col: usize,
    flow: f64,
}

const NONE: usize = usize::MAX;

pub(crate) struct TransportSimplex<'a> {
    n: usize,
    m: usize,
    cost: &'a [f64],
    arcs: Vec<BasicArc>,
    /// node -> slots of incident basic arcs
    adj: Vec<Vec<usize>>,
    parent: Vec<usize>,
    parent_arc: Vec<usize>,
    depth: Vec<usize>,
    pot: Vec<f64>,
    eps: f64,
    next_arc: usize,
    block: usize,
    pub(crate) pivots: usize,
}

impl<'a> TransportSimplex<'a> {
    pub(crate) fn new(cost: &'a Matrix, supply: &[f64], demand: &[f64]) -> Self {
        let n = supply.len();
        let m = demand.len();
        let scale = cost.data().iter().fold(0.0f64, |a, &c| a.max(c.abs()));
        let mut s = Self {
            n,
            m,
            cost: cost.data(),
            arcs: Vec::with_capacity(n + m - 1),
            adj: vec![Vec::new(); n + m],
            parent: vec![NONE; n + m],
            parent_arc: vec![NONE; n + m],
            depth: vec![0; n + m],
            pot: vec![0.0; n + m],
            eps: 1e-13 * scale.max(1e-300),
            next_arc: 0,
            block: ((n * m) as f64).sqrt().ceil().max(10.0) as usize,
            pivots: 0,
        };
        s.initial_basis(supply, demand);
        s.rebuild_tree();
        s
    }

    #[inline]
    fn c(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.m + j]
    }

    /// Least-cost rule: scan arcs by increasing cost, saturate whichever
    /// line runs out first. Always yields a spanning tree.
    fn initial_basis(&mut self, supply: &[f64], demand: &[f64]) {
        let (n, m) = (self.n, self.m);
        let mut order: Vec<u32> = (0..(n * m) as u32).collect();
        let cost = self.cost;
        order.sort_unstable_by(|&a, &b| {
            cost[a as usize]
                .total_cmp(&cost[b as usize])
                .then(a.cmp(&b))
        });
        let mut s = supply.to_vec();
        let mut d = demand.to_vec();
        let mut row_active = vec![true; n];
        let mut col_active = vec![true; m];
        let mut rows_left = n;
        let mut cols_left = m;
        for idx in order {
            if self.arcs.len() == n + m - 1 {
                break;
            }
            let (i, j) = (idx as usize / m, idx as usize % m);
            if !row_active[i] || !col_active[j] {
                continue;
            }
            let x = s[i].min(d[j]);
            self.push_arc(i, j, x);
            let row_done = s[i] <= d[j];
            s[i] -= x;
            d[j] -= x;
            if row_done && rows_left > 1 {
                row_active[i] = false;
                rows_left -= 1;
            } else if cols_left > 1 {
                col_active[j] = false;
                cols_left -= 1;
            } else {
                row_active[i] = false;
                rows_left -= 1;
            }
        }
        debug_assert_eq!(self.arcs.len(), n + m - 1);
    }

    fn push_arc(&mut self, row: usize, col: usize, flow: f64) {
        let slot = self.arcs.len();
        self.arcs.push(BasicArc { row, col, flow });
        self.adj[row].push(slot);
        self.adj[self.n + col].push(slot);
    }

    #[inline]
    fn other_end(&self, slot: usize, node: usize) -> usize {
        let a = self.arcs[slot];
        if node < self.n {
            self.n + a.col
        } else {
            a.row
        }
    }

    fn rebuild_tree(&mut self) {
        self.parent[0] = NONE;
        self.parent_arc[0] = NONE;
        self.depth[0] = 0;
        self.pot[0] = 0.0;
        self.hang_subtree(0);
    }

    /// Recomputes parent/depth/potential for every node below `start`,
    /// whose own entries must already be set.
    fn hang_subtree(&mut self, start: usize) {
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for k in 0..self.adj[u].len() {
                let slot = self.adj[u][k];
                if slot == self.parent_arc[u] {
                    continue;
                }
                let v = self.other_end(slot, u);
                let a = self.arcs[slot];
                self.parent[v] = u;
                self.parent_arc[v] = slot;
                self.depth[v] = self.depth[u] + 1;
                self.pot[v] = self.c(a.row, a.col) - self.pot[u];
                stack.push(v);
            }
        }
    }

    #[inline]
    fn reduced_cost(&self, i: usize, j: usize) -> f64 {
        self.c(i, j) - self.pot[i] - self.pot[self.n + j]
    }

    /// Block search: most negative reduced cost within the first block
    /// (cyclically) containing any candidate.
    fn price_block(&mut self) -> Option<(usize, usize)> {
        let total = self.n * self.m;
        let mut best = -self.eps;
        let mut best_idx = NONE;
        let mut scanned = 0;
        let mut idx = self.next_arc;
        while scanned < total {
            let end = (scanned + self.block).min(total);
            while scanned < end {
                let (i, j) = (idx / self.m, idx % self.m);
                let rc = self.reduced_cost(i, j);
                if rc < best {
                    best = rc;
                    best_idx = idx;
                }
                idx += 1;
                if idx == total {
                    idx = 0;
                }
                scanned += 1;
            }
            if best_idx != NONE {
                self.next_arc = idx;
                return Some((best_idx / self.m, best_idx % self.m));
            }
        }
        None
    }

    /// Bland's rule: lowest-index arc with negative reduced cost.
    fn price_bland(&self) -> Option<(usize, usize)> {
        for i in 0..self.n {
            for j in 0..self.m {
                if self.reduced_cost(i, j) < -self.eps {
                    return Some((i, j));
                }
            }
        }
        None
    }

    pub(crate) fn run(&mut self, max_pivots: usize) -> Result<()> {
        let degenerate_limit = self.n + self.m;
        let mut degenerate_run = 0usize;
        loop {
            let entering = if degenerate_run > degenerate_limit {
                self.price_bland()
            } else {
                self.price_block()
            };
            let Some((i, j)) = entering else {
                return Ok(());
            };
            if self.pivots >= max_pivots {
                return Err(Error::SolverIterationLimit(max_pivots));
            }
            self.pivots += 1;
            let theta = self.pivot(i, j);
            if theta > 0.0 {
                degenerate_run = 0;
            } else {
                degenerate_run += 1;
            }
        }
    }

    /// Pushes flow around the cycle closed by arc `(i, j)`; returns the step.
    fn pivot(&mut self, i: usize, j: usize) -> f64 {
        let n = self.n;
        // Walk both endpoints up to their common ancestor.
        let mut a = i;
        let mut b = n + j;
        let mut up_from_row = Vec::new();
        let mut up_from_col = Vec::new();
        while a != b {
            if self.depth[a] >= self.depth[b] {
                up_from_row.push(self.parent_arc[a]);
                a = self.parent[a];
            } else {
                up_from_col.push(self.parent_arc[b]);
                b = self.parent[b];
            }
        }
        // Cycle order after the entering arc: column side upward, then row side
        // downward. Arcs alternate between losing and gaining flow, starting
        // with a loss.
        let cycle: Vec<(usize, bool)> = up_from_col
            .iter()
            .chain(up_from_row.iter().rev())
            .enumerate()
            .map(|(k, &slot)| (slot, k % 2 == 0))
            .collect();

        let mut theta = f64::INFINITY;
        let mut leaving = NONE;
        let mut leaving_key = usize::MAX;
        for &(slot, loses) in &cycle {
            if !loses {
                continue;
            }
            let arc = self.arcs[slot];
            let key = arc.row * self.m + arc.col;
            if arc.flow < theta || (arc.flow == theta && key < leaving_key) {
                theta = arc.flow;
                leaving = slot;
                leaving_key = key;
            }
        }
        debug_assert!(leaving != NONE);
        for &(slot, loses) in &cycle {
            if loses {
                self.arcs[slot].flow -= theta;
            } else {
                self.arcs[slot].flow += theta;
            }
        }
        let leaving_on_row_side = up_from_row.contains(&leaving);

        // Detach the leaving arc; its lower endpoint roots the cut-off subtree.
        let old = self.arcs[leaving];
        let (r_node, c_node) = (old.row, n + old.col);
        self.adj[r_node].retain(|&s| s != leaving);
        self.adj[c_node].retain(|&s| s != leaving);

        // Reuse the slot for the entering arc.
        self.arcs[leaving] = BasicArc {
            row: i,
            col: j,
            flow: theta,
        };
        self.adj[i].push(leaving);
        self.adj[n + j].push(leaving);

        // The endpoint of the entering arc inside the detached subtree gets
        // re-hung beneath the other endpoint.
        let (inner, outer) = if leaving_on_row_side {
            (i, n + j)
        } else {
            (n + j, i)
        };
        self.parent[inner] = outer;
        self.parent_arc[inner] = leaving;
        self.depth[inner] = self.depth[outer] + 1;
        self.pot[inner] = self.c(i, j) - self.pot[outer];
        self.hang_subtree(inner);
        theta
    }

    pub(crate) fn flows(&self) -> Matrix {
        let mut p = Matrix::zeros(self.n, self.m);
        for a in &self.arcs {
            p[(a.row, a.col)] += a.flow.max(0.0);
        }
        p
    }

    #[cfg(test)]
    pub(crate) fn potentials(&self) -> (&[f64], &[f64]) {
        self.pot.split_at(self.n)
    }
}
