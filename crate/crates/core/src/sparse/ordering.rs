use std::collections::VecDeque;

use super::csr::CsrMatrix;

const LEAF_SIZE: usize = 64;

/// Symmetric adjacency of `A + Aᵀ` without self loops.
pub fn symmetric_adjacency(a: &CsrMatrix) -> Vec<Vec<usize>> {
    let n = a.nrows();
    let mut adj = vec![Vec::new(); n];
    for (i, j, _) in a.iter() {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for row in &mut adj {
        row.sort_unstable();
        row.dedup();
    }
    adj
}

/// Fill-reducing nested dissection ordering. Returns `perm` such that
/// position `k` of the permuted system holds original unknown `perm[k]`.
///
/// Separators are taken as the middle BFS level from a pseudo-peripheral
/// node, which on the structured meshes used here gives straight cuts.
pub fn nested_dissection(a: &CsrMatrix) -> Vec<usize> {
    let adj = symmetric_adjacency(a);
    let n = adj.len();
    let mut order = Vec::with_capacity(n);
    let mut stamp = vec![0u32; n];
    let mut level = vec![usize::MAX; n];
    let mut next_stamp = 1u32;
    // dense rows such as averaging constraints go last
    let dense_degree = 16usize.max(10 * (n as f64).sqrt() as usize);
    let (dense, sparse): (Vec<usize>, Vec<usize>) = (0..n).partition(|&v| adj[v].len() > dense_degree);
    let mut ctx = Ctx { adj: &adj, stamp: &mut stamp, level: &mut level, next_stamp: &mut next_stamp };
    dissect(&mut ctx, sparse, &mut order);
    order.extend(dense);
    debug_assert_eq!(order.len(), n);
    order
}

struct Ctx<'a> {
    adj: &'a [Vec<usize>],
    stamp: &'a mut [u32],
    level: &'a mut [usize],
    next_stamp: &'a mut u32,
}

impl Ctx<'_> {
    fn mark(&mut self, set: &[usize]) -> u32 {
        *self.next_stamp += 1;
        let s = *self.next_stamp;
        for &v in set {
            self.stamp[v] = s;
            self.level[v] = usize::MAX;
        }
        s
    }

    /// BFS restricted to nodes carrying stamp `s`. Returns visited nodes in
    /// visit order; levels are written to `self.level`.
    fn bfs(&mut self, root: usize, s: u32, set: &[usize]) -> Vec<usize> {
        for &v in set {
            self.level[v] = usize::MAX;
        }
        let mut seen = Vec::new();
        let mut q = VecDeque::new();
        self.level[root] = 0;
        q.push_back(root);
        while let Some(v) = q.pop_front() {
            seen.push(v);
            for &w in &self.adj[v] {
                if self.stamp[w] == s && self.level[w] == usize::MAX {
                    self.level[w] = self.level[v] + 1;
                    q.push_back(w);
                }
            }
        }
        seen
    }

    fn degree_in(&self, v: usize, s: u32) -> usize {
        self.adj[v].iter().filter(|&&w| self.stamp[w] == s).count()
    }
}

fn components(ctx: &mut Ctx<'_>, set: &[usize], s: u32) -> Vec<Vec<usize>> {
    for &v in set {
        ctx.level[v] = usize::MAX;
    }
    let mut comps = Vec::new();
    for &v in set {
        if ctx.level[v] != usize::MAX {
            continue;
        }
        let mut comp = vec![v];
        ctx.level[v] = 0;
        let mut k = 0;
        while k < comp.len() {
            let u = comp[k];
            k += 1;
            for &w in &ctx.adj[u] {
                if ctx.stamp[w] == s && ctx.level[w] == usize::MAX {
                    ctx.level[w] = 0;
                    comp.push(w);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

fn dissect(ctx: &mut Ctx<'_>, set: Vec<usize>, order: &mut Vec<usize>) {
    if set.len() <= LEAF_SIZE {
        order.extend(set);
        return;
    }
    let s = ctx.mark(&set);
    let start = *set.iter().min_by_key(|&&v| (ctx.degree_in(v, s), v)).unwrap();
    let mut root = start;
    let mut reach = ctx.bfs(root, s, &set);
    if reach.len() < set.len() {
        for comp in components(ctx, &set, s) {
            dissect(ctx, comp, order);
        }
        return;
    }
    let mut ecc = ctx.level[*reach.last().unwrap()];
    for _ in 0..8 {
        let last = ctx.level[*reach.last().unwrap()];
        let cand =
            reach.iter().copied().filter(|&v| ctx.level[v] == last).min_by_key(|&v| (ctx.degree_in(v, s), v)).unwrap();
        let r2 = ctx.bfs(cand, s, &set);
        let e2 = ctx.level[*r2.last().unwrap()];
        if e2 <= ecc {
            // restore levels for the best root
            ctx.bfs(root, s, &set);
            break;
        }
        root = cand;
        ecc = e2;
        reach = r2;
    }
    let mid = ecc / 2;
    if ecc < 2 {
        order.extend(set);
        return;
    }
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut sep = Vec::new();
    for &v in &set {
        match ctx.level[v].cmp(&mid) {
            std::cmp::Ordering::Less => left.push(v),
            std::cmp::Ordering::Greater => right.push(v),
            std::cmp::Ordering::Equal => sep.push(v),
        }
    }
    dissect(ctx, left, order);
    dissect(ctx, right, order);
    order.extend(sep);
}
