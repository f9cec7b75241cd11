//! Static `d`-dimensional range tree with tombstone deletion.
//!
//! Each level is a segment tree over the points sorted by one coordinate; every
//! internal node carries a structure for the next coordinate. The last coordinate
//! is a sorted array with a Fenwick tree of live counts. Nodes holding at most
//! [`BUCKET`] points are scanned directly.

use crate::error::{invalid, Error, Result};

const BUCKET: usize = 32;

#[derive(Debug, Clone)]
pub struct RangeTree {
    d: usize,
    points: Vec<Vec<f64>>,
    alive: Vec<bool>,
    live: usize,
    built_with: usize,
    root: Option<Level>,
}

#[derive(Debug, Clone)]
struct Level {
    dim: usize,
    keys: Vec<f64>,
    ids: Vec<u32>,
    kind: Kind,
}

#[derive(Debug, Clone)]
enum Kind {
    Last { fenwick: Vec<i32> },
    Tree { nodes: Vec<Node> },
}

#[derive(Debug, Clone)]
struct Node {
    lo: usize,
    hi: usize,
    children: Option<(usize, usize)>,
    assoc: Option<Box<Level>>,
}

impl RangeTree {
    pub fn build(d: usize, points: Vec<Vec<f64>>) -> Result<Self> {
        if d == 0 {
            return Err(invalid("range tree dimension must be positive"));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != d {
                return Err(invalid(format!("point {i} has dimension {} != {d}", p.len())));
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(invalid(format!("point {i} has a non-finite coordinate")));
            }
        }
        if points.len() > u32::MAX as usize {
            return Err(invalid("too many points"));
        }
        let n = points.len();
        let mut tree = Self { d, points, alive: vec![true; n], live: n, built_with: n, root: None };
        tree.rebuild();
        Ok(tree)
    }

    fn rebuild(&mut self) {
        let ids: Vec<u32> = (0..self.points.len() as u32).filter(|&i| self.alive[i as usize]).collect();
        self.built_with = ids.len();
        self.root = (!ids.is_empty()).then(|| Level::build(&self.points, self.d, 0, ids));
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of live points.
    pub fn len(&self) -> usize {
        self.live
    }

    pub fn is_empty(&self) -> bool {
        self.live == 0
    }

    pub fn is_live(&self, id: usize) -> bool {
        self.alive.get(id).copied().unwrap_or(false)
    }

    pub fn point(&self, id: usize) -> &[f64] {
        &self.points[id]
    }

    /// Live points in the closed box `[lo, hi]`.
    pub fn count(&self, lo: &[f64], hi: &[f64]) -> usize {
        match &self.root {
            Some(root) if self.valid_box(lo, hi) => root.count(self, lo, hi),
            _ => 0,
        }
    }

    /// Ids of the live points in the closed box `[lo, hi]`, ascending.
    pub fn report(&self, lo: &[f64], hi: &[f64]) -> Vec<usize> {
        let mut out = Vec::new();
        if let Some(root) = &self.root {
            if self.valid_box(lo, hi) {
                root.report(self, lo, hi, &mut out);
            }
        }
        out.sort_unstable();
        out
    }

    /// Delete points by id. Deleting a dead point is a no-op.
    pub fn delete(&mut self, ids: &[usize]) -> Result<()> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.points.len()) {
            return Err(Error::UnknownId(bad));
        }
        for &id in ids {
            if !self.alive[id] {
                continue;
            }
            self.alive[id] = false;
            self.live -= 1;
            if let Some(root) = self.root.as_mut() {
                root.remove(&self.points, id as u32);
            }
        }
        if 2 * self.live <= self.built_with && self.built_with > 0 {
            self.rebuild();
        }
        Ok(())
    }

    fn valid_box(&self, lo: &[f64], hi: &[f64]) -> bool {
        lo.len() == self.d && hi.len() == self.d && lo.iter().zip(hi).all(|(a, b)| a <= b)
    }

    fn inside(&self, id: u32, lo: &[f64], hi: &[f64]) -> bool {
        let p = &self.points[id as usize];
        self.alive[id as usize] && p.iter().zip(lo.iter().zip(hi)).all(|(x, (a, b))| a <= x && x <= b)
    }
}

impl Level {
    fn build(points: &[Vec<f64>], d: usize, dim: usize, mut ids: Vec<u32>) -> Self {
        ids.sort_by(|&a, &b| points[a as usize][dim].total_cmp(&points[b as usize][dim]).then(a.cmp(&b)));
        let keys: Vec<f64> = ids.iter().map(|&i| points[i as usize][dim]).collect();
        let kind = if dim + 1 == d {
            let mut fenwick = vec![0i32; ids.len() + 1];
            for i in 1..=ids.len() {
                fenwick[i] += 1;
                let j = i + (i & i.wrapping_neg());
                if j <= ids.len() {
                    fenwick[j] += fenwick[i];
                }
            }
            Kind::Last { fenwick }
        } else {
            let mut nodes = Vec::new();
            Self::build_nodes(points, d, dim, &ids, 0, ids.len(), &mut nodes);
            Kind::Tree { nodes }
        };
        Self { dim, keys, ids, kind }
    }

    fn build_nodes(
        points: &[Vec<f64>],
        d: usize,
        dim: usize,
        ids: &[u32],
        lo: usize,
        hi: usize,
        nodes: &mut Vec<Node>,
    ) -> usize {
        let at = nodes.len();
        nodes.push(Node { lo, hi, children: None, assoc: None });
        if hi - lo > BUCKET {
            nodes[at].assoc = Some(Box::new(Level::build(points, d, dim + 1, ids[lo..hi].to_vec())));
            let mid = lo + (hi - lo) / 2;
            let left = Self::build_nodes(points, d, dim, ids, lo, mid, nodes);
            let right = Self::build_nodes(points, d, dim, ids, mid, hi, nodes);
            nodes[at].children = Some((left, right));
        }
        at
    }

    fn span(&self, lo: f64, hi: f64) -> (usize, usize) {
        let l = self.keys.partition_point(|&k| k < lo);
        let r = self.keys.partition_point(|&k| k <= hi);
        (l, r.max(l))
    }

    fn position(&self, points: &[Vec<f64>], id: u32) -> usize {
        let key = points[id as usize][self.dim];
        let start = self.keys.partition_point(|&k| k < key);
        start + self.ids[start..].iter().position(|&x| x == id).expect("id present in level")
    }

    fn count(&self, tree: &RangeTree, lo: &[f64], hi: &[f64]) -> usize {
        let (l, r) = self.span(lo[self.dim], hi[self.dim]);
        if l >= r {
            return 0;
        }
        match &self.kind {
            Kind::Last { fenwick } => (prefix(fenwick, r) - prefix(fenwick, l)) as usize,
            Kind::Tree { nodes } => {
                let mut total = 0;
                self.visit(nodes, 0, l, r, &mut |node, a, b| match (&node.assoc, a == node.lo && b == node.hi) {
                    (Some(assoc), true) => total += assoc.count(tree, lo, hi),
                    _ => total += self.ids[a..b].iter().filter(|&&id| tree.inside(id, lo, hi)).count(),
                });
                total
            }
        }
    }

    fn report(&self, tree: &RangeTree, lo: &[f64], hi: &[f64], out: &mut Vec<usize>) {
        let (l, r) = self.span(lo[self.dim], hi[self.dim]);
        if l >= r {
            return;
        }
        match &self.kind {
            Kind::Last { .. } => out.extend(
                self.ids[l..r].iter().filter(|&&id| tree.inside(id, lo, hi)).map(|&id| id as usize),
            ),
            Kind::Tree { nodes } => self.visit(nodes, 0, l, r, &mut |node, a, b| {
                match (&node.assoc, a == node.lo && b == node.hi) {
                    (Some(assoc), true) => assoc.report(tree, lo, hi, out),
                    _ => out.extend(
                        self.ids[a..b].iter().filter(|&&id| tree.inside(id, lo, hi)).map(|&id| id as usize),
                    ),
                }
            }),
        }
    }

    /// Canonical decomposition of positions `[l, r)`: calls `f(node, a, b)` on maximal covered
    /// nodes and on the partially covered leaves.
    fn visit(&self, nodes: &[Node], at: usize, l: usize, r: usize, f: &mut impl FnMut(&Node, usize, usize)) {
        let node = &nodes[at];
        let a = node.lo.max(l);
        let b = node.hi.min(r);
        if a >= b {
            return;
        }
        match node.children {
            Some((left, right)) if !(a == node.lo && b == node.hi) => {
                self.visit(nodes, left, l, r, f);
                self.visit(nodes, right, l, r, f);
            }
            _ => f(node, a, b),
        }
    }

    fn remove(&mut self, points: &[Vec<f64>], id: u32) {
        let pos = self.position(points, id);
        match &mut self.kind {
            Kind::Last { fenwick } => {
                let mut i = pos + 1;
                while i < fenwick.len() {
                    fenwick[i] -= 1;
                    i += i & i.wrapping_neg();
                }
            }
            Kind::Tree { nodes } => {
                let mut at = 0;
                loop {
                    if let Some(assoc) = nodes[at].assoc.as_mut() {
                        assoc.remove(points, id);
                    }
                    match nodes[at].children {
                        Some((left, right)) => at = if pos < nodes[left].hi { left } else { right },
                        None => break,
                    }
                }
            }
        }
    }
}

fn prefix(fenwick: &[i32], n: usize) -> i64 {
    let mut i = n;
    let mut s = 0i64;
    while i > 0 {
        s += fenwick[i] as i64;
        i -= i & i.wrapping_neg();
    }
    s
}
