//! 3-D kd-tree for exact k-nearest-neighbor queries.
//!
//! Built once over a point set; queries return exactly the same neighbor sets
//! as an exhaustive scan, with ties on distance broken by ascending point
//! index. Small inputs (n < 64) skip the tree and scan directly.

use std::cmp::Ordering;

const BRUTE_FORCE_LIMIT: usize = 64;
const LEAF_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Bounded worst-first pool of the k best (dist, index) pairs.
struct BestK {
    k: usize,
    heap: std::collections::BinaryHeap<Candidate>,
}

impl BestK {
    fn new(k: usize) -> Self {
        BestK {
            k,
            heap: std::collections::BinaryHeap::with_capacity(k + 1),
        }
    }

    fn offer(&mut self, dist2: f64, index: usize) {
        let c = Candidate { dist2, index };
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(worst) = self.heap.peek() {
            if c < *worst {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }

    /// Current worst kept distance, or infinity while underfull.
    fn bound(&self) -> f64 {
        if self.heap.len() < self.k {
            f64::INFINITY
        } else {
            self.heap.peek().map_or(f64::INFINITY, |c| c.dist2)
        }
    }

    fn into_sorted(self) -> Vec<Candidate> {
        let mut v = self.heap.into_vec();
        v.sort();
        v
    }
}

enum NodeKind {
    Leaf,
    Split { axis: usize, value: f64, left: usize, right: usize },
}

struct Node {
    kind: NodeKind,
    begin: usize,
    end: usize,
}

pub struct KdTree<'a> {
    points: &'a [[f64; 3]],
    order: Vec<usize>,
    nodes: Vec<Node>,
    brute_force: bool,
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [[f64; 3]]) -> Self {
        let order: Vec<usize> = (0..points.len()).collect();
        let mut tree = KdTree {
            points,
            order,
            nodes: Vec::new(),
            brute_force: points.len() < BRUTE_FORCE_LIMIT,
        };
        if !tree.brute_force {
            let n = tree.order.len();
            tree.split(0, n);
        }
        tree
    }

    fn split(&mut self, begin: usize, end: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node {
            kind: NodeKind::Leaf,
            begin,
            end,
        });
        if end - begin <= LEAF_SIZE {
            return id;
        }
        // Split on the axis with the widest extent; deterministic because the
        // comparator totally orders (coordinate, index) pairs.
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &p in &self.order[begin..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[p][a]);
                hi[a] = hi[a].max(self.points[p][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap();
        let mid = begin + (end - begin) / 2;
        let points = self.points;
        self.order[begin..end].select_nth_unstable_by(mid - begin, |&a, &b| {
            points[a][axis]
                .total_cmp(&points[b][axis])
                .then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        let left = self.split(begin, mid);
        let right = self.split(mid, end);
        self.nodes[id].kind = NodeKind::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// The k nearest stored points to `query`, optionally excluding one stored
    /// index (the query's own row when querying a cloud against itself).
    /// Returns (index, squared distance) pairs sorted by (distance, index).
    pub fn knn(&self, query: &[f64; 3], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let mut best = BestK::new(k);
        if self.brute_force {
            for (i, p) in self.points.iter().enumerate() {
                if Some(i) == exclude {
                    continue;
                }
                best.offer(dist2(query, p), i);
            }
        } else {
            self.search(0, query, exclude, &mut best);
        }
        best.into_sorted()
            .into_iter()
            .map(|c| (c.index, c.dist2))
            .collect()
    }

    fn search(&self, node: usize, query: &[f64; 3], exclude: Option<usize>, best: &mut BestK) {
        match self.nodes[node].kind {
            NodeKind::Leaf => {
                for &p in &self.order[self.nodes[node].begin..self.nodes[node].end] {
                    if Some(p) == exclude {
                        continue;
                    }
                    best.offer(dist2(query, &self.points[p]), p);
                }
            }
            NodeKind::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = query[axis] - value;
                let (near, far) = if delta < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, exclude, best);
                // Visit the far side on ties as well: an equidistant point
                // with a smaller index may still displace the current worst.
                if delta * delta <= best.bound() {
                    self.search(far, query, exclude, best);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn brute(points: &[[f64; 3]], q: &[f64; 3], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let mut all: Vec<Candidate> = points
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .map(|(i, p)| Candidate {
                dist2: dist2(q, p),
                index: i,
            })
            .collect();
        all.sort();
        all.truncate(k);
        all.into_iter().map(|c| (c.index, c.dist2)).collect()
    }

    #[test]
    fn matches_exhaustive_scan() {
        let mut rng = Rng::new(42);
        for trial in 0..20 {
            let n = 80 + trial * 13;
            let pts: Vec<[f64; 3]> = (0..n)
                .map(|_| [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)])
                .collect();
            let tree = KdTree::build(&pts);
            for qi in 0..n {
                let got = tree.knn(&pts[qi], 9, Some(qi));
                let want = brute(&pts, &pts[qi], 9, Some(qi));
                assert_eq!(got, want, "trial {trial} query {qi}");
            }
        }
    }

    #[test]
    fn tie_break_prefers_lower_index() {
        // Four corners of a unit square: from corner 0, corners 1 and 3 are
        // both at distance 1.
        let pts = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
        ];
        let tree = KdTree::build(&pts);
        let got = tree.knn(&pts[0], 3, None);
        let idx: Vec<usize> = got.iter().map(|&(i, _)| i).collect();
        assert_eq!(idx, vec![0, 1, 3]);
    }

    #[test]
    fn duplicated_coordinates_split_cleanly() {
        // Many identical coordinates along each axis stress the splitter.
        let mut pts = Vec::new();
        for x in 0..5 {
            for y in 0..5 {
                for z in 0..5 {
                    pts.push([x as f64, y as f64, z as f64]);
                }
            }
        }
        let tree = KdTree::build(&pts);
        let got = tree.knn(&[0.1, 0.1, 0.1], 7, None);
        let want = brute(&pts, &[0.1, 0.1, 0.1], 7, None);
        assert_eq!(got, want);
    }
}
