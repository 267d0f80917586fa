//! Graphlets: connected induced subgraphs of the CFG with `k` nodes, counted
//! per isomorphism class.
//!
//! Subsets are enumerated with the ESU scheme (each connected subset exactly
//! once). The class code is the minimum adjacency bitmask over all node
//! permutations, which is exact for the sizes supported here (k <= 5).

use std::collections::{BTreeSet, HashMap};

use super::{Family, FeatureVector};
use crate::model::Function;

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; k], &mut out);
    out
}

struct Canonicalizer {
    k: usize,
    perms: Vec<Vec<usize>>,
    cache: HashMap<u32, u32>,
}

impl Canonicalizer {
    fn new(k: usize) -> Self {
        Canonicalizer {
            k,
            perms: permutations(k),
            cache: HashMap::new(),
        }
    }

    /// `bits` has bit `i*k + j` set for the directed edge i -> j.
    fn code(&mut self, bits: u32) -> u32 {
        if let Some(&c) = self.cache.get(&bits) {
            return c;
        }
        let k = self.k;
        let edges: Vec<(usize, usize)> = (0..k * k)
            .filter(|b| bits >> b & 1 == 1)
            .map(|b| (b / k, b % k))
            .collect();
        let best = self
            .perms
            .iter()
            .map(|p| {
                edges
                    .iter()
                    .fold(0u32, |acc, &(i, j)| acc | 1 << (p[i] * k + p[j]))
            })
            .min()
            .unwrap_or(0);
        self.cache.insert(bits, best);
        best
    }
}

/// Canonical isomorphism-class code of a directed graph on `n <= 5` nodes.
/// Self-loops are part of the structure; parallel edges collapse.
pub fn canonical_code(n: usize, edges: &[(usize, usize)]) -> u32 {
    assert!(n <= 5, "canonical codes support at most 5 nodes");
    let bits = edges
        .iter()
        .fold(0u32, |acc, &(i, j)| acc | 1 << (i * n + j));
    Canonicalizer::new(n).code(bits)
}

/// Every `k`-node subset whose induced subgraph is connected in the given
/// undirected adjacency, each reported once with nodes in ascending order.
pub fn connected_subsets(neighbors: &[BTreeSet<usize>], k: usize) -> Vec<Vec<usize>> {
    fn extend(
        neighbors: &[BTreeSet<usize>],
        k: usize,
        root: usize,
        sub: &mut Vec<usize>,
        ext: Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if sub.len() == k {
            let mut s = sub.clone();
            s.sort_unstable();
            out.push(s);
            return;
        }
        let mut ext = ext;
        while let Some(w) = ext.pop() {
            let mut next = ext.clone();
            for &u in &neighbors[w] {
                if u > root
                    && !sub.contains(&u)
                    && !next.contains(&u)
                    && u != w
                    && !sub.iter().any(|&s| neighbors[s].contains(&u))
                {
                    next.push(u);
                }
            }
            sub.push(w);
            extend(neighbors, k, root, sub, next, out);
            sub.pop();
        }
    }

    let mut out = Vec::new();
    if k == 0 {
        return out;
    }
    for v in 0..neighbors.len() {
        let ext: Vec<usize> = neighbors[v].iter().copied().filter(|&u| u > v).collect();
        extend(neighbors, k, v, &mut vec![v], ext, &mut out);
    }
    out
}

pub fn extract_graphlets(function: &Function, k: usize) -> FeatureVector {
    assert!((2..=5).contains(&k), "graphlet size {k} outside 2..=5");
    let mut out = FeatureVector::new(function.name.clone());
    let adj = function.adjacency();
    let n = adj.len();
    if n < k {
        return out;
    }
    let mut undirected = vec![BTreeSet::new(); n];
    for (i, succ) in adj.iter().enumerate() {
        for &j in succ {
            if i != j {
                undirected[i].insert(j);
                undirected[j].insert(i);
            }
        }
    }
    let mut canon = Canonicalizer::new(k);
    for subset in connected_subsets(&undirected, k) {
        let mut bits = 0u32;
        for (a, &u) in subset.iter().enumerate() {
            for (b, &v) in subset.iter().enumerate() {
                if adj[u].contains(&v) {
                    bits |= 1 << (a * k + b);
                }
            }
        }
        out.bump(Family::Graphlet, format!("{k}:{:x}", canon.code(bits)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BasicBlock, EdgeKind, Instruction};

    fn cfg(n: usize, edges: &[(usize, usize)]) -> Function {
        let mut blocks: Vec<BasicBlock> = (0..n)
            .map(|i| BasicBlock::new(&format!("b{i}"), vec![Instruction::new(i as u64, "nop", vec![])]))
            .collect();
        for &(a, b) in edges {
            let kind = EdgeKind::Uncond;
            blocks[a] = blocks[a].clone().with_edge(&format!("b{b}"), kind);
        }
        Function::new("f", blocks)
    }

    fn brute_connected(neighbors: &[BTreeSet<usize>], k: usize) -> BTreeSet<Vec<usize>> {
        let n = neighbors.len();
        let mut out = BTreeSet::new();
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let nodes: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            let mut seen = vec![nodes[0]];
            let mut stack = vec![nodes[0]];
            while let Some(x) = stack.pop() {
                for &y in &neighbors[x] {
                    if nodes.contains(&y) && !seen.contains(&y) {
                        seen.push(y);
                        stack.push(y);
                    }
                }
            }
            if seen.len() == k {
                out.insert(nodes);
            }
        }
        out
    }

    #[test]
    fn four_cycle_triples() {
        // b0 -> b1 -> b2 -> b3 -> b0: every triple is a directed 3-path
        let f = cfg(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        let v = extract_graphlets(&f, 3);
        assert_eq!(v.len(), 1);
        let path = canonical_code(3, &[(0, 1), (1, 2)]);
        assert_eq!(v.count(Family::Graphlet, &format!("3:{path:x}")), 4);
    }

    #[test]
    fn complete_triangle() {
        let all: Vec<(usize, usize)> = (0..3)
            .flat_map(|i| (0..3).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        let v = extract_graphlets(&cfg(3, &all), 3);
        assert_eq!(v.len(), 1);
        assert_eq!(v.total(), 1);
    }

    #[test]
    fn too_few_nodes() {
        assert!(extract_graphlets(&cfg(1, &[]), 2).is_empty());
    }

    #[test]
    fn esu_matches_subset_enumeration() {
        let edges = [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5), (1, 5), (5, 6)];
        let mut nb = vec![BTreeSet::new(); 7];
        for (a, b) in edges {
            nb[a].insert(b);
            nb[b].insert(a);
        }
        for k in 1..=5 {
            let got: Vec<Vec<usize>> = connected_subsets(&nb, k);
            let set: BTreeSet<Vec<usize>> = got.iter().cloned().collect();
            assert_eq!(set.len(), got.len(), "duplicates at k={k}");
            assert_eq!(set, brute_connected(&nb, k), "k={k}");
        }
    }

    #[test]
    fn code_ignores_labels_and_parallel_edges() {
        let mut f = cfg(3, &[(0, 1), (1, 2)]);
        f.blocks[0] = f.blocks[0].clone().with_edge("b1", EdgeKind::True);
        let g = cfg(3, &[(0, 1), (1, 2)]);
        assert_eq!(extract_graphlets(&f, 3), extract_graphlets(&g, 3));
    }
}
