//! Random-projection forest for approximate nearest neighbor search.
//!
//! Each tree splits its points recursively by the hyperplane halfway
//! between two randomly chosen points until a node holds at most
//! `leaf_size` points. A query walks all trees at once, best-first by the
//! smallest margin to any hyperplane crossed so far, until it has gathered
//! enough candidates; the candidates are then ranked exactly.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const SPLIT_ATTEMPTS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(Vec<u32>),
    Split {
        normal: Vec<f32>,
        offset: f32,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
    root: u32,
}

/// Points are read through this view while building; the forest itself
/// stores only tree structure.
pub(crate) struct Points<'a> {
    pub data: &'a [f32],
    pub dim: usize,
}

impl Points<'_> {
    fn get(&self, i: u32) -> &[f32] {
        let i = i as usize;
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn margin(normal: &[f32], offset: f32, x: &[f32]) -> f64 {
    let d: f64 = normal
        .iter()
        .zip(x)
        .map(|(&n, &v)| f64::from(n) * f64::from(v))
        .sum();
    d - f64::from(offset)
}

struct Builder<'a> {
    points: &'a Points<'a>,
    leaf_size: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

/// `(normal, offset, left, right)`
type Split = (Vec<f32>, f32, Vec<u32>, Vec<u32>);

impl Builder<'_> {
    fn hyperplane(&mut self, items: &[u32]) -> Option<Split> {
        let dim = self.points.dim;
        for _ in 0..SPLIT_ATTEMPTS {
            let a = items[self.rng.random_range(0..items.len())];
            let b = items[self.rng.random_range(0..items.len())];
            let (pa, pb) = (self.points.get(a), self.points.get(b));
            if pa == pb {
                continue;
            }
            let normal: Vec<f32> = pa.iter().zip(pb).map(|(x, y)| x - y).collect();
            let offset: f64 = (0..dim)
                .map(|i| f64::from(normal[i]) * 0.5 * (f64::from(pa[i]) + f64::from(pb[i])))
                .sum();
            let offset = offset as f32;
            let (left, right): (Vec<u32>, Vec<u32>) = items
                .iter()
                .partition(|&&i| margin(&normal, offset, self.points.get(i)) <= 0.0);
            if !left.is_empty() && !right.is_empty() {
                return Some((normal, offset, left, right));
            }
        }
        None
    }

    fn build(&mut self, mut items: Vec<u32>) -> u32 {
        if items.len() <= self.leaf_size {
            self.nodes.push(Node::Leaf(items));
            return (self.nodes.len() - 1) as u32;
        }
        let (normal, offset, left, right) = match self.hyperplane(&items) {
            Some(split) => split,
            None => {
                // Degenerate (e.g. duplicate points): split arbitrarily with a
                // zero normal so queries explore both halves equally.
                items.shuffle(&mut self.rng);
                let right = items.split_off(items.len() / 2);
                (vec![0.0; self.points.dim], 0.0, items, right)
            }
        };
        let left = self.build(left);
        let right = self.build(right);
        self.nodes.push(Node::Split {
            normal,
            offset,
            left,
            right,
        });
        (self.nodes.len() - 1) as u32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
    len: usize,
}

impl Forest {
    /// Builds `trees` trees, tree `i` seeded from `seed` on stream `i`.
    pub(crate) fn build(points: &Points<'_>, trees: usize, leaf_size: usize, seed: u64) -> Self {
        let len = points.data.len() / points.dim;
        let trees = (0..trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64);
                let mut builder = Builder {
                    points,
                    leaf_size: leaf_size.max(1),
                    rng,
                    nodes: Vec::new(),
                };
                let root = builder.build((0..len as u32).collect());
                Tree {
                    nodes: builder.nodes,
                    root,
                }
            })
            .collect();
        Self { trees, len }
    }

    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    /// Candidate positions for `query`, gathered best-first across all
    /// trees until at least `budget` distinct points are found (or the
    /// forest is exhausted). Order is unspecified.
    pub fn candidates(&self, query: &[f32], budget: usize) -> Vec<u32> {
        #[derive(PartialEq)]
        struct Item(f64, u32, u32);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Item {
            fn cmp(&self, other: &Self) -> Ordering {
                self.0
                    .total_cmp(&other.0)
                    .then_with(|| other.1.cmp(&self.1))
                    .then_with(|| other.2.cmp(&self.2))
            }
        }

        let mut heap: BinaryHeap<Item> = self
            .trees
            .iter()
            .enumerate()
            .map(|(t, tree)| Item(f64::INFINITY, t as u32, tree.root))
            .collect();
        let mut seen = vec![false; self.len];
        let mut out = Vec::new();
        while let Some(Item(priority, t, node)) = heap.pop() {
            if out.len() >= budget {
                break;
            }
            match &self.trees[t as usize].nodes[node as usize] {
                Node::Leaf(items) => {
                    for &i in items {
                        if !std::mem::replace(&mut seen[i as usize], true) {
                            out.push(i);
                        }
                    }
                }
                Node::Split {
                    normal,
                    offset,
                    left,
                    right,
                } => {
                    let m = margin(normal, *offset, query);
                    heap.push(Item(priority.min(m), t, *right));
                    heap.push(Item(priority.min(-m), t, *left));
                }
            }
        }
        out
    }

    /// Stable byte encoding of the tree structure.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.trees.len() as u32).to_le_bytes());
        for tree in &self.trees {
            out.extend_from_slice(&tree.root.to_le_bytes());
            out.extend_from_slice(&(tree.nodes.len() as u32).to_le_bytes());
            for node in &tree.nodes {
                match node {
                    Node::Leaf(items) => {
                        out.push(0);
                        out.extend_from_slice(&(items.len() as u32).to_le_bytes());
                        items
                            .iter()
                            .for_each(|i| out.extend_from_slice(&i.to_le_bytes()));
                    }
                    Node::Split {
                        normal,
                        offset,
                        left,
                        right,
                    } => {
                        out.push(1);
                        normal
                            .iter()
                            .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
                        out.extend_from_slice(&offset.to_le_bytes());
                        out.extend_from_slice(&left.to_le_bytes());
                        out.extend_from_slice(&right.to_le_bytes());
                    }
                }
            }
        }
        out
    }
}
