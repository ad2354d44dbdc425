//! Test-only oracles, written independently of the library internals.

#![allow(dead_code)]

use std::collections::VecDeque;

use csst_core::{Rational, SimplicialMetricTree};
use num::{One, Zero};

/// A point `x + iy` with rational coordinates.
pub type C = (Rational, Rational);

pub fn r(p: i128, q: i128) -> Rational {
    Rational::new(p, q)
}

/// `g_1`, `g_2`, `g_3` straight from their formulas.
pub fn g(k: u8, (x, y): C) -> C {
    let h = r(1, 2);
    match k {
        1 => (x * h - h, y * h),
        2 => (x * h + h, -y * h),
        // (i/2)·conj(z) + i/2 = (i/2)(x - iy) + i/2 = y/2 + i(x/2 + 1/2)
        3 => (y * h, x * h + h),
        _ => unreachable!(),
    }
}

pub fn g_word(w: &[u8], z: C) -> C {
    w.iter().rev().fold(z, |p, &k| g(k, p))
}

pub fn pt(x: i128, y: i128) -> C {
    (Rational::from_integer(x), Rational::from_integer(y))
}

pub fn dist_sq(a: &C, b: &C) -> Rational {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    dx * dx + dy * dy
}

pub fn words_of_len(n: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|w| {
                (1..=3u8).map(move |k| {
                    let mut v = w.clone();
                    v.push(k);
                    v
                })
            })
            .collect();
    }
    out
}

pub fn words_up_to(n: usize) -> Vec<Vec<u8>> {
    (0..=n).flat_map(words_of_len).collect()
}

pub fn word_str(w: &[u8]) -> String {
    w.iter().map(|k| char::from(b'0' + k)).collect()
}

/// Path lengths from `src` by breadth-first search over the edge list.
pub fn bfs_lengths(tree: &SimplicialMetricTree, src: usize) -> Vec<Rational> {
    let n = tree.vertex_count();
    let mut adj = vec![Vec::new(); n];
    for e in 0..tree.edge_count() {
        let (a, b) = tree.edge(e);
        adj[a].push((b, tree.edge_length(e)));
        adj[b].push((a, tree.edge_length(e)));
    }
    let mut d = vec![None; n];
    d[src] = Some(Rational::zero());
    let mut q = VecDeque::from([src]);
    while let Some(v) = q.pop_front() {
        let dv = d[v].unwrap();
        for &(w, l) in &adj[v] {
            if d[w].is_none() {
                d[w] = Some(dv + l);
                q.push_back(w);
            }
        }
    }
    d.into_iter().map(|x| x.expect("connected")).collect()
}

/// Components of the tree with vertex `v` removed, as vertex sets.
pub fn branches(tree: &SimplicialMetricTree, v: usize) -> Vec<Vec<usize>> {
    let n = tree.vertex_count();
    let mut adj = vec![Vec::new(); n];
    for e in 0..tree.edge_count() {
        let (a, b) = tree.edge(e);
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut out = Vec::new();
    for &s in &adj[v] {
        let mut seen = vec![false; n];
        seen[v] = true;
        seen[s] = true;
        let mut comp = vec![v, s];
        let mut stack = vec![s];
        while let Some(x) = stack.pop() {
            for &y in &adj[x] {
                if !seen[y] {
                    seen[y] = true;
                    comp.push(y);
                    stack.push(y);
                }
            }
        }
        out.push(comp);
    }
    out
}

pub fn is_one(x: &Rational) -> bool {
    x.is_one()
}
