//! Test-side oracles, written independently of the library code they check.

#![allow(dead_code)]

use std::collections::BTreeMap;

fn pairs(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index from the contingency table.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| pairs(n)).sum();
    let sa: f64 = rows.values().map(|&n| pairs(n)).sum();
    let sb: f64 = cols.values().map(|&n| pairs(n)).sum();
    let expected = sa * sb / pairs(a.len() as u64);
    let max = 0.5 * (sa + sb);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Every simple path from `from` to `to` over `(tail, head)` arcs, as link
/// index sequences, by depth-first search.
pub fn all_simple_paths(arcs: &[(usize, usize)], from: usize, to: usize) -> Vec<Vec<usize>> {
    fn walk(
        arcs: &[(usize, usize)],
        at: usize,
        to: usize,
        seen: &mut Vec<usize>,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if at == to {
            out.push(cur.clone());
            return;
        }
        for (i, &(t, h)) in arcs.iter().enumerate() {
            if t == at && !seen.contains(&h) {
                seen.push(h);
                cur.push(i);
                walk(arcs, h, to, seen, cur, out);
                cur.pop();
                seen.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(arcs, from, to, &mut vec![from], &mut Vec::new(), &mut out);
    out
}

/// `sum_p mask(r, p) * rho[r][p] * pr[p][c]` with plain loops over dense
/// row-major arrays.
pub fn dense_triple_product(
    rows: usize,
    mids: usize,
    cols: usize,
    mask: impl Fn(usize, usize) -> bool,
    rho: &[f64],
    pr: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for p in 0..mids {
            if !mask(r, p) {
                continue;
            }
            let w = rho[r * mids + p];
            if w == 0.0 {
                continue;
            }
            for c in 0..cols {
                out[r * cols + c] += w * pr[p * cols + c];
            }
        }
    }
    out
}

/// Logit share of the first of two alternatives.
pub fn binary_logit(theta: f64, c0: f64, c1: f64) -> f64 {
    1.0 / (1.0 + (-theta * (c1 - c0)).exp())
}
