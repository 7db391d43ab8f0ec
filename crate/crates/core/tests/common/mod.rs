//! Independent oracles shared by the integration tests.
//!
//! Nothing here calls the solvers under test: paths are enumerated by plain
//! DFS, the full convex program is solved by a dense log-barrier Newton
//! method, and gasket resistances come from Schur complements of the
//! graph Laplacian built from scratch.

#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use fraclab_core::CellNetwork;
use nalgebra::{DMatrix, DVector};

/// Every simple path starting in `sources` and ending at its first target cell.
pub fn simple_paths(net: &dyn CellNetwork, sources: &[u32], targets: &[u32]) -> Vec<Vec<u32>> {
    let target: HashSet<u32> = targets.iter().copied().collect();
    let mut out = Vec::new();
    let mut on_path = vec![false; net.cell_count()];
    fn dfs(
        net: &dyn CellNetwork,
        target: &HashSet<u32>,
        path: &mut Vec<u32>,
        on_path: &mut [bool],
        out: &mut Vec<Vec<u32>>,
    ) {
        let last = *path.last().expect("non-empty");
        if target.contains(&last) {
            out.push(path.clone());
            return;
        }
        for &n in net.neighbors(last as usize) {
            if !on_path[n as usize] {
                on_path[n as usize] = true;
                path.push(n);
                dfs(net, target, path, on_path, out);
                path.pop();
                on_path[n as usize] = false;
            }
        }
    }
    for &s in sources {
        on_path[s as usize] = true;
        let mut path = vec![s];
        dfs(net, &target, &mut path, &mut on_path, &mut out);
        on_path[s as usize] = false;
    }
    out
}

/// `min sum_c rho_c^p` subject to `sum_{c in path, chargeable} rho_c >= 1` for every path.
///
/// Log-barrier interior point method with damped Newton steps on a dense
/// Hessian. Returns `(value, rho)`; the value is accurate to about `1e-12`
/// relative. Paths without a chargeable cell make the problem infeasible and
/// panic.
pub fn barrier_modulus(cells: usize, chargeable: &[bool], paths: &[Vec<u32>], p: f64) -> (f64, Vec<f64>) {
    if paths.is_empty() {
        return (0.0, vec![0.0; cells]);
    }
    // variables: chargeable cells that lie on some path
    let mut index = HashMap::new();
    let mut vars = Vec::new();
    let rows: Vec<Vec<usize>> = paths
        .iter()
        .map(|path| {
            let mut row: Vec<usize> = path
                .iter()
                .filter(|&&c| chargeable[c as usize])
                .map(|&c| {
                    *index.entry(c).or_insert_with(|| {
                        vars.push(c);
                        vars.len() - 1
                    })
                })
                .collect();
            row.sort_unstable();
            row.dedup();
            assert!(!row.is_empty(), "path without chargeable cells");
            row
        })
        .collect();
    let n = vars.len();
    let m = rows.len();
    let mut x = vec![1.5f64; n];
    let slack = |x: &[f64], r: &[usize]| r.iter().map(|&j| x[j]).sum::<f64>() - 1.0;
    let phi = |x: &[f64], t: f64| -> f64 {
        if x.iter().any(|&v| v <= 0.0) {
            return f64::INFINITY;
        }
        let mut val = t * x.iter().map(|v| v.powf(p)).sum::<f64>() - x.iter().map(|v| v.ln()).sum::<f64>();
        for r in &rows {
            let s = slack(x, r);
            if s <= 0.0 {
                return f64::INFINITY;
            }
            val -= s.ln();
        }
        val
    };
    let mut t = 1.0;
    let barrier_terms = (m + n) as f64;
    loop {
        for _ in 0..200 {
            let mut g = DVector::zeros(n);
            let mut h = DMatrix::zeros(n, n);
            for j in 0..n {
                g[j] = t * p * x[j].powf(p - 1.0) - 1.0 / x[j];
                h[(j, j)] = t * p * (p - 1.0) * x[j].powf(p - 2.0) + 1.0 / (x[j] * x[j]);
            }
            for r in &rows {
                let s = slack(&x, r);
                for &a in r {
                    g[a] -= 1.0 / s;
                    for &b in r {
                        h[(a, b)] += 1.0 / (s * s);
                    }
                }
            }
            // symmetric diagonal scaling keeps the factorization stable when
            // barrier terms of vanishing variables dominate
            let d: DVector<f64> = h.diagonal().map(|v| 1.0 / v.sqrt());
            let hs = DMatrix::from_fn(n, n, |i, j| h[(i, j)] * d[i] * d[j]);
            let rhs = -g.component_mul(&d);
            // late in the path the scaled Hessian is singular to working
            // precision; pivoted LU still yields a usable descent direction
            let step_dir = match hs.clone().cholesky() {
                Some(chol) => chol.solve(&rhs),
                None => match hs.lu().solve(&rhs) {
                    Some(v) => v,
                    None => break,
                },
            };
            let dx = step_dir.component_mul(&d);
            let decrement = -g.dot(&dx);
            if decrement < 1e-20 * (1.0 + t) {
                break;
            }
            let base = phi(&x, t);
            let mut step = 1.0;
            loop {
                let trial: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, d)| a + step * d).collect();
                let v = phi(&trial, t);
                if v.is_finite() && v <= base - 0.25 * step * decrement {
                    x = trial;
                    break;
                }
                step *= 0.5;
                if step < 1e-16 {
                    break;
                }
            }
            if step < 1e-16 {
                break;
            }
        }
        // duality gap of the central point is at most terms / t
        let objective: f64 = x.iter().map(|v| v.powf(p)).sum();
        if barrier_terms / t < 1e-12 * objective {
            break;
        }
        t *= 6.0;
    }
    let mut rho = vec![0.0; cells];
    for (j, &c) in vars.iter().enumerate() {
        rho[c as usize] = x[j];
    }
    (x.iter().map(|v| v.powf(p)).sum(), rho)
}

/// Smallest triangles of the level-`n` gasket as node triples, built by
/// subdividing an integer triangle with side `2^n`. Also returns the node
/// count and the three outer corners.
pub fn gasket_triangles(level: u32) -> (usize, Vec<[usize; 3]>, [usize; 3]) {
    let side = 1i64 << level;
    let mut ids: HashMap<(i64, i64), usize> = HashMap::new();
    let id = |v: (i64, i64), ids: &mut HashMap<(i64, i64), usize>| {
        let k = ids.len();
        *ids.entry(v).or_insert(k)
    };
    // triangles as (corner, size) in (a, b) lattice coordinates
    let mut tris = vec![((0i64, 0i64), side)];
    for _ in 0..level {
        let mut next = Vec::new();
        for ((a, b), s) in tris {
            let h = s / 2;
            next.push(((a, b), h));
            next.push(((a + h, b), h));
            next.push(((a, b + h), h));
        }
        tris = next;
    }
    let out = tris
        .iter()
        .map(|((a, b), s)| {
            let v = [(*a, *b), (a + s, *b), (*a, b + s)];
            [id(v[0], &mut ids), id(v[1], &mut ids), id(v[2], &mut ids)]
        })
        .collect();
    let corners = [ids[&(0, 0)], ids[&(side, 0)], ids[&(0, side)]];
    (ids.len(), out, corners)
}

/// Vertices and edges of the level-`n` gasket junction network.
pub fn gasket_network(level: u32) -> (usize, Vec<(usize, usize)>, [usize; 3]) {
    let (nodes, tris, corners) = gasket_triangles(level);
    let mut edges: HashSet<(usize, usize)> = HashSet::new();
    for k in &tris {
        for (i, j) in [(0, 1), (1, 2), (0, 2)] {
            edges.insert((k[i].min(k[j]), k[i].max(k[j])));
        }
    }
    let mut edges: Vec<(usize, usize)> = edges.into_iter().collect();
    edges.sort_unstable();
    (nodes, edges, corners)
}

/// Harmonic extension of Dirichlet data on a unit-conductance network, by a
/// dense solve of the interior Laplacian block.
pub fn harmonic_extension(nodes: usize, edges: &[(usize, usize)], boundary: &[(usize, f64)]) -> Vec<f64> {
    let mut lap = DMatrix::<f64>::zeros(nodes, nodes);
    for &(u, v) in edges {
        lap[(u, u)] += 1.0;
        lap[(v, v)] += 1.0;
        lap[(u, v)] -= 1.0;
        lap[(v, u)] -= 1.0;
    }
    let mut f = vec![0.0; nodes];
    let mut fixed = vec![false; nodes];
    for &(v, x) in boundary {
        f[v] = x;
        fixed[v] = true;
    }
    let free: Vec<usize> = (0..nodes).filter(|&v| !fixed[v]).collect();
    let a = DMatrix::from_fn(free.len(), free.len(), |i, j| lap[(free[i], free[j])]);
    let b = DVector::from_fn(free.len(), |i, _| {
        -(0..nodes).filter(|&u| fixed[u]).map(|u| lap[(free[i], u)] * f[u]).sum::<f64>()
    });
    let x = a.lu().solve(&b).expect("interior block is invertible");
    for (i, &v) in free.iter().enumerate() {
        f[v] = x[i];
    }
    f
}

/// Effective conductance between node `a` and the node set `b` (unit edge
/// conductances), via the Schur complement of the Laplacian onto `{a} + b`.
pub fn effective_conductance(nodes: usize, edges: &[(usize, usize)], a: usize, b: &[usize]) -> f64 {
    let mut lap = DMatrix::<f64>::zeros(nodes, nodes);
    for &(u, v) in edges {
        lap[(u, u)] += 1.0;
        lap[(v, v)] += 1.0;
        lap[(u, v)] -= 1.0;
        lap[(v, u)] -= 1.0;
    }
    let mut keep = vec![a];
    keep.extend_from_slice(b);
    let elim: Vec<usize> = (0..nodes).filter(|v| !keep.contains(v)).collect();
    let pick = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |i, j| lap[(rows[i], cols[j])]);
    let kk = pick(&keep, &keep);
    let schur = if elim.is_empty() {
        kk
    } else {
        let ke = pick(&keep, &elim);
        let ee = pick(&elim, &elim);
        let ek = pick(&elim, &keep);
        kk - ke * ee.lu().solve(&ek).expect("interior block is invertible")
    };
    // grounding b at 0 and a at 1: conductance is the reduced diagonal entry
    schur[(0, 0)]
}

/// Independent p-energy `sum_edges c |f_u - f_v|^p`.
pub fn edge_energy(edges: &[(u32, u32)], f: &[f64], p: f64, c: f64) -> f64 {
    edges.iter().map(|&(a, b)| c * (f[a as usize] - f[b as usize]).abs().powf(p)).sum()
}

/// Total variation distance `1/2 sum |a_i - b_i|` after normalizing both.
pub fn tv(a: &[f64], b: &[f64]) -> f64 {
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    0.5 * a.iter().zip(b).map(|(x, y)| (x / sa - y / sb).abs()).sum::<f64>()
}
