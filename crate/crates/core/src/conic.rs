//! Power-cone programs `min sum_j rho_j^p` under linear inequalities.
//!
//! Each `rho_j` gets an epigraph variable `t_j` with `(t_j, 1, rho_j)` in the
//! power cone of exponent `1/p`, so `t_j >= |rho_j|^p`. Solved by Clarabel.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

/// Variables are `rho_0..rho_{n_rho}` followed by `n_free` unconstrained ones.
pub(crate) struct PowerProgram {
    n_rho: usize,
    n_free: usize,
    entries: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
}

pub(crate) struct PowerSolution {
    pub rho: Vec<f64>,
    /// Multipliers of the inequality rows, in insertion order.
    pub multipliers: Vec<f64>,
    pub dual_objective: f64,
    pub iterations: usize,
}

impl PowerProgram {
    pub fn new(n_rho: usize, n_free: usize) -> Self {
        Self { n_rho, n_free, entries: Vec::new(), rhs: Vec::new() }
    }

    pub fn free(&self, j: usize) -> usize {
        self.n_rho + j
    }

    /// Adds `sum coeff * x <= b`.
    pub fn add_le(&mut self, coeffs: &[(usize, f64)], b: f64) {
        let row = self.rhs.len();
        for &(col, v) in coeffs {
            self.entries.push((row, col, v));
        }
        self.rhs.push(b);
    }

    pub fn solve(mut self, p: f64) -> Option<PowerSolution> {
        let k = self.rhs.len();
        let m = self.n_rho;
        let cols = m + self.n_free + m;
        for j in 0..m {
            // s = (t_j, 1, rho_j): rows k+3j (t), k+3j+1 (constant), k+3j+2 (rho)
            self.entries.push((k + 3 * j, m + self.n_free + j, -1.0));
            self.entries.push((k + 3 * j + 2, j, -1.0));
        }
        self.entries.sort_unstable_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        let mut colptr = vec![0usize; cols + 1];
        let mut rowval = Vec::with_capacity(self.entries.len());
        let mut nzval = Vec::with_capacity(self.entries.len());
        for &(r, c, v) in &self.entries {
            colptr[c + 1] += 1;
            rowval.push(r);
            nzval.push(v);
        }
        for c in 0..cols {
            colptr[c + 1] += colptr[c];
        }
        let a = CscMatrix::new(k + 3 * m, cols, colptr, rowval, nzval);
        let pmat = CscMatrix::zeros((cols, cols));
        let mut q = vec![0.0; cols];
        q[m + self.n_free..].iter_mut().for_each(|x| *x = 1.0);
        let mut b = self.rhs;
        for _ in 0..m {
            b.extend_from_slice(&[0.0, 1.0, 0.0]);
        }
        let mut cones = Vec::with_capacity(m + 1);
        if k > 0 {
            cones.push(SupportedConeT::NonnegativeConeT(k));
        }
        cones.extend(std::iter::repeat(SupportedConeT::PowerConeT(1.0 / p)).take(m));
        let settings = DefaultSettings {
            verbose: false,
            max_iter: 300,
            tol_gap_abs: 1e-11,
            tol_gap_rel: 1e-11,
            tol_feas: 1e-11,
            ..DefaultSettings::default()
        };
        let mut solver = DefaultSolver::new(&pmat, &q, &a, &b, &cones, settings).ok()?;
        solver.solve();
        let sol = &solver.solution;
        if !matches!(sol.status, SolverStatus::Solved | SolverStatus::AlmostSolved) {
            return None;
        }
        Some(PowerSolution {
            rho: sol.x[..m].iter().map(|&r| r.max(0.0)).collect(),
            multipliers: sol.z[..k].iter().map(|&z| z.max(0.0)).collect(),
            dual_objective: sol.obj_val_dual,
            iterations: sol.iterations as usize,
        })
    }
}
