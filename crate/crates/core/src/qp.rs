//! Dense dual active-set solver (Goldfarb-Idnani) for strictly convex QPs
//! with a diagonal Hessian:
//!
//! ```text
//! minimize   0.5 z' diag(g) z + c' z
//! subject to lower <= z <= upper,   a_j' z >= b_j
//! ```
//!
//! Rows are stored as a contiguous run of coefficients plus at most one
//! extra entry, which matches the structure of condensed shooting problems
//! (inputs up to a node, plus one slack column).

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// General inequality `a' z >= rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpRow {
    pub start: usize,
    pub coefs: Vec<f64>,
    pub extra: Option<(usize, f64)>,
    pub rhs: f64,
}

impl QpRow {
    pub fn dot(&self, z: &[f64]) -> f64 {
        let mut s = 0.0;
        for (k, a) in self.coefs.iter().enumerate() {
            s += a * z[self.start + k];
        }
        if let Some((k, a)) = self.extra {
            s += a * z[k];
        }
        s
    }

    fn norm(&self) -> f64 {
        let mut s: f64 = self.coefs.iter().map(|a| a * a).sum();
        if let Some((_, a)) = self.extra {
            s += a * a;
        }
        math::sqrt(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian_diag: Vec<f64>,
    pub linear: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<QpRow>,
}

impl QpProblem {
    pub fn new(n: usize) -> Self {
        Self {
            hessian_diag: vec![1.0; n],
            linear: vec![0.0; n],
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            rows: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.hessian_diag.len()
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        z.iter()
            .zip(&self.hessian_diag)
            .zip(&self.linear)
            .map(|((z, g), c)| 0.5 * g * z * z + c * z)
            .sum()
    }

    /// Largest constraint violation at `z`.
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.n() {
            worst = worst.max(self.lower[k] - z[k]).max(z[k] - self.upper[k]);
        }
        for row in &self.rows {
            worst = worst.max(row.rhs - row.dot(z));
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    /// Violation tolerance on normalized constraints.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    Infeasible,
    /// A violated constraint was linearly dependent on the active set.
    Degenerate,
    InvalidProblem,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    /// Active constraints as `(index, multiplier)`; indices `0..n` are lower
    /// bounds, `n..2n` upper bounds and `2n + j` general row `j`.
    pub active: Vec<(usize, f64)>,
}

/// Normal of constraint `idx` in `>=` form, accessed sparsely.
enum Normal<'a> {
    Unit(usize, f64),
    Row(&'a QpRow),
}

impl Normal<'_> {
    fn dot(&self, z: &[f64]) -> f64 {
        match self {
            Normal::Unit(k, s) => s * z[*k],
            Normal::Row(r) => r.dot(z),
        }
    }

    /// `out = J' a` for a column-major `n x n` matrix `J`.
    fn project(&self, j: &[f64], n: usize, out: &mut [f64]) {
        match self {
            Normal::Unit(k, s) => {
                for (col, o) in out.iter_mut().enumerate() {
                    *o = s * j[col * n + k];
                }
            }
            Normal::Row(r) => {
                for (col, o) in out.iter_mut().enumerate() {
                    let base = col * n;
                    let mut acc = 0.0;
                    for (i, a) in r.coefs.iter().enumerate() {
                        acc += a * j[base + r.start + i];
                    }
                    if let Some((k, a)) = r.extra {
                        acc += a * j[base + k];
                    }
                    *o = acc;
                }
            }
        }
    }
}

struct Solver<'a> {
    p: &'a QpProblem,
    n: usize,
    /// Column-major `n x n`.
    j: Vec<f64>,
    /// Column-major `n x n` upper triangle; column `k` belongs to active `k`.
    r: Vec<f64>,
    active: Vec<usize>,
    duals: Vec<f64>,
    is_active: Vec<bool>,
    norms: Vec<f64>,
}

impl<'a> Solver<'a> {
    fn normal(&self, idx: usize) -> Normal<'a> {
        let n = self.n;
        if idx < n {
            Normal::Unit(idx, 1.0)
        } else if idx < 2 * n {
            Normal::Unit(idx - n, -1.0)
        } else {
            Normal::Row(&self.p.rows[idx - 2 * n])
        }
    }

    fn rhs(&self, idx: usize) -> f64 {
        let n = self.n;
        if idx < n {
            self.p.lower[idx]
        } else if idx < 2 * n {
            -self.p.upper[idx - n]
        } else {
            self.p.rows[idx - 2 * n].rhs
        }
    }

    fn slack(&self, idx: usize, z: &[f64]) -> f64 {
        self.normal(idx).dot(z) - self.rhs(idx)
    }

    fn rotate_j_columns(&mut self, a: usize, b: usize, c: f64, s: f64) {
        let n = self.n;
        for k in 0..n {
            let x = self.j[a * n + k];
            let y = self.j[b * n + k];
            self.j[a * n + k] = c * x + s * y;
            self.j[b * n + k] = -s * x + c * y;
        }
    }

    /// Appends a constraint whose projected normal is `d = J' a`.
    fn add(&mut self, idx: usize, d: &mut [f64]) -> bool {
        let n = self.n;
        let q = self.active.len();
        for col in (q + 1..n).rev() {
            let (a, b) = (d[col - 1], d[col]);
            if b == 0.0 {
                continue;
            }
            let h = math::hypot(a, b);
            let (c, s) = (a / h, b / h);
            d[col - 1] = h;
            d[col] = 0.0;
            self.rotate_j_columns(col - 1, col, c, s);
        }
        let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if d[q].abs() <= 1e-12 * scale.max(1e-300) {
            return false;
        }
        for row in 0..=q {
            self.r[q * n + row] = d[row];
        }
        self.active.push(idx);
        self.is_active[idx] = true;
        true
    }

    /// Removes the active constraint at position `pos`.
    fn drop(&mut self, pos: usize) {
        let n = self.n;
        let q = self.active.len();
        let idx = self.active.remove(pos);
        self.duals.remove(pos);
        self.is_active[idx] = false;
        for col in pos..q - 1 {
            for row in 0..n {
                self.r[col * n + row] = self.r[(col + 1) * n + row];
            }
        }
        for row in 0..n {
            self.r[(q - 1) * n + row] = 0.0;
        }
        // Restore the upper-triangular shape column by column.
        for col in pos..q - 1 {
            let (a, b) = (self.r[col * n + col], self.r[col * n + col + 1]);
            if b == 0.0 {
                continue;
            }
            let h = math::hypot(a, b);
            let (c, s) = (a / h, b / h);
            for k in col..q - 1 {
                let x = self.r[k * n + col];
                let y = self.r[k * n + col + 1];
                self.r[k * n + col] = c * x + s * y;
                self.r[k * n + col + 1] = -s * x + c * y;
            }
            self.r[col * n + col + 1] = 0.0;
            self.rotate_j_columns(col, col + 1, c, s);
        }
    }
}

pub fn solve(problem: &QpProblem, settings: &QpSettings) -> QpSolution {
    let n = problem.n();
    let fail = |status| QpSolution {
        z: vec![0.0; n],
        status,
        iterations: 0,
        active: Vec::new(),
    };
    let shapes_ok = problem.linear.len() == n && problem.lower.len() == n && problem.upper.len() == n;
    if !shapes_ok
        || problem.hessian_diag.iter().any(|g| !(*g > 0.0) || !g.is_finite())
        || problem.rows.iter().any(|r| {
            r.start + r.coefs.len() > n || r.extra.is_some_and(|(k, _)| k >= n) || !r.rhs.is_finite()
        })
        || (0..n).any(|k| problem.lower[k] > problem.upper[k])
    {
        return fail(QpStatus::InvalidProblem);
    }

    let m = 2 * n + problem.rows.len();
    let mut norms = vec![1.0; m];
    for (j, row) in problem.rows.iter().enumerate() {
        norms[2 * n + j] = row.norm().max(1e-300);
    }
    // Start from the box-constrained minimizer, which is separable for a
    // diagonal Hessian. Clamped variables enter the active set directly;
    // with J a scaled permutation their columns come first and need no
    // rotations.
    let mut z = vec![0.0; n];
    let mut clamped = Vec::new();
    let mut free = Vec::new();
    for k in 0..n {
        let g = problem.hessian_diag[k];
        let c = problem.linear[k];
        let x = -c / g;
        if x < problem.lower[k] {
            z[k] = problem.lower[k];
            clamped.push((k, g * z[k] + c));
        } else if x > problem.upper[k] {
            z[k] = problem.upper[k];
            clamped.push((n + k, -(g * z[k] + c)));
        } else {
            z[k] = x;
            free.push(k);
        }
    }
    let mut j = vec![0.0; n * n];
    let mut r = vec![0.0; n * n];
    let mut active = Vec::with_capacity(n);
    let mut duals = Vec::with_capacity(n);
    let mut is_active = vec![false; m];
    for (col, &(idx, lambda)) in clamped.iter().enumerate() {
        let (k, sign) = if idx < n { (idx, 1.0) } else { (idx - n, -1.0) };
        let scale = 1.0 / math::sqrt(problem.hessian_diag[k]);
        j[col * n + k] = scale;
        r[col * n + col] = sign * scale;
        active.push(idx);
        duals.push(lambda);
        is_active[idx] = true;
    }
    for (offset, &k) in free.iter().enumerate() {
        let col = clamped.len() + offset;
        j[col * n + k] = 1.0 / math::sqrt(problem.hessian_diag[k]);
    }
    let mut s = Solver {
        p: problem,
        n,
        j,
        r,
        active,
        duals,
        is_active,
        norms,
    };
    let mut d = vec![0.0; n];
    let mut step = vec![0.0; n];
    let mut rr = vec![0.0; n];
    let mut iterations = 0;

    let finish = |s: &Solver, z: Vec<f64>, status, iterations| QpSolution {
        z,
        status,
        iterations,
        active: s.active.iter().copied().zip(s.duals.iter().copied()).collect(),
    };

    loop {
        // Most violated constraint, measured in normalized units.
        let mut worst = -settings.tolerance;
        let mut chosen = None;
        for idx in 0..m {
            if s.is_active[idx] {
                continue;
            }
            let b = s.rhs(idx);
            if b == f64::NEG_INFINITY {
                continue;
            }
            let v = (s.normal(idx).dot(&z) - b) / s.norms[idx];
            if v < worst {
                worst = v;
                chosen = Some(idx);
            }
        }
        let Some(p) = chosen else {
            return finish(&s, z, QpStatus::Optimal, iterations);
        };
        let mut dual_p = 0.0;
        let mut slack_p = s.slack(p, &z);

        loop {
            iterations += 1;
            if iterations > settings.max_iterations {
                return finish(&s, z, QpStatus::MaxIterations, iterations);
            }
            let q = s.active.len();
            let np = s.normal(p);
            np.project(&s.j, n, &mut d);
            // Primal direction z = J2 d2.
            step.iter_mut().for_each(|v| *v = 0.0);
            for col in q..n {
                let dc = d[col];
                if dc == 0.0 {
                    continue;
                }
                let base = col * n;
                for (k, st) in step.iter_mut().enumerate() {
                    *st += s.j[base + k] * dc;
                }
            }
            // Dual direction r = R^-1 d1.
            for row in (0..q).rev() {
                let mut acc = d[row];
                for col in row + 1..q {
                    acc -= s.r[col * n + row] * rr[col];
                }
                rr[row] = acc / s.r[row * n + row];
            }
            let mut t1 = f64::INFINITY;
            let mut blocking = None;
            for k in 0..q {
                if rr[k] > 0.0 {
                    let ratio = s.duals[k] / rr[k];
                    if ratio < t1 {
                        t1 = ratio;
                        blocking = Some(k);
                    }
                }
            }
            let curvature = np.dot(&step);
            let step_norm = step.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let t2 = if step_norm > 1e-300 && curvature > 1e-14 * s.norms[p] * step_norm {
                -slack_p / curvature
            } else {
                f64::INFINITY
            };
            if t1 == f64::INFINITY && t2 == f64::INFINITY {
                return finish(&s, z, QpStatus::Infeasible, iterations);
            }
            if t2 == f64::INFINITY {
                for k in 0..q {
                    s.duals[k] -= t1 * rr[k];
                }
                dual_p += t1;
                s.drop(blocking.expect("finite t1 has a blocking constraint"));
                continue;
            }
            let t = t1.min(t2);
            for (zk, st) in z.iter_mut().zip(&step) {
                *zk += t * st;
            }
            for k in 0..q {
                s.duals[k] -= t * rr[k];
            }
            dual_p += t;
            if t2 <= t1 {
                if !s.add(p, &mut d) {
                    return finish(&s, z, QpStatus::Degenerate, iterations);
                }
                s.duals.push(dual_p);
                break;
            }
            s.drop(blocking.expect("finite t1 has a blocking constraint"));
            slack_p = s.slack(p, &z);
            if slack_p >= 0.0 {
                // The step made p feasible without activating it.
                break;
            }
        }
    }
}
