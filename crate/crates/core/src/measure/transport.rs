//! Transport solvers for uniform empirical measures.
//!
//! Each solver takes a dense cost matrix between two sample lists with
//! uniform weights and returns the (estimated) optimal average cost.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Dense `rows x cols` costs, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::Usage(format!(
                "cost matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Average cost of the assignment `row i -> col perm[i]`. The selected
    /// costs are summed in ascending order, so assignments using the same
    /// multiset of costs give bitwise equal values.
    pub fn assignment_value(&self, perm: &[usize]) -> f64 {
        let mut picked: Vec<f64> = perm.iter().enumerate().map(|(i, &j)| self.get(i, j)).collect();
        picked.sort_by(f64::total_cmp);
        picked.iter().sum::<f64>() / perm.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportEstimate {
    pub value: f64,
    pub method: String,
    pub rows: usize,
    pub cols: usize,
    /// Entropic regularisation, if any.
    pub epsilon: Option<f64>,
    /// Upper bound on `value - exact optimum` (entropic: `epsilon ln min(n_a, n_b)`).
    pub bias_bound: Option<f64>,
    pub iterations: Option<usize>,
    /// Optimal assignment, exact method only.
    pub assignment: Option<Vec<usize>>,
}

pub trait TransportSolver: Send + Sync + fmt::Debug {
    fn name(&self) -> String;
    fn solve(&self, cost: &CostMatrix) -> Result<TransportEstimate>;
}

/// Balanced assignment by the shortest-augmenting-path Hungarian method with
/// dual potentials, `O(n^3)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactAssignment;

impl ExactAssignment {
    /// Returns `perm` with row `i` assigned to column `perm[i]`.
    pub fn assign(cost: &CostMatrix) -> Result<Vec<usize>> {
        if cost.rows != cost.cols {
            return Err(Error::Usage(format!(
                "exact assignment needs equal sample counts, got {} and {}",
                cost.rows, cost.cols
            )));
        }
        let n = cost.rows;
        // 1-based arrays; column 0 is the virtual start.
        let mut u = vec![0.0f64; n + 1];
        let mut v = vec![0.0f64; n + 1];
        let mut owner = vec![0usize; n + 1];
        let mut way = vec![0usize; n + 1];
        let mut minv = vec![0.0f64; n + 1];
        let mut used = vec![false; n + 1];
        for i in 1..=n {
            owner[0] = i;
            let mut j0 = 0usize;
            minv.fill(f64::INFINITY);
            used.fill(false);
            loop {
                used[j0] = true;
                let i0 = owner[j0];
                let mut delta = f64::INFINITY;
                let mut j1 = 0usize;
                let row = &cost.data[(i0 - 1) * n..i0 * n];
                for j in 1..=n {
                    if !used[j] {
                        let cur = row[j - 1] - u[i0] - v[j];
                        if cur < minv[j] {
                            minv[j] = cur;
                            way[j] = j0;
                        }
                        if minv[j] < delta {
                            delta = minv[j];
                            j1 = j;
                        }
                    }
                }
                if !delta.is_finite() {
                    return Err(Error::Usage("cost matrix contains non-finite entries".into()));
                }
                for j in 0..=n {
                    if used[j] {
                        u[owner[j]] += delta;
                        v[j] -= delta;
                    } else {
                        minv[j] -= delta;
                    }
                }
                j0 = j1;
                if owner[j0] == 0 {
                    break;
                }
            }
            loop {
                let j1 = way[j0];
                owner[j0] = owner[j1];
                j0 = j1;
                if j0 == 0 {
                    break;
                }
            }
        }
        let mut perm = vec![0usize; n];
        for j in 1..=n {
            perm[owner[j] - 1] = j - 1;
        }
        Ok(perm)
    }
}

impl TransportSolver for ExactAssignment {
    fn name(&self) -> String {
        "exact-assignment".into()
    }

    fn solve(&self, cost: &CostMatrix) -> Result<TransportEstimate> {
        let perm = Self::assign(cost)?;
        Ok(TransportEstimate {
            value: cost.assignment_value(&perm),
            method: self.name(),
            rows: cost.rows,
            cols: cost.cols,
            epsilon: None,
            bias_bound: None,
            iterations: None,
            assignment: Some(perm),
        })
    }
}

/// Log-domain Sinkhorn iterations for the entropically regularised problem.
///
/// The regularisation is annealed from the cost scale down to `epsilon`,
/// warm-starting the potentials at each stage. Reports the transport cost
/// `<P_eps, C>` of the final plan, which overestimates the exact optimum by
/// at most `epsilon ln min(n_a, n_b)` (up to the marginal tolerance).
#[derive(Debug, Clone, Copy)]
pub struct Entropic {
    pub epsilon: f64,
    /// Cap on the total number of Sinkhorn sweeps over all stages.
    pub max_iterations: usize,
    /// L1 tolerance on the row-marginal error at the final stage.
    pub tolerance: f64,
}

impl Default for Entropic {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            max_iterations: 20_000,
            tolerance: 1e-6,
        }
    }
}

fn log_sum_exp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + vals.map(|v| (v - m).exp()).sum::<f64>().ln()
}

struct Sinkhorn<'a> {
    cost: &'a CostMatrix,
    f: Vec<f64>,
    g: Vec<f64>,
    log_a: f64,
    log_b: f64,
}

impl Sinkhorn<'_> {
    #[inline]
    fn log_plan(&self, i: usize, j: usize, eps: f64) -> f64 {
        (self.f[i] + self.g[j] - self.cost.get(i, j)) / eps + self.log_a + self.log_b
    }

    /// One row and one column update; returns the row-marginal L1 error
    /// (column marginals are exact right after the column update).
    fn sweep(&mut self, eps: f64) -> f64 {
        let (na, nb) = (self.cost.rows, self.cost.cols);
        let data = &self.cost.data;
        let g = &self.g;
        let log_b = self.log_b;
        for (i, fi) in self.f.iter_mut().enumerate() {
            let row = &data[i * nb..(i + 1) * nb];
            *fi = -eps * log_sum_exp(row.iter().zip(g).map(|(c, gj)| (gj - c) / eps + log_b));
        }
        let f = &self.f;
        let log_a = self.log_a;
        for (j, gj) in self.g.iter_mut().enumerate() {
            *gj = -eps * log_sum_exp((0..na).map(|i| (f[i] - data[i * nb + j]) / eps + log_a));
        }
        (0..na)
            .map(|i| {
                let s: f64 = (0..nb).map(|j| self.log_plan(i, j, eps).exp()).sum();
                (s - self.log_a.exp()).abs()
            })
            .sum()
    }
}

impl TransportSolver for Entropic {
    fn name(&self) -> String {
        "entropic".into()
    }

    fn solve(&self, cost: &CostMatrix) -> Result<TransportEstimate> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("entropic epsilon must be positive, got {}", self.epsilon)));
        }
        if cost.data.iter().any(|c| !c.is_finite()) {
            return Err(Error::Usage("cost matrix contains non-finite entries".into()));
        }
        let (na, nb) = (cost.rows, cost.cols);
        let eps = self.epsilon;
        let mut s = Sinkhorn {
            cost,
            f: vec![0.0; na],
            g: vec![0.0; nb],
            log_a: -(na as f64).ln(),
            log_b: -(nb as f64).ln(),
        };
        let scale = cost.data.iter().fold(0.0f64, |m, &c| m.max(c.abs()));
        let mut stage_eps = scale.max(eps);
        let mut residual = f64::INFINITY;
        let mut iterations = 0;
        loop {
            let last = stage_eps <= eps;
            let tol = if last { self.tolerance } else { 1e-3 };
            loop {
                if iterations >= self.max_iterations {
                    return Err(Error::NotConverged {
                        method: "entropic",
                        iterations,
                        residual,
                    });
                }
                iterations += 1;
                residual = s.sweep(stage_eps);
                if residual <= tol {
                    break;
                }
            }
            if last {
                break;
            }
            stage_eps = (stage_eps * 0.5).max(eps);
        }
        let mut value = 0.0;
        for i in 0..na {
            for j in 0..nb {
                value += cost.get(i, j) * s.log_plan(i, j, eps).exp();
            }
        }
        Ok(TransportEstimate {
            value,
            method: self.name(),
            rows: na,
            cols: nb,
            epsilon: Some(eps),
            bias_bound: Some(eps * (na.min(nb) as f64).ln()),
            iterations: Some(iterations),
            assignment: None,
        })
    }
}

pub type SolverConstructor = fn() -> Box<dyn TransportSolver>;

/// Name -> transport solver.
#[derive(Clone)]
pub struct SolverRegistry {
    entries: BTreeMap<String, SolverConstructor>,
}

impl fmt::Debug for SolverRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

impl Default for SolverRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl SolverRegistry {
    pub fn with_builtins() -> Self {
        let mut entries: BTreeMap<String, SolverConstructor> = BTreeMap::new();
        entries.insert("exact-assignment".into(), || Box::new(ExactAssignment));
        entries.insert("entropic".into(), || Box::new(Entropic::default()));
        Self { entries }
    }

    pub fn register(&mut self, name: &str, ctor: SolverConstructor) {
        self.entries.insert(name.to_string(), ctor);
    }

    /// Looks up `name`; `entropic:<epsilon>` overrides the regularisation.
    pub fn get(&self, name: &str) -> Result<Box<dyn TransportSolver>> {
        if let Some(eps) = name.strip_prefix("entropic:") {
            let epsilon: f64 = eps
                .parse()
                .map_err(|_| Error::Config(format!("bad entropic epsilon in '{name}'")))?;
            return Ok(Box::new(Entropic {
                epsilon,
                ..Entropic::default()
            }));
        }
        self.entries.get(name).map(|c| c()).ok_or_else(|| {
            Error::Config(format!(
                "unknown distance method '{name}' (known: {})",
                self.entries.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}
