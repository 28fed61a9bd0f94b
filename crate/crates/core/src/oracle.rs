//! Exact optimal transport between small discrete measures.
//!
//! [`discrete_w2`] solves the Kantorovich problem with squared Euclidean
//! cost by the transportation simplex. Everything here is deterministic:
//! the starting basis, the pivot order and the tie breaking depend only on
//! the input.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gaussian::GaussianMeasure;
use crate::linalg::{psd_sqrt, SymMatrix};
use crate::random::standard_normal_vector;
use crate::tolerance::Tolerances;

/// Largest accepted `n * m` for [`discrete_w2`] (1024 x 1024).
pub const MAX_CELLS: usize = 1 << 20;

const WEIGHT_TOL: f64 = 1e-12;
const MARGINAL_TOL: f64 = 1e-10;

fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Finitely many weighted atoms in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    atoms: Vec<DVector<f64>>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptyInput("discrete measure has no atoms".into()));
        }
        if atoms.len() != weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        let d = atoms[0].len();
        for a in &atoms {
            if a.len() != d {
                return Err(Error::DimMismatch { left: d, right: a.len() });
            }
            if a.iter().any(|x| !x.is_finite()) {
                return Err(Error::BadParameter("atom coordinate is not finite".into()));
            }
        }
        for &w in &weights {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::NegativeInput { name: "weight", value: w });
            }
        }
        let total = compensated_sum(weights.iter().copied());
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::BadParameter(format!("weights sum to {total}, expected 1")));
        }
        Ok(DiscreteMeasure { atoms, weights })
    }

    /// Equal weights `1/n` on the given atoms.
    pub fn uniform(atoms: Vec<DVector<f64>>) -> Result<Self> {
        let n = atoms.len().max(1);
        let weights = vec![1.0 / n as f64; atoms.len()];
        Self::new(atoms, weights)
    }

    /// A single point mass.
    pub fn dirac(point: DVector<f64>) -> Self {
        DiscreteMeasure { atoms: vec![point], weights: vec![1.0] }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].len()
    }

    pub fn atoms(&self) -> &[DVector<f64>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mean and covariance `sum_i w_i (x_i - m)(x_i - m)^T`.
    pub fn moments(&self, tol: &Tolerances) -> Result<GaussianMeasure> {
        let d = self.dim();
        let mut mean = DVector::zeros(d);
        for (x, &w) in self.atoms.iter().zip(&self.weights) {
            mean.axpy(w, x, 1.0);
        }
        let mut cov = DMatrix::zeros(d, d);
        for (x, &w) in self.atoms.iter().zip(&self.weights) {
            let c = x - &mean;
            cov.ger(w, &c, &c, 1.0);
        }
        GaussianMeasure::new(mean, SymMatrix::symmetrized(cov), tol)
    }

    /// Sums the weights of atoms with exactly equal coordinates, keeping
    /// first-occurrence order.
    fn merged(atoms: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        let order = lex_order(&atoms);
        let mut owner = vec![0usize; atoms.len()];
        let mut k = 0;
        while k < order.len() {
            let head = order[k];
            let mut e = k;
            while e < order.len() && atoms[order[e]] == atoms[head] {
                owner[order[e]] = head;
                e += 1;
            }
            k = e;
        }
        let mut out_atoms = Vec::new();
        let mut out_weights = Vec::new();
        let mut slot = vec![usize::MAX; atoms.len()];
        for i in 0..atoms.len() {
            let h = owner[i];
            if slot[h] == usize::MAX {
                slot[h] = out_atoms.len();
                out_atoms.push(atoms[h].clone());
                out_weights.push(0.0);
            }
            out_weights[slot[h]] += weights[i];
        }
        let total = compensated_sum(out_weights.iter().copied());
        for w in &mut out_weights {
            *w /= total;
        }
        Self::new(out_atoms, out_weights)
    }
}

/// A transport plan between two discrete measures.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub plan: DMatrix<f64>,
    pub source: DiscreteMeasure,
    pub target: DiscreteMeasure,
}

impl Coupling {
    /// Validates shape, nonnegativity and both marginals (within 1e-10).
    pub fn new(plan: DMatrix<f64>, source: DiscreteMeasure, target: DiscreteMeasure) -> Result<Self> {
        if plan.nrows() != source.len() || plan.ncols() != target.len() {
            return Err(Error::ShapeMismatch(format!(
                "plan is {}x{} for measures with {} and {} atoms",
                plan.nrows(),
                plan.ncols(),
                source.len(),
                target.len()
            )));
        }
        if let Some(&v) = plan.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::NegativeInput { name: "plan entry", value: v });
        }
        for (i, &w) in source.weights.iter().enumerate() {
            let s = compensated_sum(plan.row(i).iter().copied());
            if (s - w).abs() > MARGINAL_TOL {
                return Err(Error::BadParameter(format!("plan row {i} sums to {s}, expected {w}")));
            }
        }
        for (j, &w) in target.weights.iter().enumerate() {
            let s = compensated_sum(plan.column(j).iter().copied());
            if (s - w).abs() > MARGINAL_TOL {
                return Err(Error::BadParameter(format!("plan column {j} sums to {s}, expected {w}")));
            }
        }
        Ok(Coupling { plan, source, target })
    }

    /// `(i, j, mass)` for every strictly positive plan entry, row-major.
    pub fn nonzeros(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.plan.nrows() {
            for j in 0..self.plan.ncols() {
                let v = self.plan[(i, j)];
                if v > 0.0 {
                    out.push((i, j, v));
                }
            }
        }
        out
    }

    /// `sum_ij pi_ij |x_i - y_j|^2`.
    pub fn cost(&self) -> f64 {
        compensated_sum(
            self.nonzeros()
                .into_iter()
                .map(|(i, j, v)| v * (&self.source.atoms[i] - &self.target.atoms[j]).norm_squared()),
        )
    }
}

/// Optimal transport solution: `w2` and an optimal plan.
#[derive(Debug, Clone)]
pub struct TransportSolution {
    pub w2: f64,
    pub objective: f64,
    pub coupling: Coupling,
    pub pivots: usize,
}

/// Entering-cell selection for [`discrete_w2_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PivotRule {
    /// Most negative reduced cost within a block of cells scanned
    /// cyclically.
    #[default]
    Block,
    /// Lowest-index cell with negative reduced cost (Bland).
    Bland,
}

/// A flow `real + eps * ε` for an infinitesimal `ε`, compared
/// lexicographically.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Flow {
    real: f64,
    eps: i64,
}

impl Flow {
    const ZERO: Flow = Flow { real: 0.0, eps: 0 };

    fn less(self, other: Flow) -> bool {
        self.real < other.real || (self.real == other.real && self.eps < other.eps)
    }

    fn add(self, other: Flow) -> Flow {
        Flow { real: self.real + other.real, eps: self.eps + other.eps }
    }

    fn sub(self, other: Flow) -> Flow {
        Flow { real: self.real - other.real, eps: self.eps - other.eps }
    }
}

const NONE: usize = usize::MAX;

struct Simplex {
    n: usize,
    m: usize,
    cost: Vec<f64>,
    flow: Vec<Flow>,
    is_basic: Vec<bool>,
    adj: Vec<Vec<(usize, usize)>>,
    parent: Vec<usize>,
    parent_cell: Vec<usize>,
    depth: Vec<usize>,
    potential: Vec<f64>,
    queue: VecDeque<usize>,
}

impl Simplex {
    fn add_basic(&mut self, cell: usize, flow: Flow) {
        let (a, b) = (cell / self.m, self.n + cell % self.m);
        self.is_basic[cell] = true;
        self.flow[cell] = flow;
        self.adj[a].push((b, cell));
        self.adj[b].push((a, cell));
    }

    fn remove_basic(&mut self, cell: usize) {
        let (a, b) = (cell / self.m, self.n + cell % self.m);
        self.is_basic[cell] = false;
        self.flow[cell] = Flow::ZERO;
        self.adj[a].retain(|&(_, c)| c != cell);
        self.adj[b].retain(|&(_, c)| c != cell);
    }

    /// Rebuilds parent pointers, depths and dual potentials from node 0.
    /// Rows carry `u_i`, columns `v_j`, with `u_i + v_j = c_ij` on basic
    /// cells.
    fn rebuild_tree(&mut self) {
        self.parent.iter_mut().for_each(|p| *p = NONE);
        self.parent[0] = 0;
        self.parent_cell[0] = NONE;
        self.depth[0] = 0;
        self.potential[0] = 0.0;
        self.queue.clear();
        self.queue.push_back(0);
        while let Some(a) = self.queue.pop_front() {
            for k in 0..self.adj[a].len() {
                let (b, cell) = self.adj[a][k];
                if self.parent[b] != NONE {
                    continue;
                }
                self.parent[b] = a;
                self.parent_cell[b] = cell;
                self.depth[b] = self.depth[a] + 1;
                self.potential[b] = self.cost[cell] - self.potential[a];
                self.queue.push_back(b);
            }
        }
    }

    fn reduced_cost(&self, cell: usize) -> f64 {
        let (i, j) = (cell / self.m, cell % self.m);
        self.cost[cell] - self.potential[i] - self.potential[self.n + j]
    }

    /// The cycle closed by `entering`, as cells with alternating sign:
    /// entries at even positions gain flow, odd positions lose it.
    fn cycle(&self, entering: usize) -> Vec<usize> {
        let mut a = entering / self.m;
        let mut b = self.n + entering % self.m;
        let mut from_a = Vec::new();
        let mut from_b = Vec::new();
        while self.depth[a] > self.depth[b] {
            from_a.push(self.parent_cell[a]);
            a = self.parent[a];
        }
        while self.depth[b] > self.depth[a] {
            from_b.push(self.parent_cell[b]);
            b = self.parent[b];
        }
        while a != b {
            from_a.push(self.parent_cell[a]);
            a = self.parent[a];
            from_b.push(self.parent_cell[b]);
            b = self.parent[b];
        }
        // entering (row i -> col j), col j up to the apex, then down to row i
        let mut out = Vec::with_capacity(1 + from_a.len() + from_b.len());
        out.push(entering);
        out.extend(from_b);
        out.extend(from_a.into_iter().rev());
        out
    }

    fn price(&self, rule: PivotRule, cursor: &mut usize, block: usize, tol: f64) -> Option<usize> {
        let cells = self.cost.len();
        if rule == PivotRule::Bland {
            return (0..cells).find(|&c| !self.is_basic[c] && self.reduced_cost(c) < -tol);
        }
        let mut found = None;
        let mut best = -tol;
        let mut scanned = 0;
        while scanned < cells {
            let stop = (scanned + block).min(cells);
            for _ in scanned..stop {
                let c = *cursor;
                *cursor += 1;
                if *cursor == cells {
                    *cursor = 0;
                }
                if !self.is_basic[c] {
                    let rc = self.reduced_cost(c);
                    if rc < best {
                        best = rc;
                        found = Some(c);
                    }
                }
            }
            scanned = stop;
            if found.is_some() {
                break;
            }
        }
        found
    }
}

fn lex_order(atoms: &[DVector<f64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..atoms.len()).collect();
    idx.sort_by(|&a, &b| {
        atoms[a]
            .iter()
            .zip(atoms[b].iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Starting basis by the northwest corner rule on lexicographically sorted
/// atoms (already optimal in one dimension), on the perturbed problem where
/// every supply gains `ε` and the last column's demand gains `n ε`.
fn northwest_corner(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Vec<(usize, Flow)> {
    let rows = lex_order(&mu.atoms);
    let cols = lex_order(&nu.atoms);
    let (n, m) = (rows.len(), cols.len());
    let supply_of = |r: usize| Flow { real: mu.weights[rows[r]], eps: 1 };
    let demand_of = |c: usize| Flow { real: nu.weights[cols[c]], eps: if c == m - 1 { n as i64 } else { 0 } };
    let mut supply = supply_of(0);
    let mut demand = demand_of(0);
    let (mut r, mut c) = (0, 0);
    let mut cells = Vec::with_capacity(n + m - 1);
    loop {
        if r == n - 1 && c == m - 1 {
            // Absorbs round-off between the two weight totals.
            cells.push((rows[r] * m + cols[c], Flow { real: supply.real.max(demand.real), eps: supply.eps }));
            break;
        }
        let row_done = if r == n - 1 {
            false
        } else if c == m - 1 {
            true
        } else {
            supply.less(demand)
        };
        if row_done {
            cells.push((rows[r] * m + cols[c], supply));
            demand = demand.sub(supply);
            if demand.real < 0.0 {
                demand.real = 0.0;
            }
            r += 1;
            supply = supply_of(r);
        } else {
            cells.push((rows[r] * m + cols[c], demand));
            supply = supply.sub(demand);
            if supply.real < 0.0 {
                supply.real = 0.0;
            }
            c += 1;
            demand = demand_of(c);
        }
    }
    cells
}

/// Exact squared-Euclidean optimal transport between two discrete measures
/// with the default [`PivotRule::Block`].
pub fn discrete_w2(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<TransportSolution> {
    discrete_w2_with(mu, nu, PivotRule::Block)
}

/// Transportation simplex from a northwest-corner basis.
///
/// Degeneracy is removed by Orden's perturbation: supplies get `+ε`, one
/// demand gets `+nε`, and flows are carried as exact pairs `(real, k)`
/// meaning `real + kε`. Every basis is then nondegenerate, so no pivot
/// rule can cycle and the leaving cell is unique. Reduced costs do not
/// depend on the supplies, so the final basis is optimal for the
/// unperturbed problem and its real parts are the plan.
pub fn discrete_w2_with(mu: &DiscreteMeasure, nu: &DiscreteMeasure, rule: PivotRule) -> Result<TransportSolution> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimMismatch { left: mu.dim(), right: nu.dim() });
    }
    let (n, m) = (mu.len(), nu.len());
    if n.saturating_mul(m) > MAX_CELLS {
        return Err(Error::SizeLimit { n, m, limit: MAX_CELLS });
    }
    let cells = n * m;
    let mut cost = vec![0.0; cells];
    for i in 0..n {
        for j in 0..m {
            cost[i * m + j] = (&mu.atoms[i] - &nu.atoms[j]).norm_squared();
        }
    }
    let max_cost = cost.iter().cloned().fold(0.0, f64::max);
    let optimality_tol = 1e-13 * max_cost.max(f64::MIN_POSITIVE);

    let mut s = Simplex {
        n,
        m,
        cost,
        flow: vec![Flow::ZERO; cells],
        is_basic: vec![false; cells],
        adj: vec![Vec::new(); n + m],
        parent: vec![NONE; n + m],
        parent_cell: vec![NONE; n + m],
        depth: vec![0; n + m],
        potential: vec![0.0; n + m],
        queue: VecDeque::with_capacity(n + m),
    };
    for (cell, amount) in northwest_corner(mu, nu) {
        s.add_basic(cell, amount);
    }

    let block = ((cells as f64).sqrt() as usize).max(32).min(cells);
    let mut cursor = 0usize;
    let mut pivots = 0usize;
    let pivot_limit = 50 * cells + 10_000;
    loop {
        s.rebuild_tree();
        let Some(entering) = s.price(rule, &mut cursor, block, optimality_tol) else {
            break;
        };
        pivots += 1;
        if pivots > pivot_limit {
            return Err(Error::NonConvergence { dim: n + m });
        }
        let cycle = s.cycle(entering);
        let mut leaving = NONE;
        let mut theta = Flow { real: f64::INFINITY, eps: 0 };
        for &c in cycle.iter().skip(1).step_by(2) {
            if s.flow[c].less(theta) {
                theta = s.flow[c];
                leaving = c;
            }
        }
        for (k, &c) in cycle.iter().enumerate() {
            let f = s.flow[c];
            s.flow[c] = if k % 2 == 0 { f.add(theta) } else { f.sub(theta) };
            if s.flow[c].real < 0.0 {
                s.flow[c].real = 0.0;
            }
        }
        s.remove_basic(leaving);
        let entering_flow = s.flow[entering];
        s.add_basic(entering, entering_flow);
    }

    let mut plan = DMatrix::zeros(n, m);
    let mut terms = Vec::with_capacity(n + m);
    for c in 0..cells {
        if s.is_basic[c] && s.flow[c].real > 0.0 {
            plan[(c / m, c % m)] = s.flow[c].real;
            terms.push(s.flow[c].real * s.cost[c]);
        }
    }
    let objective = compensated_sum(terms).max(0.0);
    let coupling = Coupling::new(plan, mu.clone(), nu.clone())?;
    Ok(TransportSolution { w2: objective.sqrt(), objective, coupling, pivots })
}

/// Displacement interpolation along a plan: atoms `(1 - t) x_i + t y_j`
/// with weights `pi_ij`. Zero-mass pairs are dropped and exactly equal
/// atoms merged.
pub fn coupling_geodesic(coupling: &Coupling, t: f64) -> Result<DiscreteMeasure> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::BadParameter(format!("geodesic time {t} outside [0, 1]")));
    }
    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    for (i, j, v) in coupling.nonzeros() {
        let x = &coupling.source.atoms[i];
        let y = &coupling.target.atoms[j];
        let p = if t == 0.0 {
            x.clone()
        } else if t == 1.0 {
            y.clone()
        } else {
            x * (1.0 - t) + y * t
        };
        atoms.push(p);
        weights.push(v);
    }
    DiscreteMeasure::merged(atoms, weights)
}

/// `n` equal-weight draws `Sigma^{1/2} z + m`, `z` standard normal from
/// `ChaCha8Rng::seed_from_u64(seed)`.
pub fn sample_gaussian(measure: &GaussianMeasure, n: usize, seed: u64, tol: &Tolerances) -> Result<DiscreteMeasure> {
    if n == 0 {
        return Err(Error::BadParameter("sample count must be at least 1".into()));
    }
    let root = psd_sqrt(measure.cov(), tol)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atoms = (0..n)
        .map(|_| {
            let z = standard_normal_vector(&mut rng, measure.dim());
            &*root * z + measure.mean()
        })
        .collect();
    DiscreteMeasure::uniform(atoms)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpConstructionRow {
    pub t: f64,
    pub perception: f64,
    /// `W2(p_X, gamma_t)`, should equal `perception`.
    pub to_source: f64,
    /// `W2(gamma_t, p_X*)`, should equal `P* - perception`.
    pub to_mmse: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpConstructionReport {
    pub p_star: f64,
    pub rows: Vec<DpConstructionRow>,
    pub tolerance: f64,
}

impl DpConstructionReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }
}

/// Builds the estimator distributions on the geodesic from `p_X` to
/// `p_X*` and checks both distances for every `t = P / P*` in the grid.
pub fn verify_dp_construction(
    p_x: &DiscreteMeasure,
    p_xstar: &DiscreteMeasure,
    grid: &[f64],
) -> Result<DpConstructionReport> {
    const TOL: f64 = 1e-7;
    let solution = discrete_w2(p_x, p_xstar)?;
    let p_star = solution.w2;
    let mut rows = Vec::with_capacity(grid.len());
    for &t in grid {
        let gamma = coupling_geodesic(&solution.coupling, t)?;
        let to_source = discrete_w2(p_x, &gamma)?.w2;
        let to_mmse = discrete_w2(&gamma, p_xstar)?.w2;
        let perception = t * p_star;
        let passed = (to_source - perception).abs() <= TOL && (to_mmse - (p_star - perception)).abs() <= TOL;
        rows.push(DpConstructionRow { t, perception, to_source, to_mmse, passed });
    }
    Ok(DpConstructionReport { p_star, rows, tolerance: TOL })
}
