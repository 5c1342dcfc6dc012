//! Transport costs, the entropic (Sinkhorn) mini-batch transport distance, and
//! exact assignment solvers used to check it.
//!
//! Plans use unit row and column marginals: a `K×K` plan carries total mass
//! `K`, so the transport distance `Tr[M Cᵀ]` is a sum over matched pairs
//! rather than an average.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numerics::{dot, log_sum_exp, norm2, Matrix, Rng};

/// Ground cost `c(x, y)` between two sample (or embedding) vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostSpec {
    /// Cosine distance between critic embeddings. The caller embeds first.
    LearnedCosine,
    /// Cosine distance in the original feature space.
    RawCosine,
    SquaredEuclidean,
    Euclidean,
}

impl CostSpec {
    pub fn is_cosine(self) -> bool {
        matches!(self, CostSpec::LearnedCosine | CostSpec::RawCosine)
    }

    pub fn uses_critic(self) -> bool {
        self == CostSpec::LearnedCosine
    }

    pub fn name(self) -> &'static str {
        match self {
            CostSpec::LearnedCosine => "learned-cosine",
            CostSpec::RawCosine => "raw-cosine",
            CostSpec::SquaredEuclidean => "squared-euclidean",
            CostSpec::Euclidean => "euclidean",
        }
    }
}

impl std::str::FromStr for CostSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned-cosine" => Ok(CostSpec::LearnedCosine),
            "raw-cosine" => Ok(CostSpec::RawCosine),
            "squared-euclidean" => Ok(CostSpec::SquaredEuclidean),
            "euclidean" => Ok(CostSpec::Euclidean),
            other => Err(Error::InvalidArgument(format!("unknown cost kind `{other}`"))),
        }
    }
}

fn check_nonzero_rows(m: &Matrix) -> Result<Vec<f64>> {
    m.row_iter()
        .enumerate()
        .map(|(row, r)| {
            let n = norm2(r);
            if n > 0.0 {
                Ok(n)
            } else {
                Err(Error::ZeroNormRow { row })
            }
        })
        .collect()
}

/// Cost matrix `C[i][j] = c(xᵢ, yⱼ)`.
pub fn pairwise_cost(x: &Matrix, y: &Matrix, spec: CostSpec) -> Result<Matrix> {
    if x.cols() != y.cols() {
        return Err(dim_err(
            "pairwise_cost",
            format!("x has {} columns, y has {}", x.cols(), y.cols()),
        ));
    }
    let c = match spec {
        CostSpec::LearnedCosine | CostSpec::RawCosine => {
            let nx = check_nonzero_rows(x)?;
            let ny = check_nonzero_rows(y)?;
            Matrix::from_fn(x.rows(), y.rows(), |i, j| {
                let cos = dot(x.row(i), y.row(j)) / (nx[i] * ny[j]);
                // rounding can push |cos| a hair past 1
                (1.0 - cos).clamp(0.0, 2.0)
            })
        }
        CostSpec::SquaredEuclidean => Matrix::from_fn(x.rows(), y.rows(), |i, j| {
            sq_dist(x.row(i), y.row(j))
        }),
        CostSpec::Euclidean => Matrix::from_fn(x.rows(), y.rows(), |i, j| {
            sq_dist(x.row(i), y.row(j)).sqrt()
        }),
    };
    Ok(c)
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Pulls a gradient with respect to a cost matrix back onto its inputs.
///
/// Returns `(∂L/∂x, ∂L/∂y)` given `grad_c = ∂L/∂C`. The Euclidean cost uses
/// the zero subgradient where `x = y`.
pub fn pairwise_cost_backward(
    x: &Matrix,
    y: &Matrix,
    spec: CostSpec,
    grad_c: &Matrix,
) -> Result<(Matrix, Matrix)> {
    if grad_c.shape() != (x.rows(), y.rows()) || x.cols() != y.cols() {
        return Err(dim_err(
            "pairwise_cost_backward",
            format!("x {:?}, y {:?}, grad {:?}", x.shape(), y.shape(), grad_c.shape()),
        ));
    }
    let d = x.cols();
    let mut gx = Matrix::zeros(x.rows(), d);
    let mut gy = Matrix::zeros(y.rows(), d);
    match spec {
        CostSpec::LearnedCosine | CostSpec::RawCosine => {
            let nx = check_nonzero_rows(x)?;
            let ny = check_nonzero_rows(y)?;
            // c = 1 - x·y / (|x||y|)
            // ∂c/∂x = -y/(|x||y|) + (x·y) x / (|x|³|y|)
            for i in 0..x.rows() {
                let xi = x.row(i);
                for j in 0..y.rows() {
                    let g = grad_c[(i, j)];
                    if g == 0.0 {
                        continue;
                    }
                    let yj = y.row(j);
                    let inv = 1.0 / (nx[i] * ny[j]);
                    let cos = dot(xi, yj) * inv;
                    let ax = cos / (nx[i] * nx[i]);
                    let ay = cos / (ny[j] * ny[j]);
                    let gxi = gx.row_mut(i);
                    for k in 0..d {
                        gxi[k] += g * (ax * xi[k] - inv * yj[k]);
                    }
                    let gyj = gy.row_mut(j);
                    for k in 0..d {
                        gyj[k] += g * (ay * yj[k] - inv * xi[k]);
                    }
                }
            }
        }
        CostSpec::SquaredEuclidean => {
            for i in 0..x.rows() {
                for j in 0..y.rows() {
                    let g = grad_c[(i, j)];
                    if g == 0.0 {
                        continue;
                    }
                    for k in 0..d {
                        let diff = 2.0 * g * (x[(i, k)] - y[(j, k)]);
                        gx[(i, k)] += diff;
                        gy[(j, k)] -= diff;
                    }
                }
            }
        }
        CostSpec::Euclidean => {
            for i in 0..x.rows() {
                for j in 0..y.rows() {
                    let g = grad_c[(i, j)];
                    let dist = sq_dist(x.row(i), y.row(j)).sqrt();
                    if g == 0.0 || dist == 0.0 {
                        continue;
                    }
                    for k in 0..d {
                        let diff = g * (x[(i, k)] - y[(j, k)]) / dist;
                        gx[(i, k)] += diff;
                        gy[(j, k)] -= diff;
                    }
                }
            }
        }
    }
    Ok((gx, gy))
}

/// Soft matching between two mini-batches; nonnegative, unit row and column sums.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan(Matrix);

impl TransportPlan {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(dim_err("TransportPlan::new", format!("{:?} is not square", m.shape())));
        }
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                let value = m[(r, c)];
                if value < 0.0 {
                    return Err(Error::NegativePlanEntry { row: r, col: c, value });
                }
            }
        }
        Ok(Self(m))
    }

    pub fn uniform(k: usize) -> Self {
        Self(Matrix::filled(k, k, 1.0 / k as f64))
    }

    pub fn from_permutation(perm: &[usize]) -> Self {
        let k = perm.len();
        let mut m = Matrix::zeros(k, k);
        for (i, &j) in perm.iter().enumerate() {
            m[(i, j)] = 1.0;
        }
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn size(&self) -> usize {
        self.0.rows()
    }

    /// `(max |row sum - 1|, max |col sum - 1|)`
    pub fn marginal_residuals(&self) -> (f64, f64) {
        let dev = |v: Vec<f64>| v.into_iter().fold(0.0f64, |a, s| a.max((s - 1.0).abs()));
        (dev(self.0.row_sums()), dev(self.0.col_sums()))
    }

    /// `Tr[M Cᵀ] = Σᵢⱼ M[i][j]·C[i][j]`
    pub fn cost(&self, c: &Matrix) -> Result<f64> {
        self.0.frobenius_dot(c)
    }
}

/// Which arithmetic the Sinkhorn iterations run in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SinkhornDomain {
    /// Scaling iterations on a kernel rebuilt from log potentials whenever the
    /// scalings drift out of range. Same fixed point as `Log`, far fewer `exp` calls.
    Stabilized,
    /// Log-sum-exp updates of the dual potentials.
    Log,
    /// Textbook scaling on `exp(-C/ε)`. Underflows for small `ε`.
    Plain,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SinkhornConfig {
    /// Entropy penalty coefficient `ε` (the inverse of `λ`).
    pub epsilon: f64,
    pub max_iters: usize,
    /// Stop once both marginal residuals (∞-norm) are at or below this.
    pub marginal_tol: f64,
    #[serde(default = "default_domain")]
    pub domain: SinkhornDomain,
}

fn default_domain() -> SinkhornDomain {
    SinkhornDomain::Stabilized
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.0 / 500.0,
            max_iters: 500,
            marginal_tol: 1e-6,
            domain: SinkhornDomain::Stabilized,
        }
    }
}

impl SinkhornConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sinkhorn epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidArgument("sinkhorn max_iters must be >= 1".into()));
        }
        if !(self.marginal_tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sinkhorn marginal_tol must be positive, got {}",
                self.marginal_tol
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SinkhornResult {
    pub plan: TransportPlan,
    /// `Tr[M Cᵀ]`; the entropy term is not included.
    pub distance: f64,
    pub iterations_used: usize,
    /// Larger of the row and column residuals, ∞-norm.
    pub marginal_residual: f64,
    pub converged: bool,
}

/// Entropic transport between two equal-size mini-batches with cost matrix `c`.
///
/// Minimizes `Tr[M Cᵀ] - ε·h(M)` over matrices with unit row and column sums,
/// `h(M) = -Σ M log M`. Not reaching `marginal_tol` within `max_iters` is
/// reported through [`SinkhornResult::converged`], not as an error.
pub fn sinkhorn(c: &Matrix, cfg: &SinkhornConfig) -> Result<SinkhornResult> {
    cfg.validate()?;
    if c.rows() != c.cols() {
        return Err(dim_err("sinkhorn", format!("cost matrix {:?} is not square", c.shape())));
    }
    if c.rows() == 0 {
        return Err(Error::InvalidArgument("sinkhorn on an empty cost matrix".into()));
    }
    if !c.is_finite() {
        return Err(Error::NonFinite("sinkhorn cost matrix"));
    }
    let (plan, iterations_used) = match cfg.domain {
        SinkhornDomain::Stabilized => solve_stabilized(c, cfg),
        SinkhornDomain::Log => solve_log(c, cfg),
        SinkhornDomain::Plain => solve_plain(c, cfg)?,
    };
    let plan = TransportPlan(plan);
    let (row_res, col_res) = plan.marginal_residuals();
    let marginal_residual = row_res.max(col_res);
    let distance = plan.cost(c)?;
    Ok(SinkhornResult {
        plan,
        distance,
        iterations_used,
        marginal_residual,
        converged: row_res <= cfg.marginal_tol && col_res <= cfg.marginal_tol,
    })
}

/// Initial potentials with `f_i + g_j <= C_ij`, tight at least once per row and column.
fn initial_potentials(c: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let k = c.rows();
    let f: Vec<f64> = c.row_iter().map(|r| r.iter().copied().fold(f64::INFINITY, f64::min)).collect();
    let mut g = vec![f64::INFINITY; k];
    for i in 0..k {
        for (gj, &cij) in g.iter_mut().zip(c.row(i)) {
            *gj = gj.min(cij - f[i]);
        }
    }
    (f, g)
}

fn plan_from_potentials(c: &Matrix, f: &[f64], g: &[f64], eps: f64) -> Matrix {
    Matrix::from_fn(c.rows(), c.cols(), |i, j| ((f[i] + g[j] - c[(i, j)]) / eps).exp())
}

fn max_residual(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, s| a.max((s - 1.0).abs()))
}

const ANNEAL_FACTOR: f64 = 0.5;
const ANNEAL_STAGE_TOL: f64 = 1e-3;
const ANNEAL_STAGE_ITERS: usize = 20;

struct Stage {
    eps: f64,
    tol: f64,
    budget: usize,
    last_stage: bool,
}

/// ε-scaling warm start: a few loose stages from the cost range down to the
/// target ε, then the target stage with the real tolerance and the remaining
/// iteration budget. All stages share the potentials, so the fixed point at
/// the target ε is unchanged; only the slow initial transient is skipped.
struct Annealing {
    target: f64,
    tol: f64,
    max_iters: usize,
    current: f64,
}

impl Annealing {
    fn new(c: &Matrix, cfg: &SinkhornConfig) -> Self {
        let (lo, hi) = c
            .data()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Self {
            target: cfg.epsilon,
            tol: cfg.marginal_tol,
            max_iters: cfg.max_iters,
            current: (hi - lo).max(cfg.epsilon),
        }
    }

    fn stage(&self, iters_done: usize) -> Stage {
        let remaining = self.max_iters.saturating_sub(iters_done);
        if self.current <= self.target * (1.0 + 1e-12) {
            Stage {
                eps: self.target,
                tol: self.tol,
                budget: remaining,
                last_stage: true,
            }
        } else {
            Stage {
                eps: self.current,
                tol: ANNEAL_STAGE_TOL,
                // always leave at least one iteration for the target stage
                budget: ANNEAL_STAGE_ITERS.min(remaining.saturating_sub(1)),
                last_stage: false,
            }
        }
    }

    fn advance(&mut self) {
        self.current *= ANNEAL_FACTOR;
    }
}

fn solve_log(c: &Matrix, cfg: &SinkhornConfig) -> (Matrix, usize) {
    let k = c.rows();
    let (mut f, mut g) = initial_potentials(c);
    let mut schedule = Annealing::new(c, cfg);
    let mut iters = 0;
    loop {
        let Stage { eps, tol, budget, last_stage } = schedule.stage(iters);
        for _ in 0..budget {
            iters += 1;
            for i in 0..k {
                let row = c.row(i);
                f[i] = -eps * log_sum_exp((0..k).map(|j| (g[j] - row[j]) / eps));
            }
            for j in 0..k {
                g[j] = -eps * log_sum_exp((0..k).map(|i| (f[i] - c[(i, j)]) / eps));
            }
            // columns are exact after the g update; only rows can be off
            let rows: Vec<f64> = (0..k)
                .map(|i| {
                    let row = c.row(i);
                    (0..k).map(|j| ((f[i] + g[j] - row[j]) / eps).exp()).sum()
                })
                .collect();
            if max_residual(&rows) <= tol {
                break;
            }
        }
        if last_stage {
            return (plan_from_potentials(c, &f, &g, eps), iters);
        }
        schedule.advance();
    }
}

// Scalings outside this range get folded back into the log potentials.
const ABSORB_BOUND: f64 = 1e50;

fn solve_stabilized(c: &Matrix, cfg: &SinkhornConfig) -> (Matrix, usize) {
    let k = c.rows();
    let (mut f, mut g) = initial_potentials(c);
    let mut u = vec![1.0; k];
    let mut v = vec![1.0; k];
    let mut kv = vec![0.0; k];
    let mut ktu = vec![0.0; k];

    let absorb = |f: &mut [f64], g: &mut [f64], u: &mut [f64], v: &mut [f64], eps: f64| {
        for (fi, ui) in f.iter_mut().zip(u.iter_mut()) {
            *fi += eps * ui.ln();
            *ui = 1.0;
        }
        for (gj, vj) in g.iter_mut().zip(v.iter_mut()) {
            *gj += eps * vj.ln();
            *vj = 1.0;
        }
    };
    let mul_kv = |kernel: &Matrix, v: &[f64], out: &mut [f64]| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(kernel.row(i), v);
        }
    };
    let mul_ktu = |kernel: &Matrix, u: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &ui) in u.iter().enumerate() {
            for (o, &kij) in out.iter_mut().zip(kernel.row(i)) {
                *o += kij * ui;
            }
        }
    };

    let mut schedule = Annealing::new(c, cfg);
    let mut iters = 0;
    loop {
        let Stage { eps, tol, budget, last_stage } = schedule.stage(iters);
        let mut kernel = plan_from_potentials(c, &f, &g, eps);
        mul_kv(&kernel, &v, &mut kv);
        for _ in 0..budget {
            iters += 1;
            for i in 0..k {
                u[i] = 1.0 / kv[i];
            }
            mul_ktu(&kernel, &u, &mut ktu);
            for j in 0..k {
                v[j] = 1.0 / ktu[j];
            }
            let out_of_range = u
                .iter()
                .chain(v.iter())
                .any(|&s| !(s < ABSORB_BOUND && s > 1.0 / ABSORB_BOUND));
            if out_of_range {
                absorb(&mut f, &mut g, &mut u, &mut v, eps);
                kernel = plan_from_potentials(c, &f, &g, eps);
            }
            mul_kv(&kernel, &v, &mut kv);
            let row_res = u
                .iter()
                .zip(&kv)
                .fold(0.0f64, |a, (ui, kvi)| a.max((ui * kvi - 1.0).abs()));
            if row_res <= tol {
                break;
            }
        }
        absorb(&mut f, &mut g, &mut u, &mut v, eps);
        if last_stage {
            return (plan_from_potentials(c, &f, &g, eps), iters);
        }
        schedule.advance();
    }
}

fn solve_plain(c: &Matrix, cfg: &SinkhornConfig) -> Result<(Matrix, usize)> {
    let k = c.rows();
    let kernel = c.map(|v| (-v / cfg.epsilon).exp());
    let mut u = vec![1.0; k];
    let mut v = vec![1.0; k];
    let mut iters = 0;
    while iters < cfg.max_iters {
        iters += 1;
        for i in 0..k {
            u[i] = 1.0 / dot(kernel.row(i), &v);
        }
        for j in 0..k {
            v[j] = 1.0 / (0..k).map(|i| kernel[(i, j)] * u[i]).sum::<f64>();
        }
        if u.iter().chain(&v).any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("plain-domain sinkhorn scaling (epsilon too small)"));
        }
        let rows: Vec<f64> = (0..k).map(|i| u[i] * dot(kernel.row(i), &v)).collect();
        if max_residual(&rows) <= cfg.marginal_tol {
            break;
        }
    }
    let plan = Matrix::from_fn(k, k, |i, j| u[i] * kernel[(i, j)] * v[j]);
    Ok((plan, iters))
}

/// Entropy `-Σᵢⱼ M[i][j]·log M[i][j]` of a plan.
///
/// Entries that underflowed to exactly zero contribute their limit, zero.
pub fn plan_entropy(plan: &TransportPlan) -> Result<f64> {
    let m = plan.matrix();
    let mut h = 0.0;
    for r in 0..m.rows() {
        for (c, &v) in m.row(r).iter().enumerate() {
            if v < 0.0 || v.is_nan() {
                return Err(Error::NegativePlanEntry { row: r, col: c, value: v });
            }
            if v > 0.0 {
                h -= v * v.ln();
            }
        }
    }
    Ok(h)
}

/// A hard matching `i -> permutation[i]` and its total cost.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub permutation: Vec<usize>,
    pub distance: f64,
}

impl Assignment {
    fn from_perm(c: &Matrix, permutation: Vec<usize>) -> Self {
        let distance = permutation_cost(c, &permutation);
        Self {
            permutation,
            distance,
        }
    }
}

/// `Σᵢ C[i][π(i)]`, summed in row order.
pub fn permutation_cost(c: &Matrix, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum()
}

/// Largest size the brute-force path will enumerate by default.
pub const DEFAULT_ENUMERATION_LIMIT: usize = 8;

fn check_square_finite(c: &Matrix, op: &'static str) -> Result<()> {
    if c.rows() != c.cols() {
        return Err(dim_err(op, format!("{:?} is not square", c.shape())));
    }
    if !c.is_finite() {
        return Err(Error::NonFinite(op));
    }
    Ok(())
}

/// Exact minimum-cost matching by enumerating every permutation.
pub fn exact_assignment_brute_force(c: &Matrix, limit: usize) -> Result<Assignment> {
    check_square_finite(c, "exact_assignment_brute_force")?;
    let k = c.rows();
    if k > limit {
        return Err(Error::InvalidArgument(format!(
            "brute-force assignment limited to K <= {limit}, got {k}"
        )));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for_each_permutation(k, |p| {
        let cost = permutation_cost(c, p);
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, p.to_vec()));
        }
    });
    let (_, perm) = best.unwrap_or((0.0, Vec::new()));
    Ok(Assignment::from_perm(c, perm))
}

/// Calls `visit` on every permutation of `0..n` (Heap's algorithm).
pub fn for_each_permutation(n: usize, mut visit: impl FnMut(&[usize])) {
    let mut p: Vec<usize> = (0..n).collect();
    let mut counters = vec![0usize; n];
    visit(&p);
    let mut i = 1;
    while i < n {
        if counters[i] < i {
            if i % 2 == 0 {
                p.swap(0, i);
            } else {
                p.swap(counters[i], i);
            }
            visit(&p);
            counters[i] += 1;
            i = 1;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }
}

/// Exact minimum-cost matching in `O(K³)` (Hungarian method with potentials).
pub fn exact_assignment(c: &Matrix) -> Result<Assignment> {
    check_square_finite(c, "exact_assignment")?;
    let n = c.rows();
    if n == 0 {
        return Ok(Assignment {
            permutation: Vec::new(),
            distance: 0.0,
        });
    }
    // 1-based arrays; index 0 is the virtual root column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = c[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    Ok(Assignment::from_perm(c, perm))
}

/// Matching under a uniformly random permutation instead of an optimal one.
pub fn random_matching(c: &Matrix, rng: &mut Rng) -> Result<Assignment> {
    check_square_finite(c, "random_matching")?;
    let perm = rng.permutation(c.rows());
    Ok(Assignment::from_perm(c, perm))
}

pub fn random_match_distance(c: &Matrix, rng: &mut Rng) -> Result<f64> {
    random_matching(c, rng).map(|a| a.distance)
}
