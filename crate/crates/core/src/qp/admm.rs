use super::{active_set, kkt_residuals, QpError, QpProblem, QpSettings, QpSolution, QpStatus};
use nalgebra::{DMatrix, DVector};

const RHO_EQ_FACTOR: f64 = 1e3;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const POLISH_DELTA: f64 = 1e-7;
const POLISH_REFINE: usize = 8;
const POLISH_ROUNDS: usize = 40;

/// Equilibrated copy of the problem in `l <= C z <= u` form. Equality rows
/// come first.
struct Scaled {
    p: DMatrix<f64>,
    q: DVector<f64>,
    c: DMatrix<f64>,
    /// Nonzeros of `c`, row by row.
    rows: Vec<Vec<(usize, f64)>>,
    l: DVector<f64>,
    u: DVector<f64>,
    d: DVector<f64>,
    e: DVector<f64>,
    cost: f64,
    n_eq: usize,
}

impl Scaled {
    fn new(problem: &QpProblem, iters: usize) -> Self {
        let n = problem.num_vars();
        let n_eq = problem.b_eq.len();
        let m = n_eq + problem.b_in.len();
        let mut c = DMatrix::zeros(m, n);
        c.rows_mut(0, n_eq).copy_from(&problem.a_eq);
        c.rows_mut(n_eq, m - n_eq).copy_from(&problem.a_in);
        let mut l = DVector::from_element(m, f64::NEG_INFINITY);
        let mut u = DVector::zeros(m);
        l.rows_mut(0, n_eq).copy_from(&problem.b_eq);
        u.rows_mut(0, n_eq).copy_from(&problem.b_eq);
        u.rows_mut(n_eq, m - n_eq).copy_from(&problem.b_in);

        let mut p = problem.p.clone();
        let mut q = problem.q.clone();
        let mut d = DVector::from_element(n, 1.0);
        let mut e = DVector::from_element(m, 1.0);
        let mut cost = 1.0;
        let clamp_norm = |v: f64| if v < 1e-4 { 1.0 } else { v.min(1e4) };

        for _ in 0..iters {
            let dd = DVector::from_fn(n, |j, _| {
                let col = p.column(j).amax().max(c.column(j).amax());
                1.0 / clamp_norm(col).sqrt()
            });
            let de = DVector::from_fn(m, |i, _| 1.0 / clamp_norm(c.row(i).amax()).sqrt());
            for j in 0..n {
                for i in 0..n {
                    p[(i, j)] *= dd[i] * dd[j];
                }
                for i in 0..m {
                    c[(i, j)] *= de[i] * dd[j];
                }
            }
            q.component_mul_assign(&dd);
            d.component_mul_assign(&dd);
            e.component_mul_assign(&de);

            let mean_col = if n > 0 {
                (0..n).map(|j| p.column(j).amax()).sum::<f64>() / n as f64
            } else {
                0.0
            };
            let gamma = 1.0 / clamp_norm(mean_col.max(q.amax()));
            p *= gamma;
            q *= gamma;
            cost *= gamma;
        }
        for i in 0..m {
            l[i] *= e[i];
            u[i] *= e[i];
        }
        let rows = c
            .row_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(j, v)| (j, *v))
                    .collect()
            })
            .collect();
        Self {
            p,
            q,
            c,
            rows,
            l,
            u,
            d,
            e,
            cost,
            n_eq,
        }
    }

    fn rho_vector(&self, rho: f64) -> DVector<f64> {
        DVector::from_fn(
            self.l.len(),
            |i, _| {
                if i < self.n_eq {
                    rho * RHO_EQ_FACTOR
                } else {
                    rho
                }
            },
        )
    }

    fn factor(&self, rho: &DVector<f64>, sigma: f64) -> nalgebra::Cholesky<f64, nalgebra::Dyn> {
        let n = self.q.len();
        let mut k = &self.p + DMatrix::identity(n, n) * sigma;
        for (row, r) in self.rows.iter().zip(rho.iter()) {
            for &(a, va) in row {
                for &(b, vb) in row {
                    k[(a, b)] += r * va * vb;
                }
            }
        }
        k.cholesky().expect("regularized ADMM system is positive definite")
    }

    fn c_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|row| row.iter().map(|&(j, v)| v * x[j]).sum()),
        )
    }

    fn c_tr_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.q.len());
        for (row, yi) in self.rows.iter().zip(y.iter()) {
            for &(j, v) in row {
                out[j] += v * yi;
            }
        }
        out
    }

    /// Unscaled primal and dual vectors.
    fn unscale(&self, x: &DVector<f64>, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let z = x.component_mul(&self.d);
        let y = y.component_mul(&self.e) / self.cost;
        let y_eq = y.rows(0, self.n_eq).into_owned();
        let y_in = y.rows(self.n_eq, y.len() - self.n_eq).into_owned();
        (z, y_eq, y_in)
    }

    /// Unscaled ADMM residuals `‖Cz − w‖` and `‖Pz + q + Cᵀy‖`.
    fn residuals(&self, x: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>) -> (f64, f64) {
        let cx = self.c_mul(x);
        let prim = (&cx - z)
            .iter()
            .zip(self.e.iter())
            .fold(0.0f64, |acc, (r, e)| acc.max((r / e).abs()));
        let grad = &self.p * x + &self.q + self.c_tr_mul(y);
        let dual = grad
            .iter()
            .zip(self.d.iter())
            .fold(0.0f64, |acc, (g, d)| acc.max((g / d).abs()))
            / self.cost;
        (prim, dual)
    }

    fn active_set(&self, z: &DVector<f64>, y: &DVector<f64>) -> Vec<bool> {
        (0..self.l.len())
            .map(|i| i < self.n_eq || self.u[i] - z[i] < y[i])
            .collect()
    }
}

struct Candidate {
    z: DVector<f64>,
    y_eq: DVector<f64>,
    y_in: DVector<f64>,
    residuals: (f64, f64, f64),
}

impl Candidate {
    fn worst(&self) -> f64 {
        self.residuals.0.max(self.residuals.1).max(self.residuals.2)
    }
}

/// Solve the QP. Deterministic for identical inputs.
pub fn solve(
    problem: &QpProblem,
    warm_start: Option<&DVector<f64>>,
    settings: &QpSettings,
) -> Result<QpSolution, QpError> {
    let n = problem.num_vars();
    if let Some(w) = warm_start {
        if w.len() != n {
            return Err(QpError::Dimension(format!(
                "warm start has {} entries, problem has {n} variables",
                w.len()
            )));
        }
    }
    let s = Scaled::new(problem, settings.scaling_iters);
    let m = s.l.len();

    let mut rho = settings.rho;
    let mut rho_vec = s.rho_vector(rho);
    let mut chol = s.factor(&rho_vec, settings.sigma);

    let mut x = match warm_start {
        Some(w) => w.component_div(&s.d),
        None => DVector::zeros(n),
    };
    let mut z = clamp(&s.c_mul(&x), &s.l, &s.u);
    let mut y = DVector::zeros(m);
    let mut y_prev = y.clone();

    let mut last_active: Option<Vec<bool>> = None;
    let mut failed_polish: Option<Vec<bool>> = None;
    let mut history: Vec<(usize, f64)> = Vec::new();
    let alpha = settings.alpha;
    let sigma = settings.sigma;
    let interval = settings.check_interval.max(1);

    let finish = |cand: Candidate, status: QpStatus, iterations: usize, polished: bool| QpSolution {
        objective: problem.objective(&cand.z),
        primal_residual: cand.residuals.0,
        dual_residual: cand.residuals.1,
        complementarity: cand.residuals.2,
        z: cand.z,
        y_eq: cand.y_eq,
        y_in: cand.y_in,
        status,
        iterations,
        polished,
    };

    let mut iter = 0;
    while iter < settings.max_iter {
        iter += 1;
        y_prev.copy_from(&y);
        let rhs = &x * sigma - &s.q + s.c_tr_mul(&(rho_vec.component_mul(&z) - &y));
        let x_tilde = chol.solve(&rhs);
        let z_tilde = s.c_mul(&x_tilde);
        x = &x_tilde * alpha + &x * (1.0 - alpha);
        let z_relax = &z_tilde * alpha + &z * (1.0 - alpha);
        let z_new = clamp(&(&z_relax + y.component_div(&rho_vec)), &s.l, &s.u);
        y += rho_vec.component_mul(&(&z_relax - &z_new));
        z = z_new;

        if iter % interval != 0 && iter != settings.max_iter {
            continue;
        }

        let (prim, dual) = s.residuals(&x, &z, &y);
        let active = s.active_set(&z, &y);
        let converged = prim <= settings.tol && dual <= settings.tol;

        let stable = last_active.as_ref() == Some(&active);
        if settings.polish && (converged || stable) && failed_polish.as_ref() != Some(&active) {
            if let Some(cand) = polish(problem, &s, &active) {
                if cand.worst() <= settings.tol {
                    return Ok(finish(cand, QpStatus::Optimal, iter, true));
                }
            }
            failed_polish = Some(active.clone());
        }
        if converged {
            if let Some(exact) = exact_from(problem, warm_start, settings) {
                return Ok(finish(exact, QpStatus::Optimal, iter, true));
            }
            let cand = plain_candidate(problem, &s, &x, &y);
            if cand.worst() <= settings.tol {
                return Ok(finish(cand, QpStatus::Optimal, iter, false));
            }
        }
        last_active = Some(active);

        if primal_infeasible(problem, &s, &(&y - &y_prev), settings.infeasibility_tol) {
            let cand = plain_candidate(problem, &s, &x, &y);
            return Ok(finish(cand, QpStatus::Infeasible, iter, false));
        }
        history.push((iter, prim));
        if let Some(&(_, old)) = history
            .iter()
            .rev()
            .find(|(i, _)| iter - i >= settings.stagnation_window)
        {
            if prim > 1e3 * settings.tol && (prim - old).abs() <= settings.stagnation_rel * old {
                let cand = plain_candidate(problem, &s, &x, &y);
                return Ok(finish(cand, QpStatus::Infeasible, iter, false));
            }
        }

        // penalty update from the scaled residual balance
        let cx = s.c_mul(&x);
        let prim_s = (&cx - &z).amax() / cx.amax().max(z.amax()).max(1e-10);
        let px = &s.p * &x;
        let cty = s.c_tr_mul(&y);
        let dual_s = (&px + &s.q + &cty).amax() / px.amax().max(cty.amax()).max(s.q.amax()).max(1e-10);
        if prim_s > 0.0 && dual_s > 0.0 {
            let proposed = (rho * (prim_s / dual_s).sqrt()).clamp(RHO_MIN, RHO_MAX);
            if proposed > 5.0 * rho || proposed < rho / 5.0 {
                rho = proposed;
                rho_vec = s.rho_vector(rho);
                chol = s.factor(&rho_vec, sigma);
            }
        }
    }

    if let Some(exact) = exact_from(problem, warm_start, settings) {
        return Ok(finish(exact, QpStatus::Optimal, iter, true));
    }
    let mut cand = plain_candidate(problem, &s, &x, &y);
    if settings.polish {
        if let Some(p) = polish(problem, &s, &s.active_set(&z, &y)) {
            if p.worst() < cand.worst() {
                cand = p;
            }
        }
    }
    let status = if cand.worst() <= settings.tol {
        QpStatus::Optimal
    } else {
        QpStatus::MaxIterations
    };
    Ok(finish(cand, status, iter, false))
}

/// Active-set solution from a feasible warm start, when it meets the
/// tolerance.
fn exact_from(problem: &QpProblem, warm_start: Option<&DVector<f64>>, settings: &QpSettings) -> Option<Candidate> {
    if !settings.polish {
        return None;
    }
    let n = problem.num_vars();
    let m = problem.b_eq.len() + problem.b_in.len();
    let sol = active_set::solve_from(problem, warm_start?, 10 * (n + m))?;
    let residuals = kkt_residuals(problem, &sol.z, &sol.y_eq, &sol.y_in);
    let cand = Candidate {
        z: sol.z,
        y_eq: sol.y_eq,
        y_in: sol.y_in,
        residuals,
    };
    (cand.worst() <= settings.tol).then_some(cand)
}

fn clamp(v: &DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| v[i].max(l[i]).min(u[i]))
}

fn plain_candidate(problem: &QpProblem, s: &Scaled, x: &DVector<f64>, y: &DVector<f64>) -> Candidate {
    let (z, y_eq, y_in) = s.unscale(x, y);
    let residuals = kkt_residuals(problem, &z, &y_eq, &y_in);
    Candidate {
        z,
        y_eq,
        y_in,
        residuals,
    }
}

/// Solve the equality-constrained problem on the guessed active set, with
/// iterative refinement against the unregularized KKT matrix. The guess is
/// then corrected a few times: violated rows join the set and rows with a
/// negative multiplier leave it.
fn polish(problem: &QpProblem, s: &Scaled, active: &[bool]) -> Option<Candidate> {
    let mut set = active.to_vec();
    let mut best: Option<Candidate> = None;
    let mut seen: Vec<Vec<bool>> = Vec::new();
    for _ in 0..POLISH_ROUNDS {
        let (x, y) = polish_step(s, &set)?;
        let cand = plain_candidate(problem, s, &x, &y);
        if best.as_ref().is_none_or(|b| cand.worst() < b.worst()) {
            best = Some(cand);
        }
        seen.push(set.clone());
        let cx = s.c_mul(&x);
        let mut next = set.clone();
        // one row at a time: several rows entering together are often
        // dependent, and multipliers of dependent rows are not unique
        let violated = (s.n_eq..set.len())
            .filter(|&i| !set[i] && cx[i] - s.u[i] > 1e-12 * s.e[i])
            .max_by(|&a, &b| ((cx[a] - s.u[a]) / s.e[a]).total_cmp(&((cx[b] - s.u[b]) / s.e[b])));
        if let Some(i) = violated {
            next[i] = true;
        } else {
            let negative = (s.n_eq..set.len())
                .filter(|&i| set[i] && y[i] < -1e-12 * s.e[i])
                .min_by(|&a, &b| (y[a] / s.e[a]).total_cmp(&(y[b] / s.e[b])));
            if let Some(i) = negative {
                next[i] = false;
            }
        }
        if next == set || seen.contains(&next) {
            break;
        }
        set = next;
    }
    best
}

fn polish_step(s: &Scaled, active: &[bool]) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = s.q.len();
    let rows: Vec<usize> = (0..active.len()).filter(|&i| active[i]).collect();
    let a = rows.len();
    let dim = n + a;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&s.p);
    for (k, &i) in rows.iter().enumerate() {
        for j in 0..n {
            let v = s.c[(i, j)];
            kkt[(n + k, j)] = v;
            kkt[(j, n + k)] = v;
        }
    }
    let exact = kkt.clone();
    for i in 0..n {
        kkt[(i, i)] += POLISH_DELTA;
    }
    for k in 0..a {
        kkt[(n + k, n + k)] -= POLISH_DELTA;
    }
    let lu = kkt.lu();
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-&s.q));
    for (k, &i) in rows.iter().enumerate() {
        rhs[n + k] = s.u[i];
    }
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..POLISH_REFINE {
        let r = &rhs - &exact * &sol;
        if r.amax() < 1e-14 {
            break;
        }
        sol += lu.solve(&r)?;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let mut y = DVector::zeros(active.len());
    for (k, &i) in rows.iter().enumerate() {
        y[i] = sol[n + k];
    }
    Some((x, y))
}

/// Primal infeasibility certificate on the multiplier increment: a
/// direction with `Cᵀδy ≈ 0` and negative support value.
fn primal_infeasible(problem: &QpProblem, s: &Scaled, dy_scaled: &DVector<f64>, eps: f64) -> bool {
    let mut dy = dy_scaled.component_mul(&s.e) / s.cost;
    for i in s.n_eq..dy.len() {
        dy[i] = dy[i].max(0.0);
    }
    let norm = dy.amax();
    if norm < 1e-12 {
        return false;
    }
    let n_eq = s.n_eq;
    let dy_eq = dy.rows(0, n_eq);
    let dy_in = dy.rows(n_eq, dy.len() - n_eq);
    let at_dy = problem.a_eq.tr_mul(&dy_eq) + problem.a_in.tr_mul(&dy_in);
    if at_dy.amax() > eps * norm {
        return false;
    }
    let support = problem.b_eq.dot(&dy_eq) + problem.b_in.dot(&dy_in);
    support < -eps * norm
}
