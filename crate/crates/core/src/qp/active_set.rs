//! Primal active-set method started from a feasible point. Each step
//! minimizes over the null space of the working constraints; directions of
//! zero curvature are followed until a constraint blocks them.

use super::QpProblem;
use nalgebra::{DMatrix, DVector};

const FEAS_TOL: f64 = 1e-9;
const RANK_TOL: f64 = 1e-10;

pub(super) struct Exact {
    pub z: DVector<f64>,
    pub y_eq: DVector<f64>,
    pub y_in: DVector<f64>,
}

/// Rows with unit norm; zero rows keep their (zero) data.
fn normalized(a: &DMatrix<f64>, b: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let norms = DVector::from_fn(a.nrows(), |i, _| a.row(i).norm());
    let mut a = a.clone();
    let mut b = b.clone();
    for i in 0..a.nrows() {
        if norms[i] > 0.0 {
            a.row_mut(i).unscale_mut(norms[i]);
            b[i] /= norms[i];
        }
    }
    (a, b, norms)
}

/// Orthonormal basis of the rows added so far, for independence tests.
struct Basis(Vec<DVector<f64>>);

impl Basis {
    fn try_add(&mut self, row: DVector<f64>) -> bool {
        let mut r = row.clone();
        for _ in 0..2 {
            for q in &self.0 {
                r -= q * q.dot(&r);
            }
        }
        let norm = r.norm();
        if norm > 1e-9 * row.norm().max(1e-300) {
            self.0.push(r / norm);
            true
        } else {
            false
        }
    }
}

pub(super) fn solve_from(problem: &QpProblem, start: &DVector<f64>, max_iter: usize) -> Option<Exact> {
    let n = problem.num_vars();
    let (ae, be, ne) = normalized(&problem.a_eq, &problem.b_eq);
    let (ai, bi, ni) = normalized(&problem.a_in, &problem.b_in);
    let me = ae.nrows();
    let mi = ai.nrows();
    let row = |k: usize| {
        if k < me {
            ae.row(k).transpose()
        } else {
            ai.row(k - me).transpose()
        }
    };

    let mut x = start.clone();
    let slack = &bi - &ai * &x;
    if (&ae * &x - &be).amax() > 1e-7 || slack.iter().any(|s| *s < -1e-7) {
        return None;
    }

    // equalities first, then the inequalities active at the start
    let mut basis = Basis(Vec::new());
    let mut work: Vec<usize> = Vec::new();
    for k in 0..me {
        if basis.try_add(row(k)) {
            work.push(k);
        }
    }
    for i in 0..mi {
        if slack[i] <= FEAS_TOL && basis.try_add(row(me + i)) {
            work.push(me + i);
        }
    }

    let scale = problem.p.amax().max(problem.q.amax()).max(1.0);
    for _ in 0..max_iter {
        let g = &problem.p * &x + &problem.q;
        let aw = DMatrix::from_fn(work.len(), n, |r, c| row(work[r])[c]);
        let z = null_space(&aw, n);

        let mut step: Option<(DVector<f64>, bool)> = None;
        if z.ncols() > 0 {
            let h = z.tr_mul(&problem.p) * &z;
            let gz = z.tr_mul(&g);
            let eig = h.symmetric_eigen();
            let top = eig.eigenvalues.amax().max(scale * 1e-12);
            let mut newton = DVector::zeros(z.ncols());
            let mut ray = DVector::zeros(z.ncols());
            for (k, lambda) in eig.eigenvalues.iter().enumerate() {
                let v = eig.eigenvectors.column(k);
                let c = v.dot(&gz);
                if *lambda > RANK_TOL * top {
                    newton -= v * (c / lambda);
                } else {
                    ray -= v * c;
                }
            }
            if ray.norm() > 1e-12 * scale {
                step = Some((&z * ray, true));
            } else {
                let p = &z * newton;
                if p.amax() > 1e-13 * (1.0 + x.amax()) {
                    step = Some((p, false));
                }
            }
        }

        match step {
            None => {
                // stationary on the working set: check multiplier signs
                let mu = multipliers(&aw, &g);
                let leave = (0..work.len())
                    .filter(|&r| work[r] >= me && mu[r] < -1e-10 * scale)
                    .min_by(|&a, &b| mu[a].total_cmp(&mu[b]));
                match leave {
                    Some(r) => {
                        work.remove(r);
                    }
                    None => {
                        let mut y_eq = DVector::zeros(me);
                        let mut y_in = DVector::zeros(mi);
                        for (r, &k) in work.iter().enumerate() {
                            if k < me {
                                y_eq[k] = mu[r] / ne[k].max(1e-300);
                            } else {
                                y_in[k - me] = mu[r].max(0.0) / ni[k - me].max(1e-300);
                            }
                        }
                        return Some(Exact { z: x, y_eq, y_in });
                    }
                }
            }
            Some((p, unbounded)) => {
                let ap = &ai * &p;
                let ax = &ai * &x;
                let mut alpha = if unbounded { f64::INFINITY } else { 1.0 };
                let mut blocking = None;
                let pn = p.norm();
                for i in 0..mi {
                    if work.contains(&(me + i)) || ap[i] <= 1e-14 * pn {
                        continue;
                    }
                    let a = ((bi[i] - ax[i]).max(0.0)) / ap[i];
                    if a < alpha {
                        alpha = a;
                        blocking = Some(i);
                    }
                }
                if !alpha.is_finite() {
                    return None;
                }
                x += p * alpha;
                if let Some(i) = blocking {
                    work.push(me + i);
                }
            }
        }
    }
    None
}

/// Orthonormal basis of `{p : A p = 0}` for `A` with at most `n` rows.
fn null_space(a: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let mut square = DMatrix::zeros(n, n);
    square.rows_mut(0, a.nrows()).copy_from(a);
    let svd = square.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let top = svd.singular_values.amax().max(1e-300);
    let rows: Vec<usize> = (0..n).filter(|&k| svd.singular_values[k] <= RANK_TOL * top).collect();
    DMatrix::from_fn(n, rows.len(), |r, c| v_t[(rows[c], r)])
}

/// Least-squares multipliers with `Aᵀ μ = −g`.
fn multipliers(a: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    if a.nrows() == 0 {
        return DVector::zeros(0);
    }
    let gram = a * a.transpose();
    let rhs = -(a * g);
    match gram.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => gram
            .pseudo_inverse(1e-12)
            .map(|pi| pi * rhs)
            .unwrap_or_else(|_| DVector::zeros(a.nrows())),
    }
}
