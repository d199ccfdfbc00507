//! Brute-force reference for small strictly convex QPs: enumerate every
//! subset of inequality rows as the active set, solve the resulting
//! equality-constrained KKT system, and keep the best point that is both
//! primal feasible and has nonnegative multipliers.

use nalgebra::{DMatrix, DVector};

pub struct OracleSolution {
    pub z: DVector<f64>,
    pub objective: f64,
}

pub fn enumerate_active_sets(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    a_in: &DMatrix<f64>,
    b_in: &DVector<f64>,
) -> Option<OracleSolution> {
    let n = q.len();
    let n_eq = b_eq.len();
    let n_in = b_in.len();
    assert!(n_in <= 16, "oracle is exponential in the inequality count");
    let mut best: Option<OracleSolution> = None;
    for mask in 0u32..(1 << n_in) {
        let act: Vec<usize> = (0..n_in).filter(|i| mask & (1 << i) != 0).collect();
        let k = n_eq + act.len();
        if k > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(p);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-q));
        for r in 0..k {
            let (row, b) = if r < n_eq {
                (a_eq.row(r).into_owned(), b_eq[r])
            } else {
                let i = act[r - n_eq];
                (a_in.row(i).into_owned(), b_in[i])
            };
            for j in 0..n {
                kkt[(n + r, j)] = row[j];
                kkt[(j, n + r)] = row[j];
            }
            rhs[n + r] = b;
        }
        let lu = kkt.lu();
        if lu.determinant().abs() < 1e-12 {
            continue;
        }
        let Some(sol) = lu.solve(&rhs) else { continue };
        let z = sol.rows(0, n).into_owned();
        let feasible = (a_in * &z - b_in).iter().all(|v| *v <= 1e-9) && (a_eq * &z - b_eq).amax() <= 1e-9;
        let dual_ok = (0..act.len()).all(|r| sol[n + n_eq + r] >= -1e-9);
        if !(feasible && dual_ok) {
            continue;
        }
        let objective = 0.5 * z.dot(&(p * &z)) + q.dot(&z);
        if best.as_ref().is_none_or(|b| objective < b.objective) {
            best = Some(OracleSolution { z, objective });
        }
    }
    best
}
