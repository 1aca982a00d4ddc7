//! Reference implementations used only by integration tests.
//!
//! Each oracle solves the same optimisation problem as a production routine
//! through an unrelated algorithm, run to far tighter accuracy, and panics
//! if its own optimality certificate fails — so a disagreement in a test
//! points at the production code, not the oracle.

#![allow(dead_code)]

pub mod properties;

use complasso::model::ConstraintSet;
use nalgebra::{DMatrix, DVector};

/// Constrained ℓ1 oracle: minimise `(1/2n)‖y − Zβ‖² + λ‖β‖₁` subject to
/// `Cᵀβ = 0`, by Douglas–Rachford splitting between
/// `f(β) = (1/2n)‖y − Zβ‖² + ι{Cᵀβ = 0}` and `g(β) = λ‖β‖₁`.
///
/// The `f`-prox is an equality-constrained ridge problem solved exactly
/// through one LU factorisation of its KKT matrix; the `g`-prox is soft
/// thresholding. Returns the sparse iterate after the fixed-point residual
/// drops below `1e-13`.
pub fn constrained_lasso_oracle(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    constraints: &ConstraintSet,
    lambda: f64,
) -> DVector<f64> {
    let n = design.nrows();
    let p = design.ncols();
    let r = constraints.n_constraints();
    let c = constraints.matrix();
    let nf = n as f64;
    let step = 1.0;

    // KKT matrix for prox_{t f}: [[ZᵀZ/n + I/t, C], [Cᵀ, 0]].
    let mut kkt = DMatrix::<f64>::zeros(p + r, p + r);
    let gram = design.transpose() * design / nf;
    kkt.view_mut((0, 0), (p, p)).copy_from(&gram);
    for j in 0..p {
        kkt[(j, j)] += 1.0 / step;
    }
    if r > 0 {
        kkt.view_mut((0, p), (p, r)).copy_from(c);
        kkt.view_mut((p, 0), (r, p)).copy_from(&c.transpose());
    }
    let factor = kkt.lu();
    let zty = design.transpose() * response / nf;

    let prox_f = |v: &DVector<f64>| -> DVector<f64> {
        let mut rhs = DVector::<f64>::zeros(p + r);
        for j in 0..p {
            rhs[j] = zty[j] + v[j] / step;
        }
        let sol = factor.solve(&rhs).expect("oracle KKT system is singular");
        sol.rows(0, p).clone_owned()
    };
    let prox_g = |v: &DVector<f64>| -> DVector<f64> {
        v.map(|t| {
            let thr = step * lambda;
            if t > thr {
                t - thr
            } else if t < -thr {
                t + thr
            } else {
                0.0
            }
        })
    };

    let mut s = DVector::<f64>::zeros(p);
    let mut answer = None;
    for _ in 0..2_000_000 {
        let beta = prox_f(&s);
        let v = 2.0 * &beta - &s;
        let sparse = prox_g(&v);
        let gap = (&sparse - &beta).amax();
        s += &sparse - &beta;
        if gap <= 1e-13 {
            // The g-prox relation gives the exact subgradient witness
            // q = (v − sparse)/t ∈ λ∂‖sparse‖₁.
            let q = (&v - &sparse) / step;
            answer = Some((sparse, q));
            break;
        }
    }
    let (sparse, q) = answer.expect("reference splitting did not reach its fixed point");

    // KKT certificate for the original problem. With gradient
    // u = (1/n)Zᵀ(y − Zβ̂), stationarity demands u − q = Cν for some ν,
    // i.e. u − q has no component outside span(C); the subgradient pattern
    // of q and primal feasibility cover the remaining conditions.
    let residual = response - design * &sparse;
    let u = design.transpose() * &residual / nf;
    for j in 0..p {
        let ok = if sparse[j] != 0.0 {
            (q[j] - lambda * sparse[j].signum()).abs() <= 1e-9
        } else {
            q[j].abs() <= lambda + 1e-9
        };
        assert!(ok, "oracle subgradient invalid at coordinate {j}: q = {}, λ = {lambda}", q[j]);
    }
    let d = &u - &q;
    let outside = if r > 0 { (&d - c * (c.transpose() * &d)).amax() } else { d.amax() };
    assert!(outside <= 1e-9, "oracle stationarity residual {outside:.3e}");
    assert!(
        constraints.max_violation(&sparse) <= 1e-9,
        "oracle violates its equality constraints"
    );
    sparse
}

/// Row-program oracle: minimise `mᵀΣ̂m` subject to `‖Σ̂m − b‖_∞ ≤ γ`,
/// via a log-barrier interior-point method in the range basis of `Σ̂`,
/// finished by an active-set KKT polish that certifies exact optimality
/// (stationarity, multiplier signs, feasibility). Panics when the program
/// is infeasible or the certificate cannot be established.
///
/// Returns the minimal-norm representative (no null-space component), the
/// same normalisation the production solver uses.
pub fn row_qp_oracle(cov: &DMatrix<f64>, b: &DVector<f64>, gamma: f64) -> DVector<f64> {
    let p = cov.nrows();
    let eigen = cov.clone().symmetric_eigen();
    let max_eig = eigen.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let kept: Vec<usize> =
        (0..p).filter(|&i| eigen.eigenvalues[i] > max_eig * 1e-12).collect();
    let k = kept.len();
    let mut q = DMatrix::<f64>::zeros(p, k);
    let mut lam = DVector::<f64>::zeros(k);
    for (out, &idx) in kept.iter().enumerate() {
        q.set_column(out, &eigen.eigenvectors.column(idx));
        lam[out] = eigen.eigenvalues[idx];
    }
    // a maps range coefficients α to the achievable residual basis:
    // u = a·α − b with a = QΛ.
    let mut a = q.clone();
    for j in 0..k {
        let col = a.column(j) * lam[j];
        a.set_column(j, &col);
    }

    if k == 0 {
        assert!(b.amax() <= gamma, "oracle called on an infeasible zero-rank program");
        return DVector::zeros(p);
    }

    let alpha = barrier_phase1(&a, b, gamma)
        .unwrap_or_else(|| panic!("oracle: no strictly feasible point at γ = {gamma}"));
    let alpha = barrier_phase2(&a, &lam, b, gamma, alpha);
    let alpha = active_set_polish(&a, &lam, b, gamma, alpha, cov);
    &q * alpha
}

/// Finds α with `‖aα − b‖_∞ < γ` strictly, or None when infeasible:
/// minimises the auxiliary slack s over (α, s) with barrier Newton.
fn barrier_phase1(a: &DMatrix<f64>, b: &DVector<f64>, gamma: f64) -> Option<DVector<f64>> {
    let p = a.nrows();
    let k = a.ncols();
    let mut alpha = DVector::<f64>::zeros(k);
    let mut s = b.amax() - gamma + 1.0;
    let mut t = 1.0f64;

    for _ in 0..60 {
        // Newton iterations at fixed t on f(α,s) = t·s − Σ log(γ+s−uᵢ) − Σ log(γ+s+uᵢ).
        for _ in 0..100 {
            let u = a * &alpha - b;
            let mut grad_alpha = DVector::<f64>::zeros(k);
            let mut grad_s = t;
            let mut hess = DMatrix::<f64>::zeros(k + 1, k + 1);
            for i in 0..p {
                let hi = gamma + s - u[i];
                let lo = gamma + s + u[i];
                let d = 1.0 / hi - 1.0 / lo;
                let ds = -(1.0 / hi + 1.0 / lo);
                let w = 1.0 / (hi * hi) + 1.0 / (lo * lo);
                let ws = 1.0 / (hi * hi) - 1.0 / (lo * lo);
                let row = a.row(i);
                for x in 0..k {
                    grad_alpha[x] += d * row[x];
                    for y in 0..k {
                        hess[(x, y)] += w * row[x] * row[y];
                    }
                    hess[(x, k)] += -ws * row[x];
                    hess[(k, x)] += -ws * row[x];
                }
                grad_s += ds;
                hess[(k, k)] += w;
            }
            let mut grad = DVector::<f64>::zeros(k + 1);
            for x in 0..k {
                grad[x] = grad_alpha[x];
            }
            grad[k] = grad_s;
            let step = hess
                .clone()
                .cholesky()
                .map(|ch| ch.solve(&grad))
                .unwrap_or_else(|| hess.lu().solve(&grad).expect("phase-1 Newton system"));

            // Fraction-to-boundary damping.
            let mut h = 1.0f64;
            loop {
                let na = &alpha - h * step.rows(0, k);
                let ns = s - h * step[k];
                let nu = a * &na - b;
                let ok = (0..p).all(|i| gamma + ns - nu[i] > 0.0 && gamma + ns + nu[i] > 0.0);
                if ok {
                    alpha = na;
                    s = ns;
                    break;
                }
                h *= 0.5;
                if h < 1e-12 {
                    break;
                }
            }
            // Strictly feasible already? Done early.
            let u_now = a * &alpha - b;
            if s < 0.0 && u_now.amax() < gamma * (1.0 - 1e-9) {
                return Some(alpha);
            }
            let decrement = grad.dot(&step);
            if decrement.abs() < 1e-12 {
                break;
            }
        }
        if 2.0 * (p as f64) / t < 1e-10 {
            break;
        }
        t *= 10.0;
    }
    let u = a * &alpha - b;
    // Require a real margin: the follow-up barrier needs log(γ ± uᵢ) to be
    // well defined, so a knife-edge "feasible" point is useless here.
    if u.amax() < gamma * (1.0 - 1e-9) {
        Some(alpha)
    } else {
        None
    }
}

/// Barrier minimisation of `t·αᵀΛα − Σ log(γ² − uᵢ²)` from a strictly
/// feasible start, pushed far enough to identify the active set.
fn barrier_phase2(
    a: &DMatrix<f64>,
    lam: &DVector<f64>,
    b: &DVector<f64>,
    gamma: f64,
    mut alpha: DVector<f64>,
) -> DVector<f64> {
    let p = a.nrows();
    let k = a.ncols();
    let mut t = 1.0f64;
    while 2.0 * (p as f64) / t > 1e-9 {
        for _ in 0..100 {
            let u = a * &alpha - b;
            let mut grad = DVector::<f64>::zeros(k);
            let mut hess = DMatrix::<f64>::zeros(k, k);
            for x in 0..k {
                grad[x] = 2.0 * t * lam[x] * alpha[x];
                hess[(x, x)] = 2.0 * t * lam[x];
            }
            for i in 0..p {
                let hi = gamma - u[i];
                let lo = gamma + u[i];
                let d = 1.0 / hi - 1.0 / lo;
                let w = 1.0 / (hi * hi) + 1.0 / (lo * lo);
                let row = a.row(i);
                for x in 0..k {
                    grad[x] += d * row[x];
                    for y in 0..k {
                        hess[(x, y)] += w * row[x] * row[y];
                    }
                }
            }
            let step = hess
                .clone()
                .cholesky()
                .map(|ch| ch.solve(&grad))
                .unwrap_or_else(|| hess.lu().solve(&grad).expect("phase-2 Newton system"));
            let mut h = 1.0f64;
            loop {
                let na = &alpha - h * &step;
                let nu = a * &na - b;
                if nu.amax() < gamma {
                    alpha = na;
                    break;
                }
                h *= 0.5;
                if h < 1e-14 {
                    break;
                }
            }
            if grad.dot(&step).abs() < 1e-13 * (1.0 + t) {
                break;
            }
        }
        t *= 20.0;
    }
    alpha
}

/// Active-set KKT polish: solves the equality-constrained QP on the
/// barrier-identified active set, exchanging constraints until the exact
/// optimality certificate (multiplier signs + feasibility) holds.
fn active_set_polish(
    a: &DMatrix<f64>,
    lam: &DVector<f64>,
    b: &DVector<f64>,
    gamma: f64,
    alpha: DVector<f64>,
    cov: &DMatrix<f64>,
) -> DVector<f64> {
    let p = a.nrows();
    let k = a.ncols();
    let u = a * &alpha - b;
    // signs[i]: +1 upper constraint active, −1 lower, 0 inactive.
    let mut signs: Vec<i8> = (0..p)
        .map(|i| {
            if gamma - u[i] < 1e-5 * gamma.max(1e-12) {
                1
            } else if gamma + u[i] < 1e-5 * gamma.max(1e-12) {
                -1
            } else {
                0
            }
        })
        .collect();

    for _round in 0..200 {
        let active: Vec<usize> = (0..p).filter(|&i| signs[i] != 0).collect();
        let na = active.len();
        // Solve Σ̂_{A,A} ν = −2 rhs_A, α = −½ Q_Aᵀ ν (in basis terms:
        // stationarity 2Λα + (A_A)ᵀν = 0 with A_A = Q_A Λ).
        let mut alpha_new = DVector::<f64>::zeros(k);
        let mut nu = DVector::<f64>::zeros(na);
        if na > 0 {
            let mut sub = DMatrix::<f64>::zeros(na, na);
            let mut rhs = DVector::<f64>::zeros(na);
            for (x, &i) in active.iter().enumerate() {
                for (y, &j) in active.iter().enumerate() {
                    sub[(x, y)] = cov[(i, j)];
                }
                rhs[x] = -2.0 * (b[i] + f64::from(signs[i]) * gamma);
            }
            nu = sub
                .svd(true, true)
                .solve(&rhs, max_singular(cov) * 1e-13)
                .expect("polish KKT solve");
            for x in 0..k {
                let mut acc = 0.0;
                for (row, &i) in active.iter().enumerate() {
                    acc += a[(i, x)] / lam[x] * nu[row];
                }
                alpha_new[x] = -0.5 * acc;
            }
        }

        // Certificate: multiplier signs and inactive feasibility.
        let u_new = a * &alpha_new - b;
        let mut worst_violation = 0.0f64;
        let mut worst_index = usize::MAX;
        for i in 0..p {
            if signs[i] == 0 {
                let excess = u_new[i].abs() - gamma;
                if excess > worst_violation {
                    worst_violation = excess;
                    worst_index = i;
                }
            }
        }
        let mut wrong_sign: Option<usize> = None;
        for (row, &i) in active.iter().enumerate() {
            // Upper active needs μ⁺ = νᵢ ≥ 0; lower active needs νᵢ ≤ 0.
            let v = nu[row] * f64::from(signs[i]);
            if v < -1e-10 {
                wrong_sign = Some(i);
                break;
            }
        }

        if let Some(i) = wrong_sign {
            signs[i] = 0;
            continue;
        }
        if worst_violation > 1e-11 {
            signs[worst_index] = if u_new[worst_index] > 0.0 { 1 } else { -1 };
            continue;
        }
        return alpha_new;
    }
    panic!("oracle active-set polish did not settle");
}

fn max_singular(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())) * m.nrows() as f64
}

/// Equality-constrained least-squares oracle for the support-restricted
/// refit: minimises `‖y − Z_S β_S‖²` subject to the constraint rows
/// restricted to S, via an explicit null-space basis from an SVD. Returns
/// the full-length coefficient vector (zeros off the support).
pub fn refit_oracle(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    constraints: &ConstraintSet,
    support: &[usize],
) -> DVector<f64> {
    let p = design.ncols();
    let mut beta = DVector::<f64>::zeros(p);
    if support.is_empty() {
        return beta;
    }
    let n = design.nrows();
    let s = support.len();
    let mut design_s = DMatrix::<f64>::zeros(n, s);
    for (out, &j) in support.iter().enumerate() {
        design_s.set_column(out, &design.column(j));
    }

    let r = constraints.n_constraints();
    let coeff_s = if r == 0 {
        least_squares(&design_s, response)
    } else {
        // Rows of C restricted to the support give the induced constraints.
        let c = constraints.matrix();
        let mut c_s = DMatrix::<f64>::zeros(r, s);
        for (out, &j) in support.iter().enumerate() {
            for q in 0..r {
                c_s[(q, out)] = c[(j, q)];
            }
        }
        // Null-space basis of c_s from the eigenvectors of its Gram
        // matrix with (numerically) zero eigenvalues.
        let gram = c_s.transpose() * &c_s;
        let eigen = gram.symmetric_eigen();
        let max_eig = eigen.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let null_cols: Vec<usize> =
            (0..s).filter(|&i| eigen.eigenvalues[i] <= max_eig * 1e-12).collect();
        if null_cols.is_empty() {
            // Constraints pin every selected coefficient to zero.
            return beta;
        }
        let mut basis = DMatrix::<f64>::zeros(s, null_cols.len());
        for (out, &i) in null_cols.iter().enumerate() {
            basis.set_column(out, &eigen.eigenvectors.column(i));
        }
        let reduced = &design_s * &basis;
        &basis * least_squares(&reduced, response)
    };
    for (out, &j) in support.iter().enumerate() {
        beta[j] = coeff_s[out];
    }
    beta
}

fn least_squares(a: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    a.clone()
        .svd(true, true)
        .solve(y, max_singular(a) * 1e-13)
        .expect("least-squares solve")
}
