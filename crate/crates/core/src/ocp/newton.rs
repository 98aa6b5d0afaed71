//! Projected Newton iteration for box-constrained smooth problems.
//!
//! Variables near a bound whose gradient pushes outward are treated as
//! active and take a scaled gradient step; the remaining ones take a Newton
//! step with a finite-difference Hessian whose spectrum is made positive.
//! Steps are projected onto the box and accepted by an Armijo test along
//! the projection arc.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative decrease, in units of machine epsilon, below which a step counts
/// as stalled.
const STALL_FACTOR: f64 = 4.0;
const STALL_ITERATIONS: usize = 3;
/// Largest step (relative to the box width) still accepted as converged
/// when the objective has stalled.
const STALL_RESIDUAL: f64 = 1e-6;

pub(crate) struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub upper: f64,
    /// Accept a short full step that fails the Armijo test. Used when the
    /// gradient only approximates the merit function's gradient.
    pub residual_fallback: bool,
}

pub(crate) struct NewtonOutcome {
    pub x: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<f64>,
    pub message: Option<String>,
}

/// `eval` returns the merit value and the gradient; `curvature` is a known
/// positive lower bound on the Hessian spectrum, used as eigenvalue floor.
///
/// The reported residual is the length (max norm) of the projected Newton
/// step, i.e. the predicted distance to the stationary point.
pub(crate) fn projected_newton<F>(mut eval: F, x0: Vec<f64>, curvature: f64, opts: &NewtonOptions) -> NewtonOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let upper = opts.upper;
    let project = |v: f64| v.clamp(0.0, upper);
    let fd = 1e-5 * upper;

    let mut x: Vec<f64> = x0.into_iter().map(project).collect();
    let (mut f, mut g) = eval(&x);
    let mut history = vec![f];
    let mut eps = 0.01 * upper;
    let mut residual = f64::INFINITY;
    let mut stalled = 0;

    for iter in 0..opts.max_iter {
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return outcome(x, residual, iter, false, history, Some("non-finite objective or gradient".into()));
        }
        let hess = hessian(&mut eval, &x, fd);
        let diag: Vec<f64> = (0..n).map(|i| hess[(i, i)].max(curvature)).collect();
        let active: Vec<bool> = (0..n)
            .map(|i| (x[i] <= eps && g[i] > 0.0) || (x[i] >= upper - eps && g[i] < 0.0))
            .collect();
        let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();

        let mut dir: Vec<f64> = g.iter().zip(&diag).map(|(gi, di)| -gi / di).collect();
        if !free.is_empty() {
            let reduced = hess.select_rows(free.iter()).select_columns(free.iter());
            let step = regularised_solve(reduced, &free.iter().map(|&i| g[i]).collect::<Vec<_>>(), curvature);
            for (a, &i) in free.iter().enumerate() {
                dir[i] = step[a];
            }
        }
        residual = x.iter().zip(&dir).map(|(xi, di)| (project(xi + di) - xi).abs()).fold(0.0, f64::max);
        if residual < opts.tol {
            return outcome(x, residual, iter, true, history, None);
        }
        eps = residual.min(0.01 * upper);

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| project(xi + alpha * di)).collect();
            let predicted: f64 = (0..n)
                .map(|i| if active[i] { g[i] * (x[i] - trial[i]) } else { -alpha * g[i] * dir[i] })
                .sum();
            let (ft, gt) = eval(&trial);
            if ft.is_finite() && ft <= f - 1e-4 * predicted.max(0.0) {
                accepted = Some((trial, ft, gt));
                break;
            }
            if alpha == 1.0 && opts.residual_fallback && ft.is_finite() && residual < 1e-3 * upper {
                // near the root the approximate gradient no longer predicts the merit
                accepted = Some((trial, ft, gt));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, ft, gt)) = accepted else {
            return outcome(x, residual, iter, false, history, Some("line search failed".into()));
        };
        stalled = if f - ft <= STALL_FACTOR * f64::EPSILON * f.abs() { stalled + 1 } else { 0 };
        x = trial;
        f = ft;
        g = gt;
        history.push(f);
        if stalled >= STALL_ITERATIONS && residual < STALL_RESIDUAL * upper {
            let message = Some(format!("objective stalled at rounding level with step {residual:e}"));
            return outcome(x, residual, iter + 1, true, history, message);
        }
    }
    let message = Some(format!("iteration limit {} reached", opts.max_iter));
    outcome(x, residual, opts.max_iter, false, history, message)
}

fn outcome(
    x: Vec<f64>,
    residual: f64,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
    message: Option<String>,
) -> NewtonOutcome {
    NewtonOutcome { x, residual, iterations, converged, history, message }
}

/// Symmetrised central differences of the gradient.
fn hessian<F>(eval: &mut F, x: &[f64], step: f64) -> DMatrix<f64>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x.len();
    let mut hess = DMatrix::zeros(n, n);
    let mut probe = x.to_vec();
    for j in 0..n {
        probe[j] = x[j] + step;
        let (_, gp) = eval(&probe);
        probe[j] = x[j] - step;
        let (_, gm) = eval(&probe);
        probe[j] = x[j];
        for i in 0..n {
            hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    (&hess + hess.transpose()) * 0.5
}

/// Solve `H d = -g` after replacing each eigenvalue by `max(|λ|, floor)`.
fn regularised_solve(hess: DMatrix<f64>, g: &[f64], floor: f64) -> Vec<f64> {
    let eig = SymmetricEigen::new(hess);
    let q = &eig.eigenvectors;
    let rhs = q.transpose() * DVector::from_column_slice(g);
    let scaled = DVector::from_iterator(rhs.len(), rhs.iter().zip(eig.eigenvalues.iter()).map(|(r, l)| -r / l.abs().max(floor)));
    (q * scaled).iter().copied().collect()
}
