//! Linear modal analysis about a rest state.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::lbfgs::{lbfgs_minimize, LbfgsOptions};
use crate::subspace::AffineSubspace;
use crate::systems::SystemDef;

/// Local energy minimizer near `q0`. The gradient tolerance in `opts` is
/// scaled by `max(1, |grad E(q0)|_inf)`.
pub fn find_rest_state(sys: &SystemDef, q0: &[f64], c: &[f64], opts: &LbfgsOptions) -> Result<Vec<f64>> {
    Error::check_dim("initial guess", sys.n(), q0.len())?;
    let g0 = sys.gradient(q0, c);
    let scale = g0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let opts = LbfgsOptions {
        grad_tol: opts.grad_tol * scale,
        ..*opts
    };
    let res = lbfgs_minimize(|q| Ok(sys.energy_and_gradient(q, c)), q0, &opts)?;
    if !res.converged {
        return Err(Error::numerical(format!(
            "rest state search stopped after {} iterations with gradient residual {:.3e} (tolerance {:.3e})",
            res.iterations, res.grad_norm_inf, opts.grad_tol
        )));
    }
    Ok(res.x)
}

/// Smallest `d` eigenpairs of `H v = lambda M v`, ascending, with
/// `v_i^T M v_j = delta_ij` and the first nonzero entry of each vector positive.
pub fn generalized_eigs(h: &DMatrix<f64>, mass_diag: &[f64], d: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(Error::config("Hessian must be square"));
    }
    Error::check_dim("mass diagonal", n, mass_diag.len())?;
    if d == 0 || d > n {
        return Err(Error::config(format!("requested {d} modes of a {n}-dimensional system")));
    }
    if mass_diag.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::config("mass diagonal must be positive"));
    }
    let asym = (h - h.transpose()).amax();
    if asym > 1e-8 * h.amax().max(1.0) {
        return Err(Error::numerical(format!("Hessian is not symmetric (max asymmetry {asym:.3e})")));
    }
    let inv_sqrt: Vec<f64> = mass_diag.iter().map(|m| 1.0 / m.sqrt()).collect();
    let mut s = DMatrix::from_fn(n, n, |r, c| inv_sqrt[r] * h[(r, c)] * inv_sqrt[c]);
    s = (&s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values: Vec<f64> = order[..d].iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, d);
    for (col, &i) in order[..d].iter().enumerate() {
        let w = eig.eigenvectors.column(i);
        let mut v: Vec<f64> = (0..n).map(|r| inv_sqrt[r] * w[r]).collect();
        let norm = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12 * norm) {
            if *first < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        vecs.set_column(col, &nalgebra::DVector::from_vec(v));
    }
    Ok((values, vecs))
}

/// `A = sigma * V` from the `d` softest modes at the rest state near `q0`.
pub fn linear_modes(sys: &SystemDef, d: usize, sigma: f64, q0: &[f64], c: &[f64], opts: &LbfgsOptions) -> Result<AffineSubspace> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::config("sigma must be finite and nonnegative"));
    }
    sys.check_dense_cap()?;
    let b = find_rest_state(sys, q0, c, opts)?;
    let h = sys.hessian(&b, c)?;
    let (_, v) = generalized_eigs(&h, sys.mass_diag(), d)?;
    AffineSubspace::new(v * sigma, b, sigma)
}

/// `E(b) + tr(A^T H A) / 2`.
pub fn quadratic_loss(a: &DMatrix<f64>, h: &DMatrix<f64>, energy_at_b: f64) -> f64 {
    energy_at_b + 0.5 * (a.transpose() * h * a).trace()
}

/// Quadratic-energy loss of an affine subspace about its offset; errors if
/// `A^T M A = sigma^2 I` is violated.
pub fn quadratic_loss_oracle(sub: &AffineSubspace, sys: &SystemDef, c: &[f64]) -> Result<f64> {
    Error::check_dim("subspace offset", sys.n(), sub.b.len())?;
    let res = sub.constraint_residual(sys.mass_diag());
    if res > 1e-8 * sub.sigma.powi(2).max(1.0) {
        return Err(Error::config(format!("subspace violates A^T M A = sigma^2 I by {res:.3e}")));
    }
    let h = sys.hessian(&sub.b, c)?;
    Ok(quadratic_loss(&sub.a, &h, sys.energy(&sub.b, c)))
}
