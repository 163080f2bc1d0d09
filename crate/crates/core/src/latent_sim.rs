//! Implicit Euler time stepping inside a subspace.
//!
//! Each step minimizes `|f(z) - q_bar|_M^2 / (2 h^2) + E(f(z))` over the
//! latent `z`, where `q_bar = 2 f(z_t) - f(z_{t-1})`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lbfgs::{lbfgs_minimize, LbfgsOptions};
use crate::subspace::SubspaceMap;
use crate::systems::SystemDef;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentSimState {
    pub z_curr: Vec<f64>,
    pub z_prev: Vec<f64>,
    pub h: f64,
    pub c: Vec<f64>,
}

impl LatentSimState {
    /// State at rest at `z0`.
    pub fn at_rest(z0: Vec<f64>, h: f64, c: Vec<f64>) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::config(format!("timestep must be positive, got {h}")));
        }
        Ok(LatentSimState {
            z_prev: z0.clone(),
            z_curr: z0,
            h,
            c,
        })
    }
}

fn map_condition<'a, F: SubspaceMap + ?Sized>(map: &F, c: &'a [f64]) -> &'a [f64] {
    if map.condition_dim() == 0 {
        &[]
    } else {
        c
    }
}

fn check(map: &(impl SubspaceMap + ?Sized), sys: &SystemDef, state: &LatentSimState) -> Result<()> {
    Error::check_dim("subspace output vs system", sys.n(), map.output_dim())?;
    Error::check_dim("current latent", map.latent_dim(), state.z_curr.len())?;
    Error::check_dim("previous latent", map.latent_dim(), state.z_prev.len())?;
    Error::check_dim("condition vector", sys.condition_dim(), state.c.len())?;
    if !(state.h > 0.0) {
        return Err(Error::config("timestep must be positive"));
    }
    Ok(())
}

/// `2 f(z_curr) - f(z_prev)`.
pub fn inertial_guess<F: SubspaceMap + ?Sized>(map: &F, state: &LatentSimState) -> Result<Vec<f64>> {
    let c = map_condition(map, &state.c);
    let a = map.eval(&state.z_curr, c)?;
    let b = map.eval(&state.z_prev, c)?;
    Ok(a.iter().zip(&b).map(|(a, b)| 2.0 * a - b).collect())
}

/// Value and latent gradient of the step objective.
pub fn step_objective<F: SubspaceMap + ?Sized>(
    map: &F,
    sys: &SystemDef,
    q_bar: &[f64],
    h: f64,
    c: &[f64],
    z: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let mc = map_condition(map, c);
    let q = map.eval(z, mc)?;
    let (e, mut cot) = sys.energy_and_gradient(&q, c);
    let inv_h2 = 1.0 / (h * h);
    let mut inertia = 0.0;
    for k in 0..q.len() {
        let r = q[k] - q_bar[k];
        let mr = sys.mass_diag()[k] * r;
        inertia += mr * r;
        cot[k] += inv_h2 * mr;
    }
    let (_, g) = map.vjp_latent(z, mc, &cot)?;
    Ok((0.5 * inv_h2 * inertia + e, g))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepReport {
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub grad_norm_inf: f64,
}

/// Advances one step. A step whose optimizer did not converge is still
/// returned, flagged in the report.
pub fn implicit_euler_step<F: SubspaceMap + ?Sized>(
    map: &F,
    sys: &SystemDef,
    state: &LatentSimState,
    opts: &LbfgsOptions,
) -> Result<(LatentSimState, StepReport)> {
    check(map, sys, state)?;
    let q_bar = inertial_guess(map, state)?;
    let warm: Vec<f64> = state.z_curr.iter().zip(&state.z_prev).map(|(a, b)| 2.0 * a - b).collect();
    let res = lbfgs_minimize(|z| step_objective(map, sys, &q_bar, state.h, &state.c, z), &warm, opts)?;
    if res.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("latent step produced a non-finite state"));
    }
    let next = LatentSimState {
        z_prev: state.z_curr.clone(),
        z_curr: res.x,
        h: state.h,
        c: state.c.clone(),
    };
    Ok((
        next,
        StepReport {
            iterations: res.iterations,
            converged: res.converged,
            objective: res.value,
            grad_norm_inf: res.grad_norm_inf,
        },
    ))
}

/// Kinetic energy of the finite-difference velocity plus potential energy.
pub fn discrete_energy<F: SubspaceMap + ?Sized>(map: &F, sys: &SystemDef, state: &LatentSimState) -> Result<f64> {
    let c = map_condition(map, &state.c);
    let q1 = map.eval(&state.z_curr, c)?;
    let q0 = map.eval(&state.z_prev, c)?;
    let v: Vec<f64> = q1.iter().zip(&q0).map(|(a, b)| (a - b) / state.h).collect();
    Ok(0.5 * sys.mass_norm_sq(&v) + sys.energy(&q1, &state.c))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub z: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub conditions: Vec<Vec<f64>>,
    pub reports: Vec<StepReport>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// Runs `steps` steps from `initial`. `condition_at(k)` supplies the
/// condition for step `k` (1-based); `None` keeps the current one.
pub fn simulate<F: SubspaceMap + ?Sized>(
    map: &F,
    sys: &SystemDef,
    initial: LatentSimState,
    steps: usize,
    opts: &LbfgsOptions,
    mut condition_at: impl FnMut(usize) -> Option<Vec<f64>>,
) -> Result<Trajectory> {
    check(map, sys, &initial)?;
    let mut traj = Trajectory::default();
    let record = |traj: &mut Trajectory, s: &LatentSimState| -> Result<()> {
        traj.q.push(map.eval(&s.z_curr, map_condition(map, &s.c))?);
        traj.z.push(s.z_curr.clone());
        traj.conditions.push(s.c.clone());
        Ok(())
    };
    record(&mut traj, &initial)?;
    let mut state = initial;
    for k in 1..=steps {
        if let Some(c) = condition_at(k) {
            Error::check_dim("per-step condition", sys.condition_dim(), c.len())?;
            state.c = c;
        }
        let (next, report) = implicit_euler_step(map, sys, &state, opts)?;
        state = next;
        traj.reports.push(report);
        record(&mut traj, &state)?;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::AffineSubspace;
    use crate::systems::quadratic::QuadraticTerm;
    use crate::systems::{finite_difference_gradient, gradient_rel_error};
    use nalgebra::DMatrix;

    fn spring() -> SystemDef {
        SystemDef::new("spring", vec![1.0], vec![0.0], vec![Box::new(QuadraticTerm::diagonal(0, vec![1.0], None))], vec![]).unwrap()
    }

    fn tight() -> LbfgsOptions {
        LbfgsOptions { grad_tol: 1e-12, ..Default::default() }
    }

    #[test]
    fn zero_velocity_guess() {
        let id = AffineSubspace::identity(2);
        let st = LatentSimState::at_rest(vec![0.3, -1.0], 0.1, vec![]).unwrap();
        assert_eq!(inertial_guess(&id, &st).unwrap(), vec![0.3, -1.0]);
    }

    #[test]
    fn affine_guess_is_linear() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, -1.0, 3.0, 0.5]);
        let sub = AffineSubspace::new(a.clone(), vec![1.0, 2.0, 3.0], 1.0).unwrap();
        let st = LatentSimState {
            z_curr: vec![0.5, 1.0],
            z_prev: vec![0.0, -1.0],
            h: 0.1,
            c: vec![],
        };
        let g = inertial_guess(&sub, &st).unwrap();
        let expect = sub.eval(&[1.0, 3.0], &[]).unwrap();
        for (x, y) in g.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn one_step_of_spring() {
        let st = LatentSimState::at_rest(vec![1.0], 0.1, vec![]).unwrap();
        let (next, rep) = implicit_euler_step(&AffineSubspace::identity(1), &spring(), &st, &tight()).unwrap();
        assert!(rep.converged);
        assert!((next.z_curr[0] - 1.0 / 1.01).abs() < 1e-10);
        assert_eq!(next.z_prev, vec![1.0]);
    }

    #[test]
    fn equilibrium_stays_put() {
        let st = LatentSimState::at_rest(vec![0.0], 0.05, vec![]).unwrap();
        let traj = simulate(&AffineSubspace::identity(1), &spring(), st, 20, &tight(), |_| None).unwrap();
        assert_eq!(traj.len(), 21);
        assert!(traj.z.iter().all(|z| z[0].abs() < 1e-12));
    }

    #[test]
    fn zero_steps() {
        let st = LatentSimState::at_rest(vec![0.5], 0.05, vec![]).unwrap();
        let traj = simulate(&AffineSubspace::identity(1), &spring(), st, 0, &tight(), |_| None).unwrap();
        assert_eq!(traj.z, vec![vec![0.5]]);
        assert!(traj.reports.is_empty());
    }

    #[test]
    fn objective_gradient_matches_fd() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, -0.4, 1.0, 0.3, 0.3]);
        let sub = AffineSubspace::new(a, vec![0.1, 0.0, -0.2], 1.0).unwrap();
        let sys = SystemDef::new(
            "q3",
            vec![1.0, 2.0, 0.5],
            vec![0.0; 3],
            vec![Box::new(QuadraticTerm::diagonal(0, vec![1.0, 5.0, 2.0], None))],
            vec![],
        )
        .unwrap();
        let qbar = [0.3, -0.1, 0.2];
        let z = [0.4, -0.7];
        let (_, g) = step_objective(&sub, &sys, &qbar, 0.1, &[], &z).unwrap();
        let fd = finite_difference_gradient(|z| step_objective(&sub, &sys, &qbar, 0.1, &[], z).unwrap().0, &z, 1e-6);
        assert!(gradient_rel_error(&g, &fd, 1e-6) < 1e-5);
    }
}
