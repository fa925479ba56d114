//! Fixed-step classical Runge-Kutta integration shared by the forward model
//! and the discrete adjoint.

use crate::error::{Error, Result};

/// Autonomous or non-autonomous first-order system `y' = f(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);

    /// Called after every accepted step; the default only rejects non-finite states.
    fn check_state(&self, t: f64, y: &[f64]) -> Result<()> {
        if y.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Divergence { day: t })
        }
    }
}

/// Time of integrator node `n` for a grid starting at `t0` with `substeps` nodes per unit time.
///
/// Integer days are hit exactly, which keeps daily sampling free of drift.
#[inline]
pub fn node_time(t0: f64, n: usize, substeps: u32) -> f64 {
    t0 + n as f64 / substeps as f64
}

/// Scratch buffers for one RK4 step.
#[derive(Debug, Clone)]
pub struct Rk4Workspace {
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    pub k3: Vec<f64>,
    pub k4: Vec<f64>,
    pub stage: Vec<f64>,
}

impl Rk4Workspace {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            stage: vec![0.0; dim],
        }
    }
}

/// One classical RK4 step from `(t, y)` with step `h`, written into `out`.
///
/// When `stages` is given (length `3 * dim`) the inputs of stages 2, 3 and 4
/// are recorded there so that a reverse sweep can linearize about them.
pub fn rk4_step<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    h: f64,
    y: &[f64],
    out: &mut [f64],
    ws: &mut Rk4Workspace,
    mut stages: Option<&mut [f64]>,
) {
    let n = y.len();
    let half = 0.5 * h;

    sys.rhs(t, y, &mut ws.k1);
    for i in 0..n {
        ws.stage[i] = y[i] + half * ws.k1[i];
    }
    if let Some(st) = stages.as_deref_mut() {
        st[..n].copy_from_slice(&ws.stage);
    }
    sys.rhs(t + half, &ws.stage, &mut ws.k2);
    for i in 0..n {
        ws.stage[i] = y[i] + half * ws.k2[i];
    }
    if let Some(st) = stages.as_deref_mut() {
        st[n..2 * n].copy_from_slice(&ws.stage);
    }
    sys.rhs(t + half, &ws.stage, &mut ws.k3);
    for i in 0..n {
        ws.stage[i] = y[i] + h * ws.k3[i];
    }
    if let Some(st) = stages.as_deref_mut() {
        st[2 * n..3 * n].copy_from_slice(&ws.stage);
    }
    sys.rhs(t + h, &ws.stage, &mut ws.k4);

    let sixth = h / 6.0;
    for i in 0..n {
        out[i] = y[i] + sixth * (ws.k1[i] + 2.0 * ws.k2[i] + 2.0 * ws.k3[i] + ws.k4[i]);
    }
}

/// Integrate `steps` RK4 steps of size `1/substeps` starting from `t0`,
/// returning every `substeps`-th node (including the initial one).
pub fn integrate_sampled<S: OdeSystem + ?Sized>(
    sys: &S,
    y0: &[f64],
    t0: f64,
    units: usize,
    substeps: u32,
) -> Result<Vec<Vec<f64>>> {
    let dim = sys.dim();
    if y0.len() != dim {
        return Err(Error::Dimension(format!(
            "initial state has {} entries, system has {dim}",
            y0.len()
        )));
    }
    if substeps == 0 {
        return Err(Error::Config("substeps per day must be at least 1".into()));
    }
    let h = 1.0 / substeps as f64;
    let mut ws = Rk4Workspace::new(dim);
    let mut samples = Vec::with_capacity(units + 1);
    samples.push(y0.to_vec());
    let mut y = y0.to_vec();
    let mut next = vec![0.0; dim];
    let mut n = 0usize;
    for _ in 0..units {
        for _ in 0..substeps {
            let t = node_time(t0, n, substeps);
            rk4_step(sys, t, h, &y, &mut next, &mut ws, None);
            n += 1;
            sys.check_state(node_time(t0, n, substeps), &next)?;
            std::mem::swap(&mut y, &mut next);
        }
        samples.push(y.clone());
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay(f64);

    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = self.0 * y[0];
        }
    }

    #[test]
    fn node_times_hit_integers() {
        for substeps in [1u32, 3, 7, 10, 24] {
            for day in 0..50usize {
                assert_eq!(node_time(0.0, day * substeps as usize, substeps), day as f64);
            }
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let sys = Decay(-0.8);
        let exact = (-0.8f64 * 5.0).exp();
        let err = |substeps| {
            let out = integrate_sampled(&sys, &[1.0], 0.0, 5, substeps).unwrap();
            (out[5][0] - exact).abs()
        };
        let order = (err(4) / err(8)).log2();
        assert!(order > 3.8 && order < 4.2, "observed order {order}");
    }
}
