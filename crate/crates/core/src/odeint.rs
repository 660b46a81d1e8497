//! Explicit Runge–Kutta integration of `dz/dt = f(z, t)` with gradients by
//! either differentiating through the solver steps or by the adjoint
//! sensitivity method.
//!
//! States are `[1, dim]` rows. All solves run forward in time (`t1 >= t0`);
//! the adjoint pass integrates its augmented system in reversed time.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Right-hand side of an ODE, evaluable on a tape so vector-Jacobian products
/// come from reverse-mode differentiation.
pub trait OdeFunc {
    fn dim(&self) -> usize;

    /// Current parameter values, in the order `eval` expects them.
    fn params(&self) -> &[Rc<Tensor>];

    /// `f(z, t)` for `z: [1, dim]`; must be pure in `(z, t, params)`.
    fn eval<'t>(&self, z: Var<'t>, t: f64, params: &[Var<'t>]) -> Result<Var<'t>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Rk4,
    Dopri5,
}

/// How gradients flow through a solve recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradMode {
    /// Record every solver stage and differentiate the discretization.
    Backprop,
    /// Integrate the adjoint system backward on demand.
    Adjoint,
}

impl GradMode {
    pub fn default_for(method: Method) -> Self {
        match method {
            Method::Dopri5 => GradMode::Adjoint,
            Method::Euler | Method::Rk4 => GradMode::Backprop,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// First trial step for `Dopri5`; `0` selects one automatically.
    pub initial_step: f64,
    /// Step length for the fixed-step methods.
    pub step_size: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: Method::Dopri5,
            rtol: 1e-5,
            atol: 1e-7,
            max_steps: 10_000,
            initial_step: 0.0,
            step_size: 0.05,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0) || !(self.atol > 0.0) {
            return Err(Error::Config(format!(
                "solver tolerances must be positive (rtol={}, atol={})",
                self.rtol, self.atol
            )));
        }
        if self.max_steps < 1 {
            return Err(Error::Config("solver max_steps must be at least 1".into()));
        }
        if self.method != Method::Dopri5 && !(self.step_size > 0.0) {
            return Err(Error::Config("fixed-step solvers need step_size > 0".into()));
        }
        if self.initial_step < 0.0 {
            return Err(Error::Config("initial_step must be >= 0".into()));
        }
        Ok(())
    }

    pub fn fixed(method: Method, step_size: f64) -> Self {
        SolverConfig {
            method,
            step_size,
            ..Self::default()
        }
    }
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [&[f64]; 7] = [
    &[],
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
    &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const PI_BETA: f64 = 0.04;
const PI_ALPHA: f64 = 0.2 - 0.75 * PI_BETA;

/// The arithmetic a Runge–Kutta driver needs from its state representation.
trait Stages {
    type State: Clone;
    fn eval(&mut self, t: f64, y: &Self::State) -> Result<Self::State>;
    /// `y + Σ c·k`.
    fn combine(&mut self, y: &Self::State, terms: &[(f64, &Self::State)]) -> Result<Self::State>;
    fn values(&self, s: &Self::State) -> Vec<f64>;
    /// Side-effect-free evaluation used for step-size probing.
    fn probe(&mut self, t: f64, y: &[f64]) -> Result<Vec<f64>>;
}

fn check_finite(t: f64, y: &[f64]) -> Result<()> {
    if y.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { t })
    }
}

fn rms(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}

fn initial_step<S: Stages>(s: &mut S, t0: f64, y0: &[f64], f0: &[f64], span: f64, cfg: &SolverConfig) -> Result<f64> {
    if cfg.initial_step > 0.0 {
        return Ok(cfg.initial_step.min(span));
    }
    let scale: Vec<f64> = y0.iter().map(|y| cfg.atol + cfg.rtol * y.abs()).collect();
    let d0 = rms(y0.iter().zip(&scale).map(|(y, s)| y / s));
    let d1 = rms(f0.iter().zip(&scale).map(|(f, s)| f / s));
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let f1 = s.probe(t0 + h0, &y1)?;
    let d2 = rms(f1.iter().zip(f0).zip(&scale).map(|((a, b), s)| (a - b) / s)) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    Ok((100.0 * h0).min(h1).min(span))
}

fn drive<S: Stages>(s: &mut S, y0: S::State, t0: f64, t1: f64, cfg: &SolverConfig) -> Result<S::State> {
    cfg.validate()?;
    if !(t1 >= t0) {
        return Err(Error::Usage(format!("integration must move forward in time ({t0} -> {t1})")));
    }
    check_finite(t0, &s.values(&y0))?;
    if t1 == t0 {
        return Ok(y0);
    }
    let span = t1 - t0;
    match cfg.method {
        Method::Euler | Method::Rk4 => {
            let n = ((span / cfg.step_size) - 1e-9).ceil().max(1.0) as usize;
            if n > cfg.max_steps {
                return Err(Error::Integration {
                    reason: format!("{n} fixed steps exceed max_steps={}", cfg.max_steps),
                    t: t0,
                    state: s.values(&y0),
                });
            }
            let h = span / n as f64;
            let mut y = y0;
            for i in 0..n {
                let t = t0 + i as f64 * h;
                y = if cfg.method == Method::Euler {
                    let k1 = s.eval(t, &y)?;
                    s.combine(&y, &[(h, &k1)])?
                } else {
                    let k1 = s.eval(t, &y)?;
                    let y2 = s.combine(&y, &[(h / 2.0, &k1)])?;
                    let k2 = s.eval(t + h / 2.0, &y2)?;
                    let y3 = s.combine(&y, &[(h / 2.0, &k2)])?;
                    let k3 = s.eval(t + h / 2.0, &y3)?;
                    let y4 = s.combine(&y, &[(h, &k3)])?;
                    let k4 = s.eval(t + h, &y4)?;
                    s.combine(&y, &[(h / 6.0, &k1), (h / 3.0, &k2), (h / 3.0, &k3), (h / 6.0, &k4)])?
                };
                check_finite(t + h, &s.values(&y))?;
            }
            Ok(y)
        }
        Method::Dopri5 => {
            let mut t = t0;
            let mut y = y0;
            let mut k1 = s.eval(t, &y)?;
            let mut h = initial_step(s, t0, &s.values(&y), &s.values(&k1), span, cfg)?;
            let mut err_prev: f64 = 1e-4;
            let mut attempts = 0usize;
            while t < t1 {
                if attempts >= cfg.max_steps {
                    return Err(Error::Integration {
                        reason: format!("step budget max_steps={} exhausted", cfg.max_steps),
                        t,
                        state: s.values(&y),
                    });
                }
                attempts += 1;
                let last = h >= t1 - t;
                if last {
                    h = t1 - t;
                }
                let mut k: Vec<S::State> = Vec::with_capacity(7);
                k.push(k1.clone());
                for stage in 1..6 {
                    let terms: Vec<(f64, &S::State)> =
                        A[stage].iter().zip(&k).map(|(a, ki)| (h * a, ki)).collect();
                    let ys = s.combine(&y, &terms)?;
                    let ks = s.eval(t + C[stage] * h, &ys)?;
                    k.push(ks);
                }
                let terms: Vec<(f64, &S::State)> = A[6]
                    .iter()
                    .zip(&k)
                    .filter(|(a, _)| **a != 0.0)
                    .map(|(a, ki)| (h * a, ki))
                    .collect();
                let y_new = s.combine(&y, &terms)?;
                let y_new_v = s.values(&y_new);
                check_finite(t + h, &y_new_v)?;
                let k7 = s.eval(t + h, &y_new)?;
                k.push(k7);

                let y_v = s.values(&y);
                let kv: Vec<Vec<f64>> = k.iter().map(|ki| s.values(ki)).collect();
                let err = rms((0..y_v.len()).map(|i| {
                    let e: f64 = E.iter().zip(&kv).map(|(e, ki)| e * ki[i]).sum::<f64>() * h;
                    e / (cfg.atol + cfg.rtol * y_v[i].abs().max(y_new_v[i].abs()))
                }));
                if !err.is_finite() {
                    return Err(Error::Divergence { t });
                }
                if err <= 1.0 {
                    t = if last { t1 } else { t + h };
                    y = y_new;
                    k1 = k.pop().expect("k7");
                    let factor = if err == 0.0 {
                        MAX_FACTOR
                    } else {
                        SAFETY * err.powf(-PI_ALPHA) * err_prev.powf(PI_BETA)
                    };
                    h *= factor.clamp(MIN_FACTOR, MAX_FACTOR);
                    err_prev = err.max(1e-4);
                } else {
                    h *= (SAFETY * err.powf(-PI_ALPHA)).clamp(MIN_FACTOR, 1.0);
                }
                if h <= 1e-14 * t.abs().max(1.0) && t < t1 {
                    return Err(Error::Integration {
                        reason: "step size underflow".into(),
                        t,
                        state: s.values(&y),
                    });
                }
            }
            Ok(y)
        }
    }
}

/// Plain numeric states driven by a closure `(t, y) -> dy/dt`.
struct Numeric<F> {
    f: F,
}

impl<F: FnMut(f64, &[f64]) -> Result<Vec<f64>>> Stages for Numeric<F> {
    type State = Vec<f64>;

    fn eval(&mut self, t: f64, y: &Vec<f64>) -> Result<Vec<f64>> {
        (self.f)(t, y)
    }

    fn combine(&mut self, y: &Vec<f64>, terms: &[(f64, &Vec<f64>)]) -> Result<Vec<f64>> {
        let mut out = y.clone();
        for (c, k) in terms {
            for (o, x) in out.iter_mut().zip(k.iter()) {
                *o += c * x;
            }
        }
        Ok(out)
    }

    fn values(&self, s: &Vec<f64>) -> Vec<f64> {
        s.clone()
    }

    fn probe(&mut self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        (self.f)(t, y)
    }
}

/// Integrates `dy/dt = f(t, y)` from `t0` to `t1` on plain vectors.
pub fn integrate(
    f: impl FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    y0: &[f64],
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    drive(&mut Numeric { f }, y0.to_vec(), t0, t1, cfg)
}

/// `f(z, t)` evaluated on a scratch tape.
pub fn eval_func(f: &dyn OdeFunc, z: &[f64], t: f64) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let params: Vec<Var> = f.params().iter().map(|p| tape.constant_shared(Rc::clone(p))).collect();
    let zv = tape.constant(Tensor::row(z.to_vec()));
    let out = f.eval(zv, t, &params)?;
    let v = out.value();
    if v.len() != z.len() {
        return Err(Error::Config(format!(
            "ODE function returned {} values for a {}-dimensional state",
            v.len(),
            z.len()
        )));
    }
    Ok(v.data().to_vec())
}

/// `z(t1)` for `dz/dt = f(z, t)`, `z(t0) = z0`.
pub fn ode_solve(f: &dyn OdeFunc, z0: &[f64], t0: f64, t1: f64, cfg: &SolverConfig) -> Result<Vec<f64>> {
    if z0.len() != f.dim() {
        return Err(Error::Config(format!("state has {} values, ODE expects {}", z0.len(), f.dim())));
    }
    integrate(|t, z| eval_func(f, z, t), z0, t0, t1, cfg)
}

/// States at each of the ascending `times`, integrating segment by segment
/// from `(t0, z0)`.
pub fn ode_solve_at(
    f: &dyn OdeFunc,
    z0: &[f64],
    t0: f64,
    times: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(times.len());
    let (mut t, mut z) = (t0, z0.to_vec());
    for &ti in times {
        if ti < t {
            return Err(Error::Usage(format!("output times must be ascending ({ti} after {t})")));
        }
        z = ode_solve(f, &z, t, ti, cfg)?;
        t = ti;
        out.push(z.clone());
    }
    Ok(out)
}

/// Gradients of a loss with respect to the initial state and the parameters.
#[derive(Clone, Debug)]
pub struct AdjointGradients {
    pub z0: Vec<f64>,
    pub params: Vec<Tensor>,
}

impl AdjointGradients {
    pub fn params_flat(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data().iter().copied()).collect()
    }
}

/// Adjoint sensitivities: re-solves forward for `z(t1)`, then integrates
/// `(z, a, a_θ)` backward from `t1` to `t0` with `da/dt = -aᵀ ∂f/∂z` and
/// `da_θ/dt = -aᵀ ∂f/∂θ`, seeded with `a(t1) = loss_grad_at_t1`.
pub fn ode_solve_adjoint(
    f: &dyn OdeFunc,
    z0: &[f64],
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
    loss_grad_at_t1: &[f64],
) -> Result<AdjointGradients> {
    let z1 = ode_solve(f, z0, t0, t1, cfg)?;
    adjoint_from_end(f, &z1, t0, t1, cfg, loss_grad_at_t1)
}

fn adjoint_from_end(
    f: &dyn OdeFunc,
    z1: &[f64],
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
    loss_grad_at_t1: &[f64],
) -> Result<AdjointGradients> {
    let d = f.dim();
    if loss_grad_at_t1.len() != d {
        return Err(Error::Config(format!(
            "loss gradient has {} values, state has {d}",
            loss_grad_at_t1.len()
        )));
    }
    let shapes: Vec<[usize; 2]> = f.params().iter().map(|p| p.shape()).collect();
    let n_params: usize = f.params().iter().map(|p| p.len()).sum();
    let mut y0 = Vec::with_capacity(2 * d + n_params);
    y0.extend_from_slice(z1);
    y0.extend_from_slice(loss_grad_at_t1);
    y0.resize(2 * d + n_params, 0.0);

    // Reversed time s = -t so the driver still moves forward.
    let aug = |s: f64, y: &[f64]| -> Result<Vec<f64>> {
        let t = -s;
        let tape = Tape::new();
        let params: Vec<Var> = f.params().iter().map(|p| tape.var_shared(Rc::clone(p))).collect();
        let z = tape.var(Tensor::row(y[..d].to_vec()));
        let a = tape.constant(Tensor::row(y[d..2 * d].to_vec()));
        let fz = f.eval(z, t, &params)?;
        let vjp = fz.mul(a)?.sum();
        let grads = tape.backward(vjp)?;
        let mut out = Vec::with_capacity(y.len());
        out.extend(fz.value().data().iter().map(|x| -x));
        out.extend_from_slice(grads.wrt(z).data());
        for p in &params {
            out.extend_from_slice(grads.wrt(*p).data());
        }
        Ok(out)
    };
    let y_end = integrate(aug, &y0, -t1, -t0, cfg)?;
    let mut params = Vec::with_capacity(shapes.len());
    let mut off = 2 * d;
    for [r, c] in shapes {
        params.push(Tensor::new(r, c, y_end[off..off + r * c].to_vec())?);
        off += r * c;
    }
    Ok(AdjointGradients {
        z0: y_end[d..2 * d].to_vec(),
        params,
    })
}

/// Stages recorded on a tape.
struct OnTape<'a, 't> {
    f: &'a dyn OdeFunc,
    params: &'a [Var<'t>],
}

impl<'t> Stages for OnTape<'_, 't> {
    type State = Var<'t>;

    fn eval(&mut self, t: f64, y: &Var<'t>) -> Result<Var<'t>> {
        self.f.eval(*y, t, self.params)
    }

    fn combine(&mut self, y: &Var<'t>, terms: &[(f64, &Var<'t>)]) -> Result<Var<'t>> {
        let mut acc = *y;
        for (c, k) in terms {
            if *c != 0.0 {
                acc = acc.add(k.scale(*c))?;
            }
        }
        Ok(acc)
    }

    fn values(&self, s: &Var<'t>) -> Vec<f64> {
        s.value().data().to_vec()
    }

    fn probe(&mut self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        eval_func(self.f, y, t)
    }
}

/// Solves on a tape so the result participates in backpropagation. `params`
/// must hold the same values as `f.params()`.
pub fn ode_solve_on_tape<'t>(
    f: Rc<dyn OdeFunc>,
    z0: Var<'t>,
    params: &[Var<'t>],
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
    mode: GradMode,
) -> Result<Var<'t>> {
    if z0.shape() != [1, f.dim()] {
        return Err(Error::Config(format!(
            "ODE state must be [1, {}], got {:?}",
            f.dim(),
            z0.shape()
        )));
    }
    if params.len() != f.params().len() {
        return Err(Error::Config(format!(
            "ODE function has {} parameters, {} bound",
            f.params().len(),
            params.len()
        )));
    }
    match mode {
        GradMode::Backprop => drive(&mut OnTape { f: f.as_ref(), params }, z0, t0, t1, cfg),
        GradMode::Adjoint => {
            let z0v = z0.value().data().to_vec();
            let z1 = ode_solve(f.as_ref(), &z0v, t0, t1, cfg)?;
            if t1 == t0 {
                return Ok(z0);
            }
            let cfg = cfg.clone();
            let z1c = z1.clone();
            let backward = Box::new(move |g: &Tensor| -> Result<Vec<Tensor>> {
                let adj = adjoint_from_end(f.as_ref(), &z1c, t0, t1, &cfg, g.data())?;
                let mut out = vec![Tensor::row(adj.z0)];
                out.extend(adj.params);
                Ok(out)
            });
            let mut parents = vec![z0];
            parents.extend_from_slice(params);
            z0.tape().custom(Tensor::row(z1), &parents, backward)
        }
    }
}

/// Feed-forward dynamics `f(z, t) = W_L·tanh(…tanh(W_1·[z, t] + b_1)…) + b_L`.
pub struct MlpOde {
    dim: usize,
    params: Vec<Rc<Tensor>>,
}

impl MlpOde {
    /// Random weights, uniform in `±scale/sqrt(fan_in)`.
    pub fn random(dim: usize, hidden: &[usize], scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![dim + 1];
        sizes.extend_from_slice(hidden);
        sizes.push(dim);
        let mut params = Vec::new();
        for w in sizes.windows(2) {
            let bound = scale / (w[0] as f64).sqrt();
            let mut u = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
            params.push(Rc::new(Tensor::new(w[0], w[1], u(w[0] * w[1])).expect("shape")));
            params.push(Rc::new(Tensor::new(1, w[1], u(w[1])).expect("shape")));
        }
        MlpOde { dim, params }
    }

    pub fn with_params(&self, params: Vec<Tensor>) -> Self {
        MlpOde {
            dim: self.dim,
            params: params.into_iter().map(Rc::new).collect(),
        }
    }
}

impl OdeFunc for MlpOde {
    fn dim(&self) -> usize {
        self.dim
    }

    fn params(&self) -> &[Rc<Tensor>] {
        &self.params
    }

    fn eval<'t>(&self, z: Var<'t>, t: f64, params: &[Var<'t>]) -> Result<Var<'t>> {
        let tv = z.tape().constant(Tensor::scalar(t));
        let mut h = concat(&[z, tv], 1)?;
        let n = params.len() / 2;
        for i in 0..n {
            h = h.matmul(params[2 * i])?.add(params[2 * i + 1])?;
            if i + 1 < n {
                h = h.tanh();
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `dz/dt = a·z` with a learnable scalar `a`.
    struct Growth {
        a: Vec<Rc<Tensor>>,
    }

    impl Growth {
        fn new(a: f64) -> Self {
            Growth { a: vec![Rc::new(Tensor::scalar(a))] }
        }
    }

    impl OdeFunc for Growth {
        fn dim(&self) -> usize {
            1
        }
        fn params(&self) -> &[Rc<Tensor>] {
            &self.a
        }
        fn eval<'t>(&self, z: Var<'t>, _t: f64, p: &[Var<'t>]) -> Result<Var<'t>> {
            z.mul(p[0])
        }
    }

    struct Rotation;

    impl OdeFunc for Rotation {
        fn dim(&self) -> usize {
            2
        }
        fn params(&self) -> &[Rc<Tensor>] {
            &[]
        }
        fn eval<'t>(&self, z: Var<'t>, _t: f64, _p: &[Var<'t>]) -> Result<Var<'t>> {
            let m = z.tape().constant(Tensor::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]])?);
            z.matmul(m)
        }
    }

    #[test]
    fn exponential_growth_dopri5() {
        let z = ode_solve(&Growth::new(1.0), &[1.0], 0.0, 1.0, &SolverConfig::default()).unwrap();
        assert!((z[0] - std::f64::consts::E).abs() < 1e-4);
    }

    #[test]
    fn zero_length_interval_is_identity() {
        let f = MlpOde::random(3, &[4], 1.0, 1);
        for method in [Method::Euler, Method::Rk4, Method::Dopri5] {
            let cfg = SolverConfig { method, ..SolverConfig::default() };
            let z0 = [0.3, -0.2, 0.9];
            assert_eq!(ode_solve(&f, &z0, 2.0, 2.0, &cfg).unwrap(), z0);
        }
    }

    #[test]
    fn rotation_quarter_turn() {
        let z = ode_solve(&Rotation, &[1.0, 0.0], 0.0, std::f64::consts::FRAC_PI_2, &SolverConfig::default()).unwrap();
        assert!(z[0].abs() < 1e-4 && (z[1] - 1.0).abs() < 1e-4, "{z:?}");
    }

    #[test]
    fn rejects_backward_time_and_bad_config() {
        let cfg = SolverConfig::default();
        assert!(matches!(ode_solve(&Growth::new(1.0), &[1.0], 1.0, 0.0, &cfg), Err(Error::Usage(_))));
        let bad = SolverConfig { rtol: 0.0, ..cfg };
        assert!(matches!(ode_solve(&Growth::new(1.0), &[1.0], 0.0, 1.0, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn step_budget_exhaustion_reports_state() {
        let cfg = SolverConfig { max_steps: 2, initial_step: 1e-3, ..SolverConfig::default() };
        match ode_solve(&Growth::new(1.0), &[1.0], 0.0, 1.0, &cfg) {
            Err(Error::Integration { t, state, .. }) => {
                assert!(t > 0.0 && t < 1.0);
                assert_eq!(state.len(), 1);
            }
            other => panic!("expected integration error, got {other:?}"),
        }
    }

    #[test]
    fn blow_up_is_divergence() {
        // dz/dt = z^2 from z0=1 explodes at t=1.
        let r = integrate(|_, z| Ok(vec![z[0] * z[0] * 1e200]), &[1e200], 0.0, 1.0, &SolverConfig::fixed(Method::Euler, 0.1));
        assert!(matches!(r, Err(Error::Divergence { .. })));
    }

    #[test]
    fn adjoint_matches_closed_form_derivative() {
        // z(1) = e^a; dz(1)/da = e^a at a = 1.
        let f = Growth::new(1.0);
        let g = ode_solve_adjoint(&f, &[1.0], 0.0, 1.0, &SolverConfig::default(), &[1.0]).unwrap();
        let e = std::f64::consts::E;
        assert!((g.params[0].item() - e).abs() < 1e-3, "{}", g.params[0].item());
        assert!((g.z0[0] - e).abs() < 1e-3);
    }

    #[test]
    fn zero_seed_gives_zero_gradients() {
        let f = MlpOde::random(4, &[6], 1.0, 5);
        let g = ode_solve_adjoint(&f, &[0.1, 0.2, 0.3, 0.4], 0.0, 0.7, &SolverConfig::default(), &[0.0; 4]).unwrap();
        assert!(g.z0.iter().all(|x| *x == 0.0));
        assert!(g.params_flat().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn adjoint_matches_backprop_through_rk4() {
        let f = Rc::new(MlpOde::random(8, &[16], 1.0, 42));
        let z0: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
        let seed: Vec<f64> = (0..8).map(|i| (i as f64 * 0.91).cos()).collect();
        let (t0, t1) = (0.0, 1.0);

        let tape = Tape::new();
        let params: Vec<Var> = f.params().iter().map(|p| tape.var((**p).clone())).collect();
        let z0v = tape.var(Tensor::row(z0.clone()));
        let cfg = SolverConfig::fixed(Method::Rk4, 1.0 / 200.0);
        let z1 = ode_solve_on_tape(f.clone(), z0v, &params, t0, t1, &cfg, GradMode::Backprop).unwrap();
        let loss = z1.mul(tape.constant(Tensor::row(seed.clone()))).unwrap().sum();
        let grads = tape.backward(loss).unwrap();

        let tight = SolverConfig { rtol: 1e-9, atol: 1e-11, ..SolverConfig::default() };
        let adj = ode_solve_adjoint(f.as_ref(), &z0, t0, t1, &tight, &seed).unwrap();
        let bp_z0 = grads.wrt(z0v);
        let rel = crate::autodiff::max_relative_error(&bp_z0, &Tensor::row(adj.z0.clone()), 1e-3);
        assert!(rel < 1e-4, "z0 rel err {rel}");
        for (p, a) in params.iter().zip(&adj.params) {
            let rel = crate::autodiff::max_relative_error(&grads.wrt(*p), a, 1e-3);
            assert!(rel < 1e-4, "param rel err {rel}");
        }
    }

    #[test]
    fn on_tape_adjoint_mode_matches_backprop_mode() {
        let f = Rc::new(MlpOde::random(3, &[5], 1.0, 9));
        let grads_for = |mode: GradMode, cfg: &SolverConfig| {
            let tape = Tape::new();
            let params: Vec<Var> = f.params().iter().map(|p| tape.var((**p).clone())).collect();
            let z0 = tape.var(Tensor::row(vec![0.5, -0.1, 0.2]));
            let z1 = ode_solve_on_tape(f.clone(), z0, &params, 0.0, 0.8, cfg, mode).unwrap();
            let loss = z1.tanh().sum();
            let g = tape.backward(loss).unwrap();
            (g.wrt(z0), params.iter().map(|p| g.wrt(*p)).collect::<Vec<_>>())
        };
        let (a_z, a_p) = grads_for(GradMode::Adjoint, &SolverConfig::default());
        let (b_z, b_p) = grads_for(GradMode::Backprop, &SolverConfig::fixed(Method::Rk4, 0.01));
        assert!(crate::autodiff::max_relative_error(&a_z, &b_z, 1e-3) < 1e-3);
        for (a, b) in a_p.iter().zip(&b_p) {
            assert!(crate::autodiff::max_relative_error(a, b, 1e-3) < 1e-3);
        }
    }
}
