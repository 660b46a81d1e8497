//! Aggregation of link representations into a global latent state, its
//! continuous-time evolution, and the Gaussian head over it.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Linear, ParamId, ParamStore, Tensor, Var};
use crate::decoder_loss::GaussianDiag;
use crate::encoder::TimeEncoding;
use crate::error::{Error, Result};
use crate::odeint::{ode_solve_on_tape, GradMode, OdeFunc, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    /// Mean pooling, stochastic latent.
    Np,
    /// Mean pooling, deterministic code.
    Cnp,
    /// Recurrent aggregation, distribution fixed after the context.
    Snp,
    /// Recurrent aggregation evolved forward by a neural ODE.
    Gsnop,
}

impl AggregatorKind {
    pub const ALL: [AggregatorKind; 4] = [
        AggregatorKind::Np,
        AggregatorKind::Cnp,
        AggregatorKind::Snp,
        AggregatorKind::Gsnop,
    ];

    pub fn is_sequential(self) -> bool {
        matches!(self, AggregatorKind::Snp | AggregatorKind::Gsnop)
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregatorKind::Np => "np",
            AggregatorKind::Cnp => "cnp",
            AggregatorKind::Snp => "snp",
            AggregatorKind::Gsnop => "gsnop",
        })
    }
}

impl FromStr for AggregatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "np" => Ok(AggregatorKind::Np),
            "cnp" => Ok(AggregatorKind::Cnp),
            "snp" => Ok(AggregatorKind::Snp),
            "gsnop" => Ok(AggregatorKind::Gsnop),
            other => Err(Error::Config(format!("unknown variant `{other}` (np, cnp, snp, gsnop)"))),
        }
    }
}

/// Global representation `r` current at `t_ref` (normalized time).
#[derive(Clone, Copy)]
pub struct LatentState<'t> {
    pub r: Var<'t>,
    pub t_ref: f64,
}

/// GRU cell in the usual reset/update/candidate form.
#[derive(Clone, Debug)]
pub struct Gru {
    pub x_reset: Linear,
    pub x_update: Linear,
    pub x_cand: Linear,
    pub h_reset: Linear,
    pub h_update: Linear,
    pub h_cand: Linear,
}

impl Gru {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut impl Rng) -> Self {
        let mut lin = |part: &str| Linear::new(store, &format!("{name}.{part}"), dim, dim, rng);
        Gru {
            x_reset: lin("x_reset"),
            x_update: lin("x_update"),
            x_cand: lin("x_cand"),
            h_reset: lin("h_reset"),
            h_update: lin("h_update"),
            h_cand: lin("h_cand"),
        }
    }

    pub fn step<'t>(&self, p: &Bound<'t>, x: Var<'t>, h: Var<'t>) -> Result<Var<'t>> {
        let reset = self.x_reset.forward(p, x)?.add(self.h_reset.forward(p, h)?)?.sigmoid();
        let update = self.x_update.forward(p, x)?.add(self.h_update.forward(p, h)?)?.sigmoid();
        let cand = self
            .x_cand
            .forward(p, x)?
            .add(reset.mul(self.h_cand.forward(p, h)?)?)?
            .tanh();
        // (1 - u) * n + u * h = n + u * (h - n)
        cand.add(update.mul(h.sub(cand)?)?)
    }
}

/// `f(r, t) = tanh(W₂ tanh(W₁ (r + t_emb(t)) + b₁) + b₂)`.
#[derive(Clone, Debug)]
pub struct OdeNet {
    pub time: TimeEncoding,
    pub hidden: Linear,
    pub out: Linear,
}

impl OdeNet {
    pub fn new(store: &mut ParamStore, time: TimeEncoding, dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        OdeNet {
            time,
            hidden: Linear::new(store, "ode.hidden", dim, hidden, rng),
            out: Linear::new(store, "ode.out", hidden, dim, rng),
        }
    }

    fn param_ids(&self) -> [ParamId; 6] {
        [
            self.time.omega,
            self.time.phase,
            self.hidden.w,
            self.hidden.b,
            self.out.w,
            self.out.b,
        ]
    }

    /// Bound parameter vars in [`LatentDynamics`] order.
    pub fn bound_params<'t>(&self, p: &Bound<'t>) -> Vec<Var<'t>> {
        self.param_ids().iter().map(|&id| p[id]).collect()
    }

    /// Snapshot of the dynamics at the bound parameter values.
    pub fn dynamics(&self, p: &Bound<'_>) -> LatentDynamics {
        LatentDynamics {
            dim: self.time.dim,
            params: self.param_ids().iter().map(|&id| p[id].value()).collect(),
        }
    }

    pub fn dynamics_from_store(&self, store: &ParamStore) -> LatentDynamics {
        LatentDynamics {
            dim: self.time.dim,
            params: self.param_ids().iter().map(|&id| Rc::new(store.get(id).clone())).collect(),
        }
    }
}

pub struct LatentDynamics {
    dim: usize,
    params: Vec<Rc<Tensor>>,
}

impl OdeFunc for LatentDynamics {
    fn dim(&self) -> usize {
        self.dim
    }

    fn params(&self) -> &[Rc<Tensor>] {
        &self.params
    }

    fn eval<'t>(&self, z: Var<'t>, t: f64, p: &[Var<'t>]) -> Result<Var<'t>> {
        let tv = z.tape().constant(Tensor::scalar(t));
        let emb = tv.matmul(p[0])?.add(p[1])?.cos();
        let h = z.add(emb)?.matmul(p[2])?.add(p[3])?.tanh();
        Ok(h.matmul(p[4])?.add(p[5])?.tanh())
    }
}

/// `χ = ReLU(W r + b)`, `μ = ReLU(W_μ χ + b_μ)`, `σ = 0.1 + 0.9·sigmoid(W_σ χ + b_σ)`.
#[derive(Clone, Debug)]
pub struct DistributionHead {
    pub chi: Linear,
    pub mu: Linear,
    pub sigma: Linear,
}

impl DistributionHead {
    pub fn new(store: &mut ParamStore, dim: usize, rng: &mut impl Rng) -> Self {
        DistributionHead {
            chi: Linear::new(store, "head.chi", dim, dim, rng),
            mu: Linear::new(store, "head.mu", dim, dim, rng),
            sigma: Linear::new(store, "head.sigma", dim, dim, rng),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, r: Var<'t>) -> Result<GaussianDiag<'t>> {
        let chi = self.chi.forward(p, r)?.relu();
        let mu = self.mu.forward(p, chi)?.relu();
        let sigma = self.sigma.forward(p, chi)?.sigmoid().scale(0.9).add_scalar(0.1);
        Ok(GaussianDiag { mu, sigma })
    }
}

/// Prior over the latent, or the deterministic code of the conditional variant.
#[derive(Clone, Copy)]
pub enum LatentCode<'t> {
    Stochastic(GaussianDiag<'t>),
    Deterministic(Var<'t>),
}

#[derive(Clone, Debug)]
pub struct LatentModule {
    pub kind: AggregatorKind,
    pub dim: usize,
    /// Seed state for an empty context.
    pub r0: ParamId,
    pub gru: Gru,
    pub ode: OdeNet,
    pub head: DistributionHead,
}

impl LatentModule {
    pub fn new(
        store: &mut ParamStore,
        kind: AggregatorKind,
        time: TimeEncoding,
        ode_hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let dim = time.dim;
        LatentModule {
            kind,
            dim,
            r0: store.add_uniform("latent.r0", 1, dim, dim, rng),
            gru: Gru::new(store, "latent.gru", dim, rng),
            ode: OdeNet::new(store, time, dim, ode_hidden, rng),
            head: DistributionHead::new(store, dim, rng),
        }
    }

    /// Row mean of `reps`, or `r0` when there are none.
    pub fn aggregate_mean<'t>(&self, p: &Bound<'t>, reps: Option<Var<'t>>) -> Var<'t> {
        match reps {
            Some(r) if r.shape()[0] > 0 => r.mean_rows(),
            _ => p[self.r0],
        }
    }

    /// Folds `reps` into `state` one time bucket at a time. Rows sharing a
    /// timestamp form a bucket; without a prior state the first bucket's mean
    /// initializes it.
    pub fn aggregate_sequential<'t>(
        &self,
        p: &Bound<'t>,
        state: Option<LatentState<'t>>,
        reps: Var<'t>,
        times: &[f64],
    ) -> Result<Option<LatentState<'t>>> {
        if reps.shape()[0] != times.len() {
            return Err(Error::Config(format!(
                "{} representations but {} timestamps",
                reps.shape()[0],
                times.len()
            )));
        }
        if let Some(w) = times.windows(2).find(|w| w[1] < w[0]) {
            return Err(Error::Usage(format!("buckets out of order: {} after {}", w[1], w[0])));
        }
        if let (Some(s), Some(&t)) = (state, times.first()) {
            if t < s.t_ref {
                return Err(Error::Usage(format!("bucket at {t} precedes state time {}", s.t_ref)));
            }
        }
        if times.is_empty() {
            return Ok(state);
        }
        let mut offsets = vec![0];
        let mut bucket_t = vec![times[0]];
        for i in 1..times.len() {
            if times[i] != times[i - 1] {
                offsets.push(i);
                bucket_t.push(times[i]);
            }
        }
        offsets.push(times.len());
        let means = reps.segment_mean(&offsets)?;
        let mut state = state;
        for (b, &t) in bucket_t.iter().enumerate() {
            let x = if bucket_t.len() == 1 { means } else { means.gather_rows(&[b])? };
            let r = match state {
                None => x,
                Some(s) => self.gru.step(p, x, s.r)?,
            };
            state = Some(LatentState { r, t_ref: t });
        }
        Ok(state)
    }

    /// Integrates `dr/dt = f(r, t)` from `state.t_ref` to `target_t`.
    pub fn evolve_ode<'t>(
        &self,
        p: &Bound<'t>,
        state: LatentState<'t>,
        target_t: f64,
        solver: &SolverConfig,
        mode: GradMode,
    ) -> Result<LatentState<'t>> {
        if target_t < state.t_ref {
            return Err(Error::Usage(format!(
                "cannot evolve backward from {} to {target_t}",
                state.t_ref
            )));
        }
        let f = Rc::new(self.ode.dynamics(p));
        let params = self.ode.bound_params(p);
        let r = ode_solve_on_tape(f, state.r, &params, state.t_ref, target_t, solver, mode)?;
        Ok(LatentState { r, t_ref: target_t })
    }

    /// Context state before any time evolution: the pooled mean for the
    /// mean-aggregating variants, the recurrent state otherwise.
    pub fn context_state<'t>(
        &self,
        p: &Bound<'t>,
        reps: Option<Var<'t>>,
        times: &[f64],
    ) -> Result<LatentState<'t>> {
        let t_last = times.last().copied().unwrap_or(0.0);
        match (self.kind.is_sequential(), reps) {
            (true, Some(r)) if !times.is_empty() => {
                let s = self.aggregate_sequential(p, None, r, times)?;
                Ok(s.expect("nonempty context"))
            }
            (_, reps) => Ok(LatentState {
                r: self.aggregate_mean(p, reps),
                t_ref: t_last,
            }),
        }
    }

    /// Prior for targets at `target_t` given the context state.
    pub fn prior_from_state<'t>(
        &self,
        p: &Bound<'t>,
        state: LatentState<'t>,
        target_t: f64,
        solver: &SolverConfig,
        mode: GradMode,
    ) -> Result<LatentCode<'t>> {
        Ok(match self.kind {
            AggregatorKind::Cnp => LatentCode::Deterministic(state.r),
            AggregatorKind::Np | AggregatorKind::Snp => LatentCode::Stochastic(self.head.forward(p, state.r)?),
            AggregatorKind::Gsnop => {
                let t = target_t.max(state.t_ref);
                let evolved = self.evolve_ode(p, state, t, solver, mode)?;
                LatentCode::Stochastic(self.head.forward(p, evolved.r)?)
            }
        })
    }

    /// Context reps (ascending `times`) to the prior at `target_t`.
    pub fn build_prior<'t>(
        &self,
        p: &Bound<'t>,
        reps: Option<Var<'t>>,
        times: &[f64],
        target_t: f64,
        solver: &SolverConfig,
        mode: GradMode,
    ) -> Result<(LatentState<'t>, LatentCode<'t>)> {
        let state = self.context_state(p, reps, times)?;
        let code = self.prior_from_state(p, state, target_t, solver, mode)?;
        Ok((state, code))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::odeint::Method;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn module(kind: AggregatorKind, dim: usize) -> (ParamStore, LatentModule) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let time = TimeEncoding::new(&mut store, "time", dim);
        let m = LatentModule::new(&mut store, kind, time, dim, &mut rng);
        (store, m)
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn mean_aggregation_cases() {
        let (store, m) = module(AggregatorKind::Np, 3);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let one = tape.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
        assert_eq!(m.aggregate_mean(&p, Some(one)).value().data(), &[1.0, 2.0, 3.0]);
        let opp = tape.constant(Tensor::from_rows(&[vec![1.0, -2.0, 0.5], vec![-1.0, 2.0, -0.5]]).unwrap());
        assert_eq!(m.aggregate_mean(&p, Some(opp)).value().data(), &[0.0, 0.0, 0.0]);
        let a = random(5, 3, 1);
        let rows: Vec<Vec<f64>> = (0..5).rev().map(|i| a.row_slice(i).to_vec()).collect();
        let fwd = m.aggregate_mean(&p, Some(tape.constant(a))).value();
        let rev = m.aggregate_mean(&p, Some(tape.constant(Tensor::from_rows(&rows).unwrap()))).value();
        assert!(fwd.max_abs_diff(&rev) < 1e-15);
        assert_eq!(m.aggregate_mean(&p, None).value().data(), store.get(m.r0).data());
    }

    #[test]
    fn zero_gru_maps_zero_to_zero() {
        let (mut store, m) = module(AggregatorKind::Snp, 4);
        for id in store.ids().collect::<Vec<_>>() {
            if store.name(id).starts_with("latent.gru") {
                let [r, c] = store.get(id).shape();
                *store.get_mut(id) = Tensor::zeros(r, c);
            }
        }
        let tape = Tape::new();
        let p = store.bind(&tape);
        let z = tape.constant(Tensor::zeros(1, 4));
        assert_eq!(m.gru.step(&p, z, z).unwrap().value().data(), &[0.0; 4]);
    }

    #[test]
    fn sequential_first_bucket_is_its_mean_and_order_matters() {
        let (store, m) = module(AggregatorKind::Snp, 4);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let reps = tape.constant(random(3, 4, 2));
        let s = m.aggregate_sequential(&p, None, reps, &[0.5, 0.5, 0.5]).unwrap().unwrap();
        assert!(s.r.value().max_abs_diff(&reps.mean_rows().value()) < 1e-15);
        assert_eq!(s.t_ref, 0.5);

        let a = random(1, 4, 3);
        let b = random(1, 4, 4);
        let ab = tape.constant(a.clone()).concat(tape.constant(b.clone()), 0).unwrap();
        let ba = tape.constant(b).concat(tape.constant(a), 0).unwrap();
        let r1 = m.aggregate_sequential(&p, None, ab, &[0.1, 0.2]).unwrap().unwrap().r.value();
        let r2 = m.aggregate_sequential(&p, None, ba, &[0.1, 0.2]).unwrap().unwrap().r.value();
        assert!(r1.max_abs_diff(&r2) > 1e-6);

        let err = m.aggregate_sequential(&p, None, ab, &[0.2, 0.1]);
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn ode_zero_horizon_and_zero_dynamics() {
        let (mut store, m) = module(AggregatorKind::Gsnop, 4);
        let cfg = SolverConfig::default();
        {
            let tape = Tape::new();
            let p = store.bind(&tape);
            let r = tape.constant(random(1, 4, 5));
            let s = LatentState { r, t_ref: 0.3 };
            let out = m.evolve_ode(&p, s, 0.3, &cfg, GradMode::Adjoint).unwrap();
            assert_eq!(out.r.value().data(), r.value().data());
        }
        for id in [m.ode.out.w, m.ode.out.b] {
            let [r, c] = store.get(id).shape();
            *store.get_mut(id) = Tensor::zeros(r, c);
        }
        let tape = Tape::new();
        let p = store.bind(&tape);
        let r = tape.constant(random(1, 4, 6));
        let out = m.evolve_ode(&p, LatentState { r, t_ref: 0.0 }, 5.0, &cfg, GradMode::Adjoint).unwrap();
        assert_eq!(out.r.value().data(), r.value().data());
    }

    #[test]
    fn ode_displacement_bounded_by_horizon() {
        let (store, m) = module(AggregatorKind::Gsnop, 6);
        let cfg = SolverConfig::fixed(Method::Rk4, 0.01);
        for seed in 0..20 {
            let tape = Tape::new();
            let p = store.bind(&tape);
            let r = tape.constant(random(1, 6, 100 + seed));
            let dt = 0.05 * (seed + 1) as f64;
            let out = m.evolve_ode(&p, LatentState { r, t_ref: 0.1 }, 0.1 + dt, &cfg, GradMode::Backprop).unwrap();
            let moved = out.r.value().max_abs_diff(&r.value());
            assert!(moved <= dt + 1e-12, "{moved} > {dt}");
        }
    }

    #[test]
    fn ode_is_consistent_under_splitting() {
        let (store, m) = module(AggregatorKind::Gsnop, 5);
        let cfg = SolverConfig::fixed(Method::Rk4, 0.01);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let r = tape.constant(random(1, 5, 9));
        let s0 = LatentState { r, t_ref: 0.0 };
        let direct = m.evolve_ode(&p, s0, 0.4, &cfg, GradMode::Backprop).unwrap();
        let mid = m.evolve_ode(&p, s0, 0.2, &cfg, GradMode::Backprop).unwrap();
        let split = m.evolve_ode(&p, mid, 0.4, &cfg, GradMode::Backprop).unwrap();
        let tol = 10.0 * (cfg.rtol + cfg.atol);
        assert!(direct.r.value().max_abs_diff(&split.r.value()) < tol);
    }

    #[test]
    fn head_bounds_and_neutral_sigma() {
        let (mut store, m) = module(AggregatorKind::Np, 8);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let d = m.head.forward(&p, tape.constant(random(200, 8, 7).map(|x| 5.0 * x))).unwrap();
        assert!(d.sigma.value().data().iter().all(|&s| s > 0.1 && s < 1.0));
        assert!(d.mu.value().data().iter().all(|&u| u >= 0.0));
        for id in [m.head.sigma.w, m.head.sigma.b] {
            let [r, c] = store.get(id).shape();
            *store.get_mut(id) = Tensor::zeros(r, c);
        }
        let tape = Tape::new();
        let p = store.bind(&tape);
        let d = m.head.forward(&p, tape.constant(random(1, 8, 8))).unwrap();
        assert!(d.sigma.value().data().iter().all(|&s| s == 0.55));
    }

    #[test]
    fn prior_depends_on_target_time_only_for_ode_variant() {
        let cfg = SolverConfig::default();
        let times = [0.1, 0.2, 0.2, 0.3];
        let prior_at = |kind, target| {
            let (store, m) = module(kind, 6);
            let tape = Tape::new();
            let p = store.bind(&tape);
            let reps = tape.constant(random(4, 6, 10));
            match m.build_prior(&p, Some(reps), &times, target, &cfg, GradMode::Adjoint).unwrap().1 {
                LatentCode::Stochastic(g) => (g.mu.value().data().to_vec(), g.sigma.value().data().to_vec()),
                LatentCode::Deterministic(_) => unreachable!(),
            }
        };
        assert_eq!(prior_at(AggregatorKind::Snp, 0.5), prior_at(AggregatorKind::Snp, 0.9));
        assert_ne!(prior_at(AggregatorKind::Gsnop, 0.5), prior_at(AggregatorKind::Gsnop, 0.9));
        assert_eq!(prior_at(AggregatorKind::Gsnop, 0.3), prior_at(AggregatorKind::Snp, 0.3));
    }

    #[test]
    fn variant_names_round_trip() {
        for k in AggregatorKind::ALL {
            assert_eq!(k.to_string().parse::<AggregatorKind>().unwrap(), k);
        }
        assert!("anp".parse::<AggregatorKind>().is_err());
    }
}
