//! Latent-conditioned link decoder and the evidence lower bound.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Linear, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::latent::{AggregatorKind, LatentCode, LatentModule, LatentState};

/// Floor applied to probabilities before taking logs.
pub const LOG_EPS: f64 = 1e-12;

/// Diagonal Gaussian; `mu` and `sigma` have identical shapes.
#[derive(Clone, Copy)]
pub struct GaussianDiag<'t> {
    pub mu: Var<'t>,
    pub sigma: Var<'t>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboConfig {
    pub mc_samples: usize,
    pub kl_weight: f64,
}

impl Default for ElboConfig {
    fn default() -> Self {
        ElboConfig {
            mc_samples: 10,
            kl_weight: 1.0,
        }
    }
}

impl ElboConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_samples < 1 {
            return Err(Error::Config("mc_samples must be at least 1".into()));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::Config(format!("kl_weight must be >= 0, got {}", self.kl_weight)));
        }
        Ok(())
    }
}

/// `[rows, cols]` of standard normal draws.
pub fn standard_normal(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(rows, cols, data).expect("shape")
}

/// `mu + sigma ⊙ eps` for a given noise draw.
pub fn reparam_with<'t>(dist: GaussianDiag<'t>, eps: Tensor) -> Result<Var<'t>> {
    let eps = dist.mu.tape().constant(eps);
    dist.mu.add(dist.sigma.mul(eps)?)
}

pub fn sample_reparam<'t>(dist: GaussianDiag<'t>, rng: &mut impl Rng) -> Result<Var<'t>> {
    let [r, c] = dist.mu.shape();
    reparam_with(dist, standard_normal(r, c, rng))
}

/// Closed-form `KL(q ‖ p)` summed over all entries.
pub fn kl_diag_gaussians<'t>(q: GaussianDiag<'t>, p: GaussianDiag<'t>) -> Result<Var<'t>> {
    let log_ratio = p.sigma.log()?.sub(q.sigma.log()?)?;
    let diff = q.mu.sub(p.mu)?;
    let num = q.sigma.mul(q.sigma)?.add(diff.mul(diff)?)?;
    let den = p.sigma.mul(p.sigma)?.scale(2.0);
    Ok(log_ratio.add(num.div(den)?)?.add_scalar(-0.5).sum())
}

/// Plain-value KL between diagonal Gaussians.
pub fn kl_diag_values(mu_q: &[f64], sigma_q: &[f64], mu_p: &[f64], sigma_p: &[f64]) -> f64 {
    mu_q.iter()
        .zip(sigma_q)
        .zip(mu_p.iter().zip(sigma_p))
        .map(|((mq, sq), (mp, sp))| {
            (sp.ln() - sq.ln()) + (sq * sq + (mq - mp) * (mq - mp)) / (2.0 * sp * sp) - 0.5
        })
        .sum()
}

/// `ŷ = sigmoid(MLP(h̃_i || h̃_j))` with `h̃ = ReLU(W_h h + W_z z + b)` shared
/// by both endpoints.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub embed_h: ParamId,
    pub embed_z: ParamId,
    pub embed_b: ParamId,
    pub hidden: Linear,
    pub out: Linear,
}

impl Decoder {
    pub fn new(
        store: &mut ParamStore,
        node_dim: usize,
        latent_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = node_dim + latent_dim;
        Decoder {
            embed_h: store.add_uniform("decoder.embed.w_h", node_dim, hidden, fan_in, rng),
            embed_z: store.add_uniform("decoder.embed.w_z", latent_dim, hidden, fan_in, rng),
            embed_b: store.add_uniform("decoder.embed.b", 1, hidden, fan_in, rng),
            hidden: Linear::new(store, "decoder.hidden", 2 * hidden, hidden, rng),
            out: Linear::new(store, "decoder.out", hidden, 1, rng),
        }
    }

    /// Latent-independent part of the endpoint projection.
    pub fn project_nodes<'t>(&self, p: &Bound<'t>, h: Var<'t>) -> Result<Var<'t>> {
        h.matmul(p[self.embed_h])
    }

    /// Link probabilities `[n, 1]` from projected endpoints and `z` given
    /// either as one row shared by all links or one row per link.
    pub fn decode_projected<'t>(
        &self,
        p: &Bound<'t>,
        proj_src: Var<'t>,
        proj_dst: Var<'t>,
        z: Var<'t>,
    ) -> Result<Var<'t>> {
        let zb = z.matmul(p[self.embed_z])?.add(p[self.embed_b])?;
        let hi = proj_src.add(zb)?.relu();
        let hj = proj_dst.add(zb)?.relu();
        let x = hi.concat(hj, 1)?;
        Ok(self.out.forward(p, self.hidden.forward(p, x)?.relu())?.sigmoid())
    }

    pub fn decode<'t>(&self, p: &Bound<'t>, h_src: Var<'t>, h_dst: Var<'t>, z: Var<'t>) -> Result<Var<'t>> {
        let ps = self.project_nodes(p, h_src)?;
        let pd = self.project_nodes(p, h_dst)?;
        self.decode_projected(p, ps, pd, z)
    }
}

/// Summed Bernoulli log-likelihood with probabilities floored at [`LOG_EPS`].
pub fn bernoulli_log_likelihood<'t>(probs: Var<'t>, labels: &[f64]) -> Result<Var<'t>> {
    let y = probs.tape().constant(Tensor::column(labels.to_vec()));
    let not_y = probs.tape().constant(Tensor::column(labels.iter().map(|v| 1.0 - v).collect()));
    let log_p = probs.clamp_min(LOG_EPS).log()?;
    let log_q = probs.scale(-1.0).add_scalar(1.0).clamp_min(LOG_EPS).log()?;
    Ok(y.mul(log_p)?.add(not_y.mul(log_q)?)?.sum())
}

/// Variational posterior over context and targets. The mean variant pools
/// context and target representations; the sequential variants continue the
/// recurrent state over target buckets. `None` for the deterministic variant.
pub fn build_posterior<'t>(
    latent: &LatentModule,
    p: &Bound<'t>,
    context_reps: Option<Var<'t>>,
    context_state: LatentState<'t>,
    target_reps: Option<Var<'t>>,
    target_times: &[f64],
) -> Result<Option<GaussianDiag<'t>>> {
    let r = match latent.kind {
        AggregatorKind::Cnp => return Ok(None),
        AggregatorKind::Np => match (context_reps, target_reps) {
            (Some(c), Some(t)) => c.concat(t, 0)?.mean_rows(),
            (Some(c), None) => c.mean_rows(),
            (None, Some(t)) => t.mean_rows(),
            (None, None) => context_state.r,
        },
        AggregatorKind::Snp | AggregatorKind::Gsnop => match target_reps {
            Some(t) => {
                latent
                    .aggregate_sequential(p, Some(context_state), t, target_times)?
                    .expect("state supplied")
                    .r
            }
            None => context_state.r,
        },
    };
    Ok(Some(latent.head.forward(p, r)?))
}

/// Decoder inputs for one target batch.
pub struct Targets<'t> {
    pub h_src: Var<'t>,
    pub h_dst: Var<'t>,
    pub labels: Vec<f64>,
}

pub struct ElboTerms<'t> {
    pub loss: Var<'t>,
    /// Monte-Carlo mean of the summed negative log-likelihood.
    pub nll: f64,
    pub kl: f64,
}

/// `-(1/L Σ_l log P(y | z_l) - w·KL(q ‖ p))` with `z_l ~ q`; for a
/// deterministic code the likelihood is taken at that code and no KL enters.
/// `rng` supplies the `L` standard-normal draws.
pub fn elbo_loss<'t>(
    decoder: &Decoder,
    p: &Bound<'t>,
    prior: LatentCode<'t>,
    posterior: Option<GaussianDiag<'t>>,
    targets: &Targets<'t>,
    cfg: &ElboConfig,
    rng: &mut impl Rng,
) -> Result<ElboTerms<'t>> {
    cfg.validate()?;
    let ps = decoder.project_nodes(p, targets.h_src)?;
    let pd = decoder.project_nodes(p, targets.h_dst)?;
    let (loss, nll, kl) = match (prior, posterior) {
        (LatentCode::Deterministic(r), _) => {
            let ll = bernoulli_log_likelihood(decoder.decode_projected(p, ps, pd, r)?, &targets.labels)?;
            (ll.scale(-1.0), -ll.value().item(), 0.0)
        }
        (LatentCode::Stochastic(prior), Some(post)) => {
            let mut total: Option<Var<'t>> = None;
            for _ in 0..cfg.mc_samples {
                let z = sample_reparam(post, rng)?;
                let ll = bernoulli_log_likelihood(decoder.decode_projected(p, ps, pd, z)?, &targets.labels)?;
                total = Some(match total {
                    None => ll,
                    Some(acc) => acc.add(ll)?,
                });
            }
            let ll = total.expect("mc_samples >= 1").scale(1.0 / cfg.mc_samples as f64);
            let kl = kl_diag_gaussians(post, prior)?;
            let loss = kl.scale(cfg.kl_weight).sub(ll)?;
            (loss, -ll.value().item(), kl.value().item())
        }
        (LatentCode::Stochastic(_), None) => {
            return Err(Error::Usage("a stochastic prior needs a posterior".into()));
        }
    };
    let value = loss.value().item();
    if !value.is_finite() {
        let stats = |v: Var<'_>| {
            let t = v.value();
            let d = t.data();
            let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            format!("[{lo:.4e}, {hi:.4e}]")
        };
        let detail = match (prior, posterior) {
            (LatentCode::Stochastic(pr), Some(q)) => format!(
                "prior mu {} sigma {}, posterior mu {} sigma {}",
                stats(pr.mu),
                stats(pr.sigma),
                stats(q.mu),
                stats(q.sigma)
            ),
            (LatentCode::Deterministic(r), _) => format!("code {}", stats(r)),
            _ => String::new(),
        };
        return Err(Error::NonFiniteLoss(format!("loss {value} (nll {nll}, kl {kl}); {detail}")));
    }
    Ok(ElboTerms { loss, nll, kl })
}

/// Mean link probability over `n_samples` latent draws; a deterministic code
/// is used as is.
pub fn predict<'t>(
    decoder: &Decoder,
    p: &Bound<'t>,
    prior: LatentCode<'t>,
    h_src: Var<'t>,
    h_dst: Var<'t>,
    n_samples: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let ps = decoder.project_nodes(p, h_src)?;
    let pd = decoder.project_nodes(p, h_dst)?;
    match prior {
        LatentCode::Deterministic(r) => Ok(decoder.decode_projected(p, ps, pd, r)?.value().data().to_vec()),
        LatentCode::Stochastic(dist) => {
            let n = n_samples.max(1);
            let mut acc = vec![0.0; ps.shape()[0]];
            for _ in 0..n {
                let z = sample_reparam(dist, rng)?;
                let y = decoder.decode_projected(p, ps, pd, z)?.value();
                for (a, v) in acc.iter_mut().zip(y.data()) {
                    *a += v;
                }
            }
            Ok(acc.into_iter().map(|a| a / n as f64).collect())
        }
    }
}
