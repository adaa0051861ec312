//! LSTM variational autoencoder for fixed-length multivariate windows.
//!
//! Encoder: LSTM over the window, final hidden state mapped to the mean and
//! log-variance of a diagonal Gaussian posterior. Decoder: the latent `z`
//! sets the initial hidden state through `tanh(W z + b)` and is fed as the
//! input at every step of a second LSTM, whose hidden states pass through a
//! linear head to reconstruct each timestep.
//!
//! Loss per window is `MSE(x̂, x) + β·KL(q(z|x) ‖ N(0, I))`. All parameters
//! live in one flat buffer described by a [`ParamLayout`], which keeps the
//! optimizer, clipping, checkpoints and finite-difference checks uniform.

mod lstm;
pub mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use lstm::{matvec_acc, matvec_t_acc, outer_acc};

pub use train::{train, Adam, EpochLog, TrainConfig, TrainError, TrainOutcome};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub n_features: usize,
    pub hidden: usize,
    pub latent: usize,
    /// Weight of the KL term in the training loss.
    pub beta: f64,
}

impl VaeConfig {
    pub fn new(n_features: usize) -> Self {
        Self {
            n_features,
            hidden: 64,
            latent: 8,
            beta: 1.0,
        }
    }
}

/// Named parameter tensor inside the flat buffer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub specs: Vec<ParamSpec>,
    pub total: usize,
}

impl ParamLayout {
    fn for_config(cfg: &VaeConfig) -> Self {
        let (f, h, l) = (cfg.n_features, cfg.hidden, cfg.latent);
        let shapes: [(&str, Vec<usize>); 14] = [
            ("enc_wx", vec![4 * h, f]),
            ("enc_wh", vec![4 * h, h]),
            ("enc_b", vec![4 * h]),
            ("mu_w", vec![l, h]),
            ("mu_b", vec![l]),
            ("logvar_w", vec![l, h]),
            ("logvar_b", vec![l]),
            ("init_w", vec![h, l]),
            ("init_b", vec![h]),
            ("dec_wx", vec![4 * h, l]),
            ("dec_wh", vec![4 * h, h]),
            ("dec_b", vec![4 * h]),
            ("out_w", vec![f, h]),
            ("out_b", vec![f]),
        ];
        let mut offset = 0;
        let specs = shapes
            .into_iter()
            .map(|(name, shape)| {
                let spec = ParamSpec {
                    name: name.to_string(),
                    shape,
                    offset,
                };
                offset += spec.len();
                spec
            })
            .collect();
        Self { specs, total: offset }
    }

    pub fn get(&self, name: &str) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    fn range(&self, idx: usize) -> std::ops::Range<usize> {
        self.specs[idx].range()
    }
}

// Indices into `ParamLayout::specs`, fixed by `for_config`.
const ENC_WX: usize = 0;
const ENC_WH: usize = 1;
const ENC_B: usize = 2;
const MU_W: usize = 3;
const MU_B: usize = 4;
const LV_W: usize = 5;
const LV_B: usize = 6;
const INIT_W: usize = 7;
const INIT_B: usize = 8;
const DEC_WX: usize = 9;
const DEC_WH: usize = 10;
const DEC_B: usize = 11;
const OUT_W: usize = 12;
const OUT_B: usize = 13;

fn split_mut<'a, T>(mut buf: &'a mut [T], layout: &ParamLayout) -> Vec<&'a mut [T]> {
    let mut out = Vec::with_capacity(layout.specs.len());
    for spec in &layout.specs {
        let (head, tail) = buf.split_at_mut(spec.len());
        out.push(head);
        buf = tail;
    }
    out
}

/// Serialized checkpoint format version.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmVaeModel<T> {
    pub version: u32,
    pub config: VaeConfig,
    /// Names of the cluster features this model reconstructs, in column order.
    pub features: Vec<String>,
    pub layout: ParamLayout,
    params: Vec<T>,
}

/// KL divergence of `N(μ, diag(exp(logvar)))` from the standard normal:
/// `½ Σ (μ² + σ² − 1 − log σ²)`.
pub fn kl_gauss<T: Scalar>(mu: &[T], logvar: &[T]) -> Result<T> {
    if mu.len() != logvar.len() {
        return Err(Error::Schema(format!(
            "mu has {} entries, logvar {}",
            mu.len(),
            logvar.len()
        )));
    }
    if mu.iter().chain(logvar).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite latent statistics".into()));
    }
    let half = T::lit(0.5);
    Ok(mu
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| half * (m * m + lv.exp() - T::one() - lv))
        .sum())
}

/// Latent sampling mode for a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Latent<'a, T> {
    /// `z = μ`.
    Mean,
    /// `z = μ + σ ⊙ ε` with the given standard-normal draw `ε`.
    Noise(&'a [T]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionOutput<T> {
    /// `T × F` reconstruction, row-major.
    pub reconstruction: Vec<T>,
    pub mu: Vec<T>,
    pub logvar: Vec<T>,
    /// `T × F` squared errors.
    pub squared_error: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<T> {
    pub total: T,
    pub recon: T,
    pub kl: T,
}

struct ForwardState<T> {
    steps: usize,
    enc: lstm::LstmTrace<T>,
    mu: Vec<T>,
    /// Clamped log-variance and whether it was inside the clamp range.
    logvar: Vec<T>,
    logvar_live: Vec<bool>,
    eps: Option<Vec<T>>,
    z: Vec<T>,
    dec_h0: Vec<T>,
    dec: lstm::LstmTrace<T>,
    recon: Vec<T>,
}

impl<T: Scalar> LstmVaeModel<T> {
    /// Freshly initialized model: LSTM and linear weights uniform in
    /// `±1/√fan_in`, zero biases except forget gates at 1.
    pub fn new(config: VaeConfig, features: Vec<String>, seed: u64) -> Result<Self> {
        if config.n_features == 0 || config.hidden == 0 || config.latent == 0 {
            return Err(Error::Parameter(format!("degenerate model sizes {config:?}")));
        }
        if features.len() != config.n_features {
            return Err(Error::Schema(format!(
                "{} feature names for a {}-feature model",
                features.len(),
                config.n_features
            )));
        }
        if !(config.beta >= 0.0) {
            return Err(Error::Parameter(format!("beta must be ≥ 0, got {}", config.beta)));
        }
        let layout = ParamLayout::for_config(&config);
        let mut params = vec![T::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        for spec in &layout.specs {
            let is_bias = spec.shape.len() == 1;
            let fan_in = match spec.name.as_str() {
                "enc_wx" | "enc_wh" | "dec_wx" | "dec_wh" => h,
                _ => spec.shape.last().copied().unwrap_or(1),
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            let slot = &mut params[spec.range()];
            if is_bias {
                if spec.name == "enc_b" || spec.name == "dec_b" {
                    slot[h..2 * h].iter_mut().for_each(|v| *v = T::one());
                }
            } else {
                for v in slot.iter_mut() {
                    *v = T::lit(rng.gen_range(-bound..bound));
                }
            }
        }
        Ok(Self {
            version: CHECKPOINT_VERSION,
            config,
            features,
            layout,
            params,
        })
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// The named tensor, e.g. `"out_w"`.
    pub fn param_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let range = self.layout.get(name)?.range();
        Some(&mut self.params[range])
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    fn p(&self, idx: usize) -> &[T] {
        &self.params[self.layout.range(idx)]
    }

    fn check_window(&self, window: &[T]) -> Result<usize> {
        let f = self.config.n_features;
        if window.is_empty() || window.len() % f != 0 {
            return Err(Error::Schema(format!(
                "window of {} values does not hold whole rows of {f} features",
                window.len()
            )));
        }
        Ok(window.len() / f)
    }

    fn run_forward(&self, window: &[T], latent: Latent<'_, T>) -> Result<ForwardState<T>> {
        let steps = self.check_window(window)?;
        let VaeConfig {
            n_features: f,
            hidden: h,
            latent: l,
            ..
        } = self.config;
        let h4 = 4 * h;

        let enc_wx = self.p(ENC_WX);
        let enc_b = self.p(ENC_B);
        let mut enc_proj = vec![T::zero(); steps * h4];
        for t in 0..steps {
            let a = &mut enc_proj[t * h4..(t + 1) * h4];
            a.copy_from_slice(enc_b);
            matvec_acc(a, enc_wx, &window[t * f..(t + 1) * f]);
        }
        let zeros = vec![T::zero(); h];
        let enc = lstm::forward(self.p(ENC_WH), h, steps, &zeros, &zeros, |t| &enc_proj[t * h4..(t + 1) * h4]);
        let h_last = enc.last_h();

        let mut mu = self.p(MU_B).to_vec();
        matvec_acc(&mut mu, self.p(MU_W), h_last);
        let mut raw_lv = self.p(LV_B).to_vec();
        matvec_acc(&mut raw_lv, self.p(LV_W), h_last);
        let (lo, hi) = (T::lit(LOGVAR_MIN), T::lit(LOGVAR_MAX));
        let logvar_live: Vec<bool> = raw_lv.iter().map(|&v| v > lo && v < hi).collect();
        let logvar: Vec<T> = raw_lv.iter().map(|&v| v.max(lo).min(hi)).collect();

        let eps = match latent {
            Latent::Mean => None,
            Latent::Noise(e) => {
                if e.len() != l {
                    return Err(Error::Schema(format!("noise of length {} for latent size {l}", e.len())));
                }
                Some(e.to_vec())
            }
        };
        let z: Vec<T> = match &eps {
            None => mu.clone(),
            Some(e) => (0..l)
                .map(|j| mu[j] + (T::lit(0.5) * logvar[j]).exp() * e[j])
                .collect(),
        };

        let mut dec_h0 = self.p(INIT_B).to_vec();
        matvec_acc(&mut dec_h0, self.p(INIT_W), &z);
        dec_h0.iter_mut().for_each(|v| *v = v.tanh());
        let mut dec_proj = self.p(DEC_B).to_vec();
        matvec_acc(&mut dec_proj, self.p(DEC_WX), &z);
        let dec = lstm::forward(self.p(DEC_WH), h, steps, &dec_h0, &zeros, |_| &dec_proj);

        let out_w = self.p(OUT_W);
        let out_b = self.p(OUT_B);
        let mut recon = vec![T::zero(); steps * f];
        for t in 0..steps {
            let y = &mut recon[t * f..(t + 1) * f];
            y.copy_from_slice(out_b);
            matvec_acc(y, out_w, dec.h(t + 1));
        }
        Ok(ForwardState {
            steps,
            enc,
            mu,
            logvar,
            logvar_live,
            eps,
            z,
            dec_h0,
            dec,
            recon,
        })
    }

    pub fn forward(&self, window: &[T], latent: Latent<'_, T>) -> Result<ReconstructionOutput<T>> {
        let st = self.run_forward(window, latent)?;
        let squared_error = st
            .recon
            .iter()
            .zip(window)
            .map(|(&a, &b)| (a - b) * (a - b))
            .collect();
        Ok(ReconstructionOutput {
            reconstruction: st.recon,
            mu: st.mu,
            logvar: st.logvar,
            squared_error,
        })
    }

    fn parts(&self, st: &ForwardState<T>, window: &[T], beta: T) -> Result<LossParts<T>> {
        let n = T::count(window.len());
        let recon = st
            .recon
            .iter()
            .zip(window)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            / n;
        let kl = kl_gauss(&st.mu, &st.logvar)?;
        let total = recon + beta * kl;
        if !total.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss (recon {recon}, kl {kl})")));
        }
        Ok(LossParts { total, recon, kl })
    }

    /// Loss with the model's configured β.
    pub fn loss(&self, window: &[T], latent: Latent<'_, T>) -> Result<LossParts<T>> {
        self.loss_with_beta(window, latent, T::lit(self.config.beta))
    }

    pub fn loss_with_beta(&self, window: &[T], latent: Latent<'_, T>, beta: T) -> Result<LossParts<T>> {
        let st = self.run_forward(window, latent)?;
        self.parts(&st, window, beta)
    }

    /// Loss and its exact gradient, accumulated into `grad` (same layout as
    /// the parameters).
    pub fn loss_and_grad(&self, window: &[T], latent: Latent<'_, T>, beta: T, grad: &mut [T]) -> Result<LossParts<T>> {
        if grad.len() != self.params.len() {
            return Err(Error::Schema("gradient buffer does not match parameters".into()));
        }
        let st = self.run_forward(window, latent)?;
        let parts = self.parts(&st, window, beta)?;
        let VaeConfig {
            n_features: f,
            hidden: h,
            latent: l,
            ..
        } = self.config;
        let steps = st.steps;
        let h4 = 4 * h;
        let scale = T::lit(2.0) / T::count(window.len());

        let d_recon: Vec<T> = st
            .recon
            .iter()
            .zip(window)
            .map(|(&a, &b)| scale * (a - b))
            .collect();

        let [g_enc_wx, g_enc_wh, g_enc_b, g_mu_w, g_mu_b, g_lv_w, g_lv_b, g_init_w, g_init_b, g_dec_wx, g_dec_wh, g_dec_b, g_out_w, g_out_b]: [&mut [T]; 14] =
            split_mut(grad, &self.layout)
                .try_into()
                .unwrap_or_else(|_| unreachable!("layout has 14 tensors"));

        // Output head.
        let out_w = self.p(OUT_W);
        for t in 0..steps {
            let dy = &d_recon[t * f..(t + 1) * f];
            outer_acc(g_out_w, dy, st.dec.h(t + 1));
            for (g, &d) in g_out_b.iter_mut().zip(dy) {
                *g = *g + d;
            }
        }

        // Decoder recurrence.
        let dec_grads = lstm::backward(self.p(DEC_WH), g_dec_wh, &st.dec, |t, dh| {
            matvec_t_acc(dh, out_w, &d_recon[t * f..(t + 1) * f]);
        });
        let mut d_pre_sum = vec![T::zero(); h4];
        for t in 0..steps {
            for (s, &d) in d_pre_sum.iter_mut().zip(&dec_grads.d_pre[t * h4..(t + 1) * h4]) {
                *s = *s + d;
            }
        }
        outer_acc(g_dec_wx, &d_pre_sum, &st.z);
        for (g, &d) in g_dec_b.iter_mut().zip(&d_pre_sum) {
            *g = *g + d;
        }
        let mut dz = vec![T::zero(); l];
        matvec_t_acc(&mut dz, self.p(DEC_WX), &d_pre_sum);

        // Decoder initial state h0 = tanh(W z + b).
        let d_init: Vec<T> = dec_grads
            .d_h0
            .iter()
            .zip(&st.dec_h0)
            .map(|(&d, &hv)| d * (T::one() - hv * hv))
            .collect();
        outer_acc(g_init_w, &d_init, &st.z);
        for (g, &d) in g_init_b.iter_mut().zip(&d_init) {
            *g = *g + d;
        }
        matvec_t_acc(&mut dz, self.p(INIT_W), &d_init);

        // Reparameterization and KL.
        let half = T::lit(0.5);
        let mut d_mu = vec![T::zero(); l];
        let mut d_lv = vec![T::zero(); l];
        for j in 0..l {
            d_mu[j] = dz[j] + beta * st.mu[j];
            let mut g = beta * half * (st.logvar[j].exp() - T::one());
            if let Some(e) = &st.eps {
                g = g + dz[j] * e[j] * half * (half * st.logvar[j]).exp();
            }
            d_lv[j] = if st.logvar_live[j] { g } else { T::zero() };
        }
        let h_last = st.enc.last_h();
        outer_acc(g_mu_w, &d_mu, h_last);
        outer_acc(g_lv_w, &d_lv, h_last);
        for j in 0..l {
            g_mu_b[j] = g_mu_b[j] + d_mu[j];
            g_lv_b[j] = g_lv_b[j] + d_lv[j];
        }
        let mut dh_last = vec![T::zero(); h];
        matvec_t_acc(&mut dh_last, self.p(MU_W), &d_mu);
        matvec_t_acc(&mut dh_last, self.p(LV_W), &d_lv);

        // Encoder recurrence; only the final hidden state feeds the head.
        let enc_grads = lstm::backward(self.p(ENC_WH), g_enc_wh, &st.enc, |t, dh| {
            if t + 1 == steps {
                for (a, &b) in dh.iter_mut().zip(&dh_last) {
                    *a = *a + b;
                }
            }
        });
        for t in 0..steps {
            let da = &enc_grads.d_pre[t * h4..(t + 1) * h4];
            outer_acc(g_enc_wx, da, &window[t * f..(t + 1) * f]);
            for (g, &d) in g_enc_b.iter_mut().zip(da) {
                *g = *g + d;
            }
        }
        Ok(parts)
    }

    /// Deterministic (`z = μ`) anomaly components for one window: the mean
    /// squared error of the final timestep's reconstruction and the window's
    /// posterior KL.
    pub fn score_window(&self, window: &[T]) -> Result<(T, T)> {
        let st = self.run_forward(window, Latent::Mean)?;
        let f = self.config.n_features;
        let last = (st.steps - 1) * f;
        let err = st.recon[last..]
            .iter()
            .zip(&window[last..])
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            / T::count(f);
        let kl = kl_gauss(&st.mu, &st.logvar)?;
        Ok((err, kl))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if model.version != CHECKPOINT_VERSION {
            return Err(Error::Schema(format!("unsupported checkpoint version {}", model.version)));
        }
        if model.layout != ParamLayout::for_config(&model.config) || model.params.len() != model.layout.total {
            return Err(Error::Schema("checkpoint shape manifest does not match its config".into()));
        }
        Ok(model)
    }
}
