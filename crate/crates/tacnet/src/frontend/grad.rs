//! Backward pass of the frontend: exact derivatives of the loss with
//! respect to every learnable frontend parameter.
//!
//! The chain runs PCEN → pooling → filtering. The PCEN smoother is a linear
//! recursion over frames, so its adjoint is accumulated backwards in time;
//! the pooling kernel is renormalized to unit sum, so its width derivative
//! carries the quotient-rule term; the Gabor parameters are reached through
//! the gradient with respect to the kernel taps.

use crate::mat::Mat;
use crate::real::Real;

use super::{
    filter_stage_cached, gabor_kernel, pcen_stage_cached, pooling_kernel, pooling_stage,
    FrontendError, FrontendParams,
};

/// Forward-pass intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct FrontendActivations<F> {
    /// Real part of the complex filter response, `N × L`.
    pub conv_re: Mat<F>,
    /// Imaginary part of the complex filter response, `N × L`.
    pub conv_im: Mat<F>,
    /// Squared modulus (pre-pooling energy), `N × L`.
    pub energy: Mat<F>,
    /// Pooled energy, `N × M`.
    pub pooled: Mat<F>,
    /// PCEN smoother state per frame, `N × M`.
    pub smoothed: Mat<F>,
    /// Final feature map, `N × M`.
    pub output: Mat<F>,
}

/// Gradients for every learnable frontend parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontendGrads<F> {
    pub center_freqs: Vec<F>,
    pub widths: Vec<F>,
    pub pool_widths: Vec<F>,
    pub gain: Vec<F>,
    pub bias: Vec<F>,
    pub root: Vec<F>,
}

impl<F: Real> FrontendGrads<F> {
    pub fn zeros(n: usize) -> Self {
        Self {
            center_freqs: vec![F::zero(); n],
            widths: vec![F::zero(); n],
            pool_widths: vec![F::zero(); n],
            gain: vec![F::zero(); n],
            bias: vec![F::zero(); n],
            root: vec![F::zero(); n],
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            &self.center_freqs,
            &self.widths,
            &self.pool_widths,
            &self.gain,
            &self.bias,
            &self.root,
        ]
        .iter()
        .all(|v| v.iter().all(|g| g.is_finite()))
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        let acc = |a: &mut Vec<F>, b: &[F]| {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        };
        acc(&mut self.center_freqs, &other.center_freqs);
        acc(&mut self.widths, &other.widths);
        acc(&mut self.pool_widths, &other.pool_widths);
        acc(&mut self.gain, &other.gain);
        acc(&mut self.bias, &other.bias);
        acc(&mut self.root, &other.root);
    }

    pub(crate) fn scale(&mut self, factor: F) {
        for v in [
            &mut self.center_freqs,
            &mut self.widths,
            &mut self.pool_widths,
            &mut self.gain,
            &mut self.bias,
            &mut self.root,
        ] {
            for g in v.iter_mut() {
                *g *= factor;
            }
        }
    }
}

impl<F: Real> FrontendParams<F> {
    /// Forward pass that records the intermediates needed by
    /// [`FrontendParams::backward`].
    pub fn forward_cached(&self, x: &[F]) -> Result<FrontendActivations<F>, FrontendError> {
        let (energy, conv_re, conv_im) = filter_stage_cached(x, &self.gabor, self.kernel_width)?;
        let pooled = pooling_stage(&energy, &self.pooling)?;
        let (output, smoothed) = pcen_stage_cached(&pooled, &self.pcen)?;
        Ok(FrontendActivations {
            conv_re,
            conv_im,
            energy,
            pooled,
            smoothed,
            output,
        })
    }

    /// Propagates `upstream = dC/d(feature map)` back to every learnable
    /// parameter. `x` and `acts` must come from the same forward pass.
    pub fn backward(
        &self,
        x: &[F],
        acts: &FrontendActivations<F>,
        upstream: &Mat<F>,
    ) -> Result<FrontendGrads<F>, FrontendError> {
        if !upstream.is_finite() {
            return Err(FrontendError::NonFiniteUpstream);
        }
        let n = self.n_filters();
        let mut grads = FrontendGrads::zeros(n);
        let grad_pooled = self.pcen_backward(acts, upstream, &mut grads);
        let grad_energy = self.pooling_backward(acts, &grad_pooled, &mut grads);
        self.filter_backward(x, acts, &grad_energy, &mut grads);
        Ok(grads)
    }

    /// PCEN adjoint; returns `dC/d(pooled)` and fills gain/bias/root grads.
    fn pcen_backward(
        &self,
        acts: &FrontendActivations<F>,
        upstream: &Mat<F>,
        grads: &mut FrontendGrads<F>,
    ) -> Mat<F> {
        let frames = acts.pooled.cols();
        let s = self.pcen.smooth;
        let mut grad_pooled = Mat::zeros(acts.pooled.rows(), frames);
        let mut grad_smoothed = vec![F::zero(); frames];
        for i in 0..acts.pooled.rows() {
            let gain = self.pcen.gain[i];
            let bias = self.pcen.bias[i];
            let root = self.pcen.root[i];
            // bias^root ln(bias) and root bias^(root-1) both vanish in the
            // bias -> 0 limit of the subtracted offset term.
            let (bias_pow_ln, bias_pow_dr) = if bias > F::zero() {
                (bias.powf(root) * bias.ln(), root * bias.powf(root - F::one()))
            } else {
                (F::zero(), F::zero())
            };
            grad_smoothed.iter_mut().for_each(|g| *g = F::zero());
            for m in 0..frames {
                let up = upstream.get(i, m);
                let y = acts.pooled.get(i, m);
                let denom = self.pcen.floor + acts.smoothed.get(i, m);
                let v = denom.powf(gain);
                let u = y / v;
                let t = u + bias;
                let dout_du = root * t.powf(root - F::one());
                let du = up * dout_du;
                let t_pow_ln = if t > F::zero() {
                    t.powf(root) * t.ln()
                } else {
                    F::zero()
                };
                grads.root[i] += up * (t_pow_ln - bias_pow_ln);
                grads.bias[i] += up * (dout_du - bias_pow_dr);
                grads.gain[i] += du * (-u * denom.ln());
                grad_pooled.set(i, m, du / v);
                grad_smoothed[m] = du * (-gain * u / denom);
            }
            // The smoother is linear in time; run its adjoint backwards.
            for m in (1..frames).rev() {
                let g = grad_smoothed[m];
                *grad_pooled.row_mut(i).get_mut(m).expect("in range") += s * g;
                grad_smoothed[m - 1] += (F::one() - s) * g;
            }
            if frames > 0 {
                // First frame initializes the smoother directly.
                grad_pooled.row_mut(i)[0] += grad_smoothed[0];
            }
        }
        grad_pooled
    }

    /// Pooling adjoint; returns `dC/d(energy)` and fills pool width grads.
    fn pooling_backward(
        &self,
        acts: &FrontendActivations<F>,
        grad_pooled: &Mat<F>,
        grads: &mut FrontendGrads<F>,
    ) -> Mat<F> {
        let len = acts.energy.cols();
        let width = self.pooling.kernel_width;
        let half = (width - 1) / 2;
        let mut grad_energy = Mat::zeros(acts.energy.rows(), len);
        for i in 0..acts.energy.rows() {
            let sigma = self.pooling.widths[i];
            let raw = pooling_kernel(sigma, width).expect("validated width");
            let sum: F = raw.iter().copied().sum();
            // d(raw)/d(sigma) via the envelope factor (n^2/sigma^3 - 1/sigma),
            // then the quotient rule for the unit-sum renormalization.
            let inv_sigma = F::one() / sigma;
            let inv_sigma3 = inv_sigma * inv_sigma * inv_sigma;
            let draw: Vec<F> = raw
                .iter()
                .enumerate()
                .map(|(k, &w)| {
                    let nf = F::of((k as isize - half as isize) as f64);
                    w * (nf * nf * inv_sigma3 - inv_sigma)
                })
                .collect();
            let dsum: F = draw.iter().copied().sum();
            let dnorm: Vec<F> = raw
                .iter()
                .zip(&draw)
                .map(|(&w, &dw)| dw / sum - w * dsum / (sum * sum))
                .collect();

            let energy_row = acts.energy.row(i);
            let grad_row = grad_energy.row_mut(i);
            for m in 0..grad_pooled.cols() {
                let up = grad_pooled.get(i, m);
                if up == F::zero() {
                    continue;
                }
                let center = (m * self.pooling.stride) as isize;
                let mut width_acc = F::zero();
                for k in 0..width {
                    let idx = center + half as isize - k as isize;
                    if idx >= 0 && (idx as usize) < len {
                        let idx = idx as usize;
                        grad_row[idx] += up * raw[k] / sum;
                        width_acc += dnorm[k] * energy_row[idx];
                    }
                }
                grads.pool_widths[i] += up * width_acc;
            }
        }
        grad_energy
    }

    /// Filter adjoint: energy -> complex responses -> kernel taps -> the
    /// center frequency and width of each channel.
    fn filter_backward(
        &self,
        x: &[F],
        acts: &FrontendActivations<F>,
        grad_energy: &Mat<F>,
        grads: &mut FrontendGrads<F>,
    ) {
        let len = x.len();
        let width = self.kernel_width;
        let half = (width - 1) / 2;
        let two = F::of(2.0);
        let tau = F::of(std::f64::consts::TAU);
        for i in 0..grad_energy.rows() {
            let mu = self.gabor.center_freqs[i];
            let sigma = self.gabor.widths[i];
            let (kre, kim) = gabor_kernel(mu, sigma, width).expect("validated params");

            // d(energy)/d(response) = 2 * response.
            let g_row = grad_energy.row(i);
            let re_row = acts.conv_re.row(i);
            let im_row = acts.conv_im.row(i);
            let da: Vec<F> = g_row
                .iter()
                .zip(re_row)
                .map(|(&g, &a)| two * g * a)
                .collect();
            let db: Vec<F> = g_row
                .iter()
                .zip(im_row)
                .map(|(&g, &b)| two * g * b)
                .collect();

            // Kernel-tap gradients: grad_h[k] = sum_t d[t] * x[t + half - k].
            let inv_sigma = F::one() / sigma;
            let inv_sigma3 = inv_sigma * inv_sigma * inv_sigma;
            let mut g_mu = F::zero();
            let mut g_sigma = F::zero();
            for k in 0..width {
                let t_lo = k.saturating_sub(half);
                let t_hi = (len + k).saturating_sub(half + 1).min(len - 1);
                let xs = &x[t_lo + half - k..=t_hi + half - k];
                let tap_re = super::dot(&da[t_lo..=t_hi], xs);
                let tap_im = super::dot(&db[t_lo..=t_hi], xs);
                let nf = F::of((k as isize - half as isize) as f64);
                // d(re)/d(mu) = -tau n g sin = -tau n kim; d(im)/d(mu) = tau n kre.
                g_mu += tau * nf * (tap_im * kre[k] - tap_re * kim[k]);
                let env_factor = nf * nf * inv_sigma3 - inv_sigma;
                g_sigma += env_factor * (tap_re * kre[k] + tap_im * kim[k]);
            }
            grads.center_freqs[i] = g_mu;
            grads.widths[i] = g_sigma;
        }
    }
}
