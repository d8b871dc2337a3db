use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::model::{Branch, ConditionerSet};
use crate::diffusion::schedule::NoiseSchedule;
use crate::diffusion::train::EpsModel;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::stream;

/// Classifier-free guidance. The unconditional branch replaces every
/// conditioner with its learned null embedding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub alpha: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { alpha: 3.0 }
    }
}

/// `α · ε_cond + (1 − α) · ε_uncond`.
pub fn cfg_combine(eps_cond: &Matrix, eps_uncond: &Matrix, alpha: f64) -> Result<Matrix> {
    if eps_cond.shape() != eps_uncond.shape() {
        return Err(Error::Contract(format!(
            "guidance branches differ in shape: {:?} vs {:?}",
            eps_cond.shape(),
            eps_uncond.shape()
        )));
    }
    Ok(eps_cond.zip_map(eps_uncond, |c, u| alpha * c + (1.0 - alpha) * u))
}

/// Ancestral DDPM sampling with guidance. Returns a de-normalized
/// `C × latent_frames` latent.
pub fn sample<M: EpsModel + ?Sized>(
    model: &M,
    cond: &ConditionerSet,
    schedule: &NoiseSchedule,
    guidance: &GuidanceConfig,
    shape: (usize, usize),
    seed: u64,
) -> Result<Matrix> {
    if !(guidance.alpha.is_finite() && guidance.alpha >= 0.0) {
        return Err(Error::Config(format!("guidance alpha must be finite and non-negative, got {}", guidance.alpha)));
    }
    let (channels, frames) = shape;
    let mut rng = stream(seed, "sampler", 0);
    let mut normal = |rows: usize, cols: usize| {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect())
    };
    let mut z = normal(frames, channels);
    for t in (0..schedule.steps()).rev() {
        let eps_c = model.predict_tokens(&z, t, cond, Branch::Conditional)?;
        let eps_u = model.predict_tokens(&z, t, cond, Branch::Unconditional)?;
        let eps = cfg_combine(&eps_c, &eps_u, guidance.alpha)?;
        let (beta, alpha, ab) = (schedule.beta[t], schedule.alpha[t], schedule.alpha_bar[t]);
        let k = beta / (1.0 - ab).sqrt();
        let root = alpha.sqrt();
        let mean = z.zip_map(&eps, |zi, e| (zi - k * e) / root);
        z = if t > 0 {
            let sigma = schedule.posterior_variance(t).sqrt();
            let noise = normal(frames, channels);
            mean.zip_map(&noise, |m, n| m + sigma * n)
        } else {
            mean
        };
        if !z.is_finite() {
            return Err(Error::Sampling { step: t });
        }
    }
    Ok(model.norm().denormalize(&z.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::model::{Denoiser, DenoiserConfig, FusionMode, LatentNorm, Modalities};
    use crate::diffusion::schedule::{make_schedule, q_sample};
    use crate::params::{Bound, ParamSet};
    use crate::tape::{Graph, Var};

    #[test]
    fn guidance_identities() {
        let c = Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]);
        let u = Matrix::from_vec(1, 3, vec![0.25, 4.0, -1.0]);
        assert_eq!(cfg_combine(&c, &u, 1.0).unwrap(), c);
        assert_eq!(cfg_combine(&c, &u, 0.0).unwrap(), u);
        let two = Matrix::filled(1, 1, 2.0);
        let one = Matrix::filled(1, 1, 1.0);
        assert_eq!(cfg_combine(&two, &one, 3.0).unwrap()[(0, 0)], 4.0);
        for a in [0.0, 0.5, 3.0, 7.5] {
            let same = cfg_combine(&c, &c, a).unwrap();
            for (x, y) in same.data().iter().zip(c.data()) {
                assert!((x - y).abs() < 1e-14);
            }
        }
        assert!(cfg_combine(&c, &Matrix::zeros(3, 1), 1.0).is_err());
    }

    /// Returns the noise that produced `z_t` from a fixed clean latent.
    struct Oracle {
        z0: Matrix,
        schedule: NoiseSchedule,
        params: ParamSet,
    }

    impl EpsModel for Oracle {
        fn params(&self) -> &ParamSet {
            &self.params
        }
        fn norm(&self) -> LatentNorm {
            LatentNorm::default()
        }
        fn forward(&self, g: &mut Graph, _: &Bound, tokens: &Matrix, t: usize, _: &ConditionerSet, _: Branch) -> Result<Var> {
            let ab = self.schedule.alpha_bar[t];
            let z0 = self.z0.transpose();
            Ok(g.constant(tokens.zip_map(&z0, |z, x| (z - ab.sqrt() * x) / (1.0 - ab).sqrt())))
        }
    }

    #[test]
    fn single_step_oracle_recovers_the_clean_latent() {
        let schedule = make_schedule(1, 0.5, 0.5).unwrap();
        let z0 = Matrix::from_vec(2, 3, vec![0.3, -1.2, 2.0, 0.0, 0.7, -0.4]);
        let oracle = Oracle { z0: z0.clone(), schedule: schedule.clone(), params: ParamSet::new() };
        let out = sample(&oracle, &ConditionerSet::default(), &schedule, &GuidanceConfig::default(), (2, 3), 11).unwrap();
        for (a, b) in out.data().iter().zip(z0.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        // and the oracle's noise really is the forward-process noise
        let eps = Matrix::from_vec(2, 3, vec![0.1, 0.2, -0.3, 0.4, -0.5, 0.6]);
        let zt = q_sample(&z0, 0, &eps, &schedule).unwrap();
        let mut g = Graph::new();
        let p = oracle.params.bind_frozen(&mut g);
        let v = oracle.forward(&mut g, &p, &zt.transpose(), 0, &ConditionerSet::default(), Branch::Conditional).unwrap();
        for (a, b) in g.value(v).transpose().data().iter().zip(eps.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    fn tiny() -> Denoiser {
        let cfg = DenoiserConfig {
            latent_channels: 3,
            cond_dim: 4,
            d_model: 8,
            heads: 2,
            ff_mult: 2,
            n_down: 1,
            n_mid: 1,
            n_up: 1,
            fusion: FusionMode::XattnVAddO,
            modalities: Modalities::VO,
        };
        Denoiser::new(cfg, 4).unwrap()
    }

    fn cond() -> ConditionerSet {
        let w = |k: f64| Matrix::from_vec(5, 4, (0..20).map(|i| (i as f64 * k).cos()).collect());
        ConditionerSet { video: Some(w(0.3)), objects: Some(w(0.9)), text: None }
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = tiny();
        let s = make_schedule(8, 0.01, 0.2).unwrap();
        let g = GuidanceConfig { alpha: 3.0 };
        let a = sample(&m, &cond(), &s, &g, (3, 6), 21).unwrap();
        let b = sample(&m, &cond(), &s, &g, (3, 6), 21).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample(&m, &cond(), &s, &g, (3, 6), 22).unwrap());
    }

    #[test]
    fn unit_guidance_is_the_conditional_sampler() {
        // reference: the same ancestral loop with only the conditional branch
        let m = tiny();
        let s = make_schedule(6, 0.01, 0.2).unwrap();
        let out = sample(&m, &cond(), &s, &GuidanceConfig { alpha: 1.0 }, (3, 4), 5).unwrap();
        let mut rng = stream(5, "sampler", 0);
        let mut normal = |r: usize, c: usize| {
            Matrix::from_vec(r, c, (0..r * c).map(|_| StandardNormal.sample(&mut rng)).collect())
        };
        let mut z = normal(4, 3);
        for t in (0..6).rev() {
            let e = m.predict_tokens(&z, t, &cond(), Branch::Conditional).unwrap();
            let k = s.beta[t] / (1.0 - s.alpha_bar[t]).sqrt();
            z = z.zip_map(&e, |zi, ei| (zi - k * ei) / s.alpha[t].sqrt());
            if t > 0 {
                let n = normal(4, 3);
                let sd = s.posterior_variance(t).sqrt();
                z = z.zip_map(&n, |a, b| a + sd * b);
            }
        }
        assert_eq!(out, m.norm.denormalize(&z.transpose()));
    }

    #[test]
    fn non_finite_state_reports_the_step() {
        let mut m = tiny();
        *m.params.get_mut("out.b").unwrap() = Matrix::filled(1, 3, f64::MAX);
        let s = make_schedule(4, 0.01, 0.2).unwrap();
        match sample(&m, &cond(), &s, &GuidanceConfig { alpha: 3.0 }, (3, 4), 0) {
            Err(Error::Sampling { step }) => assert_eq!(step, 3),
            other => panic!("expected a sampling error, got {other:?}"),
        }
        assert!(sample(&m, &cond(), &s, &GuidanceConfig { alpha: f64::NAN }, (3, 4), 0).is_err());
    }
}
