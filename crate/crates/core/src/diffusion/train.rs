use std::fmt::Write as _;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::model::{Branch, ConditionerSet, Denoiser, LatentNorm};
use crate::diffusion::schedule::{mix, NoiseSchedule};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::{Adam, Bound, ParamSet};
use crate::rng::{derive_seed, stream};
use crate::tape::{Graph, Var};

/// A noise predictor usable by the training objective and the sampler.
/// Tokens are `T_lat × C` (one row per latent frame), already normalized.
pub trait EpsModel {
    fn params(&self) -> &ParamSet;

    fn norm(&self) -> LatentNorm;

    fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        tokens: &Matrix,
        t: usize,
        cond: &ConditionerSet,
        branch: Branch,
    ) -> Result<Var>;

    /// Inference in token layout.
    fn predict_tokens(&self, tokens: &Matrix, t: usize, cond: &ConditionerSet, branch: Branch) -> Result<Matrix> {
        let mut g = Graph::new();
        let p = self.params().bind_frozen(&mut g);
        let out = self.forward(&mut g, &p, tokens, t, cond, branch)?;
        Ok(g.value(out).clone())
    }
}

impl EpsModel for Denoiser {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn norm(&self) -> LatentNorm {
        self.norm
    }

    fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        tokens: &Matrix,
        t: usize,
        cond: &ConditionerSet,
        branch: Branch,
    ) -> Result<Var> {
        Denoiser::forward(self, g, p, tokens, t, cond, branch)
    }
}

/// One training example: a raw `C × T_lat` latent and its conditioners.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub z0: Matrix,
    pub cond: ConditionerSet,
}

/// Per-sample draws of the objective, fixed by `(seed, index)`.
pub struct Draw {
    pub t: usize,
    pub eps: Matrix,
    pub dropped: bool,
}

pub fn draw(seed: u64, index: usize, steps: usize, shape: (usize, usize), dropout_p: f64) -> Draw {
    let mut rng = stream(seed, "diffusion-draw", index as u64);
    let t = rng.random_range(0..steps);
    let eps = Matrix::from_vec(
        shape.0,
        shape.1,
        (0..shape.0 * shape.1).map(|_| StandardNormal.sample(&mut rng)).collect(),
    );
    let u: f64 = rng.random();
    Draw { t, eps, dropped: u < dropout_p }
}

fn check_dropout(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout_p must lie in [0, 1), got {p}")));
    }
    Ok(())
}

/// Mean over the batch of `‖ε − ε̂(z_t, t, c)‖²` averaged per coordinate.
pub fn batch_loss_on_tape<M: EpsModel + ?Sized>(
    model: &M,
    g: &mut Graph,
    p: &Bound,
    batch: &[TrainItem],
    schedule: &NoiseSchedule,
    dropout_p: f64,
    seed: u64,
) -> Result<Var> {
    check_dropout(dropout_p)?;
    if batch.is_empty() {
        return Err(Error::Data("empty training batch".into()));
    }
    let norm = model.norm();
    let mut total: Option<Var> = None;
    for (k, item) in batch.iter().enumerate() {
        let z0 = norm.normalize(&item.z0).transpose();
        let d = draw(seed, k, schedule.steps(), z0.shape(), dropout_p);
        let zt = mix(&z0, &d.eps, schedule.alpha_bar[d.t]);
        let branch = if d.dropped { Branch::Unconditional } else { Branch::Conditional };
        let pred = model.forward(g, p, &zt, d.t, &item.cond, branch)?;
        let target = g.constant(d.eps);
        let diff = g.sub(pred, target);
        let sq = g.square(diff);
        let mse = g.mean(sq);
        total = Some(match total {
            Some(acc) => g.add(acc, mse),
            None => mse,
        });
    }
    let total = total.expect("non-empty batch");
    Ok(g.scale(total, 1.0 / batch.len() as f64))
}

/// Loss value and gradients aligned with the model's parameter order.
pub fn training_loss<M: EpsModel + ?Sized>(
    model: &M,
    batch: &[TrainItem],
    schedule: &NoiseSchedule,
    dropout_p: f64,
    seed: u64,
) -> Result<(f64, Vec<Matrix>)> {
    let mut g = Graph::new();
    let p = model.params().bind(&mut g);
    let loss = batch_loss_on_tape(model, &mut g, &p, batch, schedule, dropout_p, seed)?;
    let value = g.scalar(loss);
    let grads = p.gradients(&g.backward(loss));
    Ok((value, grads))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout_p: f64,
    pub seed: u64,
    /// Steps between checkpoint callbacks; 0 disables them.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 1000, batch_size: 8, lr: 1e-3, dropout_p: 0.1, seed: 0, checkpoint_every: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.loss).collect()
    }

    /// Tab-separated `step loss lr` with a header line.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("step\tloss\tlr\n");
        for e in &self.entries {
            writeln!(s, "{}\t{:.9e}\t{:e}", e.step, e.loss, e.lr).expect("string write");
        }
        s
    }
}

/// Fits the latent normalization on `data`, then runs Adam on the
/// objective. `on_checkpoint` runs every `checkpoint_every` steps.
pub fn train(
    model: &mut Denoiser,
    data: &[TrainItem],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    on_checkpoint: &mut dyn FnMut(usize, &Denoiser) -> Result<()>,
) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    check_dropout(cfg.dropout_p)?;
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be finite and non-negative, got {}", cfg.lr)));
    }
    model.norm = LatentNorm::fit(data.iter().map(|d| &d.z0));
    let mut opt = Adam::new(cfg.lr);
    let mut log = TrainLog::default();
    for step in 0..cfg.steps {
        let mut pick = stream(cfg.seed, "train-batch", step as u64);
        let batch: Vec<TrainItem> = (0..cfg.batch_size)
            .map(|_| data[pick.random_range(0..data.len())].clone())
            .collect();
        let noise_seed = derive_seed(cfg.seed, "train-noise", step as u64);
        let (loss, grads) = training_loss(model, &batch, schedule, cfg.dropout_p, noise_seed)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training { step, loss });
        }
        if cfg.lr > 0.0 {
            opt.step(&mut model.params, &grads);
        }
        log.entries.push(LogEntry { step, loss, lr: cfg.lr });
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            on_checkpoint(step + 1, model)?;
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::model::{DenoiserConfig, FusionMode, Modalities};
    use crate::diffusion::schedule::make_schedule;
    use crate::tape::check::max_relative_error;

    /// Recovers the true noise from `z_t` and a known clean latent, plus an offset.
    struct Oracle {
        z0: Matrix,
        schedule: NoiseSchedule,
        offset: f64,
    }

    impl EpsModel for Oracle {
        fn params(&self) -> &ParamSet {
            static EMPTY: std::sync::OnceLock<ParamSet> = std::sync::OnceLock::new();
            EMPTY.get_or_init(ParamSet::new)
        }

        fn norm(&self) -> LatentNorm {
            LatentNorm::default()
        }

        fn forward(&self, g: &mut Graph, _: &Bound, tokens: &Matrix, t: usize, _: &ConditionerSet, _: Branch) -> Result<Var> {
            let ab = self.schedule.alpha_bar[t];
            let z0 = self.z0.transpose();
            let eps = tokens.zip_map(&z0, |z, x| (z - ab.sqrt() * x) / (1.0 - ab).sqrt() + self.offset);
            Ok(g.constant(eps))
        }
    }

    fn wave(rows: usize, cols: usize, k: f64) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|i| ((i as f64 + 1.0) * k).sin()).collect())
    }

    #[test]
    fn oracle_stub_losses() {
        let schedule = make_schedule(10, 0.01, 0.2).unwrap();
        let z0 = wave(4, 6, 0.4);
        let item = TrainItem { z0: z0.clone(), cond: ConditionerSet::default() };
        let exact = Oracle { z0: z0.clone(), schedule: schedule.clone(), offset: 0.0 };
        let (loss, grads) = training_loss(&exact, &[item.clone()], &schedule, 0.1, 4).unwrap();
        assert!(loss < 1e-24, "loss {loss}");
        assert!(grads.is_empty());
        let shifted = Oracle { offset: 1.0, ..exact };
        let (loss, _) = training_loss(&shifted, &[item], &schedule, 0.1, 4).unwrap();
        assert!((loss - 1.0).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn invalid_dropout_is_rejected() {
        let schedule = make_schedule(10, 0.01, 0.2).unwrap();
        let z0 = wave(2, 3, 0.4);
        let o = Oracle { z0: z0.clone(), schedule: schedule.clone(), offset: 0.0 };
        let item = TrainItem { z0, cond: ConditionerSet::default() };
        assert!(training_loss(&o, &[item.clone()], &schedule, 1.0, 0).is_err());
        assert!(training_loss(&o, &[item], &schedule, -0.1, 0).is_err());
    }

    fn toy_model(fusion: FusionMode) -> Denoiser {
        let config = DenoiserConfig {
            latent_channels: 2,
            cond_dim: 3,
            d_model: 4,
            heads: 2,
            ff_mult: 2,
            n_down: 1,
            n_mid: 0,
            n_up: 1,
            fusion,
            modalities: Modalities::VOT,
        };
        let mut m = Denoiser::new(config, 9).unwrap();
        // move zero-initialized biases off zero so every path carries gradient
        for v in m.params.values_mut() {
            *v = v.map(|x| x + 0.03);
        }
        m.norm = LatentNorm { shift: 0.2, scale: 1.5 };
        m
    }

    fn toy_batch() -> Vec<TrainItem> {
        (0..2)
            .map(|k| TrainItem {
                z0: wave(2, 3, 0.3 + k as f64 * 0.2),
                cond: ConditionerSet {
                    video: Some(wave(4, 3, 0.7 + k as f64)),
                    objects: Some(wave(4, 3, 1.1 + k as f64)),
                    text: Some(wave(1, 3, 0.5)),
                },
            })
            .collect()
    }

    #[test]
    fn loss_gradients_match_finite_differences_in_every_mode() {
        let schedule = make_schedule(20, 0.01, 0.3).unwrap();
        let batch = toy_batch();
        for fusion in FusionMode::ALL {
            let model = toy_model(fusion);
            // seed chosen so the batch contains a dropped and a kept sample
            let seed = (0..64)
                .find(|&s| {
                    let d: Vec<bool> = (0..2).map(|k| draw(s, k, 20, (3, 2), 0.5).dropped).collect();
                    d[0] != d[1]
                })
                .unwrap();
            let err = max_relative_error(
                model.params.values(),
                |g, vars| {
                    let p = Bound::from_vars(&model.params, vars.to_vec());
                    batch_loss_on_tape(&model, g, &p, &batch, &schedule, 0.5, seed).unwrap()
                },
                1e-6,
                // round-off in the difference quotient is ~1e-10 absolute
                1e-5,
            );
            assert!(err < 1e-4, "{fusion}: relative error {err}");
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_and_runs_are_reproducible() {
        let schedule = make_schedule(20, 0.01, 0.3).unwrap();
        let data = toy_batch();
        let cfg = TrainConfig { steps: 5, batch_size: 2, lr: 0.0, dropout_p: 0.1, seed: 3, checkpoint_every: 0 };
        let mut m = toy_model(FusionMode::XattnVAddO);
        let before = m.params.clone();
        train(&mut m, &data, &schedule, &cfg, &mut |_, _| Ok(())).unwrap();
        assert_eq!(m.params, before);

        let cfg = TrainConfig { lr: 1e-2, checkpoint_every: 2, ..cfg };
        let mut a = toy_model(FusionMode::XattnVAddO);
        let mut b = a.clone();
        let mut seen = Vec::new();
        let la = train(&mut a, &data, &schedule, &cfg, &mut |s, _| {
            seen.push(s);
            Ok(())
        })
        .unwrap();
        let lb = train(&mut b, &data, &schedule, &cfg, &mut |_, _| Ok(())).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a, b);
        assert_eq!(seen, vec![2, 4]);
        assert!(la.to_tsv().starts_with("step\tloss\tlr\n0\t"));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let schedule = make_schedule(5, 0.01, 0.2).unwrap();
        let mut m = toy_model(FusionMode::XattnV);
        let err = train(&mut m, &[], &schedule, &TrainConfig::default(), &mut |_, _| Ok(())).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
