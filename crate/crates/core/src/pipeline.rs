//! End-to-end stages shared by the command-line tools: conditioner
//! extraction, latent encoding, training, generation and evaluation.

use crate::codec::mel::{MelAnalyzer, MelSpectrogram};
use crate::codec::vae::{latent_frames, train_vae, Latent, TinyVae, Vae, VaeTrainConfig};
use crate::codec::vocoder::MelInverter;
use crate::config::{ExperimentConfig, VaeKind};
use crate::diffusion::{
    make_schedule, sample, train, Branch, ConditionerSet, Denoiser, EpsModel, GuidanceConfig, LatentNorm, Modalities,
    NoiseSchedule, TrainConfig, TrainItem, TrainLog,
};
use crate::embedding::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::grounding::{build_object_conditioner, Lexicon, OracleGrounder};
use crate::matrix::Matrix;
use crate::params::{Bound, ParamSet};
use crate::tape::{Graph, Var};
use crate::metrics::{evaluate_clips, ClassifierParams, ClipInput, EvalConfig, EvalReport, OnsetParams};
use crate::rng::derive_seed;
use crate::scene::{generate_dataset, render_frames, Scene, SceneScript};

/// Base seeds of the training and held-out scene splits.
pub fn split_seeds(seed: u64) -> (u64, u64) {
    (derive_seed(seed, "scenes-train", 0), derive_seed(seed, "scenes-eval", 0))
}

pub fn synth_split(cfg: &ExperimentConfig, n: usize, held_out: bool) -> Result<Vec<Scene>> {
    let (train, eval) = split_seeds(cfg.seed);
    generate_dataset(n, if held_out { eval } else { train }, &cfg.scene)
}

/// Everything fixed by the configuration that the stages share.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub space: EmbeddingSpace,
    pub lexicon: Lexicon,
    pub grounder: OracleGrounder,
    pub vae: Vae,
    pub schedule: NoiseSchedule,
    analyzer: MelAnalyzer,
    inverter: MelInverter,
}

impl Context {
    pub fn new(cfg: ExperimentConfig, vae: Vae) -> Result<Self> {
        cfg.validate()?;
        if *vae.mel_params() != cfg.mel {
            return Err(Error::Config(format!(
                "VAE was built for {:?}, configuration asks for {:?}",
                vae.mel_params(),
                cfg.mel
            )));
        }
        Ok(Self {
            space: EmbeddingSpace::new(cfg.embedding_dim, derive_seed(cfg.seed, "embedding", 0))?,
            lexicon: Lexicon::catalog(),
            grounder: OracleGrounder { noise_level: cfg.grounding_noise, seed: derive_seed(cfg.seed, "grounding", 0) },
            schedule: make_schedule(cfg.schedule_steps, cfg.beta_start, cfg.beta_end)?,
            analyzer: MelAnalyzer::new(cfg.mel)?,
            inverter: MelInverter::new(MelAnalyzer::new(cfg.mel)?)?,
            vae,
            cfg,
        })
    }

    /// Video, object and caption conditioners for one script.
    pub fn conditioners(&self, script: &SceneScript) -> Result<ConditionerSet> {
        let frames = render_frames(script);
        let objects = build_object_conditioner(&frames, &script.caption, &self.lexicon, &self.space, &self.grounder)?;
        Ok(ConditionerSet {
            video: Some(self.space.embed_video(&frames)),
            objects: Some(objects.vectors),
            text: Some(self.space.embed_caption(&script.caption, &self.lexicon)),
        })
    }

    pub fn mel(&self, waveform: &[f32]) -> Result<MelSpectrogram> {
        self.analyzer.compute(waveform)
    }

    /// Posterior-mean latent, `C × T_lat`.
    pub fn latent(&self, waveform: &[f32]) -> Result<Matrix> {
        Ok(self.vae.encode(&self.mel(waveform)?)?.0.values)
    }

    pub fn train_items(&self, scenes: &[Scene]) -> Result<Vec<TrainItem>> {
        scenes
            .iter()
            .map(|s| Ok(TrainItem { z0: self.latent(&s.waveform)?, cond: self.conditioners(&s.script)? }))
            .collect()
    }

    pub fn new_model(&self) -> Result<Denoiser> {
        let config = self.cfg.denoiser(self.vae.channels(), self.cfg.embedding_dim);
        Denoiser::new(config, derive_seed(self.cfg.seed, "model-init", 0))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.cfg.train_steps,
            batch_size: self.cfg.batch_size,
            lr: self.cfg.lr,
            dropout_p: self.cfg.dropout_p,
            seed: derive_seed(self.cfg.seed, "train", 0),
            checkpoint_every: self.cfg.checkpoint_every,
        }
    }

    pub fn train_model(
        &self,
        items: &[TrainItem],
        on_checkpoint: &mut dyn FnMut(usize, &Denoiser) -> Result<()>,
    ) -> Result<(Denoiser, TrainLog)> {
        let mut model = self.new_model()?;
        let log = train(&mut model, items, &self.schedule, &self.train_config(), on_checkpoint)?;
        Ok((model, log))
    }

    /// Samples a latent for `script` and vocodes it to the script's length.
    pub fn generate(&self, model: &Denoiser, script: &SceneScript) -> Result<(Vec<f32>, MelSpectrogram)> {
        let cond = restrict(&self.conditioners(script)?, model.config.modalities);
        self.generate_with(model, model, &cond, script)
    }

    /// Like [`Context::generate`] but every conditioner is its null embedding.
    pub fn generate_unconditional(&self, model: &Denoiser, script: &SceneScript) -> Result<(Vec<f32>, MelSpectrogram)> {
        self.generate_with(&Unconditional(model), model, &ConditionerSet::default(), script)
    }

    fn generate_with(
        &self,
        eps: &dyn EpsModel,
        model: &Denoiser,
        cond: &ConditionerSet,
        script: &SceneScript,
    ) -> Result<(Vec<f32>, MelSpectrogram)> {
        if model.config.latent_channels != self.vae.channels() || model.config.cond_dim != self.cfg.embedding_dim {
            return Err(Error::Config(format!(
                "model expects {} latent channels and {}-d conditioners; the run provides {} and {}",
                model.config.latent_channels,
                model.config.cond_dim,
                self.vae.channels(),
                self.cfg.embedding_dim
            )));
        }
        let samples = script.sample_count();
        let mel_frames = self.cfg.mel.frames_for(samples).ok_or_else(|| {
            Error::Data(format!("scene of {samples} samples is shorter than one analysis window"))
        })?;
        let ds = self.vae.downsampling();
        let frames = latent_frames(mel_frames, ds);
        let guidance = GuidanceConfig { alpha: self.cfg.guidance_alpha };
        let seed = derive_seed(self.cfg.seed, "generate", script.seed);
        let z = sample(eps, cond, &self.schedule, &guidance, (self.vae.channels(), frames), seed)?;
        let mel = self.vae.decode(&Latent { values: z, downsampling: ds, mel_frames })?;
        let mut wave = self.inverter.reconstruct(&mel, self.cfg.vocoder_iters)?;
        wave.resize(samples, 0.0);
        Ok((wave, mel))
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            mel: self.cfg.mel,
            classifier: ClassifierParams::default(),
            onsets: OnsetParams::default(),
            peak_threshold: self.cfg.eval_peak_threshold,
            window_s: self.cfg.eval_window_s,
        }
    }

    /// Scores generated clips against the reference scenes they came from.
    pub fn evaluate(&self, ids: &[String], generated: &[Vec<f32>], reference: &[Scene]) -> Result<EvalReport> {
        if generated.len() != reference.len() || ids.len() != reference.len() {
            return Err(Error::Contract("clip ids, generated and reference clips differ in number".into()));
        }
        let videos: Vec<Matrix> = reference.iter().map(|s| self.space.embed_video(&render_frames(&s.script))).collect();
        let clips: Vec<ClipInput> = (0..reference.len())
            .map(|i| ClipInput {
                id: &ids[i],
                generated: &generated[i],
                reference: &reference[i].waveform,
                video: &videos[i],
                fps: reference[i].script.fps,
            })
            .collect();
        evaluate_clips(&clips, self.cfg.scene.sample_rate_hz, &self.eval_config())
    }
}

/// Routes both guidance branches through the null embeddings.
struct Unconditional<'a>(&'a Denoiser);

impl EpsModel for Unconditional<'_> {
    fn params(&self) -> &ParamSet {
        &self.0.params
    }

    fn norm(&self) -> LatentNorm {
        self.0.norm
    }

    fn forward(&self, g: &mut Graph, p: &Bound, tokens: &Matrix, t: usize, cond: &ConditionerSet, _: Branch) -> Result<Var> {
        self.0.forward(g, p, tokens, t, cond, Branch::Unconditional)
    }
}

/// Keeps only the conditioners in `m`.
pub fn restrict(cond: &ConditionerSet, m: Modalities) -> ConditionerSet {
    ConditionerSet {
        video: cond.video.clone().filter(|_| m.video),
        objects: cond.objects.clone().filter(|_| m.objects),
        text: cond.text.clone().filter(|_| m.text),
    }
}

/// The identity codec, or a tiny VAE trained on `scenes`.
pub fn build_vae(cfg: &ExperimentConfig, scenes: &[Scene]) -> Result<Vae> {
    match cfg.vae_kind {
        VaeKind::Identity => Ok(Vae::identity(cfg.mel)),
        VaeKind::Tiny => {
            let analyzer = MelAnalyzer::new(cfg.mel)?;
            let mels = scenes.iter().map(|s| analyzer.compute(&s.waveform)).collect::<Result<Vec<_>>>()?;
            let mut vae = TinyVae::new(cfg.mel, cfg.vae_shape, derive_seed(cfg.seed, "vae", 0))?;
            let vcfg = VaeTrainConfig {
                steps: cfg.vae_steps,
                lr: cfg.vae_lr,
                beta_kl: cfg.vae_beta_kl,
                seed: derive_seed(cfg.seed, "vae-train", 0),
            };
            train_vae(&mut vae, &mels, &vcfg)?;
            Ok(Vae::Tiny(vae))
        }
    }
}
