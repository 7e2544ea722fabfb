//! Wake-sleep training of the generative model and its posterior network,
//! followed by predictor training, plus checkpoint files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Corpus, IdMaps, QMatrix};
use crate::error::{ModelError, Result};
use crate::generative::{joint_log_prob_on_tape, GenerativeModel, JointSample, Timeline, DEFAULT_DELTA_HAT, DEFAULT_K_MAX};
use crate::kernel::params::{load_bundle, to_bundle};
use crate::kernel::{Gradients, Optimizer, OptimizerKind, ParamBundle, Tape};
use crate::model::ModelTheta;
use crate::posterior::{
    path_cross_entropy_on_tape, posterior_forward, posterior_inputs, posterior_logits_on_tape, sample_latents,
    PosteriorNetParams,
};
use crate::predictor::{predictor_bce_on_tape, predictor_features, PredictorParams};
use crate::rng;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub d_e: usize,
    /// Posterior LSTM width; `2K` when unset.
    pub d_h: Option<usize>,
    /// Predictor LSTM width; `80 + 4K` when unset.
    pub d_p: Option<usize>,
    pub delta_hat: f64,
    pub iters: usize,
    /// Predictor epochs; equal to `iters` when unset.
    pub pred_epochs: Option<usize>,
    pub lr: f64,
    /// Predictor learning rate; equal to `lr` when unset.
    pub pred_lr: Option<f64>,
    pub l2: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub k_max: usize,
    /// Latent paths drawn per student in each wake step.
    pub wake_samples: usize,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d_e: 20,
            d_h: None,
            d_p: None,
            delta_hat: DEFAULT_DELTA_HAT,
            iters: 100,
            pred_epochs: None,
            lr: 1e-3,
            pred_lr: None,
            l2: 1e-4,
            seed: 0,
            batch_size: 32,
            k_max: DEFAULT_K_MAX,
            wake_samples: 1,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn posterior_hidden(&self, concepts: usize) -> usize {
        self.d_h.unwrap_or(2 * concepts)
    }

    pub fn predictor_hidden(&self, concepts: usize) -> usize {
        self.d_p.unwrap_or_else(|| PredictorParams::default_hidden(concepts))
    }

    pub fn predictor_epochs(&self) -> usize {
        self.pred_epochs.unwrap_or(self.iters)
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(ModelError::ShapeMismatch(format!("config: {what} must be positive")));
        if self.d_e == 0 {
            return bad("d_e");
        }
        if self.batch_size == 0 {
            return bad("batch_size");
        }
        if self.wake_samples == 0 {
            return bad("wake_samples");
        }
        if !(self.delta_hat > 0.0) {
            return bad("delta_hat");
        }
        if !(self.lr > 0.0) || self.pred_lr.is_some_and(|lr| !(lr > 0.0)) {
            return bad("lr");
        }
        if self.d_h == Some(0) || self.d_p == Some(0) {
            return bad("hidden sizes");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub wake_loss: f64,
    pub sleep_loss: f64,
}

/// Timelines and responses of a corpus, computed once per training run.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub timelines: Vec<Timeline>,
    pub responses: Vec<Vec<u8>>,
}

impl TrainingData {
    pub fn new(corpus: &Corpus, theta: &ModelTheta, delta_hat: f64) -> Result<Self> {
        let model = GenerativeModel::new(theta, &corpus.qmatrix, delta_hat);
        let timelines = corpus
            .sequences
            .iter()
            .map(|s| model.sequence_timeline(s))
            .collect::<Result<Vec<_>>>()?;
        let responses = corpus.sequences.iter().map(|s| s.responses()).collect();
        Ok(TrainingData { timelines, responses })
    }

    pub fn len(&self) -> usize {
        self.timelines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timelines.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub theta: ModelTheta,
    pub phi: PosteriorNetParams,
    pub predictor: PredictorParams,
    pub theta_opt: Optimizer,
    pub phi_opt: Optimizer,
    pub predictor_opt: Optimizer,
    pub iteration: usize,
    pub history: Vec<LossRecord>,
    pub predictor_history: Vec<f64>,
}

/// Sums per-item losses and gradients in item order, so the result does not
/// depend on how many threads evaluated them.
pub(crate) fn sum_gradients<T, F>(items: &[T], f: F) -> Result<(f64, Gradients)>
where
    T: Sync,
    F: Fn(&T) -> Result<(f64, Gradients)> + Sync + Send,
{
    let parts: Vec<Result<(f64, Gradients)>> = items.par_iter().map(&f).collect();
    let mut loss = 0.0;
    let mut grads = Gradients::default();
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grads.accumulate(&g);
    }
    Ok((loss, grads))
}

fn check_finite(loss: f64, grads: &Gradients, phase: &'static str, iteration: usize) -> Result<()> {
    if loss.is_finite() && grads.is_finite() {
        Ok(())
    } else {
        Err(ModelError::NonFiniteLoss { phase, iteration })
    }
}

/// `-(1/B) Σ_i (1/S) Σ_s ln p(u'_is, r_i | θ)` with `u'` drawn from the
/// posterior network on the real responses, and its gradient in θ.
pub fn wake_objective(
    theta: &ModelTheta,
    phi: &PosteriorNetParams,
    q: &QMatrix,
    config: &TrainConfig,
    data: &TrainingData,
    batch: &[usize],
    seed: u64,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let model = GenerativeModel::new(theta, q, config.delta_hat);
    let weight = 1.0 / (batch.len() * config.wake_samples) as f64;
    sum_gradients(batch, |&i| {
        let tl = &data.timelines[i];
        let r = &data.responses[i];
        let out = posterior_forward(&model, phi, tl, r)?;
        let mut loss = 0.0;
        let mut grads = Gradients::default();
        for s in 0..config.wake_samples {
            let path = sample_latents(&out, rng::derive(seed, &[i as u64, s as u64]));
            let tape = Tape::new();
            let v = theta.bind(&tape, "theta", true);
            let lp = joint_log_prob_on_tape(&tape, &v, q, tl, &path, r);
            let l = tape.scale(lp, -weight);
            loss += tape.item(l);
            grads.accumulate(&tape.backward(l)?);
        }
        Ok((loss, grads))
    })
}

/// Sleep objective: cross-entropy of the posterior network on samples from
/// the current generative model, with gradient in φ.
pub fn sleep_objective(
    theta: &ModelTheta,
    phi: &PosteriorNetParams,
    q: &QMatrix,
    config: &TrainConfig,
    data: &TrainingData,
    batch: &[usize],
    seed: u64,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let model = GenerativeModel::new(theta, q, config.delta_hat);
    let weight = 1.0 / batch.len() as f64;
    sum_gradients(batch, |&i| {
        let tl = &data.timelines[i];
        let sample = model.ancestral_sample(tl, rng::derive(seed, &[i as u64]))?;
        sleep_item(&model, phi, tl, &sample, weight)
    })
}

fn sleep_item(
    model: &GenerativeModel,
    phi: &PosteriorNetParams,
    tl: &Timeline,
    sample: &JointSample,
    weight: f64,
) -> Result<(f64, Gradients)> {
    let tape = Tape::new();
    let inputs = posterior_inputs(model, tl, &sample.responses)?;
    let logits = posterior_logits_on_tape(&tape, phi, "phi", true, &inputs)?;
    let ce = path_cross_entropy_on_tape(&tape, &logits, &sample.path);
    let l = tape.scale(ce, weight);
    Ok((tape.item(l), tape.backward(l)?))
}

/// Mean predictor cross-entropy over steps after the first, with gradient
/// in the predictor parameters.
pub fn predictor_objective(
    pred: &PredictorParams,
    inputs: &[Vec<Vec<f64>>],
    responses: &[Vec<u8>],
    batch: &[usize],
) -> Result<(f64, Gradients)> {
    let count: usize = batch.iter().map(|&i| responses[i].len().saturating_sub(1)).sum();
    if count == 0 {
        return Ok((0.0, Gradients::default()));
    }
    let weight = 1.0 / count as f64;
    sum_gradients(batch, |&i| {
        let tape = Tape::new();
        let (bce, n) = predictor_bce_on_tape(&tape, pred, "predictor", &inputs[i], &responses[i])?;
        if n == 0 {
            return Ok((0.0, Gradients::default()));
        }
        let l = tape.scale(bce, weight);
        Ok((tape.item(l), tape.backward(l)?))
    })
}

impl TrainState {
    pub fn init(config: &TrainConfig, problems: usize, concepts: usize) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let opt = || Optimizer::new(config.optimizer, config.lr, config.l2);
        Ok(TrainState {
            config: config.clone(),
            theta: ModelTheta::init(problems, concepts, config.d_e, config.delta_hat, rng::derive_tag(seed, "theta")),
            phi: PosteriorNetParams::init(
                config.d_e,
                concepts,
                config.posterior_hidden(concepts),
                rng::derive_tag(seed, "phi"),
            ),
            predictor: PredictorParams::init(
                config.d_e,
                concepts,
                config.predictor_hidden(concepts),
                rng::derive_tag(seed, "predictor"),
            ),
            theta_opt: opt(),
            phi_opt: opt(),
            predictor_opt: Optimizer::new(config.optimizer, config.pred_lr.unwrap_or(config.lr), config.l2),
            iteration: 0,
            history: Vec::new(),
            predictor_history: Vec::new(),
        })
    }

    pub fn concepts(&self) -> usize {
        self.theta.concepts()
    }

    pub fn model<'a>(&'a self, q: &'a QMatrix) -> GenerativeModel<'a> {
        GenerativeModel {
            k_max: self.config.k_max,
            ..GenerativeModel::new(&self.theta, q, self.config.delta_hat)
        }
    }

    /// One optimizer step on θ; returns the batch wake loss (with the L2
    /// penalty) before the step.
    pub fn wake_step(&mut self, q: &QMatrix, data: &TrainingData, batch: &[usize], seed: u64) -> Result<f64> {
        let (loss, grads) = wake_objective(&self.theta, &self.phi, q, &self.config, data, batch, seed)?;
        let loss = loss + self.theta_opt.penalty(&self.theta);
        check_finite(loss, &grads, "wake", self.iteration)?;
        self.theta_opt.step(&mut self.theta, "theta", &grads)?;
        Ok(loss)
    }

    /// One optimizer step on φ using skeletons of `batch`.
    pub fn sleep_step(&mut self, q: &QMatrix, data: &TrainingData, batch: &[usize], seed: u64) -> Result<f64> {
        let (loss, grads) = sleep_objective(&self.theta, &self.phi, q, &self.config, data, batch, seed)?;
        let loss = loss + self.phi_opt.penalty(&self.phi);
        check_finite(loss, &grads, "sleep", self.iteration)?;
        self.phi_opt.step(&mut self.phi, "phi", &grads)?;
        Ok(loss)
    }

    fn batches(&self, n: usize, tag: &str) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::rng(rng::derive(
            rng::derive_tag(self.config.seed, tag),
            &[self.iteration as u64],
        )));
        order.chunks(self.config.batch_size).map(<[usize]>::to_vec).collect()
    }

    /// One outer iteration: wake over all students in mini-batches, then
    /// sleep over all skeletons in mini-batches.
    pub fn iterate(&mut self, q: &QMatrix, data: &TrainingData) -> Result<LossRecord> {
        if data.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let n = data.len() as f64;
        let it = self.iteration as u64;
        let mut wake = 0.0;
        for (b, batch) in self.batches(data.len(), "wake-order").iter().enumerate() {
            let seed = rng::derive(rng::derive_tag(self.config.seed, "wake"), &[it, b as u64]);
            wake += self.wake_step(q, data, batch, seed)? * batch.len() as f64 / n;
        }
        let mut sleep = 0.0;
        for (b, batch) in self.batches(data.len(), "sleep-order").iter().enumerate() {
            let seed = rng::derive(rng::derive_tag(self.config.seed, "sleep"), &[it, b as u64]);
            sleep += self.sleep_step(q, data, batch, seed)? * batch.len() as f64 / n;
        }
        self.iteration += 1;
        let record = LossRecord {
            iteration: self.iteration,
            wake_loss: wake,
            sleep_loss: sleep,
        };
        self.history.push(record);
        Ok(record)
    }

    /// Trains the predictor for `epochs` passes with θ and φ frozen; returns
    /// the mean loss of each epoch.
    pub fn train_predictor(&mut self, q: &QMatrix, data: &TrainingData, epochs: usize) -> Result<Vec<f64>> {
        let model = self.model(q);
        let inputs = data
            .timelines
            .iter()
            .zip(&data.responses)
            .map(|(tl, r)| Ok(predictor_features(&model, &self.phi, tl, r)?.inputs))
            .collect::<Result<Vec<_>>>()?;
        let total: usize = data.responses.iter().map(|r| r.len().saturating_sub(1)).sum();
        let mut losses = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut rng::rng(rng::derive(
                rng::derive_tag(self.config.seed, "predictor-order"),
                &[epoch as u64],
            )));
            let mut epoch_loss = 0.0;
            for batch in order.chunks(self.config.batch_size) {
                let (loss, grads) = predictor_objective(&self.predictor, &inputs, &data.responses, batch)?;
                check_finite(loss, &grads, "predictor", epoch)?;
                let count: usize = batch.iter().map(|&i| data.responses[i].len().saturating_sub(1)).sum();
                if total > 0 {
                    epoch_loss += loss * count as f64 / total as f64;
                }
                self.predictor_opt.step(&mut self.predictor, "predictor", &grads)?;
            }
            losses.push(epoch_loss);
        }
        self.predictor_history.extend(&losses);
        Ok(losses)
    }
}

/// Full run: `iters` wake-sleep iterations, then predictor training.
pub fn train(corpus: &Corpus, config: &TrainConfig) -> Result<TrainState> {
    train_with_progress(corpus, config, |_| {})
}

pub fn train_with_progress(
    corpus: &Corpus,
    config: &TrainConfig,
    mut progress: impl FnMut(&LossRecord),
) -> Result<TrainState> {
    if corpus.sequences.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let mut state = TrainState::init(config, corpus.num_problems(), corpus.num_concepts())?;
    let data = TrainingData::new(corpus, &state.theta, config.delta_hat)?;
    for _ in 0..config.iters {
        let record = state.iterate(&corpus.qmatrix, &data)?;
        progress(&record);
    }
    state.train_predictor(&corpus.qmatrix, &data, config.predictor_epochs())?;
    Ok(state)
}

pub fn write_loss_csv<W: Write>(out: W, history: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "wake_loss", "sleep_loss"])?;
    for r in history {
        w.write_record([
            r.iteration.to_string(),
            r.wake_loss.to_string(),
            r.sleep_loss.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Everything needed to reuse a trained model: configuration, parameters,
/// the Q-matrix and id maps of the training corpus, and loss history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub params: ParamBundle,
    pub qmatrix: QMatrix,
    pub id_maps: IdMaps,
    pub history: Vec<LossRecord>,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState, corpus: &Corpus) -> Self {
        let mut params = to_bundle(&state.theta, "theta");
        params.extend(to_bundle(&state.phi, "phi"));
        params.extend(to_bundle(&state.predictor, "predictor"));
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: state.config.clone(),
            params,
            qmatrix: corpus.qmatrix.clone(),
            id_maps: corpus.ids.clone(),
            history: state.history.clone(),
        }
    }

    /// Rebuilds a training state with fresh optimizer moments.
    pub fn to_state(&self) -> Result<TrainState> {
        let corrupt = |e: String| ModelError::CorruptFile(e);
        let mut state = TrainState::init(&self.config, self.qmatrix.problems(), self.qmatrix.concepts())?;
        load_bundle(&mut state.theta, "theta", &self.params).map_err(|e| corrupt(e.to_string()))?;
        load_bundle(&mut state.phi, "phi", &self.params).map_err(|e| corrupt(e.to_string()))?;
        load_bundle(&mut state.predictor, "predictor", &self.params).map_err(|e| corrupt(e.to_string()))?;
        state.history = self.history.clone();
        state.iteration = self.history.len();
        Ok(state)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| ModelError::CorruptFile(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ModelError::CorruptFile(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| ModelError::CorruptFile("missing version".into()))?;
        if version != u64::from(CHECKPOINT_VERSION) {
            return Err(ModelError::VersionMismatch {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                expected: CHECKPOINT_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| ModelError::CorruptFile(e.to_string()))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(ckpt.to_json()?.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let mut text = String::new();
    BufReader::new(File::open(path)?).read_to_string(&mut text)?;
    Checkpoint::from_json(&text)
}
