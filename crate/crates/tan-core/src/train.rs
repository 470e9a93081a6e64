//! Multi-label training: per-frame binary cross-entropy, Adam with bias
//! correction, a stepped learning-rate schedule and a deterministic
//! shuffled clip loop.

use crate::data::Dataset;
use crate::error::{Result, TanError};
use crate::eval::{evaluate, EvalProtocol};
use crate::graph::Graph;
use crate::model::Model;
use crate::ops;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment buffers plus the step counter.
pub struct OptimState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    step: u64,
    hyper: AdamHyper,
}

impl OptimState {
    pub fn new(model: &Model<f32>, hyper: AdamHyper) -> Self {
        OptimState {
            m: model.params().iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            v: model.params().iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            step: 0,
            hyper,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update over every model parameter. Gradients are read
    /// from the tensors (absent gradient means zero) and scaled by
    /// `grad_scale` before the moment updates.
    pub fn adam_step(&mut self, model: &Model<f32>, lr: f32, grad_scale: f32) {
        self.step += 1;
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powi(self.step as i32);
        let bc2 = 1.0 - h.beta2.powi(self.step as i32);
        for (i, (_, param)) in model.params().iter().enumerate() {
            let grad = param.grad();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let mut new_data = param.to_vec();
            for j in 0..new_data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[j]) * grad_scale;
                m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g;
                v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                new_data[j] -= lr * m_hat / (v_hat.sqrt() + h.eps);
            }
            param.set_data(&new_data);
        }
    }
}

/// Stepped schedule: the rate of the last entry whose epoch is <= the
/// current epoch.
#[derive(Debug, Clone)]
pub struct LrSchedule(Vec<(usize, f32)>);

impl LrSchedule {
    pub fn new(mut pairs: Vec<(usize, f32)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(TanError::Config("learning-rate schedule is empty".into()));
        }
        pairs.sort_by_key(|&(e, _)| e);
        if pairs[0].0 != 0 {
            return Err(TanError::Config(
                "learning-rate schedule must start at epoch 0".into(),
            ));
        }
        if pairs.iter().any(|&(_, lr)| !(lr > 0.0) || !lr.is_finite()) {
            return Err(TanError::Config("learning rates must be positive".into()));
        }
        Ok(LrSchedule(pairs))
    }

    /// Desk-scale default: drop the rate by 10x at the two-thirds point.
    pub fn desk_default(epochs: usize, base: f32) -> Self {
        let drop_at = (epochs * 2) / 3;
        if drop_at == 0 {
            LrSchedule(vec![(0, base)])
        } else {
            LrSchedule(vec![(0, base), (drop_at, base * 0.1)])
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f32 {
        self.0
            .iter()
            .take_while(|&&(e, _)| e <= epoch)
            .last()
            .map(|&(_, lr)| lr)
            .unwrap_or(self.0[0].1)
    }

    pub fn entries(&self) -> &[(usize, f32)] {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    pub schedule: LrSchedule,
    /// Clips whose gradients accumulate into one optimizer step.
    pub grad_accum: usize,
    /// Initialize the head bias to the logit of each class's label prior.
    pub init_head_prior: bool,
    /// Evaluate (frame/video mAP) on this dataset after each epoch;
    /// defaults to the training set.
    pub eval_protocol: EvalProtocol,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            seed,
            schedule: LrSchedule::desk_default(epochs, 1e-3),
            grad_accum: 1,
            init_head_prior: true,
            eval_protocol: EvalProtocol::Dense,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub frame_map: f64,
    pub video_map: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    /// Line-oriented CSV: `epoch,mean_loss,frame_map,video_map` after
    /// `#`-prefixed header comments.
    pub fn to_csv(&self, header_comments: &[String]) -> String {
        let mut out = String::new();
        for c in header_comments {
            out.push_str(&format!("# {c}\n"));
        }
        out.push_str("epoch,mean_loss,frame_map,video_map\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.mean_loss, e.frame_map, e.video_map
            ));
        }
        out
    }
}

/// Label prior per class over all frames, clamped away from 0 and 1.
fn label_priors(data: &Dataset) -> Vec<f32> {
    let k = data.num_classes;
    let mut counts = vec![0.0f64; k];
    let mut frames = 0.0f64;
    for v in &data.videos {
        frames += v.t as f64;
        for t in 0..v.t {
            for class in 0..k {
                if v.label(t, class) {
                    counts[class] += 1.0;
                }
            }
        }
    }
    counts
        .iter()
        .map(|&c| ((c / frames.max(1.0)) as f32).clamp(1e-3, 1.0 - 1e-3))
        .collect()
}

/// Train in place. One clip per backward pass; shuffling, initialization
/// and the optimizer trajectory are all functions of `cfg.seed`, so a
/// fixed seed reproduces the final checkpoint bit for bit.
pub fn train(
    model: &mut Model<f32>,
    data: &Dataset,
    cfg: &TrainConfig,
    epoch_offset: usize,
) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(TanError::Dataset("training dataset is empty".into()));
    }
    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        return Ok(log);
    }
    if cfg.grad_accum == 0 {
        return Err(TanError::Config("grad_accum must be >= 1".into()));
    }

    if cfg.init_head_prior && epoch_offset == 0 {
        let priors = label_priors(data);
        let bias: Vec<f32> = priors.iter().map(|&p| (p / (1.0 - p)).ln()).collect();
        model
            .param("head.bias")
            .expect("model has a head")
            .set_data(&bias);
    }

    let mut opt = OptimState::new(model, AdamHyper::default());
    let clip_tensors: Vec<Tensor<f32>> = data
        .videos
        .iter()
        .map(|v| v.clip_tensor())
        .collect::<Result<_>>()?;

    for e in 0..cfg.epochs {
        let epoch = epoch_offset + e;
        let lr = cfg.schedule.lr_at(epoch);
        let mut order: Vec<usize> = (0..data.videos.len()).collect();
        SplitMix64::for_stream(cfg.seed, epoch as u64).shuffle(&mut order);

        let mut loss_sum = 0.0f64;
        let mut pending = 0usize;
        for (pos, &vi) in order.iter().enumerate() {
            let video = &data.videos[vi];
            let mut g = Graph::recording();
            let logits = model.forward_dense(&mut g, &clip_tensors[vi])?;
            let loss = ops::bce_multilabel_loss(&mut g, &logits, &video.labels)?;
            let loss_val = loss.item();
            if !loss_val.is_finite() {
                return Err(TanError::NanLoss {
                    epoch,
                    clip: video.id.clone(),
                    lr,
                });
            }
            loss_sum += loss_val as f64;
            g.backward(&loss)?;
            pending += 1;
            if pending == cfg.grad_accum || pos + 1 == order.len() {
                opt.adam_step(model, lr, 1.0 / pending as f32);
                model.zero_grads();
                pending = 0;
            }
        }

        let report = evaluate(model, data, cfg.eval_protocol)?;
        log.epochs.push(EpochStats {
            epoch,
            mean_loss: loss_sum / data.videos.len() as f64,
            frame_map: report.frame_map,
            video_map: report.video_map,
        });
    }
    Ok(log)
}
