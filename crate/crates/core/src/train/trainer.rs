use std::fmt::Write as _;
use std::path::Path;

use super::adamw::{clip_grad_norm, AdamW};
use super::config::TrainConfig;
use super::loss::{lm_loss, vqa_loss_mask, LabelSmoothing, LossMask};
use super::schedule::lr_at;
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{GitModel, Visual};
use crate::param::ParamGroup;
use crate::tensor::{Scalar, Tensor};
use crate::vocab::{TokenId, BOS, EOS};

/// One teacher-forced training sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub visual: Visual,
    /// Decoder input, starting with BOS.
    pub input_ids: Vec<TokenId>,
    /// `input_ids` shifted left by one, ending in EOS.
    pub targets: Vec<TokenId>,
    pub mask: LossMask,
}

impl Example {
    pub fn caption(visual: Visual, caption: &[TokenId]) -> Self {
        let mut input_ids = Vec::with_capacity(caption.len() + 1);
        input_ids.push(BOS);
        input_ids.extend_from_slice(caption);
        let mut targets = caption.to_vec();
        targets.push(EOS);
        let mask = LossMask::all(targets.len());
        Example {
            visual,
            input_ids,
            targets,
            mask,
        }
    }

    /// Question and answer concatenated as one caption; only the answer and
    /// EOS are supervised.
    pub fn vqa(visual: Visual, question: &[TokenId], answer: &[TokenId]) -> Self {
        let mut text = question.to_vec();
        text.extend_from_slice(answer);
        let mut ex = Self::caption(visual, &text);
        ex.mask = vqa_loss_mask(question.len(), answer.len());
        ex
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub lr_encoder: f64,
    pub lr_decoder: f64,
}

/// Loss of one example, built on `tape`.
pub fn example_loss<T: Scalar>(
    model: &GitModel<T>,
    tape: &mut Tape<T>,
    ex: &Example,
    smoothing: LabelSmoothing,
) -> Result<crate::autodiff::Var> {
    let logits = model.forward_on(tape, &ex.visual, &ex.input_ids)?;
    lm_loss(tape, logits, &ex.targets, &ex.mask, smoothing)
}

/// Mean loss over `examples` without updating anything.
pub fn evaluate_loss<T: Scalar>(
    model: &GitModel<T>,
    examples: &[Example],
    smoothing: LabelSmoothing,
) -> Result<f64> {
    let mut total = 0.0;
    for ex in examples {
        let mut tape = Tape::new();
        let l = example_loss(model, &mut tape, ex, smoothing)?;
        total += tape.value(l).item().as_f64();
    }
    Ok(total / examples.len().max(1) as f64)
}

pub struct Trainer<T> {
    model: GitModel<T>,
    opt: AdamW,
    cfg: TrainConfig,
    step: usize,
    trace: Vec<LossRecord>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: GitModel<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let opt = AdamW::new(model.params(), cfg.beta1, cfg.beta2, cfg.weight_decay);
        Ok(Trainer {
            model,
            opt,
            cfg,
            step: 0,
            trace: Vec::new(),
        })
    }

    pub fn model(&self) -> &GitModel<T> {
        &self.model
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.cfg.total_iters
    }

    pub fn trace(&self) -> &[LossRecord] {
        &self.trace
    }

    fn smoothing(&self) -> LabelSmoothing {
        LabelSmoothing::excluding_pad(self.cfg.label_smoothing)
    }

    /// One optimizer update on `batch`: per-sequence mean loss, averaged over
    /// the batch. Returns the batch loss.
    pub fn step(&mut self, batch: &[Example]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Contract("empty training batch".into()));
        }
        if self.is_finished() {
            return Err(Error::Contract(format!(
                "training already ran its {} steps",
                self.cfg.total_iters
            )));
        }
        let params = self.model.params();
        let mut grads: Vec<Tensor<T>> = params
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape()))
            .collect();
        let mut loss_sum = 0.0;
        let inv = T::of(1.0 / batch.len() as f64);
        for ex in batch {
            let mut tape = Tape::new();
            let loss = example_loss(&self.model, &mut tape, ex, self.smoothing())?;
            let value = tape.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    step: self.step,
                    detail: format!("loss is {value}"),
                });
            }
            loss_sum += value;
            tape.backward(loss)?;
            for (id, g) in tape.param_grads() {
                for (acc, &gv) in grads[id.index()].data_mut().iter_mut().zip(g.data()) {
                    *acc += gv * inv;
                }
            }
        }
        if let Some(max) = self.cfg.grad_clip {
            let norm = clip_grad_norm(&mut grads, max);
            if !norm.is_finite() {
                return Err(Error::Diverged {
                    step: self.step,
                    detail: format!("gradient norm is {norm}"),
                });
            }
        }
        let lr_step = self.step + 1;
        let lr_enc = lr_at(lr_step, &self.cfg, ParamGroup::Encoder)?;
        let lr_dec = lr_at(lr_step, &self.cfg, ParamGroup::Decoder)?;
        self.opt.step(self.model.params_mut(), &grads, |g| match g {
            ParamGroup::Encoder => lr_enc,
            ParamGroup::Decoder => lr_dec,
        })?;
        self.step += 1;
        let loss = loss_sum / batch.len() as f64;
        if self.step % self.cfg.log_every == 0 || self.step == self.cfg.total_iters {
            self.trace.push(LossRecord {
                step: self.step,
                loss,
                lr_encoder: lr_enc,
                lr_decoder: lr_dec,
            });
        }
        Ok(loss)
    }

    /// Consumes `stream` in batches until `total_iters` updates are done or
    /// the stream runs dry. A trailing partial batch is still used.
    pub fn run(&mut self, stream: impl IntoIterator<Item = Example>) -> Result<()> {
        let mut it = stream.into_iter();
        while !self.is_finished() {
            let batch: Vec<Example> = it.by_ref().take(self.cfg.batch_size).collect();
            if batch.is_empty() {
                break;
            }
            self.step(&batch)?;
        }
        Ok(())
    }

    pub fn into_parts(self) -> (GitModel<T>, Vec<LossRecord>) {
        (self.model, self.trace)
    }
}

/// Trains `model` on `stream` and returns it with its loss trace.
pub fn train<T: Scalar>(
    model: GitModel<T>,
    stream: impl IntoIterator<Item = Example>,
    cfg: TrainConfig,
) -> Result<(GitModel<T>, Vec<LossRecord>)> {
    let mut trainer = Trainer::new(model, cfg)?;
    trainer.run(stream)?;
    Ok(trainer.into_parts())
}

pub fn loss_csv(trace: &[LossRecord]) -> String {
    let mut out = String::from("step,loss,lr_encoder,lr_decoder\n");
    for r in trace {
        let _ = writeln!(out, "{},{},{},{}", r.step, r.loss, r.lr_encoder, r.lr_decoder);
    }
    out
}

pub fn write_loss_csv(path: &Path, trace: &[LossRecord]) -> Result<()> {
    std::fs::write(path, loss_csv(trace)).map_err(|e| Error::io(path, e))
}
