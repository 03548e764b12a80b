//! The training loop: sampling, batching, Adam steps, validation and checkpoints.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::data::{add_awgn, augment, sample_rng};
use super::loss::mse_loss;
use super::optim::{lr_at, OptimState};
use crate::error::{config_err, Error, Result};
use crate::eval::dataset::{NamedImage, Split};
use crate::eval::image::ImageBuffer;
use crate::eval::report::evaluate;
use crate::model::Model;
use crate::tensor::{Scalar, Tape, Tensor};

/// One clean/noisy training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub clean: ImageBuffer,
    pub noisy: ImageBuffer,
}

/// Random crop, optional dihedral transform and fresh noise for patch `patch` of image `image`.
pub fn draw_sample(img: &NamedImage, cfg: &TrainConfig, epoch: usize, image: usize, patch: usize) -> Result<Sample> {
    let ps = cfg.patch_size;
    let (w, h) = (img.image.width(), img.image.height());
    if w < ps || h < ps {
        return Err(config_err!("image {} is {w}x{h}, smaller than the {ps}-pixel patch", img.name));
    }
    let mut rng = sample_rng(cfg.seed, epoch, image, patch);
    let x0 = rng.gen_range(0..=w - ps);
    let y0 = rng.gen_range(0..=h - ps);
    let mut clean = img.image.crop(x0, y0, ps, ps)?;
    if cfg.augment {
        clean = augment(&clean, rng.gen_range(0..8))?;
    }
    let noisy = add_awgn(&clean, cfg.sigma, &mut rng)?;
    Ok(Sample { clean, noisy })
}

/// Stacks `[1, C, H, W]` images into one `[N, C, H, W]` tensor.
pub fn stack<'a, T: Scalar>(images: impl IntoIterator<Item = &'a ImageBuffer>) -> Result<Tensor<T>> {
    let mut shape: Option<Vec<usize>> = None;
    let mut data = Vec::new();
    let mut n = 0;
    for img in images {
        let t = img.to_tensor::<T>();
        match &shape {
            None => shape = Some(t.shape().to_vec()),
            Some(s) if s.as_slice() != t.shape() => {
                return Err(config_err!("cannot batch {:?} with {:?}", s, t.shape()));
            }
            Some(_) => {}
        }
        data.extend_from_slice(t.data());
        n += 1;
    }
    let mut shape = shape.ok_or_else(|| config_err!("empty batch"))?;
    shape[0] = n;
    Tensor::new(shape, data)
}

/// Batches of one epoch, as `(image, patch)` pairs in shuffled order.
pub fn epoch_order(cfg: &TrainConfig, images: usize, epoch: usize) -> Vec<Vec<(usize, usize)>> {
    let mut pairs: Vec<(usize, usize)> =
        (0..images).flat_map(|i| (0..cfg.patches_per_image).map(move |p| (i, p))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5348_5546_464c_4521);
    rng.set_stream(epoch as u64);
    pairs.shuffle(&mut rng);
    pairs.chunks(cfg.batch_size).map(<[_]>::to_vec).collect()
}

pub fn steps_per_epoch(cfg: &TrainConfig, images: usize) -> usize {
    (images * cfg.patches_per_image).div_ceil(cfg.batch_size)
}

fn batch<T: Scalar>(samples: &[Sample]) -> Result<(Tensor<T>, Tensor<T>)> {
    Ok((stack(samples.iter().map(|s| &s.noisy))?, stack(samples.iter().map(|s| &s.clean))?))
}

fn check_loss(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("training loss became {v}")))
    }
}

/// Loss of the current weights on one batch, without gradients.
pub fn batch_loss<T: Scalar>(model: &Model<T>, samples: &[Sample], cfg: &TrainConfig) -> Result<f64> {
    let (noisy, clean) = batch::<T>(samples)?;
    let tape = Tape::no_grad();
    let p = model.params.bind_constant(&tape);
    let pred = model.forward_on(&tape, &p, &tape.constant(&noisy))?;
    check_loss(mse_loss(&tape, &pred, &tape.constant(&clean), cfg.loss)?.value().item().as_f64())
}

/// Forward, backward and one Adam update. Returns the loss before the update.
pub fn train_step<T: Scalar>(
    model: &mut Model<T>,
    state: &mut OptimState<T>,
    samples: &[Sample],
    cfg: &TrainConfig,
    lr: f64,
) -> Result<f64> {
    let (noisy, clean) = batch::<T>(samples)?;
    let (loss, grads) = {
        let tape = Tape::new();
        let p = model.params.bind(&tape);
        let pred = model.forward_on(&tape, &p, &tape.constant(&noisy))?;
        let loss = mse_loss(&tape, &pred, &tape.constant(&clean), cfg.loss)?;
        let value = check_loss(loss.value().item().as_f64())?;
        let g = tape.backward(&loss)?;
        let grads: Vec<Tensor<T>> = p
            .vars()
            .iter()
            .map(|v| g.get(v).cloned().unwrap_or_else(|| Tensor::zeros(v.shape().to_vec())))
            .collect();
        (value, grads)
    };
    cfg.adam.step(&mut model.params, &grads, state, lr)?;
    Ok(loss)
}

/// Per-epoch progress record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    /// Mean training loss over the epoch's steps.
    pub loss: f64,
    /// Mean validation PSNR in dB.
    pub val_psnr: f64,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch,step,lr,loss,val_psnr";
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{:e},{:.6e},{:.4}", self.epoch, self.step, self.lr, self.loss, self.val_psnr)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub steps: u64,
    /// Loss on the fixed probe batch before the first and after the last step.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mean validation PSNR of the noisy inputs themselves.
    pub noisy_val_psnr: f64,
    pub initial_val_psnr: f64,
    pub best_val_psnr: f64,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

/// `<out>.best`, next to `out`.
pub fn best_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".best");
    PathBuf::from(s)
}

/// Fixed batch drawn from epoch 0, used to report loss progress.
pub fn probe_batch(train: &[NamedImage], cfg: &TrainConfig) -> Result<Vec<Sample>> {
    (0..cfg.batch_size)
        .map(|i| draw_sample(&train[i % train.len()], cfg, 0, i % train.len(), i / train.len()))
        .collect()
}

/// Mean validation PSNR of the model output and of the noisy input.
pub fn validation_psnr<T: Scalar>(model: &Model<T>, val: &[NamedImage], cfg: &TrainConfig) -> Result<(f64, f64)> {
    let rows = evaluate(model, val, cfg.sigma, cfg.seed, None)?;
    let n = rows.len() as f64;
    Ok((
        rows.iter().map(|r| r.psnr_denoised).sum::<f64>() / n,
        rows.iter().map(|r| r.psnr_noisy).sum::<f64>() / n,
    ))
}

/// Trains `model` in place.
///
/// Epochs count from 1. Progress resumes from `state.step`: a run restored
/// from a checkpoint continues with the same batches an uninterrupted run
/// would have seen. With `out`, the latest weights go to `out` after every
/// epoch and the best-validating ones to `<out>.best`.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    state: &mut OptimState<T>,
    cfg: &TrainConfig,
    split: &Split,
    out: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(config_err!("training needs at least one image"));
    }
    let per_epoch = steps_per_epoch(cfg, split.train.len()) as u64;
    let max_steps = if cfg.max_steps == 0 { u64::MAX } else { cfg.max_steps as u64 };
    let probe = probe_batch(&split.train, cfg)?;
    let initial_loss = batch_loss(model, &probe, cfg)?;
    let (initial_val_psnr, noisy_val_psnr) = validation_psnr(model, &split.val, cfg)?;
    let mut best = (initial_val_psnr, 0);
    let mut log = Vec::new();

    let first_epoch = (state.step / per_epoch) as usize + 1;
    for epoch in first_epoch..=cfg.epochs {
        if state.step >= max_steps {
            break;
        }
        let lr = lr_at(epoch, cfg.base_lr);
        let skip = (state.step - (epoch as u64 - 1) * per_epoch) as usize;
        let (mut sum, mut count) = (0.0, 0usize);
        for pairs in epoch_order(cfg, split.train.len(), epoch).into_iter().skip(skip) {
            if state.step >= max_steps {
                break;
            }
            let samples = pairs
                .iter()
                .map(|&(i, p)| draw_sample(&split.train[i], cfg, epoch, i, p))
                .collect::<Result<Vec<_>>>()?;
            sum += train_step(model, state, &samples, cfg, lr)?;
            count += 1;
        }
        let (val_psnr, _) = validation_psnr(model, &split.val, cfg)?;
        let entry = EpochLog {
            epoch,
            step: state.step,
            lr,
            loss: if count == 0 { f64::NAN } else { sum / count as f64 },
            val_psnr,
        };
        log::info!("{entry}");
        on_epoch(&entry);
        log.push(entry);
        if let Some(path) = out {
            let ckpt = Checkpoint::from_model(model, Some(state), Some(cfg));
            ckpt.save(path)?;
            if val_psnr > best.0 || best.1 == 0 {
                ckpt.save(best_path(path))?;
            }
        }
        if val_psnr > best.0 || best.1 == 0 {
            best = (val_psnr, epoch);
        }
    }

    Ok(TrainOutcome {
        steps: state.step,
        initial_loss,
        final_loss: batch_loss(model, &probe, cfg)?,
        noisy_val_psnr,
        initial_val_psnr,
        best_val_psnr: best.0,
        best_epoch: best.1,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::dataset::split_validation;
    use crate::eval::synth::corpus;
    use crate::model::ModelConfig;
    use crate::nn::Init;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            patch_size: 16,
            patches_per_image: 2,
            batch_size: 2,
            epochs: 2,
            base_lr: 1e-3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn samples_are_reproducible_and_order_free() {
        let imgs = corpus(2, 24, 3);
        let cfg = tiny_cfg();
        let a = draw_sample(&imgs[1], &cfg, 3, 1, 0).unwrap();
        let _ = draw_sample(&imgs[0], &cfg, 3, 0, 0).unwrap();
        assert_eq!(a, draw_sample(&imgs[1], &cfg, 3, 1, 0).unwrap());
        assert_ne!(a, draw_sample(&imgs[1], &cfg, 4, 1, 0).unwrap());
        assert_eq!(a.clean.width(), 16);
    }

    #[test]
    fn epoch_order_covers_every_pair_once() {
        let cfg = TrainConfig {
            batch_size: 3,
            patches_per_image: 4,
            ..TrainConfig::default()
        };
        let batches = epoch_order(&cfg, 5, 2);
        assert_eq!(batches.len(), steps_per_epoch(&cfg, 5));
        let mut all: Vec<_> = batches.concat();
        all.sort_unstable();
        assert_eq!(all.len(), 20);
        all.dedup();
        assert_eq!(all.len(), 20);
        assert_ne!(epoch_order(&cfg, 5, 2), epoch_order(&cfg, 5, 3));
    }

    #[test]
    fn small_step_reduces_loss() {
        let imgs = corpus(2, 16, 5);
        let cfg = tiny_cfg();
        let mut model = Model::<f64>::new(ModelConfig::toy(), Init::Standard, 1).unwrap();
        let mut state = OptimState::new(&model.params);
        let samples: Vec<_> = (0..2).map(|i| draw_sample(&imgs[i], &cfg, 1, i, 0).unwrap()).collect();
        let before = batch_loss(&model, &samples, &cfg).unwrap();
        let reported = train_step(&mut model, &mut state, &samples, &cfg, 1e-6).unwrap();
        assert_eq!(before, reported);
        assert!(batch_loss(&model, &samples, &cfg).unwrap() < before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn stack_rejects_mixed_sizes() {
        let a = corpus(1, 16, 0);
        let b = corpus(1, 20, 0);
        assert!(stack::<f32>([&a[0].image, &b[0].image]).is_err());
        assert_eq!(stack::<f32>([&a[0].image, &a[0].image]).unwrap().shape(), &[2, 1, 16, 16]);
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        let split = split_validation(corpus(3, 16, 8));
        let cfg = TrainConfig {
            max_steps: 3,
            ..tiny_cfg()
        };
        let fresh = || Model::<f64>::new(ModelConfig::toy(), Init::Standard, 2).unwrap();

        let mut whole = fresh();
        let mut ws = OptimState::new(&whole.params);
        train(&mut whole, &mut ws, &cfg, &split, None, |_| {}).unwrap();

        let mut part = fresh();
        let mut ps = OptimState::new(&part.params);
        train(&mut part, &mut ps, &TrainConfig { max_steps: 1, ..cfg.clone() }, &split, None, |_| {}).unwrap();
        let ckpt = Checkpoint::decode(&Checkpoint::from_model(&part, Some(&ps), Some(&cfg)).encode()).unwrap();
        let mut resumed = ckpt.to_model::<f64>().unwrap();
        let mut rs = ckpt.optim_state(&resumed).unwrap().unwrap();
        train(&mut resumed, &mut rs, &cfg, &split, None, |_| {}).unwrap();

        assert_eq!(rs.step, 3);
        for ((n, a), (_, b)) in whole.params.iter().zip(resumed.params.iter()) {
            assert_eq!(a, b, "{n}");
        }
    }

    #[test]
    fn undersized_images_are_rejected() {
        let split = split_validation(corpus(2, 12, 0));
        let mut m = Model::<f32>::zeros(ModelConfig::toy()).unwrap();
        let mut s = OptimState::new(&m.params);
        let err = train(&mut m, &mut s, &tiny_cfg(), &split, None, |_| {}).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
