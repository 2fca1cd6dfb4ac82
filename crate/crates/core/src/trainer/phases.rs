use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainingConfig;
use super::lr_schedule;
use crate::error::{Error, Result};
use crate::imaging::{Image, ResampleMethod, Resampler};
use crate::losses::{LossValue, Objective};
use crate::networks::{Adam, Gradients, NetworkKind, NetworkParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Ppnn,
    Vcnn,
    Fdnn,
    FinalPpnn,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Ppnn => "ppnn",
            Phase::Vcnn => "vcnn",
            Phase::Fdnn => "fdnn",
            Phase::FinalPpnn => "final_ppnn",
        }
    }

    /// The network a phase updates.
    pub fn network(self) -> NetworkKind {
        match self {
            Phase::Ppnn | Phase::FinalPpnn => NetworkKind::Ppnn,
            Phase::Vcnn => NetworkKind::Vcnn,
            Phase::Fdnn => NetworkKind::Fdnn,
        }
    }

    pub(crate) fn code(self) -> u64 {
        match self {
            Phase::Ppnn => 1,
            Phase::Vcnn => 2,
            Phase::Fdnn => 3,
            Phase::FinalPpnn => 4,
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Epoch and batch counts of one phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhaseSchedule {
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
}

impl PhaseSchedule {
    /// `epochs` passes of `floor(pool/m)` batches (at least one).
    pub fn for_pool(epochs: usize, batch_size: usize, pool: usize) -> Self {
        PhaseSchedule {
            epochs,
            batches_per_epoch: (pool / batch_size.max(1)).max(1),
            batch_size: batch_size.max(1),
        }
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.batches_per_epoch
    }
}

/// One logged epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub outer_iter: usize,
    pub phase: Phase,
    pub epoch: usize,
    pub loss: LossValue,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

/// What a phase did.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseReport {
    pub outer_iter: usize,
    pub phase: Phase,
    pub epochs: Vec<EpochRecord>,
    pub steps: usize,
    /// Norm of the first batch's parameter gradient.
    pub first_grad_norm: f64,
    /// Checksum of the frozen VCNN before and after an FDNN phase.
    pub frozen_checksums: Option<(u64, u64)>,
}

impl PhaseReport {
    pub fn first_loss(&self) -> f64 {
        self.epochs.first().map_or(f64::NAN, |e| e.loss.value)
    }

    pub fn last_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.loss.value)
    }
}

/// Settings shared by every phase.
#[derive(Clone, Debug)]
pub struct PhaseContext<'a> {
    pub cfg: &'a TrainingConfig,
    pub outer_iter: usize,
    pub schedule: PhaseSchedule,
    pub seed: u64,
}

impl<'a> PhaseContext<'a> {
    /// Schedule sized from the pool, as used outside the full algorithm.
    pub fn standalone(cfg: &'a TrainingConfig, epochs: usize, pool: usize) -> Self {
        PhaseContext {
            cfg,
            outer_iter: 1,
            schedule: PhaseSchedule::for_pool(epochs, cfg.batch_size, pool),
            seed: cfg.seed,
        }
    }
}

pub type Observer<'o> = Option<&'o mut dyn FnMut(&EpochRecord)>;

/// Draws batches from a shuffled permutation, reshuffling once exhausted.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(len: usize, seed: u64) -> Self {
        let mut s = BatchSampler {
            order: (0..len).collect(),
            pos: len,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.reshuffle_if(usize::MAX);
        s
    }

    fn reshuffle_if(&mut self, need: usize) {
        if self.pos + need.min(self.order.len()) > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        self.reshuffle_if(size);
        let batch = self.order[self.pos..self.pos + size].to_vec();
        self.pos += size;
        batch
    }
}

/// Generic mini-batch Adam loop. `sample` adds one example's parameter
/// gradient into the accumulator and returns its loss.
fn optimize<F>(
    ctx: &PhaseContext<'_>,
    phase: Phase,
    net: &mut NetworkParams<f32>,
    pool: usize,
    mut sample: F,
    mut observer: Observer<'_>,
) -> Result<PhaseReport>
where
    F: FnMut(usize, &NetworkParams<f32>, &mut Gradients<f32>) -> Result<LossValue>,
{
    if pool == 0 {
        return Err(Error::InvalidArgument(format!("{phase} phase has no training pairs")));
    }
    let cfg = ctx.cfg;
    let sched = ctx.schedule;
    let total = sched.total_steps();
    let mut adam = Adam::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon);
    let mut sampler = BatchSampler::new(pool, ctx.seed);
    let mut report = PhaseReport {
        outer_iter: ctx.outer_iter,
        phase,
        epochs: Vec::with_capacity(sched.epochs),
        steps: 0,
        first_grad_norm: f64::NAN,
        frozen_checksums: None,
    };
    let wrap = |epoch: usize, e: Error| Error::Training {
        phase: phase.to_string(),
        outer_iter: ctx.outer_iter,
        epoch,
        source: Box::new(e),
    };
    for epoch in 1..=sched.epochs {
        let mut losses = Vec::new();
        let mut lr = cfg.lr0;
        for _ in 0..sched.batches_per_epoch {
            let batch = sampler.next(sched.batch_size);
            let mut grads = net.zero_grads();
            for &i in &batch {
                let loss = sample(i, net, &mut grads).map_err(|e| wrap(epoch, e))?;
                if !loss.value.is_finite() {
                    return Err(wrap(epoch, Error::NonFinite(format!("{phase} loss"))));
                }
                losses.push(loss);
            }
            grads.scale(1.0 / batch.len() as f32);
            if report.steps == 0 {
                report.first_grad_norm = grads.norm();
            }
            lr = lr_schedule(report.steps, total, cfg.lr0);
            adam.step(net, &grads, lr);
            report.steps += 1;
            if !net.is_finite() {
                return Err(wrap(epoch, Error::NonFinite(format!("{} parameters", net.kind()))));
            }
        }
        let record = EpochRecord {
            outer_iter: ctx.outer_iter,
            phase,
            epoch,
            loss: LossValue::mean(&losses),
            lr,
        };
        if let Some(obs) = observer.as_deref_mut() {
            obs(&record);
        }
        report.epochs.push(record);
    }
    Ok(report)
}

fn check_pair(x: &Image, half: &Image) -> Result<()> {
    if x.dims() != (2 * half.height(), 2 * half.width()) {
        return Err(Error::DimensionMismatch {
            left: x.dims(),
            right: (2 * half.height(), 2 * half.width()),
        });
    }
    Ok(())
}

/// Trains the post-processing network on `(X, Z)` pairs, where `Z` is a
/// decoded half-resolution description of `X`.
pub fn train_ppnn<A: AsRef<Image>, B: AsRef<Image>>(
    pairs: &[(A, B)],
    ctx: &PhaseContext<'_>,
    gamma: &mut NetworkParams<f32>,
    observer: Observer<'_>,
) -> Result<PhaseReport> {
    train_restorer(pairs, ctx, Phase::Ppnn, gamma, observer)
}

/// Trains the virtual codec on `(Y, Ĩ)` pairs: descriptions and the
/// post-processed decodings of their compressed versions.
pub fn train_vcnn<A: AsRef<Image>, B: AsRef<Image>>(
    pairs: &[(A, B)],
    ctx: &PhaseContext<'_>,
    theta: &mut NetworkParams<f32>,
    observer: Observer<'_>,
) -> Result<PhaseReport> {
    train_restorer(pairs, ctx, Phase::Vcnn, theta, observer)
}

/// Pairs are (input, target) for the VCNN and (target, input) for the PPNN.
fn input_and_target<A: AsRef<Image>, B: AsRef<Image>>(phase: Phase, (a, b): &(A, B)) -> (&Image, &Image) {
    let (a, b) = (a.as_ref(), b.as_ref());
    match phase {
        Phase::Vcnn => (a, b),
        _ => (b, a),
    }
}

pub(crate) fn train_restorer<A: AsRef<Image>, B: AsRef<Image>>(
    pairs: &[(A, B)],
    ctx: &PhaseContext<'_>,
    phase: Phase,
    net: &mut NetworkParams<f32>,
    observer: Observer<'_>,
) -> Result<PhaseReport> {
    if net.kind() != phase.network() {
        return Err(Error::SpecMismatch {
            expected: phase.network().to_string(),
            found: net.kind().to_string(),
        });
    }
    for pair in pairs {
        let (input, target) = input_and_target(phase, pair);
        check_pair(target, input)?;
    }
    let objective = &ctx.cfg.objective;
    optimize(
        ctx,
        phase,
        net,
        pairs.len(),
        |i, net, grads| {
            let (input, target) = input_and_target(phase, &pairs[i]);
            let trace = net.forward_trace(input)?;
            let out = trace.output().to_image();
            let (loss, g) = objective.reconstruction_grad(target, &out)?;
            net.backward(&trace, &g, Some(grads), false)?;
            Ok(loss)
        },
        observer,
    )
}

/// Gradient of the FDNN objective with respect to `α` for one patch.
/// `theta` is only read.
pub fn fdnn_sample_grad(
    x: &Image,
    alpha: &NetworkParams<f32>,
    theta: &NetworkParams<f32>,
    objective: &Objective,
    grads: &mut Gradients<f32>,
) -> Result<LossValue> {
    let f_trace = alpha.forward_trace(x)?;
    let y = f_trace.output().to_image();
    let v_trace = theta.forward_trace(&y)?;
    let predicted = v_trace.output().to_image();
    let up = Resampler::new(y.dims(), 2.0, ResampleMethod::Linear)?;
    let s_y = up.apply(&y)?;
    let (loss, g) = objective.fdnn_grad(x, &predicted, &s_y)?;
    let through_v = theta
        .backward(&v_trace, &g.prediction, None, true)?
        .expect("input gradient was requested");
    let through_s = up.adjoint(&g.upsampled)?;
    let dy: Vec<f64> = through_v.data().iter().zip(through_s.data()).map(|(a, b)| a + b).collect();
    let dy = Image::new(y.height(), y.width(), dy)?;
    alpha.backward(&f_trace, &dy, Some(grads), false)?;
    Ok(loss)
}

/// Trains the feature-description network through the frozen virtual codec.
pub fn train_fdnn(
    corpus: &[Image],
    ctx: &PhaseContext<'_>,
    alpha: &mut NetworkParams<f32>,
    theta: &NetworkParams<f32>,
    observer: Observer<'_>,
) -> Result<PhaseReport> {
    if alpha.kind() != NetworkKind::Fdnn || theta.kind() != NetworkKind::Vcnn {
        return Err(Error::InvalidArgument("train_fdnn needs an FDNN and a VCNN".into()));
    }
    for x in corpus {
        if x.height() % 2 != 0 || x.width() % 2 != 0 {
            return Err(Error::OddDimensions {
                height: x.height(),
                width: x.width(),
            });
        }
    }
    let before = theta.checksum();
    let objective = &ctx.cfg.objective;
    let mut report = optimize(
        ctx,
        Phase::Fdnn,
        alpha,
        corpus.len(),
        |i, alpha, grads| fdnn_sample_grad(&corpus[i], alpha, theta, objective, grads),
        observer,
    )?;
    let after = theta.checksum();
    if before != after {
        return Err(Error::FrozenViolation(NetworkKind::Vcnn.to_string()));
    }
    report.frozen_checksums = Some((before, after));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(h: usize, w: usize, phase: f64) -> Image {
        Image::from_fn(h, w, |y, x| 0.5 + 0.3 * ((y as f64 * 0.7 + phase).sin() * (x as f64 * 0.4).cos()))
    }

    fn tiny_cfg(lr0: f64) -> TrainingConfig {
        TrainingConfig {
            batch_size: 2,
            lr0,
            ..TrainingConfig::desk()
        }
    }

    #[test]
    fn sampler_covers_pool_before_repeating() {
        let mut s = BatchSampler::new(6, 3);
        let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next(2)).collect();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(s.next(10).len(), 6);
    }

    #[test]
    fn batch_consumes_m_pairs() {
        let cfg = TrainingConfig {
            batch_size: 3,
            ..tiny_cfg(1e-4)
        };
        let pairs: Vec<(Image, Image)> = (0..7).map(|i| (pattern(16, 16, i as f64), pattern(8, 8, i as f64))).collect();
        let ctx = PhaseContext::standalone(&cfg, 1, pairs.len());
        let mut gamma = NetworkParams::init(NetworkKind::Ppnn, 1);
        let mut count = 0;
        let mut net = gamma.clone();
        let report = optimize(
            &ctx,
            Phase::Ppnn,
            &mut net,
            pairs.len(),
            |_, _, _| {
                count += 1;
                Ok(LossValue::single("content", 1.0))
            },
            None,
        )
        .unwrap();
        assert_eq!(report.steps, 2);
        assert_eq!(count, 6);
        train_ppnn(&pairs, &ctx, &mut gamma, None).unwrap();
    }

    #[test]
    fn zero_lr_keeps_gamma() {
        let cfg = tiny_cfg(0.0);
        let pairs: Vec<(Image, Image)> = (0..2).map(|i| (pattern(16, 16, i as f64), pattern(8, 8, i as f64))).collect();
        let ctx = PhaseContext::standalone(&cfg, 1, pairs.len());
        let mut gamma = NetworkParams::init(NetworkKind::Ppnn, 5);
        let before = gamma.clone();
        train_ppnn(&pairs, &ctx, &mut gamma, None).unwrap();
        assert_eq!(gamma, before);
    }

    #[test]
    fn vcnn_moves_with_nonzero_lr() {
        let cfg = tiny_cfg(1e-3);
        let pairs: Vec<(Image, Image)> = (0..2).map(|i| (pattern(8, 8, i as f64), pattern(16, 16, i as f64))).collect();
        let ctx = PhaseContext::standalone(&cfg, 1, pairs.len());
        let mut theta = NetworkParams::init(NetworkKind::Vcnn, 5);
        let before = theta.checksum();
        let report = train_vcnn(&pairs, &ctx, &mut theta, None).unwrap();
        assert_ne!(theta.checksum(), before);
        assert!(report.first_grad_norm > 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let cfg = tiny_cfg(1e-4);
        let pairs = vec![(pattern(16, 16, 0.0), pattern(6, 8, 0.0))];
        let ctx = PhaseContext::standalone(&cfg, 1, 1);
        let mut gamma = NetworkParams::init(NetworkKind::Ppnn, 1);
        assert!(matches!(train_ppnn(&pairs, &ctx, &mut gamma, None), Err(Error::DimensionMismatch { .. })));
        assert!(train_ppnn::<Image, Image>(&[], &ctx, &mut gamma, None).is_err());
    }

    #[test]
    fn fdnn_phase_keeps_theta_and_has_gradient() {
        let cfg = tiny_cfg(1e-4);
        let corpus: Vec<Image> = (0..2).map(|i| pattern(16, 16, i as f64)).collect();
        let ctx = PhaseContext::standalone(&cfg, 5, corpus.len());
        let mut alpha = NetworkParams::init(NetworkKind::Fdnn, 1);
        let theta = NetworkParams::init(NetworkKind::Vcnn, 2);
        let report = train_fdnn(&corpus, &ctx, &mut alpha, &theta, None).unwrap();
        let (a, b) = report.frozen_checksums.unwrap();
        assert_eq!(a, b);
        assert_eq!(theta.checksum(), a);
        assert!(report.first_grad_norm > 0.0);
        assert_eq!(report.epochs.len(), 5);
    }

    #[test]
    fn observer_sees_every_epoch() {
        let cfg = tiny_cfg(1e-4);
        let pairs: Vec<(Image, Image)> = (0..2).map(|i| (pattern(16, 16, i as f64), pattern(8, 8, i as f64))).collect();
        let ctx = PhaseContext::standalone(&cfg, 5, pairs.len());
        let mut gamma = NetworkParams::init(NetworkKind::Ppnn, 1);
        let mut epochs = Vec::new();
        let mut obs = |r: &EpochRecord| epochs.push(r.epoch);
        train_ppnn(&pairs, &ctx, &mut gamma, Some(&mut obs)).unwrap();
        assert_eq!(epochs, vec![1, 2, 3, 4, 5]);
    }
}
