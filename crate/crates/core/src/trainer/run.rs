use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{QualityMode, TrainingConfig};
use super::phases::{train_fdnn, train_restorer, EpochRecord, Observer, Phase, PhaseContext, PhaseReport, PhaseSchedule};
use super::{assign_qualities, compress_descriptions, derive_seed, interpolated_descriptions, load_corpus, quality_counts};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::losses::{LossValue, CONTENT, GRADIENT, SSIM};
use crate::networks::{load_checkpoint, save_checkpoint, NetworkKind, NetworkParams};

pub const LOG_FILE: &str = "training_log.csv";
pub const PROGRESS_FILE: &str = "progress.json";
pub const DEPLOY_FDNN: &str = "fdnn.ckpt";
pub const DEPLOY_PPNN: &str = "ppnn.ckpt";

/// `{net}_iter{k}_{phase}.ckpt`
pub fn checkpoint_name(outer_iter: usize, phase: Phase) -> String {
    format!("{}_iter{}_{}.ckpt", phase.network().name(), outer_iter, phase.name())
}

pub struct RunOptions<'o> {
    pub checkpoint_dir: PathBuf,
    /// Continue after the last completed phase recorded in the directory.
    pub resume: bool,
    pub observer: Observer<'o>,
}

impl RunOptions<'_> {
    pub fn new(checkpoint_dir: impl Into<PathBuf>) -> Self {
        RunOptions {
            checkpoint_dir: checkpoint_dir.into(),
            resume: false,
            observer: None,
        }
    }
}

/// Pairs compressed at each factor in one recompression pass.
#[derive(Clone, Debug, PartialEq)]
pub struct QualityUsage {
    pub outer_iter: usize,
    pub phase: Phase,
    pub counts: BTreeMap<u8, usize>,
}

#[derive(Clone, Debug)]
pub struct TrainingState {
    pub alpha: NetworkParams<f32>,
    pub gamma: NetworkParams<f32>,
    pub theta: NetworkParams<f32>,
    pub outer_iter: usize,
    /// Last completed phase.
    pub phase: Option<Phase>,
    pub global_step: usize,
    pub loss_history: Vec<PhaseReport>,
    pub quality_usage: Vec<QualityUsage>,
    /// Phases restored from disk instead of trained in this run.
    pub resumed_phases: usize,
}

impl TrainingState {
    fn fresh(seed: u64) -> Self {
        TrainingState {
            alpha: NetworkParams::init(NetworkKind::Fdnn, derive_seed(seed, &[0xA1])),
            gamma: NetworkParams::init(NetworkKind::Ppnn, derive_seed(seed, &[0xA2])),
            theta: NetworkParams::init(NetworkKind::Vcnn, derive_seed(seed, &[0xA3])),
            outer_iter: 0,
            phase: None,
            global_step: 0,
            loss_history: Vec::new(),
            quality_usage: Vec::new(),
            resumed_phases: 0,
        }
    }

    /// The untrained networks a run with this seed starts from.
    pub fn initial(cfg: &TrainingConfig) -> Self {
        Self::fresh(cfg.seed)
    }

    fn net_mut(&mut self, kind: NetworkKind) -> &mut NetworkParams<f32> {
        match kind {
            NetworkKind::Fdnn => &mut self.alpha,
            NetworkKind::Ppnn => &mut self.gamma,
            NetworkKind::Vcnn => &mut self.theta,
        }
    }

    pub fn reports(&self, phase: Phase) -> impl Iterator<Item = &PhaseReport> {
        self.loss_history.iter().filter(move |r| r.phase == phase)
    }

    pub fn epoch_count(&self) -> usize {
        self.loss_history.iter().map(|r| r.epochs.len()).sum()
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub outer_iter: usize,
    pub phase: Phase,
    pub epoch: usize,
    pub loss: f64,
    pub content: Option<f64>,
    pub gradient: Option<f64>,
    pub ssim: Option<f64>,
    pub lr: f64,
}

impl From<&EpochRecord> for LogRow {
    fn from(r: &EpochRecord) -> Self {
        LogRow {
            outer_iter: r.outer_iter,
            phase: r.phase,
            epoch: r.epoch,
            loss: r.loss.value,
            content: r.loss.component(CONTENT),
            gradient: r.loss.component(GRADIENT),
            ssim: r.loss.component(SSIM),
            lr: r.lr,
        }
    }
}

impl LogRow {
    fn to_record(&self) -> EpochRecord {
        let components = [(CONTENT, self.content), (GRADIENT, self.gradient), (SSIM, self.ssim)]
            .into_iter()
            .filter_map(|(name, v)| v.map(|v| (name.to_string(), v)))
            .collect();
        EpochRecord {
            outer_iter: self.outer_iter,
            phase: self.phase,
            epoch: self.epoch,
            loss: LossValue::from_components(components),
            lr: self.lr,
        }
    }
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .map(|r| r.map_err(|e| Error::Config(format!("{}: {e}", path.display()))))
        .collect()
}

fn write_log(path: &Path, history: &[PhaseReport]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for record in history.iter().flat_map(|r| &r.epochs) {
        w.serialize(LogRow::from(record)).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct Progress {
    config_hash: String,
    completed_phases: usize,
    global_step: usize,
}

fn config_hash(cfg: &TrainingConfig) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in cfg.to_toml().bytes() {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{hash:016x}")
}

fn phase_plan(outer_iterations: usize) -> Vec<(usize, Phase)> {
    let mut plan: Vec<(usize, Phase)> = (1..=outer_iterations)
        .flat_map(|k| [(k, Phase::Ppnn), (k, Phase::Vcnn), (k, Phase::Fdnn)])
        .collect();
    plan.push((outer_iterations, Phase::FinalPpnn));
    plan
}

/// Descriptions of one recompression pass and their decoded versions.
struct Compressed {
    key: (usize, Phase),
    /// `(corpus index, description)`
    descriptions: Vec<(usize, Image)>,
    decoded: Vec<Image>,
}

fn recompress(
    cfg: &TrainingConfig,
    corpus: &[Image],
    state: &mut TrainingState,
    outer_iter: usize,
    phase: Phase,
) -> Result<Compressed> {
    let descriptions = if outer_iter == 1 && phase != Phase::FinalPpnn {
        interpolated_descriptions(corpus, &cfg.init_methods)?
    } else {
        corpus
            .iter()
            .enumerate()
            .map(|(i, x)| state.alpha.forward(x).map(|y| (i, y)))
            .collect::<Result<_>>()?
    };
    let pass = if phase == Phase::FinalPpnn { outer_iter + 1 } else { outer_iter };
    let qualities = assign_qualities(descriptions.len(), &cfg.quality_factors, derive_seed(cfg.seed, &[0xB0, pass as u64]));
    let refs: Vec<&Image> = descriptions.iter().map(|(_, y)| y).collect();
    let decoded = compress_descriptions(&refs, &qualities)?;
    state.quality_usage.push(QualityUsage {
        outer_iter,
        phase,
        counts: quality_counts(&qualities),
    });
    Ok(Compressed {
        key: (pass, if phase == Phase::FinalPpnn { Phase::FinalPpnn } else { Phase::Ppnn }),
        descriptions,
        decoded,
    })
}

/// Runs the alternating training on loaded patches, writing checkpoints,
/// the training log and progress into `opts.checkpoint_dir`.
pub fn run_algorithm1_on(cfg: &TrainingConfig, corpus: &[Image], mut opts: RunOptions<'_>) -> Result<TrainingState> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty training corpus".into()));
    }
    if let Some(x) = corpus.iter().find(|x| x.height() % 2 != 0 || x.width() % 2 != 0) {
        return Err(Error::OddDimensions {
            height: x.height(),
            width: x.width(),
        });
    }
    let dir = opts.checkpoint_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let hash = config_hash(cfg);
    let plan = phase_plan(cfg.outer_iterations);
    let mut state = TrainingState::fresh(cfg.seed);

    let progress_path = dir.join(PROGRESS_FILE);
    let log_path = dir.join(LOG_FILE);
    if opts.resume && progress_path.exists() {
        let text = std::fs::read_to_string(&progress_path).map_err(|e| Error::io(&progress_path, e))?;
        let progress: Progress =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", progress_path.display())))?;
        if progress.config_hash != hash {
            return Err(Error::Config("checkpoint directory was written with a different config".into()));
        }
        let done = progress.completed_phases.min(plan.len());
        for &(k, phase) in &plan[..done] {
            let net = load_checkpoint(dir.join(checkpoint_name(k, phase)), phase.network())?;
            *state.net_mut(phase.network()) = net;
            state.outer_iter = k;
            state.phase = Some(phase);
        }
        let rows = if log_path.exists() { read_log(&log_path)? } else { Vec::new() };
        for &(k, phase) in &plan[..done] {
            let epochs: Vec<EpochRecord> = rows
                .iter()
                .filter(|r| r.outer_iter == k && r.phase == phase)
                .map(LogRow::to_record)
                .collect();
            state.loss_history.push(PhaseReport {
                outer_iter: k,
                phase,
                epochs,
                steps: 0,
                first_grad_norm: f64::NAN,
                frozen_checksums: None,
            });
        }
        state.global_step = progress.global_step;
        state.resumed_phases = done;
    }

    let mut data: Option<Compressed> = None;
    for (idx, &(k, phase)) in plan.iter().enumerate().skip(state.resumed_phases) {
        let epochs = match phase {
            Phase::Fdnn => cfg.fdnn_epochs,
            _ => cfg.ppnn_epochs,
        };
        let ctx = PhaseContext {
            cfg,
            outer_iter: k,
            schedule: PhaseSchedule::for_pool(epochs, cfg.batch_size, corpus.len()),
            seed: derive_seed(cfg.seed, &[0xD0, k as u64, phase.code()]),
        };
        let observer = opts.observer.as_deref_mut().map(|o| o as &mut dyn FnMut(&EpochRecord));
        let report = match phase {
            Phase::Ppnn | Phase::FinalPpnn | Phase::Vcnn => {
                let pass = if phase == Phase::FinalPpnn { k + 1 } else { k };
                let key = (pass, if phase == Phase::FinalPpnn { Phase::FinalPpnn } else { Phase::Ppnn });
                if data.as_ref().map(|d| d.key) != Some(key) {
                    data = Some(recompress(cfg, corpus, &mut state, k, phase)?);
                }
                let d = data.as_ref().unwrap();
                if phase == Phase::Vcnn {
                    let teacher = d
                        .decoded
                        .iter()
                        .map(|z| state.gamma.forward(z))
                        .collect::<Result<Vec<_>>>()?;
                    let pairs: Vec<(&Image, &Image)> =
                        d.descriptions.iter().map(|(_, y)| y).zip(teacher.iter()).collect();
                    train_restorer(&pairs, &ctx, phase, &mut state.theta, observer)?
                } else {
                    let pairs: Vec<(&Image, &Image)> = d
                        .descriptions
                        .iter()
                        .zip(&d.decoded)
                        .map(|((i, _), z)| (&corpus[*i], z))
                        .collect();
                    train_restorer(&pairs, &ctx, phase, &mut state.gamma, observer)?
                }
            }
            Phase::Fdnn => {
                data = None;
                train_fdnn(corpus, &ctx, &mut state.alpha, &state.theta, observer)?
            }
        };

        let trained = match phase.network() {
            NetworkKind::Fdnn => &state.alpha,
            NetworkKind::Ppnn => &state.gamma,
            NetworkKind::Vcnn => &state.theta,
        };
        save_checkpoint(trained, dir.join(checkpoint_name(k, phase)))?;
        state.outer_iter = k;
        state.phase = Some(phase);
        state.global_step += report.steps;
        state.loss_history.push(report);
        write_log(&log_path, &state.loss_history)?;
        let progress = Progress {
            config_hash: hash.clone(),
            completed_phases: idx + 1,
            global_step: state.global_step,
        };
        let json = serde_json::to_string_pretty(&progress).expect("progress is serializable");
        std::fs::write(&progress_path, json).map_err(|e| Error::io(&progress_path, e))?;
    }

    save_checkpoint(&state.alpha, dir.join(DEPLOY_FDNN))?;
    save_checkpoint(&state.gamma, dir.join(DEPLOY_PPNN))?;
    Ok(state)
}

/// Loads the corpus named by `cfg` and runs the alternating training.
pub fn run_algorithm1(cfg: &TrainingConfig, opts: RunOptions<'_>) -> Result<TrainingState> {
    let corpus = load_corpus(cfg)?;
    run_algorithm1_on(cfg, &corpus, opts)
}

/// Trains according to `cfg.quality_mode`: one shared model set, or one
/// set per quality factor in `q{Q}/` subdirectories.
pub fn run_training(cfg: &TrainingConfig, corpus: &[Image], mut opts: RunOptions<'_>) -> Result<Vec<(Option<u8>, TrainingState)>> {
    match cfg.quality_mode {
        QualityMode::Shared => Ok(vec![(None, run_algorithm1_on(cfg, corpus, opts)?)]),
        QualityMode::PerFactor => {
            let mut out = Vec::new();
            for &q in &cfg.quality_factors {
                let sub = TrainingConfig {
                    quality_factors: vec![q],
                    quality_mode: QualityMode::Shared,
                    ..cfg.clone()
                };
                let sub_opts = RunOptions {
                    checkpoint_dir: opts.checkpoint_dir.join(format!("q{q}")),
                    resume: opts.resume,
                    observer: opts.observer.as_deref_mut().map(|o| o as &mut dyn FnMut(&EpochRecord)),
                };
                out.push((Some(q), run_algorithm1_on(&sub, corpus, sub_opts)?));
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_order_and_count() {
        let plan = phase_plan(2);
        assert_eq!(plan.len(), 7);
        assert_eq!(&plan[..3], &[(1, Phase::Ppnn), (1, Phase::Vcnn), (1, Phase::Fdnn)]);
        assert_eq!(plan[6], (2, Phase::FinalPpnn));
    }

    #[test]
    fn checkpoint_names() {
        assert_eq!(checkpoint_name(1, Phase::Vcnn), "vcnn_iter1_vcnn.ckpt");
        assert_eq!(checkpoint_name(3, Phase::FinalPpnn), "ppnn_iter3_final_ppnn.ckpt");
    }

    #[test]
    fn log_row_round_trip() {
        let record = EpochRecord {
            outer_iter: 2,
            phase: Phase::Fdnn,
            epoch: 3,
            loss: LossValue::from_components(vec![("content".into(), 0.5), ("ssim".into(), -0.25)]),
            lr: 1e-4,
        };
        let row = LogRow::from(&record);
        assert_eq!(row.gradient, None);
        assert_eq!(row.to_record(), record);
    }
}
