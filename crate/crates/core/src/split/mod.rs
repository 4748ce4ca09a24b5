//! Enrollment-time training.
//!
//! The DNN generator is trained on the verifier alone. The two tandem
//! phases run across a [`CutLink`]: each side owns its networks and
//! optimizer, only activations and gradients cross the cut.
//!
//! * Phase A: upper = verifier `Encoder1`, lower = node
//!   `BasicEncoder2 → Decoder2`, challenges reconstructed from themselves.
//! * Phase B: upper = node extension head (on frozen base features of the
//!   frozen verifier latents), lower = verifier `Decoder1`, target = response.

mod checkpoint;
mod link;

pub use checkpoint::{Checkpoint, Phase};
pub use link::{
    decode_frame, encode_frame, ChannelEnd, CutLink, Direction, FailingEnd, FramedEnd, LinkEnd, LinkError, LinkStats,
    Role, Stream,
};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::models::{
    BasicEncoder2, Decoder1, Decoder2, DnnCrpGenerator, Encoder1, ExtendedEncoder2, LatentChallenge, ModelBundle,
    DEFAULT_TAU,
};
use crate::nn::{mse_loss_batch, ActivationTrace, AdamConfig, AdamState, Gradients, Matrix, Mlp, NnError};
use crate::puf::{CrpDataset, CHALLENGE_BITS, RESPONSE_BITS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Step size of `Encoder1` in phase A.
    pub encoder_lr: f64,
    /// Step size of the node side in phase A. The generator uses `adam.lr`.
    pub decoder_lr: f64,
    /// Step size of both sides in phase B.
    pub response_lr: f64,
    /// Per-epoch factor on the phase-B step size.
    pub response_lr_decay: f64,
    /// Mini-batch size of phase B.
    pub response_batch_size: usize,
    /// Stop once the enrolled-set bit accuracy reaches this value.
    pub target_accuracy: f64,
    pub seed: u64,
    /// Evaluate (and possibly stop) every this many epochs.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 2000,
            batch_size: 32,
            adam: AdamConfig::default(),
            encoder_lr: 1e-4,
            decoder_lr: 5e-4,
            response_lr: 2e-3,
            response_lr_decay: 0.999,
            response_batch_size: 256,
            target_accuracy: 1.0,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SplitError> {
        let bad = |m: &str| Err(SplitError::Config(m.to_string()));
        if self.max_epochs == 0 || self.batch_size == 0 || self.response_batch_size == 0 || self.eval_every == 0 {
            return bad("epoch cap, batch size and evaluation interval must be positive");
        }
        if !(self.target_accuracy > 0.0 && self.target_accuracy <= 1.0) {
            return bad("target accuracy must lie in (0, 1]");
        }
        let a = self.adam;
        if !(a.lr > 0.0 && self.encoder_lr > 0.0 && self.decoder_lr > 0.0 && self.response_lr > 0.0 && a.epsilon > 0.0) {
            return bad("learning rates and epsilon must be positive");
        }
        if !(self.response_lr_decay > 0.0 && self.response_lr_decay <= 1.0) {
            return bad("learning-rate decay must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return bad("ADAM betas must lie in [0, 1)");
        }
        Ok(())
    }

    fn adam_with(&self, lr: f64) -> AdamConfig {
        AdamConfig { lr, ..self.adam }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub stage: String,
    pub epochs: usize,
    /// Mean batch loss of every completed epoch.
    pub loss_curve: Vec<f64>,
    pub bit_accuracy: f64,
    /// Rows whose binarized output matches the target exactly.
    pub exact: usize,
    pub total: usize,
    /// Mean absolute error before binarization.
    pub mae: f64,
    pub bit_flip_rate: f64,
    pub forward_crossings: u64,
    pub backward_crossings: u64,
    pub seconds: f64,
}

impl TrainReport {
    fn new(stage: &str) -> Self {
        Self {
            stage: stage.to_string(),
            epochs: 0,
            loss_curve: Vec::new(),
            bit_accuracy: 0.0,
            exact: 0,
            total: 0,
            mae: 0.0,
            bit_flip_rate: 0.0,
            forward_crossings: 0,
            backward_crossings: 0,
            seconds: 0.0,
        }
    }

    pub fn converged(&self) -> bool {
        self.total > 0 && self.exact == self.total
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SplitError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{stage} stopped at the epoch cap with bit accuracy {acc:.5}", stage = .0.stage, acc = .0.bit_accuracy)]
    NotConverged(Box<TrainReport>),
    /// The link failed mid-epoch; the checkpoint holds both sides as of the
    /// last completed batch.
    #[error("link failure in {phase:?}: {source}", phase = .checkpoint.phase)]
    Link {
        source: LinkError,
        checkpoint: Box<Checkpoint>,
    },
}

/// Mini-batches of one epoch. The order depends only on `(seed, epoch)`,
/// so both sides of the cut and a resumed run agree on it.
pub fn epoch_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// Bit accuracy, exact-row count and MAE of `pred` against 0/1 `target`.
pub fn score(pred: &Matrix, target: &Matrix, tau: f64) -> (f64, usize, f64) {
    let mut ok = 0usize;
    let mut exact = 0usize;
    let mut abs = 0.0;
    for (p, t) in pred.iter_rows().zip(target.iter_rows()) {
        let mut row_ok = true;
        for (&pv, &tv) in p.iter().zip(t) {
            abs += (pv - tv).abs();
            if (pv >= tau) == (tv >= 0.5) {
                ok += 1;
            } else {
                row_ok = false;
            }
        }
        exact += row_ok as usize;
    }
    let cells = (pred.rows() * pred.cols()).max(1) as f64;
    (ok as f64 / cells, exact, abs / cells)
}

fn challenge_matrix(d: &CrpDataset) -> Matrix {
    let rows: Vec<Vec<f64>> = d.entries().iter().map(|e| e.challenge.to_f64s()).collect();
    Matrix::from_rows(&rows).expect("fixed width")
}

fn response_matrix(d: &CrpDataset) -> Matrix {
    let rows: Vec<Vec<f64>> = d.entries().iter().map(|e| e.response.to_f64s()).collect();
    Matrix::from_rows(&rows).expect("fixed width")
}

// ---------------------------------------------------------------------------
// sides of the cut

/// Sends activations, receives gradients.
struct UpperSide<'a> {
    net: &'a mut Mlp,
    adam: &'a mut AdamState,
    lr_scale: f64,
    inputs: &'a Matrix,
    trace: Option<ActivationTrace>,
}

impl UpperSide<'_> {
    fn forward(&mut self, batch: &[usize]) -> Result<Matrix, NnError> {
        let trace = self.net.forward_batch(&self.inputs.select_rows(batch))?;
        let out = trace.output.clone();
        self.trace = Some(trace);
        Ok(out)
    }

    fn backward(&mut self, grad: &Matrix) -> Result<(), NnError> {
        let trace = self.trace.take().expect("forward precedes backward");
        let (grads, _) = self.net.backward_batch(&trace, grad)?;
        self.adam.step_scaled(self.net, &grads, self.lr_scale)
    }
}

/// Receives activations, computes the loss, sends input gradients.
struct LowerSide<'a> {
    net: &'a mut Mlp,
    adam: &'a mut AdamState,
    lr_scale: f64,
    targets: &'a Matrix,
    pending: Option<Gradients>,
}

impl LowerSide<'_> {
    fn step(&mut self, batch: &[usize], acts: &Matrix) -> Result<(f64, Matrix), NnError> {
        let trace = self.net.forward_batch(acts)?;
        let (loss, g) = mse_loss_batch(&trace.output, &self.targets.select_rows(batch))?;
        let (grads, input_grad) = self.net.backward_batch(&trace, &g)?;
        self.pending = Some(grads);
        Ok((loss, input_grad))
    }

    fn commit(&mut self) -> Result<(), NnError> {
        let grads = self.pending.take().expect("step precedes commit");
        self.adam.step_scaled(self.net, &grads, self.lr_scale)
    }
}

#[derive(Debug)]
enum StepError {
    Link(LinkError),
    Nn(NnError),
}

impl From<LinkError> for StepError {
    fn from(e: LinkError) -> Self {
        StepError::Link(e)
    }
}

impl From<NnError> for StepError {
    fn from(e: NnError) -> Self {
        StepError::Nn(e)
    }
}

/// Runs batches `start..` of one epoch with the two sides on separate
/// threads. Returns the summed loss, or the number of batches that
/// completed on both sides together with the failure.
fn run_split_epoch(
    upper: &mut UpperSide<'_>,
    lower: &mut LowerSide<'_>,
    link: &mut CutLink,
    batches: &[Vec<usize>],
    start: usize,
) -> Result<f64, (usize, f64, StepError)> {
    let CutLink {
        upper: up_end,
        lower: low_end,
    } = link;
    std::thread::scope(|s| {
        let lower_thread = s.spawn(move || {
            let mut loss = 0.0;
            let mut done = start;
            let run = (|| -> Result<(), StepError> {
                for b in &batches[start..] {
                    let acts = low_end.recv()?;
                    let (l, g) = lower.step(b, &acts)?;
                    low_end.send(&g)?;
                    lower.commit()?;
                    loss += l;
                    done += 1;
                }
                Ok(())
            })();
            if run.is_err() {
                low_end.close();
            }
            (loss, done, run)
        });
        let mut done = start;
        let run = (|| -> Result<(), StepError> {
            for b in &batches[start..] {
                let acts = upper.forward(b)?;
                up_end.send(&acts)?;
                let g = up_end.recv()?;
                upper.backward(&g)?;
                done += 1;
            }
            Ok(())
        })();
        if run.is_err() {
            up_end.close();
        }
        let (loss, low_done, low_run) = lower_thread.join().expect("lower side panicked");
        let completed = done.min(low_done);
        match (run, low_run) {
            (Ok(()), Ok(())) => Ok(loss),
            (Err(e), _) | (Ok(()), Err(e)) => Err((completed, loss, e)),
        }
    })
}

type Evaluator<'a> = dyn Fn(&Mlp, &Mlp) -> Result<Matrix, NnError> + 'a;

struct SplitJob<'a> {
    stage: &'static str,
    inputs: &'a Matrix,
    targets: &'a Matrix,
    /// Full-set prediction from (upper, lower).
    predict: &'a Evaluator<'a>,
    schedule: Schedule,
}

/// Batch size and per-epoch step-size factor of one stage.
#[derive(Debug, Clone, Copy)]
struct Schedule {
    batch_size: usize,
    lr_decay: f64,
}

impl Schedule {
    fn plain(cfg: &TrainConfig) -> Self {
        Self {
            batch_size: cfg.batch_size,
            lr_decay: 1.0,
        }
    }

    fn response(cfg: &TrainConfig) -> Self {
        Self {
            batch_size: cfg.response_batch_size,
            lr_decay: cfg.response_lr_decay,
        }
    }
}

fn train_split(
    job: SplitJob<'_>,
    mut ck: Checkpoint,
    link: &mut CutLink,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainReport), SplitError> {
    cfg.validate()?;
    let t0 = Instant::now();
    let n = job.inputs.rows();
    let mut report = TrainReport::new(job.stage);
    let mut reached = false;
    while ck.epoch < cfg.max_epochs {
        let batches = epoch_batches(n, job.schedule.batch_size, cfg.seed, ck.epoch);
        let lr_scale = job.schedule.lr_decay.powi(ck.epoch as i32);
        let result = {
            let mut up = UpperSide {
                net: &mut ck.upper_net,
                adam: &mut ck.upper_adam,
                lr_scale,
                inputs: job.inputs,
                trace: None,
            };
            let mut low = LowerSide {
                net: &mut ck.lower_net,
                adam: &mut ck.lower_adam,
                lr_scale,
                targets: job.targets,
                pending: None,
            };
            run_split_epoch(&mut up, &mut low, link, &batches, ck.next_batch)
        };
        match result {
            Ok(loss) => ck.epoch_loss += loss,
            Err((done, loss, e)) => {
                ck.next_batch = done;
                ck.epoch_loss += loss;
                return Err(match e {
                    StepError::Nn(e) => SplitError::Nn(e),
                    StepError::Link(source) => SplitError::Link {
                        source,
                        checkpoint: Box::new(ck),
                    },
                });
            }
        }
        ck.finish_epoch(batches.len());
        if ck.epoch % cfg.eval_every == 0 || ck.epoch == cfg.max_epochs {
            let pred = (job.predict)(&ck.upper_net, &ck.lower_net)?;
            fill_scores(&mut report, &pred, job.targets);
            log::debug!(
                "{} epoch {} loss {:.6} acc {:.5} exact {}/{}",
                job.stage,
                ck.epoch,
                ck.loss_curve.last().copied().unwrap_or(0.0),
                report.bit_accuracy,
                report.exact,
                report.total
            );
            if report.bit_accuracy >= cfg.target_accuracy {
                reached = true;
                break;
            }
        }
    }
    report.epochs = ck.epoch;
    report.loss_curve = ck.loss_curve.clone();
    let stats = link.stats();
    report.forward_crossings = stats.forward;
    report.backward_crossings = stats.backward;
    report.seconds = t0.elapsed().as_secs_f64();
    if !reached {
        return Err(SplitError::NotConverged(Box::new(report)));
    }
    Ok((ck, report))
}

fn fill_scores(report: &mut TrainReport, pred: &Matrix, targets: &Matrix) {
    let (acc, exact, mae) = score(pred, targets, DEFAULT_TAU);
    report.bit_accuracy = acc;
    report.exact = exact;
    report.total = targets.rows();
    report.mae = mae;
}

/// Single-process training of one network (or a stack of networks) on the
/// same batch schedule as [`train_split`].
fn train_monolithic(
    stage: &'static str,
    net: &mut Mlp,
    adam: &mut AdamState,
    inputs: &Matrix,
    targets: &Matrix,
    schedule: Schedule,
    cfg: &TrainConfig,
) -> Result<TrainReport, SplitError> {
    cfg.validate()?;
    let t0 = Instant::now();
    let n = inputs.rows();
    let mut report = TrainReport::new(stage);
    let mut reached = false;
    let mut epoch = 0;
    while epoch < cfg.max_epochs {
        let batches = epoch_batches(n, schedule.batch_size, cfg.seed, epoch);
        let lr_scale = schedule.lr_decay.powi(epoch as i32);
        let mut total = 0.0;
        for b in &batches {
            let trace = net.forward_batch(&inputs.select_rows(b))?;
            let (loss, g) = mse_loss_batch(&trace.output, &targets.select_rows(b))?;
            let (grads, _) = net.backward_batch(&trace, &g)?;
            adam.step_scaled(net, &grads, lr_scale)?;
            total += loss;
        }
        report.loss_curve.push(total / batches.len() as f64);
        epoch += 1;
        if epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs {
            fill_scores(&mut report, &net.predict_batch(inputs)?, targets);
            log::debug!("{stage} epoch {epoch} acc {:.5} exact {}/{}", report.bit_accuracy, report.exact, report.total);
            if report.bit_accuracy >= cfg.target_accuracy {
                reached = true;
                break;
            }
        }
    }
    report.epochs = epoch;
    report.seconds = t0.elapsed().as_secs_f64();
    if !reached {
        return Err(SplitError::NotConverged(Box::new(report)));
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// operations

/// Supervised fit of index bits → challenge ‖ response on the verifier.
pub fn train_dnn_generator(dataset: &CrpDataset, cfg: &TrainConfig) -> Result<(DnnCrpGenerator, TrainReport), SplitError> {
    let n = dataset.len();
    let mut generator = DnnCrpGenerator::new(n, cfg.seed)?;
    let inputs = generator.index_matrix();
    let (c, r) = (challenge_matrix(dataset), response_matrix(dataset));
    let mut targets = Matrix::zeros(n, CHALLENGE_BITS + RESPONSE_BITS);
    for i in 0..n {
        let row = targets.row_mut(i);
        row[..CHALLENGE_BITS].copy_from_slice(c.row(i));
        row[CHALLENGE_BITS..].copy_from_slice(r.row(i));
    }
    let mut adam = AdamState::new(generator.net(), cfg.adam);
    let report = train_monolithic("dnn", generator.net_mut(), &mut adam, &inputs, &targets, Schedule::plain(cfg), cfg)?;
    Ok((generator, report))
}

/// Result of phase A.
#[derive(Debug, Clone)]
pub struct PhaseA {
    pub encoder1: Encoder1,
    pub basic_encoder2: BasicEncoder2,
    pub decoder2: Decoder2,
    pub report: TrainReport,
}

const BASE_LAYERS: usize = 3;

fn phase_a_predict(upper: &Mlp, lower: &Mlp, challenges: &Matrix) -> Result<Matrix, NnError> {
    lower.predict_batch(&upper.predict_batch(challenges)?)
}

fn phase_a_start(enc1: Encoder1, benc2: BasicEncoder2, dec2: Decoder2, cfg: &TrainConfig) -> Result<Checkpoint, NnError> {
    let lower = Mlp::stack(&[benc2.net(), dec2.net()])?;
    let upper = enc1.into_mlp();
    Ok(Checkpoint::start(
        Phase::A,
        AdamState::new(&upper, cfg.adam_with(cfg.encoder_lr)),
        upper,
        AdamState::new(&lower, cfg.adam_with(cfg.decoder_lr)),
        lower,
    ))
}

fn phase_a_finish(ck: Checkpoint, report: TrainReport) -> Result<PhaseA, SplitError> {
    let mut parts = ck.lower_net.split(&[BASE_LAYERS, BASE_LAYERS])?.into_iter();
    Ok(PhaseA {
        encoder1: Encoder1::from_mlp(ck.upper_net)?,
        basic_encoder2: BasicEncoder2::from_mlp(parts.next().expect("two parts"))?,
        decoder2: Decoder2::from_mlp(parts.next().expect("two parts"))?,
        report,
    })
}

/// Joint challenge autoencoder across the cut: Encoder1 on the verifier,
/// BasicEncoder2 and Decoder2 on the node.
pub fn phase_a(
    dataset: &CrpDataset,
    enc1: Encoder1,
    benc2: BasicEncoder2,
    dec2: Decoder2,
    link: &mut CutLink,
    cfg: &TrainConfig,
) -> Result<PhaseA, SplitError> {
    resume_phase_a(dataset, phase_a_start(enc1, benc2, dec2, cfg)?, link, cfg)
}

/// Continues phase A from a checkpoint (for instance the one carried by
/// [`SplitError::Link`]).
pub fn resume_phase_a(
    dataset: &CrpDataset,
    ck: Checkpoint,
    link: &mut CutLink,
    cfg: &TrainConfig,
) -> Result<PhaseA, SplitError> {
    ck.expect_phase(Phase::A)?;
    let challenges = challenge_matrix(dataset);
    let predict = |u: &Mlp, l: &Mlp| phase_a_predict(u, l, &challenges);
    let job = SplitJob {
        stage: "phase_a",
        inputs: &challenges,
        targets: &challenges,
        predict: &predict,
        schedule: Schedule::plain(cfg),
    };
    let (ck, report) = train_split(job, ck, link, cfg)?;
    phase_a_finish(ck, report)
}

/// Phase A without a cut: the three networks stacked into one chain with
/// one (stacked) optimizer and the same batch schedule.
pub fn monolithic_phase_a(
    dataset: &CrpDataset,
    enc1: Encoder1,
    benc2: BasicEncoder2,
    dec2: Decoder2,
    cfg: &TrainConfig,
) -> Result<PhaseA, SplitError> {
    let ck = phase_a_start(enc1, benc2, dec2, cfg)?;
    let enc_layers = ck.upper_net.layers().len();
    let mut net = Mlp::stack(&[&ck.upper_net, &ck.lower_net])?;
    let mut adam = AdamState::stack(&[&ck.upper_adam, &ck.lower_adam])?;
    let challenges = challenge_matrix(dataset);
    let report = train_monolithic("phase_a", &mut net, &mut adam, &challenges, &challenges, Schedule::plain(cfg), cfg)?;
    let mut parts = net.split(&[enc_layers, BASE_LAYERS, BASE_LAYERS])?.into_iter();
    let mut next = || parts.next().expect("three parts");
    Ok(PhaseA {
        encoder1: Encoder1::from_mlp(next())?,
        basic_encoder2: BasicEncoder2::from_mlp(next())?,
        decoder2: Decoder2::from_mlp(next())?,
        report,
    })
}

/// Result of phase B.
#[derive(Debug, Clone)]
pub struct PhaseB {
    pub extended_encoder2: ExtendedEncoder2,
    pub decoder1: Decoder1,
    pub report: TrainReport,
}

/// Latent challenges of the enrolled set under the frozen encoder.
pub fn enrolled_latents(enc1: &Encoder1, dataset: &CrpDataset) -> Result<Matrix, NnError> {
    enc1.encode_batch(&challenge_matrix(dataset))
}

fn phase_b_start(extension: Mlp, dec1: Decoder1, cfg: &TrainConfig) -> Checkpoint {
    let lower = dec1.into_mlp();
    Checkpoint::start(
        Phase::B,
        AdamState::new(&extension, cfg.adam_with(cfg.response_lr)),
        extension,
        AdamState::new(&lower, cfg.adam_with(cfg.response_lr)),
        lower,
    )
}

/// Trains the extension head (node) and Decoder1 (verifier) on the
/// responses. `enc1` and the base of `xenc2` stay untouched: the verifier
/// computes the latents once, the node turns them into base features once,
/// and only extension activations and their gradients cross the cut.
pub fn phase_b(
    dataset: &CrpDataset,
    enc1: &Encoder1,
    xenc2: ExtendedEncoder2,
    dec1: Decoder1,
    link: &mut CutLink,
    cfg: &TrainConfig,
) -> Result<PhaseB, SplitError> {
    let ExtendedEncoder2 { base, .. } = &xenc2;
    let base = base.clone();
    let ck = phase_b_start(xenc2.extension().clone(), dec1, cfg);
    resume_phase_b(dataset, enc1, base, ck, link, cfg)
}

pub fn resume_phase_b(
    dataset: &CrpDataset,
    enc1: &Encoder1,
    base: BasicEncoder2,
    ck: Checkpoint,
    link: &mut CutLink,
    cfg: &TrainConfig,
) -> Result<PhaseB, SplitError> {
    ck.expect_phase(Phase::B)?;
    let features = base.net().predict_batch(&enrolled_latents(enc1, dataset)?)?;
    let responses = response_matrix(dataset);
    let predict = |u: &Mlp, l: &Mlp| l.predict_batch(&u.predict_batch(&features)?);
    let job = SplitJob {
        stage: "phase_b",
        inputs: &features,
        targets: &responses,
        predict: &predict,
        schedule: Schedule::response(cfg),
    };
    let (ck, report) = train_split(job, ck, link, cfg)?;
    Ok(PhaseB {
        extended_encoder2: ExtendedEncoder2::from_parts(base, ck.upper_net)?,
        decoder1: Decoder1::from_mlp(ck.lower_net)?,
        report,
    })
}

/// Phase B without a cut: extension and Decoder1 stacked and trained on
/// the same frozen base features.
pub fn monolithic_phase_b(
    dataset: &CrpDataset,
    enc1: &Encoder1,
    xenc2: ExtendedEncoder2,
    dec1: Decoder1,
    cfg: &TrainConfig,
) -> Result<PhaseB, SplitError> {
    let ck = phase_b_start(xenc2.extension().clone(), dec1, cfg);
    let base = xenc2.base;
    let features = base.net().predict_batch(&enrolled_latents(enc1, dataset)?)?;
    let mut net = Mlp::stack(&[&ck.upper_net, &ck.lower_net])?;
    let mut adam = AdamState::stack(&[&ck.upper_adam, &ck.lower_adam])?;
    let report = train_monolithic("phase_b", &mut net, &mut adam, &features, &response_matrix(dataset), Schedule::response(cfg), cfg)?;
    let counts = [ck.upper_net.layers().len(), ck.lower_net.layers().len()];
    let mut parts = net.split(&counts)?.into_iter();
    let mut next = || parts.next().expect("two parts");
    Ok(PhaseB {
        extended_encoder2: ExtendedEncoder2::from_parts(base, next())?,
        decoder1: Decoder1::from_mlp(next())?,
        report,
    })
}

/// Response-path quality of a trained bundle on `dataset`: MAE before
/// binarization, bit accuracy, and the fraction of bits that change across
/// `passes` repeated evaluations.
pub fn evaluate_bundle(bundle: &ModelBundle, dataset: &CrpDataset, passes: usize) -> Result<TrainReport, NnError> {
    let t0 = Instant::now();
    let responses = response_matrix(dataset);
    let run = || -> Result<Matrix, NnError> {
        let lcs = enrolled_latents(&bundle.encoder1, dataset)?;
        let x = &bundle.extended_encoder2;
        let lrs = x.extension().predict_batch(&x.base.net().predict_batch(&lcs)?)?;
        bundle.decoder1.net().predict_batch(&lrs)
    };
    let first = run()?;
    let mut report = TrainReport::new("evaluate");
    fill_scores(&mut report, &first, &responses);
    let mut flips = 0usize;
    for _ in 1..passes.max(1) {
        let again = run()?;
        flips += first
            .as_slice()
            .iter()
            .zip(again.as_slice())
            .filter(|(a, b)| (**a >= DEFAULT_TAU) != (**b >= DEFAULT_TAU))
            .count();
    }
    let compared = passes.saturating_sub(1) * first.as_slice().len();
    report.bit_flip_rate = if compared == 0 { 0.0 } else { flips as f64 / compared as f64 };
    report.seconds = t0.elapsed().as_secs_f64();
    Ok(report)
}

/// Per-latent reconstruction check used by the enrollment report.
pub fn reconstruction_exact(bundle: &ModelBundle, dataset: &CrpDataset) -> Result<usize, NnError> {
    let lcs = enrolled_latents(&bundle.encoder1, dataset)?;
    let pred = bundle.decoder2.net().predict_batch(&bundle.basic_encoder2().net().predict_batch(&lcs)?)?;
    Ok(score(&pred, &challenge_matrix(dataset), bundle.meta.verify.tau).1)
}

pub fn latents_of(m: &Matrix) -> Vec<LatentChallenge> {
    m.iter_rows().map(LatentChallenge::from_slice).collect()
}
