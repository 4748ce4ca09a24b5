//! simulate → train → calibrate → provision.

use std::time::Instant;

use serde::Serialize;

use crate::models::{
    calibrate_delta, BasicEncoder2, BundleMeta, Calibration, Decoder1, Decoder2, Encoder1, ExtendedEncoder2, LatentBox,
    ModelBundle, NodeModelSet, VerifyParams, DEFAULT_TAU,
};
use crate::puf::{CrpDataset, RoPufModel, CHALLENGE_BITS, RESPONSE_BITS};
use crate::split::{
    enrolled_latents, evaluate_bundle, latents_of, phase_a, phase_b, reconstruction_exact, train_dnn_generator,
    CutLink, TrainConfig, TrainReport,
};

use super::config::{DatasetSource, LinkKind, RunConfig};
use super::HarnessError;

/// Seed offsets of the freshly initialized networks.
const ENC1_SEED: u64 = 4;
const BENC2_SEED: u64 = 5;
const DEC2_SEED: u64 = 6;
const XENC2_SEED: u64 = 7;
const DEC1_SEED: u64 = 8;

#[derive(Debug, Clone, Serialize)]
pub struct EnrollReport {
    pub n: usize,
    pub seed: u64,
    pub dnn: TrainReport,
    pub phase_a: TrainReport,
    pub phase_b: TrainReport,
    pub calibration: Calibration,
    /// Bit errors of the generator over every enrolled CRP.
    pub crp_bit_errors: usize,
    /// Enrolled latents whose reconstructed challenge is exact.
    pub reconstruction_exact: usize,
    /// End-to-end response path on the enrolled set.
    pub response_path: TrainReport,
    pub seconds: f64,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<CrpDataset, HarnessError> {
    let d = match &cfg.source {
        DatasetSource::Simulate {
            puf_seed,
            oscillators,
            dataset_seed,
        } => CrpDataset::generate(&RoPufModel::simulate(*puf_seed, *oscillators)?, cfg.n, *dataset_seed)?,
        DatasetSource::Csv(p) => CrpDataset::load_csv(p)?,
    };
    Ok(d)
}

/// Bit errors between the generator's output and the dataset.
pub fn crp_bit_errors(bundle: &ModelBundle, dataset: &CrpDataset) -> Result<usize, HarnessError> {
    let all = bundle.dnn.generate_all()?;
    Ok(all
        .iter()
        .zip(dataset.entries())
        .map(|(g, e)| {
            (g.challenge.0 ^ e.challenge.0).count_ones() as usize + (g.response.0 ^ e.response.0).count_ones() as usize
        })
        .sum())
}

fn link(kind: LinkKind) -> Result<CutLink, HarnessError> {
    Ok(match kind {
        LinkKind::InProcess => CutLink::in_process(),
        LinkKind::Tcp => CutLink::tcp_loopback()?,
    })
}

/// Trains all six networks on `dataset` and calibrates the node's δ.
pub fn enroll_dataset(
    dataset: &CrpDataset,
    train: &TrainConfig,
    link_kind: LinkKind,
) -> Result<(ModelBundle, EnrollReport), HarnessError> {
    let t0 = Instant::now();
    let s = train.seed;
    log::info!("training the CRP generator on {} CRPs", dataset.len());
    let (dnn, dnn_report) = train_dnn_generator(dataset, train)?;
    log::info!("dnn: {} epochs, bit accuracy {:.5}", dnn_report.epochs, dnn_report.bit_accuracy);

    let a = phase_a(
        dataset,
        Encoder1::new(s + ENC1_SEED)?,
        BasicEncoder2::new(s + BENC2_SEED)?,
        Decoder2::new(s + DEC2_SEED)?,
        &mut link(link_kind)?,
        train,
    )?;
    log::info!("phase A: {} epochs, {}/{} exact", a.report.epochs, a.report.exact, a.report.total);

    let b = phase_b(
        dataset,
        &a.encoder1,
        ExtendedEncoder2::new(a.basic_encoder2, s + XENC2_SEED)?,
        Decoder1::new(s + DEC1_SEED)?,
        &mut link(link_kind)?,
        train,
    )?;
    log::info!("phase B: {} epochs, {}/{} exact", b.report.epochs, b.report.exact, b.report.total);

    let genuine = latents_of(&enrolled_latents(&a.encoder1, dataset)?);
    let mut node = NodeModelSet {
        extended_encoder2: b.extended_encoder2,
        decoder2: a.decoder2,
        verifier_encoder_copy: a.encoder1,
        params: VerifyParams::default(),
    };
    let calibration = calibrate_delta(&node, &genuine)?;
    log::info!(
        "delta {:.3e} (nearest forgery {:.3e}, scale {:.3e})",
        calibration.delta,
        calibration.nearest_forgery,
        calibration.latent_scale
    );
    node.params = VerifyParams {
        tau: DEFAULT_TAU,
        delta: calibration.delta,
        latent_scale: calibration.latent_scale,
    };
    let NodeModelSet {
        extended_encoder2,
        decoder2,
        verifier_encoder_copy: encoder1,
        params,
    } = node;
    let bundle = ModelBundle {
        dnn,
        encoder1,
        decoder1: b.decoder1,
        extended_encoder2,
        decoder2,
        meta: BundleMeta {
            n: dataset.len(),
            challenge_bits: CHALLENGE_BITS,
            response_bits: RESPONSE_BITS,
            verify: params,
            lc_box: LatentBox::enclosing(genuine.iter().map(|l| &l.0)),
        },
    };
    let report = EnrollReport {
        n: dataset.len(),
        seed: s,
        crp_bit_errors: crp_bit_errors(&bundle, dataset)?,
        reconstruction_exact: reconstruction_exact(&bundle, dataset)?,
        response_path: evaluate_bundle(&bundle, dataset, 3)?,
        dnn: dnn_report,
        phase_a: a.report,
        phase_b: b.report,
        calibration,
        seconds: t0.elapsed().as_secs_f64(),
    };
    Ok((bundle, report))
}

/// Full enrollment from a run config, writing the bundle, the node's model
/// set, the dataset and the report into `out_dir`. Refuses to replace
/// existing bundles unless `force` is set.
pub fn cmd_enroll(cfg: &RunConfig, force: bool) -> Result<EnrollReport, HarnessError> {
    cfg.validate()?;
    for p in [cfg.bundle_path(), cfg.node_path()] {
        if p.exists() && !force {
            return Err(HarnessError::Exists(p));
        }
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    let dataset = load_dataset(cfg)?;
    let mut train = cfg.train;
    train.seed = cfg.seed;
    let (bundle, report) = enroll_dataset(&dataset, &train, cfg.split_link)?;
    dataset.save_csv(cfg.dataset_path())?;
    bundle.save(cfg.bundle_path())?;
    bundle.node_set().save(cfg.node_path())?;
    // A new bundle starts with an unused pool.
    if cfg.store_path().exists() {
        std::fs::remove_file(cfg.store_path())?;
    }
    std::fs::write(cfg.out_dir.join("enroll_report.json"), serde_json::to_vec_pretty(&report)?)?;
    Ok(report)
}
