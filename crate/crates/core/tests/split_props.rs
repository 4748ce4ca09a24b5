use lpuf_authnet::models::{BasicEncoder2, Decoder1, Decoder2, Encoder1, ExtendedEncoder2};
use lpuf_authnet::nn::Mlp;
use lpuf_authnet::puf::{CrpDataset, RoPufModel};
use lpuf_authnet::split::{
    epoch_batches, phase_a, phase_b, resume_phase_a, resume_phase_b, Checkpoint, CutLink, FailingEnd, PhaseA,
    SplitError, TrainConfig,
};
use proptest::prelude::*;

proptest! {
    #[test]
    fn epoch_batches_partition_the_set(n in 1usize..300, batch in 1usize..64, seed in any::<u64>(), epoch in 0usize..50) {
        let b = epoch_batches(n, batch, seed, epoch);
        prop_assert_eq!(b.len(), n.div_ceil(batch));
        prop_assert!(b.iter().all(|x| !x.is_empty() && x.len() <= batch));
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(epoch_batches(n, batch, seed, epoch), b);
    }
}

fn dataset() -> CrpDataset {
    CrpDataset::generate(&RoPufModel::simulate(9, 4).unwrap(), 24, 2).unwrap()
}

fn cfg() -> TrainConfig {
    TrainConfig {
        max_epochs: 2,
        eval_every: 2,
        target_accuracy: 1e-9,
        batch_size: 8,
        response_batch_size: 8,
        seed: 4,
        ..TrainConfig::default()
    }
}

fn start() -> (Encoder1, BasicEncoder2, Decoder2) {
    (Encoder1::new(1).unwrap(), BasicEncoder2::new(2).unwrap(), Decoder2::new(3).unwrap())
}

fn digests(a: &PhaseA) -> [u32; 3] {
    [a.encoder1.net().param_digest(), a.basic_encoder2.net().param_digest(), a.decoder2.net().param_digest()]
}

fn failing(at: u64) -> CutLink {
    let l = CutLink::in_process();
    CutLink::new(Box::new(FailingEnd::new(l.upper, at)), l.lower)
}

#[test]
fn phase_a_resumes_to_the_uninterrupted_result() {
    let d = dataset();
    let (e, b, x) = start();
    let clean = phase_a(&d, e, b, x, &mut CutLink::in_process(), &cfg()).unwrap();
    for at in [0, 1, 4] {
        let (e, b, x) = start();
        let ck = match phase_a(&d, e, b, x, &mut failing(at), &cfg()) {
            Err(SplitError::Link { checkpoint, .. }) => *checkpoint,
            other => panic!("expected a link failure, got {:?}", other.map(|_| ())),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.lpuf");
        ck.save(&path).unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        let resumed = resume_phase_a(&d, ck, &mut CutLink::in_process(), &cfg()).unwrap();
        assert_eq!(digests(&resumed), digests(&clean), "failure at send {at}");
    }
}

#[test]
fn phase_b_resumes_and_keeps_the_base_frozen() {
    let d = dataset();
    let (e, b, x) = start();
    let a = phase_a(&d, e, b, x, &mut CutLink::in_process(), &cfg()).unwrap();
    let base = a.basic_encoder2.net().param_digest();
    let xenc = || ExtendedEncoder2::new(a.basic_encoder2.clone(), 5).unwrap();
    let clean = phase_b(&d, &a.encoder1, xenc(), Decoder1::new(6).unwrap(), &mut CutLink::in_process(), &cfg()).unwrap();
    assert_eq!(clean.extended_encoder2.base.net().param_digest(), base);
    let ck = match phase_b(&d, &a.encoder1, xenc(), Decoder1::new(6).unwrap(), &mut failing(3), &cfg()) {
        Err(SplitError::Link { checkpoint, .. }) => *checkpoint,
        other => panic!("expected a link failure, got {:?}", other.map(|_| ())),
    };
    let resumed = resume_phase_b(&d, &a.encoder1, a.basic_encoder2.clone(), ck, &mut CutLink::in_process(), &cfg()).unwrap();
    let flat = |m: &Mlp| m.param_digest();
    assert_eq!(flat(resumed.extended_encoder2.extension()), flat(clean.extended_encoder2.extension()));
    assert_eq!(flat(resumed.decoder1.net()), flat(clean.decoder1.net()));
}

#[test]
fn tcp_cut_matches_in_process() {
    let d = dataset();
    let (e, b, x) = start();
    let local = phase_a(&d, e, b, x, &mut CutLink::in_process(), &cfg()).unwrap();
    let (e, b, x) = start();
    let mut link = CutLink::tcp_loopback().unwrap();
    let tcp = phase_a(&d, e, b, x, &mut link, &cfg()).unwrap();
    assert_eq!(digests(&local), digests(&tcp));
    assert!(tcp.report.forward_crossings > 0);
    assert_eq!(tcp.report.forward_crossings, tcp.report.backward_crossings);
}

#[test]
fn invalid_configs_are_refused() {
    let d = dataset();
    for bad in [
        TrainConfig { batch_size: 0, ..cfg() },
        TrainConfig { target_accuracy: 0.0, ..cfg() },
        TrainConfig { response_lr: 0.0, ..cfg() },
    ] {
        let (e, b, x) = start();
        assert!(matches!(phase_a(&d, e, b, x, &mut CutLink::in_process(), &bad), Err(SplitError::Config(_))));
    }
}
