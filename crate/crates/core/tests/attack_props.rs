use std::collections::HashMap;

use lpuf_authnet::attack::{fake_latents, fake_lc_sweep, forward_secrecy_audit, genuine_latents, Rate};
use lpuf_authnet::models::{fresh_bundle, LatentBox, LatentChallenge};
use lpuf_authnet::protocol::{encode_wire, ChallengeMsg, Flow, Message, SessionTranscript, TranscriptRecord};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn transcript(session_id: u64, index: usize, lc: f32) -> SessionTranscript {
    let ch = Message::Challenge(ChallengeMsg { scalars: [lc, 0.0, 0.0, 0.0] });
    SessionTranscript {
        session_id,
        node_id: 1,
        index,
        records: vec![TranscriptRecord {
            direction: Flow::VerifierToNode,
            payload: hex::encode(encode_wire(&ch)),
            timestamp_ns: 0,
        }],
        verdict: None,
    }
}

proptest! {
    #[test]
    fn rate_is_a_fraction(trials in 0usize..10_000, hits in 0usize..10_000) {
        let hits = hits.min(trials);
        let r = Rate::new(trials, hits);
        prop_assert!((0.0..=1.0).contains(&r.rate));
        if trials > 0 {
            prop_assert!((r.rate * trials as f64 - hits as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn audit_flags_exactly_the_reused_indices(indices in prop::collection::vec(0usize..20, 2..40)) {
        let ts: Vec<_> = indices.iter().enumerate().map(|(k, &i)| transcript(k as u64, i, k as f32)).collect();
        let report = forward_secrecy_audit(&ts).unwrap();
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for &i in &indices {
            *counts.entry(i).or_default() += 1;
        }
        let mut want: Vec<usize> = counts.iter().filter(|(_, c)| **c > 1).map(|(i, _)| *i).collect();
        want.sort_unstable();
        let got: Vec<usize> = report.index_reuse.iter().map(|(i, _)| *i).collect();
        prop_assert_eq!(got, want);
        prop_assert_eq!(report.distinct_indices, counts.len());
        prop_assert_eq!(report.lc_repeats, 0);
    }

    #[test]
    fn fakes_stay_outside_every_ball(seed in any::<u64>(), radius in 0.001f64..0.1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let genuine: Vec<LatentChallenge> = (0..8).map(|k| LatentChallenge([k as f64 / 8.0; 4])).collect();
        let b = LatentBox { min: [0.0; 4], max: [1.0; 4] };
        for f in fake_latents(&b, &genuine, radius, 50, &mut rng) {
            prop_assert!(genuine.iter().all(|g| g.max_abs_diff(&f) > radius));
            prop_assert!(f.0.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn repeated_latent_challenges_are_counted() {
    let ts = vec![transcript(1, 0, 0.5), transcript(2, 1, 0.5), transcript(3, 2, 0.25)];
    let r = forward_secrecy_audit(&ts).unwrap();
    assert_eq!(r.lc_repeats, 1);
    assert!(!r.clean());
    assert!(forward_secrecy_audit(&ts[..1]).is_err());
}

#[test]
fn confusion_matrix_accounts_for_every_trial() {
    let bundle = fresh_bundle(32, 4).unwrap();
    let genuine = genuine_latents(&bundle).unwrap();
    let m = fake_lc_sweep(&bundle.node_set(), &genuine, &bundle.meta.lc_box, 100, 60, 1).unwrap();
    assert_eq!(m.genuine_total(), 100);
    assert_eq!(m.fake_total(), 60);
    assert_eq!(m.true_accept + m.false_reject, 100);
    assert_eq!(m.true_reject + m.false_accept, 60);
}
