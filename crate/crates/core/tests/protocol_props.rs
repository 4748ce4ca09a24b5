use std::collections::HashSet;
use std::sync::Arc;
use std::time::Duration;

use lpuf_authnet::models::fresh_bundle;
use lpuf_authnet::protocol::{
    decode_wire, encode_wire, AuthRequest, ChallengeMsg, IndexStore, ManualClock, Message, ProtocolError, ResponseMsg,
    TranscriptLog, Verdict, VerifierState,
};
use lpuf_authnet::transport::{decode_frame, encode_frame, FRAME_OVERHEAD};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn message() -> impl Strategy<Value = Message> {
    let scalars = prop::array::uniform4(any::<f32>());
    prop_oneof![
        any::<u8>().prop_map(|node_id| Message::AuthRequest(AuthRequest { node_id })),
        scalars.clone().prop_map(|scalars| Message::Challenge(ChallengeMsg { scalars })),
        scalars.prop_map(|scalars| Message::Response(ResponseMsg { scalars })),
    ]
}

fn same_bits(a: &Message, b: &Message) -> bool {
    encode_wire(a) == encode_wire(b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn wire_round_trips(m in message()) {
        let bytes = encode_wire(&m);
        prop_assert_eq!(bytes.len(), 1 + m.payload_len());
        prop_assert!(same_bits(&decode_wire(&bytes).unwrap(), &m));
    }

    #[test]
    fn decoding_arbitrary_bytes_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..40)) {
        if let Ok(m) = decode_wire(&bytes) {
            prop_assert_eq!(encode_wire(&m), bytes);
        }
    }

    #[test]
    fn frame_round_trips(payload in prop::collection::vec(any::<u8>(), 0..300)) {
        let f = encode_frame(&payload).unwrap();
        prop_assert_eq!(f.len(), payload.len() + FRAME_OVERHEAD);
        prop_assert_eq!(decode_frame(&f).unwrap(), payload);
    }

    #[test]
    fn any_single_bit_flip_is_detected(payload in prop::collection::vec(any::<u8>(), 1..40), pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let mut f = encode_frame(&payload).unwrap();
        let i = pos.index(f.len());
        f[i] ^= 1 << bit;
        prop_assert!(decode_frame(&f).is_err());
    }

    #[test]
    fn store_draws_each_index_once(n in 1usize..200, seed in any::<u64>()) {
        let mut s = IndexStore::in_memory(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = HashSet::new();
        while let Some(i) = s.draw(&mut rng).unwrap() {
            prop_assert!(i < n);
            prop_assert!(seen.insert(i));
        }
        prop_assert_eq!(seen.len(), n);
        prop_assert_eq!(s.remaining(), 0);
    }

    #[test]
    fn store_file_survives_reopen(n in 2usize..64, first in 1usize..64, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("used.txt");
        let first = first.min(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut drawn = HashSet::new();
        {
            let mut s = IndexStore::open(&path, n).unwrap();
            for _ in 0..first {
                drawn.insert(s.draw(&mut rng).unwrap().unwrap());
            }
        }
        let mut s = IndexStore::open(&path, n).unwrap();
        prop_assert_eq!(s.used_count(), first);
        while let Some(i) = s.draw(&mut rng).unwrap() {
            prop_assert!(drawn.insert(i));
        }
        prop_assert_eq!(drawn.len(), n);
        prop_assert!(IndexStore::open(&path, n + 1).is_err());
    }
}

fn verifier(n: usize, clock: &ManualClock, t_max: Duration) -> VerifierState {
    let bundle = fresh_bundle(n, 3).unwrap();
    VerifierState::new(
        bundle.verifier_models(),
        IndexStore::in_memory(n),
        TranscriptLog::in_memory(),
        t_max,
        Arc::new(clock.clone()),
        1,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn late_responses_are_rejected_and_sessions_close_once(late in 1u64..1_000_000, scalars in prop::array::uniform4(-1.0f32..1.0)) {
        let clock = ManualClock::new();
        let t_max = Duration::from_millis(100);
        let vs = verifier(16, &clock, t_max);
        let issued = vs.on_request(AuthRequest { node_id: 1 }).unwrap();
        prop_assert_eq!(issued.deadline, t_max);
        clock.advance(t_max + Duration::from_nanos(late));
        let r = ResponseMsg { scalars };
        prop_assert_eq!(vs.on_response(issued.session, &r).unwrap(), Verdict::RejectTimeout);
        prop_assert!(matches!(vs.on_response(issued.session, &r), Err(ProtocolError::UnknownSession(_))));
        let ts = vs.transcripts();
        prop_assert_eq!(ts.len(), 1);
        prop_assert_eq!(ts[0].messages(), 3);
        prop_assert_eq!(ts[0].payload_bytes(), 33);
    }
}

#[test]
fn pool_exhaustion_is_reported() {
    let clock = ManualClock::new();
    let vs = verifier(4, &clock, Duration::from_secs(1));
    let mut indices = HashSet::new();
    for _ in 0..4 {
        let s = vs.on_request(AuthRequest { node_id: 1 }).unwrap();
        indices.insert(s.session);
    }
    assert!(matches!(
        vs.on_request(AuthRequest { node_id: 1 }),
        Err(ProtocolError::PoolExhausted { n: 4 })
    ));
    assert_eq!(vs.remaining(), 0);
    assert_eq!(vs.sweep_expired().unwrap(), 0);
    clock.advance(Duration::from_secs(2));
    assert_eq!(vs.sweep_expired().unwrap(), 4);
    assert!(vs.transcripts().iter().all(|t| t.verdict == Some(Verdict::RejectTimeout)));
}
