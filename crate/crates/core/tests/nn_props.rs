use lpuf_authnet::nn::container::{decode_mlp, encode_mlp};
use lpuf_authnet::nn::{gradient_check, mse_loss, AdamConfig, AdamState, Matrix, Mlp};
use proptest::prelude::*;

fn naive_matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[i * m + j] = (0..k).map(|p| a[i * k + p] * b[p * m + j]).sum();
        }
    }
    out
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs())))
}

fn dims() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>, Vec<f64>)> {
    (1usize..7, 1usize..7, 1usize..7).prop_flat_map(|(n, k, m)| {
        (
            Just(n),
            Just(k),
            Just(m),
            prop::collection::vec(-10.0f64..10.0, n * k),
            prop::collection::vec(-10.0f64..10.0, k * m),
        )
    })
}

fn small_net() -> impl Strategy<Value = (Vec<usize>, u64)> {
    (prop::collection::vec(1usize..6, 2..5), any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_variants_agree_with_naive((n, k, m, a, b) in dims()) {
        let am = Matrix::from_vec(n, k, a.clone()).unwrap();
        let bm = Matrix::from_vec(k, m, b.clone()).unwrap();
        let want = naive_matmul(&a, &b, n, k, m);
        prop_assert!(close(am.matmul(&bm).unwrap().as_slice(), &want));
        let bt = Matrix::from_vec(m, k, transpose(&b, k, m)).unwrap();
        prop_assert!(close(am.matmul_t(&bt).unwrap().as_slice(), &want));
        let at = Matrix::from_vec(k, n, transpose(&a, n, k)).unwrap();
        prop_assert!(close(at.t_matmul(&bm).unwrap().as_slice(), &want));
    }

    #[test]
    fn mse_gradient_matches_finite_differences(
        pairs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..10)
    ) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (loss, grad) = mse_loss(&p, &t).unwrap();
        prop_assert!(loss >= 0.0);
        let h = 1e-6;
        for i in 0..p.len() {
            let mut up = p.clone();
            up[i] += h;
            let mut dn = p.clone();
            dn[i] -= h;
            let fd = (mse_loss(&up, &t).unwrap().0 - mse_loss(&dn, &t).unwrap().0) / (2.0 * h);
            prop_assert!((fd - grad[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn backprop_matches_central_differences((sizes, seed) in small_net(), rows in 1usize..4) {
        let mut net = Mlp::init_relu_linear(&sizes, seed).unwrap();
        // Zero biases put units behind a dead ReLU exactly on the kink.
        for (k, l) in net.layers_mut().iter_mut().enumerate() {
            l.bias.iter_mut().enumerate().for_each(|(j, b)| *b = 0.05 + 0.01 * (k + j) as f64);
        }
        let input = Matrix::from_vec(
            rows,
            sizes[0],
            (0..rows * sizes[0]).map(|i| 0.1 + ((i + (seed % 7) as usize) as f64 * 0.37).sin().abs()).collect(),
        )
        .unwrap();
        let last = *sizes.last().unwrap();
        let target = Matrix::from_vec(rows, last, (0..rows * last).map(|i| (i as f64 * 0.61).cos()).collect()).unwrap();
        let g = gradient_check(&net, &input, &target, 1e-5).unwrap();
        prop_assert!(g.checked > 0);
        prop_assert!(g.max_rel_error <= 1e-4, "relative error {}", g.max_rel_error);
    }

    #[test]
    fn container_round_trip_is_bit_exact((sizes, seed) in small_net()) {
        let net = Mlp::init_relu_linear(&sizes, seed).unwrap();
        let back = decode_mlp(&encode_mlp(&net)).unwrap();
        prop_assert_eq!(back.param_digest(), net.param_digest());
        prop_assert_eq!(back.layers(), net.layers());
    }

    #[test]
    fn truncated_containers_are_rejected((sizes, seed) in small_net(), cut in 0.0f64..1.0) {
        let bytes = encode_mlp(&Mlp::init_relu_linear(&sizes, seed).unwrap());
        let at = ((bytes.len() as f64) * cut) as usize;
        prop_assert!(decode_mlp(&bytes[..at.min(bytes.len() - 1)]).is_err());
    }

    #[test]
    fn stack_then_split_is_identity(
        (a, sa) in small_net(),
        tail in prop::collection::vec(1usize..6, 1..3),
        sb in any::<u64>(),
    ) {
        let first = Mlp::init_relu_linear(&a, sa).unwrap();
        let mut b = vec![*a.last().unwrap()];
        b.extend(tail);
        let second = Mlp::init_relu_linear(&b, sb).unwrap();
        let stacked = Mlp::stack(&[&first, &second]).unwrap();
        let parts = stacked.split(&[first.layers().len(), second.layers().len()]).unwrap();
        prop_assert_eq!(parts[0].layers(), first.layers());
        prop_assert_eq!(parts[1].layers(), second.layers());
    }

    #[test]
    fn frozen_layers_never_move((sizes, seed) in small_net()) {
        let mut net = Mlp::init_relu_linear(&sizes, seed).unwrap();
        net.set_frozen(0, true);
        let before = net.layers()[0].clone();
        let mut adam = AdamState::new(&net, AdamConfig::default());
        let x = Matrix::from_vec(2, sizes[0], vec![0.5; 2 * sizes[0]]).unwrap();
        let last = *sizes.last().unwrap();
        let y = Matrix::from_vec(2, last, vec![1.0; 2 * last]).unwrap();
        for _ in 0..5 {
            let trace = net.forward_batch(&x).unwrap();
            let (_, g) = lpuf_authnet::nn::mse_loss_batch(&trace.output, &y).unwrap();
            let (grads, _) = net.backward_batch(&trace, &g).unwrap();
            adam.step(&mut net, &grads).unwrap();
        }
        prop_assert_eq!(&net.layers()[0], &before);
    }
}
