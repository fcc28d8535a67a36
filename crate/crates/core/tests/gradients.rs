use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unidu_core::model::{ModelConfig, Parameters, Precision};
use unidu_core::strategies::{huw_objective, huw_weight_grad, MatsNet, FEATURE_DIM, MATS_PARAMS};

fn tiny() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        max_len: 16,
        ffn_mult: 2,
        dropout: 0.0,
        precision: Precision::DOUBLE,
    }
}

fn central(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

#[test]
fn every_array_matches_finite_differences() {
    let cfg = tiny();
    let vocab = 12;
    let params = Parameters::<f64>::init(&cfg, vocab, 3).unwrap();
    let input = [4u32, 7, 9, 5, 11];
    let target = [6u32, 8, 10];
    let (_, cache) = params.forward_loss(&input, &target, None).unwrap();
    let grads = params.backward(&cache);
    let arrays = params.layout().arrays().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for spec in &arrays {
        for _ in 0..3 {
            let c = match spec.name.as_str() {
                "tok_emb" => spec.offset + [4usize, 6, 8, 1][rng.gen_range(0..4)] * cfg.d_model + rng.gen_range(0..cfg.d_model),
                "enc_pos" | "dec_pos" => spec.offset + rng.gen_range(0..4 * cfg.d_model),
                _ => spec.offset + rng.gen_range(0..spec.len()),
            };
            let orig = params.data[c];
            let numeric = central(
                |h| {
                    let mut p = params.clone();
                    p.data[c] = orig + h;
                    p.forward_loss(&input, &target, None).unwrap().0
                },
                1e-5,
            );
            let analytic = grads.data[c];
            let scale = analytic.abs().max(numeric.abs()).max(1e-7);
            assert!(
                (analytic - numeric).abs() / scale < 1e-4,
                "{} [{}]: analytic {analytic} numeric {numeric}",
                spec.name,
                c - spec.offset
            );
        }
    }
}

#[test]
fn backward_into_scales_linearly() {
    let params = Parameters::<f64>::init(&tiny(), 10, 8).unwrap();
    let (_, cache) = params.forward_loss(&[4, 5, 6], &[7, 8], None).unwrap();
    let once = params.backward(&cache);
    let mut acc = once.clone();
    acc.fill_zero();
    params.backward_into(&cache, 0.5, &mut acc);
    params.backward_into(&cache, 1.5, &mut acc);
    for (a, b) in acc.data.iter().zip(&once.data) {
        assert!((a - 2.0 * b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn single_precision_tracks_double() {
    let mut cfg = tiny();
    let p64 = Parameters::<f64>::init(&cfg, 10, 2).unwrap();
    cfg.precision = Precision::SINGLE;
    let p32 = Parameters::<f32>::init(&cfg, 10, 2).unwrap();
    let l64 = p64.forward_loss(&[4, 5, 6], &[7, 8], None).unwrap().0;
    let l32 = p32.forward_loss(&[4, 5, 6], &[7, 8], None).unwrap().0;
    assert!((l64 - l32).abs() < 1e-4, "{l64} vs {l32}");
}

#[test]
fn huw_weight_gradient_matches_finite_differences() {
    let losses = [0.7, 1.9, 3.3];
    let w = [0.4, 1.1, 2.5];
    let g = huw_weight_grad(&losses, &w);
    for i in 0..3 {
        let numeric = central(
            |h| {
                let mut x = w;
                x[i] += h;
                huw_objective(&losses, &x).unwrap()
            },
            1e-6,
        );
        assert!((g[i] - numeric).abs() < 1e-7, "{i}: {} vs {numeric}", g[i]);
    }
}

#[test]
fn mats_parameter_gradient_matches_finite_differences() {
    let net = MatsNet::init(17);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let feats: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..FEATURE_DIM).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let refs: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
    let losses = [0.5, 1.2, 2.0, 0.9];
    let (_, grad, _) = net.objective(&losses, &refs).unwrap();
    assert_eq!(grad.len(), MATS_PARAMS);
    for _ in 0..60 {
        let k = rng.gen_range(0..MATS_PARAMS);
        let numeric = central(
            |h| {
                let mut n = net.clone();
                n.phi[k] += h;
                n.objective(&losses, &refs).unwrap().0
            },
            1e-6,
        );
        let scale = grad[k].abs().max(numeric.abs()).max(1e-6);
        assert!((grad[k] - numeric).abs() / scale < 1e-4, "phi[{k}]: {} vs {numeric}", grad[k]);
    }
}
