use mhtts_core::autodiff::{Tape, Tensor, LN_EPS};
use mhtts_core::corpus::Token;
use mhtts_core::model::{forward, length_regulate, HiddenSequence, HiddenStage, Model, ModelConfig, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tokens(n: usize, seed: u64) -> Vec<Token> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| r.gen_range(0..40)).collect()
}

fn row_stats(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

#[test]
fn layer_norm_postcondition_on_h() {
    let config = ModelConfig::desk(vec![0, 1]);
    for seed in 0..5 {
        let params = ModelParams::init(&config, seed).unwrap();
        for len in [1, 3, 8, 17, 40] {
            let toks = tokens(len, seed * 100 + len as u64);
            let tape = Tape::new();
            let p = params.bind(&tape, false);
            let emb = p.embedding.embedding(&toks).unwrap();
            let padded = len.div_ceil(config.block()) * config.block();
            let u = forward::unet_forward(&emb.pad_rows(padded).unwrap(), &p.down, &p.up)
                .unwrap()
                .crop_rows(len)
                .unwrap()
                .value();
            let h = forward::encode_text(&toks, &p, &config).unwrap().value();
            assert_eq!(h.shape(), &[len, config.hidden]);
            for r in 0..len {
                let (_, var_in) = row_stats(u.row(r));
                let (mean, var) = row_stats(h.row(r));
                assert!(mean.abs() < 1e-9, "mean {mean}");
                let expected = 1.0 / (1.0 + LN_EPS / var_in);
                assert!((var - expected).abs() < 1e-6, "var {var} vs {expected}");
            }
        }
    }
}

#[test]
fn unet_preserves_shape() {
    for depth in 1..=4 {
        let config = ModelConfig {
            unet_depth: depth,
            ..ModelConfig::desk(vec![0])
        };
        let model = Model::init(config.clone(), 1).unwrap();
        for blocks in 1..4 {
            let l = blocks << depth;
            let x = Tensor::randn(&[l, 64], 1.0, &mut ChaCha8Rng::seed_from_u64(l as u64));
            assert_eq!(model.unet_forward(&x).unwrap().shape(), &[l, 64]);
        }
        for len in 1..20 {
            let h = model.encode_text(&tokens(len, 9)).unwrap();
            assert_eq!(h.values.shape(), &[len, 64]);
            assert_eq!(h.stage, HiddenStage::Text);
        }
    }
}

#[test]
fn unet_identity_kernels_double_pairwise_constant_input() {
    let d = 4;
    let mut id = Tensor::zeros(&[d, d, 3]);
    for c in 0..d {
        id.set(&[c, c, 1], 1.0);
    }
    let tape = Tape::new();
    let w = tape.constant(id);
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let mut data = Vec::new();
    for _ in 0..5 {
        let row: Vec<f64> = (0..d).map(|_| r.gen_range(0.0..2.0)).collect();
        data.extend_from_slice(&row);
        data.extend_from_slice(&row);
    }
    let x = Tensor::new(vec![10, d], data).unwrap();
    let out = forward::unet_forward(&tape.constant(x.clone()), &[w], &[w]).unwrap().value();
    for (o, v) in out.data().iter().zip(x.data()) {
        assert_eq!(*o, 2.0 * v);
    }
}

#[test]
fn length_regulator_is_exact() {
    let model = Model::init(ModelConfig::desk(vec![0]), 2).unwrap();
    let h = model.encode_text(&tokens(6, 3)).unwrap();
    let durations = [3, 0, 1, 2, 0, 4];
    let f = model.length_regulate(&h, &durations).unwrap();
    assert_eq!(f.stage, HiddenStage::Frames);
    assert_eq!(f.values.rows(), 10);
    let mut row = 0;
    for (t, &d) in durations.iter().enumerate() {
        for _ in 0..d {
            assert_eq!(f.values.row(row), h.values.row(t));
            row += 1;
        }
    }
    assert_eq!(length_regulate(&h, &[1; 6]).unwrap().values, h.values);
}

fn frames(model: &Model, n: usize, seed: u64) -> HiddenSequence {
    let toks = tokens(n, seed);
    let h = model.encode_text(&toks).unwrap();
    model.length_regulate(&h, &vec![1; n]).unwrap()
}

#[test]
fn heads_are_frame_local() {
    for layout in [mhtts_core::model::HeadLayout::PerSpeaker, mhtts_core::model::HeadLayout::Shared] {
        let model = Model::init(ModelConfig::desk(vec![0, 1]).with_layout(layout), 5).unwrap();
        let base = frames(&model, 9, 6);
        let out = model.head_forward(1, &base).unwrap();
        for t in [0, 4, 8] {
            let mut changed = base.clone();
            for j in 0..64 {
                let v = changed.values.at(&[t, j]);
                changed.values.set(&[t, j], -v + 0.5);
            }
            let out2 = model.head_forward(1, &changed).unwrap();
            for r in 0..9 {
                if r == t {
                    assert_ne!(out.row(r), out2.row(r));
                } else {
                    assert_eq!(out.row(r), out2.row(r));
                }
            }
        }
        let perm = [3usize, 0, 8, 1, 7, 2, 6, 4, 5];
        let mut permuted = base.clone();
        for (i, &p) in perm.iter().enumerate() {
            for j in 0..64 {
                permuted.values.set(&[i, j], base.values.at(&[p, j]));
            }
        }
        let out_p = model.head_forward(1, &permuted).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            assert_eq!(out_p.row(i), out.row(p));
        }
    }
}
