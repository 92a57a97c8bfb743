mod common;

use common::*;
use nmt_core::model::{random_model, GruParams, ModelConfig};
use nmt_core::nnet::{self, OutputProjection};
use nmt_core::search::{beam_search, exhaustive_search, DecodeOptions};
use nmt_core::{ShortList, Tensor2D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor2D {
    Tensor2D::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn max_diff(a: &[f32], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (*x as f64 - y).abs()).fold(0.0, f64::max)
}

#[test]
fn gru_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let g = GruParams {
            w_z: rand_tensor(&mut rng, 3, 2),
            w_r: rand_tensor(&mut rng, 3, 2),
            w_h: rand_tensor(&mut rng, 3, 2),
            u_z: rand_tensor(&mut rng, 2, 2),
            u_r: rand_tensor(&mut rng, 2, 2),
            u_h: rand_tensor(&mut rng, 2, 2),
            b_z: rand_tensor(&mut rng, 1, 2),
            b_r: rand_tensor(&mut rng, 1, 2),
            b_h: rand_tensor(&mut rng, 1, 2),
        };
        let x: Vec<f32> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h: Vec<f32> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = nnet::gru_step(&g, &x, &h).unwrap();
        let want = scalar_gru(&g, &to64(&x), &to64(&h));
        assert!(max_diff(&got, &want) <= 1e-5);
    }
}

#[test]
fn encoder_init_and_attention_match_oracle() {
    for seed in 0..20 {
        let m = random_model(ModelConfig::new(9, 6).with_dims(3, 4, 5), seed).unwrap();
        let src = [1u32, 4, 7, 2];
        let a = nnet::encode(&m, &src[..3]).unwrap();
        let want = scalar_encode(&m, &src[..3]);
        for (j, w) in want.iter().enumerate() {
            assert!(max_diff(a.h.row(j), w) <= 1e-5);
        }
        let s0 = nnet::init_decoder_state(&m, &a).unwrap();
        let want_s0 = scalar_init_state(&m, &want);
        assert!(max_diff(&s0.s, &want_s0) <= 1e-6);

        let a4 = nnet::encode(&m, &src).unwrap();
        let ann4 = scalar_encode(&m, &src);
        let (alpha, ctx) = nnet::attention(&m, &s0, &a4).unwrap();
        let (want_alpha, want_ctx) = scalar_attention(&m, &want_s0, &ann4);
        assert!(max_diff(&alpha, &want_alpha) <= 1e-5);
        assert!(max_diff(&ctx, &want_ctx) <= 1e-5);
        assert!((alpha.iter().map(|&x| x as f64).sum::<f64>() - 1.0).abs() <= 1e-5);
    }
}

#[test]
fn decoder_step_matches_oracle() {
    for seed in 0..20 {
        let m = random_model(ModelConfig::new(8, 11).with_dims(3, 4, 5), seed).unwrap();
        let m = sharpen(&m, 5.0);
        let src = [2u32, 5, 3];
        let a = nnet::encode(&m, &src).unwrap();
        let ann = scalar_encode(&m, &src);
        let mut s = nnet::init_decoder_state(&m, &a).unwrap();
        let mut s64 = scalar_init_state(&m, &ann);
        for y in [None, Some(4), Some(0), Some(10)] {
            let out = nnet::decoder_step(&m, &s, y, &a, None).unwrap();
            let (s_new, lp) = scalar_decoder_step(&m, &s64, y, &ann);
            assert!(max_diff(&out.state.s, &s_new) <= 1e-4);
            assert!(max_diff(&out.logprobs, &lp) <= 1e-4);
            s = out.state;
            s64 = to64(&s.s);
        }
    }
}

#[test]
fn restricted_output_equals_renormalized_full_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for seed in 0..100 {
        let v_trg = rng.gen_range(3..40);
        let m = random_model(ModelConfig::new(6, v_trg).with_dims(4, 4, 4), seed).unwrap();
        let m = sharpen(&m, rng.gen_range(1.0..8.0));
        let src: Vec<u32> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(0..6)).collect();
        let extra: Vec<u32> = (0..rng.gen_range(0..v_trg)).map(|_| rng.gen_range(0..v_trg as u32)).collect();
        let sl = ShortList::from_ids(extra).unwrap();
        let a = nnet::encode(&m, &src).unwrap();
        let s = nnet::init_decoder_state(&m, &a).unwrap();
        let y = Some(rng.gen_range(0..v_trg as u32));
        let full = nnet::decoder_step(&m, &s, y, &a, None).unwrap();
        let restricted = nnet::decoder_step(&m, &s, y, &a, Some(&sl)).unwrap();
        let want = renormalize(&full.logprobs, sl.global_ids());
        assert!(max_diff(&restricted.logprobs, &want) <= 1e-5, "seed {seed}");
        assert_eq!(restricted.state, full.state);
    }
}

#[test]
fn full_coverage_projection_is_identical_to_unrestricted() {
    let m = random_model(ModelConfig::new(6, 9).with_dims(4, 4, 4), 1).unwrap();
    let sl = ShortList::from_ids(0..9).unwrap();
    let p = OutputProjection::restricted(&m, &sl).unwrap();
    assert_eq!(p.len(), 9);
    let a = nnet::encode(&m, &[1, 2]).unwrap();
    let s = nnet::init_decoder_state(&m, &a).unwrap();
    let x = nnet::decoder_step(&m, &s, Some(3), &a, None).unwrap();
    let y = nnet::decoder_step(&m, &s, Some(3), &a, Some(&sl)).unwrap();
    assert_eq!(x.logprobs, y.logprobs);
}

fn cap_opts(beam: usize, cap: usize) -> DecodeOptions {
    DecodeOptions {
        beam_size: beam,
        max_len_factor: 0,
        max_len_offset: cap,
        ..DecodeOptions::default()
    }
}

#[test]
fn full_width_beam_matches_exhaustive_on_peaked_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..60 {
        let v = rng.gen_range(2..=4);
        let m = sharpen(&tiny_model(5, v, seed), rng.gen_range(1.0..20.0));
        let src: Vec<u32> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(0..5)).collect();
        let cap = 3;
        let ex = exhaustive_search(&[&m], &src, cap).unwrap();
        let b = beam_search(&[&m], &src, &cap_opts(v.pow(cap as u32), cap), None).unwrap();
        assert_eq!(b[0].tokens, ex.tokens, "seed {seed}");
        assert!((b[0].score - ex.score).abs() <= 1e-5);
        for k in [1, 2, 3] {
            let h = &beam_search(&[&m], &src, &cap_opts(k, cap), None).unwrap()[0];
            // an unfinished cap-length result is not in the exhaustive search space
            if h.finished {
                assert!(ex.score >= h.score - 1e-5, "seed {seed} beam {k}");
            }
        }
    }
}

#[test]
fn greedy_beam_equals_stepwise_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..50 {
        let m = random_model(ModelConfig::new(7, 12).with_dims(4, 5, 3), seed).unwrap();
        let m = sharpen(&m, 10.0);
        let src: Vec<u32> = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(0..7)).collect();
        let opts = DecodeOptions::default().with_beam(1);
        let cap = opts.max_len(src.len());
        let (tokens, score) = greedy(&[&m], &src, cap);
        let h = &beam_search(&[&m], &src, &opts, None).unwrap()[0];
        assert_eq!(h.tokens, tokens);
        assert!((h.score - score).abs() <= 1e-5);
    }
}

#[test]
fn decoding_is_deterministic() {
    let m = sharpen(&tiny_model(6, 5, 4), 4.0);
    let opts = cap_opts(3, 6);
    let a = beam_search(&[&m], &[1, 2, 3], &opts, None).unwrap();
    let b = beam_search(&[&m], &[1, 2, 3], &opts, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ensemble_of_copies_equals_single_model() {
    for seed in 0..10 {
        let m = sharpen(&tiny_model(6, 5, seed), 6.0);
        let copies = [m.clone(), m.clone(), m.clone()];
        let refs: Vec<&_> = copies.iter().collect();
        let opts = cap_opts(3, 5);
        let single = beam_search(&[&m], &[2, 3], &opts, None).unwrap();
        let ens = beam_search(&refs, &[2, 3], &opts, None).unwrap();
        assert_eq!(single[0].tokens, ens[0].tokens);
        assert!((single[0].score - ens[0].score).abs() <= 1e-5);
    }
}

#[test]
fn n_best_is_sorted_and_distinct() {
    let m = sharpen(&tiny_model(6, 5, 2), 3.0);
    let opts = DecodeOptions {
        n_best: 4,
        ..cap_opts(6, 4)
    };
    let hyps = beam_search(&[&m], &[1, 4], &opts, None).unwrap();
    assert!(hyps.len() <= 4 && !hyps.is_empty());
    for w in hyps.windows(2) {
        assert!(w[0].score >= w[1].score);
        assert_ne!(w[0].tokens, w[1].tokens);
    }
}
