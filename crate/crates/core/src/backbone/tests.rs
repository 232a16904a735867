use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::{dot, gelu, sigmoid};

fn tiny_cfg() -> BackboneConfig {
    BackboneConfig {
        d_model: 8,
        d_ff: 16,
        n_layers: 1,
        n_heads: 1,
        patch_len: 4,
        max_ctx_patches: 4,
        max_fut_patches: 2,
        min_ctx_patches: 1,
        quantiles: vec![0.1, 0.5, 0.9],
        rope_fraction: 0.5,
        dropout: 0.0,
        ..BackboneConfig::default()
    }
}

fn build(cfg: BackboneConfig, seed: u64) -> (Backbone, ParameterStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new(seed);
    let bb = Backbone::init(cfg, &mut store, &mut rng).unwrap();
    // spread weights out so the test exercises non-trivial activations
    for e in store.entries_mut() {
        if e.name.ends_with("gamma") {
            continue;
        }
        for v in e.values.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    (bb, store)
}

fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

// ---------------------------------------------------------------------------
// independent straight-line reference of one encoder block

fn ref_layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(j, a)| (a - m) / (v + 1e-5).sqrt() * g[j] + b[j])
        .collect()
}

fn ref_linear(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let out = b.len();
    (0..out)
        .map(|o| b[o] + x.iter().enumerate().map(|(i, xi)| xi * w[i * out + o]).sum::<f64>())
        .collect()
}

fn ref_attention(x: &[Vec<f64>], store: &ParameterStore, l: &LayerIds, cfg: &BackboneConfig, gated: bool) -> Vec<Vec<f64>> {
    let v = |id| store.values(id);
    let a = &l.attn;
    let n = x.len();
    let dh = cfg.d_head();
    let q: Vec<_> = x.iter().map(|r| ref_linear(r, v(a.wq), v(a.bq))).collect();
    let k: Vec<_> = x.iter().map(|r| ref_linear(r, v(a.wk), v(a.bk))).collect();
    let vv: Vec<_> = x.iter().map(|r| ref_linear(r, v(a.wv), v(a.bv))).collect();
    let g: Vec<_> = x.iter().map(|r| ref_linear(r, v(a.wg), v(a.bg))).collect();
    let mut concat = vec![vec![0.0; cfg.d_model]; n];
    for h in 0..cfg.n_heads {
        let sl = |m: &Vec<f64>| m[h * dh..(h + 1) * dh].to_vec();
        for i in 0..n {
            let qi = p_rope(&sl(&q[i]), i as i64, cfg);
            let mut scores: Vec<f64> = (0..n)
                .map(|j| dot(&qi, &p_rope(&sl(&k[j]), j as i64, cfg)) / (dh as f64).sqrt())
                .collect();
            let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
            scores.iter_mut().for_each(|s| *s = (*s - mx).exp() / z);
            for c in 0..dh {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += scores[j] * vv[j][h * dh + c];
                }
                let gate = if gated { sigmoid(g[i][h * dh + c]) } else { 1.0 };
                concat[i][h * dh + c] = acc * gate;
            }
        }
    }
    concat.iter().map(|r| ref_linear(r, v(a.wo), v(a.bo))).collect()
}

fn ref_encoder(tokens: &Mat, store: &ParameterStore, bb: &Backbone) -> Mat {
    let cfg = &bb.cfg;
    let v = |id| store.values(id);
    let mut x: Vec<Vec<f64>> = (0..tokens.rows).map(|i| tokens.row(i).to_vec()).collect();
    for l in &bb.ids.layers {
        let h1: Vec<_> = x.iter().map(|r| ref_layer_norm(r, v(l.ln1.gamma), v(l.ln1.beta))).collect();
        let a = ref_attention(&h1, store, l, cfg, true);
        for (xi, ai) in x.iter_mut().zip(&a) {
            xi.iter_mut().zip(ai).for_each(|(p, q)| *p += q);
        }
        for xi in x.iter_mut() {
            let h2 = ref_layer_norm(xi, v(l.ln2.gamma), v(l.ln2.beta));
            let f: Vec<f64> = ref_linear(&h2, v(l.ffn.w1), v(l.ffn.b1)).into_iter().map(gelu).collect();
            let o = ref_linear(&f, v(l.ffn.w2), v(l.ffn.b2));
            xi.iter_mut().zip(&o).for_each(|(p, q)| *p += q);
        }
    }
    Mat::from_vec(x.len(), cfg.d_model, x.concat())
}

// ---------------------------------------------------------------------------
// masking

#[test]
fn mask_length_degenerate_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100 {
        assert_eq!(sample_mask_length(&mut rng, 5, 5), 0);
        assert!(sample_mask_length(&mut rng, 2, 8) <= 6);
    }
}

#[test]
fn mask_length_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut counts = [0usize; 7];
    let n = 100_000;
    for _ in 0..n {
        counts[sample_mask_length(&mut rng, 2, 8)] += 1;
    }
    for c in counts {
        assert!((c as f64 / n as f64 - 1.0 / 7.0).abs() < 0.01, "{counts:?}");
    }
}

#[test]
fn token_layout_and_masking() {
    let cfg = tiny_cfg();
    let (bb, store) = build(cfg.clone(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let patches = random_mat(&mut rng, cfg.max_ctx_patches, cfg.patch_len);

    let seq = bb.build_token_sequence(&patches, 0, 1, &store).unwrap();
    assert_eq!(seq.valid_from, 0);
    assert_eq!(seq.tokens.rows, cfg.n_tokens());
    assert_eq!(seq.positions, (0..cfg.n_tokens() as i64).collect::<Vec<_>>());

    let max_mask = cfg.max_ctx_patches - cfg.min_ctx_patches;
    let seq = bb.build_token_sequence(&patches, max_mask, 2, &store).unwrap();
    let b_proj = store.values(bb.ids.b_proj);
    for r in 0..max_mask {
        assert_eq!(seq.tokens.row(r), b_proj, "masked slot {r} equals the zero-patch embedding");
    }
    assert_ne!(seq.tokens.row(max_mask), b_proj);
    assert_eq!(cfg.max_ctx_patches - seq.valid_from, cfg.min_ctx_patches);
    assert_eq!(seq.tokens.row(cfg.register_index()), store.values(bb.ids.e_reg));
    for r in cfg.register_index() + 1..cfg.n_tokens() {
        assert_eq!(seq.tokens.row(r), store.values(bb.ids.z_fut));
    }

    assert!(matches!(
        bb.build_token_sequence(&patches, max_mask + 1, 1, &store),
        Err(Error::MaskBounds { .. })
    ));
    assert!(matches!(
        bb.build_token_sequence(&patches, 0, cfg.max_fut_patches + 1, &store),
        Err(Error::Horizon(_))
    ));
}

#[test]
fn register_token_bypasses_patch_projection() {
    let cfg = tiny_cfg();
    let (bb, mut store) = build(cfg.clone(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let patches = random_mat(&mut rng, cfg.max_ctx_patches, cfg.patch_len);
    let before = bb.build_token_sequence(&patches, 1, 1, &store).unwrap();
    for v in store.values_mut(bb.ids.w_proj) {
        *v = rng.random_range(-5.0..5.0);
    }
    let after = bb.build_token_sequence(&patches, 1, 1, &store).unwrap();
    let r = cfg.register_index();
    assert_eq!(before.tokens.row(r), after.tokens.row(r));
    assert_ne!(before.tokens.row(r - 1), after.tokens.row(r - 1));
}

// ---------------------------------------------------------------------------
// rotary

#[test]
fn rope_fraction_yielding_no_rotation_is_rejected() {
    let cfg = BackboneConfig {
        rope_fraction: 0.0,
        ..BackboneConfig::default()
    };
    assert!(cfg.validate().is_err());
    let cfg = BackboneConfig {
        rope_fraction: 0.05, // round(0.8) = 1 rotated dim
        ..BackboneConfig::default()
    };
    assert!(cfg.validate().is_err());
}

proptest! {
    #[test]
    fn rope_position_zero_is_identity(v in prop::collection::vec(-10.0f64..10.0, 16)) {
        let cfg = BackboneConfig::default();
        prop_assert_eq!(p_rope(&v, 0, &cfg), v);
    }

    #[test]
    fn rope_tail_is_untouched(v in prop::collection::vec(-10.0f64..10.0, 16), pos in 0i64..10_000) {
        let cfg = BackboneConfig::default();
        let r = p_rope(&v, pos, &cfg);
        prop_assert_eq!(&r[cfg.rope_dims()..], &v[cfg.rope_dims()..]);
    }

    #[test]
    fn rope_inner_products_depend_on_offset_only(
        q in prop::collection::vec(-1.0f64..1.0, 16),
        k in prop::collection::vec(-1.0f64..1.0, 16),
        m in 0i64..512, n in 0i64..512, s in 0i64..512,
    ) {
        let cfg = BackboneConfig::default();
        let a = dot(&p_rope(&q, m, &cfg), &p_rope(&k, n, &cfg));
        let b = dot(&p_rope(&q, m + s, &cfg), &p_rope(&k, n + s, &cfg));
        prop_assert!((a - b).abs() < 1e-6);
    }
}

// ---------------------------------------------------------------------------
// attention

fn attention_fixture(n: usize, seed: u64) -> (Backbone, ParameterStore, Mat) {
    let cfg = BackboneConfig {
        d_model: 8,
        n_heads: 2,
        rope_fraction: 0.5,
        ..tiny_cfg()
    };
    let (bb, store) = build(cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let x = random_mat(&mut rng, n, 8);
    (bb, store, x)
}

#[test]
fn attention_matches_loop_reference() {
    let (bb, store, x) = attention_fixture(4, 7);
    let l = &bb.ids.layers[0];
    let positions: Vec<i64> = (0..4).collect();
    let (out, cache) = gated_attention(&x, &positions, &store, &l.attn, &bb.cfg, bb.rope(), 0).unwrap();
    let rows: Vec<Vec<f64>> = (0..4).map(|i| x.row(i).to_vec()).collect();
    let reference = ref_attention(&rows, &store, l, &bb.cfg, true);
    let reference = Mat::from_vec(4, 8, reference.concat());
    assert!(out.max_abs_diff(&reference) < 1e-6);
    for w in &cache.weights {
        for i in 0..w.rows {
            let r = w.row(i);
            assert!(r.iter().all(|&p| p >= 0.0));
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn saturated_gate_matches_ungated_attention() {
    let (bb, mut store, x) = attention_fixture(5, 8);
    let l = bb.ids.layers[0];
    store.values_mut(l.attn.wg).iter_mut().for_each(|w| *w = 0.0);
    store.values_mut(l.attn.bg).iter_mut().for_each(|b| *b = 20.0);
    let positions: Vec<i64> = (0..5).collect();
    let (out, _) = gated_attention(&x, &positions, &store, &l.attn, &bb.cfg, bb.rope(), 0).unwrap();
    let rows: Vec<Vec<f64>> = (0..5).map(|i| x.row(i).to_vec()).collect();
    let ungated = Mat::from_vec(5, 8, ref_attention(&rows, &store, &l, &bb.cfg, false).concat());
    assert!(out.max_abs_diff(&ungated) < 1e-6);
}

#[test]
fn single_token_attends_to_itself() {
    let (bb, store, x) = attention_fixture(1, 9);
    let l = &bb.ids.layers[0];
    let (_, cache) = gated_attention(&x, &[0], &store, &l.attn, &bb.cfg, bb.rope(), 0).unwrap();
    for w in &cache.weights {
        assert_eq!(w.data, vec![1.0]);
    }
}

#[test]
fn nan_scores_fail_with_location() {
    let (bb, store, mut x) = attention_fixture(3, 10);
    x.data[5] = f64::NAN;
    let l = &bb.ids.layers[0];
    match gated_attention(&x, &[0, 1, 2], &store, &l.attn, &bb.cfg, bb.rope(), 3) {
        Err(Error::Numeric(msg)) => assert!(msg.contains("layer 3, head 0"), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
}

// ---------------------------------------------------------------------------
// encoder

#[test]
fn zero_layer_encoder_is_identity() {
    let cfg = BackboneConfig {
        n_layers: 0,
        ..tiny_cfg()
    };
    let (bb, store) = build(cfg, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = random_mat(&mut rng, bb.cfg.n_tokens(), 8);
    let pos: Vec<i64> = (0..t.rows as i64).collect();
    let (out, _) = bb.encode(&t, &pos, &store, None).unwrap();
    assert_eq!(out, t);
}

#[test]
fn encoder_is_deterministic_in_eval_mode() {
    let cfg = BackboneConfig {
        dropout: 0.1,
        ..tiny_cfg()
    };
    let (bb, store) = build(cfg, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = random_mat(&mut rng, bb.cfg.n_tokens(), 8);
    let pos: Vec<i64> = (0..t.rows as i64).collect();
    let (a, _) = bb.encode(&t, &pos, &store, None).unwrap();
    let (b, _) = bb.encode(&t, &pos, &store, None).unwrap();
    assert_eq!(a.data, b.data);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(5);
    let (c, _) = bb.encode(&t, &pos, &store, Some(&mut drop_rng)).unwrap();
    assert_ne!(a.data, c.data);
}

#[test]
fn encoder_matches_straight_line_reference() {
    for layers in [1, 2] {
        let cfg = BackboneConfig {
            n_layers: layers,
            n_heads: 2,
            ..tiny_cfg()
        };
        let (bb, store) = build(cfg, 13 + layers as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_mat(&mut rng, bb.cfg.n_tokens(), 8);
        let pos: Vec<i64> = (0..t.rows as i64).collect();
        let (out, _) = bb.encode(&t, &pos, &store, None).unwrap();
        assert!(out.max_abs_diff(&ref_encoder(&t, &store, &bb)) < 1e-6);
    }
}

// ---------------------------------------------------------------------------
// head and losses

#[test]
fn head_shapes_and_bias_broadcast() {
    let cfg = BackboneConfig {
        patch_len: 16,
        quantiles: vec![0.1, 0.5, 0.9],
        ..tiny_cfg()
    };
    let (bb, mut store) = build(cfg, 20);
    let enc = Mat::from_fn(bb.cfg.n_tokens(), 8, |i, j| (i + j) as f64);
    let out = bb.quantile_head(&enc, 1, 0, &store).unwrap();
    assert_eq!((out.rows, out.cols), (16, 3));
    store.values_mut(bb.ids.head_w).iter_mut().for_each(|w| *w = 0.0);
    let out = bb.quantile_head(&enc, 2, 0, &store).unwrap();
    let bias = store.values(bb.ids.head_b);
    for p in 0..2 {
        for k in 0..bias.len() {
            assert_eq!(out.data[p * bias.len() + k], bias[k]);
        }
    }
    assert!(matches!(bb.quantile_head(&enc, 3, 0, &store), Err(Error::Horizon(_))));
}

#[test]
fn head_gradient_matches_finite_differences() {
    let (bb, store) = build(tiny_cfg(), 21);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let enc = random_mat(&mut rng, bb.cfg.n_tokens(), 8);
    let w = random_mat(&mut rng, 8, 3);
    let f = |s: &ParameterStore| dot(&bb.quantile_head(&enc, 2, 0, s).unwrap().data, &w.data);
    let mut grads = store.grad_buffer();
    bb.quantile_head_backward(&enc, 2, 0, &w, &store, &mut grads);
    for id in [bb.ids.head_w, bb.ids.head_b] {
        for k in 0..store.values(id).len() {
            let mut p = store.clone();
            p.values_mut(id)[k] += 1e-5;
            let mut m = store.clone();
            m.values_mut(id)[k] -= 1e-5;
            let fd = (f(&p) - f(&m)) / 2e-5;
            let a = grads.get(id)[k];
            assert!((fd - a).abs() <= 1e-4 * fd.abs().max(a.abs()).max(1e-8), "{fd} vs {a}");
        }
    }
}

#[test]
fn pinball_matches_two_branch_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for _ in 0..1000 {
        let h = rng.random_range(1..6);
        let quantiles = [0.1, 0.5, 0.9];
        let pred = random_mat(&mut rng, h, 3);
        let y: Vec<f64> = (0..h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut brute = 0.0;
        for t in 0..h {
            for (j, &q) in quantiles.iter().enumerate() {
                let u = y[t] - pred[(t, j)];
                brute += if u >= 0.0 { q * u } else { (q - 1.0) * u };
            }
        }
        brute /= (h * 3) as f64;
        assert_eq!(pinball_loss(&pred, &y, &quantiles), brute);
    }
}

// ---------------------------------------------------------------------------
// full pass

fn sine(len: usize, phase: f64) -> Vec<f64> {
    (0..len).map(|t| (t as f64 * 0.4 + phase).sin() * 3.0 + 10.0).collect()
}

#[test]
fn short_context_inference_masks_the_unused_prefix() {
    let (bb, store) = build(tiny_cfg(), 31);
    let w = SeriesWindow::from_slices(&sine(8, 0.0), &sine(12, 1.0)[8..], 0, 60);
    assert_eq!(bb.inference_mask(8), 2);
    let (f1, l1) = bb.utp_forward(&w, &store, None).unwrap();
    let (f2, l2) = bb.utp_forward(&w, &store, None).unwrap();
    assert_eq!(f1, f2);
    assert_eq!(l1, l2);
    assert_eq!((f1.values.rows, f1.values.cols), (4, 3));
    // leading padding does not matter: only the last 8 steps are visible
    let prepared = bb.prepare(&w.context, &w.target, 4, 0).unwrap();
    assert_eq!(prepared.l_mask, 2);
}

#[test]
fn every_admissible_context_length_yields_the_same_shape() {
    let cfg = tiny_cfg();
    let (bb, store) = build(cfg.clone(), 32);
    for p in cfg.min_ctx_patches..=cfg.max_ctx_patches {
        let ctx = sine(p * cfg.patch_len, 0.3);
        let f = bb.forecast(&ctx, cfg.max_horizon(), &store).unwrap();
        assert_eq!((f.values.rows, f.values.cols), (cfg.max_horizon(), 3));
        assert!(f.values.all_finite());
    }

    let cfg = BackboneConfig {
        min_ctx_patches: 2,
        ..cfg
    };
    let (bb, store) = build(cfg, 32);
    assert!(matches!(bb.forecast(&sine(4, 0.0), 4, &store), Err(Error::MaskBounds { .. })));
}

#[test]
fn teacher_forced_head_gives_zero_loss() {
    let cfg = tiny_cfg();
    let (bb, mut store) = build(cfg.clone(), 33);
    let ctx = sine(16, 0.0);
    let target = sine(20, 0.0)[16..].to_vec();
    let prepared = bb.prepare(&ctx, &target, 4, 0).unwrap();
    store.values_mut(bb.ids.head_w).iter_mut().for_each(|w| *w = 0.0);
    let b = store.values_mut(bb.ids.head_b);
    for t in 0..4 {
        for q in 0..3 {
            b[t * 3 + q] = prepared.target[t];
        }
    }
    let w = SeriesWindow::from_slices(&ctx, &target, 0, 1);
    let (f, loss) = bb.utp_forward(&w, &store, None).unwrap();
    assert!(loss.abs() < 1e-12);
    for (a, b) in f.median().iter().zip(&target) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn rolling_forecast_contract() {
    let cfg = tiny_cfg();
    let (bb, store) = build(cfg.clone(), 34);
    let ctx = sine(16, 0.2);
    let hmax = cfg.max_horizon();
    let single = bb.forecast(&ctx, hmax, &store).unwrap();
    assert_eq!(bb.rolling_forecast(&ctx, hmax, &store).unwrap(), single);
    assert_eq!(bb.rolling_forecast(&ctx, 3, &store).unwrap(), bb.forecast(&ctx, 3, &store).unwrap());

    let rolled = bb.rolling_forecast(&ctx, 2 * hmax, &store).unwrap();
    assert_eq!(rolled.horizon(), 2 * hmax);
    // manual two-step oracle
    let mut manual_ctx = ctx.clone();
    manual_ctx.extend(single.median());
    let manual_ctx = manual_ctx[manual_ctx.len() - cfg.max_context()..].to_vec();
    let second = bb.forecast(&manual_ctx, hmax, &store).unwrap();
    let mut expected = single.median();
    expected.extend(second.median());
    assert_eq!(rolled.median(), expected);
    assert!(matches!(bb.rolling_forecast(&ctx, 0, &store), Err(Error::Horizon(_))));
}

// ---------------------------------------------------------------------------
// gradient fidelity

fn loss_at(bb: &Backbone, store: &ParameterStore, ctx: &[f64], target: &[f64], l_mask: usize) -> f64 {
    let p = bb.prepare(ctx, target, target.len(), l_mask).unwrap();
    let tr = bb.forward_prepared(p, store, None).unwrap();
    pinball_loss(&tr.pred, &tr.prepared.target, &bb.cfg.quantiles)
}

#[test]
fn full_backbone_gradient_matches_central_differences() {
    let cfg = tiny_cfg();
    let mut checked = 0;
    let mut seed = 100;
    while checked < 20 {
        seed += 1;
        let (bb, store) = build(cfg.clone(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ctx: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
        let target: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let l_mask = rng.random_range(0..=3);
        let prepared = bb.prepare(&ctx, &target, 4, l_mask).unwrap();
        let trace = bb.forward_prepared(prepared, &store, None).unwrap();
        // keep residuals away from the pinball kink
        let margin = (0..4)
            .flat_map(|t| (0..3).map(move |q| (t, q)))
            .map(|(t, q)| (trace.prepared.target[t] - trace.pred[(t, q)]).abs())
            .fold(f64::MAX, f64::min);
        if margin < 1e-2 {
            continue;
        }
        let (_, d_pred) = bb.loss(LossKind::Pinball, &trace.pred, &trace.prepared.target);
        let mut grads = store.grad_buffer();
        bb.backward(&trace, &d_pred, &store, &mut grads);
        for (idx, e) in store.entries().iter().enumerate() {
            for k in 0..e.values.len() {
                let mut p = store.clone();
                p.entries_mut()[idx].values[k] += 1e-4;
                let mut m = store.clone();
                m.entries_mut()[idx].values[k] -= 1e-4;
                let fd = (loss_at(&bb, &p, &ctx, &target, l_mask) - loss_at(&bb, &m, &ctx, &target, l_mask)) / 2e-4;
                let a = grads.0[idx][k];
                let scale = fd.abs().max(a.abs());
                if scale > 1e-7 {
                    assert!((fd - a).abs() / scale < 1e-3, "{}[{k}]: fd {fd} analytic {a}", e.name);
                }
            }
        }
        checked += 1;
    }
}
