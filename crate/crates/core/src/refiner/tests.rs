use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::gradcheck::{check_inputs, check_params, DEFAULT_STEP};

fn small_config() -> RefinerConfig {
    RefinerConfig {
        in_channels: 3,
        out_bands: 1,
        height: 16,
        width: 16,
        encoder_widths: (4, 6),
        patch: 2,
        token_dim: 8,
        depth: 1,
        heads: 2,
        experts: 3,
        top_k: 2,
        expert_hidden: 5,
        ..RefinerConfig::default()
    }
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn randomize(store: &mut ParamStore, prefix: &str, rng: &mut ChaCha8Rng, scale: f64) {
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).starts_with(prefix) {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
        }
    }
}

fn moe_of(net: &RefinerNet) -> &MoeIds {
    match &net.blocks[0].ffn {
        BlockFfn::Moe(m) => m,
        BlockFfn::Dense(_) => panic!("dense block"),
    }
}

#[test]
fn config_checks() {
    RefinerConfig::default().validate().unwrap();
    assert_eq!(RefinerConfig::default().tokens(), 4);
    assert!(RefinerConfig { top_k: 5, ..RefinerConfig::default() }.validate().is_err());
    assert!(RefinerConfig { heads: 3, ..RefinerConfig::default() }.validate().is_err());
    assert!(RefinerConfig { patch: 3, ..RefinerConfig::default() }.validate().is_err());
}

#[test]
fn matched_dense_width_is_within_ten_percent() {
    let moe = RefinerConfig::default();
    let dense = RefinerConfig { ffn: FfnKind::Dense { hidden: moe.matched_dense_hidden() }, ..moe.clone() };
    let (a, b) = (RefinerNet::new(moe, 0).unwrap().param_count(), RefinerNet::new(dense, 0).unwrap().param_count());
    let ffn_moe = RefinerConfig::default().moe_params_per_block();
    let k = 64;
    let h = RefinerConfig::default().matched_dense_hidden();
    let ffn_dense = 2 * k * h + h + k;
    assert!((ffn_dense as f64 / ffn_moe as f64 - 1.0).abs() < 0.1);
    assert!((a as f64 / b as f64 - 1.0).abs() < 0.1);
}

#[test]
fn patch_embedding() {
    let net = RefinerNet::new(RefinerConfig { height: 32, width: 32, patch: 4, ..small_config() }, 1).unwrap();
    let mut store = net.params().clone();
    store.get_mut(net.pos).data_mut().fill(0.0);
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros([6, 8, 8]));
    let t = net.patch_embed(&mut g, &store, x).unwrap();
    assert_eq!(g.shape(t), &[4, 8]);
    assert!(g.value(t).data().iter().all(|&v| v == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let feats = random_tensor(&[6, 8, 8], &mut rng);
    let ids = [(net.embed.0, 0), (net.embed.0, 57), (net.embed.0, 700), (net.embed.1, 3)];
    let report = check_params(net.params(), Some(&ids), DEFAULT_STEP, |g, s| {
        let x = g.constant(feats.clone());
        let t = net.patch_embed(g, s, x)?;
        let sq = g.mul(t, t)?;
        Ok(g.sum(sq))
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn attention_single_token_returns_its_value() {
    let net = RefinerNet::new(small_config(), 3).unwrap();
    let a = &net.blocks[0].attn;
    let s = net.params();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = random_tensor(&[1, 8], &mut rng);
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let out = a.forward(&mut g, s, zv).unwrap();
    let (wv, bv, wo, bo) = (s.get(a.wv).data(), s.get(a.bv).data(), s.get(a.wo).data(), s.get(a.bo).data());
    let v: Vec<f64> = (0..8).map(|o| bv[o] + (0..8).map(|i| z.data()[i] * wv[i * 8 + o]).sum::<f64>()).collect();
    let expected: Vec<f64> = (0..8).map(|o| bo[o] + (0..8).map(|i| v[i] * wo[i * 8 + o]).sum::<f64>()).collect();
    for (a, b) in g.value(out).data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_matches_reference_and_symmetry() {
    let net = RefinerNet::new(small_config(), 4).unwrap();
    let a = &net.blocks[0].attn;
    let s = net.params();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z = random_tensor(&[3, 8], &mut rng);
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let out = a.forward(&mut g, s, zv).unwrap();
    let rows: Vec<Vec<f64>> = z.data().chunks(8).map(<[f64]>::to_vec).collect();
    let w = [s.get(a.wq).data(), s.get(a.wk).data(), s.get(a.wv).data(), s.get(a.wo).data()];
    let b = [s.get(a.bq).data(), s.get(a.bk).data(), s.get(a.bv).data(), s.get(a.bo).data()];
    let reference = attention_reference(&rows, 2, w, b);
    for (x, y) in g.value(out).data().iter().zip(reference.iter().flatten()) {
        assert!((x - y).abs() < 1e-10);
    }

    let mut twin = z.data()[..8].to_vec();
    twin.extend_from_slice(&z.data()[..8]);
    let mut g = Graph::new();
    let zv = g.constant(Tensor::new([2, 8], twin).unwrap());
    let out = a.forward(&mut g, s, zv).unwrap();
    let d = g.value(out).data();
    assert_eq!(&d[..8], &d[8..]);
}

#[test]
fn moe_examples() {
    let routed = route(&[2.0, 1.0, 0.0, -1.0], 2);
    let e = std::f64::consts::E;
    assert_eq!(routed.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 1]);
    assert!((routed[0].1 - e / (e + 1.0)).abs() < 1e-12);
    assert!((routed[1].1 - 1.0 / (e + 1.0)).abs() < 1e-12);
    assert!((routed[0].1 - 0.7311).abs() < 1e-4 && (routed[1].1 - 0.2689).abs() < 1e-4);
    assert_eq!(top_k(&[0.25, 0.25, 0.5], 2), vec![2, 0]);
}

#[test]
fn moe_full_selection_is_dense_mixture() {
    let cfg = RefinerConfig { top_k: 3, ..small_config() };
    let net = RefinerNet::new(cfg, 5).unwrap();
    let m = moe_of(&net);
    let s = net.params();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z = random_tensor(&[4, 8], &mut rng);
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let out = m.forward(&mut g, s, zv).unwrap();
    for (t, row) in z.data().chunks(8).enumerate() {
        let rw = s.get(m.router_w).data();
        let mut p: Vec<f64> = (0..3).map(|e| s.get(m.router_b).data()[e] + (0..8).map(|i| row[i] * rw[i * 3 + e]).sum::<f64>()).collect();
        crate::tensor::softmax_row(&mut p);
        let mut dense = vec![0.0; 8];
        for e in 0..3 {
            for (d, y) in dense.iter_mut().zip(m.experts[e].eval_row(s, row)) {
                *d += p[e] * y;
            }
        }
        for (a, b) in g.value(out.out).data()[t * 8..(t + 1) * 8].iter().zip(&dense) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn identical_experts_ignore_routing() {
    let net = RefinerNet::new(small_config(), 6).unwrap();
    let m = moe_of(&net).clone();
    let mut s = net.params().clone();
    for e in 1..3 {
        for (src, dst) in [(m.experts[0].w1, m.experts[e].w1), (m.experts[0].b1, m.experts[e].b1), (m.experts[0].w2, m.experts[e].w2), (m.experts[0].b2, m.experts[e].b2)] {
            let v = s.get(src).clone();
            *s.get_mut(dst) = v;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    randomize(&mut s, "block0.moe.router", &mut rng, 2.0);
    let z = random_tensor(&[4, 8], &mut rng);
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let out = m.forward(&mut g, &s, zv).unwrap();
    for (t, row) in z.data().chunks(8).enumerate() {
        let single = m.experts[0].eval_row(&s, row);
        for (a, b) in g.value(out.out).data()[t * 8..(t + 1) * 8].iter().zip(&single) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn moe_graph_matches_tape_free_rows() {
    let net = RefinerNet::new(small_config(), 7).unwrap();
    let m = moe_of(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let z = random_tensor(&[4, 8], &mut rng);
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let out = m.forward(&mut g, net.params(), zv).unwrap();
    for (t, row) in z.data().chunks(8).enumerate() {
        for (a, b) in g.value(out.out).data()[t * 8..(t + 1) * 8].iter().zip(m.eval_row(net.params(), row)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    assert_eq!(out.stats.counts.iter().sum::<usize>(), 8);
}

#[test]
fn zero_block_is_identity() {
    let net = RefinerNet::new(small_config(), 8).unwrap();
    let mut s = net.params().clone();
    for id in s.ids().collect::<Vec<_>>() {
        if s.name(id).starts_with("block0.") {
            s.get_mut(id).data_mut().fill(0.0);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let z = random_tensor(&[4, 8], &mut rng);
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let out = net.block_forward(&mut g, &s, 0, zv).unwrap();
    assert_eq!(g.value(out.out), &z);
}

#[test]
fn block_gradients_and_equivariance() {
    let cfg = RefinerConfig { positional: false, ..small_config() };
    let net = RefinerNet::new(cfg, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut s = net.params().clone();
    randomize(&mut s, "block0.ln", &mut rng, 1.0);
    let z = random_tensor(&[4, 8], &mut rng);
    let report = check_inputs(&[z.clone()], DEFAULT_STEP, |g, v| {
        let out = net.block_forward(g, &s, 0, v[0])?.out;
        let sq = g.mul(out, out)?;
        Ok(g.sum(sq))
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
    let block_ids: Vec<(ParamId, usize)> = s
        .ids()
        .filter(|&id| s.name(id).starts_with("block0."))
        .flat_map(|id| (0..s.get(id).numel()).step_by(7).map(move |e| (id, e)))
        .collect();
    let report = check_params(&s, Some(&block_ids), DEFAULT_STEP, |g, st| {
        let zv = g.constant(z.clone());
        let out = net.block_forward(g, st, 0, zv)?.out;
        let sq = g.mul(out, out)?;
        Ok(g.sum(sq))
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");

    let perm = [2usize, 0, 3, 1];
    let zp = Tensor::new([4, 8], perm.iter().flat_map(|&r| z.data()[r * 8..(r + 1) * 8].to_vec()).collect()).unwrap();
    let run = |t: &Tensor| {
        let mut g = Graph::new();
        let v = g.constant(t.clone());
        let o = net.block_forward(&mut g, &s, 0, v).unwrap().out;
        g.value(o).data().to_vec()
    };
    let (a, b) = (run(&z), run(&zp));
    for (i, &r) in perm.iter().enumerate() {
        for c in 0..8 {
            assert!((b[i * 8 + c] - a[r * 8 + c]).abs() < 1e-12);
        }
    }
}

fn small_prior(rng: &mut ChaCha8Rng) -> (PriorTensor, Radiomap) {
    use crate::priors::assemble_prior_tensor;
    use crate::scene::{generate_scene, sample_observations, simulate_radiomap, PropagationParams, SceneSpec};
    let spec = SceneSpec { height: 16, width: 16, frequencies_hz: vec![2.4e9], ..SceneSpec::default() };
    let scene = generate_scene(&spec, rng.random()).unwrap();
    let truth = simulate_radiomap(&scene, &PropagationParams::default()).unwrap();
    let obs = sample_observations(&truth, 0.05, 1).unwrap();
    let depth = crate::priors::depth_map(&scene, 150).unwrap();
    let coarse = Radiomap::from_clamped(16, 16, 1, truth.values().iter().map(|v| v * 0.8 + 0.05).collect()).unwrap();
    (assemble_prior_tensor(&coarse, &obs, &scene, &depth).unwrap(), coarse)
}

#[test]
fn zero_head_returns_the_base_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (prior, coarse) = small_prior(&mut rng);
    let cfg = RefinerConfig { in_channels: 6, ..small_config() };
    let net = RefinerNet::new(cfg, 10).unwrap();
    assert_eq!(refine(&net, &prior, &coarse).unwrap(), coarse);
    let mut net = net;
    randomize(net.params_mut(), "head", &mut rng, 3.0);
    let out = refine(&net, &prior, &coarse).unwrap();
    assert_ne!(out, coarse);
    assert!(out.values().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn full_forward_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (prior, _) = small_prior(&mut rng);
    let cfg = RefinerConfig { in_channels: 6, ..small_config() };
    let mut net = RefinerNet::new(cfg, 11).unwrap();
    randomize(net.params_mut(), "head", &mut rng, 0.5);
    let input = prior.to_tensor();
    let store = net.params().clone();
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let pass = net.forward(&mut g, x).unwrap();
    let sq = g.mul(pass.residual, pass.residual).unwrap();
    let loss = g.sum(sq);
    let mut grads = store.clone();
    grads.zero_grad();
    g.backward(loss).unwrap();
    g.accumulate_into(&mut grads);
    assert!(grads.grads_finite());
    for id in grads.ids() {
        assert!(grads.grad(id).iter().any(|&v| v != 0.0) || grads.name(id).contains("expert"), "{} has no gradient", grads.name(id));
    }
    let ids: Vec<ParamId> = store.ids().collect();
    let picks: Vec<(ParamId, usize)> = (0..20)
        .map(|_| {
            let id = ids[rng.random_range(0..ids.len())];
            (id, rng.random_range(0..store.get(id).numel()))
        })
        .collect();
    let report = check_params(&store, Some(&picks), DEFAULT_STEP, |g, s| {
        let x = g.constant(input.clone());
        let pass = net.forward_with(g, s, x)?;
        let sq = g.mul(pass.residual, pass.residual)?;
        let mut l = g.sum(sq);
        if let Some(a) = pass.aux {
            l = g.add(l, a)?;
        }
        Ok(l)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

#[test]
fn single_expert_balance_term_is_constant() {
    let cfg = RefinerConfig { experts: 1, top_k: 1, ..small_config() };
    let net = RefinerNet::new(cfg, 12).unwrap();
    let m = moe_of(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let z = random_tensor(&[4, 8], &mut rng);
    let mut g = Graph::new();
    let zv = g.leaf(z);
    let out = m.forward(&mut g, net.params(), zv).unwrap();
    assert!((g.value(out.aux).data()[0] - 1.0).abs() < 1e-12);
    g.backward(out.aux).unwrap();
    let mut s = net.params().clone();
    s.zero_grad();
    g.accumulate_into(&mut s);
    assert!(s.grad(m.router_w).iter().all(|&v| v.abs() < 1e-15));
    assert!(g.grad(zv).unwrap().iter().all(|&v| v.abs() < 1e-15));
}

#[test]
fn training_reduces_loss_and_logs_routing() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let samples: Vec<RefinerSample> = (0..3)
        .map(|_| {
            let (prior, coarse) = small_prior(&mut rng);
            let p = prior.disassemble().unwrap();
            let truth_vals: Vec<f64> = p.coarse[0].iter().map(|c| ((c - 0.05) / 0.8).clamp(0.0, 1.0)).collect();
            let truth = Radiomap::from_clamped(16, 16, 1, truth_vals).unwrap();
            RefinerSample::new(&prior, &coarse, &truth).unwrap()
        })
        .collect();
    let cfg = RefinerConfig { in_channels: 6, ..small_config() };
    let net = RefinerNet::new(cfg, 13).unwrap();
    let before = evaluate_refiner(&net, &samples).unwrap();
    let tc = RefinerTrainConfig { epochs: 10, lr: 3e-3, balance_coef: 0.01, seed: 1 };
    let trained = train_refiner(net, &samples, &samples, &tc).unwrap();
    assert_eq!(trained.logs.len(), 10);
    assert!(trained.logs[9].train_loss < trained.logs[0].train_loss);
    assert!(evaluate_refiner(&trained.net, &samples).unwrap() < before);
    let mut csv = Vec::new();
    write_routing_csv(&mut csv, &trained.logs).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 10 * 3);
    let fractions: f64 = trained.logs[0].routing[0].token_fraction().iter().sum();
    assert!((fractions - 1.0).abs() < 1e-12);
}

#[test]
fn checkpoint_round_trip() {
    let cfg = RefinerConfig { ffn: FfnKind::Dense { hidden: 7 }, ..small_config() };
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut net = RefinerNet::new(cfg, 14).unwrap();
    randomize(net.params_mut(), "head", &mut rng, 1.0);
    let bytes = net.to_checkpoint().to_bytes().unwrap();
    let back = RefinerNet::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.config(), net.config());
    for id in net.params().ids() {
        assert_eq!(back.params().get(id), net.params().get(id));
    }
}
