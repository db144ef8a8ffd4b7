use waveseg::decoder::{DecoderConfig, SdaMode, WaveSeg};
use waveseg::gradcheck::grad_check_sampled;
use waveseg::optim::{AdamW, AdamWConfig};
use waveseg::params::Bound;
use waveseg::rng::SeededRng;
use waveseg::ssm::VssmConfig;
use waveseg::{Tape, Tensor};

fn small_cfg() -> DecoderConfig {
    DecoderConfig {
        c_dec: 8,
        encoder_channels: [4, 8, 8, 12],
        vssm: VssmConfig {
            state: 4,
            ..Default::default()
        },
        ffn_expansion: 2,
        ..Default::default()
    }
}

fn image(seed: u64, b: usize, s: usize) -> Tensor {
    SeededRng::new(seed).uniform_tensor(&[b, 3, s, s], 0.0, 1.0)
}

#[test]
fn encoder_stride_contract() {
    let (m, store) = WaveSeg::new(DecoderConfig::default(), 1).unwrap();
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let pyr = m.encode(&p, tape.constant(image(2, 1, 64))).unwrap();
    assert_eq!(pyr.f1.shape(), [1, 16, 32, 32]);
    assert_eq!(pyr.f2.shape(), [1, 32, 16, 16]);
    assert_eq!(pyr.f3.shape(), [1, 64, 8, 8]);
    assert_eq!(pyr.f4.shape(), [1, 96, 4, 4]);
}

#[test]
fn encoder_rejects_indivisible_extent() {
    let (m, store) = WaveSeg::new(small_cfg(), 1).unwrap();
    assert!(matches!(
        m.infer(&store, &image(1, 1, 40)),
        Err(waveseg::Error::Dimension(_))
    ));
}

#[test]
fn encoder_gradient_reaches_first_stage() {
    let (m, store) = WaveSeg::new(small_cfg(), 3).unwrap();
    let tape = Tape::new();
    let p = store.bind(&tape);
    let pyr = m.encode(&p, tape.constant(image(4, 1, 32))).unwrap();
    let loss = pyr.f4.mul(pyr.f4).unwrap().sum().unwrap();
    let g = tape.backward(loss).unwrap();
    let w = p.get(m.encoder.stages[0].0);
    assert!(g.get(w).unwrap().sq_norm() > 0.0);
}

#[test]
fn full_pipeline_shape_and_determinism() {
    let (m, store) = WaveSeg::new(DecoderConfig::default(), 5).unwrap();
    let x = image(6, 2, 64);
    let a = m.infer(&store, &x).unwrap();
    assert_eq!(a.shape(), [2, 4, 64, 64]);
    let (m2, store2) = WaveSeg::new(DecoderConfig::default(), 5).unwrap();
    assert_eq!(a.checksum(), m2.infer(&store2, &x).unwrap().checksum());
}

#[test]
fn alignment_contract_and_zeroed_attention() {
    let (m, mut store) = WaveSeg::new(small_cfg(), 7).unwrap();
    m.sda_l2.make_identity(&mut store).unwrap();
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let pyr = m.encode(&p, tape.constant(image(8, 1, 32))).unwrap();
    let f = m.project_and_align(&p, &pyr).unwrap();
    for v in [f.f2, f.f3, f.f4] {
        assert_eq!(v.shape(), [1, 8, 4, 4]);
    }
    let pooled = m.proj2.weight;
    let l2 = pyr
        .f2
        .conv2d(
            p.get(pooled),
            Some(p.get(m.proj2.bias)),
            waveseg::ops::ConvSpec::same(1, 1),
        )
        .unwrap()
        .avg_pool2()
        .unwrap();
    assert_eq!(f.f2.value(), l2.value());
}

#[test]
fn aggregate_contract_slot_sensitivity_and_zero() {
    let cfg = DecoderConfig {
        c_dec: 32,
        ..small_cfg()
    };
    let (m, mut store) = WaveSeg::new(cfg, 9).unwrap();
    let mut rng = SeededRng::new(10);
    let parts: Vec<Tensor> = (0..3)
        .map(|_| rng.uniform_tensor(&[1, 32, 8, 8], -1.0, 1.0))
        .collect();
    let run = |store: &waveseg::params::ParamStore, order: [usize; 3]| {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let f = waveseg::decoder::Aligned {
            f2: tape.constant(parts[order[0]].clone()),
            f3: tape.constant(parts[order[1]].clone()),
            f4: tape.constant(parts[order[2]].clone()),
        };
        m.aggregate(&p, &f).unwrap().value()
    };
    let a = run(&store, [0, 1, 2]);
    assert_eq!(a.shape(), [1, 32, 4, 4]);
    assert!(a.max_abs_diff(&run(&store, [1, 0, 2])) > 1e-6);
    for c in [&m.agg_conv, &m.agg_fuse] {
        let n = store.get(c.bias).numel();
        store.set(c.bias, Tensor::zeros(&[n])).unwrap();
    }
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let z = tape.constant(Tensor::zeros(&[1, 32, 8, 8]));
    let out = m
        .aggregate(
            &p,
            &waveseg::decoder::Aligned {
                f2: z,
                f3: z,
                f4: z,
            },
        )
        .unwrap();
    assert!(out.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn refinement_adds_one_shared_branch() {
    let (m, mut store) = WaveSeg::new(small_cfg(), 11).unwrap();
    let mut rng = SeededRng::new(12);
    let levels: Vec<Tensor> = (0..3)
        .map(|_| rng.uniform_tensor(&[1, 8, 4, 4], -1.0, 1.0))
        .collect();
    let con = rng.uniform_tensor(&[1, 8, 2, 2], -1.0, 1.0);
    let run = |store: &waveseg::params::ParamStore, con: &Tensor| {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let f = waveseg::decoder::Aligned {
            f2: tape.constant(levels[0].clone()),
            f3: tape.constant(levels[1].clone()),
            f4: tape.constant(levels[2].clone()),
        };
        let (fa, out) = m.refine(&p, tape.constant(con.clone()), &f).unwrap();
        (fa.value(), [out.f2.value(), out.f3.value(), out.f4.value()])
    };
    let (fa, out) = run(&store, &con);
    assert_eq!(fa.shape(), [1, 8, 4, 4]);
    let bumped = con.map(|v| v + 0.1);
    let (_, out2) = run(&store, &bumped);
    let deltas: Vec<Tensor> = (0..3)
        .map(|i| out2[i].zip_map(&out[i], |a, b| a - b).unwrap())
        .collect();
    assert!(deltas[0].sq_norm() > 0.0);
    assert!(
        deltas[0].max_abs_diff(&deltas[1]) < 1e-12 && deltas[0].max_abs_diff(&deltas[2]) < 1e-12
    );
    store
        .set(m.refine_conv.weight, Tensor::zeros(&[8, 8, 3, 3]))
        .unwrap();
    store.set(m.refine_conv.bias, Tensor::zeros(&[8])).unwrap();
    let (_, out) = run(&store, &con);
    for i in 0..3 {
        assert_eq!(out[i], levels[i]);
    }
}

#[test]
fn head_bias_plane() {
    let cfg = DecoderConfig {
        num_classes: 1,
        ..small_cfg()
    };
    let (m, mut store) = WaveSeg::new(cfg, 13).unwrap();
    store
        .set(m.head_cls.weight, Tensor::zeros(&[1, 8, 1, 1]))
        .unwrap();
    store
        .set(m.head_cls.bias, Tensor::full(&[1], 0.75))
        .unwrap();
    let out = m.infer(&store, &image(14, 1, 32)).unwrap();
    assert_eq!(out.shape(), [1, 1, 32, 32]);
    assert!(out.data().iter().all(|&v| (v - 0.75).abs() < 1e-15));
}

#[test]
fn every_parameter_receives_gradient() {
    for sda in [SdaMode::On, SdaMode::Conv] {
        let cfg = DecoderConfig { sda, ..small_cfg() };
        let (m, store) = WaveSeg::new(cfg, 15).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let labels: Vec<u8> = (0..2 * 32 * 32).map(|i| (i % 7 % 4) as u8).collect();
        let loss = m
            .forward(&p, tape.constant(image(16, 2, 32)))
            .unwrap()
            .cross_entropy(&labels)
            .unwrap();
        assert!(loss.value().data()[0].is_finite());
        let g = tape.backward(loss).unwrap();
        for (id, v) in p.vars() {
            let n = g.get(v).unwrap().sq_norm();
            assert!(n > 0.0, "{} has no gradient", store.name(id));
        }
    }
}

#[test]
fn disabled_prior_receives_no_gradient() {
    let (m, store) = WaveSeg::new(small_cfg(), 17).unwrap();
    let mut off = m.clone();
    off.hpg = None;
    let tape = Tape::new();
    let p = store.bind(&tape);
    let y = off
        .forward(&p, tape.constant(image(18, 1, 32)))
        .unwrap()
        .sum()
        .unwrap();
    let g = tape.backward(y).unwrap();
    for (id, v) in p.vars() {
        let name = store.name(id);
        assert_eq!(g.reached(v), !name.starts_with("hpg."), "{name}");
    }
}

#[test]
fn parameter_count_directions() {
    let count = |hpg: bool, sda: SdaMode| {
        WaveSeg::new(
            DecoderConfig {
                hpg,
                sda,
                ..Default::default()
            },
            1,
        )
        .unwrap()
        .1
        .count()
    };
    let full = count(true, SdaMode::On);
    let no_hpg = count(false, SdaMode::On);
    let no_sda = count(true, SdaMode::Off);
    assert!(no_hpg < full);
    assert!(((full - no_hpg) as f64) / (no_hpg as f64) < 0.005);
    assert!(full - no_sda > full - no_hpg);
}

#[test]
fn end_to_end_grad_check() {
    let (m, store) = WaveSeg::new(small_cfg(), 19).unwrap();
    let mut inputs = vec![image(20, 1, 32)];
    inputs.extend(store.values());
    let w = SeededRng::new(21).uniform_tensor(&[1, 4, 32, 32], -1.0, 1.0);
    let err = grad_check_sampled(
        |tape, vs| {
            let p = Bound::from_vars(tape, vs[1..].to_vec());
            m.forward(&p, vs[0])?.mul(tape.constant(w.clone()))?.sum()
        },
        &inputs,
        1e-4,
        3,
        22,
    )
    .unwrap();
    assert!(err <= 1e-3, "{err}");
}

#[test]
fn overfits_one_batch() {
    let (m, mut store) = WaveSeg::new(small_cfg(), 23).unwrap();
    let x = image(24, 2, 32);
    let labels: Vec<u8> = (0..2 * 32 * 32)
        .map(|i| {
            let (r, c) = ((i / 32) % 32, i % 32);
            ((r / 16) * 2 + c / 16) as u8
        })
        .collect();
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: 3e-3,
            ..Default::default()
        },
        &store,
    );
    let mut first = None;
    let mut last = 0.0;
    for _ in 0..200 {
        let tape = Tape::new();
        let p = store.bind(&tape);
        let loss = m
            .forward(&p, tape.constant(x.clone()))
            .unwrap()
            .cross_entropy(&labels)
            .unwrap();
        last = loss.value().data()[0];
        first.get_or_insert(last);
        let g = tape.backward(loss).unwrap();
        opt.step(&mut store, &p, &g);
    }
    assert!(last <= 0.5 * first.unwrap(), "{} -> {last}", first.unwrap());
}

#[test]
fn merged_export_reproduces_logits() {
    let (m, store) = WaveSeg::new(small_cfg(), 25).unwrap();
    let x = image(26, 2, 32);
    let before = m.infer(&store, &x).unwrap();
    let (merged, mstore) = m.export_merged(&store).unwrap();
    assert!(mstore.count() < store.count());
    let dir = std::env::temp_dir().join(format!("waveseg-export-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.wseg");
    merged.save(&mstore, &path).unwrap();
    let (loaded, lstore) = WaveSeg::load(&path).unwrap();
    assert!(loaded.cfg.merged);
    let after = loaded.infer(&lstore, &x).unwrap();
    assert!(
        after.max_rel_diff(&before) <= 1e-10,
        "{}",
        after.max_rel_diff(&before)
    );
    std::fs::remove_dir_all(&dir).ok();
}
