use kron_attn::attention::AttentionKind;
use kron_attn::nn::{build_network, count_params, ArchSpec, LayerKind, Mode};
use kron_attn::profiler::audit_network;
use kron_attn::rng::{normal_tensor, seeded};
use kron_attn::Error;

#[test]
fn kanet_shape_chain() {
    let arch = ArchSpec::kanet(AttentionKind::KaoKv);
    let chain = arch.spatial_chain().unwrap();
    let mut distinct = chain.clone();
    distinct.dedup();
    assert_eq!(distinct, vec![224, 112, 56, 28, 14, 7]);
    assert_eq!(*chain.last().unwrap(), 7);

    let net = build_network(&arch, 0).unwrap();
    assert_eq!(net.modules().count(), 17);
    let attn_layers = net.layers().iter().filter(|l| matches!(l.kind, LayerKind::Attention(_))).count();
    assert_eq!(attn_layers, 10);
}

#[test]
fn stem_and_head_parameters() {
    let net = build_network(&ArchSpec::kanet(AttentionKind::KaoQkv), 0).unwrap();
    let layers = net.layers();
    // 3x3x3x32 weights without bias, then 32 scales and 32 shifts
    assert_eq!(layers[0].params + layers[1].params, 864 + 64);
    let fc = layers.iter().find(|l| l.kind == LayerKind::FullyConnected).unwrap();
    assert_eq!(fc.params, 1280 * 1000 + 1000);
    let tally = count_params(&net);
    assert_eq!(tally.total, layers.iter().map(|l| l.params).sum::<usize>());
    assert_eq!(tally.total, net.flat_params().len());
}

#[test]
fn attention_kind_does_not_change_parameters() {
    let counts: Vec<u64> = AttentionKind::ALL
        .iter()
        .map(|&k| audit_network(&ArchSpec::kanet(k)).unwrap().params)
        .collect();
    assert!(counts.windows(2).all(|w| w[0] == w[1]), "{counts:?}");
    let madd: Vec<u64> = AttentionKind::ALL
        .iter()
        .map(|&k| audit_network(&ArchSpec::kanet(k)).unwrap().madd)
        .collect();
    // regular > pooled > kv > qkv
    assert!(madd.windows(2).all(|w| w[0] > w[1]), "{madd:?}");
}

#[test]
fn full_resolution_forward_is_finite() {
    for kind in [AttentionKind::KaoKv, AttentionKind::KaoQkv] {
        let net = build_network(&ArchSpec::kanet(kind).with_classes(10), 3).unwrap();
        let x = normal_tensor(&mut seeded(4), 224, 224, 3);
        let logits = net.predict(&x).unwrap();
        assert_eq!(logits.len(), 10);
        assert!(logits.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn train_mode_forward_backward_on_toy_network() {
    let mut net = build_network(&ArchSpec::toy_kanet(AttentionKind::KaoKv, 4), 0).unwrap();
    let xs: Vec<_> = (0..3).map(|i| normal_tensor(&mut seeded(i), 16, 16, 3)).collect();
    let (logits, cache) = net.forward(&xs, Mode::Train).unwrap();
    assert_eq!(logits.len(), 3);
    let ones = vec![vec![1.0; 4]; 3];
    net.zero_grad();
    let dx = net.backward(&cache, &ones).unwrap();
    assert_eq!(dx.len(), 3);
    assert_eq!(dx[0].shape(), (16, 16, 3));
    assert!(net.flat_grads().iter().any(|g| *g != 0.0));
}

#[test]
fn broken_chain_is_reported_with_its_stage() {
    let text = "input | operator | r | c | n | s\n\
                32²×3 | Conv2D 3×3 | - | 8 | 1 | 2\n\
                16²×8 | BaseSkipModule | 2 | 8 | 1 | 1\n\
                16²×12 | AttnSkipModule | 2 | 12 | 1 | 1\n\
                16²×12 | AvgPool + FC | - | k | 1 | -\n";
    let arch = ArchSpec::parse("broken", text).unwrap();
    match arch.validate() {
        Err(Error::Validation { stage, .. }) => assert_eq!(stage, 3),
        other => panic!("expected a validation error, got {other:?}"),
    }
    assert!(build_network(&arch, 0).is_err());

    let no_head = "input | operator | r | c | n | s\n8²×3 | Conv2D 3×3 | - | 8 | 1 | 2\n";
    assert!(ArchSpec::parse("no_head", no_head).unwrap().validate().is_err());
}

#[test]
fn bundled_tables_round_trip_through_files() {
    let dir = std::env::temp_dir().join(format!("kron-attn-net-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("kanet.arch");
    std::fs::write(&path, kron_attn::nn::arch::KANET_ARCH).unwrap();
    let from_file = ArchSpec::from_path(&path).unwrap();
    assert_eq!(from_file.stages, ArchSpec::kanet(AttentionKind::KaoKv).stages);
    std::fs::remove_dir_all(&dir).unwrap();
}
