mod common;

use kron_attn::attention::AttentionKind;
use kron_attn::nn::{forward_module, ConvUnit, Module, ModuleKind, ModuleSpec};
use kron_attn::rng::{seeded, uniform_tensor, SeededRng};
use rand::Rng;

const KINDS: [ModuleKind; 4] = [ModuleKind::Base, ModuleKind::BaseSkip, ModuleKind::Attn, ModuleKind::AttnSkip];

fn perturb(unit: &mut ConvUnit, rng: &mut SeededRng) {
    let bn = &mut unit.bn;
    for v in bn.gamma.value.iter_mut() {
        *v = rng.random_range(0.5..1.5);
    }
    for v in bn.beta.value.iter_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    bn.running_mean = (0..bn.c).map(|_| rng.random_range(-0.3..0.3)).collect();
    bn.running_var = (0..bn.c).map(|_| rng.random_range(0.5..2.0)).collect();
}

fn random_module(rng: &mut SeededRng, spec: ModuleSpec) -> Module {
    let mut m = Module::new(rng, spec);
    for unit in [m.expand.as_mut(), m.depthwise.as_mut(), Some(&mut m.project)].into_iter().flatten() {
        perturb(unit, rng);
    }
    m
}

#[test]
fn modules_match_reference_composition() {
    let mut rng = seeded(11);
    let mut cases = 0;
    for kind in KINDS {
        for attention in AttentionKind::ALL {
            if !kind.has_attention() && attention != AttentionKind::KaoKv {
                continue;
            }
            for r in [1, 2, 3] {
                for s in [1, 2] {
                    for c_out in [3, 5] {
                        let Ok(spec) = ModuleSpec::new(kind, r, 3, c_out, s, attention) else {
                            assert!(kind.has_attention() && r == 1);
                            continue;
                        };
                        let m = random_module(&mut rng, spec);
                        let x = uniform_tensor(&mut rng, 4, 4, 3, -1.5, 1.5);
                        let got = forward_module(&m, &x).unwrap();
                        let want = common::module_oracle(&m, &x);
                        assert_eq!(got.shape(), (4 / s, 4 / s, c_out), "{spec:?}");
                        let d = common::max_abs_diff(&got, &want);
                        assert!(d < 1e-10, "{spec:?}: {d:e}");
                        cases += 1;
                    }
                }
            }
        }
    }
    assert_eq!(cases, 2 * 3 * 2 * 2 + 2 * 4 * 2 * 2 * 2);
}

#[test]
fn odd_sizes_pool_with_ceiling() {
    let mut rng = seeded(5);
    for kind in KINDS {
        let spec = ModuleSpec::new(kind, 2, 2, 4, 2, AttentionKind::KaoQkv).unwrap();
        let m = random_module(&mut rng, spec);
        let x = uniform_tensor(&mut rng, 5, 3, 2, -1.0, 1.0);
        let got = forward_module(&m, &x).unwrap();
        assert_eq!(got.shape(), (3, 2, 4));
        assert!(common::max_abs_diff(&got, &common::module_oracle(&m, &x)) < 1e-10);
    }
}

#[test]
fn parameter_counts_by_hand() {
    // c = 32, r = 6, no bias; BN carries 2 per channel.
    // Base: expand 32*192 + 384, depthwise 9*192 + 384, project 192*32 + 64.
    // Attn: expand to 160 (32*160 + 320), depthwise 9*160 + 320, Wv 32*32, project 192*32 + 64.
    let count = |kind, attention| {
        Module::new(&mut seeded(1), ModuleSpec::new(kind, 6, 32, 32, 1, attention).unwrap()).param_count()
    };
    for attention in AttentionKind::ALL {
        assert_eq!(count(ModuleKind::Base, attention), 14_848);
        assert_eq!(count(ModuleKind::Attn, attention), 14_432);
        assert_eq!(count(ModuleKind::AttnSkip, attention), 14_432);
        // BaseSkip expands to 160 and concatenates the input
        assert_eq!(count(ModuleKind::BaseSkip, attention), 14_848 - 32 * 32 - 64);
    }
}
