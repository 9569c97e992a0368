mod common;

use common::{permute, shuffled};
use idpas::gat::{forward, GatDims, GatParams};
use idpas::gen::{gen_instance, FamilyConfig};
use idpas::graph::{encode_bipartite, encode_with_identity, identity_bits, BipartiteGraph, VAR_FEATURES};
use idpas::oracle::random_instance;
use proptest::prelude::*;

fn sorted_edges(g: &BipartiteGraph, map: impl Fn(usize) -> usize) -> Vec<(usize, usize, u64)> {
    let mut e: Vec<_> = g.edges.iter().map(|&(v, c, a)| (map(v), c, a.to_bits())).collect();
    e.sort();
    e
}

fn assert_equivariant(inst: &idpas::mip::MipInstance, perm: &[usize]) {
    let p = permute(inst, perm);
    let (g, gp) = (encode_bipartite(inst), encode_bipartite(&p));
    for (k, &old) in perm.iter().enumerate() {
        assert_eq!(gp.var_row(k), g.var_row(old), "variable {k}");
        assert_eq!(gp.integer_mask[k], g.integer_mask[old]);
    }
    assert_eq!(gp.cons_features, g.cons_features);
    assert_eq!(sorted_edges(&gp, |v| perm[v]), sorted_edges(&g, |v| v));
}

#[test]
fn mmcnp_encoding_is_permutation_equivariant() {
    let inst = gen_instance(&FamilyConfig::mmcnp(1), 5).unwrap();
    let perm = shuffled(inst.num_vars(), 9);
    assert_equivariant(&inst, &perm);
}

#[test]
fn mmcnp_scores_follow_the_permutation_without_identity_bits() {
    let inst = gen_instance(&FamilyConfig::mmcnp(1), 6).unwrap();
    let perm = shuffled(inst.num_vars(), 3);
    let params = GatParams::init(GatDims::for_graphs(16, 4, 0), 11).unwrap();
    let a = forward(&params, &encode_bipartite(&inst)).unwrap();
    let b = forward(&params, &encode_bipartite(&permute(&inst, &perm))).unwrap();
    for (k, &old) in perm.iter().enumerate() {
        assert!((a.scores[old] - b.scores[k]).abs() <= 1e-6);
        assert_eq!(a.valid[old], b.valid[k]);
    }
}

#[test]
fn identity_block_depends_only_on_index() {
    let cfg = FamilyConfig::mmcnp(1);
    let (a, b) = (gen_instance(&cfg, 1).unwrap(), gen_instance(&cfg, 2).unwrap());
    let (ga, gb) = (encode_with_identity(&a, 9).unwrap(), encode_with_identity(&b, 9).unwrap());
    for i in 0..a.num_vars() {
        assert_eq!(&ga.var_row(i)[VAR_FEATURES..], &gb.var_row(i)[VAR_FEATURES..]);
        assert_eq!(&ga.var_row(i)[VAR_FEATURES..], identity_bits(i, 9).collect::<Vec<_>>().as_slice());
    }
    assert_eq!(identity_bits(5, 4).collect::<Vec<_>>(), vec![0.0, 1.0, 0.0, 1.0]);
    assert_eq!(identity_bits(0, 4).collect::<Vec<_>>(), vec![0.0; 4]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_encodings_are_equivariant(seed in 0u64..10_000, n in 2usize..12, pseed in 0u64..1000) {
        let inst = random_instance(seed, n);
        assert_equivariant(&inst, &shuffled(n, pseed));
    }

    #[test]
    fn features_are_finite_and_bounded(seed in 0u64..10_000, n in 1usize..12) {
        let g = encode_bipartite(&random_instance(seed, n));
        prop_assert!(g.var_features.iter().chain(&g.cons_features).all(|v| v.is_finite() && v.abs() <= 1.0 + 1e-12));
        prop_assert!(g.edges.iter().all(|e| e.2.abs() <= 1.0 + 1e-12 && e.2 != 0.0));
    }
}
