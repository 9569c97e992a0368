#![allow(dead_code)]

use idpas::mip::MipInstance;

/// Instance whose variable `k` is variable `perm[k]` of `inst`.
pub fn permute(inst: &MipInstance, perm: &[usize]) -> MipInstance {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    let mut out = MipInstance::new(format!("{}-perm", inst.name), inst.family.clone(), inst.param_seed);
    for &p in perm {
        out.add_var(inst.var_names[p].clone(), inst.kind[p], inst.lower[p], inst.upper[p], inst.objective[p]);
    }
    for r in &inst.rows {
        out.add_row(r.terms.iter().map(|&(j, a)| (inv[j], a)).collect(), r.sense, r.rhs);
    }
    out
}

/// Deterministic Fisher-Yates shuffle of `0..n`.
pub fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    v
}
