//! Shared fixtures for the benchmarks.

use csft::filters::{derive_params, Filter, ParamOverrides};
use csft::hashing::{sample_hash_instance, HashInstance};
use csft::signal::{random_tones, NoiseModel, SignalOracle, SparseSignal};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub filter: Filter,
    pub hash: HashInstance,
    pub oracle: SignalOracle,
    /// Shift that centres the tap lattice in `[0, T]^d`.
    pub shift: Vec<f64>,
}

/// Desk-profile filter with `B` bins per dimension and a noisy `k`-sparse signal.
pub fn fixture(k: usize, d: usize, b: usize, seed: u64) -> Fixture {
    let ov = ParamOverrides { b: Some(b), ..ParamOverrides::desk() };
    let p = derive_params(k, d, 0.1, 2.0, 0.5, &ov).expect("fixture params");
    let filter = Filter::new(p.clone()).expect("fixture filter");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hash = sample_hash_instance(&mut rng, &p);
    let duration = 1e5;
    let tones = random_tones(k, d, 2.0, 0.5, &mut rng).expect("fixture tones");
    let signal = SparseSignal::new(d, 2.0, 0.5, duration, tones).expect("fixture signal");
    let oracle = SignalOracle::new(signal, NoiseModel::white(0.1, seed));
    let shift = hash.sigma_inv_t_apply(&vec![duration / 2.0; d]);
    Fixture { filter, hash, oracle, shift }
}

/// `n` uniform points in `[0, 1)^d`.
pub fn random_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect()).collect()
}
