use rand::Rng;

/// Glorot-uniform samples in `[-sqrt(6 / (fan_in + fan_out)), +sqrt(...)]`.
pub fn glorot_uniform(rng: &mut impl Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-limit..=limit)).collect()
}
