use nalgebra::DMatrix;
use panoforge::lora::{lora_forward, merge, param_ratio, LoraAdapter};
use rand::{Rng, SeedableRng};

fn adapter(d: usize, r: usize, rng: &mut impl Rng) -> LoraAdapter {
    let a = DMatrix::from_fn(r, d, |_, _| rng.gen_range(-1.0f32..1.0));
    let b = DMatrix::from_fn(d, r, |_, _| rng.gen_range(-1.0f32..1.0));
    LoraAdapter::new(a, b, rng.gen_range(0.1..2.0)).unwrap()
}

#[test]
fn forward_equals_merged_weight() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(10);
    for (d, r) in [(4, 1), (16, 4), (64, 8), (64, 2)] {
        let w0 = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let ad = adapter(d, r, &mut rng);
        let h = DMatrix::from_fn(d, 5, |_, _| rng.gen_range(-1.0..1.0));
        let fused = merge(&w0, &ad).unwrap() * &h;
        let split = lora_forward(&w0, &ad, &h).unwrap();
        assert!((fused - split).abs().max() <= 1e-10);
    }
}

#[test]
fn update_rank_is_bounded() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(11);
    for (d, r) in [(32, 1), (32, 3), (48, 8)] {
        let ad = adapter(d, r, &mut rng);
        let w0 = DMatrix::zeros(d, d);
        let delta = merge(&w0, &ad).unwrap();
        let sv = delta.singular_values();
        let largest = sv.max();
        let rank = sv.iter().filter(|&&s| s > 1e-9 * largest).count();
        assert_eq!(rank, r, "d={d}, r={r}, singular values {sv}");
    }
}

#[test]
fn adapter_file_round_trip() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(12);
    let ad = adapter(24, 4, &mut rng);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("adapter.lora");
    ad.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes, ad.to_bytes());
    let back = LoraAdapter::load(&path).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(param_ratio(2000, 8), 0.008);
}
