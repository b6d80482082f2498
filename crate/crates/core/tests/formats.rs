use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regionstyle::codec::{read_weights, write_weights};
use regionstyle::mask::{rle_decode, rle_encode};
use regionstyle::{load_weights, save_weights, Mask, ModelParams, Rle};

#[test]
fn seeded_models_round_trip_bit_exact() {
    for seed in 0..20 {
        let params = ModelParams::toy(seed);
        let bytes = write_weights(&params);
        let back = read_weights(&bytes).unwrap();
        assert_eq!(write_weights(&back), bytes);
        assert_eq!(back.seed, Some(seed));
    }
}

#[test]
fn weights_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.nstw");
    let params = ModelParams::toy(9);
    save_weights(&params, &path).unwrap();
    let back = load_weights(&path).unwrap();
    assert_eq!(write_weights(&back), write_weights(&params));
}

#[test]
fn every_truncation_is_rejected() {
    let bytes = write_weights(&ModelParams::identity());
    for len in 0..bytes.len() {
        let err = read_weights(&bytes[..len]).unwrap_err();
        assert_eq!(err.name(), "FormatError", "length {len}");
    }
}

#[test]
fn random_masks_round_trip_through_rle_json() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let h = rng.gen_range(1..20);
        let w = rng.gen_range(1..20);
        let density: f64 = rng.gen();
        let mask = Mask::from_fn(h, w, |_, _| rng.gen_bool(density));
        let json = serde_json::to_string(&rle_encode(&mask)).unwrap();
        let rle: Rle = serde_json::from_str(&json).unwrap();
        assert_eq!(rle.decode().unwrap(), mask);
        assert_eq!(rle_decode(&rle.runs, h, w).unwrap(), mask);
    }
}
