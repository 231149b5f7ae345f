mod common;

use common::desk_spec;
use dsnerv::compression::{
    compress_model, decompress_model, dequantize, entropy_decode, entropy_encode, prune, quantize,
    CompressedModel,
};
use dsnerv::decoder::ParamRole;
use dsnerv::media::{synth_video, SynthKind};
use dsnerv::training::evaluate_psnr;
use dsnerv::{Error, Model};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn entropy_codec_is_lossless(alphabet in 1u32..=65536, len in 0usize..2000, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let symbols: Vec<u32> = (0..len).map(|_| rng.gen_range(0..alphabet)).collect();
        let stream = entropy_encode(&symbols).unwrap();
        prop_assert_eq!(entropy_decode(&stream).unwrap(), symbols);
    }

    #[test]
    fn quantisation_error_is_within_half_a_step(
        values in prop::collection::vec(-10.0f32..10.0, 1..500),
        bits in 2u8..=16,
    ) {
        let (codes, spec) = quantize(&values, bits).unwrap();
        let back = dequantize::<f64>(&codes, &spec);
        for (v, d) in values.iter().zip(&back) {
            prop_assert!((*v as f64 - d).abs() <= spec.scale as f64 / 2.0 * (1.0 + 1e-9));
        }
    }
}

#[test]
fn uniform_eight_bit_symbols_do_not_compress() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let symbols: Vec<u32> = (0..10_000).map(|_| rng.gen_range(0..256)).collect();
    let stream = entropy_encode(&symbols).unwrap();
    assert!(
        stream.len() as f64 >= 0.98 * 10_000.0,
        "{} bytes",
        stream.len()
    );
}

#[test]
fn oversized_symbols_are_rejected() {
    assert!(matches!(
        entropy_encode(&[70_000]),
        Err(Error::InvalidConfig(_))
    ));
}

fn model() -> Model<f32> {
    Model::init(desk_spec(4, 2, 2, 12), 5).unwrap()
}

#[test]
fn requantising_is_a_fixed_point() {
    for sparsity in [0.0, 0.4] {
        let once = decompress_model(&compress_model(&model(), sparsity, 8).unwrap()).unwrap();
        let twice = decompress_model(&compress_model(&once, 0.0, 8).unwrap()).unwrap();
        assert_eq!(once.params, twice.params, "sparsity {sparsity}");
    }
}

#[test]
fn bitstream_round_trips_and_is_deterministic() {
    let c = compress_model(&model(), 0.2, 8).unwrap();
    let bytes = c.to_bytes();
    assert_eq!(bytes, compress_model(&model(), 0.2, 8).unwrap().to_bytes());
    assert_eq!(&bytes[..4], b"DSNV");
    assert_eq!(CompressedModel::from_bytes(&bytes).unwrap(), c);
    let expected = bytes.len() as f64 * 8.0 / (4.0 * 32.0 * 64.0);
    assert_eq!(c.bpp(), expected);
}

#[test]
fn corrupt_bitstreams_are_rejected() {
    let bytes = compress_model(&model(), 0.0, 6).unwrap().to_bytes();
    for cut in [0, 3, 5, 40, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(
                CompressedModel::from_bytes(&bytes[..cut]),
                Err(Error::CorruptStream(_))
            ),
            "cut at {cut}"
        );
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(
        CompressedModel::from_bytes(&extra),
        Err(Error::CorruptStream(_))
    ));
    let mut versioned = bytes.clone();
    versioned[4] = 9;
    assert!(matches!(
        CompressedModel::from_bytes(&versioned),
        Err(Error::VersionMismatch { found: 9, .. })
    ));
}

#[test]
fn fewer_bits_give_a_smaller_stream() {
    let m = model();
    let small = compress_model(&m, 0.0, 8).unwrap().bpp();
    let large = compress_model(&m, 0.0, 16).unwrap().bpp();
    assert!(small < large, "{small} vs {large}");
}

#[test]
fn sixteen_bits_preserve_quality() {
    let data = synth_video(SynthKind::StaticPlusMovingSquare, 4, 32, 64, 0).unwrap();
    let m = model();
    let frames = [0, 1, 2, 3];
    let before = evaluate_psnr(&m, &data, &frames).unwrap();
    let after = evaluate_psnr(
        &decompress_model(&compress_model(&m, 0.0, 16).unwrap()).unwrap(),
        &data,
        &frames,
    )
    .unwrap();
    assert!((before - after).abs() < 0.1, "{before} vs {after}");
}

#[test]
fn pruning_touches_only_decoder_weights() {
    let m = model();
    let result = prune(&m.params, 0.5).unwrap();
    assert!((result.sparsity - 0.5).abs() < 1e-3);
    for (old, new) in m.params.tensors().iter().zip(result.store.tensors()) {
        if old.role != ParamRole::Weight {
            assert_eq!(old.tensor, new.tensor, "{}", old.name);
        }
    }
    for (name, keep) in &result.masks {
        let t = result
            .store
            .tensors()
            .into_iter()
            .find(|p| &p.name == name)
            .unwrap();
        for (k, v) in keep.iter().zip(t.tensor.data()) {
            assert_eq!(*k, *v != 0.0);
        }
    }
}
