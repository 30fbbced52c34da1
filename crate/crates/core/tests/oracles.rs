mod common;

use common::oracles::*;
use common::*;
use tar_core::data::FakeKind;
use tar_core::eval::DEFAULT_CAM_LAYER;
use tar_core::model::{build_model, ArchConfig};

#[test]
fn conv2d_matches_direct_summation() {
    for seed in 0..10 {
        let e = conv_oracle_error(seed);
        assert!(e < 1e-6, "seed {seed}: {e}");
    }
}

#[test]
fn batchnorm_matches_two_pass_statistics() {
    for seed in 0..10 {
        let e = bn_oracle_error(seed);
        assert!(e < 1e-6, "seed {seed}: {e}");
    }
}

#[test]
fn per_class_activation_matches_norm_loop() {
    for seed in 0..10 {
        let e = norm_oracle_error(seed);
        assert!(e < 1e-6, "seed {seed}: {e}");
    }
}

#[test]
fn l1_sum_matches_accumulation_exactly() {
    for seed in 0..10 {
        assert!(l1_oracle_exact(seed), "seed {seed}");
    }
}

#[test]
fn reconstruction_loss_matches_abs_diff_loop() {
    for seed in 0..10 {
        let e = recon_oracle_error(seed);
        assert!(e < 1e-6, "seed {seed}: {e}");
    }
}

#[test]
fn evaluate_matches_recount() {
    let model = build_model(ArchConfig::micro(), 1).unwrap();
    let samples = corpus_samples(FakeKind::SharpSwap, 40, 16, 2);
    assert_eq!(eval_recount_error(&model, &samples), 0.0);
}

#[test]
fn cam_matches_mean_abs_normalize_loop() {
    let model = build_model(ArchConfig::micro(), 5).unwrap();
    let samples = corpus_samples(FakeKind::BlendSwap, 2, 16, 6);
    for layer in model.decoder_layers() {
        for s in &samples {
            let e = cam_oracle_error(&model, &s.pixels, &layer);
            assert!(e < 1e-6, "{layer}: {e}");
        }
    }
    assert_eq!(model.decoder_layers()[0], DEFAULT_CAM_LAYER);
}
