mod common;

use common::*;
use gitvl::checkpoint;
use gitvl::model::{DecoderStyle, GitModel, ModelConfig, Visual};
use gitvl::train::{Example, TrainConfig, Trainer};
use gitvl::vocab::BOS;
use gitvl::{Image, Tensor, TokenId};

#[test]
fn mask_matches_brute_force() {
    assert_eq!(mask_mismatches(), vec![]);
}

#[test]
fn causality_over_random_models() {
    for style in STYLES {
        for seed in 0..50u64 {
            assert!(causal_on(style, seed), "{style:?} seed {seed}");
        }
    }
}

#[test]
fn text_sees_every_image_token() {
    let cfg = tiny_config(DecoderStyle::SelfAttentionConcat, 2);
    let mut model = GitModel::<f64>::new(cfg.clone(), 3).unwrap();
    perturb_params(&mut model, 4, 0.5);
    let mut r = rng(5);
    let img = random_image(&mut r, cfg.image_size, cfg.channels);
    let text = random_text(&mut r, 4, cfg.vocab_size);
    let base = model.decoder_forward(&model.encode_image(&img).unwrap(), &text).unwrap();
    for p in [0, cfg.image_size * cfg.image_size * cfg.channels - 1] {
        let mut px = img.pixels().to_vec();
        px[p] += 0.5;
        let img2 = Image::new(cfg.image_size, cfg.image_size, cfg.channels, px).unwrap();
        let out = model.decoder_forward(&model.encode_image(&img2).unwrap(), &text).unwrap();
        for row in 0..text.len() {
            assert_ne!(base.row(row), out.row(row), "pixel {p} row {row}");
        }
    }
}

#[test]
fn cross_attention_never_updates_image_features() {
    let cfg = tiny_config(DecoderStyle::CrossAttention, 3);
    let mut model = GitModel::<f64>::new(cfg.clone(), 8).unwrap();
    perturb_params(&mut model, 9, 0.5);
    let mut r = rng(10);
    let feats = model.encode_image(&random_image(&mut r, cfg.image_size, cfg.channels)).unwrap();
    let (_, trace) = model.decoder_forward_traced(&feats, &[BOS, 4, 5]).unwrap();
    assert_eq!(trace.len(), 3);
    for t in &trace {
        assert_eq!(t, feats.tensor());
    }
    // The concatenated style does transform them.
    let cfg = tiny_config(DecoderStyle::SelfAttentionConcat, 3);
    let mut model = GitModel::<f64>::new(cfg, 8).unwrap();
    perturb_params(&mut model, 9, 0.5);
    let (_, trace) = model.decoder_forward_traced(&feats, &[BOS, 4, 5]).unwrap();
    assert_ne!(trace[1], trace[0]);
}

#[test]
fn zero_cross_attention_output_makes_a_text_only_model() {
    let cfg = tiny_config(DecoderStyle::CrossAttention, 2);
    let mut model = GitModel::<f64>::new(cfg.clone(), 11).unwrap();
    perturb_params(&mut model, 12, 0.5);
    for id in model.cross_attention_output_ids() {
        model.params_mut().value_mut(id).data_mut().fill(0.0);
    }
    let mut r = rng(13);
    let text = [BOS, 4, 6];
    let a = model.forward_logits(&Visual::Image(random_image(&mut r, 8, 3)), &text);
    let b = model.forward_logits(&Visual::Image(random_image(&mut r, 8, 3)), &text);
    assert_eq!(a, b);
}

trait Logits {
    fn forward_logits(&self, v: &Visual, text: &[TokenId]) -> Tensor<f64>;
}

impl Logits for GitModel<f64> {
    fn forward_logits(&self, v: &Visual, text: &[TokenId]) -> Tensor<f64> {
        self.decoder_forward(&self.encode_visual(v).unwrap(), text).unwrap()
    }
}

#[test]
fn constant_image_is_patch_order_symmetric() {
    let cfg = tiny_config(DecoderStyle::SelfAttentionConcat, 2);
    let model = GitModel::<f64>::new(cfg.clone(), 14).unwrap();
    let zero = Image::new(8, 8, 3, vec![0.0; 192]).unwrap();
    let a = model.encode_image(&zero).unwrap();
    let b = model.encode_image(&zero.clone()).unwrap();
    assert_eq!(a.tensor(), b.tensor());
    assert_eq!(a.n_tokens(), 4);
}

#[test]
fn tied_embeddings_share_storage() {
    let cfg = tiny_config(DecoderStyle::SelfAttentionConcat, 1);
    let mut model = GitModel::<f64>::new(cfg.clone(), 15).unwrap();
    assert_eq!(model.output_projection_id(), model.token_embedding_id());
    let text = [BOS, 4];
    let feats = model.encode_image(&Image::new(8, 8, 3, vec![0.3; 192]).unwrap()).unwrap();
    let before = model.decoder_forward(&feats, &text).unwrap();
    // Changing the embedding row of a token that is never input moves its logit.
    let id = model.token_embedding_id();
    let d = cfg.hidden_dim;
    for x in &mut model.params_mut().value_mut(id).data_mut()[6 * d..7 * d] {
        *x += 1.0;
    }
    let after = model.decoder_forward(&feats, &text).unwrap();
    assert_ne!(before.row(1)[6], after.row(1)[6]);
    assert_eq!(before.row(1)[5], after.row(1)[5]);

    let untied = ModelConfig { tie_embeddings: false, ..cfg };
    let m = GitModel::<f64>::new(untied, 15).unwrap();
    assert_ne!(m.output_projection_id(), m.token_embedding_id());
}

#[test]
fn parameter_count_matches_the_store() {
    for style in STYLES {
        for (layers, tie) in [(1, true), (2, false), (3, true)] {
            let cfg = ModelConfig {
                tie_embeddings: tie,
                ..tiny_config(style, layers)
            };
            let m = GitModel::<f32>::new(cfg.clone(), 0).unwrap();
            assert_eq!(m.params().numel(), cfg.param_count(), "{style:?} {layers} {tie}");
        }
    }
    let big = ModelConfig {
        decoder_layers: 24,
        ..ModelConfig::default()
    };
    assert_eq!(GitModel::<f32>::new(big.clone(), 0).unwrap().params().numel(), big.param_count());
}

#[test]
fn identical_frames_give_identical_blocks_at_init() {
    for style in STYLES {
        assert!(identical_frames_identical_blocks(style, 16));
    }
    let cfg = tiny_config(DecoderStyle::SelfAttentionConcat, 2);
    let model = GitModel::<f32>::new(cfg.clone(), 16).unwrap();
    let frame = random_image(&mut rng(17), 8, 3);
    let single = model.encode_video(&[frame.clone()]).unwrap();
    assert_eq!(single.tensor(), model.encode_image(&frame).unwrap().tensor());
    assert!(model.encode_video(&vec![frame; cfg.max_frames + 1]).is_err());
}

#[test]
fn checkpoint_resume_reproduces_outputs_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(DecoderStyle::CrossAttention, 2);
    let mut r = rng(18);
    let examples: Vec<Example> = (0..4)
        .map(|_| Example::caption(Visual::Image(random_image(&mut r, 8, 3)), &[4, 5, 6]))
        .collect();
    let tcfg = TrainConfig {
        warmup_iters: 1,
        total_iters: 3,
        batch_size: 2,
        peak_lr_encoder: 1e-3,
        ..TrainConfig::default()
    };
    let mut tr = Trainer::new(GitModel::<f32>::new(cfg.clone(), 19).unwrap(), tcfg).unwrap();
    for b in examples.chunks(2) {
        tr.step(b).unwrap();
    }
    let model = tr.model();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&path, model.params()).unwrap();
    let back = GitModel::<f32>::from_params(cfg, checkpoint::load(&path).unwrap()).unwrap();
    for ex in &examples {
        let a = model.decoder_forward(&model.encode_visual(&ex.visual).unwrap(), &ex.input_ids).unwrap();
        let b = back.decoder_forward(&back.encode_visual(&ex.visual).unwrap(), &ex.input_ids).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn overlong_text_is_rejected() {
    let cfg = tiny_config(DecoderStyle::SelfAttentionConcat, 1);
    let model = GitModel::<f32>::new(cfg.clone(), 0).unwrap();
    let feats = model.encode_image(&Image::new(8, 8, 3, vec![0.0; 192]).unwrap()).unwrap();
    let text = vec![BOS; cfg.max_text_len + 1];
    assert_eq!(model.decoder_forward(&feats, &text).unwrap_err().category(), "input");
    let one = model.decoder_forward(&feats, &[BOS]).unwrap();
    assert_eq!(one.shape(), [1, cfg.vocab_size]);
}
