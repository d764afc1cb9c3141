//! Image encoder, projection bridge and text decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{DecoderStyle, ModelConfig};
use super::mask::build_seq2seq_mask;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::param::{ParamGroup, ParamId, ParamKind, ParamStore};
use crate::tensor::{Scalar, Tensor};
use crate::vocab::{TokenId, BOS};

const INIT_STD: f64 = 0.02;

/// Visual input to the model.
#[derive(Debug, Clone, PartialEq)]
pub enum Visual {
    Image(Image),
    Video(Vec<Image>),
}

/// Projected image tokens, `[n_tokens × D]`. Video features are the per-frame
/// blocks concatenated in frame order.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatures<T> {
    tokens: Tensor<T>,
    frames: usize,
}

impl<T: Scalar> ImageFeatures<T> {
    pub fn tensor(&self) -> &Tensor<T> {
        &self.tokens
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.shape()[0]
    }

    /// The token block belonging to frame `f`.
    pub fn frame_block(&self, f: usize) -> &[T] {
        let per = self.n_tokens() / self.frames;
        let d = self.tokens.last_dim();
        &self.tokens.data()[f * per * d..(f + 1) * per * d]
    }

    /// Replaces one token's vector; used by perturbation probes.
    pub fn set_token(&mut self, i: usize, value: &[T]) {
        let d = self.tokens.last_dim();
        self.tokens.data_mut()[i * d..(i + 1) * d].copy_from_slice(value);
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone, Copy)]
struct Cross {
    norm: Norm,
    attn: Attention,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    ln1: Norm,
    attn: Attention,
    cross: Option<Cross>,
    ln2: Norm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Debug, Clone)]
struct Layout {
    patch: Linear,
    enc_pos: ParamId,
    enc_blocks: Vec<Block>,
    proj: Linear,
    proj_norm: Norm,
    temporal: ParamId,
    tok_emb: ParamId,
    txt_pos: ParamId,
    txt_norm: Norm,
    dec_blocks: Vec<Block>,
    final_norm: Norm,
    out_w: Option<ParamId>,
    out_b: ParamId,
}

struct Init<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl<T: Scalar> Init<'_, T> {
    fn random(&mut self, name: String, shape: &[usize], group: ParamGroup, kind: ParamKind) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(self.normal.sample(&mut self.rng))).collect();
        self.store.add(name, Tensor::from_parts(shape.to_vec(), data), group, kind)
    }

    fn filled(&mut self, name: String, shape: &[usize], value: f64, group: ParamGroup, kind: ParamKind) -> ParamId {
        self.store.add(name, Tensor::full(shape, T::of(value)), group, kind)
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, group: ParamGroup) -> Linear {
        Linear {
            w: self.random(format!("{name}.weight"), &[fan_in, fan_out], group, ParamKind::Weight),
            b: self.filled(format!("{name}.bias"), &[fan_out], 0.0, group, ParamKind::Bias),
        }
    }

    fn norm(&mut self, name: &str, d: usize, group: ParamGroup) -> Norm {
        Norm {
            g: self.filled(format!("{name}.gamma"), &[d], 1.0, group, ParamKind::Norm),
            b: self.filled(format!("{name}.beta"), &[d], 0.0, group, ParamKind::Norm),
        }
    }

    fn attention(&mut self, name: &str, d: usize, group: ParamGroup) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.query"), d, d, group),
            k: self.linear(&format!("{name}.key"), d, d, group),
            v: self.linear(&format!("{name}.value"), d, d, group),
            o: self.linear(&format!("{name}.out"), d, d, group),
        }
    }

    fn block(&mut self, name: &str, cfg: &ModelConfig, cross: bool, group: ParamGroup) -> Block {
        let d = cfg.hidden_dim;
        let f = cfg.mlp_ratio * d;
        let ln1 = self.norm(&format!("{name}.ln1"), d, group);
        let attn = self.attention(&format!("{name}.attn"), d, group);
        let cross = cross.then(|| Cross {
            norm: self.norm(&format!("{name}.ln_cross"), d, group),
            attn: self.attention(&format!("{name}.cross"), d, group),
        });
        Block {
            ln1,
            attn,
            cross,
            ln2: self.norm(&format!("{name}.ln2"), d, group),
            fc1: self.linear(&format!("{name}.mlp.fc1"), d, f, group),
            fc2: self.linear(&format!("{name}.mlp.fc2"), f, d, group),
        }
    }
}

/// The generative image-to-text network.
#[derive(Debug, Clone)]
pub struct GitModel<T> {
    cfg: ModelConfig,
    params: ParamStore<T>,
    layout: Layout,
}

impl<T: Scalar> GitModel<T> {
    /// Randomly initializes a model. Weights draw from N(0, 0.02²); biases,
    /// norm shifts and the temporal embedding start at zero.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.hidden_dim;
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, INIT_STD).expect("valid std"),
        };
        use ParamGroup::{Decoder, Encoder};

        let patch = init.linear("encoder.patch_embed", cfg.patch_dim(), d, Encoder);
        let enc_pos = init.random(
            "encoder.pos_embed".into(),
            &[cfg.tokens_per_frame(), d],
            Encoder,
            ParamKind::Embedding,
        );
        let enc_blocks = (0..cfg.encoder_layers)
            .map(|l| init.block(&format!("encoder.layers.{l}"), &cfg, false, Encoder))
            .collect();
        // The bridge is freshly initialized alongside the decoder.
        let proj = init.linear("bridge.proj", d, d, Decoder);
        let proj_norm = init.norm("bridge.norm", d, Decoder);
        let temporal = init.filled(
            "bridge.temporal_embed".into(),
            &[cfg.max_frames, d],
            0.0,
            Decoder,
            ParamKind::Embedding,
        );
        let tok_emb = init.random(
            "decoder.token_embed".into(),
            &[cfg.vocab_size, d],
            Decoder,
            ParamKind::Embedding,
        );
        let txt_pos = init.random(
            "decoder.pos_embed".into(),
            &[cfg.max_text_len, d],
            Decoder,
            ParamKind::Embedding,
        );
        let txt_norm = init.norm("decoder.embed_norm", d, Decoder);
        let cross = cfg.decoder_style == DecoderStyle::CrossAttention;
        let dec_blocks = (0..cfg.decoder_layers)
            .map(|l| init.block(&format!("decoder.layers.{l}"), &cfg, cross, Decoder))
            .collect();
        let final_norm = init.norm("decoder.final_norm", d, Decoder);
        let out_w = (!cfg.tie_embeddings).then(|| {
            init.random(
                "decoder.output.weight".into(),
                &[cfg.vocab_size, d],
                Decoder,
                ParamKind::Weight,
            )
        });
        let out_b = init.filled(
            "decoder.output.bias".into(),
            &[cfg.vocab_size],
            0.0,
            Decoder,
            ParamKind::Bias,
        );
        let layout = Layout {
            patch,
            enc_pos,
            enc_blocks,
            proj,
            proj_norm,
            temporal,
            tok_emb,
            txt_pos,
            txt_norm,
            dec_blocks,
            final_norm,
            out_w,
            out_b,
        };
        Ok(GitModel {
            cfg,
            params: store,
            layout,
        })
    }

    /// Rebuilds a model around loaded parameter values. Every parameter the
    /// configuration implies must be present with a matching shape.
    pub fn from_params(cfg: ModelConfig, loaded: ParamStore<T>) -> Result<Self> {
        let mut model = Self::new(cfg, 0)?;
        if loaded.len() != model.params.len() {
            return Err(Error::format(
                "checkpoint",
                format!(
                    "expected {} parameters, found {}",
                    model.params.len(),
                    loaded.len()
                ),
            ));
        }
        let ids: Vec<ParamId> = model.params.ids().collect();
        for id in ids {
            let name = model.params.get(id).name.clone();
            let src = loaded
                .id(&name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing parameter {name}")))?;
            let value = loaded.value(src);
            if value.shape() != model.params.value(id).shape() {
                return Err(Error::format(
                    "checkpoint",
                    format!(
                        "parameter {name} has shape {:?}, expected {:?}",
                        value.shape(),
                        model.params.value(id).shape()
                    ),
                ));
            }
            *model.params.value_mut(id) = value.clone();
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn token_embedding_id(&self) -> ParamId {
        self.layout.tok_emb
    }

    /// The matrix multiplied against final hidden states to produce logits.
    /// With tied embeddings this is the token embedding itself.
    pub fn output_projection_id(&self) -> ParamId {
        self.layout.out_w.unwrap_or(self.layout.tok_emb)
    }

    pub fn temporal_embedding_id(&self) -> ParamId {
        self.layout.temporal
    }

    /// Ids of the output projection of every cross-attention unit.
    pub fn cross_attention_output_ids(&self) -> Vec<ParamId> {
        self.layout
            .dec_blocks
            .iter()
            .filter_map(|b| b.cross)
            .flat_map(|c| [c.attn.o.w, c.attn.o.b])
            .collect()
    }

    fn linear(&self, tape: &mut Tape<T>, l: Linear, x: Var) -> Result<Var> {
        let w = tape.param(&self.params, l.w);
        let b = tape.param(&self.params, l.b);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }

    fn norm(&self, tape: &mut Tape<T>, n: Norm, x: Var) -> Result<Var> {
        let g = tape.param(&self.params, n.g);
        let b = tape.param(&self.params, n.b);
        tape.layer_norm(x, g, b, self.cfg.layer_norm_eps)
    }

    /// Multi-head attention of `xq` over `xkv`; `mask` is `nq × nk`, row-major.
    fn attention(&self, tape: &mut Tape<T>, a: Attention, xq: Var, xkv: Var, mask: &[bool]) -> Result<Var> {
        let q = self.linear(tape, a.q, xq)?;
        let k = self.linear(tape, a.k, xkv)?;
        let v = self.linear(tape, a.v, xkv)?;
        let dh = self.cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let scores = tape.matmul_bt(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let probs = tape.masked_softmax(scores, mask)?;
            heads.push(tape.matmul(probs, vh)?);
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        self.linear(tape, a.o, merged)
    }

    fn mlp(&self, tape: &mut Tape<T>, b: &Block, x: Var) -> Result<Var> {
        let h = self.linear(tape, b.fc1, x)?;
        let h = tape.gelu(h);
        self.linear(tape, b.fc2, h)
    }

    /// Pre-norm block: self-attention, optional cross-attention, MLP, each
    /// wrapped in a residual connection.
    fn block(&self, tape: &mut Tape<T>, b: &Block, x: Var, mask: &[bool], image: Option<(Var, &[bool])>) -> Result<Var> {
        let h = self.norm(tape, b.ln1, x)?;
        let h = self.attention(tape, b.attn, h, h, mask)?;
        let mut x = tape.add(x, h)?;
        if let (Some(c), Some((img, cross_mask))) = (b.cross, image) {
            let h = self.norm(tape, c.norm, x)?;
            let h = self.attention(tape, c.attn, h, img, cross_mask)?;
            x = tape.add(x, h)?;
        }
        let h = self.norm(tape, b.ln2, x)?;
        let h = self.mlp(tape, b, h)?;
        tape.add(x, h)
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        let want = [self.cfg.image_size, self.cfg.image_size, self.cfg.channels];
        if image.shape() != want {
            return Err(Error::Input(format!(
                "image shape {:?} does not match configured {:?}",
                image.shape(),
                want
            )));
        }
        Ok(())
    }

    /// Patch embedding, bidirectional encoder blocks, then the linear +
    /// layernorm projection into the decoder width.
    pub fn encode_image_on(&self, tape: &mut Tape<T>, image: &Image) -> Result<Var> {
        self.check_image(image)?;
        let (n, flat) = image.patches(self.cfg.patch_size)?;
        let pixels = Tensor::from_parts(vec![n, self.cfg.patch_dim()], flat.iter().map(|&p| T::of(p as f64)).collect());
        let x = tape.constant(pixels);
        let x = self.linear(tape, self.layout.patch, x)?;
        let pos = tape.param(&self.params, self.layout.enc_pos);
        let mut x = tape.add(x, pos)?;
        let full = vec![true; n * n];
        for b in &self.layout.enc_blocks {
            x = self.block(tape, b, x, &full, None)?;
        }
        let x = self.linear(tape, self.layout.proj, x)?;
        self.norm(tape, self.layout.proj_norm, x)
    }

    /// Encodes each frame independently, adds the frame's temporal embedding
    /// row to all of its tokens and concatenates the blocks in frame order.
    pub fn encode_video_on(&self, tape: &mut Tape<T>, frames: &[Image]) -> Result<Var> {
        if frames.is_empty() || frames.len() > self.cfg.max_frames {
            return Err(Error::Input(format!(
                "video needs 1..={} frames, got {}",
                self.cfg.max_frames,
                frames.len()
            )));
        }
        let temporal = tape.param(&self.params, self.layout.temporal);
        let mut blocks = Vec::with_capacity(frames.len());
        for (f, frame) in frames.iter().enumerate() {
            let feats = self.encode_image_on(tape, frame)?;
            let t = tape.slice_rows(temporal, f, 1)?;
            let t = tape.reshape(t, &[self.cfg.hidden_dim])?;
            blocks.push(tape.add_row(feats, t)?);
        }
        if blocks.len() == 1 {
            Ok(blocks[0])
        } else {
            tape.concat_rows(&blocks)
        }
    }

    pub fn encode_visual_on(&self, tape: &mut Tape<T>, visual: &Visual) -> Result<Var> {
        match visual {
            Visual::Image(img) => self.encode_image_on(tape, img),
            Visual::Video(frames) => self.encode_video_on(tape, frames),
        }
    }

    pub fn encode_image(&self, image: &Image) -> Result<ImageFeatures<T>> {
        let mut tape = Tape::new();
        let v = self.encode_image_on(&mut tape, image)?;
        Ok(ImageFeatures {
            tokens: tape.value(v).clone(),
            frames: 1,
        })
    }

    pub fn encode_video(&self, frames: &[Image]) -> Result<ImageFeatures<T>> {
        let mut tape = Tape::new();
        let v = self.encode_video_on(&mut tape, frames)?;
        Ok(ImageFeatures {
            tokens: tape.value(v).clone(),
            frames: frames.len(),
        })
    }

    pub fn encode_visual(&self, visual: &Visual) -> Result<ImageFeatures<T>> {
        match visual {
            Visual::Image(img) => self.encode_image(img),
            Visual::Video(frames) => self.encode_video(frames),
        }
    }

    fn check_text(&self, text_ids: &[TokenId]) -> Result<()> {
        if text_ids.first() != Some(&BOS) {
            return Err(Error::Input("decoder input must start with BOS".into()));
        }
        if text_ids.len() > self.cfg.max_text_len {
            return Err(Error::Input(format!(
                "text of {} tokens exceeds max_text_len {}",
                text_ids.len(),
                self.cfg.max_text_len
            )));
        }
        if let Some(&bad) = text_ids.iter().find(|&&t| t as usize >= self.cfg.vocab_size) {
            return Err(Error::Input(format!(
                "token id {bad} outside vocab_size {}",
                self.cfg.vocab_size
            )));
        }
        Ok(())
    }

    /// Token embedding plus learned position, then layernorm.
    fn embed_text(&self, tape: &mut Tape<T>, text_ids: &[TokenId]) -> Result<Var> {
        let ids: Vec<usize> = text_ids.iter().map(|&t| t as usize).collect();
        let table = tape.param(&self.params, self.layout.tok_emb);
        let emb = tape.embedding(table, &ids)?;
        let pos = tape.param(&self.params, self.layout.txt_pos);
        let pos = tape.slice_rows(pos, 0, ids.len())?;
        let x = tape.add(emb, pos)?;
        self.norm(tape, self.layout.txt_norm, x)
    }

    fn logits(&self, tape: &mut Tape<T>, hidden: Var) -> Result<Var> {
        let h = self.norm(tape, self.layout.final_norm, hidden)?;
        let w = tape.param(&self.params, self.output_projection_id());
        let b = tape.param(&self.params, self.layout.out_b);
        let y = tape.matmul_bt(h, w)?;
        tape.add_row(y, b)
    }

    /// Text logits `[n_txt × vocab]` on `tape`, dispatching on the configured
    /// decoder style. Row `t` scores the token following `text_ids[t]`.
    pub fn decode_on(&self, tape: &mut Tape<T>, image: Var, text_ids: &[TokenId]) -> Result<Var> {
        self.decode_traced(tape, image, text_ids, None)
    }

    fn decode_traced(
        &self,
        tape: &mut Tape<T>,
        image: Var,
        text_ids: &[TokenId],
        mut trace: Option<&mut Vec<Tensor<T>>>,
    ) -> Result<Var> {
        self.check_text(text_ids)?;
        let n_img = tape.shape(image)[0];
        let n_txt = text_ids.len();
        let text = self.embed_text(tape, text_ids)?;
        match self.cfg.decoder_style {
            DecoderStyle::SelfAttentionConcat => {
                let mask = build_seq2seq_mask(n_img, n_txt);
                let mut x = tape.concat_rows(&[image, text])?;
                for b in &self.layout.dec_blocks {
                    if let Some(t) = trace.as_deref_mut() {
                        let img_rows = tape.slice_rows(x, 0, n_img)?;
                        t.push(tape.value(img_rows).clone());
                    }
                    x = self.block(tape, b, x, mask.as_slice(), None)?;
                }
                let x = tape.slice_rows(x, n_img, n_txt)?;
                self.logits(tape, x)
            }
            DecoderStyle::CrossAttention => {
                let causal = build_seq2seq_mask(0, n_txt);
                let cross_mask = vec![true; n_txt * n_img];
                let mut x = text;
                for b in &self.layout.dec_blocks {
                    if let Some(t) = trace.as_deref_mut() {
                        t.push(tape.value(image).clone());
                    }
                    x = self.block(tape, b, x, causal.as_slice(), Some((image, &cross_mask)))?;
                }
                self.logits(tape, x)
            }
        }
    }

    /// Decoder logits for precomputed image features (no encoder gradients).
    pub fn decoder_forward(&self, features: &ImageFeatures<T>, text_ids: &[TokenId]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let img = tape.constant(features.tokens.clone());
        let out = self.decode_on(&mut tape, img, text_ids)?;
        Ok(tape.value(out).clone())
    }

    /// Like [`GitModel::decoder_forward`], also returning the image-token
    /// states entering each decoder layer.
    pub fn decoder_forward_traced(
        &self,
        features: &ImageFeatures<T>,
        text_ids: &[TokenId],
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let mut tape = Tape::new();
        let img = tape.constant(features.tokens.clone());
        let mut trace = Vec::new();
        let out = self.decode_traced(&mut tape, img, text_ids, Some(&mut trace))?;
        Ok((tape.value(out).clone(), trace))
    }

    /// Full forward pass on `tape`: encoder, bridge and decoder.
    pub fn forward_on(&self, tape: &mut Tape<T>, visual: &Visual, text_ids: &[TokenId]) -> Result<Var> {
        let img = self.encode_visual_on(tape, visual)?;
        self.decode_on(tape, img, text_ids)
    }
}
