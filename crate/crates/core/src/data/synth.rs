//! Procedural datasets with captions that are exact functions of the pixels.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::Visual;
use crate::vocab::TokenizerMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskMode {
    Caption,
    Vqa,
    Video,
    Classify,
    SceneText,
}

impl TaskMode {
    pub const ALL: [TaskMode; 5] = [
        TaskMode::Caption,
        TaskMode::Vqa,
        TaskMode::Video,
        TaskMode::Classify,
        TaskMode::SceneText,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskMode::Caption => "caption",
            TaskMode::Vqa => "vqa",
            TaskMode::Video => "video",
            TaskMode::Classify => "classify",
            TaskMode::SceneText => "scene-text",
        }
    }

    pub fn tokenizer(self) -> TokenizerMode {
        match self {
            TaskMode::SceneText => TokenizerMode::Char,
            _ => TokenizerMode::Word,
        }
    }
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown task mode {s:?}")))
    }
}

/// Grid colors for caption, VQA and video samples.
pub const PALETTE: [(&str, [f32; 3]); 6] = [
    ("red", [1.0, 0.0, 0.0]),
    ("green", [0.0, 1.0, 0.0]),
    ("blue", [0.0, 0.0, 1.0]),
    ("yellow", [1.0, 1.0, 0.0]),
    ("white", [1.0, 1.0, 1.0]),
    ("black", [0.0, 0.0, 0.0]),
];

/// Class names for the classification task, several of them multi-word.
pub const CLASSES: [(&str, [f32; 3]); 8] = [
    ("red", [0.9, 0.1, 0.1]),
    ("dark red", [0.45, 0.0, 0.0]),
    ("green", [0.1, 0.8, 0.1]),
    ("light green", [0.6, 1.0, 0.6]),
    ("blue", [0.1, 0.1, 0.9]),
    ("light blue", [0.55, 0.75, 1.0]),
    ("dark blue", [0.0, 0.0, 0.4]),
    ("orange", [1.0, 0.55, 0.0]),
];

/// Letters drawn by the scene-text task.
pub const GLYPHS: &str = "abcdefgh";

const VIDEO_BACKGROUND: [f32; 3] = [0.5, 0.5, 0.5];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub visual: Visual,
    pub caption: String,
    pub question: Option<String>,
    pub answer: Option<String>,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Cells per side of the color grid.
    pub grid: usize,
    /// Pixels per cell side.
    pub cell: usize,
    /// Uniform pixel noise amplitude.
    pub noise: f32,
    /// Color steps per video; each becomes one caption word.
    pub video_steps: usize,
    pub frames_per_step: usize,
    /// Longest scene-text string.
    pub max_text_chars: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            grid: 3,
            cell: 4,
            noise: 0.05,
            video_steps: 3,
            frames_per_step: 4,
            max_text_chars: 3,
        }
    }
}

impl SynthConfig {
    pub fn image_size(&self) -> usize {
        self.grid * self.cell
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.cell == 0 || self.video_steps == 0 || self.frames_per_step == 0 {
            return Err(Error::Validation("synthetic grid, cell and video sizes must be positive".into()));
        }
        if self.max_text_chars == 0 || self.max_text_chars > self.grid {
            return Err(Error::Validation(format!(
                "max_text_chars must be in 1..={} for a {}-cell grid",
                self.grid, self.grid
            )));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(Error::Validation("noise must be in [0, 0.5)".into()));
        }
        Ok(())
    }
}

pub fn class_labels() -> Vec<&'static str> {
    CLASSES.iter().map(|c| c.0).collect()
}

/// `n` samples of `mode`; sample `i` depends only on `(seed, i)`.
pub fn synth_dataset(mode: TaskMode, n: usize, seed: u64) -> Result<Vec<SyntheticSample>> {
    synth_dataset_with(mode, n, seed, &SynthConfig::default())
}

pub fn synth_dataset_with(
    mode: TaskMode,
    n: usize,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<Vec<SyntheticSample>> {
    if n == 0 {
        return Err(Error::Input("synthetic dataset needs at least one sample".into()));
    }
    cfg.validate()?;
    Ok((0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            match mode {
                TaskMode::Caption => caption_sample(&mut rng, cfg),
                TaskMode::Vqa => vqa_sample(&mut rng, cfg),
                TaskMode::Video => video_sample(&mut rng, cfg),
                TaskMode::Classify => classify_sample(&mut rng, cfg),
                TaskMode::SceneText => scene_text_sample(&mut rng, cfg),
            }
        })
        .collect())
}

fn noisy(rng: &mut ChaCha8Rng, c: [f32; 3], noise: f32) -> [f32; 3] {
    c.map(|v| {
        let d = if noise > 0.0 { rng.gen_range(-noise..=noise) } else { 0.0 };
        (v + d).clamp(0.0, 1.0)
    })
}

fn fill_cell(img: &mut Image, rng: &mut ChaCha8Rng, cfg: &SynthConfig, r: usize, c: usize, color: [f32; 3]) {
    for y in r * cfg.cell..(r + 1) * cfg.cell {
        for x in c * cfg.cell..(c + 1) * cfg.cell {
            let px = noisy(rng, color, cfg.noise);
            img.set_pixel(y, x, &px);
        }
    }
}

/// Random color grid and its row-major color names.
fn color_grid(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> (Image, Vec<&'static str>) {
    let side = cfg.image_size();
    let mut img = Image::filled(side, side, 3, 0.0);
    let mut words = Vec::with_capacity(cfg.grid * cfg.grid);
    for r in 0..cfg.grid {
        for c in 0..cfg.grid {
            let (name, color) = PALETTE[rng.gen_range(0..PALETTE.len())];
            fill_cell(&mut img, rng, cfg, r, c, color);
            words.push(name);
        }
    }
    (img, words)
}

fn caption_sample(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> SyntheticSample {
    let (img, words) = color_grid(rng, cfg);
    SyntheticSample {
        visual: Visual::Image(img),
        caption: words.join(" "),
        question: None,
        answer: None,
        label: None,
    }
}

/// Cell coordinates in questions are 0-based, row first.
fn vqa_sample(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> SyntheticSample {
    let (img, words) = color_grid(rng, cfg);
    let (r, c) = (rng.gen_range(0..cfg.grid), rng.gen_range(0..cfg.grid));
    SyntheticSample {
        visual: Visual::Image(img),
        caption: words.join(" "),
        question: Some(format!("cell {r} {c}")),
        answer: Some(words[r * cfg.grid + c].to_string()),
        label: None,
    }
}

fn video_sample(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> SyntheticSample {
    let side = cfg.image_size();
    let mut frames = Vec::with_capacity(cfg.video_steps * cfg.frames_per_step);
    let mut words = Vec::with_capacity(cfg.video_steps);
    for _ in 0..cfg.video_steps {
        let (name, color) = PALETTE[rng.gen_range(0..PALETTE.len())];
        let (r, c) = (rng.gen_range(0..cfg.grid), rng.gen_range(0..cfg.grid));
        words.push(name);
        for _ in 0..cfg.frames_per_step {
            let mut img = Image::filled(side, side, 3, 0.0);
            for y in 0..side {
                for x in 0..side {
                    let px = noisy(rng, VIDEO_BACKGROUND, cfg.noise);
                    img.set_pixel(y, x, &px);
                }
            }
            fill_cell(&mut img, rng, cfg, r, c, color);
            frames.push(img);
        }
    }
    SyntheticSample {
        visual: Visual::Video(frames),
        caption: words.join(" "),
        question: None,
        answer: None,
        label: None,
    }
}

fn classify_sample(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> SyntheticSample {
    let side = cfg.image_size();
    let (name, color) = CLASSES[rng.gen_range(0..CLASSES.len())];
    let mut img = Image::filled(side, side, 3, 0.0);
    for y in 0..side {
        for x in 0..side {
            let px = noisy(rng, color, cfg.noise);
            img.set_pixel(y, x, &px);
        }
    }
    SyntheticSample {
        visual: Visual::Image(img),
        caption: name.to_string(),
        question: None,
        answer: None,
        label: Some(name.to_string()),
    }
}

/// Fixed on/off bitmap of `ch`, `height` rows by `width` columns.
pub fn glyph(ch: char, height: usize, width: usize) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x676c_7970_6800 ^ ch as u64);
    (0..height * width).map(|_| rng.gen_bool(0.5)).collect()
}

/// One glyph per vertical strip of the image; a blank strip is a space,
/// trailing blanks end the string.
fn scene_text_sample(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> SyntheticSample {
    let side = cfg.image_size();
    let letters: Vec<char> = GLYPHS.chars().collect();
    let len = rng.gen_range(1..=cfg.max_text_chars);
    let mut text: Vec<char> = (0..len).map(|_| letters[rng.gen_range(0..letters.len())]).collect();
    if len >= 3 && rng.gen_bool(0.25) {
        let at = rng.gen_range(1..len - 1);
        text[at] = ' ';
    }
    let mut img = Image::filled(side, side, 3, 0.0);
    for (strip, &ch) in text.iter().enumerate() {
        if ch == ' ' {
            continue;
        }
        let bits = glyph(ch, side, cfg.cell);
        for y in 0..side {
            for dx in 0..cfg.cell {
                let v = if bits[y * cfg.cell + dx] { 1.0 } else { 0.0 };
                let px = noisy(rng, [v; 3], cfg.noise);
                img.set_pixel(y, strip * cfg.cell + dx, &px);
            }
        }
    }
    let text: String = text.into_iter().collect();
    SyntheticSample {
        visual: Visual::Image(img),
        caption: text,
        question: None,
        answer: None,
        label: None,
    }
}

/// `k` frame indices at a fixed interval from a random offset. Clips with at
/// most `k` frames use every frame.
pub fn sample_frames(n_frames: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    if n_frames <= k {
        return (0..n_frames).collect();
    }
    let interval = n_frames / k;
    let slack = n_frames - 1 - interval * (k - 1);
    let offset = rng.gen_range(0..=slack);
    (0..k).map(|i| offset + i * interval).collect()
}
