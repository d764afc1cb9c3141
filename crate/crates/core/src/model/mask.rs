use std::fmt;

/// Visibility matrix over the concatenated `[image tokens | text tokens]`
/// sequence. Entry `(i, j)` is true when output `i` may attend input `j`.
#[derive(Clone, PartialEq, Eq)]
pub struct AttentionMask {
    n_img: usize,
    n_txt: usize,
    bits: Vec<bool>,
}

/// Image tokens see every image token and no text; text token `t` sees every
/// image token and text tokens `0..=t`.
pub fn build_seq2seq_mask(n_img: usize, n_txt: usize) -> AttentionMask {
    let n = n_img + n_txt;
    let mut bits = vec![false; n * n];
    for i in 0..n {
        let visible = if i < n_img { n_img } else { i + 1 };
        bits[i * n..i * n + visible].fill(true);
    }
    AttentionMask { n_img, n_txt, bits }
}

impl AttentionMask {
    pub fn n_img(&self) -> usize {
        self.n_img
    }

    pub fn n_txt(&self) -> usize {
        self.n_txt
    }

    /// Side length of the square matrix.
    pub fn size(&self) -> usize {
        self.n_img + self.n_txt
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.size() + j]
    }

    /// Row-major flattened matrix.
    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }
}

impl fmt::Debug for AttentionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.size();
        let rows: Vec<String> = (0..n)
            .map(|i| (0..n).map(|j| if self.get(i, j) { '1' } else { '0' }).collect())
            .collect();
        f.debug_struct("AttentionMask")
            .field("n_img", &self.n_img)
            .field("n_txt", &self.n_txt)
            .field("rows", &rows)
            .finish()
    }
}
