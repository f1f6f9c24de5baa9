//! Local re-attention.
//!
//! Whole patches are replaced by a learnable pixel-space mask token over a few
//! masking rounds that together cover every position. The encoder and a linear
//! prediction head regress the raw pixels of the masked patches, and each
//! patch's reconstruction similarity `r_i` becomes an attention weight
//! `1 - r_i`: patches that are easy to fill in from context are damped, and
//! distinctive ones keep their weight.

use std::collections::BTreeSet;

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::Linear;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::StickerImage;
use crate::nn::SequenceEncoder;
use crate::{Error, Result};

/// Non-overlapping `P×P` patches of one image, flattened to `D = P²·C`.
#[derive(Debug, Clone)]
pub struct PatchGrid {
    /// `(N, D)`.
    pub patches: Tensor,
    pub patch_size: usize,
    pub channels: usize,
}

impl PatchGrid {
    pub fn num_patches(&self) -> usize {
        self.patches.dims()[0]
    }

    pub fn dim(&self) -> usize {
        self.patches.dims()[1]
    }
}

pub fn patchify(image: &StickerImage, patch_size: usize, device: &Device, dtype: DType) -> Result<PatchGrid> {
    check_patchable(image.height, image.width, patch_size)?;
    let pixels = image.to_tensor(device, dtype)?.unsqueeze(0)?;
    Ok(PatchGrid {
        patches: patchify_batch(&pixels, patch_size)?.squeeze(0)?,
        patch_size,
        channels: image.channels,
    })
}

pub(crate) fn check_patchable(height: usize, width: usize, patch_size: usize) -> Result<()> {
    if patch_size == 0 || height % patch_size != 0 || width % patch_size != 0 {
        return Err(Error::InvalidArgument(format!(
            "image of H={height}, W={width} cannot be split into patches of P={patch_size}"
        )));
    }
    Ok(())
}

/// `(B, C, H, W) -> (B, N, P·P·C)` in row-major patch order; each patch is
/// flattened row by row with channels innermost.
pub fn patchify_batch(images: &Tensor, patch_size: usize) -> Result<Tensor> {
    let (b, c, h, w) = images.dims4()?;
    check_patchable(h, w, patch_size)?;
    let p = patch_size;
    let (gh, gw) = (h / p, w / p);
    Ok(images
        .reshape(&[b, c, gh, p, gw, p][..])?
        .permute(&[0, 2, 4, 3, 5, 1][..])?
        .reshape((b, gh * gw, p * p * c))?)
}

/// Per-patch linear projection `D -> d_model`.
pub fn tokenize(grid: &Tensor, projection: &Linear) -> Result<Tensor> {
    let expected = projection.weight().dims()[1];
    let got = *grid.dims().last().unwrap_or(&0);
    if expected != got {
        return Err(Error::InvalidArgument(format!(
            "patch dimension {got} does not match projection input {expected}"
        )));
    }
    Ok(projection.forward(grid)?)
}

/// Masked positions for each round, plus the per-round count `L`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub rounds: Vec<BTreeSet<usize>>,
    pub masked_count: usize,
    pub num_patches: usize,
}

impl MaskPlan {
    pub fn covers_all(&self) -> bool {
        let union: BTreeSet<usize> = self.rounds.iter().flatten().copied().collect();
        union.len() == self.num_patches && union.iter().all(|&i| i < self.num_patches)
    }

    /// `rounds × N` indicator rows.
    pub fn indicator(&self) -> Vec<Vec<f32>> {
        self.rounds
            .iter()
            .map(|r| (0..self.num_patches).map(|i| if r.contains(&i) { 1.0 } else { 0.0 }).collect())
            .collect()
    }
}

/// Number of positions masked per round, `ceil(ratio·N)`.
pub fn masked_count(num_patches: usize, mask_ratio: f64) -> usize {
    ((mask_ratio * num_patches as f64 - 1e-9).ceil() as usize).clamp(1, num_patches)
}

/// Draws `ceil(N/L)` rounds of `L` positions. Each round takes not-yet-covered
/// positions first and tops up uniformly from the rest, so the union of the
/// rounds is always every position.
pub fn sample_mask_rounds(num_patches: usize, mask_ratio: f64, seed: u64) -> Result<MaskPlan> {
    if !(mask_ratio > 0.0 && mask_ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "mask ratio must lie in (0, 1), got {mask_ratio}"
        )));
    }
    if num_patches == 0 {
        return Err(Error::InvalidArgument("cannot mask an empty patch grid".into()));
    }
    let l = masked_count(num_patches, mask_ratio);
    let n_rounds = num_patches.div_ceil(l);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uncovered: Vec<usize> = (0..num_patches).collect();
    uncovered.shuffle(&mut rng);
    let mut rounds = Vec::with_capacity(n_rounds);
    for _ in 0..n_rounds {
        let take = l.min(uncovered.len());
        let mut round: BTreeSet<usize> = uncovered.drain(..take).collect();
        if round.len() < l {
            let rest: Vec<usize> = (0..num_patches).filter(|i| !round.contains(i)).collect();
            round.extend(rest.choose_multiple(&mut rng, l - round.len()).copied());
        }
        rounds.push(round);
    }
    Ok(MaskPlan {
        rounds,
        masked_count: l,
        num_patches,
    })
}

/// Replaces the patches selected by `mask` with the mask token.
///
/// `grid` is `(..., N, D)`, `mask` is `(..., N)` with 0/1 entries and the
/// token is `(D)`. Unmasked rows are passed through unchanged.
pub fn corrupt_batch(grid: &Tensor, mask: &Tensor, mask_token: &Tensor) -> Result<Tensor> {
    let shape = grid.shape().clone();
    let cond = mask.to_dtype(DType::U8)?.unsqueeze(D::Minus1)?.broadcast_as(&shape)?;
    let token = mask_token.broadcast_as(&shape)?;
    Ok(cond.where_cond(&token, grid)?)
}

pub fn corrupt(grid: &PatchGrid, positions: &BTreeSet<usize>, mask_token: &Tensor) -> Result<PatchGrid> {
    let n = grid.num_patches();
    if let Some(&bad) = positions.iter().find(|&&p| p >= n) {
        return Err(Error::InvalidArgument(format!("mask position {bad} out of range for {n} patches")));
    }
    let mask: Vec<u8> = (0..n).map(|i| positions.contains(&i) as u8).collect();
    let mask = Tensor::from_vec(mask, n, grid.patches.device())?;
    Ok(PatchGrid {
        patches: corrupt_batch(&grid.patches, &mask, mask_token)?,
        ..grid.clone()
    })
}

/// Pixel predictions for every position of a corrupted grid, clamped to
/// `[0, 1]`. `(B, N, D) -> (B, N, D)`; callers keep the masked rows.
pub fn reconstruct(
    corrupted: &Tensor,
    tokenizer: &Linear,
    encoder: &dyn SequenceEncoder,
    head: &Linear,
) -> Result<Tensor> {
    let hidden = encoder.encode(&tokenize(corrupted, tokenizer)?)?;
    Ok(head.forward(&hidden)?.clamp(0.0, 1.0)?)
}

/// Rows of `(N, D)` predictions at the given positions, `(|M|, D)`.
pub fn masked_rows(pred: &Tensor, positions: &BTreeSet<usize>) -> Result<Tensor> {
    let idx: Vec<u32> = positions.iter().map(|&p| p as u32).collect();
    let idx = Tensor::from_vec(idx, positions.len(), pred.device())?;
    Ok(pred.index_select(&idx, 0)?)
}

/// `(1 + cos(predicted, original)) / 2`, clamped to `[0, 1]`; defined as 0
/// when the original patch is all zero.
pub fn patch_similarity(predicted: &[f64], original: &[f64]) -> f64 {
    assert_eq!(predicted.len(), original.len(), "patch dimensions differ");
    let dot: f64 = predicted.iter().zip(original).map(|(a, b)| a * b).sum();
    let np = predicted.iter().map(|v| v * v).sum::<f64>().sqrt();
    let no = original.iter().map(|v| v * v).sum::<f64>().sqrt();
    if no == 0.0 {
        return 0.0;
    }
    let cos = if np == 0.0 { 0.0 } else { dot / (np * no) };
    ((1.0 + cos) / 2.0).clamp(0.0, 1.0)
}

/// Batched [`patch_similarity`] over the last axis: `(..., D) -> (...)`.
pub fn patch_similarity_batch(predicted: &Tensor, original: &Tensor) -> Result<Tensor> {
    const EPS: f64 = 1e-12;
    let dot = (predicted * original)?.sum(D::Minus1)?;
    let pp = predicted.sqr()?.sum(D::Minus1)?;
    let oo = original.sqr()?.sum(D::Minus1)?;
    let cos = (dot / ((pp + EPS)?.sqrt()? * (&oo + EPS)?.sqrt()?)?)?;
    let r = ((cos + 1.0)? * 0.5)?.clamp(0.0, 1.0)?;
    let nonzero = oo.gt(0.0)?;
    Ok(nonzero.where_cond(&r, &r.zeros_like()?)?)
}

/// Per-patch similarities `r_i` and renewed attention weights `1 - r_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenewedAttention {
    pub weights: Vec<f64>,
    pub raw_similarities: Vec<f64>,
}

/// Averages each position's similarity over the rounds that masked it.
/// `similarities[k][i]` is read only where round `k` masked position `i`.
pub fn renewed_attention(plan: &MaskPlan, similarities: &[Vec<f64>]) -> Result<RenewedAttention> {
    if similarities.len() != plan.rounds.len() {
        return Err(Error::InvalidArgument(format!(
            "{} similarity rows for {} rounds",
            similarities.len(),
            plan.rounds.len()
        )));
    }
    let n = plan.num_patches;
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (round, sims) in plan.rounds.iter().zip(similarities) {
        for &i in round {
            sum[i] += sims[i];
            count[i] += 1;
        }
    }
    if let Some(i) = count.iter().position(|&c| c == 0) {
        return Err(Error::InvalidArgument(format!("patch {i} was never masked")));
    }
    let raw_similarities: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    let weights = raw_similarities.iter().map(|r| 1.0 - r).collect();
    Ok(RenewedAttention {
        weights,
        raw_similarities,
    })
}

/// Tensor form of the round average: `sims` and `masks` are `(R, B, N)`,
/// returns the weights `1 - r` as `(B, N)`.
pub fn renewed_attention_batch(sims: &Tensor, masks: &Tensor) -> Result<Tensor> {
    let total = (sims * masks)?.sum(0)?;
    let count = masks.sum(0)?;
    let r = total.div(&count)?;
    Ok(r.affine(-1.0, 1.0)?)
}

/// Scales token `i` by weight `i`: `(B, N, d) × (B, N) -> (B, N, d)`.
pub fn apply_attention(tokens: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let (tn, wn) = (tokens.dims()[tokens.rank() - 2], weights.dims()[weights.rank() - 1]);
    if tn != wn {
        return Err(Error::InvalidArgument(format!(
            "{tn} tokens but {wn} attention weights"
        )));
    }
    Ok(tokens.broadcast_mul(&weights.unsqueeze(D::Minus1)?)?)
}

/// SplitMix64 finalizer over `(base, stream)`, used to derive independent
/// seeds for steps, items and epochs.
pub fn mix_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dev() -> Device {
        Device::Cpu
    }

    fn image(c: usize, h: usize, w: usize) -> StickerImage {
        let px = (0..c * h * w).map(|i| (i % 251) as f32 / 250.0).collect();
        StickerImage::new("x", px, c, h, w).unwrap()
    }

    #[test]
    fn patch_counts() {
        let g = patchify(&image(3, 224, 224), 32, &dev(), DType::F32).unwrap();
        assert_eq!((g.num_patches(), g.dim()), (49, 3072));
        let g = patchify(&image(3, 64, 64), 16, &dev(), DType::F32).unwrap();
        assert_eq!((g.num_patches(), g.dim()), (16, 768));
        let img = image(3, 8, 8);
        let g = patchify(&img, 8, &dev(), DType::F32).unwrap();
        assert_eq!(g.num_patches(), 1);
        let err = patchify(&image(1, 10, 8), 4, &dev(), DType::F32).unwrap_err();
        assert!(err.to_string().contains("H=10"));
    }

    #[test]
    fn patch_layout_is_row_major_with_channels_innermost() {
        // 2 channels, 2x4 image, P=2 -> 2 patches of 8 values.
        let c0: Vec<f32> = (0..8).map(|v| v as f32 / 100.0).collect();
        let c1: Vec<f32> = (0..8).map(|v| (50 + v) as f32 / 100.0).collect();
        let img = StickerImage::new("x", [c0, c1].concat(), 2, 2, 4).unwrap();
        let g = patchify(&img, 2, &dev(), DType::F32).unwrap();
        let rows: Vec<Vec<f32>> = g.patches.to_vec2().unwrap();
        // patch 1 covers columns 2..4 of both rows
        let expect = [0.02, 0.52, 0.03, 0.53, 0.06, 0.56, 0.07, 0.57];
        for (a, b) in rows[1].iter().zip(expect) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn tokenize_is_per_patch() {
        let d = dev();
        let w = Tensor::from_vec((0..12).map(|v| v as f32 * 0.1).collect::<Vec<_>>(), (3, 4), &d).unwrap();
        let b = Tensor::from_vec(vec![0.5f32, -1.0, 2.0], 3, &d).unwrap();
        let proj = Linear::new(w, Some(b));
        let zero = Tensor::zeros((5, 4), DType::F32, &d).unwrap();
        let out: Vec<Vec<f32>> = tokenize(&zero, &proj).unwrap().to_vec2().unwrap();
        assert!(out.iter().all(|row| row == &vec![0.5, -1.0, 2.0]));

        let mut a = vec![0.2f32; 20];
        let x = Tensor::from_vec(a.clone(), (5, 4), &d).unwrap();
        a[3 * 4 + 1] = 0.9;
        let y = Tensor::from_vec(a, (5, 4), &d).unwrap();
        let tx: Vec<Vec<f32>> = tokenize(&x, &proj).unwrap().to_vec2().unwrap();
        let ty: Vec<Vec<f32>> = tokenize(&y, &proj).unwrap().to_vec2().unwrap();
        for i in 0..5 {
            assert_eq!(tx[i] == ty[i], i != 3);
        }
        let bad = Tensor::zeros((5, 3), DType::F32, &d).unwrap();
        assert!(tokenize(&bad, &proj).is_err());
    }

    #[test]
    fn identity_projection_returns_patches() {
        let d = dev();
        let g = patchify(&image(1, 4, 4), 2, &d, DType::F32).unwrap();
        let eye = Tensor::eye(4, DType::F32, &d).unwrap();
        let proj = Linear::new(eye, Some(Tensor::zeros(4, DType::F32, &d).unwrap()));
        let t: Vec<Vec<f32>> = tokenize(&g.patches, &proj).unwrap().to_vec2().unwrap();
        assert_eq!(t, g.patches.to_vec2::<f32>().unwrap());
    }

    #[test]
    fn mask_round_counts() {
        let p = sample_mask_rounds(4, 0.5, 1).unwrap();
        assert_eq!((p.masked_count, p.rounds.len()), (2, 2));
        assert!(p.covers_all());
        let p = sample_mask_rounds(49, 0.4, 1).unwrap();
        assert_eq!((p.masked_count, p.rounds.len()), (20, 3));
        // enumerate: smallest L with L >= 0.4*49 is 20; 3 rounds of 20 cover 49
        let l = (1..=49).find(|&l| l as f64 >= 0.4 * 49.0).unwrap();
        assert_eq!(l, 20);
        assert_eq!((1..).find(|&r| r * l >= 49).unwrap(), 3);
        assert_eq!(sample_mask_rounds(49, 0.4, 5).unwrap(), sample_mask_rounds(49, 0.4, 5).unwrap());
        assert!(sample_mask_rounds(4, 1.0, 0).is_err());
        assert!(sample_mask_rounds(4, 0.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn rounds_cover_every_patch(n in 1usize..=64, ratio in 0.01f64..0.99, seed in any::<u64>()) {
            let p = sample_mask_rounds(n, ratio, seed).unwrap();
            prop_assert!(p.covers_all());
            prop_assert!(p.rounds.iter().all(|r| r.len() == p.masked_count));
            prop_assert_eq!(p.rounds.len(), n.div_ceil(p.masked_count));
        }
    }

    #[test]
    fn corrupt_cases() {
        let d = dev();
        let g = patchify(&image(1, 2, 4), 2, &d, DType::F32).unwrap();
        let token = Tensor::full(0.5f32, 4, &d).unwrap();
        let same = corrupt(&g, &BTreeSet::new(), &token).unwrap();
        assert_eq!(same.patches.to_vec2::<f32>().unwrap(), g.patches.to_vec2::<f32>().unwrap());
        let all = corrupt(&g, &[0, 1].into(), &token).unwrap();
        assert!(all.patches.to_vec2::<f32>().unwrap().iter().all(|r| r == &vec![0.5; 4]));
        let one: Vec<Vec<f32>> = corrupt(&g, &[0].into(), &token).unwrap().patches.to_vec2().unwrap();
        assert_eq!(one[0], vec![0.5; 4]);
        assert_eq!(one[1], g.patches.to_vec2::<f32>().unwrap()[1]);
        assert!(corrupt(&g, &[2].into(), &token).is_err());
    }

    #[test]
    fn similarity_cases() {
        let o = [0.2, 0.4, 0.1];
        assert!((patch_similarity(&o, &o) - 1.0).abs() < 1e-12);
        assert!((patch_similarity(&[1.0, 0.0], &[0.0, 1.0]) - 0.5).abs() < 1e-12);
        assert!(patch_similarity(&[-0.2, -0.4, -0.1], &o).abs() < 1e-12);
        assert_eq!(patch_similarity(&o, &[0.0; 3]), 0.0);

        let d = dev();
        let p = Tensor::new(&[[0.2f64, 0.4, 0.1], [1.0, 0.0, 0.0], [0.3, 0.3, 0.3], [0.0, 0.0, 0.0]], &d).unwrap();
        let q = Tensor::new(&[[0.2f64, 0.4, 0.1], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.5, 0.1, 0.0]], &d).unwrap();
        let r: Vec<f64> = patch_similarity_batch(&p, &q).unwrap().to_vec1().unwrap();
        assert!((r[0] - 1.0).abs() < 1e-9);
        assert!((r[1] - 0.5).abs() < 1e-12);
        assert_eq!(r[2], 0.0);
        assert!((r[3] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn renewed_attention_cases() {
        let plan = MaskPlan { rounds: vec![[0, 1].into(), [1, 2].into()], masked_count: 2, num_patches: 3 };
        let ra = renewed_attention(&plan, &[vec![1.0; 3], vec![1.0; 3]]).unwrap();
        assert_eq!(ra.weights, vec![0.0; 3]);
        let ra = renewed_attention(&plan, &[vec![0.9, 0.2, 0.0], vec![0.0, 0.6, 0.3]]).unwrap();
        assert!((ra.raw_similarities[1] - 0.4).abs() < 1e-12);
        assert!((ra.weights[1] - 0.6).abs() < 1e-12);
        let holey = MaskPlan { rounds: vec![[0].into()], masked_count: 1, num_patches: 2 };
        assert!(renewed_attention(&holey, &[vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn renewed_attention_batch_matches_scalar_path() {
        let d = dev();
        let plan = sample_mask_rounds(6, 0.5, 3).unwrap();
        let sims: Vec<Vec<f64>> = (0..plan.rounds.len())
            .map(|k| (0..6).map(|i| ((k * 7 + i * 3) % 10) as f64 / 10.0).collect())
            .collect();
        let scalar = renewed_attention(&plan, &sims).unwrap();
        let masks: Vec<Vec<f64>> = plan.indicator().iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
        let st = Tensor::new(sims.clone(), &d).unwrap().unsqueeze(1).unwrap();
        let mt = Tensor::new(masks, &d).unwrap().unsqueeze(1).unwrap();
        let w: Vec<Vec<f64>> = renewed_attention_batch(&st, &mt).unwrap().to_vec2().unwrap();
        for (a, b) in w[0].iter().zip(&scalar.weights) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn apply_attention_cases() {
        let d = dev();
        let a = Tensor::new(&[[[2.0f32, 4.0], [6.0, 8.0]]], &d).unwrap();
        let ones = Tensor::ones((1, 2), DType::F32, &d).unwrap();
        assert_eq!(apply_attention(&a, &ones).unwrap().to_vec3::<f32>().unwrap(), a.to_vec3::<f32>().unwrap());
        let zeros = ones.zeros_like().unwrap();
        assert!(apply_attention(&a, &zeros).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().all(|&v| v == 0.0));
        let w = Tensor::new(&[[0.5f32, 1.0]], &d).unwrap();
        assert_eq!(apply_attention(&a, &w).unwrap().to_vec3::<f32>().unwrap(), vec![vec![vec![1.0, 2.0], vec![6.0, 8.0]]]);
        let bad = Tensor::ones((1, 3), DType::F32, &d).unwrap();
        assert!(apply_attention(&a, &bad).is_err());
        let scaled = apply_attention(&(&a * 3.0).unwrap(), &w).unwrap();
        let lin = (apply_attention(&a, &w).unwrap() * 3.0).unwrap();
        assert_eq!(scaled.to_vec3::<f32>().unwrap(), lin.to_vec3::<f32>().unwrap());
    }

    #[test]
    fn mix_seed_separates_streams() {
        assert_ne!(mix_seed(1, 0), mix_seed(1, 1));
        assert_ne!(mix_seed(1, 0), mix_seed(2, 0));
        assert_eq!(mix_seed(9, 4), mix_seed(9, 4));
    }
}
