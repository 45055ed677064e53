//! Loading bitemporal change-detection datasets from disk.
//!
//! Layout convention: `dir/{A,B,label}/<basename>.{ppm,ppm,pgm}` with split
//! list files `dir/{train,val,test}.txt` holding one bare basename per line.

use crate::error::{Error, Result};
use crate::io::pnm::{read_image, read_mask};
use crate::tensor::{Scalar, Tensor};

/// A co-registered image pair and its change mask.
/// `pre`/`post` are `[3, H, W]` in [0, 1]; `mask` is `[H, W]` over {0, 1}.
pub struct BitemporalSample<T: Scalar> {
    pub pre: Tensor<T>,
    pub post: Tensor<T>,
    pub mask: Tensor<T>,
}

impl<T: Scalar> BitemporalSample<T> {
    pub fn new(pre: Tensor<T>, post: Tensor<T>, mask: Tensor<T>) -> Result<Self> {
        let (ps, qs, ms) = (pre.shape(), post.shape(), mask.shape());
        let ok = ps.len() == 3
            && ps[0] == 3
            && qs == ps
            && ms.len() == 2
            && ms == &ps[1..];
        if !ok {
            return Err(Error::contract(format!(
                "inconsistent sample shapes: pre {ps:?}, post {qs:?}, mask {ms:?}"
            )));
        }
        Ok(BitemporalSample { pre, post, mask })
    }

    pub fn height(&self) -> usize {
        self.pre.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pre.shape()[2]
    }

    /// Mirrored copy; both images and the mask flip together so the pixel
    /// correspondence survives.
    pub fn flipped(&self, horizontal: bool, vertical: bool) -> Self {
        let flip3 = |t: &Tensor<T>| {
            let (h, w) = (t.shape()[1], t.shape()[2]);
            let src = t.data();
            let mut out = vec![T::zero(); src.len()];
            for c in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        let sy = if vertical { h - 1 - y } else { y };
                        let sx = if horizontal { w - 1 - x } else { x };
                        out[(c * h + y) * w + x] = src[(c * h + sy) * w + sx];
                    }
                }
            }
            Tensor::from_vec(out, t.shape()).unwrap()
        };
        let (h, w) = (self.height(), self.width());
        let src = self.mask.data();
        let mut m = vec![T::zero(); src.len()];
        for y in 0..h {
            for x in 0..w {
                let sy = if vertical { h - 1 - y } else { y };
                let sx = if horizontal { w - 1 - x } else { x };
                m[y * w + x] = src[sy * w + sx];
            }
        }
        BitemporalSample {
            pre: flip3(&self.pre),
            post: flip3(&self.post),
            mask: Tensor::from_vec(m, &[h, w]).unwrap(),
        }
    }
}

/// Reads `dir/<split>.txt` and returns the basenames in file order.
pub fn read_split_list(dir: &std::path::Path, split: &str) -> Result<Vec<String>> {
    let path = dir.join(format!("{split}.txt"));
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::contract(format!("cannot read {}: {e}", path.display())))?;
    let names: Vec<String> =
        text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    if names.is_empty() {
        return Err(Error::contract(format!("{} lists no samples", path.display())));
    }
    Ok(names)
}

/// Loads one sample by basename.
pub fn load_sample<T: Scalar>(dir: &std::path::Path, name: &str) -> Result<BitemporalSample<T>> {
    let pre = read_image(&dir.join("A").join(format!("{name}.ppm")))?;
    let post = read_image(&dir.join("B").join(format!("{name}.ppm")))?;
    let mask = read_mask(&dir.join("label").join(format!("{name}.pgm")))?;
    BitemporalSample::new(pre, post, mask)
        .map_err(|e| Error::contract(format!("sample \"{name}\": {e}")))
}

/// Loads every sample named by `dir/<split>.txt`, in list order.
pub fn load_split<T: Scalar>(dir: &std::path::Path, split: &str) -> Result<Vec<BitemporalSample<T>>> {
    read_split_list(dir, split)?
        .iter()
        .map(|name| load_sample(dir, name))
        .collect()
}

/// Stacks samples (by index) into batch tensors `[B,3,H,W]`, `[B,3,H,W]`,
/// `[B,H,W]`. All selected samples must share dimensions.
pub fn batch<T: Scalar>(
    samples: &[BitemporalSample<T>],
    indices: &[usize],
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    if indices.is_empty() {
        return Err(Error::contract("cannot batch zero samples".to_string()));
    }
    let first = &samples[indices[0]];
    let (h, w) = (first.height(), first.width());
    let b = indices.len();
    let mut pre = Vec::with_capacity(b * 3 * h * w);
    let mut post = Vec::with_capacity(b * 3 * h * w);
    let mut mask = Vec::with_capacity(b * h * w);
    for &i in indices {
        let s = &samples[i];
        if s.height() != h || s.width() != w {
            return Err(Error::contract(format!(
                "sample {} is {}×{}, batch expects {}×{}",
                i,
                s.height(),
                s.width(),
                h,
                w
            )));
        }
        pre.extend_from_slice(&s.pre.data());
        post.extend_from_slice(&s.post.data());
        mask.extend_from_slice(&s.mask.data());
    }
    Ok((
        Tensor::from_vec(pre, &[b, 3, h, w])?,
        Tensor::from_vec(post, &[b, 3, h, w])?,
        Tensor::from_vec(mask, &[b, h, w])?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::synth::{generate_dataset, SynthOptions};

    fn make_dataset(dir: &std::path::Path, num: usize) {
        let opts = SynthOptions { num, size: 32, seed: 3, distractors_only: false };
        generate_dataset(dir, &opts).unwrap();
    }

    #[test]
    fn loads_generated_splits_with_expected_shapes() {
        let dir = tempfile::tempdir().unwrap();
        make_dataset(dir.path(), 10);
        let train = load_split::<f32>(dir.path(), "train").unwrap();
        let val = load_split::<f32>(dir.path(), "val").unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(val.len(), 1);
        assert_eq!(train[0].pre.shape(), &[3, 32, 32]);
        assert_eq!(train[0].mask.shape(), &[32, 32]);
        for v in train[0].mask.data().iter() {
            assert!(*v == 0.0 || *v == 1.0);
        }
    }

    #[test]
    fn batch_stacks_in_index_order() {
        let dir = tempfile::tempdir().unwrap();
        make_dataset(dir.path(), 10);
        let samples = load_split::<f32>(dir.path(), "train").unwrap();
        let (pre, post, mask) = batch(&samples, &[2, 0]).unwrap();
        assert_eq!(pre.shape(), &[2, 3, 32, 32]);
        assert_eq!(post.shape(), &[2, 3, 32, 32]);
        assert_eq!(mask.shape(), &[2, 32, 32]);
        assert_eq!(&pre.data()[..3 * 32 * 32], &samples[2].pre.data()[..]);
        assert_eq!(&pre.data()[3 * 32 * 32..], &samples[0].pre.data()[..]);
    }

    #[test]
    fn double_flip_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        make_dataset(dir.path(), 2);
        let s = load_sample::<f64>(dir.path(), "00000").unwrap();
        let f = s.flipped(true, true).flipped(true, true);
        assert_eq!(f.pre.to_vec(), s.pre.to_vec());
        assert_eq!(f.mask.to_vec(), s.mask.to_vec());
        let h = s.flipped(true, false);
        let (hh, ww) = (s.height(), s.width());
        assert_eq!(h.mask.data()[0], s.mask.data()[ww - 1]);
        assert_eq!(h.pre.data()[(2 * hh) * ww], s.pre.data()[(2 * hh) * ww + ww - 1]);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let bad = BitemporalSample::new(
            Tensor::<f32>::zeros(&[3, 8, 8]),
            Tensor::<f32>::zeros(&[3, 8, 8]),
            Tensor::<f32>::zeros(&[8, 4]),
        );
        assert!(bad.is_err());
        let missing = load_sample::<f32>(std::path::Path::new("/nonexistent"), "x");
        assert!(missing.is_err());
    }
}
