//! Multi-scale decoder. The four fused stage maps (at 1/4, 1/8, 1/16, 1/32 of
//! the input resolution) are brought to the finest grid with nearest-neighbor
//! upsampling, concatenated, and reduced with a 1×1 convolution; two rounds of
//! stride-2 transpose convolution plus a residual refinement block restore the
//! full resolution, and a 3×3 head emits two per-pixel class logits.

use crate::error::{Error, Result};
use crate::nn::{Conv2dLayer, ConvTranspose2dLayer};
use crate::rng::Rng;
use crate::tensor::{Parameter, Scalar, Tape, Tensor};

// ── Residual refinement block ──────────────────────────────────────────────

/// `x + conv2(gelu(conv1(x)))` with two 3×3 same-padding convolutions.
pub struct ResidualBlock<T: Scalar> {
    pub conv1: Conv2dLayer<T>,
    pub conv2: Conv2dLayer<T>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new(rng: &mut Rng, name: &str, channels: usize) -> Self {
        ResidualBlock {
            conv1: Conv2dLayer::new(rng, &format!("{name}.conv1"), channels, channels, 3, 1, 1, 1, true),
            conv2: Conv2dLayer::new(rng, &format!("{name}.conv2"), channels, channels, 3, 1, 1, 1, true),
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = tape.gelu(&self.conv1.forward(tape, x)?)?;
        let h = self.conv2.forward(tape, &h)?;
        tape.add(x, &h)
    }

    pub fn collect_params(&self, out: &mut Vec<Parameter<T>>) {
        self.conv1.collect_params(out);
        self.conv2.collect_params(out);
    }
}

// ── Decoder ────────────────────────────────────────────────────────────────

pub struct DecoderModule<T: Scalar> {
    pub fuse_proj: Conv2dLayer<T>,
    pub up1: ConvTranspose2dLayer<T>,
    pub res1: ResidualBlock<T>,
    pub up2: ConvTranspose2dLayer<T>,
    pub res2: ResidualBlock<T>,
    pub head: Conv2dLayer<T>,
    stage_channels: [usize; 4],
}

impl<T: Scalar> DecoderModule<T> {
    pub fn new(
        rng: &mut Rng,
        name: &str,
        stage_channels: &[usize; 4],
        width: usize,
        num_classes: usize,
    ) -> Self {
        let total: usize = stage_channels.iter().sum();
        DecoderModule {
            fuse_proj: Conv2dLayer::new(rng, &format!("{name}.fuse_proj"), total, width, 1, 1, 0, 1, true),
            up1: ConvTranspose2dLayer::new(rng, &format!("{name}.up1"), width, width, 2, 2, true),
            res1: ResidualBlock::new(rng, &format!("{name}.res1"), width),
            up2: ConvTranspose2dLayer::new(rng, &format!("{name}.up2"), width, width, 2, 2, true),
            res2: ResidualBlock::new(rng, &format!("{name}.res2"), width),
            head: Conv2dLayer::new(rng, &format!("{name}.head"), width, num_classes, 3, 1, 1, 1, true),
            stage_channels: *stage_channels,
        }
    }

    /// Decode the four fused stage maps into logits at 4× the finest map.
    pub fn forward(&self, tape: &Tape<T>, fused: &[Tensor<T>]) -> Result<Tensor<T>> {
        if fused.len() != 4 {
            return Err(Error::dim(format!("decoder expects 4 stage maps, got {}", fused.len())));
        }
        let base = fused[0].shape().to_vec();
        for (i, f) in fused.iter().enumerate() {
            let s = f.shape();
            let factor = 1usize << i;
            if f.ndim() != 4
                || s[1] != self.stage_channels[i]
                || s[2] * factor != base[2]
                || s[3] * factor != base[3]
            {
                return Err(Error::dim(format!(
                    "stage {} map {:?} inconsistent with finest map {:?}",
                    i + 1,
                    s,
                    base
                )));
            }
        }
        let u2 = tape.upsample_nearest(&fused[1], 2)?;
        let u3 = tape.upsample_nearest(&fused[2], 4)?;
        let u4 = tape.upsample_nearest(&fused[3], 8)?;
        let cat = tape.concat(&[&fused[0], &u2, &u3, &u4], 1)?;
        let mut h = self.fuse_proj.forward(tape, &cat)?;
        h = self.res1.forward(tape, &self.up1.forward(tape, &h)?)?;
        h = self.res2.forward(tape, &self.up2.forward(tape, &h)?)?;
        self.head.forward(tape, &h)
    }

    pub fn collect_params(&self, out: &mut Vec<Parameter<T>>) {
        self.fuse_proj.collect_params(out);
        self.up1.collect_params(out);
        self.res1.collect_params(out);
        self.up2.collect_params(out);
        self.res2.collect_params(out);
        self.head.collect_params(out);
    }
}

// ── Prediction ─────────────────────────────────────────────────────────────

/// Per-pixel argmax over the two logit channels; exact ties go to class 0
/// (no-change). Returns `[B, H, W]` of 0/1 values.
pub fn predict<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let s = logits.shape();
    if logits.ndim() != 4 || s[1] != 2 {
        return Err(Error::dim(format!("predict expects [B,2,H,W] logits, got {s:?}")));
    }
    let (b, h, w) = (s[0], s[2], s[3]);
    let plane = h * w;
    let data = logits.data();
    let mut out = vec![T::zero(); b * plane];
    for bi in 0..b {
        let c0 = &data[bi * 2 * plane..bi * 2 * plane + plane];
        let c1 = &data[bi * 2 * plane + plane..(bi + 1) * 2 * plane];
        for i in 0..plane {
            if c1[i] > c0[i] {
                out[bi * plane + i] = T::one();
            }
        }
    }
    drop(data);
    Tensor::from_vec(out, &[b, h, w])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck_default;

    fn rand(seed: u64, shape: &[usize]) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
    }

    fn stage_maps(seed: u64, channels: &[usize; 4], base: usize) -> Vec<Tensor<f64>> {
        (0..4)
            .map(|i| rand(seed + i as u64, &[1, channels[i], base >> i, base >> i]))
            .collect()
    }

    #[test]
    fn restores_full_resolution() {
        let mut rng = Rng::new(3);
        let ch = [4usize, 6, 8, 10];
        let dec = DecoderModule::<f64>::new(&mut rng, "dec", &ch, 8, 2);
        let tape = Tape::no_grad();
        // finest map 8×8 ⇒ input image was 32×32
        let logits = dec.forward(&tape, &stage_maps(5, &ch, 8)).unwrap();
        assert_eq!(logits.shape(), &[1, 2, 32, 32]);
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let mut rng = Rng::new(7);
        let ch = [4usize, 4, 4, 4];
        let dec = DecoderModule::<f64>::new(&mut rng, "dec", &ch, 6, 2);
        let n = dec.head.weight.tensor().numel();
        dec.head.weight.set_data(vec![0.0; n]).unwrap();
        let tape = Tape::no_grad();
        let logits = dec.forward(&tape, &stage_maps(9, &ch, 8)).unwrap();
        assert!(logits.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_inconsistent_pyramids() {
        let mut rng = Rng::new(11);
        let ch = [4usize, 4, 4, 4];
        let dec = DecoderModule::<f64>::new(&mut rng, "dec", &ch, 6, 2);
        let tape = Tape::no_grad();
        let mut maps = stage_maps(13, &ch, 8);
        maps[2] = rand(17, &[1, 4, 3, 3]); // wrong resolution
        assert!(dec.forward(&tape, &maps).is_err());
        let short = &maps[..3];
        assert!(dec.forward(&tape, short).is_err());
    }

    #[test]
    fn residual_block_identity_with_zero_second_conv() {
        let mut rng = Rng::new(19);
        let rb = ResidualBlock::<f64>::new(&mut rng, "rb", 4);
        let n = rb.conv2.weight.tensor().numel();
        rb.conv2.weight.set_data(vec![0.0; n]).unwrap();
        let tape = Tape::no_grad();
        let x = rand(21, &[1, 4, 5, 5]);
        let y = rb.forward(&tape, &x).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn predict_matches_comparison_oracle_and_tie_rule() {
        let logits = Tensor::<f64>::from_vec(
            vec![
                // channel 0        // channel 1
                0.0, 1.0, -2.0, 3.5, 0.0, 0.5, -2.0, 4.0,
            ],
            &[1, 2, 2, 2],
        )
        .unwrap();
        let p = predict(&logits).unwrap();
        // (0,0): tie → 0; (1,0.5): c0 wins → 0; (−2,−2): tie → 0; (3.5,4): c1 wins → 1
        assert_eq!(p.to_vec(), vec![0.0, 0.0, 0.0, 1.0]);

        let mut rng = Rng::new(23);
        let r = Tensor::from_fn(&[2, 2, 3, 3], |_| rng.uniform(-1.0, 1.0));
        let p = predict(&r).unwrap();
        let d = r.to_vec();
        let pv = p.to_vec();
        for bi in 0..2 {
            for i in 0..9 {
                let c0 = d[bi * 18 + i];
                let c1 = d[bi * 18 + 9 + i];
                let want = if c1 > c0 { 1.0 } else { 0.0 };
                assert_eq!(pv[bi * 9 + i], want);
            }
        }
    }

    #[test]
    fn predict_invariant_to_per_pixel_shift() {
        let mut rng = Rng::new(29);
        let base = Tensor::<f64>::from_fn(&[1, 2, 4, 4], |_| rng.uniform(-1.0, 1.0));
        let shift = {
            let mut r2 = Rng::new(31);
            let plane: Vec<f64> = (0..16).map(|_| r2.uniform(-5.0, 5.0)).collect();
            let mut v = plane.clone();
            v.extend_from_slice(&plane);
            Tensor::from_vec(v, &[1, 2, 4, 4]).unwrap()
        };
        let tape = Tape::no_grad();
        let shifted = tape.add(&base, &shift).unwrap();
        assert_eq!(predict(&base).unwrap().to_vec(), predict(&shifted).unwrap().to_vec());
    }

    #[test]
    fn gradients_verify() {
        let mut rng = Rng::new(37);
        let ch = [2usize, 2, 2, 2];
        let dec = DecoderModule::<f64>::new(&mut rng, "dec", &ch, 4, 2);
        let maps: Vec<Parameter<f64>> = (0..4)
            .map(|i| Parameter::new(format!("f{i}"), rand(41 + i as u64, &[1, 2, 8 >> i, 8 >> i])))
            .collect();
        let mut inputs = maps.clone();
        dec.collect_params(&mut inputs);
        let refs: Vec<&Parameter<f64>> = inputs.iter().collect();
        let r = gradcheck_default(
            "decoder",
            |tape| {
                let f: Vec<Tensor<f64>> = maps.iter().map(|p| p.tensor().clone()).collect();
                dec.forward(tape, &f)
            },
            &refs,
            53,
        )
        .unwrap();
        assert!(r.pass(), "{r}");
    }
}
