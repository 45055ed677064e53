//! Seeded synthetic bitemporal scenes.
//!
//! Each sample is a smooth random background photographed "twice": a handful
//! of rectangles/ellipses exist in exactly one of the two shots (true changes,
//! recorded in the mask), while the second shot also suffers a global
//! brightness shift and per-channel gains (pseudo-changes, *not* recorded).
//! Everything is drawn from one xorshift64* stream in a fixed order, so a seed
//! pins the directory contents byte for byte.
//!
//! Stream order per sample:
//!   1. background: 3×8×8 coarse values, uniform(0.2, 0.8), channel-major
//!   2. shape count: 1 + below(4)   (skipped entirely in distractor-only mode)
//!   3. per shape: rect/ellipse coin, pre/post coin, width, height,
//!      x0 = below(size−w), y0 = below(size−h), then 3 color components
//!      (each component is then pushed away from the covered background's
//!      mean until it clears [`CONTRAST_FLOOR`]; no extra draws)
//!   4. brightness shift uniform(−0.15, 0.15), post only
//!   5. three channel gains uniform(0.9, 1.1), post only
//!   6. pixel noise normal_scaled(0.02), every pre value then every post value

use crate::error::Result;
use crate::io::pnm::{write_image, write_mask};
use crate::rng::Rng;
use crate::tensor::Tensor;

const COARSE: usize = 8;

/// Minimum per-channel distance between a painted shape and the mean of the
/// background it covers. The post image carries a brightness shift of up to
/// 0.15, so a raw uniform color can land close enough to the background that
/// the change is indistinguishable from that distractor; the floor keeps every
/// true change observable above the pseudo-change envelope.
const CONTRAST_FLOOR: f64 = 0.3;

/// One generated scene, values in [0, 1], channel-major `[3, S, S]` images.
pub struct SynthSample {
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
    pub mask: Vec<f64>,
    pub size: usize,
}

pub struct SynthOptions {
    pub num: usize,
    pub size: usize,
    pub seed: u64,
    /// No true changes: masks come out empty and only the post-image
    /// brightness/gain/noise perturbations remain. Exercises false positives.
    pub distractors_only: bool,
}

// ── Single-sample generation ────────────────────────────────────────────────

/// Pushes a drawn color component away from the covered background's mean
/// `mu` until the distance reaches [`CONTRAST_FLOOR`]. The push direction is
/// chosen toward the roomier side, so for any `mu` in [0, 1] the result stays
/// inside [0, 1].
fn enforce_contrast(color: f64, mu: f64) -> f64 {
    if (color - mu).abs() >= CONTRAST_FLOOR {
        color
    } else if mu <= 0.5 {
        mu + CONTRAST_FLOOR
    } else {
        mu - CONTRAST_FLOOR
    }
}

/// Bilinear upsample of an 8×8 grid to `size`×`size` using the half-pixel
/// convention, clamped at the borders.
fn upsample_coarse(grid: &[f64], size: usize, out: &mut [f64]) {
    let scale = COARSE as f64 / size as f64;
    for y in 0..size {
        let sy = ((y as f64 + 0.5) * scale - 0.5).clamp(0.0, (COARSE - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(COARSE - 1);
        let fy = sy - y0 as f64;
        for x in 0..size {
            let sx = ((x as f64 + 0.5) * scale - 0.5).clamp(0.0, (COARSE - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(COARSE - 1);
            let fx = sx - x0 as f64;
            let top = grid[y0 * COARSE + x0] * (1.0 - fx) + grid[y0 * COARSE + x1] * fx;
            let bot = grid[y1 * COARSE + x0] * (1.0 - fx) + grid[y1 * COARSE + x1] * fx;
            out[y * size + x] = top * (1.0 - fy) + bot * fy;
        }
    }
}

/// Generates the next sample from the stream. `rng` advances exactly as far as
/// the sample's draws require, so samples chain on one generator.
pub fn generate_sample(rng: &mut Rng, size: usize, distractors_only: bool) -> SynthSample {
    let plane = size * size;
    let mut pre = vec![0.0; 3 * plane];

    // 1. shared background
    for c in 0..3 {
        let grid: Vec<f64> = (0..COARSE * COARSE).map(|_| rng.uniform(0.2, 0.8)).collect();
        upsample_coarse(&grid, size, &mut pre[c * plane..(c + 1) * plane]);
    }
    let mut post = pre.clone();
    let mut mask = vec![0.0; plane];

    // 2–3. true changes
    if !distractors_only {
        let n_shapes = 1 + rng.below(4);
        for _ in 0..n_shapes {
            let is_rect = rng.coin();
            let into_post = rng.coin();
            let w = size / 8 + rng.below(size / 4 - size / 8 + 1);
            let h = size / 8 + rng.below(size / 4 - size / 8 + 1);
            let x0 = rng.below(size - w);
            let y0 = rng.below(size - h);
            let mut color = [rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)];
            let target = if into_post { &mut post } else { &mut pre };
            let (cx, cy) = (x0 as f64 + (w as f64 - 1.0) / 2.0, y0 as f64 + (h as f64 - 1.0) / 2.0);
            let (rx, ry) = (w as f64 / 2.0, h as f64 / 2.0);
            let mut footprint = Vec::with_capacity(w * h);
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    if !is_rect {
                        let dx = (x as f64 - cx) / rx;
                        let dy = (y as f64 - cy) / ry;
                        if dx * dx + dy * dy > 1.0 {
                            continue;
                        }
                    }
                    footprint.push(y * size + x);
                }
            }
            for c in 0..3 {
                let mu = footprint.iter().map(|&i| target[c * plane + i]).sum::<f64>()
                    / footprint.len() as f64;
                color[c] = enforce_contrast(color[c], mu);
            }
            for &i in &footprint {
                for c in 0..3 {
                    target[c * plane + i] = color[c];
                }
                mask[i] = 1.0;
            }
        }
    }

    // 4–5. pseudo-changes on the post image only
    let brightness = rng.uniform(-0.15, 0.15);
    for v in post.iter_mut() {
        *v += brightness;
    }
    for c in 0..3 {
        let gain = rng.uniform(0.9, 1.1);
        for v in post[c * plane..(c + 1) * plane].iter_mut() {
            *v *= gain;
        }
    }

    // 6. sensor noise on both shots
    for v in pre.iter_mut() {
        *v = (*v + rng.normal_scaled(0.02)).clamp(0.0, 1.0);
    }
    for v in post.iter_mut() {
        *v = (*v + rng.normal_scaled(0.02)).clamp(0.0, 1.0);
    }

    SynthSample { pre, post, mask, size }
}

// ── Dataset on disk ─────────────────────────────────────────────────────────

/// 80/10/10 split point arithmetic, by sample index.
pub fn split_sizes(num: usize) -> (usize, usize, usize) {
    let train = num * 8 / 10;
    let val = num / 10;
    (train, val, num - train - val)
}

/// Writes `num` samples as `out_dir/{A,B,label}/NNNNN.{ppm,pgm}` plus
/// train/val/test list files of bare basenames.
pub fn generate_dataset(out_dir: &std::path::Path, opts: &SynthOptions) -> Result<()> {
    for sub in ["A", "B", "label"] {
        std::fs::create_dir_all(out_dir.join(sub))?;
    }
    let mut rng = Rng::new(opts.seed);
    let mut names = Vec::with_capacity(opts.num);
    for i in 0..opts.num {
        let s = generate_sample(&mut rng, opts.size, opts.distractors_only);
        let name = format!("{i:05}");
        let shape3 = [3, s.size, s.size];
        write_image(&out_dir.join("A").join(format!("{name}.ppm")),
                    &Tensor::<f64>::from_vec(s.pre, &shape3)?)?;
        write_image(&out_dir.join("B").join(format!("{name}.ppm")),
                    &Tensor::<f64>::from_vec(s.post, &shape3)?)?;
        write_mask(&out_dir.join("label").join(format!("{name}.pgm")),
                   &Tensor::<f64>::from_vec(s.mask, &[s.size, s.size])?)?;
        names.push(name);
    }
    let (n_train, n_val, _) = split_sizes(opts.num);
    let write_list = |file: &str, range: std::ops::Range<usize>| -> Result<()> {
        let mut text = String::new();
        for name in &names[range] {
            text.push_str(name);
            text.push('\n');
        }
        std::fs::write(out_dir.join(file), text)?;
        Ok(())
    };
    write_list("train.txt", 0..n_train)?;
    write_list("val.txt", n_train..n_train + n_val)?;
    write_list("test.txt", n_train + n_val..opts.num)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir_digest(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
        let mut files = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in std::fs::read_dir(&d).unwrap() {
                let p = entry.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                    files.push((rel, std::fs::read(&p).unwrap()));
                }
            }
        }
        files.sort();
        files
    }

    #[test]
    fn same_seed_same_bytes_different_seed_different_bytes() {
        let base = tempfile::tempdir().unwrap();
        let opts = SynthOptions { num: 3, size: 32, seed: 7, distractors_only: false };
        let (d1, d2, d3) = (base.path().join("a"), base.path().join("b"), base.path().join("c"));
        generate_dataset(&d1, &opts).unwrap();
        generate_dataset(&d2, &opts).unwrap();
        generate_dataset(&d3, &SynthOptions { seed: 8, ..opts }).unwrap();
        assert_eq!(dir_digest(&d1), dir_digest(&d2));
        assert_ne!(dir_digest(&d1), dir_digest(&d3));
    }

    #[test]
    fn mask_area_is_positive_and_under_half() {
        let mut rng = Rng::new(21);
        for _ in 0..20 {
            let s = generate_sample(&mut rng, 64, false);
            let area: f64 = s.mask.iter().sum();
            assert!(area > 0.0);
            assert!(area < 0.5 * (64 * 64) as f64, "area {area}");
        }
    }

    #[test]
    fn distractor_only_masks_are_empty_but_images_differ() {
        let mut rng = Rng::new(33);
        let s = generate_sample(&mut rng, 32, true);
        assert!(s.mask.iter().all(|&m| m == 0.0));
        let diff: f64 =
            s.pre.iter().zip(&s.post).map(|(a, b)| (a - b).abs()).sum::<f64>() / s.pre.len() as f64;
        assert!(diff > 0.005, "post should carry brightness/gain shifts, mean |Δ| = {diff}");
    }

    #[test]
    fn enforced_contrast_clears_floor_and_stays_in_range() {
        let mut rng = Rng::new(11);
        for _ in 0..500 {
            let (c, mu) = (rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0));
            let adj = enforce_contrast(c, mu);
            assert!((adj - mu).abs() >= CONTRAST_FLOOR - 1e-15, "c={c} mu={mu} adj={adj}");
            assert!((0.0..=1.0).contains(&adj));
        }
        // already-distant colors pass through untouched
        assert_eq!(enforce_contrast(0.9, 0.2), 0.9);
    }

    #[test]
    fn values_stay_in_unit_range() {
        let mut rng = Rng::new(5);
        let s = generate_sample(&mut rng, 32, false);
        for v in s.pre.iter().chain(&s.post) {
            assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn split_sizes_cover_everything() {
        assert_eq!(split_sizes(250), (200, 25, 25));
        assert_eq!(split_sizes(10), (8, 1, 1));
        for n in [1usize, 3, 9, 20, 250] {
            let (a, b, c) = split_sizes(n);
            assert_eq!(a + b + c, n);
        }
    }

    #[test]
    fn layout_and_list_files_match_convention() {
        let dir = tempfile::tempdir().unwrap();
        let opts = SynthOptions { num: 10, size: 32, seed: 1, distractors_only: false };
        generate_dataset(dir.path(), &opts).unwrap();
        for sub in ["A", "B"] {
            for i in 0..10 {
                assert!(dir.path().join(sub).join(format!("{i:05}.ppm")).exists());
            }
        }
        assert!(dir.path().join("label/00009.pgm").exists());
        let train = std::fs::read_to_string(dir.path().join("train.txt")).unwrap();
        assert_eq!(train, (0..8).map(|i| format!("{i:05}\n")).collect::<String>());
        let test = std::fs::read_to_string(dir.path().join("test.txt")).unwrap();
        assert_eq!(test, "00009\n");
    }
}
