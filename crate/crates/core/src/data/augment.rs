use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AugmentOp {
    /// Zero-pad by `pad` on every side, then crop back at a random offset.
    RandomCrop { pad: usize },
    HorizontalFlip { p: f64 },
    Normalize { mean: Vec<f64>, std: Vec<f64> },
    /// Zero a `size x size` square centred at a random pixel (clipped at the
    /// borders).
    Cutout { size: usize },
    /// Multiplicative brightness, contrast and saturation factors drawn from
    /// `[1 - strength, 1 + strength]`.
    ColorJitter { strength: f64 },
    RandomGrayscale { p: f64 },
}

impl AugmentOp {
    fn changes_values(&self) -> bool {
        matches!(self, AugmentOp::ColorJitter { .. } | AugmentOp::RandomGrayscale { .. })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPolicy {
    pub ops: Vec<AugmentOp>,
}

impl AugmentPolicy {
    pub fn identity() -> Self {
        Self { ops: Vec::new() }
    }

    pub fn normalize_only(mean: &[f64], std: &[f64]) -> Self {
        Self {
            ops: vec![AugmentOp::Normalize {
                mean: mean.to_vec(),
                std: std.to_vec(),
            }],
        }
    }

    /// Crop, flip, normalise.
    pub fn standard(pad: usize, mean: &[f64], std: &[f64]) -> Self {
        Self {
            ops: vec![
                AugmentOp::RandomCrop { pad },
                AugmentOp::HorizontalFlip { p: 0.5 },
                AugmentOp::Normalize {
                    mean: mean.to_vec(),
                    std: std.to_vec(),
                },
            ],
        }
    }

    /// Standard ops plus colour jitter (0.4), grayscale (p = 0.2) and cutout.
    pub fn full(pad: usize, cutout: usize, mean: &[f64], std: &[f64]) -> Self {
        Self {
            ops: vec![
                AugmentOp::RandomCrop { pad },
                AugmentOp::HorizontalFlip { p: 0.5 },
                AugmentOp::ColorJitter { strength: 0.4 },
                AugmentOp::RandomGrayscale { p: 0.2 },
                AugmentOp::Normalize {
                    mean: mean.to_vec(),
                    std: std.to_vec(),
                },
                AugmentOp::Cutout { size: cutout },
            ],
        }
    }

    /// Normalize may appear once, and no value-changing op may follow it.
    pub fn validate(&self) -> Result<()> {
        let mut seen_norm = false;
        for op in &self.ops {
            match op {
                AugmentOp::Normalize { mean, std } => {
                    if seen_norm {
                        return Err(Error::Config("augment: normalize appears twice".into()));
                    }
                    if mean.len() != std.len() || std.iter().any(|&s| !(s > 0.0)) {
                        return Err(Error::Config("augment: bad normalize statistics".into()));
                    }
                    seen_norm = true;
                }
                op if op.changes_values() && seen_norm => {
                    return Err(Error::Config(format!(
                        "augment: {op:?} must come before normalize"
                    )));
                }
                AugmentOp::HorizontalFlip { p } | AugmentOp::RandomGrayscale { p }
                    if !(0.0..=1.0).contains(p) =>
                {
                    return Err(Error::Config(format!("augment: probability {p} outside [0, 1]")));
                }
                AugmentOp::ColorJitter { strength } if !(0.0..1.0).contains(strength) => {
                    return Err(Error::Config(format!(
                        "augment: jitter strength {strength} outside [0, 1)"
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn dims(image: &Tensor) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::shape("augment", &[image.shape()])),
    }
}

pub fn flip_horizontal(image: &Tensor) -> Result<Tensor> {
    let (_, _, w) = dims(image)?;
    let mut out = image.clone();
    for row in out.data_mut().chunks_mut(w) {
        row.reverse();
    }
    Ok(out)
}

/// Pads by `pad` with zeros and crops the window whose top-left corner is at
/// `(dy, dx)` in padded coordinates.
pub fn crop_at(image: &Tensor, pad: usize, dy: usize, dx: usize) -> Result<Tensor> {
    let (c, h, w) = dims(image)?;
    if dy > 2 * pad || dx > 2 * pad {
        return Err(Error::Invalid("crop offset outside padded image".into()));
    }
    let mut out = Tensor::zeros(&[c, h, w]);
    let src = image.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for y in 0..h {
            let sy = (y + dy) as isize - pad as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let sx = (x + dx) as isize - pad as isize;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                dst[(ch * h + y) * w + x] = src[(ch * h + sy as usize) * w + sx as usize];
            }
        }
    }
    Ok(out)
}

/// Zeroes the `size x size` square with top-left corner `(y0, x0)`, clipped
/// to the image.
pub fn cutout_at(image: &Tensor, y0: isize, x0: isize, size: usize) -> Result<Tensor> {
    let (c, h, w) = dims(image)?;
    if size > h || size > w {
        return Err(Error::Invalid(format!(
            "cutout size {size} exceeds image side {}",
            h.min(w)
        )));
    }
    let mut out = image.clone();
    let d = out.data_mut();
    for ch in 0..c {
        for y in y0.max(0)..(y0 + size as isize).min(h as isize) {
            for x in x0.max(0)..(x0 + size as isize).min(w as isize) {
                d[(ch * h + y as usize) * w + x as usize] = 0.0;
            }
        }
    }
    Ok(out)
}

fn grayscale(image: &Tensor) -> Result<Tensor> {
    let (c, h, w) = dims(image)?;
    let mut out = image.clone();
    let hw = h * w;
    for p in 0..hw {
        let m = (0..c).map(|ch| image.data()[ch * hw + p]).sum::<f64>() / c as f64;
        for ch in 0..c {
            out.data_mut()[ch * hw + p] = m;
        }
    }
    Ok(out)
}

fn jitter(image: &Tensor, brightness: f64, contrast: f64, saturation: f64) -> Result<Tensor> {
    let (c, h, w) = dims(image)?;
    let hw = h * w;
    let mut x: Vec<f64> = image.data().iter().map(|v| (v * brightness).clamp(0.0, 1.0)).collect();
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    for v in x.iter_mut() {
        *v = ((*v - mean) * contrast + mean).clamp(0.0, 1.0);
    }
    if c > 1 {
        for p in 0..hw {
            let g = (0..c).map(|ch| x[ch * hw + p]).sum::<f64>() / c as f64;
            for ch in 0..c {
                let v = &mut x[ch * hw + p];
                *v = ((*v - g) * saturation + g).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(image.shape().to_vec(), x)
}

fn normalize(image: &Tensor, mean: &[f64], std: &[f64]) -> Result<Tensor> {
    let (c, h, w) = dims(image)?;
    if mean.len() != c {
        return Err(Error::Invalid(format!(
            "normalize has {} channels, image has {c}",
            mean.len()
        )));
    }
    let mut out = image.clone();
    for (ch, plane) in out.data_mut().chunks_mut(h * w).enumerate() {
        for v in plane {
            *v = (*v - mean[ch]) / std[ch];
        }
    }
    Ok(out)
}

/// Applies `policy` to a `[C, H, W]` image. Draws from `rng` in a fixed order
/// so that equal generator states give equal outputs.
pub fn augment(image: &Tensor, policy: &AugmentPolicy, rng: &mut impl Rng) -> Result<Tensor> {
    let (_, h, w) = dims(image)?;
    let mut x = image.clone();
    for op in &policy.ops {
        x = match op {
            AugmentOp::RandomCrop { pad } => {
                let dy = rng.gen_range(0..=2 * pad);
                let dx = rng.gen_range(0..=2 * pad);
                crop_at(&x, *pad, dy, dx)?
            }
            AugmentOp::HorizontalFlip { p } => {
                if rng.gen::<f64>() < *p {
                    flip_horizontal(&x)?
                } else {
                    x
                }
            }
            AugmentOp::Normalize { mean, std } => normalize(&x, mean, std)?,
            AugmentOp::Cutout { size } => {
                if *size > h || *size > w {
                    return Err(Error::Invalid(format!(
                        "cutout size {size} exceeds image side {}",
                        h.min(w)
                    )));
                }
                let cy = rng.gen_range(0..h) as isize;
                let cx = rng.gen_range(0..w) as isize;
                let half = (*size / 2) as isize;
                cutout_at(&x, cy - half, cx - half, *size)?
            }
            AugmentOp::ColorJitter { strength } => {
                let s = *strength;
                let mut f = || rng.gen_range(1.0 - s..=1.0 + s);
                let (b, c, sat) = (f(), f(), f());
                jitter(&x, b, c, sat)?
            }
            AugmentOp::RandomGrayscale { p } => {
                if rng.gen::<f64>() < *p {
                    grayscale(&x)?
                } else {
                    x
                }
            }
        };
    }
    Ok(x)
}

/// Two independent draws of `policy` on the same image.
pub fn make_views(
    image: &Tensor,
    policy: &AugmentPolicy,
    rng: &mut impl Rng,
) -> Result<(Tensor, Tensor)> {
    let a = augment(image, policy, rng)?;
    let b = augment(image, policy, rng)?;
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor {
        Tensor::new(vec![c, h, w], (0..c * h * w).map(|i| i as f64 / (c * h * w) as f64).collect())
            .unwrap()
    }

    #[test]
    fn flip_is_an_involution() {
        let img = ramp(3, 4, 5);
        let p = AugmentPolicy {
            ops: vec![
                AugmentOp::HorizontalFlip { p: 1.0 },
                AugmentOp::HorizontalFlip { p: 1.0 },
            ],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(augment(&img, &p, &mut rng).unwrap(), img);
    }

    #[test]
    fn normalize_mean_image_is_zero() {
        let img = Tensor::full(&[2, 3, 3], 0.4);
        let p = AugmentPolicy::normalize_only(&[0.4, 0.4], &[0.2, 0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(augment(&img, &p, &mut rng).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interior_cutout_zeroes_square() {
        let img = Tensor::ones(&[3, 8, 8]);
        let out = cutout_at(&img, 2, 3, 3).unwrap();
        for plane in out.data().chunks(64) {
            assert_eq!(plane.iter().filter(|&&v| v == 0.0).count(), 9);
        }
        assert!(cutout_at(&img, 0, 0, 9).is_err());
        let p = AugmentPolicy {
            ops: vec![AugmentOp::Cutout { size: 9 }],
        };
        assert!(augment(&img, &p, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn crop_with_zero_offset_shifts() {
        let img = ramp(1, 3, 3);
        let same = crop_at(&img, 1, 1, 1).unwrap();
        assert_eq!(same, img);
        let shifted = crop_at(&img, 1, 0, 0).unwrap();
        assert_eq!(shifted.data()[0], 0.0);
        assert_eq!(shifted.data()[4], img.data()[0]);
    }

    #[test]
    fn shapes_preserved_and_deterministic() {
        let img = ramp(3, 8, 8);
        let p = AugmentPolicy::full(2, 3, &[0.5; 3], &[0.25; 3]);
        p.validate().unwrap();
        let a = augment(&img, &p, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = augment(&img, &p, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a.shape(), img.shape());
        assert_eq!(a, b);
    }

    #[test]
    fn views() {
        let img = ramp(3, 4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = make_views(&img, &AugmentPolicy::identity(), &mut rng).unwrap();
        assert_eq!(a, img);
        assert_eq!(b, img);
        let flip = AugmentPolicy {
            ops: vec![AugmentOp::HorizontalFlip { p: 1.0 }],
        };
        let (a, b) = make_views(&img, &flip, &mut rng).unwrap();
        assert_eq!(a, flip_horizontal(&img).unwrap());
        assert_eq!(a, b);
        let full = AugmentPolicy::full(1, 2, &[0.0; 3], &[1.0; 3]);
        let x = make_views(&img, &full, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let y = make_views(&img, &full, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn grayscale_equalises_channels() {
        let img = ramp(3, 2, 2);
        let g = grayscale(&img).unwrap();
        assert_eq!(&g.data()[0..4], &g.data()[4..8]);
    }

    #[test]
    fn policy_order_rules() {
        let bad = AugmentPolicy {
            ops: vec![
                AugmentOp::Normalize {
                    mean: vec![0.0],
                    std: vec![1.0],
                },
                AugmentOp::ColorJitter { strength: 0.4 },
            ],
        };
        assert!(bad.validate().is_err());
        let twice = AugmentPolicy {
            ops: vec![
                AugmentOp::Normalize {
                    mean: vec![0.0],
                    std: vec![1.0],
                };
                2
            ],
        };
        assert!(twice.validate().is_err());
    }
}
