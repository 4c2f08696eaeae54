//! Supervised and cross-teaching objectives.
//!
//! Everything here runs in f64 on two-channel logits laid out as
//! `[batch][channel][pixel]`, channel 0 background and channel 1 foreground.
//! Each loss returns its value together with the gradient with respect to the
//! logits. Targets and masks are flat `[batch][pixel]` arrays of 0/1 bytes.

use crate::error::{Error, Result};
use crate::model::Tensor;

/// Smoothing term of the Dice loss.
pub const DICE_EPS: f64 = 1e-5;

/// Default cross-teaching weight.
pub const DEFAULT_LAMBDA: f64 = 0.1;

/// Two-channel logits in double precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits {
    pub batch: usize,
    pub pixels: usize,
    pub data: Vec<f64>,
}

impl Logits {
    pub fn new(batch: usize, pixels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != batch * 2 * pixels {
            return Err(Error::Shape(format!(
                "expected {} logits for batch {batch} of {pixels} pixels, got {}",
                batch * 2 * pixels,
                data.len()
            )));
        }
        Ok(Logits {
            batch,
            pixels,
            data,
        })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.channels() != 2 {
            return Err(Error::Shape(format!("expected 2 channels, got {}", t.channels())));
        }
        Logits::new(
            t.batch(),
            t.plane_len(),
            t.data().iter().map(|&v| v as f64).collect(),
        )
    }

    pub fn zeros_like(&self) -> Self {
        Logits {
            batch: self.batch,
            pixels: self.pixels,
            data: vec![0.0; self.data.len()],
        }
    }

    /// Background and foreground logit of flat pixel `i` (`i = n·pixels + p`).
    #[inline]
    fn pair(&self, i: usize) -> (f64, f64) {
        let (n, p) = (i / self.pixels, i % self.pixels);
        let base = n * 2 * self.pixels + p;
        (self.data[base], self.data[base + self.pixels])
    }

    /// Adds `(d_bg, d_fg)` to the gradient slot of flat pixel `i`.
    #[inline]
    fn add_pair(&mut self, i: usize, d_bg: f64, d_fg: f64) {
        let (n, p) = (i / self.pixels, i % self.pixels);
        let base = n * 2 * self.pixels + p;
        self.data[base] += d_bg;
        self.data[base + self.pixels] += d_fg;
    }

    pub fn len_pixels(&self) -> usize {
        self.batch * self.pixels
    }

    /// Hard labels; exact ties go to background.
    pub fn argmax(&self) -> Vec<u8> {
        (0..self.len_pixels())
            .map(|i| {
                let (b, f) = self.pair(i);
                u8::from(f > b)
            })
            .collect()
    }

    /// Foreground softmax probability per pixel.
    pub fn foreground_prob(&self) -> Vec<f64> {
        (0..self.len_pixels())
            .map(|i| {
                let (b, f) = self.pair(i);
                sigmoid(f - b)
            })
            .collect()
    }

    pub fn axpy(&mut self, alpha: f64, other: &Logits) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// Gradient as an f32 tensor of shape `[batch, 2, h, w]`.
    pub fn to_tensor(&self, h: usize, w: usize) -> Result<Tensor> {
        if h * w != self.pixels {
            return Err(Error::Shape(format!("{h}x{w} does not hold {} pixels", self.pixels)));
        }
        Tensor::from_vec(
            [self.batch, 2, h, w],
            self.data.iter().map(|&v| v as f32).collect(),
        )
    }
}

/// A loss value with its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Logits,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn check_labels(name: &str, v: &[u8], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Shape(format!("{name} has {} pixels, expected {n}", v.len())));
    }
    if let Some(bad) = v.iter().find(|&&t| t > 1) {
        return Err(Error::validation(format!("{name} value {bad} is not 0 or 1")));
    }
    Ok(())
}

/// Mean cross entropy over the pixels selected by `mask` (all pixels when
/// `None`). Selecting no pixel gives exactly 0 with a zero gradient.
pub fn ce_loss(logits: &Logits, target: &[u8], mask: Option<&[u8]>) -> Result<LossGrad> {
    let n = logits.len_pixels();
    check_labels("target", target, n)?;
    if let Some(m) = mask {
        check_labels("mask", m, n)?;
    }
    let selected = |i: usize| mask.is_none_or(|m| m[i] == 1);
    let count = (0..n).filter(|&i| selected(i)).count();
    let mut grad = logits.zeros_like();
    if count == 0 {
        return Ok(LossGrad { value: 0.0, grad });
    }
    let inv = 1.0 / count as f64;
    let mut total = 0.0;
    for i in (0..n).filter(|&i| selected(i)) {
        let (b, f) = logits.pair(i);
        let z = f - b;
        let t = target[i] as f64;
        // -log p(target) with p(fg) = σ(z)
        total += if target[i] == 1 { softplus(-z) } else { softplus(z) };
        let d = (sigmoid(z) - t) * inv;
        grad.add_pair(i, -d, d);
    }
    Ok(LossGrad {
        value: total * inv,
        grad,
    })
}

/// Soft Dice loss on the foreground channel, summed over the whole batch:
/// `1 − (2·Σpg + ε) / (Σp + Σg + ε)`.
pub fn dice_loss(logits: &Logits, target: &[u8]) -> Result<LossGrad> {
    let n = logits.len_pixels();
    check_labels("target", target, n)?;
    let p = logits.foreground_prob();
    let inter: f64 = p.iter().zip(target).map(|(&p, &g)| p * g as f64).sum();
    let sum_p: f64 = p.iter().sum();
    let sum_g = target.iter().map(|&g| g as f64).sum::<f64>();
    let num = 2.0 * inter + DICE_EPS;
    let den = sum_p + sum_g + DICE_EPS;
    let mut grad = logits.zeros_like();
    for (i, (&pi, &g)) in p.iter().zip(target).enumerate() {
        let dp = -(2.0 * g as f64 * den - num) / (den * den);
        let dz = dp * pi * (1.0 - pi);
        grad.add_pair(i, -dz, dz);
    }
    Ok(LossGrad {
        value: 1.0 - num / den,
        grad,
    })
}

/// CE + Dice of one model against one target.
pub fn ce_dice(logits: &Logits, target: &[u8]) -> Result<LossGrad> {
    let ce = ce_loss(logits, target, None)?;
    let dice = dice_loss(logits, target)?;
    let mut grad = ce.grad;
    grad.axpy(1.0, &dice.grad);
    Ok(LossGrad {
        value: ce.value + dice.value,
        grad,
    })
}

/// Supervised objective: `f1` learns the intersection, `f2` the union.
/// Returns the four-term sum and the gradients for `f1` and `f2`.
pub fn supervised_loss(
    f1: &Logits,
    f2: &Logits,
    y_int: &[u8],
    y_uni: &[u8],
) -> Result<(f64, Logits, Logits)> {
    let a = ce_dice(f1, y_int)?;
    let b = ce_dice(f2, y_uni)?;
    Ok((a.value + b.value, a.grad, b.grad))
}

/// Cross teaching inside the uncertain region: each model is trained towards
/// the other's hard prediction. Pseudo-labels are constants, so the gradient
/// for `f1` only comes from its own CE term.
pub fn cross_teaching_loss(f1: &Logits, f2: &Logits, u: &[u8]) -> Result<(f64, Logits, Logits)> {
    if f1.batch != f2.batch || f1.pixels != f2.pixels {
        return Err(Error::Shape("cross teaching needs logits of equal shape".into()));
    }
    let pl1 = f1.argmax();
    let pl2 = f2.argmax();
    let a = ce_loss(f1, &pl2, Some(u))?;
    let b = ce_loss(f2, &pl1, Some(u))?;
    Ok((a.value + b.value, a.grad, b.grad))
}

/// `sup + λ·ct`
pub fn total_loss(sup: f64, ct_u: f64, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    Ok(sup + lambda * ct_u)
}

/// Per-step loss values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub l_sup: f64,
    pub l_ct_u: f64,
    pub l_total: f64,
    pub lambda: f64,
}

/// The full dual objective with the gradients for both models.
pub fn dual_objective(
    f1: &Logits,
    f2: &Logits,
    y_int: &[u8],
    y_uni: &[u8],
    u: &[u8],
    lambda: f64,
) -> Result<(LossReport, Logits, Logits)> {
    let (l_sup, mut g1, mut g2) = supervised_loss(f1, f2, y_int, y_uni)?;
    let (l_ct_u, c1, c2) = cross_teaching_loss(f1, f2, u)?;
    let l_total = total_loss(l_sup, l_ct_u, lambda)?;
    // skipped at λ = 0 so each model's update depends on its own target only
    if lambda > 0.0 {
        g1.axpy(lambda, &c1);
        g2.axpy(lambda, &c2);
    }
    Ok((
        LossReport {
            l_sup,
            l_ct_u,
            l_total,
            lambda,
        },
        g1,
        g2,
    ))
}
