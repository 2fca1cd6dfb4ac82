//! Content, gradient-difference and SSIM losses, and the composite
//! objectives minimized by each training phase.
//!
//! Every loss comes in a value-only form and a `*_grad` form that also
//! returns the gradient with respect to the image arguments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{ssim_with_grad, Image, SsimWindow};

pub const CONTENT: &str = "content";
pub const GRADIENT: &str = "gradient";
pub const SSIM: &str = "ssim";

/// A scalar loss and its named parts. `value` is the sum of the parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub value: f64,
    pub components: Vec<(String, f64)>,
}

impl LossValue {
    pub fn single(name: &str, value: f64) -> Self {
        LossValue {
            value,
            components: vec![(name.to_string(), value)],
        }
    }

    pub fn from_components(components: Vec<(String, f64)>) -> Self {
        LossValue {
            value: components.iter().map(|(_, v)| v).sum(),
            components,
        }
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| v)
    }

    pub fn merge(parts: impl IntoIterator<Item = LossValue>) -> Self {
        let mut components: Vec<(String, f64)> = Vec::new();
        for part in parts {
            for (name, v) in part.components {
                match components.iter_mut().find(|(n, _)| *n == name) {
                    Some(slot) => slot.1 += v,
                    None => components.push((name, v)),
                }
            }
        }
        LossValue::from_components(components)
    }

    /// Component-wise mean of several loss values.
    pub fn mean(values: &[LossValue]) -> Self {
        let n = values.len().max(1) as f64;
        let mut merged = LossValue::merge(values.iter().cloned());
        for c in &mut merged.components {
            c.1 /= n;
        }
        merged.value /= n;
        merged
    }
}

/// Finite-difference direction for the gradient-difference loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Horizontal,
    Vertical,
}

/// The direction set over which gradient differences are summed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Direction>", into = "Vec<Direction>")]
pub struct GradientSet(Vec<Direction>);

impl GradientSet {
    pub fn new(dirs: Vec<Direction>) -> Result<Self> {
        if dirs.is_empty() {
            return Err(Error::InvalidArgument("gradient direction set is empty".into()));
        }
        Ok(GradientSet(dirs))
    }

    pub fn directions(&self) -> &[Direction] {
        &self.0
    }
}

impl Default for GradientSet {
    fn default() -> Self {
        GradientSet(vec![Direction::Horizontal, Direction::Vertical])
    }
}

impl TryFrom<Vec<Direction>> for GradientSet {
    type Error = Error;
    fn try_from(v: Vec<Direction>) -> Result<Self> {
        GradientSet::new(v)
    }
}

impl From<GradientSet> for Vec<Direction> {
    fn from(g: GradientSet) -> Self {
        g.0
    }
}

#[inline]
fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute difference.
pub fn l1_content(a: &Image, b: &Image) -> Result<LossValue> {
    l1_content_grad(a, b).map(|(v, _)| v)
}

/// [`l1_content`] and its subgradient with respect to `a` (the gradient with
/// respect to `b` is the negation).
pub fn l1_content_grad(a: &Image, b: &Image) -> Result<(LossValue, Image)> {
    a.ensure_same_dims(b)?;
    let n = a.len() as f64;
    let mut sum = 0.0;
    let grad: Vec<f64> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x - y;
            sum += d.abs();
            sign(d) / n
        })
        .collect();
    let (h, w) = a.dims();
    Ok((LossValue::single(CONTENT, sum / n), Image::new(h, w, grad)?))
}

/// Mean over pixels of the summed absolute differences between forward
/// differences of `a` and `b`. Differences at the last row/column are zero.
pub fn l1_gradient_diff(a: &Image, b: &Image, dirs: &GradientSet) -> Result<LossValue> {
    l1_gradient_diff_grad(a, b, dirs).map(|(v, _)| v)
}

pub fn l1_gradient_diff_grad(a: &Image, b: &Image, dirs: &GradientSet) -> Result<(LossValue, Image)> {
    a.ensure_same_dims(b)?;
    let (h, w) = a.dims();
    let n = (h * w) as f64;
    let (ad, bd) = (a.data(), b.data());
    let mut grad = vec![0.0; h * w];
    let mut sum = 0.0;
    for &dir in dirs.directions() {
        let (dy, dx) = match dir {
            Direction::Horizontal => (0, 1),
            Direction::Vertical => (1, 0),
        };
        for y in 0..h - dy {
            for x in 0..w - dx {
                let i = y * w + x;
                let j = (y + dy) * w + x + dx;
                let d = (ad[j] - ad[i]) - (bd[j] - bd[i]);
                sum += d.abs();
                let s = sign(d) / n;
                grad[j] += s;
                grad[i] -= s;
            }
        }
    }
    Ok((LossValue::single(GRADIENT, sum / n), Image::new(h, w, grad)?))
}

/// Negative mean SSIM of `s_y` against `x`.
pub fn ssim_loss(s_y: &Image, x: &Image) -> Result<LossValue> {
    ssim_loss_grad(s_y, x, SsimWindow::default()).map(|(v, _)| v)
}

/// [`ssim_loss`] with an explicit window, plus the gradient with respect to `s_y`.
pub fn ssim_loss_grad(s_y: &Image, x: &Image, window: SsimWindow) -> Result<(LossValue, Image)> {
    let (v, g) = ssim_with_grad(s_y, x, window)?;
    Ok((LossValue::single(SSIM, -v), g.map(|d| -d)))
}

/// Per-term weights of the composite objectives. All default to one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub content: f64,
    pub gradient: f64,
    pub ssim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            content: 1.0,
            gradient: 1.0,
            ssim: 1.0,
        }
    }
}

/// Configuration shared by the three training objectives.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Objective {
    pub weights: LossWeights,
    pub directions: GradientSet,
    pub window: SsimWindow,
}

/// Gradients of the FDNN objective with respect to its two prediction inputs.
pub struct FdnnGrads {
    /// With respect to the virtual-codec prediction.
    pub prediction: Image,
    /// With respect to the upsampled description.
    pub upsampled: Image,
}

impl Objective {
    /// Content + gradient difference between a target and a prediction;
    /// returns the gradient with respect to `prediction`.
    pub fn reconstruction_grad(&self, target: &Image, prediction: &Image) -> Result<(LossValue, Image)> {
        let (content, gc) = l1_content_grad(prediction, target)?;
        let (gradient, gg) = l1_gradient_diff_grad(prediction, target, &self.directions)?;
        let w = self.weights;
        let loss = LossValue::from_components(vec![
            (CONTENT.into(), w.content * content.value),
            (GRADIENT.into(), w.gradient * gradient.value),
        ]);
        let grad: Vec<f64> = gc
            .data()
            .iter()
            .zip(gg.data())
            .map(|(c, g)| w.content * c + w.gradient * g)
            .collect();
        let (h, wd) = target.dims();
        Ok((loss, Image::new(h, wd, grad)?))
    }

    pub fn ppnn(&self, x: &Image, restored: &Image) -> Result<LossValue> {
        self.reconstruction_grad(x, restored).map(|(v, _)| v)
    }

    pub fn vcnn(&self, predicted: &Image, restored: &Image) -> Result<LossValue> {
        self.reconstruction_grad(restored, predicted).map(|(v, _)| v)
    }

    pub fn fdnn(&self, x: &Image, predicted: &Image, s_y: &Image) -> Result<LossValue> {
        self.fdnn_grad(x, predicted, s_y).map(|(v, _)| v)
    }

    pub fn fdnn_grad(&self, x: &Image, predicted: &Image, s_y: &Image) -> Result<(LossValue, FdnnGrads)> {
        x.ensure_same_dims(predicted)?;
        x.ensure_same_dims(s_y)?;
        let (rec, g_pred) = self.reconstruction_grad(x, predicted)?;
        let (ssim, g_up) = ssim_loss_grad(s_y, x, self.window)?;
        let w = self.weights.ssim;
        let mut components = rec.components;
        components.push((SSIM.into(), w * ssim.value));
        Ok((
            LossValue::from_components(components),
            FdnnGrads {
                prediction: g_pred,
                upsampled: g_up.map(|d| w * d),
            },
        ))
    }
}

/// Post-processing objective: content + gradient difference of the restored
/// image against ground truth, unit weights.
pub fn ppnn_objective(x: &Image, restored: &Image) -> Result<LossValue> {
    Objective::default().ppnn(x, restored)
}

/// Virtual-codec objective: content + gradient difference of the proxy
/// prediction against the post-processed image.
pub fn vcnn_objective(predicted: &Image, restored: &Image) -> Result<LossValue> {
    Objective::default().vcnn(predicted, restored)
}

/// Feature-description objective: reconstruction terms through the frozen
/// proxy plus the SSIM loss of the upsampled description.
pub fn fdnn_objective(x: &Image, predicted: &Image, s_y: &Image) -> Result<LossValue> {
    Objective::default().fdnn(x, predicted, s_y)
}
