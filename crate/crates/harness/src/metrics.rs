//! Segmentation metrics over integer label masks.
//!
//! Boundary pixels are those with a 4-neighbour of a different label, on
//! either side of the edge. A predicted boundary pixel counts as correct if a
//! true boundary pixel lies within Chebyshev distance `radius`, and vice versa.

use waveseg::Error;

use crate::error::Result;

fn check_pair(pred: &[u8], truth: &[u8], width: usize) -> Result<usize> {
    if pred.len() != truth.len() || width == 0 || !pred.len().is_multiple_of(width) {
        return Err(Error::Dimension(format!(
            "masks of {} and {} pixels do not share a width-{width} grid",
            pred.len(),
            truth.len()
        ))
        .into());
    }
    Ok(pred.len() / width)
}

/// Pixel confusion counts, rows indexed by truth and columns by prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Confusion {
    pub num_classes: usize,
    pub counts: Vec<u64>,
}

impl Confusion {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn add(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::Dimension(format!(
                "prediction has {} pixels, truth has {}",
                pred.len(),
                truth.len()
            ))
            .into());
        }
        let k = self.num_classes;
        if let Some(&bad) = pred.iter().chain(truth).find(|&&v| v as usize >= k) {
            return Err(Error::Data(format!("class id {bad} out of range for {k} classes")).into());
        }
        for (&p, &t) in pred.iter().zip(truth) {
            self.counts[t as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    /// Per-class IoU; `None` where the class is absent from both prediction and truth.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        let k = self.num_classes;
        (0..k)
            .map(|c| {
                let tp = self.counts[c * k + c];
                let row: u64 = (0..k).map(|j| self.counts[c * k + j]).sum();
                let col: u64 = (0..k).map(|i| self.counts[i * k + c]).sum();
                let union = row + col - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    /// Mean over classes with a non-empty union; 0 when there are none.
    pub fn mean_iou(&self) -> f64 {
        let present: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IouReport {
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

pub fn compute_miou(pred: &[u8], truth: &[u8], num_classes: usize) -> Result<IouReport> {
    let mut c = Confusion::new(num_classes);
    c.add(pred, truth)?;
    Ok(IouReport {
        per_class: c.per_class_iou(),
        mean: c.mean_iou(),
    })
}

pub fn boundary_map(mask: &[u8], width: usize) -> Vec<bool> {
    let height = mask.len().checked_div(width).unwrap_or(0);
    let mut out = vec![false; mask.len()];
    for y in 0..height {
        for x in 0..width {
            let v = mask[y * width + x];
            let differs = (x > 0 && mask[y * width + x - 1] != v)
                || (x + 1 < width && mask[y * width + x + 1] != v)
                || (y > 0 && mask[(y - 1) * width + x] != v)
                || (y + 1 < height && mask[(y + 1) * width + x] != v);
            out[y * width + x] = differs;
        }
    }
    out
}

/// Square (Chebyshev) dilation by `radius`, separable into two 1-D passes.
fn dilate(map: &[bool], width: usize, height: usize, radius: usize) -> Vec<bool> {
    let mut rows = vec![false; map.len()];
    for y in 0..height {
        for x in 0..width {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(width - 1);
            rows[y * width + x] = (lo..=hi).any(|xx| map[y * width + xx]);
        }
    }
    let mut out = vec![false; map.len()];
    for y in 0..height {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(height - 1);
        for x in 0..width {
            out[y * width + x] = (lo..=hi).any(|yy| rows[yy * width + x]);
        }
    }
    out
}

/// Matched and total boundary pixel counts, summable over a dataset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BoundaryCounts {
    pub pred_matched: u64,
    pub pred_total: u64,
    pub true_matched: u64,
    pub true_total: u64,
}

impl BoundaryCounts {
    pub fn from_masks(pred: &[u8], truth: &[u8], width: usize, radius: usize) -> Result<Self> {
        let height = check_pair(pred, truth, width)?;
        let pb = boundary_map(pred, width);
        let tb = boundary_map(truth, width);
        let near_t = dilate(&tb, width, height, radius);
        let near_p = dilate(&pb, width, height, radius);
        let count = |a: &[bool], near: &[bool]| -> (u64, u64) {
            let total = a.iter().filter(|&&v| v).count() as u64;
            let hit = a.iter().zip(near).filter(|(&v, &n)| v && n).count() as u64;
            (hit, total)
        };
        let (pred_matched, pred_total) = count(&pb, &near_t);
        let (true_matched, true_total) = count(&tb, &near_p);
        Ok(Self {
            pred_matched,
            pred_total,
            true_matched,
            true_total,
        })
    }

    pub fn merge(&mut self, other: Self) {
        self.pred_matched += other.pred_matched;
        self.pred_total += other.pred_total;
        self.true_matched += other.true_matched;
        self.true_total += other.true_total;
    }

    /// Harmonic mean of precision and recall; 1 when neither side has a boundary.
    pub fn f1(&self) -> f64 {
        if self.pred_total == 0 && self.true_total == 0 {
            return 1.0;
        }
        if self.pred_total == 0 || self.true_total == 0 {
            return 0.0;
        }
        let p = self.pred_matched as f64 / self.pred_total as f64;
        let r = self.true_matched as f64 / self.true_total as f64;
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

pub fn compute_boundary_f1(pred: &[u8], truth: &[u8], width: usize, radius: usize) -> Result<f64> {
    Ok(BoundaryCounts::from_masks(pred, truth, width, radius)?.f1())
}

/// Per-pixel arg-max over the class axis of `(b, k, h, w)` logits.
pub fn argmax_classes(logits: &waveseg::Tensor) -> Result<Vec<u8>> {
    let (b, k, h, w) = logits.dims4()?;
    let hw = h * w;
    let x = logits.data();
    let mut out = Vec::with_capacity(b * hw);
    for n in 0..b {
        for p in 0..hw {
            let mut best = 0;
            for c in 1..k {
                if x[(n * k + c) * hw + p] > x[(n * k + best) * hw + p] {
                    best = c;
                }
            }
            out.push(best as u8);
        }
    }
    Ok(out)
}
