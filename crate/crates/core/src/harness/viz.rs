//! Prediction probabilities over a 2-D input lattice.

use std::path::Path;

use crate::ad::{Matrix, ParamVector};
use crate::error::{Error, Result};
use crate::nn::{classes_from_proba, predict_proba, Head, ModelSpec};

/// Fraction of the data range added on each side of default bounds.
pub const PADDING: f64 = 0.1;

/// `[x_min, x_max, y_min, y_max]` of `data`, widened by 10% of each range.
pub fn padded_bounds(data: &Matrix) -> Result<[f64; 4]> {
    if data.cols() != 2 || data.rows() == 0 {
        return Err(Error::Dimension(format!(
            "bounds need nonempty 2-D data, got {}×{}",
            data.rows(),
            data.cols()
        )));
    }
    let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for row in data.row_iter() {
        b[0] = b[0].min(row[0]);
        b[1] = b[1].max(row[0]);
        b[2] = b[2].min(row[1]);
        b[3] = b[3].max(row[1]);
    }
    let (px, py) = ((b[1] - b[0]) * PADDING, (b[3] - b[2]) * PADDING);
    Ok([b[0] - px, b[1] + px, b[2] - py, b[3] + py])
}

/// Lattice points and their class probabilities. Rows run over `x` first
/// (outer) and `y` (inner).
#[derive(Clone, Debug, PartialEq)]
pub struct ProbGrid {
    pub bounds: [f64; 4],
    pub resolution: usize,
    pub points: Matrix,
    /// One column per class.
    pub probs: Matrix,
}

impl ProbGrid {
    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn classes(&self) -> Vec<usize> {
        classes_from_proba(Head::Categorical, &self.probs)
    }

    /// Predicted class of the lattice cell nearest to `(x, y)`.
    pub fn class_at(&self, x: f64, y: f64) -> usize {
        let [x0, x1, y0, y1] = self.bounds;
        let last = (self.resolution - 1) as f64;
        let ix = (((x - x0) / (x1 - x0)) * last).round().clamp(0.0, last) as usize;
        let iy = (((y - y0) / (y1 - y0)) * last).round().clamp(0.0, last) as usize;
        let row = self.probs.row(ix * self.resolution + iy);
        let mut best = 0;
        for (j, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = j;
            }
        }
        best
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut w = csv::WriterBuilder::new().from_path(path)?;
        let k = self.probs.cols();
        let mut header = vec!["x".to_string(), "y".to_string()];
        header.extend((1..=k).map(|j| format!("p{j}")));
        w.write_record(&header)?;
        for (pt, p) in self.points.row_iter().zip(self.probs.row_iter()) {
            let mut row: Vec<String> = pt.iter().map(|v| v.to_string()).collect();
            row.extend(p.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Evaluates the model on a `resolution × resolution` lattice over `bounds`.
/// A Bernoulli head yields two columns, `1 − p` and `p`.
pub fn export_prob_grid(
    spec: &ModelSpec,
    theta: &ParamVector,
    bounds: [f64; 4],
    resolution: usize,
) -> Result<ProbGrid> {
    if spec.input_dim != 2 {
        return Err(Error::Dimension(format!(
            "probability grids need a model with 2 inputs, this one has {}",
            spec.input_dim
        )));
    }
    if resolution < 2 {
        return Err(Error::Invalid("grid resolution must be at least 2".into()));
    }
    let [x0, x1, y0, y1] = bounds;
    if !(x1 > x0 && y1 > y0) || bounds.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!("degenerate grid bounds {bounds:?}")));
    }
    let step = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (resolution - 1) as f64;
    let mut pts = Vec::with_capacity(2 * resolution * resolution);
    for i in 0..resolution {
        for j in 0..resolution {
            pts.push(step(x0, x1, i));
            pts.push(step(y0, y1, j));
        }
    }
    let points = Matrix::from_vec(resolution * resolution, 2, pts)?;
    let raw = predict_proba(spec, theta, &points)?;
    let probs = match spec.head {
        Head::Bernoulli => {
            let data = raw.as_slice().iter().flat_map(|&p| [1.0 - p, p]).collect();
            Matrix::from_vec(raw.rows(), 2, data)?
        }
        _ => raw,
    };
    Ok(ProbGrid {
        bounds,
        resolution,
        points,
        probs,
    })
}
