use crate::error::{Error, Result};
use crate::linalg::{Mat, Real};

/// Fixed sinusoidal table: `(pos, 2i) = sin(pos / 10000^(2i/d))`,
/// `(pos, 2i+1) = cos(pos / 10000^(2i/d))`.
pub fn sinusoidal_pe<T: Real>(n_positions: usize, d_model: usize) -> Result<Mat<T>> {
    if !d_model.is_multiple_of(2) {
        return Err(Error::validation(format!(
            "sinusoidal encoding needs an even width, got {d_model}"
        )));
    }
    let mut pe = Mat::zeros(n_positions, d_model);
    for pos in 0..n_positions {
        let row = pe.row_mut(pos);
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            row[2 * i] = T::of(angle.sin());
            row[2 * i + 1] = T::of(angle.cos());
        }
    }
    Ok(pe)
}
