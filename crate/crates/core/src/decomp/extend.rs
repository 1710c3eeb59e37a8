use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Stacks each channel with its `1..=extension` sample-delayed copies.
///
/// The input is time-major (`T x m`). The output is time-major too
/// (`T x (R+1)m`): column `d*m + c` holds channel `c` delayed by `d`
/// samples, zero-filled at the start.
pub fn extend(x: ArrayView2<'_, f64>, extension: usize) -> Result<Array2<f64>> {
    let (t, m) = x.dim();
    if m == 0 {
        return Err(Error::invalid("cannot extend a recording without channels"));
    }
    if t <= extension {
        return Err(Error::invalid(format!(
            "{t} samples are too few for extension factor {extension}"
        )));
    }
    let mut out = Array2::zeros((t, (extension + 1) * m));
    for d in 0..=extension {
        out.slice_mut(s![d.., d * m..(d + 1) * m])
            .assign(&x.slice(s![..t - d, ..]));
    }
    Ok(out)
}
