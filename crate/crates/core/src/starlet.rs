//! Isotropic undecimated (à trous) wavelet transform with the B3-spline
//! scaling kernel.
//!
//! Scale `j` smooths the previous approximation with the separable kernel
//! `(1, 4, 6, 4, 1) / 16` whose taps are spread `2^j` pixels apart. The
//! detail plane is the difference between two successive approximations,
//! so synthesis is just the sum of every plane.

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{Error, Result};

const B3: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Detail planes (finest first) plus the final coarse approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct StarletStack {
    pub details: Vec<Array2<f64>>,
    pub coarse: Array2<f64>,
}

impl StarletStack {
    pub fn scales(&self) -> usize {
        self.details.len()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.coarse.dim()
    }

    /// Iterates over every detail coefficient, all scales pooled.
    pub fn detail_coefficients(&self) -> impl Iterator<Item = f64> + '_ {
        self.details.iter().flat_map(|d| d.iter().copied())
    }
}

/// Mirror reflection without repeating the edge sample: `-1 -> 1`,
/// `length -> length - 2`. Indices far outside are folded repeatedly.
pub fn boundary_extend(index: isize, length: usize) -> usize {
    assert!(length >= 1, "length must be positive");
    if length == 1 {
        return 0;
    }
    let period = 2 * (length as isize - 1);
    let mut i = index.rem_euclid(period);
    if i >= length as isize {
        i = period - i;
    }
    i as usize
}

/// Largest scale count with `2^J <= min(height, width) / 8`, at least 1.
/// Gives 3 scales on 64x64 images and 4 on 128x128.
pub fn default_scales(height: usize, width: usize) -> usize {
    let limit = height.min(width) / 8;
    let mut scales = 1;
    while (1usize << (scales + 1)) <= limit {
        scales += 1;
    }
    scales
}

pub fn check_scales(height: usize, width: usize, scales: usize) -> Result<()> {
    if scales == 0 {
        return Err(Error::InvalidParameter("starlet needs at least one scale".into()));
    }
    if scales >= usize::BITS as usize || (1usize << scales) > height.min(width) {
        return Err(Error::InvalidParameter(format!(
            "{scales} starlet scales too many for a {height}x{width} image"
        )));
    }
    Ok(())
}

/// One separable B3 smoothing pass with holes of `step` pixels.
fn smooth(input: &ArrayView2<f64>, step: usize, rows_tmp: &mut Array2<f64>, out: &mut Array2<f64>) {
    let (height, width) = input.dim();
    let offsets: [isize; 5] = [-2, -1, 0, 1, 2].map(|k| k * step as isize);

    // along each row
    let col_index: Vec<[usize; 5]> = (0..width)
        .map(|x| offsets.map(|o| boundary_extend(x as isize + o, width)))
        .collect();
    for (src, mut dst) in input.rows().into_iter().zip(rows_tmp.rows_mut()) {
        for (x, taps) in col_index.iter().enumerate() {
            let mut acc = 0.0;
            for (w, &k) in B3.iter().zip(taps) {
                acc += w * src[k];
            }
            dst[x] = acc;
        }
    }

    // along each column, processed one output row at a time
    for y in 0..height {
        let taps = offsets.map(|o| boundary_extend(y as isize + o, height));
        let mut dst = out.row_mut(y);
        dst.fill(0.0);
        for (w, &k) in B3.iter().zip(&taps) {
            dst.scaled_add(*w, &rows_tmp.row(k));
        }
    }
}

/// Forward transform with `scales` detail planes.
pub fn starlet_forward(image: &ArrayView2<f64>, scales: usize) -> Result<StarletStack> {
    let (height, width) = image.dim();
    check_scales(height, width, scales)?;
    let mut current = image.to_owned();
    let mut tmp = Array2::zeros((height, width));
    let mut details = Vec::with_capacity(scales);
    for j in 0..scales {
        let mut next = Array2::zeros((height, width));
        smooth(&current.view(), 1 << j, &mut tmp, &mut next);
        let mut detail = current;
        detail -= &next;
        details.push(detail);
        current = next;
    }
    Ok(StarletStack {
        details,
        coarse: current,
    })
}

/// Inverse transform: the sum of every plane.
pub fn starlet_synthesis(stack: &StarletStack) -> Result<Array2<f64>> {
    let dim = stack.coarse.dim();
    let mut image = stack.coarse.clone();
    for (j, plane) in stack.details.iter().enumerate() {
        if plane.dim() != dim {
            return Err(Error::Shape(format!(
                "detail plane {j} is {:?}, coarse plane is {:?}",
                plane.dim(),
                dim
            )));
        }
        Zip::from(&mut image).and(plane).for_each(|a, &b| *a += b);
    }
    Ok(image)
}
