//! Pure per-block functions behind the processing plugins. The plugins only
//! slice blocks into frames and call these.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, ArrayView3, Zip};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::scalar::Scalar;

pub const EPSILON: f64 = 1e-6;

/// `(raw - dark) / max(flat - dark, eps)`.
pub fn dark_flat<T: Scalar>(raw: T, dark: T, flat: T) -> T {
    (raw - dark) / (flat - dark).max(T::of(EPSILON))
}

/// `-ln(max(v, eps))`.
pub fn minus_log<T: Scalar>(v: T) -> T {
    -v.max(T::of(EPSILON)).ln()
}

/// `num / max(den, eps)`.
pub fn ratio<T: Scalar>(num: T, den: T) -> T {
    num / den.max(T::of(EPSILON))
}

/// Median over a `[w, a, b]` stack window: every output element `(i, j)`
/// takes the median of the `w × 3 × 3` neighbourhood, clamping at the core
/// edges.
pub fn median_window<T: Scalar>(stack: ArrayView3<'_, T>) -> Array2<T> {
    let (w, a, b) = stack.dim();
    let mut out = Array2::zeros((a, b));
    let mut buf = Vec::with_capacity(w * 9);
    for i in 0..a {
        for j in 0..b {
            buf.clear();
            for k in 0..w {
                for di in [-1isize, 0, 1] {
                    let ii = (i as isize + di).clamp(0, a as isize - 1) as usize;
                    for dj in [-1isize, 0, 1] {
                        let jj = (j as isize + dj).clamp(0, b as isize - 1) as usize;
                        buf.push(stack[[k, ii, jj]]);
                    }
                }
            }
            let mid = buf.len() / 2;
            let (_, m, _) = buf.select_nth_unstable_by(mid, |x, y| x.partial_cmp(y).unwrap_or(Ordering::Equal));
            out[[i, j]] = *m;
        }
    }
    out
}

/// Ram-Lak filter for rows of `n` detector bins spanning unit width, applied
/// by FFT convolution with zero padding to at least twice the next power of
/// two.
pub struct RampFilter<T: Scalar> {
    n: usize,
    padded: usize,
    spectrum: Vec<Complex<T>>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Scalar> std::fmt::Debug for RampFilter<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RampFilter").field("n", &self.n).field("padded", &self.padded).finish()
    }
}

impl<T: Scalar> RampFilter<T> {
    pub fn new(n: usize) -> Self {
        let padded = 2 * n.max(1).next_power_of_two();
        let mut planner = FftPlanner::<T>::new();
        let forward = planner.plan_fft_forward(padded);
        let inverse = planner.plan_fft_inverse(padded);
        // spatial band-limited ramp with sample spacing 1/n, stored circularly
        let delta = 1.0 / n.max(1) as f64;
        let mut kernel = vec![Complex::new(T::zero(), T::zero()); padded];
        for (k, slot) in kernel.iter_mut().enumerate() {
            let off = if k <= padded / 2 { k as isize } else { k as isize - padded as isize };
            let h = if off == 0 {
                1.0 / (4.0 * delta * delta)
            } else if off % 2 != 0 {
                -1.0 / (PI * PI * (off * off) as f64 * delta * delta)
            } else {
                0.0
            };
            // convolution sum times the sample spacing
            *slot = Complex::new(T::of(h * delta), T::zero());
        }
        forward.process(&mut kernel);
        RampFilter { n, padded, spectrum: kernel, forward, inverse }
    }

    pub fn padded_len(&self) -> usize {
        self.padded
    }

    /// Filters one detector row in place.
    pub fn apply(&self, row: &mut [T]) {
        assert_eq!(row.len(), self.n, "row length");
        let mut buf = vec![Complex::new(T::zero(), T::zero()); self.padded];
        for (b, &v) in buf.iter_mut().zip(row.iter()) {
            b.re = v;
        }
        self.forward.process(&mut buf);
        for (b, h) in buf.iter_mut().zip(&self.spectrum) {
            *b *= *h;
        }
        self.inverse.process(&mut buf);
        let scale = T::one() / T::of(self.padded as f64);
        for (r, b) in row.iter_mut().zip(&buf) {
            *r = b.re * scale;
        }
    }
}

/// Uniform angles over [0, π).
pub fn uniform_angles(n_theta: usize) -> Vec<f64> {
    (0..n_theta).map(|k| k as f64 * PI / n_theta as f64).collect()
}

/// Filtered back-projection of one sinogram laid out `[x, θ]` onto an
/// `n_x × n_x` grid `[row, col]`. Detector bin `b` sits at `b - center`
/// pixels from the rotation axis; output pixel `(i, j)` at
/// `(x, y) = (j - center, i - center)`.
pub fn fbp_slice<T: Scalar>(sino: ArrayView2<'_, T>, filter: &RampFilter<T>, angles: &[f64], center: f64) -> Array2<T> {
    let (n_x, n_theta) = sino.dim();
    assert_eq!(angles.len(), n_theta, "one angle per sinogram column");
    let mut filtered = Array2::<T>::zeros((n_theta, n_x));
    for (t, mut row) in filtered.outer_iter_mut().enumerate() {
        row.assign(&sino.column(t));
        filter.apply(row.as_slice_mut().expect("standard layout"));
    }
    let mut out = Array2::<T>::zeros((n_x, n_x));
    for (t, &theta) in angles.iter().enumerate() {
        let (s, c) = theta.sin_cos();
        let q = filtered.row(t);
        for i in 0..n_x {
            let y = i as f64 - center;
            let base = y * s + center;
            for j in 0..n_x {
                let pos = (j as f64 - center) * c + base;
                if pos < 0.0 || pos > (n_x - 1) as f64 {
                    continue;
                }
                let lo = pos.floor() as usize;
                let frac = pos - lo as f64;
                let v = if lo + 1 < n_x {
                    q[lo] * T::of(1.0 - frac) + q[lo + 1] * T::of(frac)
                } else {
                    q[lo]
                };
                out[[i, j]] += v;
            }
        }
    }
    let scale = T::of(PI / n_theta as f64);
    out.mapv_inplace(|v| v * scale);
    out
}

/// Applies `f` elementwise over two equally shaped views.
pub(crate) fn zip_map<T: Scalar>(
    a: &ndarray::ArrayD<T>,
    b: &ndarray::ArrayD<T>,
    f: impl Fn(T, T) -> T,
) -> ndarray::ArrayD<T> {
    Zip::from(a).and(b).map_collect(|&x, &y| f(x, y))
}
