//! Raw numeric kernels behind the graph ops. Everything here works on
//! plain slices and knows nothing about the tape.

use super::scalar::Scalar;

/// Pads a shape of rank <= 4 on the left with ones.
pub(crate) fn pad4(shape: &[usize]) -> [usize; 4] {
    let mut out = [1usize; 4];
    let off = 4 - shape.len();
    out[off..].copy_from_slice(shape);
    out
}

pub(crate) fn strides4(shape: &[usize; 4]) -> [usize; 4] {
    [
        shape[1] * shape[2] * shape[3],
        shape[2] * shape[3],
        shape[3],
        1,
    ]
}

/// Strides of `shape` when read as broadcast to `out` (zero on broadcast axes).
pub(crate) fn broadcast_strides(shape: &[usize; 4], out: &[usize; 4]) -> [usize; 4] {
    let s = strides4(shape);
    let mut b = [0usize; 4];
    for i in 0..4 {
        b[i] = if shape[i] == out[i] { s[i] } else { 0 };
    }
    b
}

/// Visits every index of `out` together with the matching offsets into `a`
/// and `b` under broadcasting strides.
#[inline]
pub(crate) fn for_each_broadcast(
    out: &[usize; 4],
    sa: &[usize; 4],
    sb: &[usize; 4],
    mut f: impl FnMut(usize, usize, usize),
) {
    let mut o = 0;
    for i0 in 0..out[0] {
        for i1 in 0..out[1] {
            for i2 in 0..out[2] {
                let base_a = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                let base_b = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                for i3 in 0..out[3] {
                    f(o, base_a + i3 * sa[3], base_b + i3 * sb[3]);
                    o += 1;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Convolution

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
}

/// Output columns `ox` whose input column `ox·stride + kx − pad` lies
/// inside the row, as a half-open range.
fn valid_columns(g: &ConvGeom, kx: usize) -> (usize, usize) {
    let shift = kx as isize - g.pad as isize;
    let s = g.stride as isize;
    // ox·s + shift >= 0  and  ox·s + shift <= w − 1
    let lo = if shift >= 0 { 0 } else { (-shift + s - 1) / s };
    let last = g.w as isize - 1 - shift;
    let hi = if last < 0 { 0 } else { (last / s + 1).min(g.wo as isize) };
    (lo as usize, (hi as usize).max(lo as usize))
}

pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * cols..(row + 1) * cols];
                let (lo, hi) = valid_columns(g, kx);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize || lo == hi {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    let first = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (d, s) in line[lo..hi].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                            *d = *s;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &col[row * cols..(row + 1) * cols];
                let (lo, hi) = valid_columns(g, kx);
                if lo == hi {
                    continue;
                }
                let first = lo * g.stride + kx - g.pad;
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let line = &src[oy * g.wo + lo..oy * g.wo + hi];
                    for (d, s) in dst[first..].iter_mut().step_by(g.stride).zip(line) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

/// Row-major `c[m×n] = a[m×k] · b[k×n] (+ c if accumulate)`, with optional
/// transposition of either operand.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_transposed: bool,
    b: &[T],
    b_transposed: bool,
    c: &mut [T],
    accumulate: bool,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: slice lengths checked above; strides describe dense layouts.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

// ---------------------------------------------------------------------------
// Bilinear sampling

/// Resolved sampling position along one image axis.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AxisSample<T> {
    pub i0: usize,
    pub frac: T,
    /// 1 when the position lies inside the image, 0 when clamped to the edge.
    pub gate: T,
    /// 0 interior, 1 snapped to an integer, 2 clamped.
    pub state: u8,
}

/// Maps a pixel-space coordinate onto the two-tap cell used for
/// interpolation. Integer positions (within `SNAP_EPS`) resolve to the cell
/// on their left, with the fraction pinned to 1 so the value is exact.
#[inline]
pub(crate) fn axis_sample<T: Scalar>(u: T, size: usize) -> AxisSample<T> {
    let last = T::c((size - 1) as f64);
    if u < T::zero() {
        return AxisSample {
            i0: 0,
            frac: T::zero(),
            gate: T::zero(),
            state: 2,
        };
    }
    if u > last {
        return AxisSample {
            i0: size - 2,
            frac: T::one(),
            gate: T::zero(),
            state: 2,
        };
    }
    let k = u.round();
    if (u - k).abs().f64() <= T::SNAP_EPS {
        let k = k.to_usize().unwrap_or(0).min(size - 1);
        if k == 0 {
            return AxisSample {
                i0: 0,
                frac: T::zero(),
                gate: T::one(),
                state: 1,
            };
        }
        return AxisSample {
            i0: k - 1,
            frac: T::one(),
            gate: T::one(),
            state: 1,
        };
    }
    let f = u.floor();
    let i0 = f.to_usize().unwrap_or(0).min(size - 2);
    AxisSample {
        i0,
        frac: u - T::c(i0 as f64),
        gate: T::one(),
        state: 0,
    }
}

#[inline]
pub(crate) fn unnormalize<T: Scalar>(x: T, size: usize) -> T {
    (x + T::one()) * T::c((size - 1) as f64 * 0.5)
}

// ---------------------------------------------------------------------------
// Rodrigues rotation and its derivative

/// Coefficients of `R = I + a·[ω]× + b·[ω]×²` together with `a'(θ)/θ` and
/// `b'(θ)/θ`.
pub(crate) fn rodrigues_coeffs(theta: f64) -> (f64, f64, f64, f64) {
    let t2 = theta * theta;
    if theta < 1e-2 {
        let a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
        let b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
        let da = -1.0 / 3.0 + t2 / 30.0;
        let db = -1.0 / 12.0 + t2 / 180.0;
        (a, b, da, db)
    } else {
        let (s, c) = theta.sin_cos();
        let a = s / theta;
        let b = (1.0 - c) / t2;
        let da = (theta * c - s) / (t2 * theta);
        let db = (theta * s - 2.0 * (1.0 - c)) / (t2 * t2);
        (a, b, da, db)
    }
}

fn skew(w: [f64; 3]) -> [[f64; 3]; 3] {
    [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
}

fn mat_mul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Rotation matrix for an axis-angle vector.
pub(crate) fn rodrigues(w: [f64; 3]) -> [[f64; 3]; 3] {
    let theta = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    let k = skew(w);
    let mut r = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    if theta < 1e-7 {
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] += k[i][j];
            }
        }
        return r;
    }
    let (a, b, _, _) = rodrigues_coeffs(theta);
    let k2 = mat_mul3(&k, &k);
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] += a * k[i][j] + b * k2[i][j];
        }
    }
    r
}

/// Jacobian `dR/dω_m` for m = 0..3.
pub(crate) fn rodrigues_jacobian(w: [f64; 3]) -> [[[f64; 3]; 3]; 3] {
    let theta = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    let mut out = [[[0.0; 3]; 3]; 3];
    let basis = |m: usize| {
        let mut e = [0.0; 3];
        e[m] = 1.0;
        skew(e)
    };
    if theta < 1e-7 {
        for (m, o) in out.iter_mut().enumerate() {
            *o = basis(m);
        }
        return out;
    }
    let (a, b, da, db) = rodrigues_coeffs(theta);
    let k = skew(w);
    let k2 = mat_mul3(&k, &k);
    for (m, o) in out.iter_mut().enumerate() {
        let e = basis(m);
        let ek = mat_mul3(&e, &k);
        let ke = mat_mul3(&k, &e);
        for i in 0..3 {
            for j in 0..3 {
                o[i][j] = da * w[m] * k[i][j]
                    + a * e[i][j]
                    + db * w[m] * k2[i][j]
                    + b * (ek[i][j] + ke[i][j]);
            }
        }
    }
    out
}
