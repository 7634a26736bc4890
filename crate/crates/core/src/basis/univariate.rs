//! One-dimensional basis families. Every function returns the full vector of
//! `count` basis values (or their `order`-th derivatives) at a single point.

use std::f64::consts::{PI, SQRT_2};

/// Clamped uniform knot vector: `degree + 1` copies of each endpoint and
/// `count - degree - 1` equispaced interior knots.
pub(crate) fn clamped_knots(degree: usize, count: usize, lo: f64, hi: f64) -> Vec<f64> {
    let interior = count - degree - 1;
    let mut t = Vec::with_capacity(count + degree + 1);
    t.extend(std::iter::repeat_n(lo, degree + 1));
    for i in 1..=interior {
        t.push(lo + (hi - lo) * i as f64 / (interior + 1) as f64);
    }
    t.extend(std::iter::repeat_n(hi, degree + 1));
    t
}

fn find_span(knots: &[f64], degree: usize, count: usize, x: f64) -> usize {
    if x >= knots[count] {
        return count - 1;
    }
    // knots[degree] <= x < knots[count]; binary search on the active range
    let (mut low, mut high) = (degree, count);
    while high - low > 1 {
        let mid = (low + high) / 2;
        if x < knots[mid] {
            high = mid;
        } else {
            low = mid;
        }
    }
    low
}

/// B-spline values (order 0) or derivatives of the given order. Orders above
/// the degree yield zeros.
pub(crate) fn bspline(degree: usize, count: usize, lo: f64, hi: f64, x: f64, order: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    if order > degree {
        return;
    }
    let knots = clamped_knots(degree, count, lo, hi);
    let p = degree;
    let span = find_span(&knots, p, count, x);

    // Basis functions and derivatives following the classic triangular
    // table: ndu holds basis values (lower) and knot differences (upper).
    let mut ndu = vec![vec![0.0; p + 1]; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }

    let n = order;
    let mut ders = vec![vec![0.0; p + 1]; n + 1];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    let mut a = vec![vec![0.0; p + 1]; 2];
    for r in 0..=p {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for k in 1..=n {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = p - k;
            if r >= k {
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if (r as isize - 1) <= pk as isize { k - 1 } else { p - r };
            for j in j1..=j2 {
                let idx = (rk + j as isize) as usize;
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                d += a[s2][j] * ndu[idx][pk];
            }
            if r <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut factor = p as f64;
    for k in 1..=n {
        for v in ders[k].iter_mut() {
            *v *= factor;
        }
        factor *= (p - k) as f64;
    }
    for j in 0..=p {
        out[span - p + j] = ders[n][j];
    }
}

/// `1, sqrt(2) cos(pi u), sqrt(2) cos(2 pi u), ...` with `u` the position in
/// `[lo, hi]` rescaled to `[0, 1]`; orthonormal under the uniform measure.
pub(crate) fn cosine(count: usize, lo: f64, hi: f64, x: f64, order: usize, out: &mut [f64]) {
    let w = hi - lo;
    let u = (x - lo) / w;
    for (k, v) in out.iter_mut().enumerate().take(count) {
        if k == 0 {
            *v = if order == 0 { 1.0 } else { 0.0 };
            continue;
        }
        let freq = k as f64 * PI;
        let scale = (freq / w).powi(order as i32);
        *v = SQRT_2 * scale * (freq * u + order as f64 * PI / 2.0).cos();
    }
}

/// Shifted Legendre polynomials `sqrt(2k+1) P_k(2u - 1)`, orthonormal under
/// the uniform measure on `[lo, hi]`.
pub(crate) fn legendre(count: usize, lo: f64, hi: f64, x: f64, order: usize, out: &mut [f64]) {
    let w = hi - lo;
    let t = 2.0 * (x - lo) / w - 1.0;
    // table[r][k] = P_k^{(r)}(t)
    let mut table = vec![vec![0.0; count]; order + 1];
    for r in 0..=order {
        for k in 0..count {
            table[r][k] = if k == 0 {
                if r == 0 {
                    1.0
                } else {
                    0.0
                }
            } else if k == 1 {
                match r {
                    0 => t,
                    1 => 1.0,
                    _ => 0.0,
                }
            } else {
                let km = (k - 1) as f64;
                let lower = if r > 0 { table[r - 1][k - 1] } else { 0.0 };
                ((2.0 * km + 1.0) * (t * table[r][k - 1] + r as f64 * lower) - km * table[r][k - 2]) / (km + 1.0)
            };
        }
    }
    let chain = (2.0 / w).powi(order as i32);
    for (k, v) in out.iter_mut().enumerate().take(count) {
        *v = (2.0 * k as f64 + 1.0).sqrt() * table[order][k] * chain;
    }
}
