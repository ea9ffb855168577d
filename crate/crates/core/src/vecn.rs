//! Small fixed-dimension vector helpers on `[f64; N]`.

pub type Vector<const N: usize> = [f64; N];

#[inline]
pub fn zero<const N: usize>() -> Vector<N> {
    [0.0; N]
}

#[inline]
pub fn add<const N: usize>(a: &Vector<N>, b: &Vector<N>) -> Vector<N> {
    std::array::from_fn(|i| a[i] + b[i])
}

#[inline]
pub fn sub<const N: usize>(a: &Vector<N>, b: &Vector<N>) -> Vector<N> {
    std::array::from_fn(|i| a[i] - b[i])
}

#[inline]
pub fn scale<const N: usize>(a: &Vector<N>, s: f64) -> Vector<N> {
    std::array::from_fn(|i| a[i] * s)
}

/// `a + s * b`
#[inline]
pub fn axpy<const N: usize>(a: &Vector<N>, s: f64, b: &Vector<N>) -> Vector<N> {
    std::array::from_fn(|i| a[i] + s * b[i])
}

#[inline]
pub fn dot<const N: usize>(a: &Vector<N>, b: &Vector<N>) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2<const N: usize>(a: &Vector<N>) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm<const N: usize>(a: &Vector<N>) -> f64 {
    norm2(a).sqrt()
}

/// Unit vector along `a`, or `None` for the zero vector.
#[inline]
pub fn normalize<const N: usize>(a: &Vector<N>) -> Option<Vector<N>> {
    let n = norm(a);
    if n > 0.0 && n.is_finite() {
        Some(scale(a, 1.0 / n))
    } else {
        None
    }
}

pub fn unit<const N: usize>(axis: usize) -> Vector<N> {
    let mut e = [0.0; N];
    e[axis] = 1.0;
    e
}

/// Orthonormal frame whose first column is `axis` (assumed unit).
///
/// Built from the Householder reflection exchanging `e_0` and `axis`, so the
/// remaining columns span the orthogonal complement of `axis`.
pub fn frame<const N: usize>(axis: &Vector<N>) -> [Vector<N>; N] {
    let mut w = *axis;
    w[0] -= 1.0;
    let w2 = norm2(&w);
    if w2 < 1e-24 {
        return std::array::from_fn(unit);
    }
    // H = I - 2 w w^T / |w|^2 maps e_0 to axis; its columns are the frame.
    std::array::from_fn(|j| {
        let mut col = unit::<N>(j);
        let c = 2.0 * w[j] / w2;
        for i in 0..N {
            col[i] -= c * w[i];
        }
        col
    })
}

/// Expand local coordinates `c` in the frame `f`: `sum_j c[j] f[j]`.
#[inline]
pub fn expand<const N: usize>(f: &[Vector<N>; N], c: &Vector<N>) -> Vector<N> {
    let mut out = [0.0; N];
    for (j, col) in f.iter().enumerate() {
        if c[j] != 0.0 {
            for i in 0..N {
                out[i] += c[j] * col[i];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_is_orthonormal_with_axis_first() {
        let axis = normalize(&[0.3, -0.4, 0.87]).unwrap();
        let f = frame(&axis);
        for i in 0..3 {
            for j in 0..3 {
                let d = dot(&f[i], &f[j]);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-14);
            }
        }
        for i in 0..3 {
            assert!((f[0][i] - axis[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn frame_of_e0_is_identity() {
        let f = frame(&[1.0, 0.0]);
        assert_eq!(f, [[1.0, 0.0], [0.0, 1.0]]);
    }
}
