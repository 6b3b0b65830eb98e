//! Small fixed-dimension vector helpers used throughout the mesh and
//! assembly code. Points are plain `[f64; 3]`.

pub type Point = [f64; 3];

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Point, b: Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

/// Signed volume of the tetrahedron (p0, p1, p2, p3).
#[inline]
pub fn signed_volume(p: &[Point; 4]) -> f64 {
    let a = sub(p[1], p[0]);
    let b = sub(p[2], p[0]);
    let c = sub(p[3], p[0]);
    dot(a, cross(b, c)) / 6.0
}

/// Area of the triangle (p0, p1, p2).
#[inline]
pub fn triangle_area(p: &[Point; 3]) -> f64 {
    norm(cross(sub(p[1], p[0]), sub(p[2], p[0]))) / 2.0
}

/// Barycentric coordinates of `x` with respect to the tetrahedron `p`.
/// The result sums to 1; negative entries mean `x` lies outside.
pub fn barycentric(p: &[Point; 4], x: Point) -> [f64; 4] {
    let v = signed_volume(p);
    let mut lam = [0.0; 4];
    for i in 0..4 {
        let mut q = *p;
        q[i] = x;
        lam[i] = signed_volume(&q) / v;
    }
    lam
}

/// Gradients of the four barycentric (hat) functions on a tetrahedron.
/// Gradient of hat `i` is constant; hats sum to 1, so gradients sum to 0.
pub fn barycentric_gradients(p: &[Point; 4]) -> [Point; 4] {
    let v6 = 6.0 * signed_volume(p);
    let mut grads = [[0.0; 3]; 4];
    // grad(lambda_i) = (opposite face normal, inward) * area-weighted / (3 V)
    // computed as cross products of the opposite edges
    for i in 0..4 {
        let (a, b, c) = match i {
            0 => (p[1], p[2], p[3]),
            1 => (p[0], p[3], p[2]),
            2 => (p[0], p[1], p[3]),
            _ => (p[0], p[2], p[1]),
        };
        let n = cross(sub(b, a), sub(c, a));
        grads[i] = scale(n, -1.0 / v6);
    }
    grads
}

/// Distance from `x` to the closed tetrahedron `p` (0 if inside).
pub fn point_tet_distance(p: &[Point; 4], x: Point) -> f64 {
    let lam = barycentric(p, x);
    if lam.iter().all(|&l| l >= -1e-14) {
        return 0.0;
    }
    let faces: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];
    let mut best = f64::INFINITY;
    for f in faces {
        let t = [p[f[0]], p[f[1]], p[f[2]]];
        best = best.min(point_triangle_distance(&t, x));
    }
    best
}

/// Distance from `x` to the closed triangle `t`.
pub fn point_triangle_distance(t: &[Point; 3], x: Point) -> f64 {
    // project onto the triangle plane, then clamp to edges if outside
    let e0 = sub(t[1], t[0]);
    let e1 = sub(t[2], t[0]);
    let d = sub(t[0], x);
    let a = dot(e0, e0);
    let b = dot(e0, e1);
    let c = dot(e1, e1);
    let d0 = dot(e0, d);
    let d1 = dot(e1, d);
    let det = a * c - b * b;
    let mut s = b * d1 - c * d0;
    let mut tt = b * d0 - a * d1;
    if s + tt <= det {
        if s < 0.0 {
            if tt < 0.0 {
                if d0 < 0.0 {
                    s = (-d0 / a).clamp(0.0, 1.0);
                    tt = 0.0;
                } else {
                    s = 0.0;
                    tt = (-d1 / c).clamp(0.0, 1.0);
                }
            } else {
                s = 0.0;
                tt = (-d1 / c).clamp(0.0, 1.0);
            }
        } else if tt < 0.0 {
            s = (-d0 / a).clamp(0.0, 1.0);
            tt = 0.0;
        } else {
            let inv = 1.0 / det;
            s *= inv;
            tt *= inv;
        }
    } else {
        if s < 0.0 {
            let tmp0 = b + d0;
            let tmp1 = c + d1;
            if tmp1 > tmp0 {
                let num = tmp1 - tmp0;
                s = (num / (a - 2.0 * b + c)).clamp(0.0, 1.0);
                tt = 1.0 - s;
            } else {
                tt = (-d1 / c).clamp(0.0, 1.0);
                s = 0.0;
            }
        } else if tt < 0.0 {
            let tmp0 = b + d1;
            let tmp1 = a + d0;
            if tmp1 > tmp0 {
                let num = tmp1 - tmp0;
                tt = (num / (a - 2.0 * b + c)).clamp(0.0, 1.0);
                s = 1.0 - tt;
            } else {
                s = (-d0 / a).clamp(0.0, 1.0);
                tt = 0.0;
            }
        } else {
            let num = c + d1 - b - d0;
            s = (num / (a - 2.0 * b + c)).clamp(0.0, 1.0);
            tt = 1.0 - s;
        }
    }
    let closest = add(t[0], add(scale(e0, s), scale(e1, tt)));
    dist(closest, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_tet_volume_and_gradients() {
        let p = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ];
        assert!((signed_volume(&p) - 1.0 / 6.0).abs() < 1e-15);
        let g = barycentric_gradients(&p);
        // hat at vertex 1 is x, so its gradient is e_x
        assert!((g[1][0] - 1.0).abs() < 1e-14);
        assert!(g[1][1].abs() < 1e-14 && g[1][2].abs() < 1e-14);
        // gradients sum to zero
        for k in 0..3 {
            let s: f64 = g.iter().map(|v| v[k]).sum();
            assert!(s.abs() < 1e-14);
        }
    }

    #[test]
    fn barycentric_partition() {
        let p = [
            [0.1, 0.2, 0.0],
            [1.3, 0.1, 0.2],
            [0.2, 1.1, -0.1],
            [0.3, 0.4, 0.9],
        ];
        let x = [0.4, 0.4, 0.2];
        let lam = barycentric(&p, x);
        let s: f64 = lam.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        // reconstruct the point
        for k in 0..3 {
            let xi: f64 = (0..4).map(|i| lam[i] * p[i][k]).sum();
            assert!((xi - x[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn point_tet_distance_inside_and_outside() {
        let p = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ];
        assert_eq!(point_tet_distance(&p, [0.2, 0.2, 0.2]), 0.0);
        let d = point_tet_distance(&p, [0.0, 0.0, 2.0]);
        assert!((d - 1.0).abs() < 1e-12);
    }
}
