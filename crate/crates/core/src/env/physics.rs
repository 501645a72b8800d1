use crate::rotmath::{cross3, UnitQuaternion, Vec3};

pub type Mat3 = [[f64; 3]; 3];

const NEWTON_ITERS: usize = 8;

pub(crate) fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn skew(v: &Vec3) -> Mat3 {
    [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

/// Solves `m·x = b` by Cramer's rule.
pub(crate) fn solve3(m: &Mat3, b: &Vec3) -> Vec3 {
    let det = |a: &Mat3| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(m);
    let mut x = [0.0; 3];
    for k in 0..3 {
        let mut mk = *m;
        for r in 0..3 {
            mk[r][k] = b[r];
        }
        x[k] = det(&mk) / d;
    }
    x
}

/// Eigenvalues of a symmetric 3×3 matrix in ascending order.
pub(crate) fn symmetric_eigenvalues(a: &Mat3) -> [f64; 3] {
    let p1 = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
    let q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
    if p1 == 0.0 {
        let mut e = [a[0][0], a[1][1], a[2][2]];
        e.sort_by(|x, y| x.total_cmp(y));
        return e;
    }
    let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = *a;
    for (i, row) in b.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (a[i][j] - if i == j { q } else { 0.0 }) / p;
        }
    }
    let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
        - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    [e3, e2, e1]
}

/// One attitude step of length `h`. Solves
/// `I(ω' − ω) = h(τ − ω̄ × Iω̄ − c·ω')` with `ω̄ = (ω + ω')/2` by Newton's
/// method, then sets `q' = q ⊗ exp(ω'h)`.
///
/// The midpoint rule keeps `½ωᵀIω` exactly invariant when `τ = 0` and
/// `c = 0`; the implicit damping term stays stable for any `c·h/I`.
pub fn integrate_attitude(
    q: &UnitQuaternion,
    omega: &Vec3,
    torque_body: &Vec3,
    inertia: &Mat3,
    damping: f64,
    h: f64,
) -> (UnitQuaternion, Vec3) {
    let residual = |w: &Vec3| {
        let m = [
            0.5 * (omega[0] + w[0]),
            0.5 * (omega[1] + w[1]),
            0.5 * (omega[2] + w[2]),
        ];
        let im = mat_vec(inertia, &m);
        let gyro = cross3(&m, &im);
        let dw = [w[0] - omega[0], w[1] - omega[1], w[2] - omega[2]];
        let idw = mat_vec(inertia, &dw);
        let r: Vec3 = std::array::from_fn(|k| {
            idw[k] + h * (gyro[k] + damping * w[k] - torque_body[k])
        });
        (r, m, im)
    };
    let mut w = *omega;
    for _ in 0..NEWTON_ITERS {
        let (r, m, im) = residual(&w);
        if r.iter().all(|v| *v == 0.0) {
            break;
        }
        // d(m × Im)/dω' = ½([m]× I − [Im]×)
        let a = mat_mul(&skew(&m), inertia);
        let b = skew(&im);
        let mut jac = *inertia;
        for i in 0..3 {
            for j in 0..3 {
                jac[i][j] += 0.5 * h * (a[i][j] - b[i][j]);
            }
            jac[i][i] += h * damping;
        }
        let delta = solve3(&jac, &r);
        let next = [w[0] - delta[0], w[1] - delta[1], w[2] - delta[2]];
        let change = (delta[0].abs()).max(delta[1].abs()).max(delta[2].abs());
        w = next;
        let scale = w[0].abs().max(w[1].abs()).max(w[2].abs());
        if change <= 1e-15 * (1.0 + scale) {
            break;
        }
    }
    if w == [0.0; 3] {
        return (*q, w);
    }
    let dq = UnitQuaternion::from_rotation_vector([w[0] * h, w[1] * h, w[2] * h]);
    let next = *q * dq;
    debug_assert!((next.to_array().iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
    (next, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_matches_known_system() {
        let m = [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let x = [1.0, -2.0, 0.5];
        let b = mat_vec(&m, &x);
        let y = solve3(&m, &b);
        for k in 0..3 {
            assert!((x[k] - y[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn eigenvalues_of_diagonal_and_rotated() {
        assert_eq!(
            symmetric_eigenvalues(&[[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]]),
            [1.0, 2.0, 3.0]
        );
        let e = symmetric_eigenvalues(&[[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 5.0]]);
        for (a, b) in e.iter().zip([1.0, 3.0, 5.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn damping_alone_decays_monotonically() {
        let i = [[1e-4, 0.0, 0.0], [0.0, 1e-4, 0.0], [0.0, 0.0, 1e-4]];
        let mut w = [0.0, 0.0, 3.0];
        let mut q = UnitQuaternion::IDENTITY;
        for _ in 0..5 {
            let (q2, w2) = integrate_attitude(&q, &w, &[0.0; 3], &i, 0.01, 0.04);
            assert!(w2[2] > 0.0 && w2[2] < w[2]);
            q = q2;
            w = w2;
        }
    }
}
