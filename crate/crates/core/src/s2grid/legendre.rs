//! Fully normalized associated Legendre functions `P̄_lm(cos ϑ)` with
//! ϑ-derivatives through third order.
//!
//! Normalization: `∫_{S²} (P̄_l0)² dμ₀ = 1` and the real basis
//! `√2 P̄_lm cos mφ`, `√2 P̄_lm sin mφ` is orthonormal for `m ≥ 1`.
//! No Condon–Shortley phase.

/// Jet of every `P̄_lm` for a fixed `m` at a single colatitude:
/// `val[l - m]`, `d1[l - m]`, ... for `l = m..=band_limit`.
#[derive(Clone, Debug)]
pub struct PlmJet {
    pub val: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub d3: Vec<f64>,
}

/// Evaluate `P̄_lm` values for fixed `m`, `l = m..=lmax`, at `x = cos ϑ`.
///
/// `sin_t` must be `sin ϑ ≥ 0`.
pub fn plm_values(m: usize, lmax: usize, x: f64, sin_t: f64) -> Vec<f64> {
    debug_assert!(m <= lmax);
    let mut out = Vec::with_capacity(lmax - m + 1);

    // P̄_mm by the diagonal recurrence.
    let mut pmm = (1.0 / (4.0 * std::f64::consts::PI)).sqrt();
    for k in 1..=m {
        pmm *= ((2 * k + 1) as f64 / (2 * k) as f64).sqrt() * sin_t;
    }
    out.push(pmm);
    if lmax == m {
        return out;
    }

    // P̄_{m+1,m}.
    let pm1 = ((2 * m + 3) as f64).sqrt() * x * pmm;
    out.push(pm1);

    let mut p_prev = pmm;
    let mut p_cur = pm1;
    for l in (m + 2)..=lmax {
        let lf = l as f64;
        let mf = m as f64;
        let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
        let b = ((((lf - 1.0) * (lf - 1.0)) - mf * mf)
            / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0))
            .sqrt();
        let p_next = a * (x * p_cur - b * p_prev);
        out.push(p_next);
        p_prev = p_cur;
        p_cur = p_next;
    }
    out
}

/// Values plus first three ϑ-derivatives for fixed `m` at one colatitude.
///
/// First derivative uses
/// `dP̄_lm/dϑ = (l x P̄_lm − e_lm P̄_{l−1,m}) / sin ϑ` with
/// `e_lm = sqrt((2l+1)(l²−m²)/(2l−1))`; higher orders follow from the
/// associated Legendre ODE, so everything stays closed-form.
pub fn plm_jet(m: usize, lmax: usize, theta: f64) -> PlmJet {
    let x = theta.cos();
    let sin_t = theta.sin();
    debug_assert!(sin_t > 0.0, "colatitude must avoid the poles");
    let inv_sin = 1.0 / sin_t;
    let cot = x * inv_sin;

    let val = plm_values(m, lmax, x, sin_t);
    let n = val.len();
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    let mut d3 = vec![0.0; n];

    let mf = m as f64;
    for (k, l) in (m..=lmax).enumerate() {
        let lf = l as f64;
        let below = if l > m { val[k - 1] } else { 0.0 };
        let e = if l > m {
            ((2.0 * lf + 1.0) * (lf * lf - mf * mf) / (2.0 * lf - 1.0)).sqrt()
        } else {
            0.0
        };
        d1[k] = (lf * x * val[k] - e * below) * inv_sin;

        let msin2 = mf * mf * inv_sin * inv_sin;
        let lam = lf * (lf + 1.0);
        d2[k] = -cot * d1[k] + (msin2 - lam) * val[k];
        d3[k] = -cot * d2[k] + (inv_sin * inv_sin + msin2 - lam) * d1[k]
            - 2.0 * mf * mf * x * inv_sin * inv_sin * inv_sin * val[k];
    }

    PlmJet { val, d1, d2, d3 }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, ascending nodes.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n {
        // Standard initial guess followed by Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_poly(n, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_poly(n, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    nodes.reverse();
    weights.reverse();
    (nodes, weights)
}

/// `P_n(x)` and its derivative via the three-term recurrence.
fn legendre_poly(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn low_degree_values_match_closed_forms() {
        let theta = 0.7_f64;
        let x = theta.cos();
        let s = theta.sin();
        let p0 = plm_values(0, 2, x, s);
        assert_abs_diff_eq!(p0[0], (1.0 / (4.0 * PI)).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(p0[1], (3.0 / (4.0 * PI)).sqrt() * x, epsilon = 1e-15);
        assert_abs_diff_eq!(
            p0[2],
            (5.0 / (16.0 * PI)).sqrt() * (3.0 * x * x - 1.0),
            epsilon = 1e-14
        );
        let p1 = plm_values(1, 1, x, s);
        assert_abs_diff_eq!(p1[0], (3.0 / (8.0 * PI)).sqrt() * s, epsilon = 1e-15);
    }

    #[test]
    fn jet_derivatives_match_finite_differences() {
        let theta = 1.1_f64;
        let h = 1e-5;
        for m in [0usize, 1, 3] {
            let j = plm_jet(m, 8, theta);
            let jp = plm_jet(m, 8, theta + h);
            let jm = plm_jet(m, 8, theta - h);
            for k in 0..j.val.len() {
                let fd1 = (jp.val[k] - jm.val[k]) / (2.0 * h);
                let fd2 = (jp.val[k] - 2.0 * j.val[k] + jm.val[k]) / (h * h);
                let fd3 = (jp.d2[k] - jm.d2[k]) / (2.0 * h);
                assert_abs_diff_eq!(j.d1[k], fd1, epsilon = 1e-8);
                assert_abs_diff_eq!(j.d2[k], fd2, epsilon = 1e-4);
                assert_abs_diff_eq!(j.d3[k], fd3, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(9);
        // degree 16 monomial: exact value 2/17
        let val: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(16)).sum();
        assert_abs_diff_eq!(val, 2.0 / 17.0, epsilon = 1e-14);
        let total: f64 = w.iter().sum();
        assert_abs_diff_eq!(total, 2.0, epsilon = 1e-14);
    }
}
