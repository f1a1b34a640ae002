//! Test oracles.
//!
//! Everything here is deliberately written against plain slices and
//! `Vec<Vec<f64>>` and uses its own random source, so it shares no code path
//! with the implementation it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Standard normal via the polar method.
pub fn normal(r: &mut ChaCha20Rng) -> f64 {
    loop {
        let u: f64 = r.random_range(-1.0..1.0);
        let v: f64 = r.random_range(-1.0..1.0);
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

pub fn random_matrix(r: &mut ChaCha20Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| normal(r)).collect())
        .collect()
}

/// Cyclic Jacobi eigensolver for a symmetric matrix.
/// Returns eigenvalues in descending order with matching eigenvectors.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let total: f64 = m.iter().flatten().map(|x| x * x).sum();
        if off <= 1e-30 * total.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].partial_cmp(&m[i][i]).unwrap());
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order
        .iter()
        .map(|&i| (0..n).map(|k| v[k][i]).collect())
        .collect();
    (values, vectors)
}

/// `mᵀm` by a plain triple loop.
pub fn gram(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = m.first().map_or(0, |r| r.len());
    let mut g = vec![vec![0.0; cols]; cols];
    for row in m {
        for i in 0..cols {
            for j in 0..cols {
                g[i][j] += row[i] * row[j];
            }
        }
    }
    g
}

/// Singular values of `m` from the Jacobi eigenvalues of `mᵀm`.
pub fn singular_values(m: &[Vec<f64>]) -> Vec<f64> {
    jacobi_eigen(&gram(m)).0.into_iter().map(|l| l.max(0.0).sqrt()).collect()
}

/// AUROC by counting all pairs; ties count one half.
pub fn auroc_pairs(id: &[f64], ood: &[f64]) -> f64 {
    let mut twice_wins: u64 = 0;
    for &a in id {
        for &b in ood {
            if a > b {
                twice_wins += 2;
            } else if a == b {
                twice_wins += 1;
            }
        }
    }
    twice_wins as f64 / (2 * id.len() * ood.len()) as f64
}

/// FPR at the largest threshold `λ` (among observed scores) that accepts ID
/// scores `≥ λ` at a rate of at least `tpr`.
pub fn fpr_at_tpr_sweep(id: &[f64], ood: &[f64], tpr: f64) -> f64 {
    let mut candidates: Vec<f64> = id.iter().chain(ood).copied().collect();
    candidates.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for lambda in candidates {
        let accepted = id.iter().filter(|&&s| s >= lambda).count();
        if accepted as f64 / id.len() as f64 >= tpr {
            return ood.iter().filter(|&&s| s >= lambda).count() as f64 / ood.len() as f64;
        }
    }
    1.0
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let fp = f(&xp);
            xp[i] = orig - h;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Relative error `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

/// Lanczos `ln Γ(x)` (g = 7, n = 9), for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// `ln I_ν(x)` by direct summation of the power series, each term from
/// `ln Γ` rather than a recurrence.
pub fn log_bessel_series(order: f64, x: f64) -> f64 {
    let lx = (0.5 * x).ln();
    let logs: Vec<f64> = (0..20_000)
        .map(|k| {
            let k = k as f64;
            (2.0 * k + order) * lx - ln_gamma(k + 1.0) - ln_gamma(k + order + 1.0)
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Kahan summation of the rescaled terms
    let mut sum = 0.0;
    let mut comp = 0.0;
    for l in logs {
        let y = (l - max).exp() - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    max + sum.ln()
}

/// Draws from vMF(mu, kappa) on S^{d-1} by the tangent-normal decomposition:
/// the radial cosine `w` is drawn by Wood's rejection sampler and combined
/// with a uniform tangent direction orthogonal to `mu`.
pub fn sample_vmf(r: &mut ChaCha20Rng, mu: &[f64], kappa: f64, n: usize) -> Vec<Vec<f64>> {
    let d = mu.len();
    let dm1 = (d - 1) as f64;
    let b = dm1 / (2.0 * kappa + (4.0 * kappa * kappa + dm1 * dm1).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + dm1 * (1.0 - x0 * x0).ln();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let z = beta(r, dm1 / 2.0, dm1 / 2.0);
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let u: f64 = r.random();
        if kappa * w + dm1 * (1.0 - x0 * w).ln() - c < u.ln() {
            continue;
        }
        // tangent direction: project a gaussian onto the complement of mu
        let mut t: Vec<f64> = (0..d).map(|_| normal(r)).collect();
        let proj: f64 = t.iter().zip(mu).map(|(a, m)| a * m).sum();
        t.iter_mut().zip(mu).for_each(|(a, m)| *a -= proj * m);
        let tn: f64 = t.iter().map(|a| a * a).sum::<f64>().sqrt();
        let s = (1.0 - w * w).max(0.0).sqrt();
        out.push(mu.iter().zip(&t).map(|(m, a)| w * m + s * a / tn).collect());
    }
    out
}

fn gamma_draw(r: &mut ChaCha20Rng, shape: f64) -> f64 {
    // Marsaglia-Tsang, with the boost for shape < 1
    if shape < 1.0 {
        let u: f64 = r.random();
        return gamma_draw(r, shape + 1.0) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = normal(r);
        let v = (1.0 + c * x).powi(3);
        if v <= 0.0 {
            continue;
        }
        let u: f64 = r.random();
        if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
            return d * v;
        }
    }
}

fn beta(r: &mut ChaCha20Rng, a: f64, b: f64) -> f64 {
    let x = gamma_draw(r, a);
    let y = gamma_draw(r, b);
    x / (x + y)
}

/// Composite Gauss-Legendre rule (5 nodes per panel) over `[a, b]`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    const NODES: [f64; 5] = [
        0.0,
        -0.538_469_310_105_683_1,
        0.538_469_310_105_683_1,
        -0.906_179_845_938_664,
        0.906_179_845_938_664,
    ];
    const WEIGHTS: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for (x, w) in NODES.iter().zip(WEIGHTS) {
            total += w * f(mid + 0.5 * h * x);
        }
    }
    total * 0.5 * h
}

/// Nearest-rank empirical quantile by full sort: the `ceil(q n)`-th smallest.
pub fn nearest_rank_quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Euclidean k-th nearest distance by sorting every distance.
pub fn knn_by_sort(query: &[f64], set: &[Vec<f64>], k: usize, skip: Option<usize>) -> f64 {
    let mut d: Vec<f64> = set
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(_, r)| r.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    d[k - 1].sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_recovers_diagonal() {
        let (vals, _) = jacobi_eigen(&[vec![2.0, 0.0], vec![0.0, 5.0]]);
        assert!((vals[0] - 5.0).abs() < 1e-14 && (vals[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn bessel_series_half_order() {
        let x: f64 = 2.0;
        let exact = ((2.0 / (std::f64::consts::PI * x)).sqrt() * x.sinh()).ln();
        assert!((log_bessel_series(0.5, x) - exact).abs() < 1e-13);
    }

    #[test]
    fn vmf_samples_are_unit() {
        let mut r = rng(1);
        let mu = vec![0.0, 0.0, 1.0];
        for s in sample_vmf(&mut r, &mu, 5.0, 100) {
            let n: f64 = s.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
