//! von Mises-Fisher densities, mixtures and their scores.

use statrs::function::gamma::ln_gamma;

use crate::error::{arg, Error, Result};
use crate::numerics::{bessel_ratio, dot, knn_distance, log_bessel_i, log_sum_exp, norm, normalize, softmax, Matrix};

/// Learnable concentrations are kept inside this interval.
pub const KAPPA_MIN: f64 = 1e-3;
pub const KAPPA_MAX: f64 = 1e4;

const UNIT_TOL: f64 = 1e-8;

fn check_unit(v: &[f64], what: &str) -> Result<()> {
    let n = norm(v);
    if (n - 1.0).abs() > UNIT_TOL {
        return arg(format!("{what} must be unit-norm, has norm {n}"));
    }
    Ok(())
}

fn check_dim(d: usize) -> Result<()> {
    if d < 2 {
        return arg(format!("sphere dimension must be at least 2, got {d}"));
    }
    Ok(())
}

/// `log Z_d(κ) = (d/2 − 1) log κ − (d/2) log 2π − log I_{d/2−1}(κ)`, with the
/// uniform-sphere value `log Γ(d/2) − log 2 − (d/2) log π` at `κ = 0`.
pub fn log_normalizer(kappa: f64, d: usize) -> Result<f64> {
    check_dim(d)?;
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return arg(format!("concentration must be non-negative, got {kappa}"));
    }
    let half = 0.5 * d as f64;
    if kappa == 0.0 {
        return Ok(ln_gamma(half) - std::f64::consts::LN_2 - half * std::f64::consts::PI.ln());
    }
    let nu = half - 1.0;
    Ok(nu * kappa.ln() - half * (2.0 * std::f64::consts::PI).ln() - log_bessel_i(nu, kappa)?)
}

/// `d log Z_d / dκ = −I_{d/2}(κ) / I_{d/2−1}(κ)`.
pub fn log_normalizer_derivative(kappa: f64, d: usize) -> Result<f64> {
    check_dim(d)?;
    Ok(-bessel_ratio(0.5 * d as f64 - 1.0, kappa)?)
}

/// `log Z_d(κ) + κ ⟨μ, r⟩`.
pub fn vmf_log_density(r: &[f64], mu: &[f64], kappa: f64, d: usize) -> Result<f64> {
    if r.len() != d || mu.len() != d {
        return arg(format!("vectors must have {d} entries"));
    }
    check_unit(r, "r")?;
    check_unit(mu, "mu")?;
    Ok(log_normalizer(kappa, d)? + kappa * dot(mu, r))
}

/// Outcome of [`VmfMixture::ema_update`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmaOutcome {
    Applied,
    /// The blend cancelled to the zero vector; the prototype was kept.
    Skipped,
}

/// Class-conditional vMF components on `S^{d−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct VmfMixture {
    prototypes: Matrix,
    log_kappas: Vec<f64>,
    pub alpha: f64,
    fitted: bool,
}

impl VmfMixture {
    /// Normalizes `prototypes` row-wise; all concentrations must be positive.
    pub fn new(prototypes: &Matrix, kappas: &[f64], alpha: f64) -> Result<Self> {
        check_dim(prototypes.cols())?;
        if kappas.len() != prototypes.rows() || kappas.is_empty() {
            return arg("one concentration per prototype is required");
        }
        if let Some(k) = kappas.iter().find(|&&k| !(k > 0.0 && k.is_finite())) {
            return arg(format!("concentrations must be positive, got {k}"));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return arg(format!("alpha must be in [0, 1], got {alpha}"));
        }
        if prototypes.iter_rows().any(|r| norm(r) == 0.0) {
            return arg("prototypes must be nonzero");
        }
        Ok(Self {
            prototypes: prototypes.normalized_rows(),
            log_kappas: kappas.iter().map(|k| k.ln()).collect(),
            alpha,
            fitted: true,
        })
    }

    /// Rebuilds a mixture from stored parameters without renormalizing.
    pub(crate) fn from_raw(prototypes: Matrix, log_kappas: Vec<f64>, alpha: f64, fitted: bool) -> Result<Self> {
        check_dim(prototypes.cols())?;
        if log_kappas.len() != prototypes.rows() || log_kappas.is_empty() {
            return arg("one concentration per prototype is required");
        }
        if !(0.0..=1.0).contains(&alpha) {
            return arg(format!("alpha must be in [0, 1], got {alpha}"));
        }
        if fitted {
            for r in prototypes.iter_rows() {
                check_unit(r, "prototype")?;
            }
        }
        Ok(Self {
            prototypes,
            log_kappas,
            alpha,
            fitted,
        })
    }

    /// Placeholder with no usable parameters; scoring with it is a state error.
    pub fn unfitted(num_classes: usize, d: usize) -> Self {
        Self {
            prototypes: Matrix::zeros(num_classes, d),
            log_kappas: vec![0.0; num_classes],
            alpha: 0.95,
            fitted: false,
        }
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    fn check_fitted(&self) -> Result<()> {
        if self.fitted {
            Ok(())
        } else {
            Err(Error::State("vMF mixture has not been fitted".into()))
        }
    }

    pub fn num_classes(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.cols()
    }

    pub fn prototypes(&self) -> &Matrix {
        &self.prototypes
    }

    pub fn prototype(&self, c: usize) -> &[f64] {
        self.prototypes.row(c)
    }

    pub fn kappa(&self, c: usize) -> f64 {
        self.log_kappas[c].exp().clamp(KAPPA_MIN, KAPPA_MAX)
    }

    pub fn kappas(&self) -> Vec<f64> {
        (0..self.num_classes()).map(|c| self.kappa(c)).collect()
    }

    pub fn log_kappas(&self) -> &[f64] {
        &self.log_kappas
    }

    pub(crate) fn log_kappas_mut(&mut self) -> &mut [f64] {
        &mut self.log_kappas
    }

    pub fn set_kappas(&mut self, kappas: &[f64]) -> Result<()> {
        if kappas.len() != self.num_classes() || kappas.iter().any(|k| !(*k > 0.0)) {
            return arg("one positive concentration per class is required");
        }
        self.log_kappas = kappas.iter().map(|k| k.ln()).collect();
        Ok(())
    }

    /// `μ_c ← normalize(α μ_c + (1 − α) r)`.
    pub fn ema_update(&mut self, r: &[f64], c: usize) -> Result<EmaOutcome> {
        if c >= self.num_classes() {
            return arg(format!("class {c} out of range"));
        }
        if r.len() != self.dim() {
            return arg(format!("embedding has {} dims, mixture has {}", r.len(), self.dim()));
        }
        check_unit(r, "r")?;
        let a = self.alpha;
        if a == 1.0 {
            return Ok(EmaOutcome::Applied);
        }
        let blended: Vec<f64> = self
            .prototypes
            .row(c)
            .iter()
            .zip(r)
            .map(|(m, x)| a * m + (1.0 - a) * x)
            .collect();
        match normalize(&blended) {
            Some(unit) => {
                self.prototypes.row_mut(c).copy_from_slice(&unit);
                Ok(EmaOutcome::Applied)
            }
            None => Ok(EmaOutcome::Skipped),
        }
    }

    /// Per-class `log Z_d(κ_c) + κ_c ⟨μ_c, r⟩`.
    pub fn log_likelihoods(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.check_fitted()?;
        if r.len() != self.dim() {
            return arg(format!("embedding has {} dims, mixture has {}", r.len(), self.dim()));
        }
        check_unit(r, "r")?;
        (0..self.num_classes())
            .map(|c| {
                let k = self.kappa(c);
                Ok(log_normalizer(k, self.dim())? + k * dot(self.prototype(c), r))
            })
            .collect()
    }
}

/// Posterior over classes, the softmax of the per-class log-likelihoods.
pub fn vmf_posterior(r: &[f64], mix: &VmfMixture) -> Result<Vec<f64>> {
    Ok(softmax(&mix.log_likelihoods(r)?))
}

/// Gradients of [`siren_loss`] for one embedding.
#[derive(Debug, Clone)]
pub struct SirenGrads {
    /// With respect to `log κ_c` (zero where κ is clamped).
    pub log_kappas: Vec<f64>,
    /// With respect to the unit embedding `r`.
    pub r: Vec<f64>,
    /// With respect to the normalized prototypes `μ_c`, row-major.
    pub prototypes: Vec<f64>,
}

/// `−log p(y | r)` under the mixture posterior, with gradients.
pub fn siren_loss(r: &[f64], y: usize, mix: &VmfMixture) -> Result<(f64, SirenGrads)> {
    if y >= mix.num_classes() {
        return arg(format!("label {y} out of range"));
    }
    let s = mix.log_likelihoods(r)?;
    let loss = log_sum_exp(&s)? - s[y];
    let mut p = softmax(&s);
    p[y] -= 1.0;
    let d = mix.dim();
    let mut g = SirenGrads {
        log_kappas: vec![0.0; s.len()],
        r: vec![0.0; d],
        prototypes: vec![0.0; s.len() * d],
    };
    for (c, &ds) in p.iter().enumerate() {
        let k = mix.kappa(c);
        let mu = mix.prototype(c);
        let raw = mix.log_kappas[c].exp();
        if raw > KAPPA_MIN && raw < KAPPA_MAX {
            let dk = log_normalizer_derivative(k, d)? + dot(mu, r);
            g.log_kappas[c] = ds * dk * k;
        }
        for i in 0..d {
            g.r[i] += ds * k * mu[i];
            g.prototypes[c * d + i] = ds * k * r[i];
        }
    }
    Ok((loss, g))
}

/// Approximate maximum-likelihood concentration
/// `κ̂ = ‖r̄‖ (d − ‖r̄‖²) / (1 − ‖r̄‖²)` from unit rows.
pub fn estimate_kappa(embeddings: &Matrix, d: usize) -> Result<f64> {
    check_dim(d)?;
    if embeddings.rows() < 2 {
        return arg("need at least two embeddings");
    }
    if embeddings.cols() != d {
        return arg(format!("embeddings have {} dims, expected {d}", embeddings.cols()));
    }
    for r in embeddings.iter_rows() {
        check_unit(r, "embedding")?;
    }
    let rbar = norm(&embeddings.column_means());
    if rbar >= 1.0 - 1e-12 {
        return Err(Error::Singularity(rbar));
    }
    Ok(kappa_from_mean_resultant(rbar, d))
}

pub fn kappa_from_mean_resultant(rbar: f64, d: usize) -> f64 {
    let r2 = rbar * rbar;
    rbar * (d as f64 - r2) / (1.0 - r2)
}

/// Fits one component per class from labeled unit embeddings: prototypes
/// are normalized class means and concentrations are [`estimate_kappa`].
pub fn fit_mixture(embeddings: &Matrix, labels: &[usize], num_classes: usize, alpha: f64) -> Result<VmfMixture> {
    if labels.len() != embeddings.rows() {
        return arg("one label per embedding is required");
    }
    let d = embeddings.cols();
    let mut protos = Vec::with_capacity(num_classes);
    let mut kappas = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let rows = embeddings.select_rows(&idx);
        kappas.push(estimate_kappa(&rows, d)?.clamp(KAPPA_MIN, KAPPA_MAX));
        protos.push(rows.column_means());
    }
    VmfMixture::new(&Matrix::from_rows(&protos)?, &kappas, alpha)
}

/// Largest class-conditional log-likelihood; higher means more ID.
///
/// This is the logarithm of `max_c Z_d(κ_c) exp(κ_c ⟨μ_c, r⟩)`, which keeps
/// the ranking while avoiding underflow at large κ.
pub fn vmf_score(r: &[f64], mix: &VmfMixture) -> Result<f64> {
    let s = mix.log_likelihoods(r)?;
    Ok(s.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// `−‖r − r_(k)‖` against a bank of unit embeddings, skipping `r` itself
/// once if it is a bank member.
pub fn knn_score(r: &[f64], bank: &Matrix, k: usize) -> Result<f64> {
    Ok(-knn_distance(r, bank, k, true)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;
    use proptest::prelude::*;
    use ualk_oracles as oracle;

    #[test]
    fn uniform_limit() {
        let l = log_normalizer(0.0, 3).unwrap();
        assert!((l - (1.0 / (4.0 * std::f64::consts::PI)).ln()).abs() < 1e-14);
        let r = [0.0, 0.6, 0.8];
        let d = vmf_log_density(&r, &[1.0, 0.0, 0.0], 0.0, 3).unwrap();
        assert!((d - l).abs() < 1e-15);
        // continuity at small κ
        assert!((log_normalizer(1e-8, 3).unwrap() - l).abs() < 1e-7);
    }

    #[test]
    fn closed_form_in_three_dims() {
        for &k in &[0.5f64, 1.0, 10.0, 100.0, 700.0] {
            let exact = k.ln() - (4.0 * std::f64::consts::PI).ln() - (k + (1.0 - (-2.0 * k).exp()).ln() - std::f64::consts::LN_2);
            assert!((log_normalizer(k, 3).unwrap() - exact).abs() < 1e-10, "κ = {k}");
        }
    }

    #[test]
    fn density_integrates_to_one() {
        for &k in &[0.0, 1.0, 10.0, 100.0] {
            let c = log_normalizer(k, 2).unwrap();
            let circle = oracle::integrate(|t| (c + k * t.cos()).exp(), 0.0, 2.0 * std::f64::consts::PI, 400);
            assert!((circle - 1.0).abs() < 1e-6, "d=2 κ={k}: {circle}");
            let c = log_normalizer(k, 3).unwrap();
            let sphere = oracle::integrate(
                |t| 2.0 * std::f64::consts::PI * (c + k * t.cos()).exp() * t.sin(),
                0.0,
                std::f64::consts::PI,
                400,
            );
            assert!((sphere - 1.0).abs() < 1e-6, "d=3 κ={k}: {sphere}");
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        for d in [2, 3, 5, 16, 64] {
            for &k in &[0.3, 2.0, 10.0, 50.0, 400.0] {
                let h = 1e-5 * k;
                let fd = (log_normalizer(k + h, d).unwrap() - log_normalizer(k - h, d).unwrap()) / (2.0 * h);
                let g = log_normalizer_derivative(k, d).unwrap();
                assert!((fd - g).abs() < 1e-6 * g.abs().max(1.0), "d={d} κ={k}: {fd} vs {g}");
            }
        }
    }

    #[test]
    fn density_peaks_at_mean() {
        let mu = [0.0, 0.0, 1.0];
        let at_mu = vmf_log_density(&mu, &mu, 5.0, 3).unwrap();
        let mut rng = RngState::new(1);
        for _ in 0..500 {
            let r = normalize(&rng.normal_vec(3)).unwrap();
            assert!(vmf_log_density(&r, &mu, 5.0, 3).unwrap() <= at_mu);
        }
        assert!(vmf_log_density(&[1.0, 1.0, 0.0], &mu, 5.0, 3).is_err());
    }

    fn two_orthogonal(kappa: f64) -> VmfMixture {
        let protos = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        VmfMixture::new(&protos, &[kappa, kappa], 0.95).unwrap()
    }

    #[test]
    fn posterior_examples() {
        let mix = two_orthogonal(1.0);
        let p = vmf_posterior(&[1.0, 0.0], &mix).unwrap();
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let q = vmf_posterior(&[h, h], &mix).unwrap();
        assert!((q[0] - 0.5).abs() < 1e-15);
        assert!(vmf_posterior(&[1.0, 0.0, 0.0], &mix).is_err());
    }

    #[test]
    fn ema_examples() {
        let mut mix = two_orthogonal(1.0);
        mix.alpha = 0.95;
        mix.ema_update(&[0.0, 1.0], 0).unwrap();
        let want = normalize(&[0.95, 0.05]).unwrap();
        assert!(mix.prototype(0).iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-15));
        assert_eq!(mix.prototype(1), &[0.0, 1.0]);
        mix.alpha = 1.0;
        let before = mix.prototype(0).to_vec();
        mix.ema_update(&[1.0, 0.0], 0).unwrap();
        assert_eq!(mix.prototype(0), &before[..]);
        mix.alpha = 0.0;
        mix.ema_update(&[0.6, 0.8], 1).unwrap();
        assert!((mix.prototype(1)[0] - 0.6).abs() < 1e-15 && (mix.prototype(1)[1] - 0.8).abs() < 1e-15);
        mix.alpha = 0.5;
        let opposite: Vec<f64> = mix.prototype(1).iter().map(|x| -x).collect();
        let kept = mix.prototype(1).to_vec();
        assert_eq!(mix.ema_update(&opposite, 1).unwrap(), EmaOutcome::Skipped);
        assert_eq!(mix.prototype(1), &kept[..]);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = RngState::new(12);
        let mut worst: f64 = 0.0;
        for case in 0..100 {
            let c = 2 + case % 3;
            let d = 2 + case % 5;
            let raw: Vec<Vec<f64>> = (0..c).map(|_| rng.normal_vec(d)).collect();
            // moderate κ keeps the posterior away from saturation
            let log_k: Vec<f64> = (0..c).map(|_| rng.uniform_range(-1.0, 1.5)).collect();
            let r = normalize(&rng.normal_vec(d)).unwrap();
            let y = rng.below(c);
            let build = |raw: &[f64], lk: &[f64]| {
                let m = Matrix::new(c, d, raw.to_vec()).unwrap();
                let k: Vec<f64> = lk.iter().map(|v| v.exp()).collect();
                VmfMixture::new(&m, &k, 0.95).unwrap()
            };
            let flat: Vec<f64> = raw.concat();
            let mix = build(&flat, &log_k);
            let (_, g) = siren_loss(&r, y, &mix).unwrap();
            let fk = oracle::central_gradient(|lk| siren_loss(&r, y, &build(&flat, lk)).unwrap().0, &log_k, 1e-5);
            worst = worst.max(oracle::relative_error(&g.log_kappas, &fk, 1e-6));
            // chain through the normalization of each raw prototype
            let mut g_raw = vec![0.0; c * d];
            for j in 0..c {
                let m = &raw[j];
                let n = norm(m);
                let mu = mix.prototype(j);
                let gp = &g.prototypes[j * d..(j + 1) * d];
                let proj = dot(gp, mu);
                for i in 0..d {
                    g_raw[j * d + i] = (gp[i] - proj * mu[i]) / n;
                }
            }
            let fr = oracle::central_gradient(|m| siren_loss(&r, y, &build(m, &log_k)).unwrap().0, &flat, 1e-5);
            worst = worst.max(oracle::relative_error(&g_raw, &fr, 1e-6));
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn kappa_estimate() {
        let mut rng = oracle::rng(3);
        let mu: Vec<f64> = (0..16).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
        let s = oracle::sample_vmf(&mut rng, &mu, 10.0, 10_000);
        let m = Matrix::from_rows(&s).unwrap().normalized_rows();
        let k = estimate_kappa(&m, 16).unwrap();
        assert!((k - 10.0).abs() < 1.0, "κ̂ = {k}");
    }

    #[test]
    fn kappa_estimate_edge_cases() {
        let same = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]).unwrap();
        assert!(matches!(estimate_kappa(&same, 2), Err(Error::Singularity(_))));
        let balanced = Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]).unwrap();
        assert_eq!(estimate_kappa(&balanced, 2).unwrap(), 0.0);
    }

    #[test]
    fn toy_centroids_beat_antipodes() {
        let s3 = 3f64.sqrt() / 2.0;
        let protos = Matrix::from_rows(&[[0.0, 0.0, 1.0], [s3, 0.0, -0.5], [-s3, 0.0, -0.5]]).unwrap();
        let mix = VmfMixture::new(&protos, &[100.0; 3], 0.95).unwrap();
        for c in 0..3 {
            let mu = mix.prototype(c).to_vec();
            let anti: Vec<f64> = mu.iter().map(|x| -x).collect();
            assert!(vmf_score(&mu, &mix).unwrap() > vmf_score(&anti, &mix).unwrap());
        }
    }

    #[test]
    fn unfitted_mixture_is_a_state_error() {
        let mix = VmfMixture::unfitted(2, 3);
        assert!(matches!(vmf_score(&[1.0, 0.0, 0.0], &mix), Err(Error::State(_))));
    }

    #[test]
    fn knn_score_matches_brute_force() {
        let mut rng = RngState::new(8);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| normalize(&rng.normal_vec(4)).unwrap()).collect();
        let bank = Matrix::from_rows(&rows).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let want = -oracle::knn_by_sort(r, &rows, 1, Some(i));
            assert_eq!(knn_score(r, &bank, 1).unwrap(), want);
        }
    }

    proptest! {
        #[test]
        fn single_class_score_is_monotone(a in -1.0f64..1.0, b in -1.0f64..1.0, k in 0.1f64..500.0) {
            prop_assume!(a != b);
            let mix = VmfMixture::new(&Matrix::from_rows(&[[1.0, 0.0]]).unwrap(), &[k], 0.95).unwrap();
            let at = |c: f64| vmf_score(&[c, (1.0 - c * c).sqrt()], &mix).unwrap();
            prop_assert_eq!(a < b, at(a) < at(b));
        }

        #[test]
        fn kappa_hat_increases_with_resultant(a in 0.001f64..0.998, b in 0.001f64..0.998, d in 2usize..64) {
            prop_assume!(a < b);
            prop_assert!(kappa_from_mean_resultant(a, d) < kappa_from_mean_resultant(b, d));
        }

        #[test]
        fn posterior_shift_invariance(x in prop::collection::vec(-30.0f64..30.0, 2..6), c in -100.0f64..100.0) {
            let a = softmax(&x);
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let b = softmax(&shifted);
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn ema_preserves_unit_norm(seed in 0u64..10_000, alpha in 0.0f64..1.0) {
            let mut rng = RngState::new(seed);
            let p = Matrix::from_rows(&[rng.normal_vec(5)]).unwrap();
            let mut mix = VmfMixture::new(&p, &[1.0], alpha).unwrap();
            let r = normalize(&rng.normal_vec(5)).unwrap();
            if mix.ema_update(&r, 0).unwrap() == EmaOutcome::Applied {
                prop_assert!((norm(mix.prototype(0)) - 1.0).abs() < 1e-15);
            }
        }
    }
}
