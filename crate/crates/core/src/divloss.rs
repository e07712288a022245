//! Differentiable KL-divergence between two sets of sentence embeddings.
//!
//! Both densities are isotropic Gaussian kernel density estimates sharing one
//! bandwidth h, so the kernel normalizing constant cancels. The self-density
//! term leaves each point out of its own estimate. The loss sums both
//! directions:
//!
//! ```text
//! KL01 = 1/n0 Σ_i [ log p̂0₋ᵢ(x0_i) − log p̂1(x0_i) ]
//! KL10 = 1/n1 Σ_i [ log p̂1₋ᵢ(x1_i) − log p̂0(x1_i) ]
//! ```
//!
//! Gradients treat h as a constant.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::Role;
use crate::error::{Error, Result};

/// A set of sentence-embedding points from one side.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSample {
    points: Vec<Vec<f64>>,
    origin: Role,
}

impl EmbeddingSample {
    pub fn new(points: Vec<Vec<f64>>, origin: Role) -> Result<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(0);
        if points.is_empty() || dim == 0 {
            return Err(Error::invalid("embedding sample needs at least one non-empty point"));
        }
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: p.len(),
            });
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding sample".into()));
        }
        Ok(EmbeddingSample { points, origin })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn origin(&self) -> Role {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "h", rename_all = "snake_case")]
pub enum BandwidthRule {
    /// Median pairwise distance over the pooled points, divided by √2.
    MedianHeuristic,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeConfig {
    pub bandwidth: BandwidthRule,
    pub floor_h: f64,
}

impl Default for KdeConfig {
    fn default() -> Self {
        KdeConfig {
            bandwidth: BandwidthRule::MedianHeuristic,
            floor_h: 1e-3,
        }
    }
}

impl KdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.floor_h > 0.0 && self.floor_h.is_finite()) {
            return Err(Error::invalid("bandwidth floor must be positive"));
        }
        if let BandwidthRule::Fixed(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::invalid("fixed bandwidth must be positive"));
            }
        }
        Ok(())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_dims(s0: &EmbeddingSample, s1: &EmbeddingSample) -> Result<()> {
    if s0.dim() != s1.dim() {
        return Err(Error::DimensionMismatch {
            expected: s0.dim(),
            actual: s1.dim(),
        });
    }
    Ok(())
}

/// Kernel bandwidth for a pair of samples, never below `floor_h`.
pub fn bandwidth(s0: &EmbeddingSample, s1: &EmbeddingSample, cfg: &KdeConfig) -> Result<f64> {
    cfg.validate()?;
    check_dims(s0, s1)?;
    let h = match cfg.bandwidth {
        BandwidthRule::Fixed(h) => h,
        BandwidthRule::MedianHeuristic => {
            let pooled: Vec<&[f64]> = s0
                .points
                .iter()
                .chain(&s1.points)
                .map(Vec::as_slice)
                .collect();
            if pooled.len() < 3 {
                return Err(Error::invalid("median heuristic needs at least 3 points"));
            }
            let mut dists = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
            for i in 0..pooled.len() {
                for j in i + 1..pooled.len() {
                    dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
                }
            }
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
            let n = dists.len();
            let median = if n % 2 == 1 {
                dists[n / 2]
            } else {
                0.5 * (dists[n / 2 - 1] + dists[n / 2])
            };
            median / std::f64::consts::SQRT_2
        }
    };
    Ok(h.max(cfg.floor_h))
}

/// Softmax weights and log-mean-kernel of `x` against reference points.
/// Excluded entries get weight 0.
fn kernel_terms(
    x: &[f64],
    refs: &[Vec<f64>],
    h: f64,
    exclude: Option<usize>,
) -> Result<(f64, Vec<f64>)> {
    let m = refs.len() - usize::from(exclude.is_some_and(|e| e < refs.len()));
    if m == 0 {
        return Err(Error::invalid("density estimate has no reference points"));
    }
    let scale = 1.0 / (2.0 * h * h);
    let exps: Vec<f64> = refs
        .iter()
        .enumerate()
        .map(|(j, p)| {
            if Some(j) == exclude {
                f64::NEG_INFINITY
            } else {
                -sq_dist(x, p) * scale
            }
        })
        .collect();
    let max = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = exps.iter().map(|&e| (e - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let log_density = max + total.ln() - (m as f64).ln();
    Ok((log_density, weights))
}

/// log[(1/m) Σ_j exp(−‖x − p_j‖² / 2h²)] over the included points.
pub fn kde_log_density(
    x: &[f64],
    sample: &EmbeddingSample,
    h: f64,
    exclude_index: Option<usize>,
) -> Result<f64> {
    if x.len() != sample.dim() {
        return Err(Error::DimensionMismatch {
            expected: sample.dim(),
            actual: x.len(),
        });
    }
    kernel_terms(x, &sample.points, h, exclude_index).map(|(ld, _)| ld)
}

/// Loss value together with its gradient for every point of both samples.
#[derive(Clone, Debug, PartialEq)]
pub struct KlGradient {
    pub loss: f64,
    pub bandwidth: f64,
    pub grad0: Vec<Vec<f64>>,
    pub grad1: Vec<Vec<f64>>,
}

fn check_pair(s0: &EmbeddingSample, s1: &EmbeddingSample) -> Result<()> {
    check_dims(s0, s1)?;
    if s0.len() < 2 || s1.len() < 2 {
        return Err(Error::invalid("each sample needs at least 2 points"));
    }
    Ok(())
}

pub fn kl_loss(s0: &EmbeddingSample, s1: &EmbeddingSample, cfg: &KdeConfig) -> Result<f64> {
    check_pair(s0, s1)?;
    let h = bandwidth(s0, s1, cfg)?;
    kl_loss_with_bandwidth(s0, s1, h)
}

pub fn kl_loss_with_bandwidth(s0: &EmbeddingSample, s1: &EmbeddingSample, h: f64) -> Result<f64> {
    check_pair(s0, s1)?;
    let one_way = |a: &EmbeddingSample, b: &EmbeddingSample| -> Result<f64> {
        let mut acc = 0.0;
        for (i, x) in a.points.iter().enumerate() {
            acc += kde_log_density(x, a, h, Some(i))? - kde_log_density(x, b, h, None)?;
        }
        Ok(acc / a.len() as f64)
    };
    let loss = one_way(s0, s1)? + one_way(s1, s0)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("KL loss".into()));
    }
    Ok(loss)
}

pub fn kl_loss_grad(s0: &EmbeddingSample, s1: &EmbeddingSample, cfg: &KdeConfig) -> Result<KlGradient> {
    check_pair(s0, s1)?;
    let h = bandwidth(s0, s1, cfg)?;
    kl_loss_grad_with_bandwidth(s0, s1, h)
}

/// Adds `coef · ∇ log p̂_refs(x_query)` into the query and reference gradients.
fn accumulate(
    queries: &[Vec<f64>],
    q: usize,
    refs: &[Vec<f64>],
    exclude: Option<usize>,
    h: f64,
    coef: f64,
    grad_q: &mut [Vec<f64>],
    grad_refs: &mut [Vec<f64>],
) -> Result<f64> {
    let x = &queries[q];
    let (ld, weights) = kernel_terms(x, refs, h, exclude)?;
    let inv_h2 = 1.0 / (h * h);
    for (j, (&w, p)) in weights.iter().zip(refs).enumerate() {
        if w == 0.0 {
            continue;
        }
        for k in 0..x.len() {
            let g = coef * w * (x[k] - p[k]) * inv_h2;
            grad_q[q][k] -= g;
            grad_refs[j][k] += g;
        }
    }
    Ok(ld)
}

pub fn kl_loss_grad_with_bandwidth(
    s0: &EmbeddingSample,
    s1: &EmbeddingSample,
    h: f64,
) -> Result<KlGradient> {
    check_pair(s0, s1)?;
    let d = s0.dim();
    let (p0, p1) = (&s0.points, &s1.points);
    let (n0, n1) = (p0.len() as f64, p1.len() as f64);
    let mut grad0 = vec![vec![0.0; d]; p0.len()];
    let mut grad1 = vec![vec![0.0; d]; p1.len()];
    let mut loss = 0.0;

    // Self terms write query and reference gradients into the same buffer,
    // so they go through a scratch copy.
    let mut scratch = vec![vec![0.0; d]; p0.len()];
    for i in 0..p0.len() {
        let self_term = accumulate(p0, i, p0, Some(i), h, 1.0 / n0, &mut grad0, &mut scratch)?;
        let cross = accumulate(p0, i, p1, None, h, -1.0 / n0, &mut grad0, &mut grad1)?;
        loss += (self_term - cross) / n0;
    }
    add_into(&mut grad0, &scratch);

    let mut scratch = vec![vec![0.0; d]; p1.len()];
    for i in 0..p1.len() {
        let self_term = accumulate(p1, i, p1, Some(i), h, 1.0 / n1, &mut grad1, &mut scratch)?;
        let cross = accumulate(p1, i, p0, None, h, -1.0 / n1, &mut grad1, &mut grad0)?;
        loss += (self_term - cross) / n1;
    }
    add_into(&mut grad1, &scratch);

    if !loss.is_finite() {
        return Err(Error::NonFinite("KL loss".into()));
    }
    Ok(KlGradient {
        loss,
        bandwidth: h,
        grad0,
        grad1,
    })
}

fn add_into(dst: &mut [Vec<f64>], src: &[Vec<f64>]) {
    for (a, b) in dst.iter_mut().zip(src) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn sample(points: &[&[f64]], origin: Role) -> EmbeddingSample {
        EmbeddingSample::new(points.iter().map(|p| p.to_vec()).collect(), origin).unwrap()
    }

    fn gaussian_cloud(n: usize, d: usize, center: &[f64], spread: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                (0..d)
                    .map(|k| center[k] + spread * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut *rng))
                    .collect::<Vec<f64>>()
            })
            .collect()
    }

    #[test]
    fn bandwidth_examples() {
        let h = 3f64.sqrt();
        // Equilateral triangle of side 2: every pairwise distance is 2.
        let s0 = sample(&[&[0.0, 0.0], &[2.0, 0.0]], Role::Sensitive);
        let s1 = sample(&[&[1.0, h]], Role::Safe);
        let bw = bandwidth(&s0, &s1, &KdeConfig::default()).unwrap();
        assert!((bw - 2f64.sqrt()).abs() < 1e-12);

        let same = sample(&[&[1.0, 1.0], &[1.0, 1.0]], Role::Sensitive);
        let bw = bandwidth(&same, &same, &KdeConfig::default()).unwrap();
        assert_eq!(bw, 1e-3);

        let fixed = KdeConfig {
            bandwidth: BandwidthRule::Fixed(0.5),
            ..KdeConfig::default()
        };
        assert_eq!(bandwidth(&s0, &s1, &fixed).unwrap(), 0.5);
    }

    #[test]
    fn log_density_examples() {
        let single = sample(&[&[1.0, 2.0]], Role::Safe);
        assert_eq!(kde_log_density(&[1.0, 2.0], &single, 0.7, None).unwrap(), 0.0);
        let h = 0.7;
        let x = [1.0 + h * 2f64.sqrt(), 2.0];
        let ld = kde_log_density(&x, &single, h, None).unwrap();
        assert!((ld + 1.0).abs() < 1e-12);

        let pair = sample(&[&[1.0, 0.0], &[-1.0, 0.0]], Role::Safe);
        let ld = kde_log_density(&[0.0, 0.0], &pair, 0.5, None).unwrap();
        assert!((ld + 1.0 / (2.0 * 0.25)).abs() < 1e-12);

        assert!(kde_log_density(&[1.0, 2.0], &single, 0.7, Some(0)).is_err());
    }

    #[test]
    fn identical_copy_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = gaussian_cloud(100, 3, &[0.0; 3], 0.05, &mut rng);
        let s0 = EmbeddingSample::new(pts.clone(), Role::Sensitive).unwrap();
        let s1 = EmbeddingSample::new(pts.clone(), Role::Safe).unwrap();
        let h = 2.0;
        let loss = kl_loss_with_bandwidth(&s0, &s1, h).unwrap();

        // Oracle: with identical samples, each term is
        // log(n/(n−1)) + log(S/(1+S)), S the kernel sum over j ≠ i.
        let n = pts.len() as f64;
        let mut oracle = 0.0;
        for i in 0..pts.len() {
            let s: f64 = (0..pts.len())
                .filter(|&j| j != i)
                .map(|j| (-sq_dist(&pts[i], &pts[j]) / (2.0 * h * h)).exp())
                .sum();
            oracle += ((n / (n - 1.0)).ln() + (s / (1.0 + s)).ln()) / n;
        }
        oracle *= 2.0;
        assert!((loss - oracle).abs() < 1e-12, "{loss} vs {oracle}");
        // The cross density counts the point itself, so S ≤ n − 1 and every
        // term is ≤ 0; a tight cluster sits just below zero.
        assert!(loss <= 0.0 && loss > -1e-3);
    }

    #[test]
    fn separated_clusters_cost_more_and_loss_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 0.5;
        let a = gaussian_cloud(20, 2, &[0.0, 0.0], 0.1, &mut rng);
        let b = gaussian_cloud(20, 2, &[10.0 * h, 0.0], 0.1, &mut rng);
        let s0 = EmbeddingSample::new(a.clone(), Role::Sensitive).unwrap();
        let s1 = EmbeddingSample::new(b, Role::Safe).unwrap();
        let same = EmbeddingSample::new(a, Role::Safe).unwrap();
        let far = kl_loss_with_bandwidth(&s0, &s1, h).unwrap();
        let near = kl_loss_with_bandwidth(&s0, &same, h).unwrap();
        assert!(far > 1.0 && far > near);
        let swapped = kl_loss_with_bandwidth(&s1, &s0, h).unwrap();
        assert!((far - swapped).abs() < 1e-12);
    }

    #[test]
    fn loss_grows_with_separation() {
        let cfg = KdeConfig {
            bandwidth: BandwidthRule::Fixed(0.5),
            ..KdeConfig::default()
        };
        let mut last = f64::NEG_INFINITY;
        for sep in [0.0, 1.0, 2.5, 5.0] {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let a = gaussian_cloud(40, 2, &[0.0, 0.0], 0.3, &mut rng);
            let b = gaussian_cloud(40, 2, &[sep, 0.0], 0.3, &mut rng);
            let loss = kl_loss(
                &EmbeddingSample::new(a, Role::Sensitive).unwrap(),
                &EmbeddingSample::new(b, Role::Safe).unwrap(),
                &cfg,
            )
            .unwrap();
            assert!(loss > last, "separation {sep}: {loss} <= {last}");
            last = loss;
        }
    }

    fn fd_check(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(1..=3);
        let n0 = rng.random_range(2..=8);
        let n1 = rng.random_range(2..=8);
        let a = gaussian_cloud(n0, d, &vec![0.0; d], 1.0, &mut rng);
        let b = gaussian_cloud(n1, d, &vec![0.5; d], 1.0, &mut rng);
        let h = rng.random_range(0.5..2.0);
        let s0 = EmbeddingSample::new(a.clone(), Role::Sensitive).unwrap();
        let s1 = EmbeddingSample::new(b.clone(), Role::Safe).unwrap();
        let g = kl_loss_grad_with_bandwidth(&s0, &s1, h).unwrap();
        assert!((g.loss - kl_loss_with_bandwidth(&s0, &s1, h).unwrap()).abs() < 1e-12);
        let eval = |a: &[Vec<f64>], b: &[Vec<f64>]| {
            kl_loss_with_bandwidth(
                &EmbeddingSample::new(a.to_vec(), Role::Sensitive).unwrap(),
                &EmbeddingSample::new(b.to_vec(), Role::Safe).unwrap(),
                h,
            )
            .unwrap()
        };
        let step = 1e-6;
        let check = |analytic: f64, numeric: f64| {
            let scale = analytic.abs().max(numeric.abs()).max(1e-5);
            assert!((analytic - numeric).abs() / scale < 1e-4, "{analytic} vs {numeric}");
        };
        for i in 0..n0 {
            for k in 0..d {
                let (mut p, mut m) = (a.clone(), a.clone());
                p[i][k] += step;
                m[i][k] -= step;
                check(g.grad0[i][k], (eval(&p, &b) - eval(&m, &b)) / (2.0 * step));
            }
        }
        for i in 0..n1 {
            for k in 0..d {
                let (mut p, mut m) = (b.clone(), b.clone());
                p[i][k] += step;
                m[i][k] -= step;
                check(g.grad1[i][k], (eval(&a, &p) - eval(&a, &m)) / (2.0 * step));
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..25 {
            fd_check(seed);
        }
    }

    #[test]
    fn gradient_sums_to_zero_and_mirrors_for_shared_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pts = gaussian_cloud(6, 3, &[0.0; 3], 1.0, &mut rng);
        let s0 = EmbeddingSample::new(pts.clone(), Role::Sensitive).unwrap();
        let s1 = EmbeddingSample::new(pts, Role::Safe).unwrap();
        let g = kl_loss_grad(&s0, &s1, &KdeConfig::default()).unwrap();
        for (a, b) in g.grad0.iter().zip(&g.grad1) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }

        let other = gaussian_cloud(5, 3, &[1.0; 3], 0.7, &mut rng);
        let s1 = EmbeddingSample::new(other, Role::Safe).unwrap();
        let g = kl_loss_grad(&s0, &s1, &KdeConfig::default()).unwrap();
        for k in 0..3 {
            let total: f64 = g.grad0.iter().chain(&g.grad1).map(|v| v[k]).sum();
            assert!(total.abs() < 1e-12, "component {k}: {total}");
        }
    }

    #[test]
    fn rigid_motion_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = gaussian_cloud(10, 2, &[0.0, 0.0], 1.0, &mut rng);
        let b = gaussian_cloud(12, 2, &[0.8, -0.3], 1.2, &mut rng);
        let cfg = KdeConfig::default();
        let base = kl_loss(
            &EmbeddingSample::new(a.clone(), Role::Sensitive).unwrap(),
            &EmbeddingSample::new(b.clone(), Role::Safe).unwrap(),
            &cfg,
        )
        .unwrap();
        let (s, c) = 0.83f64.sin_cos();
        let moved = |pts: &[Vec<f64>]| -> Vec<Vec<f64>> {
            pts.iter()
                .map(|p| vec![c * p[0] - s * p[1] + 3.0, s * p[0] + c * p[1] - 7.0])
                .collect()
        };
        let after = kl_loss(
            &EmbeddingSample::new(moved(&a), Role::Sensitive).unwrap(),
            &EmbeddingSample::new(moved(&b), Role::Safe).unwrap(),
            &cfg,
        )
        .unwrap();
        assert!((base - after).abs() < 1e-10);
    }

    #[test]
    fn detached_bandwidth_gradient_differs_between_modes_under_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = gaussian_cloud(6, 2, &[0.0, 0.0], 1.0, &mut rng);
        let b = gaussian_cloud(6, 2, &[1.0, 0.0], 1.0, &mut rng);
        let scaled = |p: &[Vec<f64>]| -> Vec<Vec<f64>> {
            p.iter().map(|v| v.iter().map(|x| 3.0 * x).collect()).collect()
        };
        let fixed = KdeConfig {
            bandwidth: BandwidthRule::Fixed(1.0),
            ..KdeConfig::default()
        };
        let median = KdeConfig::default();
        let mk = |p: Vec<Vec<f64>>, r: Role| EmbeddingSample::new(p, r).unwrap();
        let l_med = kl_loss(&mk(a.clone(), Role::Sensitive), &mk(b.clone(), Role::Safe), &median).unwrap();
        let l_med_scaled =
            kl_loss(&mk(scaled(&a), Role::Sensitive), &mk(scaled(&b), Role::Safe), &median).unwrap();
        assert!((l_med - l_med_scaled).abs() < 1e-10);
        let l_fix = kl_loss(&mk(a.clone(), Role::Sensitive), &mk(b.clone(), Role::Safe), &fixed).unwrap();
        let l_fix_scaled =
            kl_loss(&mk(scaled(&a), Role::Sensitive), &mk(scaled(&b), Role::Safe), &fixed).unwrap();
        assert!((l_fix - l_fix_scaled).abs() > 1e-3);

        // With h detached, the radial component Σ x·∇x does not vanish even
        // though the median-mode loss is scale invariant.
        let g = kl_loss_grad(&mk(a.clone(), Role::Sensitive), &mk(b.clone(), Role::Safe), &median).unwrap();
        let radial: f64 = a
            .iter()
            .zip(&g.grad0)
            .chain(b.iter().zip(&g.grad1))
            .map(|(p, gr)| p.iter().zip(gr).map(|(x, y)| x * y).sum::<f64>())
            .sum();
        assert!(radial.abs() > 1e-6);
    }

    #[test]
    fn degenerate_inputs() {
        let one = sample(&[&[0.0]], Role::Safe);
        let two = sample(&[&[0.0], &[1.0]], Role::Safe);
        assert!(kl_loss(&one, &two, &KdeConfig::default()).is_err());
        let collapsed = sample(&[&[2.0, 2.0], &[2.0, 2.0], &[2.0, 2.0]], Role::Safe);
        let loss = kl_loss(&collapsed, &collapsed, &KdeConfig::default()).unwrap();
        assert!(loss.is_finite());
    }
}
