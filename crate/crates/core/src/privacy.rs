//! Plug-in Rényi divergence between redacted corpora and its (ε, δ) reading.
//!
//! Sentence embeddings of both corpora are quantized with k-means fit on
//! their union; the smoothed cluster histograms stand in for the two
//! distributions.

use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{pad_batch, Corpus};
use crate::divloss::EmbeddingSample;
use crate::embed::{mean_pool, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::redact::{redaction_indices, WordRanker, RANK_CHUNK};

pub const MAX_LLOYD_ITERS: usize = 100;
pub const LLOYD_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizerModel {
    centroids: Vec<Vec<f64>>,
    seed: u64,
    iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl QuantizerModel {
    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Index of the nearest centroid; the lower index wins ties.
    pub fn assign(&self, point: &[f64]) -> usize {
        nearest(&self.centroids, point).0
    }
}

fn nearest(centroids: &[Vec<f64>], point: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(centroid, point);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp(points: &[&[f64]], c: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < c {
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            Err(_) => rng.random_range(0..points.len()),
        };
        let centroid = points[next].to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroid));
        }
        centroids.push(centroid);
    }
    centroids
}

/// k-means++ seeding followed by Lloyd iterations on the union of both
/// samples. The union is sorted first, so the fit ignores which sample a
/// point came from and in what order.
pub fn fit_quantizer(
    points0: &EmbeddingSample,
    points1: &EmbeddingSample,
    clusters: usize,
    seed: u64,
) -> Result<QuantizerModel> {
    if points0.dim() != points1.dim() {
        return Err(Error::DimensionMismatch {
            expected: points0.dim(),
            actual: points1.dim(),
        });
    }
    let mut points: Vec<&[f64]> = points0
        .points()
        .iter()
        .chain(points1.points())
        .map(Vec::as_slice)
        .collect();
    points.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    fit_points(&points, clusters, seed)
}

fn fit_points(points: &[&[f64]], clusters: usize, seed: u64) -> Result<QuantizerModel> {
    if clusters < 2 {
        return Err(Error::invalid("at least 2 clusters are required"));
    }
    if points.len() < clusters {
        return Err(Error::invalid(format!(
            "{} points cannot fill {clusters} clusters; use a smaller cluster count",
            points.len()
        )));
    }
    let d = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(points, clusters, &mut rng);
    let mut iterations = 0;
    while iterations < MAX_LLOYD_ITERS {
        iterations += 1;
        let mut sums = vec![vec![0.0; d]; clusters];
        let mut counts = vec![0usize; clusters];
        let mut dists = Vec::with_capacity(points.len());
        for p in points {
            let (c, dist) = nearest(&centroids, p);
            dists.push(dist);
            counts[c] += 1;
            sums[c].iter_mut().zip(p.iter()).for_each(|(s, x)| *s += x);
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &n)| s.into_iter().map(|x| x / n.max(1) as f64).collect())
            .collect();
        for c in 0..clusters {
            if counts[c] == 0 {
                let far = dists
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, &x)| if x > dists[best] { i } else { best });
                next[c] = points[far].to_vec();
                dists[far] = 0.0;
            }
        }
        let movement = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if movement < LLOYD_TOL {
            break;
        }
    }
    if centroids.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("k-means centroids".into()));
    }
    Ok(QuantizerModel {
        centroids,
        seed,
        iterations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothedHistogram {
    pub probs: Vec<f64>,
    pub smoothing: f64,
}

/// Laplace-smoothed nearest-centroid counts: (count + λ) / (n + λC).
pub fn smoothed_histogram(points: &[Vec<f64>], q: &QuantizerModel, smoothing: f64) -> Result<SmoothedHistogram> {
    if !(smoothing > 0.0 && smoothing.is_finite()) {
        return Err(Error::invalid("smoothing must be positive"));
    }
    let c = q.clusters();
    let mut counts = vec![0usize; c];
    for p in points {
        counts[q.assign(p)] += 1;
    }
    let denom = points.len() as f64 + smoothing * c as f64;
    Ok(SmoothedHistogram {
        probs: counts.iter().map(|&k| (k as f64 + smoothing) / denom).collect(),
        smoothing,
    })
}

/// Order-α Rényi divergence of two strictly positive categorical
/// distributions; α = 1 gives KL. Clamped at zero.
pub fn renyi_discrete(p: &[f64], q: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    if p.iter().chain(q).any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::invalid("distributions must be strictly positive"));
    }
    let value = if alpha == 1.0 {
        p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum::<f64>()
    } else {
        let s: f64 = p
            .iter()
            .zip(q)
            .map(|(a, b)| (alpha * a.ln() + (1.0 - alpha) * b.ln()).exp())
            .sum();
        s.ln() / (alpha - 1.0)
    };
    Ok(value.max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceEstimate {
    pub alpha: f64,
    pub value_01: f64,
    pub value_10: f64,
    pub value: f64,
}

impl DivergenceEstimate {
    pub fn new(alpha: f64, value_01: f64, value_10: f64) -> Self {
        DivergenceEstimate {
            alpha,
            value_01,
            value_10,
            value: value_01.max(value_10),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conversion {
    #[default]
    Zcdp,
    Rdp,
}

impl fmt::Display for Conversion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Conversion::Zcdp => "zcdp",
            Conversion::Rdp => "rdp",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "delta")]
pub enum DeltaRule {
    /// One over the total number of sentences across both corpora.
    #[default]
    OneOverN,
    Fixed(f64),
}

impl DeltaRule {
    pub fn resolve(&self, n0: usize, n1: usize) -> Result<f64> {
        let delta = match *self {
            DeltaRule::OneOverN => 1.0 / (n0 + n1) as f64,
            DeltaRule::Fixed(d) => d,
        };
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(delta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyEstimate {
    pub epsilon: f64,
    pub delta: f64,
    pub alpha: f64,
    /// D_α / α, reported for both conversions.
    pub rho: f64,
    pub conversion: Conversion,
}

pub fn epsilon_from_divergence(
    est: &DivergenceEstimate,
    delta: f64,
    conversion: Conversion,
) -> Result<PrivacyEstimate> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(est.value >= 0.0 && est.value.is_finite()) {
        return Err(Error::invalid("divergence must be finite and non-negative"));
    }
    let log_inv_delta = (1.0 / delta).ln();
    let rho = est.value / est.alpha;
    let epsilon = match conversion {
        Conversion::Zcdp => rho + 2.0 * (rho * log_inv_delta).sqrt(),
        Conversion::Rdp => {
            if est.alpha <= 1.0 {
                return Err(Error::invalid("rdp conversion needs alpha > 1"));
            }
            est.value + log_inv_delta / (est.alpha - 1.0)
        }
    };
    Ok(PrivacyEstimate {
        epsilon,
        delta,
        alpha: est.alpha,
        rho,
        conversion,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub alpha: f64,
    pub clusters: usize,
    pub smoothing: f64,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            alpha: 2.0,
            clusters: 10,
            smoothing: 1.0,
            seed: 0,
        }
    }
}

/// Mean-pooled sentence embeddings of a whole corpus.
pub fn pool_corpus(corpus: &Corpus, provider: &dyn EmbeddingProvider) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(corpus.len());
    for chunk in corpus.sentences().chunks(RANK_CHUNK) {
        let batch = pad_batch(chunk)?;
        let embedded = provider.embed(corpus.role(), &batch)?;
        out.extend(mean_pool(&embedded)?.into_iter().map(|s| s.vector));
    }
    Ok(out)
}

pub fn estimate_from_samples(
    s0: &EmbeddingSample,
    s1: &EmbeddingSample,
    cfg: &EstimatorConfig,
) -> Result<DivergenceEstimate> {
    let q = fit_quantizer(s0, s1, cfg.clusters, cfg.seed)?;
    let p0 = smoothed_histogram(s0.points(), &q, cfg.smoothing)?;
    let p1 = smoothed_histogram(s1.points(), &q, cfg.smoothing)?;
    Ok(DivergenceEstimate::new(
        cfg.alpha,
        renyi_discrete(&p0.probs, &p1.probs, cfg.alpha)?,
        renyi_discrete(&p1.probs, &p0.probs, cfg.alpha)?,
    ))
}

pub fn estimate_divergence(
    corpus0: &Corpus,
    corpus1: &Corpus,
    provider: &dyn EmbeddingProvider,
    cfg: &EstimatorConfig,
) -> Result<DivergenceEstimate> {
    if corpus0.is_empty() || corpus1.is_empty() {
        return Err(Error::invalid("both corpora must be non-empty"));
    }
    let s0 = EmbeddingSample::new(pool_corpus(corpus0, provider)?, corpus0.role())?;
    let s1 = EmbeddingSample::new(pool_corpus(corpus1, provider)?, corpus1.role())?;
    estimate_from_samples(&s0, &s1, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveConfig {
    pub k_grid: Vec<f64>,
    pub delta_rule: DeltaRule,
    pub conversion: Conversion,
    pub estimator: EstimatorConfig,
}

impl Default for CurveConfig {
    fn default() -> Self {
        CurveConfig {
            k_grid: (0..=8).map(|k| f64::from(k * 10)).collect(),
            delta_rule: DeltaRule::OneOverN,
            conversion: Conversion::Zcdp,
            estimator: EstimatorConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub redaction_percent: f64,
    pub alpha: f64,
    pub divergence: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub delta: f64,
}

pub const CURVE_HEADER: &str = "redaction_percent,alpha,divergence,rho,epsilon,delta";

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.redaction_percent, r.alpha, r.divergence, r.rho, r.epsilon, r.delta
        ));
    }
    out
}

/// Per-grid-point k-means seed; the same (seed, K) always maps to the same
/// value, whichever ranker is being evaluated.
pub fn grid_seed(seed: u64, redact_percent: f64) -> u64 {
    let mut z = seed ^ redact_percent.to_bits().wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Redacts both corpora at every K of the grid with `ranker` and measures
/// the divergence and ε of each redacted pair.
pub fn epsilon_curve(
    d0: &Corpus,
    d1: &Corpus,
    ranker: &dyn WordRanker,
    provider: &dyn EmbeddingProvider,
    cfg: &CurveConfig,
) -> Result<Vec<CurveRow>> {
    if let Some(k) = cfg.k_grid.iter().find(|k| !(0.0..=100.0).contains(*k)) {
        return Err(Error::invalid(format!("redaction percent {k} is outside [0, 100]")));
    }
    let delta = cfg.delta_rule.resolve(d0.len(), d1.len())?;
    let ranks0 = ranker.rank_corpus(d0, provider)?;
    let ranks1 = ranker.rank_corpus(d1, provider)?;
    cfg.k_grid
        .iter()
        .map(|&k| {
            let r0 = d0.redacted(&redaction_indices(&ranks0, k))?;
            let r1 = d1.redacted(&redaction_indices(&ranks1, k))?;
            let est_cfg = EstimatorConfig {
                seed: grid_seed(cfg.estimator.seed, k),
                ..cfg.estimator
            };
            let est = estimate_divergence(&r0, &r1, provider, &est_cfg)?;
            let p = epsilon_from_divergence(&est, delta, cfg.conversion)?;
            Ok(CurveRow {
                redaction_percent: k,
                alpha: est.alpha,
                divergence: est.value,
                rho: p.rho,
                epsilon: p.epsilon,
                delta,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Role;
    use crate::embed::BuiltinEmbedder;
    use crate::ranker::{RankVector, RankerDims, RankerParams};
    use crate::redact::MlpRanker;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn blob(center: &[f64], n: usize, spread: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                center
                    .iter()
                    .map(|c| c + spread * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }

    fn sample(points: Vec<Vec<f64>>, role: Role) -> EmbeddingSample {
        EmbeddingSample::new(points, role).unwrap()
    }

    #[test]
    fn two_blobs_split_cleanly() {
        let a = blob(&[0.0, 0.0], 40, 0.1, 1);
        let b = blob(&[10.0, 10.0], 40, 0.1, 2);
        let q = fit_quantizer(&sample(a.clone(), Role::Sensitive), &sample(b.clone(), Role::Safe), 2, 7)
            .unwrap();
        let hull = |pts: &[Vec<f64>], c: &[f64]| {
            (0..2).all(|j| {
                let lo = pts.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
                let hi = pts.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max);
                (lo..=hi).contains(&c[j])
            })
        };
        let cs = q.centroids();
        assert!((hull(&a, &cs[0]) && hull(&b, &cs[1])) || (hull(&a, &cs[1]) && hull(&b, &cs[0])));
        assert!(q.iterations() <= MAX_LLOYD_ITERS);
    }

    #[test]
    fn one_cluster_per_point_has_zero_error() {
        let a = blob(&[0.0, 0.0, 0.0], 5, 1.0, 3);
        let b = blob(&[1.0, 0.0, 0.0], 4, 1.0, 4);
        let q = fit_quantizer(&sample(a.clone(), Role::Sensitive), &sample(b.clone(), Role::Safe), 9, 0)
            .unwrap();
        for p in a.iter().chain(&b) {
            assert_eq!(sq_dist(&q.centroids()[q.assign(p)], p), 0.0);
        }
    }

    #[test]
    fn quantizer_is_deterministic_and_checks_size() {
        let a = sample(blob(&[0.0; 4], 30, 1.0, 5), Role::Sensitive);
        let b = sample(blob(&[1.0; 4], 30, 1.0, 6), Role::Safe);
        assert_eq!(fit_quantizer(&a, &b, 5, 11).unwrap(), fit_quantizer(&a, &b, 5, 11).unwrap());
        let err = fit_quantizer(&a, &b, 61, 0).unwrap_err();
        assert!(err.to_string().contains("smaller cluster count"));
        assert!(fit_quantizer(&a, &b, 1, 0).is_err());
    }

    #[test]
    fn histogram_examples() {
        let q = QuantizerModel {
            centroids: vec![vec![0.0], vec![10.0]],
            seed: 0,
            iterations: 0,
        };
        let h = smoothed_histogram(&[], &q, 1.0).unwrap();
        assert_eq!(h.probs, vec![0.5, 0.5]);
        let pts = vec![vec![0.1]; 8];
        let h = smoothed_histogram(&pts, &q, 1.0).unwrap();
        assert!((h.probs[0] - 0.9).abs() < 1e-15 && (h.probs[1] - 0.1).abs() < 1e-15);
        assert!(smoothed_histogram(&pts, &q, 0.0).is_err());
    }

    #[test]
    fn renyi_examples() {
        let p = [0.5, 0.5];
        let q = [0.75, 0.25];
        let d2 = renyi_discrete(&p, &q, 2.0).unwrap();
        assert!((d2 - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        let kl = renyi_discrete(&p, &q, 1.0).unwrap();
        assert!((kl - (0.5 * (2.0f64 / 3.0).ln() + 0.5 * 2.0f64.ln())).abs() < 1e-12);
        assert!((renyi_discrete(&p, &q, 1.0001).unwrap() - kl).abs() < 1e-3);
        for alpha in [0.5, 1.0, 2.0, 7.0] {
            assert_eq!(renyi_discrete(&q, &q, alpha).unwrap(), 0.0);
        }
        assert!(renyi_discrete(&p, &q, 0.0).is_err());
        assert!(renyi_discrete(&p, &[1.0, 0.0], 2.0).is_err());
        assert!(renyi_discrete(&p, &[1.0], 2.0).is_err());
    }

    fn categorical() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..=10).prop_flat_map(|c| {
            (
                prop::collection::vec(0.01f64..1.0, c),
                prop::collection::vec(0.01f64..1.0, c),
            )
                .prop_map(|(a, b)| {
                    let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
                    (
                        a.into_iter().map(|x| x / sa).collect(),
                        b.into_iter().map(|x| x / sb).collect(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn renyi_nondecreasing_in_order((p, q) in categorical(), a in 0.1f64..5.0, step in 0.01f64..3.0) {
            let lo = renyi_discrete(&p, &q, a).unwrap();
            let hi = renyi_discrete(&p, &q, a + step).unwrap();
            prop_assert!(hi >= lo - 1e-12);
        }

        #[test]
        fn zcdp_epsilon_strictly_increasing(d in 0.0f64..10.0, bump in 1e-6f64..1.0, delta in 1e-9f64..0.5) {
            let e = |v: f64| epsilon_from_divergence(&DivergenceEstimate::new(2.0, v, 0.0), delta, Conversion::Zcdp)
                .unwrap()
                .epsilon;
            prop_assert!(e(d + bump) > e(d));
        }
    }

    #[test]
    fn conversion_examples() {
        let est = DivergenceEstimate::new(2.0, 0.02, 0.01);
        assert_eq!(est.value, 0.02);
        let p = epsilon_from_divergence(&est, 1e-3, Conversion::Zcdp).unwrap();
        assert!((p.rho - 0.01).abs() < 1e-15);
        assert!((p.epsilon - 0.5357).abs() < 1e-4);
        let zero = DivergenceEstimate::new(2.0, 0.0, 0.0);
        assert_eq!(epsilon_from_divergence(&zero, 1e-5, Conversion::Zcdp).unwrap().epsilon, 0.0);
        let r = epsilon_from_divergence(&est, 1e-3, Conversion::Rdp).unwrap();
        assert!((r.epsilon - (0.02 + 1000f64.ln())).abs() < 1e-12);
        let at_one = DivergenceEstimate::new(1.0, 0.1, 0.0);
        assert!(epsilon_from_divergence(&at_one, 1e-3, Conversion::Rdp).is_err());
        assert!(epsilon_from_divergence(&est, 1.0, Conversion::Zcdp).is_err());
        assert!(epsilon_from_divergence(&est, 0.0, Conversion::Zcdp).is_err());
        assert_eq!(DeltaRule::OneOverN.resolve(3, 5).unwrap(), 0.125);
        assert!(DeltaRule::Fixed(2.0).resolve(3, 5).is_err());
    }

    fn texts(n: usize, vocab: &[&str], seed: u64) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                (0..6)
                    .map(|_| vocab[rng.random_range(0..vocab.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    }

    #[test]
    fn corpus_against_its_copy_is_zero() {
        let t = texts(300, &["a", "b", "c", "d", "e", "f", "g"], 1);
        let c0 = Corpus::from_texts(Role::Sensitive, &t).unwrap();
        let c1 = Corpus::from_texts(Role::Safe, &t).unwrap();
        let provider = BuiltinEmbedder::new(8, 0).unwrap();
        let est = estimate_divergence(&c0, &c1, &provider, &EstimatorConfig::default()).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn separated_blobs_diverge_and_max_is_symmetric() {
        let a = sample(blob(&[0.0, 0.0], 200, 1.0, 8), Role::Sensitive);
        let b = sample(blob(&[10.0, 0.0], 200, 1.0, 9), Role::Safe);
        let cfg = EstimatorConfig::default();
        let ab = estimate_from_samples(&a, &b, &cfg).unwrap();
        let ba = estimate_from_samples(&b, &a, &cfg).unwrap();
        assert!(ab.value_01 > 1.0);
        assert!((ab.value - ba.value).abs() < 1e-12);
    }

    struct Fixed;

    impl WordRanker for Fixed {
        fn rank_corpus(&self, corpus: &Corpus, _: &dyn EmbeddingProvider) -> Result<Vec<RankVector>> {
            corpus
                .sentences()
                .iter()
                .map(|s| RankVector::padded((0..s.len()).map(|i| 0.1 + 0.01 * i as f64).collect(), s.len()))
                .collect()
        }
    }

    #[test]
    fn curve_rows_follow_grid_and_k0_is_unredacted() {
        let c0 = Corpus::from_texts(Role::Sensitive, &texts(120, &["a", "b", "c", "x"], 2)).unwrap();
        let c1 = Corpus::from_texts(Role::Safe, &texts(120, &["a", "b", "c", "y"], 3)).unwrap();
        let provider = BuiltinEmbedder::new(6, 1).unwrap();
        let cfg = CurveConfig {
            k_grid: vec![50.0, 0.0, 100.0],
            ..CurveConfig::default()
        };
        let rows = epsilon_curve(&c0, &c1, &Fixed, &provider, &cfg).unwrap();
        assert_eq!(rows.iter().map(|r| r.redaction_percent).collect::<Vec<_>>(), [50.0, 0.0, 100.0]);
        let direct = estimate_divergence(
            &c0,
            &c1,
            &provider,
            &EstimatorConfig {
                seed: grid_seed(0, 0.0),
                ..cfg.estimator
            },
        )
        .unwrap();
        assert_eq!(rows[1].divergence, direct.value);
        assert!(rows[2].divergence <= rows[1].divergence);
        assert_eq!(rows[2].divergence, 0.0);
        assert!(rows.iter().all(|r| r.alpha == 2.0 && r.delta == 1.0 / 240.0));

        let mlp = MlpRanker::new(RankerParams::init(RankerDims::new(6, [4, 4, 4]).unwrap(), 0));
        let again = epsilon_curve(&c0, &c1, &mlp, &provider, &cfg).unwrap();
        assert_eq!(again, epsilon_curve(&c0, &c1, &mlp, &provider, &cfg).unwrap());
        assert_eq!(again[1], rows[1]);

        let csv = curve_csv(&rows);
        assert!(csv.starts_with(CURVE_HEADER));
        assert_eq!(csv.lines().count(), 4);
        assert!(epsilon_curve(&c0, &c1, &Fixed, &provider, &CurveConfig { k_grid: vec![101.0], ..cfg }).is_err());
    }
}
