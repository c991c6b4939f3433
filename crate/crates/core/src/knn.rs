//! Attribute distance between jobs, nearest-neighbor retrieval, and the
//! distance-weighted solution function that turns neighbors into a cost
//! estimate.

use serde::{Deserialize, Serialize};

use crate::domain::JobRecord;
use crate::geo::haversine_km;
use crate::{Error, Result};

/// Relative importance of the four job attributes inside the distance
/// metric: collection geography, delivery geography, time, and load size.
/// All components are finite and non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeWeights {
    pub collection: f64,
    pub delivery: f64,
    pub time: f64,
    pub load: f64,
}

impl AttributeWeights {
    /// Builds weights, rejecting negative or non-finite components.
    pub fn new(collection: f64, delivery: f64, time: f64, load: f64) -> Result<Self> {
        let w = AttributeWeights {
            collection,
            delivery,
            time,
            load,
        };
        for v in w.as_array() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "attribute weight {v} must be finite and >= 0"
                )));
            }
        }
        Ok(w)
    }

    /// The untrained equal-weights candidate.
    pub fn ones() -> Self {
        AttributeWeights {
            collection: 1.0,
            delivery: 1.0,
            time: 1.0,
            load: 1.0,
        }
    }

    /// Projects a raw search vector onto the valid region by clamping each
    /// component at zero. Non-finite components are preserved for the
    /// caller to detect.
    pub fn clamped(raw: &[f64; 4]) -> Self {
        AttributeWeights {
            collection: raw[0].max(0.0),
            delivery: raw[1].max(0.0),
            time: raw[2].max(0.0),
            load: raw[3].max(0.0),
        }
    }

    /// Components in metric order: collection, delivery, time, load.
    pub fn as_array(&self) -> [f64; 4] {
        [self.collection, self.delivery, self.time, self.load]
    }

    /// True when every component is finite.
    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// How neighbor contributions are weighted in the solution function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionWeighting {
    /// Weight grows with distance (weight_i = D_i / sum D_j). The default:
    /// the solution function this estimator reproduces is defined this way,
    /// giving far neighbors more influence.
    #[default]
    Proportional,
    /// Conventional inverse-distance weighting (weight_i proportional to
    /// 1 / D_i): nearer neighbors dominate.
    Inverse,
}

impl SolutionWeighting {
    pub fn label(&self) -> &'static str {
        match self {
            SolutionWeighting::Proportional => "proportional",
            SolutionWeighting::Inverse => "inverse",
        }
    }
}

impl std::str::FromStr for SolutionWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "proportional" => Ok(SolutionWeighting::Proportional),
            "inverse" => Ok(SolutionWeighting::Inverse),
            other => Err(Error::InvalidParameter(format!(
                "unknown weighting mode {other:?} (expected proportional or inverse)"
            ))),
        }
    }
}

/// Full configuration of one estimator instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Number of neighbors retrieved; at least 1.
    pub k: usize,
    pub weights: AttributeWeights,
    pub mode: SolutionWeighting,
    /// Distances at or below this count as exact matches.
    pub exact_match_epsilon: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            k: 5,
            weights: AttributeWeights::ones(),
            mode: SolutionWeighting::default(),
            exact_match_epsilon: 1e-9,
        }
    }
}

impl EstimatorConfig {
    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        if !self.exact_match_epsilon.is_finite() || self.exact_match_epsilon < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "exact-match epsilon {} must be finite and >= 0",
                self.exact_match_epsilon
            )));
        }
        AttributeWeights::new(
            self.weights.collection,
            self.weights.delivery,
            self.weights.time,
            self.weights.load,
        )?;
        Ok(())
    }
}

/// One retrieved analogy: pool job id, its attribute distance to the probe,
/// and the cost and load its contribution is derived from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: u64,
    pub distance: f64,
    pub cost_eur: f64,
    pub load_size: f64,
}

impl Neighbor {
    /// Cost per full container load.
    pub fn normalized_cost(&self) -> f64 {
        self.cost_eur / self.load_size
    }
}

/// The four raw dissimilarity terms between jobs, in weight order:
/// collection haversine km, delivery haversine km, squared day difference,
/// squared load difference.
///
/// The location terms enter the metric unsquared; only the day and load
/// differences are squared.
pub fn distance_terms(a: &JobRecord, b: &JobRecord) -> [f64; 4] {
    let dt = (b.date - a.date) as f64;
    let dl = b.load_size - a.load_size;
    [
        haversine_km(&a.collection, &b.collection),
        haversine_km(&a.delivery, &b.delivery),
        dt * dt,
        dl * dl,
    ]
}

/// Combines precomputed terms with weights:
/// `sqrt(w1 t1 + w2 t2 + w3 t3 + w4 t4)`.
///
/// Shared by the direct path and the training cache so both produce
/// bit-identical distances.
pub fn weighted_distance(terms: &[f64; 4], w: &AttributeWeights) -> f64 {
    (w.collection * terms[0] + w.delivery * terms[1] + w.time * terms[2] + w.load * terms[3])
        .sqrt()
}

/// Attribute distance between two jobs under the given weights.
pub fn attribute_distance(a: &JobRecord, b: &JobRecord, w: &AttributeWeights) -> f64 {
    weighted_distance(&distance_terms(a, b), w)
}

/// The `min(k, |pool|)` pool jobs nearest to the probe, ascending by
/// (distance, id); ties at the cutoff resolve to the lower id.
pub fn nearest_neighbors(
    pool: &[JobRecord],
    probe: &JobRecord,
    cfg: &EstimatorConfig,
) -> Result<Vec<Neighbor>> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut all: Vec<Neighbor> = pool
        .iter()
        .map(|job| Neighbor {
            id: job.id,
            distance: attribute_distance(probe, job, &cfg.weights),
            cost_eur: job.cost_eur,
            load_size: job.load_size,
        })
        .collect();
    all.sort_unstable_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then_with(|| a.id.cmp(&b.id))
    });
    all.truncate(cfg.k);
    Ok(all)
}

/// An estimate with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub cost_eur: f64,
    /// True when the exact-match shortcut produced the estimate.
    pub exact_match: bool,
    pub neighbors: Vec<Neighbor>,
    pub pool_size: usize,
}

/// Combines retrieved neighbors into a cost estimate for a probe of the
/// given load size.
///
/// Neighbors at distance <= epsilon are exact matches: the estimate is then
/// the mean of their costs rescaled by the load ratio (an identical
/// historical job is the best possible analogy, and the proportional rule
/// would otherwise give it zero weight); a true duplicate reproduces its
/// cost bit-exactly. Otherwise the normalized costs are convexly combined
/// with weights D_i / sum D_j (proportional mode) or (1/D_i) / sum (1/D_j)
/// (inverse mode) and scaled by the probe load.
pub fn solve_from_neighbors(
    neighbors: &[Neighbor],
    probe_load: f64,
    mode: SolutionWeighting,
    exact_match_epsilon: f64,
) -> Result<(f64, bool)> {
    if neighbors.is_empty() {
        return Err(Error::EmptyPool);
    }
    let exact: Vec<&Neighbor> = neighbors
        .iter()
        .filter(|n| n.distance <= exact_match_epsilon)
        .collect();
    if !exact.is_empty() {
        let sum = exact
            .iter()
            .map(|n| n.cost_eur * (probe_load / n.load_size))
            .sum::<f64>();
        return Ok((sum / exact.len() as f64, true));
    }
    let normalized = match mode {
        SolutionWeighting::Proportional => {
            let sum_d: f64 = neighbors.iter().map(|n| n.distance).sum();
            neighbors
                .iter()
                .map(|n| (n.distance / sum_d) * n.normalized_cost())
                .sum::<f64>()
        }
        SolutionWeighting::Inverse => {
            let sum_inv: f64 = neighbors.iter().map(|n| 1.0 / n.distance).sum();
            neighbors
                .iter()
                .map(|n| (1.0 / n.distance / sum_inv) * n.normalized_cost())
                .sum::<f64>()
        }
    };
    Ok((normalized * probe_load, false))
}

/// Estimates the probe's cost from the pool, returning the neighbors used.
pub fn estimate_cost_detailed(
    pool: &[JobRecord],
    probe: &JobRecord,
    cfg: &EstimatorConfig,
) -> Result<Estimate> {
    let neighbors = nearest_neighbors(pool, probe, cfg)?;
    let (cost_eur, exact_match) = solve_from_neighbors(
        &neighbors,
        probe.load_size,
        cfg.mode,
        cfg.exact_match_epsilon,
    )?;
    Ok(Estimate {
        cost_eur,
        exact_match,
        neighbors,
        pool_size: pool.len(),
    })
}

/// Estimates the probe's cost from the pool.
pub fn estimate_cost(pool: &[JobRecord], probe: &JobRecord, cfg: &EstimatorConfig) -> Result<f64> {
    Ok(estimate_cost_detailed(pool, probe, cfg)?.cost_eur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Direction, GeoPoint};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn job(id: u64, date: i64, load: f64, cost: f64) -> JobRecord {
        JobRecord {
            id,
            date,
            collection: GeoPoint { lat: 53.0, lng: -6.0 },
            delivery: GeoPoint { lat: 51.0, lng: 4.0 },
            load_size: load,
            cost_eur: cost,
            revenue_eur: None,
            direction: Direction::Export,
            collection_country: None,
            delivery_country: None,
        }
    }

    fn cfg(k: usize) -> EstimatorConfig {
        EstimatorConfig {
            k,
            ..EstimatorConfig::default()
        }
    }

    #[test]
    fn identical_jobs_have_zero_distance() {
        let a = job(1, 10, 0.5, 100.0);
        let b = job(2, 10, 0.5, 200.0);
        assert_eq!(attribute_distance(&a, &b, &AttributeWeights::ones()), 0.0);
    }

    #[test]
    fn zero_weights_give_zero_distance() {
        let a = job(1, 10, 0.5, 100.0);
        let mut b = job(2, 400, 0.9, 200.0);
        b.collection = GeoPoint { lat: 40.0, lng: 10.0 };
        let w = AttributeWeights::new(0.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(attribute_distance(&a, &b, &w), 0.0);
    }

    #[test]
    fn distance_matches_hand_substitution() {
        // Same route, 10 days and 0.5 container apart, unit weights:
        // sqrt(0 + 0 + 100 + 0.25)
        let a = job(1, 0, 0.5, 100.0);
        let b = job(2, 10, 1.0, 100.0);
        let d = attribute_distance(&a, &b, &AttributeWeights::ones());
        assert_relative_eq!(d, 100.25f64.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(d, 10.0125, max_relative = 1e-4);
    }

    #[test]
    fn single_neighbor_weight_ratio_is_one() {
        let pool = vec![job(1, 0, 1.0, 1000.0)]; // normalized cost 1000
        let mut probe = job(9, 5, 0.5, 0.0);
        probe.cost_eur = 1.0; // irrelevant to estimation
        let est = estimate_cost(&pool, &probe, &cfg(1)).unwrap();
        assert_relative_eq!(est, 500.0);
    }

    #[test]
    fn proportional_mode_weights_far_neighbors_more() {
        // distances {1, 3}, normalized costs {100, 200}, probe load 0.5:
        // 0.5 * (0.25*100 + 0.75*200) = 87.5
        let neighbors = vec![
            Neighbor { id: 1, distance: 1.0, cost_eur: 100.0, load_size: 1.0 },
            Neighbor { id: 2, distance: 3.0, cost_eur: 200.0, load_size: 1.0 },
        ];
        let (est, exact) =
            solve_from_neighbors(&neighbors, 0.5, SolutionWeighting::Proportional, 1e-9).unwrap();
        assert!(!exact);
        assert_relative_eq!(est, 87.5);
        // inverse mode reverses the emphasis: 0.5 * (0.75*100 + 0.25*200) = 62.5
        let (est, _) =
            solve_from_neighbors(&neighbors, 0.5, SolutionWeighting::Inverse, 1e-9).unwrap();
        assert_relative_eq!(est, 62.5);
    }

    #[test]
    fn exact_match_shortcut_returns_matching_cost() {
        let mut pool = vec![
            job(1, 0, 0.25, 840.0),
            job(2, 50, 0.9, 3000.0),
            job(3, 90, 0.1, 200.0),
        ];
        pool[1].collection = GeoPoint { lat: 48.0, lng: 2.0 };
        let probe = job(9, 0, 0.25, 0.0);
        for k in 1..=3 {
            let est = estimate_cost_detailed(&pool, &probe, &cfg(k)).unwrap();
            assert!(est.exact_match);
            assert_relative_eq!(est.cost_eur, 840.0);
        }
    }

    #[test]
    fn multiple_exact_matches_average() {
        let pool = vec![job(1, 0, 0.5, 100.0), job(2, 0, 0.5, 300.0)];
        // both identical to the probe: mean normalized cost (200+600)/2 = 400
        let probe = job(9, 0, 0.5, 0.0);
        let est = estimate_cost_detailed(&pool, &probe, &cfg(2)).unwrap();
        assert!(est.exact_match);
        assert_relative_eq!(est.cost_eur, 400.0 * 0.5);
    }

    #[test]
    fn k_equal_to_pool_returns_everything_sorted() {
        let pool: Vec<JobRecord> = (0..5).map(|i| job(i, i as i64 * 10, 0.5, 100.0)).collect();
        let probe = job(9, 0, 0.5, 0.0);
        let ns = nearest_neighbors(&pool, &probe, &cfg(5)).unwrap();
        assert_eq!(ns.len(), 5);
        for w in ns.windows(2) {
            assert!(
                w[0].distance < w[1].distance
                    || (w[0].distance == w[1].distance && w[0].id < w[1].id)
            );
        }
    }

    #[test]
    fn equidistant_tie_selects_lower_id() {
        // two jobs 10 days after the probe on either side: same distance
        let pool = vec![job(7, 10, 0.5, 100.0), job(3, -10, 0.5, 100.0)];
        let probe = job(9, 0, 0.5, 0.0);
        let ns = nearest_neighbors(&pool, &probe, &cfg(1)).unwrap();
        assert_eq!(ns[0].id, 3);
    }

    #[test]
    fn empty_pool_is_an_error() {
        let probe = job(9, 0, 0.5, 0.0);
        assert!(matches!(
            nearest_neighbors(&[], &probe, &cfg(1)),
            Err(Error::EmptyPool)
        ));
        assert!(estimate_cost(&[], &probe, &cfg(1)).is_err());
    }

    #[test]
    fn k_zero_is_an_error() {
        let pool = vec![job(1, 0, 0.5, 100.0)];
        let probe = job(9, 0, 0.5, 0.0);
        assert!(nearest_neighbors(&pool, &probe, &cfg(0)).is_err());
    }

    #[test]
    fn undersized_pool_uses_all_jobs() {
        let pool = vec![job(1, 10, 0.5, 100.0), job(2, 20, 0.5, 120.0)];
        let probe = job(9, 0, 0.5, 0.0);
        let est = estimate_cost_detailed(&pool, &probe, &cfg(5)).unwrap();
        assert_eq!(est.neighbors.len(), 2);
    }

    fn random_job(rng: &mut ChaCha8Rng, id: u64) -> JobRecord {
        JobRecord {
            id,
            date: rng.random_range(0..1000),
            collection: GeoPoint {
                lat: rng.random_range(-80.0..80.0),
                lng: rng.random_range(-179.0..179.0),
            },
            delivery: GeoPoint {
                lat: rng.random_range(-80.0..80.0),
                lng: rng.random_range(-179.0..179.0),
            },
            load_size: rng.random_range(0.001..1.0),
            cost_eur: rng.random_range(10.0..5000.0),
            revenue_eur: None,
            direction: Direction::Export,
            collection_country: None,
            delivery_country: None,
        }
    }

    #[test]
    fn weight_scaling_preserves_order_and_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pool: Vec<JobRecord> = (0..60).map(|i| random_job(&mut rng, i)).collect();
        let probe = random_job(&mut rng, 999);
        let base = AttributeWeights::new(0.8, 0.3, 0.01, 2.0).unwrap();
        for scale in [1e-3, 1.0, 1e3] {
            let scaled = AttributeWeights::new(
                base.collection * scale,
                base.delivery * scale,
                base.time * scale,
                base.load * scale,
            )
            .unwrap();
            for mode in [SolutionWeighting::Proportional, SolutionWeighting::Inverse] {
                let c1 = EstimatorConfig { k: 5, weights: base, mode, exact_match_epsilon: 1e-9 };
                let c2 = EstimatorConfig { k: 5, weights: scaled, mode, exact_match_epsilon: 1e-9 };
                let n1 = nearest_neighbors(&pool, &probe, &c1).unwrap();
                let n2 = nearest_neighbors(&pool, &probe, &c2).unwrap();
                let ids1: Vec<u64> = n1.iter().map(|n| n.id).collect();
                let ids2: Vec<u64> = n2.iter().map(|n| n.id).collect();
                assert_eq!(ids1, ids2);
                let e1 = estimate_cost(&pool, &probe, &c1).unwrap();
                let e2 = estimate_cost(&pool, &probe, &c2).unwrap();
                assert_relative_eq!(e1, e2, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn cost_scaling_scales_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pool: Vec<JobRecord> = (0..40).map(|i| random_job(&mut rng, i)).collect();
        let probe = random_job(&mut rng, 999);
        let scaled: Vec<JobRecord> = pool
            .iter()
            .map(|j| JobRecord { cost_eur: j.cost_eur * 3.0, ..j.clone() })
            .collect();
        let e1 = estimate_cost(&pool, &probe, &cfg(4)).unwrap();
        let e2 = estimate_cost(&scaled, &probe, &cfg(4)).unwrap();
        assert_relative_eq!(e2, 3.0 * e1, max_relative = 1e-12);
    }

    #[test]
    fn pool_order_never_matters() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let pool: Vec<JobRecord> = (0..30).map(|i| random_job(&mut rng, i)).collect();
        let probe = random_job(&mut rng, 999);
        let mut reversed = pool.clone();
        reversed.reverse();
        let e1 = estimate_cost_detailed(&pool, &probe, &cfg(5)).unwrap();
        let e2 = estimate_cost_detailed(&reversed, &probe, &cfg(5)).unwrap();
        assert_eq!(e1, e2);
    }

    #[test]
    fn estimate_is_convex_combination_of_neighbors() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for trial in 0..50 {
            let pool: Vec<JobRecord> = (0..20).map(|i| random_job(&mut rng, i)).collect();
            let probe = random_job(&mut rng, 1000 + trial);
            for mode in [SolutionWeighting::Proportional, SolutionWeighting::Inverse] {
                let c = EstimatorConfig { k: 4, mode, ..EstimatorConfig::default() };
                let est = estimate_cost_detailed(&pool, &probe, &c).unwrap();
                let ncs: Vec<f64> = est.neighbors.iter().map(|n| n.normalized_cost()).collect();
                let lo = ncs.iter().cloned().fold(f64::INFINITY, f64::min) * probe.load_size;
                let hi = ncs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) * probe.load_size;
                assert!(
                    est.cost_eur >= lo - 1e-9 && est.cost_eur <= hi + 1e-9,
                    "estimate {} outside [{lo}, {hi}]",
                    est.cost_eur
                );
            }
        }
    }

    #[test]
    fn inverse_mode_monotone_in_distance() {
        let neighbors = vec![
            Neighbor { id: 1, distance: 1.0, cost_eur: 0.0, load_size: 1.0 },
            Neighbor { id: 2, distance: 2.0, cost_eur: 0.0, load_size: 1.0 },
            Neighbor { id: 3, distance: 4.0, cost_eur: 0.0, load_size: 1.0 },
        ];
        // weights: (1/d) / sum(1/d); nearer must never weigh less
        let sum_inv: f64 = neighbors.iter().map(|n| 1.0 / n.distance).sum();
        let ws: Vec<f64> = neighbors.iter().map(|n| 1.0 / n.distance / sum_inv).collect();
        assert!(ws[0] >= ws[1] && ws[1] >= ws[2]);
    }

    #[test]
    fn weights_reject_bad_components() {
        assert!(AttributeWeights::new(-0.1, 0.0, 0.0, 0.0).is_err());
        assert!(AttributeWeights::new(0.0, f64::NAN, 0.0, 0.0).is_err());
        assert!(AttributeWeights::new(0.0, 0.0, f64::INFINITY, 0.0).is_err());
        let c = AttributeWeights::clamped(&[-1.0, 0.5, -0.0, 2.0]);
        assert_eq!(c.as_array(), [0.0, 0.5, 0.0, 2.0]);
    }
}
