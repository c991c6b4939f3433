//! Deterministic synthetic freight-dataset generator with controllable
//! lanes, load mixture, distance-linear cost model, and revenue margins.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, Direction, GeoPoint, JobRecord, MIN_LOAD_SIZE};
use crate::geo::haversine_km;
use crate::{Error, Result};

/// Kilometres per degree of latitude (and of longitude at the equator).
const KM_PER_DEGREE: f64 = 111.32;

/// One traffic lane: a hub pair with its own rate card.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneSpec {
    pub collection_hub: GeoPoint,
    pub delivery_hub: GeoPoint,
    /// Fixed cost per full container, EUR.
    pub base_rate_eur: f64,
    /// Distance cost per km per full container, EUR.
    pub per_km_rate_eur: f64,
    /// Relative selection weight among lanes.
    #[serde(default = "default_weight")]
    pub weight: f64,
    #[serde(default = "default_direction")]
    pub direction: Direction,
    #[serde(default)]
    pub collection_country: Option<String>,
    #[serde(default)]
    pub delivery_country: Option<String>,
}

fn default_weight() -> f64 {
    1.0
}

fn default_direction() -> Direction {
    Direction::Export
}

/// Recipe for a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_jobs: usize,
    /// Jobs are dated uniformly over `[0, span_days]` from the datum.
    pub span_days: i64,
    pub lanes: Vec<LaneSpec>,
    /// Standard deviation, in km, of the normal jitter applied to each hub.
    pub jitter_km: f64,
    /// Relative weights over the {parcel, pallet-range, full-load} classes,
    /// drawn as U(0.001, 1/26), U(1/26, 0.5) and U(0.5, 1) container loads.
    pub load_mixture: [f64; 3],
    /// Relative standard deviation of multiplicative cost noise.
    pub cost_noise: f64,
    /// Relative cost drift per 365.25-day year.
    pub annual_trend: f64,
    /// Revenue margin t: revenue = cost (1 + t)(1 + noise).
    pub margin: f64,
    /// Relative standard deviation of multiplicative margin noise.
    pub margin_noise: f64,
    /// Cost scales with load^exponent; 1.0 keeps normalized cost lane-stable.
    #[serde(default = "default_exponent")]
    pub load_exponent: f64,
    pub seed: u64,
}

fn default_exponent() -> f64 {
    1.0
}

impl SyntheticSpec {
    /// Ready-made five-lane Irish-export scenario with country labels.
    pub fn example(n_jobs: usize, seed: u64) -> Self {
        let lane = |clat: f64, clng: f64, dlat: f64, dlng: f64, base: f64, per_km: f64,
                    dir: Direction, cc: &str, dc: &str| LaneSpec {
            collection_hub: GeoPoint { lat: clat, lng: clng },
            delivery_hub: GeoPoint { lat: dlat, lng: dlng },
            base_rate_eur: base,
            per_km_rate_eur: per_km,
            weight: 1.0,
            direction: dir,
            collection_country: Some(cc.to_string()),
            delivery_country: Some(dc.to_string()),
        };
        SyntheticSpec {
            n_jobs,
            span_days: 1095,
            lanes: vec![
                lane(53.3498, -6.2603, 51.5074, -0.1278, 320.0, 1.15, Direction::Export, "IE", "GB"),
                lane(53.3498, -6.2603, 51.9244, 4.4777, 280.0, 0.95, Direction::Export, "IE", "NL"),
                lane(51.8985, -8.4756, 48.8566, 2.3522, 300.0, 1.05, Direction::Export, "IE", "FR"),
                lane(53.3498, -6.2603, 40.4168, -3.7038, 260.0, 0.85, Direction::Export, "IE", "ES"),
                lane(51.9244, 4.4777, 53.3498, -6.2603, 290.0, 0.90, Direction::Import, "NL", "IE"),
            ],
            jitter_km: 35.0,
            load_mixture: [0.2, 0.5, 0.3],
            cost_noise: 0.08,
            annual_trend: 0.03,
            margin: 0.151,
            margin_noise: 0.05,
            load_exponent: 1.0,
            seed,
        }
    }

    /// Parses a spec from its JSON form.
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SyntheticSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Serializes the scenario to pretty JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.into()));
        if self.n_jobs > 0 && self.lanes.is_empty() {
            return bad("at least one lane is required");
        }
        if self.span_days < 0 {
            return bad("date span must be >= 0 days");
        }
        if !(self.jitter_km >= 0.0) || !(self.cost_noise >= 0.0) || !(self.margin_noise >= 0.0) {
            return bad("noise standard deviations must be >= 0");
        }
        if !(self.margin > -1.0) || !self.margin.is_finite() {
            return bad("margin must be a finite value > -1");
        }
        if self.load_mixture.iter().any(|&w| !(w >= 0.0)) || self.load_mixture.iter().sum::<f64>() <= 0.0 {
            return bad("load mixture weights must be >= 0 and sum > 0");
        }
        if self.lanes.iter().any(|l| !(l.weight >= 0.0)) {
            return bad("lane weights must be >= 0");
        }
        if !self.lanes.is_empty() && self.lanes.iter().map(|l| l.weight).sum::<f64>() <= 0.0 {
            return bad("lane weights must sum > 0");
        }
        if self.lanes.iter().any(|l| !(l.base_rate_eur >= 0.0) || !(l.per_km_rate_eur >= 0.0)) {
            return bad("lane rates must be >= 0");
        }
        if self.lanes.iter().any(|l| l.base_rate_eur == 0.0 && l.per_km_rate_eur == 0.0) {
            return bad("every lane needs a positive base or per-km rate");
        }
        if !(self.load_exponent > 0.0) || !self.load_exponent.is_finite() {
            return bad("load exponent must be a finite value > 0");
        }
        // the trend factor must stay positive across the whole span
        if 1.0 + self.annual_trend * (self.span_days as f64 / 365.25) <= 0.0 {
            return bad("annual trend drives cost non-positive within the date span");
        }
        Ok(())
    }
}

/// Index into a cumulative weight distribution for one uniform draw.
fn weighted_choice(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Multiplicative noise term: N(0, sigma) resampled until 1 + draw > 0.
fn noise_factor(sigma: f64, rng: &mut ChaCha8Rng) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    loop {
        let e = normal.sample(rng);
        if 1.0 + e > 0.0 {
            return e;
        }
    }
}

/// Hub coordinates displaced by an isotropic normal jitter of `sigma_km`,
/// clamped in latitude and wrapped in longitude.
fn jitter_point(hub: &GeoPoint, sigma_km: f64, rng: &mut ChaCha8Rng) -> GeoPoint {
    if sigma_km == 0.0 {
        return *hub;
    }
    let lat_sigma = sigma_km / KM_PER_DEGREE;
    let cos_lat = hub.lat.to_radians().cos().max(1e-6);
    let lng_sigma = sigma_km / (KM_PER_DEGREE * cos_lat);
    let normal_lat = Normal::new(0.0, lat_sigma).expect("validated sigma");
    let normal_lng = Normal::new(0.0, lng_sigma).expect("validated sigma");
    let lat = (hub.lat + normal_lat.sample(rng)).clamp(-90.0, 90.0);
    let mut lng = hub.lng + normal_lng.sample(rng);
    if !(-180.0..=180.0).contains(&lng) {
        lng = (lng + 180.0).rem_euclid(360.0) - 180.0;
    }
    GeoPoint { lat, lng }
}

/// The U(lo, hi) container-load ranges of the three mixture classes.
const LOAD_CLASSES: [(f64, f64); 3] = [
    (MIN_LOAD_SIZE, 1.0 / 26.0),
    (1.0 / 26.0, 0.5),
    (0.5, 1.0),
];

/// Generates a dataset from the scenario. One seeded stream drives every draw,
/// in a fixed per-job order (lane, date, load class, load, collection
/// jitter, delivery jitter, cost noise, margin noise), so output is
/// deterministic for a given spec.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lane_weights: Vec<f64> = spec.lanes.iter().map(|l| l.weight).collect();
    let mut jobs = Vec::with_capacity(spec.n_jobs);
    for id in 1..=spec.n_jobs as u64 {
        let lane = &spec.lanes[weighted_choice(&lane_weights, &mut rng)];
        let date = if spec.span_days == 0 {
            0
        } else {
            rng.random_range(0..=spec.span_days)
        };
        let class = LOAD_CLASSES[weighted_choice(&spec.load_mixture, &mut rng)];
        let load_size = rng.random_range(class.0..class.1);
        let collection = jitter_point(&lane.collection_hub, spec.jitter_km, &mut rng);
        let delivery = jitter_point(&lane.delivery_hub, spec.jitter_km, &mut rng);
        let cost_eps = noise_factor(spec.cost_noise, &mut rng);
        let margin_eps = noise_factor(spec.margin_noise, &mut rng);

        let crow_km = haversine_km(&collection, &delivery);
        let full_container = lane.base_rate_eur + lane.per_km_rate_eur * crow_km;
        // exponent 1.0 is the plain proportional case, kept as a direct
        // multiply so it is bit-identical to not exponentiating at all
        let load_factor = if spec.load_exponent == 1.0 {
            load_size
        } else {
            load_size.powf(spec.load_exponent)
        };
        let years = date as f64 / 365.25;
        let cost_eur =
            full_container * load_factor * (1.0 + spec.annual_trend * years) * (1.0 + cost_eps);
        let revenue_eur = cost_eur * (1.0 + spec.margin) * (1.0 + margin_eps);

        jobs.push(JobRecord {
            id,
            date,
            collection,
            delivery,
            load_size,
            cost_eur,
            revenue_eur: Some(revenue_eur),
            direction: lane.direction,
            collection_country: lane.collection_country.clone(),
            delivery_country: lane.delivery_country.clone(),
        });
    }
    Dataset::new(jobs, crate::domain::default_datum())
}
