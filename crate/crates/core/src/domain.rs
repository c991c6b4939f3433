//! Core data model: geographic points, job records, datasets, load-size
//! coding, CSV ingestion/serialization, and the three-way dataset split.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Smallest permitted coded load size, in container units.
///
/// Tiny consignments are floored here so that load-normalized cost
/// (cost / load) stays finite.
pub const MIN_LOAD_SIZE: f64 = 0.001;

/// Day numbers in a [`Dataset`] count from this calendar date.
pub fn default_datum() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid calendar date")
}

/// A point on the Earth's surface in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lng: f64,
}

impl GeoPoint {
    /// Builds a point, rejecting non-finite or out-of-range coordinates
    /// (latitude in [-90, 90], longitude in [-180, 180]).
    pub fn new(lat: f64, lng: f64) -> Result<Self> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InvalidCoordinate(format!(
                "latitude {lat} outside [-90, 90]"
            )));
        }
        if !lng.is_finite() || !(-180.0..=180.0).contains(&lng) {
            return Err(Error::InvalidCoordinate(format!(
                "longitude {lng} outside [-180, 180]"
            )));
        }
        Ok(GeoPoint { lat, lng })
    }
}

/// Trade direction of a consignment relative to the home market.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Import,
    Export,
    Domestic,
}

impl Direction {
    /// All directions in their fixed reporting order.
    pub const ALL: [Direction; 3] = [Direction::Import, Direction::Export, Direction::Domestic];

    /// Lowercase label used in CSV files and report tables.
    pub fn label(&self) -> &'static str {
        match self {
            Direction::Import => "import",
            Direction::Export => "export",
            Direction::Domestic => "domestic",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "import" => Ok(Direction::Import),
            "export" => Ok(Direction::Export),
            "domestic" => Ok(Direction::Domestic),
            other => Err(Error::InvalidRecord(format!("unknown direction {other:?}"))),
        }
    }
}

/// Units a customer may quote a load in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadUnit {
    StandardPallet,
    EuroPallet,
    LoadingMeter,
    Kg,
    Container,
}

impl LoadUnit {
    /// How many of this unit fill one standard shipping container.
    pub fn per_container(&self) -> f64 {
        match self {
            LoadUnit::StandardPallet => 26.0,
            LoadUnit::EuroPallet => 33.0,
            LoadUnit::LoadingMeter => 13.6,
            LoadUnit::Kg => 24_000.0,
            LoadUnit::Container => 1.0,
        }
    }
}

impl FromStr for LoadUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "standard_pallet" | "pallet" => Ok(LoadUnit::StandardPallet),
            "euro_pallet" => Ok(LoadUnit::EuroPallet),
            "loading_meter" | "ldm" => Ok(LoadUnit::LoadingMeter),
            "kg" => Ok(LoadUnit::Kg),
            "container" => Ok(LoadUnit::Container),
            other => Err(Error::UncodableLoad(format!("unknown unit {other:?}"))),
        }
    }
}

/// Converts a quantity in some unit to a load size in container units,
/// floored at [`MIN_LOAD_SIZE`].
///
/// Rejects non-finite or non-positive quantities.
pub fn code_load_size(quantity: f64, unit: LoadUnit) -> Result<f64> {
    if !quantity.is_finite() || quantity <= 0.0 {
        return Err(Error::UncodableLoad(format!(
            "quantity {quantity} must be finite and positive"
        )));
    }
    Ok((quantity / unit.per_container()).max(MIN_LOAD_SIZE))
}

/// One completed freight job.
///
/// `date` is a day number relative to the owning dataset's datum date;
/// `load_size` is in container units and is at least [`MIN_LOAD_SIZE`];
/// `cost_eur` is non-negative (and positive for any record used in
/// estimation or error metrics). Country labels are optional; when absent,
/// reporting falls back to coordinate-based classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: u64,
    pub date: i64,
    pub collection: GeoPoint,
    pub delivery: GeoPoint,
    pub load_size: f64,
    pub cost_eur: f64,
    pub revenue_eur: Option<f64>,
    pub direction: Direction,
    pub collection_country: Option<String>,
    pub delivery_country: Option<String>,
}

impl JobRecord {
    /// Checks the field invariants; used at every construction boundary.
    pub fn validate(&self) -> Result<()> {
        GeoPoint::new(self.collection.lat, self.collection.lng)?;
        GeoPoint::new(self.delivery.lat, self.delivery.lng)?;
        if !self.load_size.is_finite() || self.load_size < MIN_LOAD_SIZE {
            return Err(Error::InvalidRecord(format!(
                "job {}: load size {} below minimum {MIN_LOAD_SIZE}",
                self.id, self.load_size
            )));
        }
        if !self.cost_eur.is_finite() || self.cost_eur < 0.0 {
            return Err(Error::InvalidRecord(format!(
                "job {}: cost {} must be finite and non-negative",
                self.id, self.cost_eur
            )));
        }
        if let Some(rev) = self.revenue_eur {
            if !rev.is_finite() || rev < 0.0 {
                return Err(Error::InvalidRecord(format!(
                    "job {}: revenue {rev} must be finite and non-negative",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Cost per container unit of load.
///
/// Finite for every valid record because load size is floored at
/// [`MIN_LOAD_SIZE`].
pub fn normalized_cost(job: &JobRecord) -> f64 {
    job.cost_eur / job.load_size
}

/// An immutable collection of jobs with unique ids, iterated in ascending
/// id order, plus the datum date its day numbers count from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    jobs: Vec<JobRecord>,
    datum: NaiveDate,
    has_countries: bool,
}

impl Dataset {
    /// Builds a dataset from records, validating each and rejecting
    /// duplicate ids. Records are stored sorted by id.
    pub fn new(mut jobs: Vec<JobRecord>, datum: NaiveDate) -> Result<Self> {
        for job in &jobs {
            job.validate()?;
        }
        jobs.sort_by_key(|j| j.id);
        for pair in jobs.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::DuplicateId(pair[0].id));
            }
        }
        let has_countries = jobs
            .iter()
            .any(|j| j.collection_country.is_some() || j.delivery_country.is_some());
        Ok(Dataset {
            jobs,
            datum,
            has_countries,
        })
    }

    /// All jobs in ascending id order.
    pub fn jobs(&self) -> &[JobRecord] {
        &self.jobs
    }

    /// Number of jobs.
    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    /// True when the dataset holds no jobs.
    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    /// Calendar date that day number 0 corresponds to.
    pub fn datum(&self) -> NaiveDate {
        self.datum
    }

    /// Looks a job up by id (binary search over the sorted store).
    pub fn get(&self, id: u64) -> Option<&JobRecord> {
        self.jobs
            .binary_search_by_key(&id, |j| j.id)
            .ok()
            .map(|i| &self.jobs[i])
    }

    /// Clones the jobs with the given ids, in the order given.
    ///
    /// Fails if any id is unknown.
    pub fn select(&self, ids: &[u64]) -> Result<Vec<JobRecord>> {
        ids.iter()
            .map(|&id| {
                self.get(id)
                    .cloned()
                    .ok_or_else(|| Error::InvalidParameter(format!("unknown job id {id}")))
            })
            .collect()
    }

    /// Converts a day number back to its calendar date.
    pub fn day_to_date(&self, day: i64) -> NaiveDate {
        self.datum + chrono::Duration::days(day)
    }

    /// Converts a calendar date to this dataset's day number.
    pub fn date_to_day(&self, date: NaiveDate) -> i64 {
        (date - self.datum).num_days()
    }
}

/// One rejected CSV row: 1-based line number in the file (the header is
/// line 1) and a human-readable reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub row: usize,
    pub reason: String,
}

/// Serializes rejections in the JSON-lines report format, one object per line.
pub fn rejections_to_jsonl(rejections: &[Rejection]) -> String {
    let mut out = String::new();
    for r in rejections {
        out.push_str(&serde_json::to_string(r).expect("rejection serializes"));
        out.push('\n');
    }
    out
}

const BASE_HEADER: [&str; 10] = [
    "id",
    "date",
    "col_lat",
    "col_lng",
    "del_lat",
    "del_lng",
    "load_size",
    "cost_eur",
    "revenue_eur",
    "direction",
];
const COUNTRY_HEADER: [&str; 2] = ["collection_country", "delivery_country"];

/// Parses the job CSV format with the default datum date.
///
/// Returns the dataset of accepted rows plus per-row rejections for rows
/// that violate an invariant (bad number, out-of-range coordinate,
/// non-positive cost, duplicate id, ...). Only an unusable header or an
/// unreadable stream is a hard error. Load sizes below [`MIN_LOAD_SIZE`]
/// are floored, not rejected.
pub fn parse_jobs_csv(text: &str) -> Result<(Dataset, Vec<Rejection>)> {
    parse_jobs_csv_with_datum(text, default_datum())
}

/// As [`parse_jobs_csv`], with an explicit datum date for day numbers.
pub fn parse_jobs_csv_with_datum(
    text: &str,
    datum: NaiveDate,
) -> Result<(Dataset, Vec<Rejection>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut records = reader.records();
    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(Error::MalformedInput(format!("unreadable header: {e}"))),
        None => return Err(Error::MalformedInput("empty input".into())),
    };
    let fields: Vec<&str> = header.iter().map(str::trim).collect();
    let with_countries = if fields == BASE_HEADER {
        false
    } else if fields.len() == 12
        && fields[..10] == BASE_HEADER
        && fields[10..] == COUNTRY_HEADER
    {
        true
    } else {
        return Err(Error::MalformedInput(format!(
            "unexpected header {:?}; expected {:?} (optionally followed by {:?})",
            fields.join(","),
            BASE_HEADER.join(","),
            COUNTRY_HEADER.join(",")
        )));
    };
    let expected_len = if with_countries { 12 } else { 10 };

    let mut jobs: Vec<JobRecord> = Vec::new();
    let mut seen: BTreeMap<u64, ()> = BTreeMap::new();
    let mut rejections: Vec<Rejection> = Vec::new();
    for (i, record) in records.enumerate() {
        let row = i + 2; // 1-based file line; header is line 1
        let reject = |reason: String| Rejection { row, reason };
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                rejections.push(reject(format!("unreadable row: {e}")));
                continue;
            }
        };
        if record.len() == 1 && record[0].trim().is_empty() {
            continue; // blank line
        }
        if record.len() != expected_len {
            rejections.push(reject(format!(
                "expected {expected_len} fields, found {}",
                record.len()
            )));
            continue;
        }
        match parse_row(&record, datum, with_countries) {
            Ok(job) => {
                if seen.insert(job.id, ()).is_some() {
                    rejections.push(reject(format!("duplicate id {}", job.id)));
                } else {
                    jobs.push(job);
                }
            }
            Err(reason) => rejections.push(reject(reason)),
        }
    }

    let dataset = Dataset::new(jobs, datum)?;
    Ok((dataset, rejections))
}

/// Parses one data row; returns the rejection reason on failure.
fn parse_row(
    record: &csv::StringRecord,
    datum: NaiveDate,
    with_countries: bool,
) -> std::result::Result<JobRecord, String> {
    let field = |i: usize| record[i].trim();

    let id: u64 = field(0)
        .parse()
        .map_err(|_| format!("unparseable id {:?}", field(0)))?;
    let date = NaiveDate::parse_from_str(field(1), "%Y-%m-%d")
        .map_err(|_| format!("unparseable date {:?} (expected YYYY-MM-DD)", field(1)))?;

    let number = |i: usize, name: &str| -> std::result::Result<f64, String> {
        let raw = field(i);
        let v: f64 = raw
            .parse()
            .map_err(|_| format!("unparseable {name} {raw:?}"))?;
        if !v.is_finite() {
            return Err(format!("non-finite {name} {raw:?}"));
        }
        Ok(v)
    };

    let collection = GeoPoint::new(number(2, "col_lat")?, number(3, "col_lng")?)
        .map_err(|e| format!("collection point: {e}"))?;
    let delivery = GeoPoint::new(number(4, "del_lat")?, number(5, "del_lng")?)
        .map_err(|e| format!("delivery point: {e}"))?;

    let load_raw = number(6, "load_size")?;
    if load_raw <= 0.0 {
        return Err(format!("non-positive load size {load_raw}"));
    }
    let load_size = load_raw.max(MIN_LOAD_SIZE);

    if field(7).is_empty() {
        return Err("missing cost".into());
    }
    let cost_eur = number(7, "cost_eur")?;
    if cost_eur <= 0.0 {
        return Err(format!("non-positive cost {cost_eur}"));
    }

    let revenue_eur = if field(8).is_empty() {
        None
    } else {
        let rev = number(8, "revenue_eur")?;
        if rev < 0.0 {
            return Err(format!("negative revenue {rev}"));
        }
        Some(rev)
    };

    let direction = Direction::from_str(field(9)).map_err(|e| e.to_string())?;

    let country = |i: usize| {
        let raw = field(i);
        (!raw.is_empty()).then(|| raw.to_string())
    };
    let (collection_country, delivery_country) = if with_countries {
        (country(10), country(11))
    } else {
        (None, None)
    };

    Ok(JobRecord {
        id,
        date: (date - datum).num_days(),
        collection,
        delivery,
        load_size,
        cost_eur,
        revenue_eur,
        direction,
        collection_country,
        delivery_country,
    })
}

/// Serializes a dataset back to the CSV format it was parsed from.
///
/// Floats print in shortest round-trip form, so parse -> serialize -> parse
/// is the identity. The country columns appear only when any record carries
/// a country label.
pub fn to_csv(dataset: &Dataset) -> String {
    let mut out = String::new();
    out.push_str(&BASE_HEADER.join(","));
    if dataset.has_countries {
        out.push(',');
        out.push_str(&COUNTRY_HEADER.join(","));
    }
    out.push('\n');
    for job in dataset.jobs() {
        let revenue = job.revenue_eur.map(|r| r.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}",
            job.id,
            dataset.day_to_date(job.date).format("%Y-%m-%d"),
            job.collection.lat,
            job.collection.lng,
            job.delivery.lat,
            job.delivery.lng,
            job.load_size,
            job.cost_eur,
            revenue,
            job.direction,
        ));
        if dataset.has_countries {
            out.push_str(&format!(
                ",{},{}",
                job.collection_country.as_deref().unwrap_or(""),
                job.delivery_country.as_deref().unwrap_or(""),
            ));
        }
        out.push('\n');
    }
    out
}

/// The three-way split of a dataset into estimation history, weight-training
/// probes, and the held-out test segment. Stores job ids, each list in
/// ascending id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub seed: u64,
    pub historical_share: f64,
    pub test: Vec<u64>,
    pub historical: Vec<u64>,
    pub training: Vec<u64>,
}

/// Splits a dataset: the most recent ceil(n/3) of jobs by (date, id) form
/// the test segment; the remainder is shuffled with the seed and divided
/// `historical_share` : (1 - historical_share) into historical and training.
///
/// The split is a partition (disjoint, covering), every test date is at
/// least every non-test date, and all three segments are non-empty for
/// n >= 3 (the share split is clamped so neither side is emptied by
/// rounding).
pub fn segment(dataset: &Dataset, seed: u64, historical_share: f64) -> Result<Segmentation> {
    let n = dataset.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 jobs to segment, found {n}"
        )));
    }
    if !historical_share.is_finite() || !(0.0 < historical_share && historical_share < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "historical share {historical_share} outside (0, 1)"
        )));
    }

    let mut order: Vec<(i64, u64)> = dataset.jobs().iter().map(|j| (j.date, j.id)).collect();
    order.sort_unstable();

    let test_len = n.div_ceil(3);
    let split = n - test_len;
    let mut test: Vec<u64> = order[split..].iter().map(|&(_, id)| id).collect();

    let mut rest: Vec<u64> = order[..split].iter().map(|&(_, id)| id).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rest.shuffle(&mut rng);

    let hist_len = ((rest.len() as f64) * historical_share).round() as usize;
    let hist_len = hist_len.clamp(1, rest.len() - 1);
    let mut historical: Vec<u64> = rest[..hist_len].to_vec();
    let mut training: Vec<u64> = rest[hist_len..].to_vec();

    test.sort_unstable();
    historical.sort_unstable();
    training.sort_unstable();
    Ok(Segmentation {
        seed,
        historical_share,
        test,
        historical,
        training,
    })
}
