//! Check-in log ingestion: parsing, time-slot discretization, temporal
//! train/test splitting, per-user home-location Gaussians, and check-in
//! frequency matrices.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::KM_PER_DEGREE_LAT;
use crate::num::{real, Real};

/// One check-in event: user, venue, coordinates, time, optional category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckIn<T> {
    pub user: String,
    pub poi: String,
    /// Latitude in degrees, in [-90, 90].
    pub lat: T,
    /// Longitude in degrees, in [-180, 180].
    pub lon: T,
    /// UTC seconds since epoch, strictly positive.
    pub timestamp: i64,
    pub category: Option<String>,
}

impl<T: Real> CheckIn<T> {
    pub fn new(
        user: impl Into<String>,
        poi: impl Into<String>,
        lat: T,
        lon: T,
        timestamp: i64,
        category: Option<String>,
    ) -> Result<Self> {
        let user = user.into();
        let poi = poi.into();
        if user.is_empty() || poi.is_empty() {
            return Err(Error::Data("check-in with empty user or poi key".into()));
        }
        if !lat.is_finite() || lat < real(-90.0) || lat > real(90.0) {
            return Err(Error::Data(format!("latitude {lat} out of range")));
        }
        if !lon.is_finite() || lon < real(-180.0) || lon > real(180.0) {
            return Err(Error::Data(format!("longitude {lon} out of range")));
        }
        if timestamp <= 0 {
            return Err(Error::Data(format!("non-positive timestamp {timestamp}")));
        }
        Ok(CheckIn { user, poi, lat, lon, timestamp, category })
    }

    pub fn coords(&self) -> (T, T) {
        (self.lat, self.lon)
    }
}

/// Positional column mapping for check-in CSV files.
///
/// Defaults to the canonical order (user_id, poi_id, lat, lon, timestamp,
/// category).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub user: usize,
    pub poi: usize,
    pub lat: usize,
    pub lon: usize,
    pub timestamp: usize,
    pub category: Option<usize>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap { user: 0, poi: 1, lat: 2, lon: 3, timestamp: 4, category: Some(5) }
    }
}

impl ColumnMap {
    /// Resolves the mapping from a header row by column name.
    pub fn from_header(fields: &[&str]) -> Result<Self> {
        let find = |name: &str| fields.iter().position(|f| f.trim().eq_ignore_ascii_case(name));
        let required = |name: &str| {
            find(name).ok_or_else(|| Error::Data(format!("unmappable columns: missing '{name}' in header")))
        };
        Ok(ColumnMap {
            user: required("user_id")?,
            poi: required("poi_id")?,
            lat: required("lat")?,
            lon: required("lon")?,
            timestamp: required("timestamp")?,
            category: find("category"),
        })
    }
}

/// Outcome counts from a parse run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseReport {
    /// Data lines examined (header excluded).
    pub total: usize,
    pub parsed: usize,
    pub rejected: usize,
}

fn record_to_checkin<T: Real>(record: &csv::StringRecord, map: &ColumnMap) -> Result<CheckIn<T>> {
    let field = |i: usize| {
        record
            .get(i)
            .map(str::trim)
            .ok_or_else(|| Error::Data(format!("missing column {i}")))
    };
    let lat: f64 = field(map.lat)?
        .parse()
        .map_err(|_| Error::Data("bad lat".into()))?;
    let lon: f64 = field(map.lon)?
        .parse()
        .map_err(|_| Error::Data("bad lon".into()))?;
    let ts: i64 = field(map.timestamp)?
        .parse()
        .map_err(|_| Error::Data("bad timestamp".into()))?;
    let category = match map.category {
        Some(i) => record.get(i).map(str::trim).filter(|s| !s.is_empty()).map(String::from),
        None => None,
    };
    CheckIn::new(field(map.user)?, field(map.poi)?, real::<T>(lat), real::<T>(lon), ts, category)
}

/// Parses a check-in CSV file.
///
/// With `columns = None` the canonical column order is assumed; a first line
/// whose numeric fields do not parse is treated as a header and mapped by
/// name. Syntactically invalid lines are counted in the report rather than
/// aborting the run.
///
/// Errors on a missing file, an unmappable header, or zero valid records.
pub fn parse_checkins<T: Real>(
    path: &Path,
    columns: Option<&ColumnMap>,
) -> Result<(Vec<CheckIn<T>>, ParseReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Data(format!("cannot open {}: {e}", path.display())),
            _ => Error::Data(e.to_string()),
        })?;

    let mut map = columns.cloned();
    let mut out = Vec::new();
    let mut report = ParseReport::default();

    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(e.to_string()))?;
        if idx == 0 {
            // Sniff a header: numeric fields of the first line fail to parse.
            let effective = map.clone().unwrap_or_default();
            if record_to_checkin::<T>(&record, &effective).is_err() {
                let fields: Vec<&str> = record.iter().collect();
                if let Ok(from_header) = ColumnMap::from_header(&fields) {
                    if map.is_none() {
                        map = Some(from_header);
                    }
                    continue; // header consumed, not counted
                }
            }
        }
        let effective = map.clone().unwrap_or_default();
        report.total += 1;
        match record_to_checkin::<T>(&record, &effective) {
            Ok(c) => {
                report.parsed += 1;
                out.push(c);
            }
            Err(_) => report.rejected += 1,
        }
    }

    if out.is_empty() {
        return Err(Error::Data(format!(
            "no valid check-in records in {} ({} lines rejected)",
            path.display(),
            report.rejected
        )));
    }
    Ok((out, report))
}

/// Fixed-length division of the day into time slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSlotSpec {
    slot_hours: u32,
}

impl TimeSlotSpec {
    /// `slot_hours` must divide 24 exactly.
    pub fn new(slot_hours: u32) -> Result<Self> {
        if slot_hours == 0 || 24 % slot_hours != 0 {
            return Err(Error::Config(format!(
                "slot_hours must divide 24 exactly, got {slot_hours}"
            )));
        }
        Ok(TimeSlotSpec { slot_hours })
    }

    pub fn slot_hours(&self) -> u32 {
        self.slot_hours
    }

    pub fn slots_per_day(&self) -> u32 {
        24 / self.slot_hours
    }
}

/// Maps a UTC timestamp to its local-time slot index in `[0, slots_per_day)`.
pub fn assign_time_slot(timestamp: i64, spec: &TimeSlotSpec, tz_offset_hours: f64) -> u32 {
    let offset = (tz_offset_hours * 3600.0).round() as i64;
    let seconds_of_day = (timestamp + offset).rem_euclid(86_400);
    (seconds_of_day / (3600 * spec.slot_hours as i64)) as u32
}

/// Temporal train/test partition of a check-in log.
#[derive(Debug, Clone)]
pub struct SplitDataset<T> {
    pub train: Vec<CheckIn<T>>,
    pub test: Vec<CheckIn<T>>,
    /// Every train timestamp is `< cutoff`; every test timestamp is `>= cutoff`.
    pub cutoff_timestamp: i64,
}

/// Splits records at the `train_fraction` quantile of their timestamps
/// (nearest rank): the cutoff is the first timestamp that belongs to the
/// test side, so records strictly before it train and the rest test.
pub fn split_by_date<T: Real>(records: Vec<CheckIn<T>>, train_fraction: f64) -> Result<SplitDataset<T>> {
    if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
        return Err(Error::Config(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    if records.is_empty() {
        return Err(Error::Data("cannot split an empty check-in log".into()));
    }
    let mut stamps: Vec<i64> = records.iter().map(|c| c.timestamp).collect();
    stamps.sort_unstable();
    let rank = ((train_fraction * records.len() as f64).ceil() as usize).max(1);
    if rank >= records.len() {
        return Err(Error::Data(
            "cannot split: train fraction leaves no test records".into(),
        ));
    }
    let cutoff = stamps[rank];
    let (train, test): (Vec<_>, Vec<_>) = records.into_iter().partition(|c| c.timestamp < cutoff);
    if train.is_empty() {
        return Err(Error::Data(
            "cannot split: all records share the same timestamp".into(),
        ));
    }
    Ok(SplitDataset { train, test, cutoff_timestamp: cutoff })
}

/// Per-user Gaussian over training check-in coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomeLocation<T> {
    pub user: String,
    /// Mean (lat, lon) of the user's training check-ins.
    pub mu: (T, T),
    /// Sample covariance of (lat, lon), n-1 divisor; zero for a single record.
    pub sigma: [[T; 2]; 2],
}

impl<T: Real> HomeLocation<T> {
    /// Isotropic spread sqrt(trace(sigma)) converted from degrees to km.
    pub fn spread_km(&self) -> T {
        (self.sigma[0][0] + self.sigma[1][1]).max(T::zero()).sqrt() * real(KM_PER_DEGREE_LAT)
    }
}

/// Fits one user's home-location Gaussian from their training check-ins.
pub fn fit_home_location<T: Real>(user_train: &[CheckIn<T>]) -> Result<HomeLocation<T>> {
    let first = user_train
        .first()
        .ok_or_else(|| Error::Data("cannot fit home location from an empty history".into()))?;
    let user = first.user.clone();
    debug_assert!(user_train.iter().all(|c| c.user == user));

    let n = real::<T>(user_train.len() as f64);
    let mut mu = (T::zero(), T::zero());
    for c in user_train {
        mu.0 += c.lat;
        mu.1 += c.lon;
    }
    mu.0 /= n;
    mu.1 /= n;

    let mut sigma = [[T::zero(); 2]; 2];
    if user_train.len() > 1 {
        let denom = n - T::one();
        for c in user_train {
            let dlat = c.lat - mu.0;
            let dlon = c.lon - mu.1;
            sigma[0][0] += dlat * dlat;
            sigma[0][1] += dlat * dlon;
            sigma[1][1] += dlon * dlon;
        }
        sigma[0][0] /= denom;
        sigma[0][1] /= denom;
        sigma[1][1] /= denom;
        sigma[1][0] = sigma[0][1];
    }
    Ok(HomeLocation { user, mu, sigma })
}

/// Fits home locations for every user in the training log, keyed by user.
pub fn fit_home_locations<T: Real>(train: &[CheckIn<T>]) -> HashMap<String, HomeLocation<T>> {
    let mut per_user: HashMap<&str, Vec<CheckIn<T>>> = HashMap::new();
    for c in train {
        per_user.entry(&c.user).or_default().push(c.clone());
    }
    per_user
        .into_iter()
        .map(|(user, records)| {
            let home = fit_home_location(&records).expect("non-empty by construction");
            (user.to_string(), home)
        })
        .collect()
}

/// Sparse user x POI check-in count matrix over fixed index sets.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMatrix {
    users: Vec<String>,
    pois: Vec<String>,
    user_pos: HashMap<String, u32>,
    poi_pos: HashMap<String, u32>,
    counts: BTreeMap<(u32, u32), u32>,
}

impl FrequencyMatrix {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_pois(&self) -> usize {
        self.pois.len()
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn pois(&self) -> &[String] {
        &self.pois
    }

    pub fn count(&self, user: u32, poi: u32) -> u32 {
        self.counts.get(&(user, poi)).copied().unwrap_or(0)
    }

    pub fn count_by_key(&self, user: &str, poi: &str) -> Option<u32> {
        let u = *self.user_pos.get(user)?;
        let p = *self.poi_pos.get(poi)?;
        Some(self.count(u, p))
    }

    /// Non-zero entries in (user, poi) index order.
    pub fn entries(&self) -> impl Iterator<Item = (u32, u32, u32)> + '_ {
        self.counts.iter().map(|(&(u, p), &c)| (u, p, c))
    }

    pub fn nnz(&self) -> usize {
        self.counts.len()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        let mut sums = vec![0u64; self.users.len()];
        for (&(u, _), &c) in &self.counts {
            sums[u as usize] += c as u64;
        }
        sums
    }

    pub fn col_sums(&self) -> Vec<u64> {
        let mut sums = vec![0u64; self.pois.len()];
        for (&(_, p), &c) in &self.counts {
            sums[p as usize] += c as u64;
        }
        sums
    }
}

/// Tallies train check-in multiplicities over the given user/POI index sets.
/// Records outside the index sets are ignored.
pub fn build_frequency_matrix<T: Real>(
    train: &[CheckIn<T>],
    rows: &[String],
    cols: &[String],
) -> Result<FrequencyMatrix> {
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::Data("frequency matrix index sets must be non-empty".into()));
    }
    let mut user_pos = HashMap::with_capacity(rows.len());
    for (i, key) in rows.iter().enumerate() {
        if user_pos.insert(key.clone(), i as u32).is_some() {
            return Err(Error::Data(format!("duplicate user key '{key}' in row index")));
        }
    }
    let mut poi_pos = HashMap::with_capacity(cols.len());
    for (j, key) in cols.iter().enumerate() {
        if poi_pos.insert(key.clone(), j as u32).is_some() {
            return Err(Error::Data(format!("duplicate poi key '{key}' in column index")));
        }
    }
    let mut counts = BTreeMap::new();
    for c in train {
        if let (Some(&u), Some(&p)) = (user_pos.get(&c.user), poi_pos.get(&c.poi)) {
            *counts.entry((u, p)).or_insert(0u32) += 1;
        }
    }
    Ok(FrequencyMatrix { users: rows.to_vec(), pois: cols.to_vec(), user_pos, poi_pos, counts })
}
