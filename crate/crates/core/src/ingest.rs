//! CSV ingestion, rolling-window covariates, profile-level splitting and the
//! synthetic profile generator.
//!
//! File formats (UTF-8, ISO-8601 dates, `.` decimal separator):
//!
//! * observations: `reservoir_id,date,site_id,depth_m,temp_c`
//! * daily covariates: `reservoir_id,date,air_temp_c,prcp_mm,wind_ms,vol_lake,inflow_lake`
//! * morphometry: `reservoir_id,surface_area_m2,max_depth_m`
//! * feature rows (output of ingestion): `reservoir_id,date,site_id,` the ten
//!   feature names in x1..x10 order, then `temp_c`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{
    FeatureId, ObservationProfile, ProfileKey, RawRow, Sample, Scaler, MIN_PROFILE_SAMPLES,
    N_FEATURES,
};
use crate::error::{Error, Result};
use crate::rng;

pub const OBSERVATION_HEADER: [&str; 5] = ["reservoir_id", "date", "site_id", "depth_m", "temp_c"];
pub const DAILY_HEADER: [&str; 7] =
    ["reservoir_id", "date", "air_temp_c", "prcp_mm", "wind_ms", "vol_lake", "inflow_lake"];
pub const MORPHOMETRY_HEADER: [&str; 3] = ["reservoir_id", "surface_area_m2", "max_depth_m"];

/// Length of every antecedent window, in days.
pub const WINDOW_DAYS: i64 = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SchemaVersion {
    #[default]
    V1,
}

/// Profiles with unique (reservoir, date, site) keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSet {
    profiles: Vec<ObservationProfile>,
    pub provenance: String,
}

impl ProfileSet {
    pub fn new(profiles: Vec<ObservationProfile>, provenance: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for p in &profiles {
            if !seen.insert(p.key().clone()) {
                return Err(Error::SchemaMismatch(format!("duplicate profile key {}", p.key())));
            }
        }
        Ok(Self { profiles, provenance: provenance.into() })
    }

    pub fn profiles(&self) -> &[ObservationProfile] {
        &self.profiles
    }

    pub fn keys(&self) -> Vec<ProfileKey> {
        self.profiles.iter().map(|p| p.key().clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    /// One row per sample across all profiles, in profile order.
    pub fn rows(&self) -> Vec<LabeledRow> {
        self.profiles
            .iter()
            .flat_map(|p| {
                p.rows().into_iter().map(move |(raw, temp_c)| LabeledRow {
                    key: p.key().clone(),
                    raw,
                    temp_c,
                })
            })
            .collect()
    }
}

/// A profile key, raw predictors and the observed temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledRow {
    pub key: ProfileKey,
    pub raw: RawRow,
    pub temp_c: f64,
}

#[derive(Debug, Deserialize)]
struct ObservationRecord {
    reservoir_id: String,
    date: NaiveDate,
    site_id: String,
    depth_m: f64,
    temp_c: f64,
}

/// Result of lenient parsing: accepted profiles and per-profile rejections.
#[derive(Debug)]
pub struct ObservationParse {
    pub accepted: ProfileSet,
    pub rejected: Vec<(ProfileKey, Error)>,
}

fn check_header<R: Read>(reader: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let header = reader.headers()?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::SchemaMismatch(format!(
            "expected header `{}`, got `{}`",
            expected.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input)
}

/// Parses observations, rejecting the whole file on the first invalid profile.
pub fn parse_observations<R: Read>(input: R, schema: SchemaVersion) -> Result<ProfileSet> {
    let parsed = parse_observations_lenient(input, schema)?;
    match parsed.rejected.into_iter().next() {
        Some((_, err)) => Err(err),
        None => Ok(parsed.accepted),
    }
}

/// Parses observations; profiles failing validation are returned with their
/// reason instead of aborting. File-level problems (header, duplicate rows,
/// malformed values) are still errors.
pub fn parse_observations_lenient<R: Read>(input: R, schema: SchemaVersion) -> Result<ObservationParse> {
    let SchemaVersion::V1 = schema;
    let mut reader = csv_reader(input);
    check_header(&mut reader, &OBSERVATION_HEADER)?;

    let mut order: Vec<ProfileKey> = Vec::new();
    let mut groups: BTreeMap<ProfileKey, Vec<Sample>> = BTreeMap::new();
    let mut seen_depths: HashSet<(ProfileKey, u64)> = HashSet::new();
    for rec in reader.deserialize::<ObservationRecord>() {
        let rec = rec.map_err(|e| Error::SchemaMismatch(e.to_string()))?;
        let key = ProfileKey { reservoir_id: rec.reservoir_id, date: rec.date, site_id: rec.site_id };
        if !seen_depths.insert((key.clone(), rec.depth_m.to_bits())) {
            return Err(Error::SchemaMismatch(format!(
                "duplicate row for {key} at depth {}",
                rec.depth_m
            )));
        }
        let entry = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        entry.push(Sample { depth: rec.depth_m, temperature: rec.temp_c });
    }

    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for key in order {
        let samples = groups.remove(&key).unwrap_or_default();
        match ObservationProfile::new(key.clone(), samples, BTreeMap::new()) {
            Ok(p) => accepted.push(p),
            Err(e) => rejected.push((key, e)),
        }
    }
    Ok(ObservationParse { accepted: ProfileSet::new(accepted, "observations csv")?, rejected })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyRecord {
    pub air_temp_c: f64,
    pub prcp_mm: f64,
    pub wind_ms: f64,
    pub vol_lake: f64,
    pub inflow_lake: f64,
}

/// Date-indexed daily covariates per reservoir.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DailySeries {
    series: BTreeMap<String, BTreeMap<NaiveDate, DailyRecord>>,
}

impl DailySeries {
    pub fn insert(&mut self, reservoir: &str, date: NaiveDate, rec: DailyRecord) -> Result<()> {
        let days = self.series.entry(reservoir.to_string()).or_default();
        if days.insert(date, rec).is_some() {
            return Err(Error::SchemaMismatch(format!("duplicate daily row for {reservoir} {date}")));
        }
        Ok(())
    }

    pub fn get(&self, reservoir: &str, date: NaiveDate) -> Option<&DailyRecord> {
        self.series.get(reservoir).and_then(|d| d.get(&date))
    }
}

#[derive(Debug, Deserialize)]
struct DailyCsvRecord {
    reservoir_id: String,
    date: NaiveDate,
    air_temp_c: f64,
    prcp_mm: f64,
    wind_ms: f64,
    vol_lake: f64,
    inflow_lake: f64,
}

pub fn parse_daily<R: Read>(input: R) -> Result<DailySeries> {
    let mut reader = csv_reader(input);
    check_header(&mut reader, &DAILY_HEADER)?;
    let mut out = DailySeries::default();
    for rec in reader.deserialize::<DailyCsvRecord>() {
        let r = rec.map_err(|e| Error::SchemaMismatch(e.to_string()))?;
        out.insert(
            &r.reservoir_id,
            r.date,
            DailyRecord {
                air_temp_c: r.air_temp_c,
                prcp_mm: r.prcp_mm,
                wind_ms: r.wind_ms,
                vol_lake: r.vol_lake,
                inflow_lake: r.inflow_lake,
            },
        )?;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Morphometry {
    pub surface_area_m2: f64,
    pub max_depth_m: f64,
}

impl Morphometry {
    pub fn surf_area_depth(&self) -> f64 {
        self.surface_area_m2 / self.max_depth_m
    }
}

#[derive(Debug, Deserialize)]
struct MorphCsvRecord {
    reservoir_id: String,
    surface_area_m2: f64,
    max_depth_m: f64,
}

pub fn parse_morphometry<R: Read>(input: R) -> Result<BTreeMap<String, Morphometry>> {
    let mut reader = csv_reader(input);
    check_header(&mut reader, &MORPHOMETRY_HEADER)?;
    let mut out = BTreeMap::new();
    for rec in reader.deserialize::<MorphCsvRecord>() {
        let r = rec.map_err(|e| Error::SchemaMismatch(e.to_string()))?;
        if !(r.max_depth_m > 0.0) {
            return Err(Error::SchemaMismatch(format!("{}: max depth must be positive", r.reservoir_id)));
        }
        let m = Morphometry { surface_area_m2: r.surface_area_m2, max_depth_m: r.max_depth_m };
        if out.insert(r.reservoir_id.clone(), m).is_some() {
            return Err(Error::SchemaMismatch(format!("duplicate morphometry for {}", r.reservoir_id)));
        }
    }
    Ok(out)
}

/// Which seven days make up an antecedent window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowConvention {
    /// The measurement day and the six days before it.
    #[default]
    Inclusive,
    /// The seven days before the measurement day.
    Exclusive,
}

/// Builds every feature except depth for `reservoir` on `date`.
pub fn rolling_features(
    daily: &DailySeries,
    reservoir: &str,
    date: NaiveDate,
    morph: &Morphometry,
    convention: WindowConvention,
) -> Result<RawRow> {
    let gap = |d: NaiveDate| Error::WindowGap { reservoir: reservoir.to_string(), date: d.to_string() };
    let today = *daily.get(reservoir, date).ok_or_else(|| gap(date))?;
    let last = match convention {
        WindowConvention::Inclusive => date,
        WindowConvention::Exclusive => date - Duration::days(1),
    };
    let (mut air, mut wind, mut prcp) = (0.0, 0.0, 0.0);
    // oldest day first so sums accumulate in calendar order
    for back in (0..WINDOW_DAYS).rev() {
        let d = last - Duration::days(back);
        let rec = daily.get(reservoir, d).ok_or_else(|| gap(d))?;
        air += rec.air_temp_c;
        wind += rec.wind_ms;
        prcp += rec.prcp_mm;
    }
    let n = WINDOW_DAYS as f64;
    let mut row = RawRow::default();
    row.set(FeatureId::AirTemp7d, air / n);
    row.set(FeatureId::AirTemp, today.air_temp_c);
    row.set(FeatureId::WindAvg7, wind / n);
    row.set(FeatureId::VolLake, today.vol_lake);
    row.set(FeatureId::Wind, today.wind_ms);
    row.set(FeatureId::SurfAreaDepth, morph.surf_area_depth());
    row.set(FeatureId::InflowLake, today.inflow_lake);
    row.set(FeatureId::PrcpCum7, prcp);
    row.set(FeatureId::Prcp, today.prcp_mm);
    Ok(row)
}

/// Fills every profile's covariates from the daily series and morphometry.
pub fn attach_covariates(
    set: ProfileSet,
    daily: &DailySeries,
    morphometry: &BTreeMap<String, Morphometry>,
    convention: WindowConvention,
) -> Result<ProfileSet> {
    let provenance = format!("{} + daily covariates", set.provenance);
    let mut out = Vec::with_capacity(set.len());
    for p in set.profiles {
        let key = p.key().clone();
        let morph = morphometry
            .get(&key.reservoir_id)
            .ok_or_else(|| Error::SchemaMismatch(format!("no morphometry for {}", key.reservoir_id)))?;
        let row = rolling_features(daily, &key.reservoir_id, key.date, morph, convention)?;
        let cov = FeatureId::ALL
            .into_iter()
            .filter(|&f| f != FeatureId::DepthMeasure)
            .filter_map(|f| row.get(f).map(|v| (f, v)))
            .collect();
        out.push(p.with_covariates(cov)?);
    }
    ProfileSet::new(out, provenance)
}

/// Column header of the feature-rows file.
pub fn rows_header() -> Vec<&'static str> {
    let mut h = vec!["reservoir_id", "date", "site_id"];
    h.extend(FeatureId::ALL.iter().map(|f| f.name()));
    h.push("temp_c");
    h
}

pub fn write_rows_csv<W: Write>(out: W, rows: &[LabeledRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(rows_header())?;
    for r in rows {
        let mut rec = vec![r.key.reservoir_id.clone(), r.key.date.to_string(), r.key.site_id.clone()];
        for f in FeatureId::ALL {
            rec.push(r.raw.require(f)?.to_string());
        }
        rec.push(r.temp_c.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv<R: Read>(input: R) -> Result<Vec<LabeledRow>> {
    let mut reader = csv_reader(input);
    check_header(&mut reader, &rows_header())?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .map_err(|e| Error::SchemaMismatch(format!("column {}: {e}", rows_header()[i])))
        };
        let date = NaiveDate::parse_from_str(field(1), "%Y-%m-%d")
            .map_err(|e| Error::SchemaMismatch(format!("date: {e}")))?;
        let key = ProfileKey { reservoir_id: field(0).to_string(), date, site_id: field(2).to_string() };
        let mut raw = RawRow::default();
        for f in FeatureId::ALL {
            raw.set(f, num(3 + f.position())?);
        }
        out.push(LabeledRow { key, raw, temp_c: num(3 + N_FEATURES)? });
    }
    Ok(out)
}

/// Profile-level train/test assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<ProfileKey>,
    pub test: Vec<ProfileKey>,
    pub seed: u64,
    pub ratio: f64,
}

impl SplitPlan {
    pub fn is_train(&self, key: &ProfileKey) -> bool {
        self.train.binary_search(key).is_ok()
    }

    pub fn is_test(&self, key: &ProfileKey) -> bool {
        self.test.binary_search(key).is_ok()
    }
}

/// Number of training profiles for a pool of `n` at `ratio`.
fn train_count(n: usize, ratio: f64) -> usize {
    // the small offset keeps exact products such as 0.7 * 30 from rounding up
    (((ratio * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Splits profile keys into train and test sets.
///
/// Reservoirs with exactly two profiles are handled first: a seeded coin flip
/// decides which one trains, the other tests. The remaining keys are sorted,
/// shuffled with ChaCha8 (`seed`) and the first `ceil(ratio * n)` train.
pub fn split_profiles(keys: &[ProfileKey], ratio: f64, seed: u64) -> Result<SplitPlan> {
    if keys.len() < 2 {
        return Err(Error::TooFewProfiles { needed: 2, got: keys.len() });
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidParam(format!("split ratio {ratio} outside [0, 1]")));
    }
    let unique: BTreeSet<&ProfileKey> = keys.iter().collect();
    if unique.len() != keys.len() {
        return Err(Error::SchemaMismatch("duplicate profile keys in split input".into()));
    }
    let mut by_reservoir: BTreeMap<&str, Vec<&ProfileKey>> = BTreeMap::new();
    for k in &unique {
        by_reservoir.entry(k.reservoir_id.as_str()).or_default().push(k);
    }

    let mut rng = rng::seeded(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut pool = Vec::new();
    for group in by_reservoir.values() {
        if group.len() == 2 {
            let first_trains = rng.random_bool(0.5);
            let (a, b) = if first_trains { (group[0], group[1]) } else { (group[1], group[0]) };
            train.push(a.clone());
            test.push(b.clone());
        } else {
            pool.extend(group.iter().map(|k| (*k).clone()));
        }
    }
    pool.sort();
    pool.shuffle(&mut rng);
    let n_train = train_count(pool.len(), ratio);
    let rest = pool.split_off(n_train);
    train.extend(pool);
    test.extend(rest);
    train.sort();
    test.sort();
    Ok(SplitPlan { train, test, seed, ratio })
}

/// Partitions `keys` into `k` folds whose sizes differ by at most one.
pub fn kfold(keys: &[ProfileKey], k: usize, seed: u64) -> Result<Vec<Vec<ProfileKey>>> {
    if k == 0 {
        return Err(Error::InvalidParam("k must be positive".into()));
    }
    if keys.len() < k {
        return Err(Error::TooFewProfiles { needed: k, got: keys.len() });
    }
    let mut shuffled = keys.to_vec();
    shuffled.sort();
    shuffled.shuffle(&mut rng::seeded(seed));
    let (base, extra) = (shuffled.len() / k, shuffled.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut it = shuffled.into_iter();
    for i in 0..k {
        let size = base + usize::from(i < extra);
        let mut fold: Vec<ProfileKey> = it.by_ref().take(size).collect();
        fold.sort();
        folds.push(fold);
    }
    Ok(folds)
}

/// Ground-truth function of the synthetic generator, in normalized space:
/// `y = a1*x1 + c/(a*x2 + b) + a3*x3 + a4*x4 + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub x1: f64,
    pub rational_numerator: f64,
    pub rational_slope: f64,
    pub rational_offset: f64,
    pub x3: f64,
    pub x4: f64,
    pub intercept: f64,
}

impl Default for GroundTruth {
    fn default() -> Self {
        Self {
            x1: 0.82,
            rational_numerator: 0.012,
            rational_slope: -0.2,
            rational_offset: -0.106,
            x3: -0.15,
            x4: -0.10,
            intercept: 0.235,
        }
    }
}

impl GroundTruth {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.x1 * x[0]
            + self.rational_numerator / (self.rational_slope * x[1] + self.rational_offset)
            + self.x3 * x[2]
            + self.x4 * x[3]
            + self.intercept
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_profiles: usize,
    pub depths_per_profile: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub n_reservoirs: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n_profiles: 200, depths_per_profile: 10, noise_sigma: 0.0, seed: 42, n_reservoirs: 10 }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub profiles: ProfileSet,
    pub truth: GroundTruth,
    pub scaler: Scaler,
}

/// Draws synthetic profiles whose normalized target follows [`GroundTruth`].
///
/// Every feature except depth is a per-profile constant drawn uniformly on
/// [0,1]; depth is drawn per sample. Values are mapped to raw units with the
/// fixed scaler, so `Scaler::table2_fixed()` recovers the normalized inputs.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SyntheticData> {
    if !(cfg.noise_sigma >= 0.0) {
        return Err(Error::InvalidParam(format!("noise sigma {} must be >= 0", cfg.noise_sigma)));
    }
    if cfg.depths_per_profile < MIN_PROFILE_SAMPLES {
        return Err(Error::InvalidParam(format!(
            "profiles need at least {MIN_PROFILE_SAMPLES} depths, got {}",
            cfg.depths_per_profile
        )));
    }
    if cfg.n_reservoirs == 0 {
        return Err(Error::InvalidParam("n_reservoirs must be positive".into()));
    }
    let truth = GroundTruth::default();
    let scaler = Scaler::table2_fixed();
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidParam(e.to_string()))?;
    let mut rng = rng::seeded(cfg.seed);
    let start = NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date");

    let mut profiles = Vec::with_capacity(cfg.n_profiles);
    for p in 0..cfg.n_profiles {
        let reservoir = p % cfg.n_reservoirs;
        let key = ProfileKey {
            reservoir_id: format!("R{reservoir:02}"),
            date: start + Duration::days((p / cfg.n_reservoirs) as i64 * (WINDOW_DAYS + 1)),
            site_id: "S1".to_string(),
        };
        let mut x = [0.0; N_FEATURES];
        for v in x.iter_mut() {
            *v = rng.random::<f64>();
        }
        let mut depths: Vec<f64> = (0..cfg.depths_per_profile).map(|_| rng.random::<f64>()).collect();
        depths.sort_by(f64::total_cmp);
        depths.dedup();
        while depths.len() < cfg.depths_per_profile {
            depths.push(rng.random::<f64>());
            depths.sort_by(f64::total_cmp);
            depths.dedup();
        }

        let mut samples = Vec::with_capacity(depths.len());
        for &d in &depths {
            x[FeatureId::DepthMeasure.position()] = d;
            let y = truth.evaluate(&x) + noise.sample(&mut rng);
            samples.push(Sample {
                depth: scaler.invert_feature(FeatureId::DepthMeasure, d),
                temperature: scaler.invert_target(y),
            });
        }
        let covariates = FeatureId::ALL
            .into_iter()
            .filter(|&f| f != FeatureId::DepthMeasure)
            .map(|f| (f, scaler.invert_feature(f, x[f.position()])))
            .collect();
        profiles.push(ObservationProfile::new(key, samples, covariates)?);
    }
    let provenance = format!(
        "synthetic: {} profiles x {} depths, sigma {}, seed {}",
        cfg.n_profiles, cfg.depths_per_profile, cfg.noise_sigma, cfg.seed
    );
    Ok(SyntheticData { profiles: ProfileSet::new(profiles, provenance)?, truth, scaler })
}
