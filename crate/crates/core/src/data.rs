//! Canonical data model: feature ordering, observation profiles and
//! min-max scaling.

use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_FEATURES: usize = 10;

/// Minimum number of depth samples for a profile to be usable.
pub const MIN_PROFILE_SAMPLES: usize = 4;

/// Top-to-bottom temperature spread above which a profile is stratified (°C).
pub const STRATIFICATION_DELTA_C: f64 = 1.0;

/// The ten predictors, ordered x1..x10.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureId {
    AirTemp7d,
    AirTemp,
    DepthMeasure,
    WindAvg7,
    VolLake,
    Wind,
    SurfAreaDepth,
    InflowLake,
    PrcpCum7,
    Prcp,
}

impl FeatureId {
    pub const ALL: [FeatureId; N_FEATURES] = [
        FeatureId::AirTemp7d,
        FeatureId::AirTemp,
        FeatureId::DepthMeasure,
        FeatureId::WindAvg7,
        FeatureId::VolLake,
        FeatureId::Wind,
        FeatureId::SurfAreaDepth,
        FeatureId::InflowLake,
        FeatureId::PrcpCum7,
        FeatureId::Prcp,
    ];

    /// 1-based index (the `i` of `x_i`).
    pub fn index(self) -> usize {
        self.position() + 1
    }

    /// 0-based column position.
    pub fn position(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<FeatureId> {
        index.checked_sub(1).and_then(|p| Self::ALL.get(p).copied())
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureId::AirTemp7d => "air_temp7d",
            FeatureId::AirTemp => "air_temp",
            FeatureId::DepthMeasure => "depth_measure",
            FeatureId::WindAvg7 => "wind_avg7",
            FeatureId::VolLake => "vol_lake",
            FeatureId::Wind => "wind",
            FeatureId::SurfAreaDepth => "surf_area_depth",
            FeatureId::InflowLake => "inflow_lake",
            FeatureId::PrcpCum7 => "prcp_cum7",
            FeatureId::Prcp => "prcp",
        }
    }

    pub fn from_name(name: &str) -> Option<FeatureId> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }

    /// Published observation range in raw units.
    pub fn table2_bounds(self) -> Bounds {
        let (min, max) = match self {
            FeatureId::AirTemp7d => (-2.81, 34.54),
            FeatureId::AirTemp => (-6.91, 34.35),
            FeatureId::DepthMeasure => (0.0, 30.48),
            FeatureId::WindAvg7 => (2.41, 6.61),
            FeatureId::VolLake => (31_956.0, 5.85e6),
            FeatureId::Wind => (1.30, 8.72),
            FeatureId::SurfAreaDepth => (235.67, 14_775.0),
            FeatureId::InflowLake => (0.0, 131_300.0),
            FeatureId::PrcpCum7 => (0.0, 33.27),
            FeatureId::Prcp => (0.0, 67.20),
        };
        Bounds { min, max }
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Water temperature bounds used by the fixed scaler (°C). No published range
/// exists for the target, so this covers the ice-free to summer-surface span.
pub const FIXED_TARGET_BOUNDS: Bounds = Bounds { min: 0.0, max: 35.0 };

/// Identifies one profile: reservoir, calendar day and site.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProfileKey {
    pub reservoir_id: String,
    pub date: NaiveDate,
    pub site_id: String,
}

impl fmt::Display for ProfileKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.reservoir_id, self.date, self.site_id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub depth: f64,
    pub temperature: f64,
}

/// One dated vertical temperature profile with its same-day covariates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationProfile {
    key: ProfileKey,
    samples: Vec<Sample>,
    covariates: BTreeMap<FeatureId, f64>,
}

impl ObservationProfile {
    /// Validates sample count, depth ordering and that depth is not a covariate.
    pub fn new(
        key: ProfileKey,
        samples: Vec<Sample>,
        covariates: BTreeMap<FeatureId, f64>,
    ) -> Result<Self> {
        if samples.len() < MIN_PROFILE_SAMPLES {
            return Err(Error::ShortProfile { key: key.to_string(), count: samples.len() });
        }
        if samples.iter().any(|s| !(s.depth >= 0.0) || !s.temperature.is_finite()) {
            return Err(Error::SchemaMismatch(format!(
                "profile {key} has a negative or non-finite depth or temperature"
            )));
        }
        if samples.windows(2).any(|w| w[1].depth <= w[0].depth) {
            return Err(Error::NonMonotoneDepths(key.to_string()));
        }
        if covariates.contains_key(&FeatureId::DepthMeasure) {
            return Err(Error::SchemaMismatch(format!(
                "profile {key}: depth is per-sample, not a profile covariate"
            )));
        }
        Ok(Self { key, samples, covariates })
    }

    pub fn key(&self) -> &ProfileKey {
        &self.key
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn covariates(&self) -> &BTreeMap<FeatureId, f64> {
        &self.covariates
    }

    pub fn with_covariates(mut self, covariates: BTreeMap<FeatureId, f64>) -> Result<Self> {
        if covariates.contains_key(&FeatureId::DepthMeasure) {
            return Err(Error::SchemaMismatch(format!(
                "profile {}: depth is per-sample, not a profile covariate",
                self.key
            )));
        }
        self.covariates = covariates;
        Ok(self)
    }

    pub fn is_stratified(&self) -> bool {
        let (lo, hi) = self
            .samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                (lo.min(s.temperature), hi.max(s.temperature))
            });
        hi - lo > STRATIFICATION_DELTA_C
    }

    /// Expands into one raw row per sample; rows differ only in depth.
    pub fn rows(&self) -> Vec<(RawRow, f64)> {
        self.samples
            .iter()
            .map(|s| {
                let mut raw = RawRow::default();
                for (&f, &v) in &self.covariates {
                    raw.set(f, v);
                }
                raw.set(FeatureId::DepthMeasure, s.depth);
                (raw, s.temperature)
            })
            .collect()
    }
}

/// Raw (unscaled) predictor values; any feature may be absent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    values: [Option<f64>; N_FEATURES],
}

impl RawRow {
    pub fn from_values(values: [f64; N_FEATURES]) -> Self {
        Self { values: values.map(Some) }
    }

    pub fn get(&self, f: FeatureId) -> Option<f64> {
        self.values[f.position()]
    }

    pub fn set(&mut self, f: FeatureId, v: f64) {
        self.values[f.position()] = Some(v);
    }

    pub fn require(&self, f: FeatureId) -> Result<f64> {
        self.get(f).ok_or(Error::MissingFeature(f))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Bounds {
    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.min) / self.span()
    }

    pub fn denormalize(&self, u: f64) -> f64 {
        u * self.span() + self.min
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerMode {
    /// Per-column min/max of the rows handed to the fit.
    FromData,
    /// Published feature ranges plus [`FIXED_TARGET_BOUNDS`].
    Table2Fixed,
}

/// Min-max scaler over the ten features and the target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mode: ScalerMode,
    pub features: [Bounds; N_FEATURES],
    pub target: Bounds,
}

/// A scaled row. Components outside [0,1] come from out-of-range raw
/// values and are listed in `out_of_range` rather than clipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub x: [f64; N_FEATURES],
    pub y: Option<f64>,
    pub out_of_range: Vec<FeatureId>,
}

impl FeatureVector {
    pub fn is_in_range(&self) -> bool {
        self.out_of_range.is_empty()
    }
}

impl Scaler {
    pub fn fit(rows: &[(RawRow, f64)], mode: ScalerMode) -> Result<Scaler> {
        match mode {
            ScalerMode::Table2Fixed => Ok(Scaler::table2_fixed()),
            ScalerMode::FromData => Scaler::fit_from_data(rows),
        }
    }

    pub fn table2_fixed() -> Scaler {
        Scaler {
            mode: ScalerMode::Table2Fixed,
            features: FeatureId::ALL.map(FeatureId::table2_bounds),
            target: FIXED_TARGET_BOUNDS,
        }
    }

    fn fit_from_data(rows: &[(RawRow, f64)]) -> Result<Scaler> {
        if rows.is_empty() {
            return Err(Error::EmptyData);
        }
        let mut features = [Bounds { min: f64::INFINITY, max: f64::NEG_INFINITY }; N_FEATURES];
        let mut target = Bounds { min: f64::INFINITY, max: f64::NEG_INFINITY };
        for (raw, t) in rows {
            for f in FeatureId::ALL {
                let v = raw.require(f)?;
                let b = &mut features[f.position()];
                b.min = b.min.min(v);
                b.max = b.max.max(v);
            }
            target.min = target.min.min(*t);
            target.max = target.max.max(*t);
        }
        for f in FeatureId::ALL {
            let b = features[f.position()];
            if !(b.max > b.min) {
                return Err(Error::DegenerateColumn(f.name().to_string()));
            }
        }
        if !(target.max > target.min) {
            return Err(Error::DegenerateColumn("temp_c".to_string()));
        }
        Ok(Scaler { mode: ScalerMode::FromData, features, target })
    }

    pub fn bounds(&self, f: FeatureId) -> Bounds {
        self.features[f.position()]
    }

    pub fn apply(&self, raw: &RawRow) -> Result<FeatureVector> {
        let mut x = [0.0; N_FEATURES];
        let mut out_of_range = Vec::new();
        for f in FeatureId::ALL {
            let b = self.bounds(f);
            let v = raw.require(f)?;
            if v < b.min || v > b.max {
                out_of_range.push(f);
            }
            x[f.position()] = b.normalize(v);
        }
        Ok(FeatureVector { x, y: None, out_of_range })
    }

    pub fn apply_labeled(&self, raw: &RawRow, temp_c: f64) -> Result<FeatureVector> {
        let mut fv = self.apply(raw)?;
        fv.y = Some(self.scale_target(temp_c));
        Ok(fv)
    }

    pub fn scale_target(&self, temp_c: f64) -> f64 {
        self.target.normalize(temp_c)
    }

    /// Maps a normalized prediction back to °C.
    pub fn invert_target(&self, y: f64) -> f64 {
        self.target.denormalize(y)
    }

    pub fn invert_feature(&self, f: FeatureId, u: f64) -> f64 {
        self.bounds(f).denormalize(u)
    }

    pub fn invert_row(&self, x: &[f64; N_FEATURES]) -> RawRow {
        let mut raw = RawRow::default();
        for f in FeatureId::ALL {
            raw.set(f, self.invert_feature(f, x[f.position()]));
        }
        raw
    }
}

/// Dense row-major design matrix in normalized space.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    n_cols: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_cols: usize) -> Self {
        Self { n_cols, values: Vec::new() }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut m = Self::new(n_cols);
        for r in rows {
            m.push_row(r.as_ref())?;
        }
        Ok(m)
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.n_cols {
            return Err(Error::DimensionMismatch { expected: self.n_cols, got: row.len() });
        }
        self.values.extend_from_slice(row);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        if self.n_cols == 0 {
            0
        } else {
            self.values.len() / self.n_cols
        }
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.n_cols.max(1))
    }

    /// Keeps only `columns`, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> FeatureMatrix {
        let mut m = FeatureMatrix::new(columns.len());
        for r in self.rows() {
            m.values.extend(columns.iter().map(|&c| r[c]));
        }
        m
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut m = FeatureMatrix::new(self.n_cols);
        for &i in rows {
            m.values.extend_from_slice(self.row(i));
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key() -> ProfileKey {
        ProfileKey {
            reservoir_id: "texoma".into(),
            date: NaiveDate::from_ymd_opt(2020, 7, 1).unwrap(),
            site_id: "a".into(),
        }
    }

    fn samples(depths: &[f64], temps: &[f64]) -> Vec<Sample> {
        depths
            .iter()
            .zip(temps)
            .map(|(&depth, &temperature)| Sample { depth, temperature })
            .collect()
    }

    #[test]
    fn feature_ids_are_a_bijection() {
        for (p, f) in FeatureId::ALL.iter().enumerate() {
            assert_eq!(f.position(), p);
            assert_eq!(FeatureId::from_index(p + 1), Some(*f));
            assert_eq!(FeatureId::from_name(f.name()), Some(*f));
        }
        assert_eq!(FeatureId::from_index(0), None);
        assert_eq!(FeatureId::from_index(11), None);
        assert_eq!(FeatureId::PrcpCum7.index(), 9);
        assert_eq!(FeatureId::Prcp.index(), 10);
    }

    #[test]
    fn table2_fixed_air_temp_bounds() {
        let s = Scaler::fit(&[], ScalerMode::Table2Fixed).unwrap();
        assert_eq!(s.bounds(FeatureId::AirTemp), Bounds { min: -6.91, max: 34.35 });
    }

    #[test]
    fn scale_apply_examples() {
        let s = Scaler::table2_fixed();
        let mut raw = RawRow::from_values(FeatureId::ALL.map(|f| f.table2_bounds().min));
        raw.set(FeatureId::AirTemp, 34.35);
        assert_eq!(s.apply(&raw).unwrap().x[1], 1.0);
        raw.set(FeatureId::AirTemp, -6.91);
        assert_eq!(s.apply(&raw).unwrap().x[1], 0.0);
        raw.set(FeatureId::AirTemp, 13.72);
        let x2 = s.apply(&raw).unwrap().x[1];
        assert!((x2 - 20.63 / 41.26).abs() < 1e-12);
        assert!((x2 - 0.50001).abs() < 1e-5);
    }

    #[test]
    fn out_of_range_is_flagged_not_clipped() {
        let s = Scaler::table2_fixed();
        let mut raw = RawRow::from_values(FeatureId::ALL.map(|f| f.table2_bounds().min));
        raw.set(FeatureId::Wind, 10.0);
        let fv = s.apply(&raw).unwrap();
        assert!(fv.x[FeatureId::Wind.position()] > 1.0);
        assert_eq!(fv.out_of_range, vec![FeatureId::Wind]);
    }

    #[test]
    fn missing_feature_is_an_error() {
        let s = Scaler::table2_fixed();
        let mut raw = RawRow::default();
        raw.set(FeatureId::AirTemp7d, 1.0);
        assert!(matches!(s.apply(&raw), Err(Error::MissingFeature(FeatureId::AirTemp))));
    }

    #[test]
    fn from_data_bounds_and_degenerate_columns() {
        let mk = |a: f64, t: f64| {
            let mut vals = [0.0; N_FEATURES];
            for (i, v) in vals.iter_mut().enumerate() {
                *v = i as f64 + a;
            }
            vals[1] = a;
            (RawRow::from_values(vals), t)
        };
        let s = Scaler::fit(&[mk(0.0, 5.0), mk(10.0, 25.0)], ScalerMode::FromData).unwrap();
        assert_eq!(s.bounds(FeatureId::AirTemp), Bounds { min: 0.0, max: 10.0 });
        assert_eq!(s.target, Bounds { min: 5.0, max: 25.0 });

        let err = Scaler::fit(&[mk(1.0, 5.0), mk(1.0, 5.0)], ScalerMode::FromData).unwrap_err();
        assert!(matches!(err, Error::DegenerateColumn(_)));
    }

    #[test]
    fn target_inversion() {
        let mut s = Scaler::table2_fixed();
        assert_eq!(s.invert_target(0.0), s.target.min);
        assert_eq!(s.invert_target(1.0), s.target.max);
        s.target = Bounds { min: 0.0, max: 40.0 };
        assert_eq!(s.invert_target(0.5), 20.0);
    }

    #[test]
    fn profile_validation() {
        let ok = ObservationProfile::new(
            key(),
            samples(&[0.0, 1.0, 2.0, 3.0], &[25.0, 24.5, 22.0, 18.0]),
            BTreeMap::new(),
        )
        .unwrap();
        assert!(ok.is_stratified());

        let mixed = ObservationProfile::new(
            key(),
            samples(&[0.0, 1.0, 2.0, 3.0], &[20.0, 20.2, 19.8, 19.5]),
            BTreeMap::new(),
        )
        .unwrap();
        assert!(!mixed.is_stratified());

        let short = ObservationProfile::new(key(), samples(&[0.0, 1.0, 2.0], &[1.0; 3]), BTreeMap::new());
        assert!(matches!(short, Err(Error::ShortProfile { count: 3, .. })));

        let unordered =
            ObservationProfile::new(key(), samples(&[0.0, 2.0, 1.0, 3.0], &[1.0; 4]), BTreeMap::new());
        assert!(matches!(unordered, Err(Error::NonMonotoneDepths(_))));

        let mut cov = BTreeMap::new();
        cov.insert(FeatureId::DepthMeasure, 3.0);
        let depth_cov = ObservationProfile::new(key(), samples(&[0.0, 1.0, 2.0, 3.0], &[1.0; 4]), cov);
        assert!(matches!(depth_cov, Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn profile_rows_vary_only_in_depth() {
        let mut cov = BTreeMap::new();
        cov.insert(FeatureId::AirTemp, 12.0);
        let p = ObservationProfile::new(
            key(),
            samples(&[0.5, 1.0, 2.0, 4.0], &[20.0, 19.0, 18.0, 17.0]),
            cov,
        )
        .unwrap();
        let rows = p.rows();
        assert_eq!(rows.len(), 4);
        for (i, (raw, t)) in rows.iter().enumerate() {
            assert_eq!(raw.get(FeatureId::AirTemp), Some(12.0));
            assert_eq!(raw.get(FeatureId::DepthMeasure), Some(p.samples()[i].depth));
            assert_eq!(*t, p.samples()[i].temperature);
        }
    }

    #[test]
    fn matrix_selection() {
        let m = FeatureMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(m.n_rows(), 2);
        assert_eq!(m.select_columns(&[2, 0]).row(1), &[6.0, 4.0]);
        assert_eq!(m.select_rows(&[1]).row(0), &[4.0, 5.0, 6.0]);
    }
}
