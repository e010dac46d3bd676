//! Weekly wILI series, the season calendar, and realized target extraction.
//!
//! A season runs from MMWR week 40 of its first year through MMWR week 20 of
//! the next. Season week 1 is MMWR week 40, so seasons have 33 weeks, or 34
//! when the first year has 53 MMWR weeks.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dist::{Outcome, Target, MAX_SEASON_WEEKS};
use crate::error::{Error, Result};

/// MMWR years with 53 weeks, 1990 through 2050.
const FIFTY_THREE_WEEK_YEARS: [i32; 11] = [
    1992, 1997, 2003, 2008, 2014, 2020, 2025, 2031, 2036, 2042, 2048,
];
const CALENDAR_RANGE: std::ops::RangeInclusive<i32> = 1990..=2050;

/// Number of MMWR weeks in `year`.
pub fn mmwr_weeks_in_year(year: i32) -> Result<u32> {
    if !CALENDAR_RANGE.contains(&year) {
        return Err(Error::Domain(format!(
            "MMWR calendar covers {}..={}, not {year}",
            CALENDAR_RANGE.start(),
            CALENDAR_RANGE.end()
        )));
    }
    Ok(if FIFTY_THREE_WEEK_YEARS.contains(&year) {
        53
    } else {
        52
    })
}

/// A season label such as `2010/2011`, ordered by its first year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Season(i32);

impl Season {
    pub fn starting(first_year: i32) -> Self {
        Season(first_year)
    }

    pub fn first_year(self) -> i32 {
        self.0
    }

    pub fn previous(self) -> Season {
        Season(self.0 - 1)
    }

    /// 33 or 34.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(self) -> Result<u32> {
        Ok(mmwr_weeks_in_year(self.0)? - 39 + 20)
    }

    /// MMWR week of a 1-based season week.
    pub fn mmwr_week(self, season_week: u32) -> Result<u32> {
        let last = mmwr_weeks_in_year(self.0)?;
        let len = self.len()?;
        if !(1..=len).contains(&season_week) {
            return Err(Error::Domain(format!(
                "season week {season_week} outside 1..={len} for {self}"
            )));
        }
        let w = 39 + season_week;
        Ok(if w <= last { w } else { w - last })
    }

    /// 1-based season week of an MMWR week.
    pub fn season_week(self, mmwr_week: u32) -> Result<u32> {
        let last = mmwr_weeks_in_year(self.0)?;
        match mmwr_week {
            40..=53 if mmwr_week <= last => Ok(mmwr_week - 39),
            1..=20 => Ok(last - 39 + mmwr_week),
            _ => Err(Error::Domain(format!(
                "MMWR week {mmwr_week} is outside the {self} season"
            ))),
        }
    }
}

impl fmt::Display for Season {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.0, self.0 + 1)
    }
}

impl FromStr for Season {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Domain(format!("season label '{s}' is not of the form YYYY/YYYY"));
        let (a, b) = s.trim().split_once('/').ok_or_else(bad)?;
        let a: i32 = a.parse().map_err(|_| bad())?;
        let b: i32 = b.parse().map_err(|_| bad())?;
        if b != a + 1 {
            return Err(bad());
        }
        mmwr_weeks_in_year(a)?;
        Ok(Season(a))
    }
}

impl TryFrom<String> for Season {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Season> for String {
    fn from(s: Season) -> String {
        s.to_string()
    }
}

/// One region-season of weekly wILI. `wili[i]` is season week `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonSeries {
    pub region: String,
    pub season: Season,
    pub wili: Vec<Option<f64>>,
    pub onset_threshold: Option<f64>,
}

impl SeasonSeries {
    /// A series with every week missing.
    pub fn empty(region: impl Into<String>, season: Season) -> Result<Self> {
        Ok(SeasonSeries {
            region: region.into(),
            season,
            wili: vec![None; season.len()? as usize],
            onset_threshold: None,
        })
    }

    pub fn len(&self) -> usize {
        self.wili.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wili.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.wili.iter().all(Option::is_some)
    }

    /// All values, or an error naming the first missing week.
    pub fn complete_values(&self) -> Result<Vec<f64>> {
        self.wili
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.ok_or_else(|| {
                    Error::Data(format!(
                        "{} {} has no wILI for season week {}",
                        self.region,
                        self.season,
                        i + 1
                    ))
                })
            })
            .collect()
    }

    pub fn onset(&self) -> Result<Option<u32>> {
        let threshold = self.onset_threshold.ok_or_else(|| {
            Error::Config(format!(
                "no onset threshold for {} {}",
                self.region, self.season
            ))
        })?;
        Ok(onset_week(&self.complete_values()?, threshold))
    }

    pub fn peak(&self) -> Result<(f64, Vec<u32>)> {
        if self.wili.is_empty() {
            return Err(Error::Domain(format!(
                "{} {} has no weeks",
                self.region, self.season
            )));
        }
        peak(&self.complete_values()?)
    }

    /// Realized values of every target. Onset needs a threshold.
    pub fn target_values(&self) -> Result<TargetValues> {
        let (peak_incidence, peak_weeks) = self.peak()?;
        Ok(TargetValues {
            onset_week: self.onset()?,
            peak_incidence,
            peak_weeks,
        })
    }

    /// Peak targets only, for series without a threshold.
    pub fn peak_values(&self) -> Result<(f64, Vec<u32>)> {
        self.peak()
    }
}

/// Rounds half away from zero to one decimal place.
pub fn round_one_decimal(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// First season week starting a run of three weeks at or above `threshold`.
///
/// The whole run must fall inside the series.
pub fn onset_week(values: &[f64], threshold: f64) -> Option<u32> {
    values
        .windows(3)
        .position(|w| w.iter().all(|&v| v >= threshold))
        .map(|i| i as u32 + 1)
}

/// Rounded peak incidence and every season week attaining it.
pub fn peak(values: &[f64]) -> Result<(f64, Vec<u32>)> {
    let rounded: Vec<f64> = values.iter().map(|&v| round_one_decimal(v)).collect();
    let max = rounded
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or_else(|| Error::Domain("peak of an empty series".into()))?;
    let weeks = rounded
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == max)
        .map(|(i, _)| i as u32 + 1)
        .collect();
    Ok((max, weeks))
}

/// Realized onset and peak of one region-season.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetValues {
    pub onset_week: Option<u32>,
    pub peak_incidence: f64,
    pub peak_weeks: Vec<u32>,
}

impl TargetValues {
    pub fn outcome(&self, target: Target) -> Result<Outcome> {
        match target {
            Target::OnsetWeek => Ok(Outcome::onset(self.onset_week)),
            Target::PeakWeek => Outcome::peak_week(self.peak_weeks.iter().copied()),
            Target::PeakIncidence => Outcome::peak_incidence(self.peak_incidence),
        }
    }

    /// Earliest week attaining the peak.
    pub fn first_peak_week(&self) -> u32 {
        self.peak_weeks[0]
    }
}

/// Training and test seasons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    training: Vec<Season>,
    test: Vec<Season>,
}

impl DataSplit {
    pub fn new(mut training: Vec<Season>, mut test: Vec<Season>) -> Result<Self> {
        training.sort();
        training.dedup();
        test.sort();
        test.dedup();
        if training.is_empty() {
            return Err(Error::Config("no training seasons".into()));
        }
        if let (Some(last_train), Some(first_test)) = (training.last(), test.first()) {
            if first_test <= last_train {
                return Err(Error::Config(format!(
                    "test season {first_test} is not later than training season {last_train}"
                )));
            }
        }
        Ok(DataSplit { training, test })
    }

    /// The last `n_test` seasons present are held out for testing.
    pub fn last_n_test(seasons: impl IntoIterator<Item = Season>, n_test: usize) -> Result<Self> {
        let mut all: Vec<Season> = seasons.into_iter().collect();
        all.sort();
        all.dedup();
        if n_test >= all.len() {
            return Err(Error::Config(format!(
                "cannot hold out {n_test} of {} seasons",
                all.len()
            )));
        }
        let test = all.split_off(all.len() - n_test);
        Self::new(all, test)
    }

    pub fn training(&self) -> &[Season] {
        &self.training
    }

    pub fn test(&self) -> &[Season] {
        &self.test
    }
}

/// Series keyed by (region, season).
pub type SeasonCollection = BTreeMap<(String, Season), SeasonSeries>;

#[derive(Debug, Serialize, Deserialize)]
struct WiliRow {
    region: String,
    season: String,
    mmwr_week: u32,
    season_week: u32,
    wili: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ThresholdRow {
    region: String,
    season: String,
    baseline: f64,
}

const WILI_HEADER: [&str; 5] = ["region", "season", "mmwr_week", "season_week", "wili"];
const THRESHOLD_HEADER: [&str; 3] = ["region", "season", "baseline"];

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<(), String> {
    let header = reader.headers().map_err(|e| e.to_string())?;
    if header.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(format!(
            "header is '{}', expected '{}'",
            header.iter().collect::<Vec<_>>().join(","),
            expected.join(",")
        ));
    }
    Ok(())
}

/// Reads the wILI CSV and optional thresholds CSV.
pub fn ingest_wili(file: &Path, thresholds_file: Option<&Path>) -> Result<SeasonCollection> {
    let mut series = read_wili(std::fs::File::open(file)?).map_err(|p| Error::ingest(file, p))?;
    if let Some(path) = thresholds_file {
        let thresholds =
            read_thresholds(std::fs::File::open(path)?).map_err(|p| Error::ingest(path, p))?;
        for ((region, season), baseline) in thresholds {
            if let Some(s) = series.get_mut(&(region, season)) {
                s.onset_threshold = Some(baseline);
            }
        }
    }
    Ok(series)
}

/// Parses wILI rows; on failure returns every problem with its line number.
pub fn read_wili(input: impl Read) -> Result<SeasonCollection, Vec<String>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    check_header(&mut reader, &WILI_HEADER).map_err(|e| vec![e])?;
    let mut problems = Vec::new();
    let mut out = SeasonCollection::new();
    let mut seen = HashSet::new();
    for (i, record) in reader.deserialize::<WiliRow>().enumerate() {
        let line = i + 2;
        let row = match record {
            Ok(row) => row,
            Err(e) => {
                problems.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let season: Season = match row.season.parse() {
            Ok(s) => s,
            Err(e) => {
                problems.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let week = match season.season_week(row.mmwr_week) {
            Ok(w) if w == row.season_week => w,
            Ok(w) => {
                problems.push(format!(
                    "line {line}: MMWR week {} is season week {w}, not {}",
                    row.mmwr_week, row.season_week
                ));
                continue;
            }
            Err(e) => {
                problems.push(format!("line {line}: {e}"));
                continue;
            }
        };
        if let Some(v) = row.wili {
            if !(v >= 0.0) || !v.is_finite() {
                problems.push(format!("line {line}: wili {v} is negative or not finite"));
                continue;
            }
        }
        if !seen.insert((row.region.clone(), season, week)) {
            problems.push(format!(
                "line {line}: duplicate row for {} {season} week {week}",
                row.region
            ));
            continue;
        }
        let key = (row.region.clone(), season);
        if !out.contains_key(&key) {
            match SeasonSeries::empty(row.region.clone(), season) {
                Ok(s) => {
                    out.insert(key.clone(), s);
                }
                Err(e) => {
                    problems.push(format!("line {line}: {e}"));
                    continue;
                }
            }
        }
        out.get_mut(&key).expect("inserted above").wili[week as usize - 1] = row.wili;
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(problems)
    }
}

fn read_thresholds(input: impl Read) -> Result<BTreeMap<(String, Season), f64>, Vec<String>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    check_header(&mut reader, &THRESHOLD_HEADER).map_err(|e| vec![e])?;
    let mut problems = Vec::new();
    let mut out = BTreeMap::new();
    for (i, record) in reader.deserialize::<ThresholdRow>().enumerate() {
        let line = i + 2;
        let parsed = record
            .map_err(|e| e.to_string())
            .and_then(|row| Ok((row.season.parse::<Season>().map_err(|e| e.to_string())?, row)));
        match parsed {
            Ok((_, row)) if !(row.baseline >= 0.0) => {
                problems.push(format!("line {line}: negative baseline {}", row.baseline))
            }
            Ok((season, row)) => {
                if out.insert((row.region.clone(), season), row.baseline).is_some() {
                    problems.push(format!(
                        "line {line}: duplicate baseline for {} {season}",
                        row.region
                    ));
                }
            }
            Err(e) => problems.push(format!("line {line}: {e}")),
        }
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(problems)
    }
}

/// Writes series in the wILI CSV format. Missing weeks are written as empty fields.
pub fn write_wili<'a>(
    out: impl Write,
    series: impl IntoIterator<Item = &'a SeasonSeries>,
) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for s in series {
        for (i, v) in s.wili.iter().enumerate() {
            let week = i as u32 + 1;
            writer.serialize(WiliRow {
                region: s.region.clone(),
                season: s.season.to_string(),
                mmwr_week: s.season.mmwr_week(week)?,
                season_week: week,
                wili: *v,
            })?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Writes the thresholds CSV for every series that has one.
pub fn write_thresholds<'a>(
    out: impl Write,
    series: impl IntoIterator<Item = &'a SeasonSeries>,
) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    writer.write_record(THRESHOLD_HEADER)?;
    for s in series {
        if let Some(baseline) = s.onset_threshold {
            writer.serialize(ThresholdRow {
                region: s.region.clone(),
                season: s.season.to_string(),
                baseline,
            })?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Seasonal curve shape: `baseline + height * exp(-(w - peak_week)^2 / (2 width^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    #[serde(default = "Template::default_baseline")]
    pub baseline: f64,
    pub peak_week: f64,
    pub height: f64,
    #[serde(default = "Template::default_width")]
    pub width: f64,
}

impl Template {
    fn default_baseline() -> f64 {
        0.8
    }
    fn default_width() -> f64 {
        3.0
    }

    pub fn value(&self, week: f64) -> f64 {
        let z = (week - self.peak_week) / self.width;
        self.baseline + self.height * (-0.5 * z * z).exp()
    }
}

/// Settings for [`synthesize_seasons`]. Read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub regions: usize,
    pub seasons: usize,
    #[serde(default = "GeneratorConfig::default_first_season")]
    pub first_season: i32,
    pub template: Template,
    /// Standard deviation of multiplicative log-scale noise on each weekly value.
    pub noise_sd: f64,
    pub seed: u64,
    /// Season-to-season standard deviation of the peak week.
    #[serde(default)]
    pub peak_shift_sd: f64,
    /// Season-to-season log-scale standard deviation of the peak height.
    #[serde(default)]
    pub height_log_sd: f64,
    #[serde(default = "GeneratorConfig::default_threshold")]
    pub onset_threshold: f64,
}

impl GeneratorConfig {
    fn default_first_season() -> i32 {
        1997
    }
    fn default_threshold() -> f64 {
        2.0
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.regions == 0 || self.seasons == 0 {
            return bad("regions and seasons must be positive".into());
        }
        let last = self.first_season + self.seasons as i32;
        if !CALENDAR_RANGE.contains(&self.first_season) || !CALENDAR_RANGE.contains(&last) {
            return bad(format!(
                "seasons {}..{last} fall outside the MMWR calendar table",
                self.first_season
            ));
        }
        let t = &self.template;
        if !(t.baseline >= 0.0 && t.height >= 0.0 && t.width > 0.0) {
            return bad("template needs baseline >= 0, height >= 0, width > 0".into());
        }
        if !(1.0..=MAX_SEASON_WEEKS as f64).contains(&t.peak_week) {
            return bad(format!("template peak week {} outside the season", t.peak_week));
        }
        for (name, v) in [
            ("noise_sd", self.noise_sd),
            ("peak_shift_sd", self.peak_shift_sd),
            ("height_log_sd", self.height_log_sd),
            ("onset_threshold", self.onset_threshold),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

/// Deterministic synthetic seasons for testing and demos.
pub fn synthesize_seasons(config: &GeneratorConfig) -> Result<SeasonCollection> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = SeasonCollection::new();
    for r in 0..config.regions {
        let region = format!("Region {}", r + 1);
        for s in 0..config.seasons {
            let season = Season::starting(config.first_season + s as i32);
            let len = season.len()?;
            let mut template = config.template.clone();
            template.peak_week += config.peak_shift_sd * std_normal.sample(&mut rng);
            template.height *= (config.height_log_sd * std_normal.sample(&mut rng)).exp();
            let wili = (1..=len)
                .map(|w| {
                    let noise = (config.noise_sd * std_normal.sample(&mut rng)).exp();
                    Some((template.value(w as f64) * noise).max(0.0))
                })
                .collect();
            out.insert(
                (region.clone(), season),
                SeasonSeries {
                    region: region.clone(),
                    season,
                    wili,
                    onset_threshold: Some(config.onset_threshold),
                },
            );
        }
    }
    Ok(out)
}
