//! Log-score tables, per-season rankings and figure-data exports.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::components::{ComponentId, PredictionSet};
use crate::dist::{clamp_display, log_score, OutcomeValue, Target};
use crate::ensemble::WeightTraceRow;
use crate::error::{Error, Result};
use crate::season::{Season, SeasonCollection};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub model: String,
    pub region: String,
    pub season: Season,
    pub season_week: u32,
    pub target: Target,
    /// Natural-log score; negative infinity when the truth had zero mass.
    pub log_score: f64,
    /// Whether the prediction was made before the target was observed.
    pub before_target: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

/// Season week at which the target became known: the onset week, or the
/// first peak week for both peak targets. `None` for a season with no onset.
fn target_week(
    set: &PredictionSet,
    data: &SeasonCollection,
    region: &str,
    season: Season,
    target: Target,
) -> Result<Option<u32>> {
    let lookup_target = match target {
        Target::OnsetWeek => Target::OnsetWeek,
        Target::PeakWeek | Target::PeakIncidence => Target::PeakWeek,
    };
    if let Some(outcome) = set.realized(region, season, lookup_target) {
        return Ok(match outcome.value() {
            OutcomeValue::Week(w) => Some(*w),
            _ => None,
        });
    }
    let series = data
        .get(&(region.to_string(), season))
        .ok_or_else(|| Error::Data(format!("no data for {region} {season} to place the {target} target")))?;
    let values = series.target_values()?;
    Ok(match target {
        Target::OnsetWeek => values.onset_week,
        _ => Some(values.first_peak_week()),
    })
}

/// Scores every density in `set` that has a realized outcome.
pub fn score_all(set: &PredictionSet, data: &SeasonCollection) -> Result<ScoreTable> {
    let mut rows = Vec::new();
    let mut weeks: BTreeMap<(String, Season, Target), Option<u32>> = BTreeMap::new();
    for (key, density) in set.densities() {
        let Some(outcome) = set.realized(&key.region, key.season, key.target) else {
            continue;
        };
        let wk = match weeks.get(&(key.region.clone(), key.season, key.target)) {
            Some(w) => *w,
            None => {
                let w = target_week(set, data, &key.region, key.season, key.target)?;
                weeks.insert((key.region.clone(), key.season, key.target), w);
                w
            }
        };
        rows.push(ScoreRow {
            model: key.component.to_string(),
            region: key.region.clone(),
            season: key.season,
            season_week: key.season_week,
            target: key.target,
            log_score: log_score(density, outcome)?,
            before_target: wk.is_none_or(|w| key.season_week < w),
        });
    }
    Ok(ScoreTable { rows })
}

impl ScoreTable {
    pub fn extend(&mut self, other: ScoreTable) {
        self.rows.extend(other.rows);
    }

    pub fn before_target_only(&self) -> ScoreTable {
        ScoreTable {
            rows: self.rows.iter().filter(|r| r.before_target).cloned().collect(),
        }
    }

    pub fn models(&self) -> Vec<String> {
        let mut m: Vec<String> = self.rows.iter().map(|r| r.model.clone()).collect();
        m.sort();
        m.dedup();
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankRow {
    pub season: Season,
    pub target: Target,
    pub model: String,
    pub mean_log_score: f64,
    /// 1 is best; tied means share a rank and the next distinct mean
    /// takes the following integer.
    pub rank: u32,
}

fn season_means(table: &ScoreTable) -> BTreeMap<(Season, Target), BTreeMap<String, f64>> {
    let mut sums: BTreeMap<(Season, Target, String), (f64, usize)> = BTreeMap::new();
    for r in &table.rows {
        let e = sums.entry((r.season, r.target, r.model.clone())).or_insert((0.0, 0));
        e.0 += clamp_display(r.log_score);
        e.1 += 1;
    }
    let mut out: BTreeMap<(Season, Target), BTreeMap<String, f64>> = BTreeMap::new();
    for ((season, target, model), (sum, n)) in sums {
        out.entry((season, target)).or_default().insert(model, sum / n as f64);
    }
    out
}

fn rank_all(table: &ScoreTable) -> Vec<RankRow> {
    let mut out = Vec::new();
    for ((season, target), means) in season_means(table) {
        let mut distinct: Vec<f64> = means.values().copied().collect();
        distinct.sort_by(|a, b| b.total_cmp(a));
        distinct.dedup();
        for (model, mean) in means {
            let rank = distinct.iter().position(|m| *m == mean).unwrap_or(0) as u32 + 1;
            out.push(RankRow {
                season,
                target,
                model,
                mean_log_score: mean,
                rank,
            });
        }
    }
    out
}

/// Ranks models within each season and target by mean log score over
/// predictions made before the target was observed. Negative infinity
/// counts as the display floor.
pub fn seasonal_rank(table: &ScoreTable) -> Vec<RankRow> {
    rank_all(&table.before_target_only())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyRow {
    pub model: String,
    pub target: Target,
    pub mean_log_score: f64,
    pub worst_season_mean: f64,
    pub worst_rank: u32,
}

/// Overall mean, worst per-season mean and worst per-season rank of each
/// model and target, over all scored predictions.
pub fn consistency_summary(table: &ScoreTable) -> Vec<ConsistencyRow> {
    let mut totals: BTreeMap<(String, Target), (f64, usize)> = BTreeMap::new();
    for r in &table.rows {
        let e = totals.entry((r.model.clone(), r.target)).or_insert((0.0, 0));
        e.0 += clamp_display(r.log_score);
        e.1 += 1;
    }
    let ranks = rank_all(table);
    totals
        .into_iter()
        .map(|((model, target), (sum, n))| {
            let mine = ranks.iter().filter(|r| r.model == model && r.target == target);
            let worst_season_mean = mine.clone().map(|r| r.mean_log_score).fold(f64::INFINITY, f64::min);
            let worst_rank = mine.map(|r| r.rank).max().unwrap_or(0);
            ConsistencyRow {
                model,
                target,
                mean_log_score: sum / n as f64,
                worst_season_mean,
                worst_rank,
            }
        })
        .collect()
}

const SCORES_HEADER: [&str; 8] = [
    "model",
    "region",
    "season",
    "season_week",
    "target",
    "log_score",
    "is_neg_inf",
    "before_target",
];
const RANKINGS_HEADER: [&str; 5] = ["season", "target", "model", "mean_log_score", "rank"];
const WEIGHTS_HEADER: [&str; 9] = [
    "region",
    "target",
    "scheme",
    "season_week",
    "uncertainty_sar",
    "uncertainty_kcde",
    "wili",
    "component",
    "weight",
];

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = reader.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Data(format!(
            "expected header {}, found {}",
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(record: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    record
        .get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Data(format!("line {line}: bad value in column {}", i + 1)))
}

fn optional<T: std::str::FromStr>(record: &csv::StringRecord, i: usize, line: usize) -> Result<Option<T>> {
    match record.get(i) {
        Some("") => Ok(None),
        _ => field(record, i, line).map(Some),
    }
}

/// Writes scores with negative infinity as the display floor plus a flag.
pub fn write_scores(table: &ScoreTable, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCORES_HEADER)?;
    for r in &table.rows {
        let neg_inf = r.log_score == f64::NEG_INFINITY;
        w.write_record([
            r.model.clone(),
            r.region.clone(),
            r.season.to_string(),
            r.season_week.to_string(),
            r.target.to_string(),
            clamp_display(r.log_score).to_string(),
            neg_inf.to_string(),
            r.before_target.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores(input: impl Read) -> Result<ScoreTable> {
    let mut reader = csv::Reader::from_reader(input);
    check_header(&mut reader, &SCORES_HEADER)?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let neg_inf: bool = field(&record, 6, line)?;
        let score: f64 = field(&record, 5, line)?;
        rows.push(ScoreRow {
            model: field(&record, 0, line)?,
            region: field(&record, 1, line)?,
            season: field(&record, 2, line)?,
            season_week: field(&record, 3, line)?,
            target: field(&record, 4, line)?,
            log_score: if neg_inf { f64::NEG_INFINITY } else { score },
            before_target: field(&record, 7, line)?,
        });
    }
    Ok(ScoreTable { rows })
}

pub fn write_rankings(rows: &[RankRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RANKINGS_HEADER)?;
    for r in rows {
        w.write_record([
            r.season.to_string(),
            r.target.to_string(),
            r.model.clone(),
            r.mean_log_score.to_string(),
            r.rank.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rankings(input: impl Read) -> Result<Vec<RankRow>> {
    let mut reader = csv::Reader::from_reader(input);
    check_header(&mut reader, &RANKINGS_HEADER)?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        rows.push(RankRow {
            season: field(&record, 0, line)?,
            target: field(&record, 1, line)?,
            model: field(&record, 2, line)?,
            mean_log_score: field(&record, 3, line)?,
            rank: field(&record, 4, line)?,
        });
    }
    Ok(rows)
}

fn opt_string<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_weights(rows: &[WeightTraceRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(WEIGHTS_HEADER)?;
    for r in rows {
        w.write_record([
            r.region.clone(),
            r.target.to_string(),
            r.scheme.clone(),
            r.season_week.to_string(),
            opt_string(r.uncertainty_sar),
            opt_string(r.uncertainty_kcde),
            opt_string(r.wili),
            r.component.to_string(),
            r.weight.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_weights(input: impl Read) -> Result<Vec<WeightTraceRow>> {
    let mut reader = csv::Reader::from_reader(input);
    check_header(&mut reader, &WEIGHTS_HEADER)?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        rows.push(WeightTraceRow {
            region: field(&record, 0, line)?,
            target: field(&record, 1, line)?,
            scheme: field(&record, 2, line)?,
            season_week: field(&record, 3, line)?,
            uncertainty_sar: optional(&record, 4, line)?,
            uncertainty_kcde: optional(&record, 5, line)?,
            wili: optional(&record, 6, line)?,
            component: ComponentId::new(field::<String>(&record, 7, line)?),
            weight: field(&record, 8, line)?,
        });
    }
    Ok(rows)
}

/// Writes `scores.csv`, `rankings.csv` and `weights.csv` into `dir`.
pub fn export_figure_data(dir: &Path, table: &ScoreTable, weights: &[WeightTraceRow]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_scores(table, std::fs::File::create(dir.join("scores.csv"))?)?;
    write_rankings(&seasonal_rank(table), std::fs::File::create(dir.join("rankings.csv"))?)?;
    write_weights(weights, std::fs::File::create(dir.join("weights.csv"))?)?;
    Ok(())
}
