//! Minute-level feature matrix: sensor columns plus engineered time,
//! home and outlet-proximity features, labeled for one prediction task.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::data::{Cohort, EventKind, Participant, TIMESTAMP_FORMAT};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geo::{in_home, minute_of_day, HomeLocation, OutletIndex};
use crate::matrix::Matrix;

/// Total feature columns (bias through numeric time).
pub const FEATURE_COUNT: usize = 35;
/// Width of the logistic-regression view, which omits numeric time.
pub const LR_FEATURE_COUNT: usize = 34;

pub const COL_BIAS: usize = 0;
pub const COL_SINCE_EATING: usize = 1;
pub const COL_SINCE_PURCHASING: usize = 2;
pub const COL_OUTLET_FIRST: usize = 3;
pub const COL_DIST_FOOD_BEVERAGE: usize = 3;
pub const COL_DIST_EATING: usize = 7;
pub const COL_SINCE_SEDENTARY: usize = 8;
pub const COL_SINCE_PA: usize = 9;
pub const COL_SINCE_MVPA: usize = 10;
pub const COL_ACTIVITY: usize = 11;
pub const COL_WEARING: usize = 18;
pub const COL_IN_HOME: usize = 19;
pub const COL_TIME_PATTERN: usize = 20;
pub const COL_DAY_FIRST: usize = 21;
pub const COL_RANGE_FIRST: usize = 28;
pub const COL_TIME: usize = 34;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "bias",
    "time since last eating",
    "time since last food purchasing",
    "distance from nearest FoodBeverage stores",
    "distance from nearest Health Care places",
    "distance from nearest Gasoline Station",
    "distance from nearest Drinks places",
    "distance from nearest Eating places",
    "time since last stationary activity",
    "time since last physical activity",
    "time since last moderate or vigorous activity",
    "activity",
    "axis2",
    "axis3",
    "distance",
    "speed",
    "vectorMag",
    "lux",
    "wearing",
    "eat at home",
    "time pattern",
    "Monday",
    "Tuesday",
    "Wednesday",
    "Thursday",
    "Friday",
    "Saturday",
    "Sunday",
    "0am-6am",
    "6am-10am",
    "10am-14pm",
    "14pm-17pm",
    "17pm-20pm",
    "20pm-23:59pm",
    "time",
];

/// Default cap for time-since counters, in minutes.
pub const DEFAULT_TIME_SINCE_CAP: u32 = 1440;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    Eating,
    Purchasing,
}

impl Problem {
    pub const ALL: [Problem; 2] = [Problem::Eating, Problem::Purchasing];

    pub fn as_str(self) -> &'static str {
        match self {
            Problem::Eating => "eating",
            Problem::Purchasing => "purchasing",
        }
    }

    pub fn event_kind(self) -> EventKind {
        match self {
            Problem::Eating => EventKind::Eating,
            Problem::Purchasing => EventKind::Purchasing,
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Problem {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "eating" => Ok(Problem::Eating),
            "purchasing" => Ok(Problem::Purchasing),
            other => Err(format!("unknown problem `{other}` (expected eating or purchasing)")),
        }
    }
}

pub const MAX_OFFSET: u32 = 4;

/// One prediction task: an event kind and how many minutes ahead it is
/// predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub problem: Problem,
    pub offset_minutes: u32,
}

impl TaskSpec {
    pub fn new(problem: Problem, offset_minutes: u32) -> Result<Self> {
        if offset_minutes > MAX_OFFSET {
            return Err(Error::config("offsets", format!("offset {offset_minutes} outside 0..={MAX_OFFSET}")));
        }
        Ok(Self {
            problem,
            offset_minutes,
        })
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/min{}", self.problem, self.offset_minutes)
    }
}

/// A clock interval in minutes since midnight with its reference midpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MealInterval {
    pub start_minute: u32,
    pub end_minute: u32,
}

impl MealInterval {
    pub fn midpoint(&self) -> f64 {
        (self.start_minute + self.end_minute) as f64 / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimePatternSpec {
    pub intervals: [MealInterval; 3],
}

impl Default for TimePatternSpec {
    /// 06:00-09:00, 11:00-14:00, 17:00-20:00.
    fn default() -> Self {
        let iv = |a: u32, b: u32| MealInterval {
            start_minute: a * 60,
            end_minute: b * 60,
        };
        Self {
            intervals: [iv(6, 9), iv(11, 14), iv(17, 20)],
        }
    }
}

impl TimePatternSpec {
    pub fn validate(&self) -> Result<()> {
        let mut prev_end = 0;
        for (i, iv) in self.intervals.iter().enumerate() {
            if iv.start_minute >= iv.end_minute || iv.end_minute > 24 * 60 {
                return Err(Error::config("features.time_pattern", format!("interval {i} is empty or past midnight")));
            }
            if i > 0 && iv.start_minute < prev_end {
                return Err(Error::config("features.time_pattern", "intervals must be ordered and non-overlapping"));
            }
            prev_end = iv.end_minute;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub time_since_cap: u32,
    pub time_pattern: TimePatternSpec,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            time_since_cap: DEFAULT_TIME_SINCE_CAP,
            time_pattern: TimePatternSpec::default(),
        }
    }
}

/// Index of the time-of-day range: [0,6), [6,10), [10,14), [14,17),
/// [17,20), [20,24).
pub fn time_range_index(t: NaiveTime) -> usize {
    match t.hour() {
        0..=5 => 0,
        6..=9 => 1,
        10..=13 => 2,
        14..=16 => 3,
        17..=19 => 4,
        _ => 5,
    }
}

pub fn time_range_onehot(t: NaiveTime) -> [f64; 6] {
    let mut out = [0.0; 6];
    out[time_range_index(t)] = 1.0;
    out
}

/// Minutes between the clock time and the nearest interval midpoint.
pub fn time_pattern(t: NaiveTime, spec: &TimePatternSpec) -> f64 {
    let m = minute_of_day(t) as f64;
    spec.intervals
        .iter()
        .map(|iv| (m - iv.midpoint()).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Hour of day as a fraction, e.g. 14:30 gives 14.5.
pub fn numeric_time(t: NaiveTime) -> f64 {
    t.hour() as f64 + t.minute() as f64 / 60.0
}

/// Minutes since the most recent event for each timestamp, 0 at event
/// minutes. Before the first event the counter runs from the first
/// timestamp. Every value is capped at `cap`.
pub fn time_since(timestamps: &[NaiveDateTime], events: &BTreeSet<NaiveDateTime>, cap: u32) -> Vec<f64> {
    time_since_impl(timestamps, events, cap, true)
}

/// Like [`time_since`], but an event at the current minute is not visible:
/// the counter measures from the latest event strictly before it.
pub fn time_since_strict(timestamps: &[NaiveDateTime], events: &BTreeSet<NaiveDateTime>, cap: u32) -> Vec<f64> {
    time_since_impl(timestamps, events, cap, false)
}

fn time_since_impl(
    timestamps: &[NaiveDateTime],
    events: &BTreeSet<NaiveDateTime>,
    cap: u32,
    include_current: bool,
) -> Vec<f64> {
    let Some(&first) = timestamps.first() else {
        return Vec::new();
    };
    let cap = cap as i64;
    let mut upcoming = events.range(..).peekable();
    let mut last: Option<NaiveDateTime> = None;
    timestamps
        .iter()
        .map(|&t| {
            // advance over events strictly before t
            while let Some(&&e) = upcoming.peek() {
                if e < t {
                    last = Some(e);
                    upcoming.next();
                } else {
                    break;
                }
            }
            let now = include_current && upcoming.peek().is_some_and(|&&e| e == t);
            let elapsed = if now {
                0
            } else {
                (t - last.unwrap_or(first)).num_minutes()
            };
            elapsed.min(cap) as f64
        })
        .collect()
}

/// Task-independent feature rows for one participant, plus the alternative
/// history columns used when the label sits on the current minute.
struct ParticipantBase {
    values: Vec<f64>,
    strict_history: Vec<[f64; 2]>,
}

fn participant_base(
    p: &Participant,
    outlets: &OutletIndex,
    home: Option<&HomeLocation>,
    cfg: &FeatureConfig,
) -> ParticipantBase {
    let n = p.records.len();
    let times: Vec<NaiveDateTime> = p.records.iter().map(|r| r.timestamp).collect();
    let cap = cfg.time_since_cap;
    let since = |kind| time_since(&times, p.events.get(kind), cap);
    let (eat, buy) = (since(EventKind::Eating), since(EventKind::Purchasing));
    let (sed, pa, mvpa) = (
        since(EventKind::SedentaryBout),
        since(EventKind::PaBout),
        since(EventKind::MvpaBout),
    );
    let eat_strict = time_since_strict(&times, &p.events.eating, cap);
    let buy_strict = time_since_strict(&times, &p.events.purchasing, cap);

    let mut values = Vec::with_capacity(n * FEATURE_COUNT);
    for (i, r) in p.records.iter().enumerate() {
        let pos = p.position(i);
        let clock = r.timestamp.time();
        let row_start = values.len();
        values.extend_from_slice(&[1.0, eat[i], buy[i]]);
        values.extend_from_slice(&outlets.distances(pos));
        values.extend_from_slice(&[sed[i], pa[i], mvpa[i]]);
        values.extend_from_slice(&[
            r.activity,
            r.axis2,
            r.axis3,
            r.gps_distance,
            r.gps_speed,
            r.vector_mag,
            r.lux,
            f64::from(u8::from(r.wearing)),
            f64::from(u8::from(in_home(pos, home))),
            time_pattern(clock, &cfg.time_pattern),
        ]);
        let mut day = [0.0; 7];
        day[r.timestamp.weekday().num_days_from_monday() as usize] = 1.0;
        values.extend_from_slice(&day);
        values.extend_from_slice(&time_range_onehot(clock));
        values.push(numeric_time(clock));
        debug_assert_eq!(values.len() - row_start, FEATURE_COUNT);
    }
    ParticipantBase {
        values,
        strict_history: eat_strict.into_iter().zip(buy_strict).map(|(a, b)| [a, b]).collect(),
    }
}

/// Labeled feature rows for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub task: TaskSpec,
    pub values: Matrix,
    pub labels: Vec<bool>,
    /// Index into `participants` for each row.
    pub groups: Vec<u32>,
    pub participants: Vec<String>,
    pub timestamps: Vec<NaiveDateTime>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn participant_of(&self, row: usize) -> &str {
        &self.participants[self.groups[row] as usize]
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    /// The 34-column view used by logistic regression (numeric time dropped).
    pub fn lr_view(&self) -> Matrix {
        self.values.leading_columns(LR_FEATURE_COUNT)
    }

    /// Checks every structural invariant of the layout. Returns the first
    /// violation found.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let n = self.len();
        if self.values.rows() != n || self.groups.len() != n || self.timestamps.len() != n {
            return Err("row counts disagree".into());
        }
        if self.values.cols() != FEATURE_COUNT {
            return Err(format!("expected {FEATURE_COUNT} columns, found {}", self.values.cols()));
        }
        for (i, row) in self.values.iter_rows().enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(format!("row {i} column {j} is not finite"));
            }
            if row[COL_BIAS] != 1.0 {
                return Err(format!("row {i}: bias column is {}", row[COL_BIAS]));
            }
            let days: f64 = row[COL_DAY_FIRST..COL_DAY_FIRST + 7].iter().sum();
            let ranges: f64 = row[COL_RANGE_FIRST..COL_RANGE_FIRST + 6].iter().sum();
            if days != 1.0 || ranges != 1.0 {
                return Err(format!("row {i}: one-hot groups sum to {days} and {ranges}"));
            }
            for j in [COL_WEARING, COL_IN_HOME] {
                if row[j] != 0.0 && row[j] != 1.0 {
                    return Err(format!("row {i} column {j} is not binary"));
                }
            }
            if !(0.0..24.0).contains(&row[COL_TIME]) {
                return Err(format!("row {i}: time column {}", row[COL_TIME]));
            }
            if !(0.0..=720.0).contains(&row[COL_TIME_PATTERN]) {
                return Err(format!("row {i}: time pattern {}", row[COL_TIME_PATTERN]));
            }
        }
        Ok(())
    }

    /// Writes `participant_id,timestamp,label,f0..f34`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        let header: Vec<String> = ["participant_id", "timestamp", "label"]
            .into_iter()
            .map(String::from)
            .chain((0..FEATURE_COUNT).map(|j| format!("f{j}")))
            .collect();
        writeln!(w, "{}", header.join(",")).map_err(io)?;
        for i in 0..self.len() {
            write!(
                w,
                "{},{},{}",
                self.participant_of(i),
                self.timestamps[i].format(TIMESTAMP_FORMAT),
                u8::from(self.labels[i])
            )
            .map_err(io)?;
            for v in self.values.row(i) {
                write!(w, ",{v}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Precomputes the task-independent columns once so that every task's
/// matrix is a cheap relabeling.
pub struct FeatureBuilder<'a> {
    cohort: &'a Cohort,
    bases: Vec<ParticipantBase>,
}

impl<'a> FeatureBuilder<'a> {
    /// `homes` is aligned with `cohort.participants`.
    pub fn new(
        cohort: &'a Cohort,
        outlets: &OutletIndex,
        homes: &[Option<HomeLocation>],
        cfg: &FeatureConfig,
        exec: Execution,
    ) -> Result<Self> {
        if homes.len() != cohort.participants.len() {
            return Err(Error::Validation(format!(
                "{} homes supplied for {} participants",
                homes.len(),
                cohort.participants.len()
            )));
        }
        cfg.time_pattern.validate()?;
        let bases = exec.map_range(cohort.participants.len(), |i| {
            participant_base(&cohort.participants[i], outlets, homes[i].as_ref(), cfg)
        });
        Ok(Self { cohort, bases })
    }

    /// Rows are labeled with the event status `offset` minutes ahead. Rows
    /// whose target minute was not recorded are dropped. With a zero offset
    /// the eating and purchasing history columns exclude the current minute,
    /// which is the label itself.
    pub fn matrix(&self, task: TaskSpec) -> Result<FeatureMatrix> {
        let k = task.offset_minutes as i64;
        let kind = task.problem.event_kind();
        let total: usize = self.cohort.participants.iter().map(|p| p.records.len()).sum();
        let mut data = Vec::with_capacity(total * FEATURE_COUNT);
        let mut labels = Vec::with_capacity(total);
        let mut groups = Vec::with_capacity(total);
        let mut timestamps = Vec::with_capacity(total);
        for (g, (p, base)) in self.cohort.participants.iter().zip(&self.bases).enumerate() {
            let events = p.events.get(kind);
            let times: Vec<NaiveDateTime> = p.records.iter().map(|r| r.timestamp).collect();
            for (i, &t) in times.iter().enumerate() {
                let target = t + Duration::minutes(k);
                let horizon = (i + k as usize + 1).min(times.len());
                if times[i..horizon].binary_search(&target).is_err() {
                    continue;
                }
                let start = data.len();
                data.extend_from_slice(&base.values[i * FEATURE_COUNT..(i + 1) * FEATURE_COUNT]);
                if k == 0 {
                    data[start + COL_SINCE_EATING] = base.strict_history[i][0];
                    data[start + COL_SINCE_PURCHASING] = base.strict_history[i][1];
                }
                if let Some(j) = data[start..].iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        row: labels.len(),
                        column: j,
                    });
                }
                labels.push(events.contains(&target));
                groups.push(g as u32);
                timestamps.push(t);
            }
        }
        let rows = labels.len();
        Ok(FeatureMatrix {
            task,
            values: Matrix::new(rows, FEATURE_COUNT, data),
            labels,
            groups,
            participants: self.cohort.participant_ids(),
            timestamps,
        })
    }
}

/// One-shot featurization of a single task.
pub fn build_matrix(
    cohort: &Cohort,
    outlets: &OutletIndex,
    homes: &[Option<HomeLocation>],
    task: TaskSpec,
    cfg: &FeatureConfig,
    exec: Execution,
) -> Result<FeatureMatrix> {
    FeatureBuilder::new(cohort, outlets, homes, cfg, exec)?.matrix(task)
}
