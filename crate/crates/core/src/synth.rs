//! Seeded synthetic cohorts with known homes and a known event rule.
//!
//! Each participant lives at a fixed home, may commute to a work place, and
//! visits nearby outlets. Every recorded day covers the 03:00-04:00 sleep
//! hour at home plus a daytime block starting at 07:00. Eating and
//! purchasing are drawn minute by minute from a two-level rate: high when
//! the minute satisfies the rule (close enough to an outlet of the rule's
//! category and, for eating, close enough to a meal midpoint), low
//! otherwise. The rule reads the same time-pattern and outlet-distance
//! values the feature builder computes, so its Bayes rate is checkable from
//! the feature matrix alone.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, NaiveTime};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    write_events, write_outlets, write_records, BoundingBox, EventKind, EventRow, LatLon, MinuteRecord, Outlet,
    OutletCategory,
};
use crate::error::{Error, Result};
use crate::features::{time_pattern, TimePatternSpec};
use crate::geo::{haversine, OutletIndex, EARTH_RADIUS_M};
use crate::seed::rng_for;

/// Activity-count cut points used to derive bouts.
pub const SEDENTARY_BELOW: f64 = 100.0;
pub const PA_AT_LEAST: f64 = 760.0;
pub const MVPA_AT_LEAST: f64 = 1952.0;
pub const MIN_BOUT_MINUTES: usize = 10;

const SLEEP_MINUTES: u32 = 60;
const DAY_START_HOUR: u32 = 7;

pub const RECORDS_FILE: &str = "records.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const OUTLETS_FILE: &str = "outlets.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutletCounts {
    pub food_beverage: usize,
    pub health_care: usize,
    pub gasoline: usize,
    pub drinking: usize,
    pub eating: usize,
}

impl Default for OutletCounts {
    fn default() -> Self {
        Self {
            food_beverage: 80,
            health_care: 60,
            gasoline: 60,
            drinking: 40,
            eating: 160,
        }
    }
}

impl OutletCounts {
    pub fn get(&self, c: OutletCategory) -> usize {
        match c {
            OutletCategory::FoodBeverage => self.food_beverage,
            OutletCategory::HealthCare => self.health_care,
            OutletCategory::Gasoline => self.gasoline,
            OutletCategory::Drinking => self.drinking,
            OutletCategory::Eating => self.eating,
        }
    }
}

/// Two-level per-minute event rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRule {
    pub outlet: OutletCategory,
    /// The rule holds within this distance of the nearest outlet.
    pub max_distance_m: f64,
    /// When set, the rule also needs time pattern at most this many minutes.
    pub max_time_pattern: Option<f64>,
    pub p_high: f64,
    pub p_low: f64,
}

impl EventRule {
    pub fn holds(&self, time_pattern_minutes: f64, outlet_distance_m: f64) -> bool {
        outlet_distance_m <= self.max_distance_m && self.max_time_pattern.is_none_or(|m| time_pattern_minutes <= m)
    }

    pub fn rate(&self, time_pattern_minutes: f64, outlet_distance_m: f64) -> f64 {
        if self.holds(time_pattern_minutes, outlet_distance_m) {
            self.p_high
        } else {
            self.p_low
        }
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn validate(&self, field: &str) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(prob(self.p_high) && prob(self.p_low)) {
            return Err(Error::config(field, "probabilities must lie in [0, 1]"));
        }
        if !(self.max_distance_m >= 0.0) || self.max_time_pattern.is_some_and(|m| !(m >= 0.0)) {
            return Err(Error::config(field, "thresholds must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_participants: usize,
    pub days: usize,
    /// Recorded minutes per day: the sleep hour plus a daytime block
    /// starting at 07:00.
    pub minutes_per_day: usize,
    pub start_date: NaiveDate,
    pub bbox: BoundingBox,
    pub outlets: OutletCounts,
    /// Sleep-hour points fall within this radius of the true home.
    pub home_jitter_m: f64,
    /// Positional noise around visited places.
    pub visit_jitter_m: f64,
    pub eating: EventRule,
    pub purchasing: EventRule,
    /// Chance of eating out in each meal window.
    pub meal_visit_prob: f64,
    /// Chance per day of an eating-outlet visit outside meal times.
    pub extra_eating_visit_prob: f64,
    /// Chance per day of a food-store visit.
    pub store_visit_prob: f64,
    pub work_day_prob: f64,
    pub walk_prob: f64,
    pub missing_gps_fraction: f64,
    /// Rows displaced one degree north, outside the bounding box.
    pub outlier_fraction: f64,
    pub nonwear_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_participants: 81,
            days: 7,
            minutes_per_day: 840,
            start_date: NaiveDate::from_ymd_opt(2016, 3, 7).unwrap(),
            bbox: default_bbox(),
            outlets: OutletCounts::default(),
            home_jitter_m: 30.0,
            visit_jitter_m: 15.0,
            eating: EventRule {
                outlet: OutletCategory::Eating,
                max_distance_m: 75.0,
                max_time_pattern: Some(45.0),
                p_high: 0.3,
                p_low: 0.001,
            },
            purchasing: EventRule {
                outlet: OutletCategory::FoodBeverage,
                max_distance_m: 75.0,
                max_time_pattern: None,
                p_high: 0.3,
                p_low: 0.0003,
            },
            meal_visit_prob: 0.4,
            extra_eating_visit_prob: 1.0,
            store_visit_prob: 0.5,
            work_day_prob: 0.7,
            walk_prob: 0.3,
            missing_gps_fraction: 0.002,
            outlier_fraction: 0.001,
            nonwear_fraction: 0.01,
        }
    }
}

/// The 0.5 by 0.5 degree area synthetic cohorts live in.
pub fn default_bbox() -> BoundingBox {
    BoundingBox {
        min_lat: 32.5,
        max_lat: 33.0,
        min_lon: -117.3,
        max_lon: -116.8,
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_participants == 0 {
            return Err(Error::config("synth.n_participants", "must be at least 1"));
        }
        if self.days == 0 {
            return Err(Error::config("synth.days", "must be at least 1"));
        }
        let max_minutes = SLEEP_MINUTES as usize + (24 - DAY_START_HOUR as usize) * 60;
        if self.minutes_per_day <= SLEEP_MINUTES as usize || self.minutes_per_day > max_minutes {
            return Err(Error::config(
                "synth.minutes_per_day",
                format!("must lie in {}..={max_minutes}", SLEEP_MINUTES + 1),
            ));
        }
        self.bbox.validate()?;
        for c in OutletCategory::ALL {
            if self.outlets.get(c) == 0 {
                return Err(Error::config("synth.outlets", format!("category {} needs at least one outlet", c.code())));
            }
        }
        self.eating.validate("synth.eating")?;
        self.purchasing.validate("synth.purchasing")?;
        for (name, v) in [
            ("synth.meal_visit_prob", self.meal_visit_prob),
            ("synth.extra_eating_visit_prob", self.extra_eating_visit_prob),
            ("synth.store_visit_prob", self.store_visit_prob),
            ("synth.work_day_prob", self.work_day_prob),
            ("synth.walk_prob", self.walk_prob),
            ("synth.missing_gps_fraction", self.missing_gps_fraction),
            ("synth.outlier_fraction", self.outlier_fraction),
            ("synth.nonwear_fraction", self.nonwear_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(name, "must lie in [0, 1]"));
            }
        }
        if !(self.home_jitter_m >= 0.0 && self.visit_jitter_m >= 0.0) {
            return Err(Error::config("synth.home_jitter_m", "jitter radii must be non-negative"));
        }
        Ok(())
    }

    pub fn row_count(&self) -> usize {
        self.n_participants * self.days * self.minutes_per_day
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueHome {
    pub participant_id: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowRef {
    pub participant_id: String,
    #[serde(with = "timestamp_format")]
    pub timestamp: NaiveDateTime,
}

mod timestamp_format {
    use chrono::NaiveDateTime;
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::data::TIMESTAMP_FORMAT;

    pub fn serialize<S: Serializer>(t: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.format(TIMESTAMP_FORMAT).to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let text = String::deserialize(d)?;
        NaiveDateTime::parse_from_str(&text, TIMESTAMP_FORMAT).map_err(serde::de::Error::custom)
    }
}

/// What the generator planted, written next to the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub homes: Vec<TrueHome>,
    pub outliers: Vec<RowRef>,
    pub missing_gps: Vec<RowRef>,
    pub event_counts: BTreeMap<String, usize>,
    /// Rows where each rule held, and how many events they received.
    pub rule_rows: BTreeMap<String, (usize, usize)>,
    pub bout_cut_points: BoutCutPoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoutCutPoints {
    pub sedentary_below: f64,
    pub pa_at_least: f64,
    pub mvpa_at_least: f64,
    pub min_minutes: usize,
}

impl GroundTruth {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
pub struct SynthCohort {
    pub records: Vec<MinuteRecord>,
    pub events: Vec<EventRow>,
    pub outlets: Vec<Outlet>,
    pub truth: GroundTruth,
}

impl SynthCohort {
    /// Writes the three input CSVs and the ground truth into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.write_to(
            &dir.join(RECORDS_FILE),
            &dir.join(EVENTS_FILE),
            &dir.join(OUTLETS_FILE),
            &dir.join(GROUND_TRUTH_FILE),
        )
    }

    pub fn write_to(&self, records: &Path, events: &Path, outlets: &Path, truth: &Path) -> Result<()> {
        for path in [records, events, outlets, truth] {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        write_records(records, &self.records)?;
        write_events(events, &self.events)?;
        write_outlets(outlets, &self.outlets)?;
        let text = serde_json::to_string_pretty(&self.truth)? + "\n";
        std::fs::write(truth, text).map_err(|e| Error::io(truth, e))
    }
}

/// Moves `p` by the given metres north and east.
fn offset(p: LatLon, north_m: f64, east_m: f64) -> LatLon {
    let deg = 180.0 / (PI * EARTH_RADIUS_M);
    LatLon::new(p.lat + north_m * deg, p.lon + east_m * deg / p.lat.to_radians().cos())
}

/// Uniform point in a disc of the given radius around `p`.
fn jitter(rng: &mut ChaCha8Rng, p: LatLon, radius_m: f64) -> LatLon {
    let r = radius_m * rng.random::<f64>().sqrt();
    let theta = 2.0 * PI * rng.random::<f64>();
    offset(p, r * theta.sin(), r * theta.cos())
}

fn uniform_in(rng: &mut ChaCha8Rng, bbox: &BoundingBox, margin_deg: f64) -> LatLon {
    LatLon::new(
        rng.random_range(bbox.min_lat + margin_deg..bbox.max_lat - margin_deg),
        rng.random_range(bbox.min_lon + margin_deg..bbox.max_lon - margin_deg),
    )
}

fn clamp_into(p: LatLon, bbox: &BoundingBox, margin_deg: f64) -> LatLon {
    LatLon::new(
        p.lat.clamp(bbox.min_lat + margin_deg, bbox.max_lat - margin_deg),
        p.lon.clamp(bbox.min_lon + margin_deg, bbox.max_lon - margin_deg),
    )
}

/// The `k` outlets of a category closest to `p`.
fn nearest_k(outlets: &[Outlet], category: OutletCategory, p: LatLon, k: usize) -> Vec<LatLon> {
    let mut c: Vec<(f64, LatLon)> = outlets
        .iter()
        .filter(|o| o.category == category)
        .map(|o| (haversine(p, o.position), o.position))
        .collect();
    c.sort_by(|a, b| a.0.total_cmp(&b.0));
    c.into_iter().take(k).map(|(_, p)| p).collect()
}

#[derive(Clone, Copy, PartialEq)]
enum Activity {
    Still,
    Light,
    Walk,
}

/// One planned minute of a day.
#[derive(Clone, Copy)]
struct Slot {
    place: LatLon,
    jitter_m: f64,
    activity: Activity,
    outdoors: bool,
}

fn generate_outlets(cfg: &SynthConfig) -> Vec<Outlet> {
    let mut rng = rng_for(cfg.seed, &["outlets"]);
    let mut out = Vec::new();
    for category in OutletCategory::ALL {
        for _ in 0..cfg.outlets.get(category) {
            out.push(Outlet {
                category,
                position: uniform_in(&mut rng, &cfg.bbox, 0.0),
            });
        }
    }
    out
}

struct ParticipantOutput {
    records: Vec<MinuteRecord>,
    events: Vec<EventRow>,
    home: TrueHome,
    outliers: Vec<RowRef>,
    missing: Vec<RowRef>,
    rule_rows: [(usize, usize); 2],
}

/// Plans the daytime block of one day as a slot per minute.
fn plan_day(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    home: LatLon,
    work: LatLon,
    near_home: &Places,
    near_work: &Places,
    day_len: usize,
) -> Vec<Slot> {
    let at = |place: LatLon, jitter_m: f64| Slot {
        place,
        jitter_m,
        activity: Activity::Still,
        outdoors: false,
    };
    let works = rng.random_bool(cfg.work_day_prob);
    // minute index i is 07:00 + i
    let mut slots: Vec<Slot> = (0..day_len)
        .map(|i| {
            let hour = DAY_START_HOUR as usize + i / 60;
            if works && (9..17).contains(&hour) {
                at(work, cfg.visit_jitter_m)
            } else {
                at(home, cfg.home_jitter_m)
            }
        })
        .collect();
    let anchor_places = |i: usize| {
        let hour = DAY_START_HOUR as usize + i / 60;
        if works && (9..17).contains(&hour) {
            near_work
        } else {
            near_home
        }
    };
    let visit = |slots: &mut Vec<Slot>, start: i64, len: i64, place: LatLon| {
        for i in start.max(0)..(start + len).min(day_len as i64) {
            slots[i as usize] = at(place, cfg.visit_jitter_m);
        }
    };

    // meal midpoints at 07:30, 12:30 and 18:30, minutes after 07:00
    for mid in [30i64, 330, 690] {
        if rng.random_bool(cfg.meal_visit_prob) {
            let start = mid - rng.random_range(10..40);
            let len = rng.random_range(30..50);
            let places = anchor_places(start.max(0) as usize);
            let place = *places.eating.choose(rng).expect("eating outlets exist");
            visit(&mut slots, start, len, place);
        }
    }
    if rng.random_bool(cfg.extra_eating_visit_prob) {
        // mid-morning or mid-afternoon, away from meal midpoints
        let start = if rng.random_bool(0.5) {
            rng.random_range(150..230)
        } else {
            rng.random_range(450..560)
        };
        let len = rng.random_range(20..40);
        let place = *anchor_places(start as usize).eating.choose(rng).expect("eating outlets exist");
        visit(&mut slots, start, len, place);
    }
    if rng.random_bool(cfg.store_visit_prob) {
        let start = rng.random_range(0..day_len as i64);
        let len = rng.random_range(10..20);
        let place = *anchor_places(start as usize).stores.choose(rng).expect("food stores exist");
        visit(&mut slots, start, len, place);
    }
    if rng.random_bool(cfg.walk_prob) {
        let start = rng.random_range(0..day_len);
        let len = rng.random_range(10..40);
        let from = slots[start].place;
        let heading = 2.0 * PI * rng.random::<f64>();
        for k in 0..len.min(day_len - start) {
            // about 80 m per minute away from the starting place
            let d = 80.0 * k as f64;
            slots[start + k] = Slot {
                place: offset(from, d * heading.sin(), d * heading.cos()),
                jitter_m: 5.0,
                activity: Activity::Walk,
                outdoors: true,
            };
        }
    }
    for _ in 0..rng.random_range(0..3) {
        let start = rng.random_range(0..day_len);
        for s in slots.iter_mut().skip(start).take(rng.random_range(10..20)) {
            if s.activity == Activity::Still {
                s.activity = Activity::Light;
            }
        }
    }
    slots
}

struct Places {
    eating: Vec<LatLon>,
    stores: Vec<LatLon>,
}

fn generate_participant(
    cfg: &SynthConfig,
    index: usize,
    outlets: &[Outlet],
    outlet_index: &OutletIndex,
    spec: &TimePatternSpec,
) -> ParticipantOutput {
    let id = format!("P{:03}", index + 1);
    let mut rng = rng_for(cfg.seed, &["participant", &id]);
    let margin = 0.01;
    let home = uniform_in(&mut rng, &cfg.bbox, margin);
    let work = clamp_into(
        offset(home, rng.random_range(-5000.0..5000.0), rng.random_range(-5000.0..5000.0)),
        &cfg.bbox,
        margin,
    );
    let places = |p: LatLon| Places {
        eating: nearest_k(outlets, OutletCategory::Eating, p, 4),
        stores: nearest_k(outlets, OutletCategory::FoodBeverage, p, 3),
    };
    let near_home = places(home);
    let near_work = places(work);
    let day_len = cfg.minutes_per_day - SLEEP_MINUTES as usize;
    let rules = [(EventKind::Eating, cfg.eating), (EventKind::Purchasing, cfg.purchasing)];

    let mut out = ParticipantOutput {
        records: Vec::with_capacity(cfg.days * cfg.minutes_per_day),
        events: Vec::new(),
        home: TrueHome {
            participant_id: id.clone(),
            lat: home.lat,
            lon: home.lon,
        },
        outliers: Vec::new(),
        missing: Vec::new(),
        rule_rows: [(0, 0); 2],
    };
    let mut prev: Option<(NaiveDateTime, LatLon)> = None;
    for day in 0..cfg.days {
        let date = cfg.start_date + Duration::days(day as i64);
        let sleep_start = date.and_time(NaiveTime::from_hms_opt(3, 0, 0).unwrap());
        let day_start = date.and_time(NaiveTime::from_hms_opt(DAY_START_HOUR, 0, 0).unwrap());
        let sleep = Slot {
            place: home,
            jitter_m: cfg.home_jitter_m,
            activity: Activity::Still,
            outdoors: false,
        };
        let plan = plan_day(&mut rng, cfg, home, work, &near_home, &near_work, day_len);
        let minutes = (0..SLEEP_MINUTES as i64)
            .map(|m| (sleep_start + Duration::minutes(m), sleep, true))
            .chain(plan.into_iter().enumerate().map(|(i, s)| (day_start + Duration::minutes(i as i64), s, false)));
        for (timestamp, slot, asleep) in minutes {
            let mut position = jitter(&mut rng, slot.place, slot.jitter_m);
            let (activity, lux) = match (asleep, slot.activity) {
                (true, _) => (rng.random_range(0.0..5.0f64).floor(), rng.random_range(0.0..5.0)),
                (false, Activity::Walk) => (rng.random_range(2000.0..5000.0f64).floor(), rng.random_range(1000.0..20000.0)),
                (false, Activity::Light) => (rng.random_range(800.0..1900.0f64).floor(), rng.random_range(100.0..800.0)),
                (false, Activity::Still) => {
                    let a = if rng.random_bool(0.7) {
                        rng.random_range(0.0..SEDENTARY_BELOW)
                    } else {
                        rng.random_range(SEDENTARY_BELOW..700.0)
                    };
                    let lux = if slot.outdoors {
                        rng.random_range(1000.0..20000.0)
                    } else {
                        rng.random_range(50.0..500.0)
                    };
                    (a.floor(), lux)
                }
            };
            let axis2 = (activity * rng.random_range(0.3..0.9)).floor();
            let axis3 = (activity * rng.random_range(0.3..0.9)).floor();
            let vector_mag = (activity * activity + axis2 * axis2 + axis3 * axis3).sqrt();
            let wearing = !rng.random_bool(cfg.nonwear_fraction);

            let row = RowRef {
                participant_id: id.clone(),
                timestamp,
            };
            let missing = !asleep && rng.random_bool(cfg.missing_gps_fraction);
            let outlier = !asleep && !missing && rng.random_bool(cfg.outlier_fraction);
            if outlier {
                position = offset(position, 111_195.0, 0.0);
                out.outliers.push(row);
            } else if missing {
                out.missing.push(row);
            }

            let (gps_distance, gps_speed) = match prev {
                Some((t, p)) if !missing && timestamp - t == Duration::minutes(1) => {
                    let d = haversine(p, position);
                    (d, d * 60.0 / 1000.0)
                }
                _ => (0.0, 0.0),
            };
            prev = (!missing).then_some((timestamp, position));

            if !missing && !outlier {
                let tp = time_pattern(timestamp.time(), spec);
                for (k, (kind, rule)) in rules.iter().enumerate() {
                    let held = rule.holds(tp, outlet_index.nearest(position, rule.outlet));
                    let fired = rng.random_bool(if held { rule.p_high } else { rule.p_low });
                    if held {
                        out.rule_rows[k].0 += 1;
                        out.rule_rows[k].1 += fired as usize;
                    }
                    if fired {
                        out.events.push(EventRow {
                            participant_id: id.clone(),
                            timestamp,
                            kind: *kind,
                        });
                    }
                }
            }

            out.records.push(MinuteRecord {
                participant_id: id.clone(),
                timestamp,
                position: (!missing).then_some(position),
                gps_distance,
                gps_speed,
                activity,
                axis2,
                axis3,
                vector_mag,
                lux,
                wearing,
                day_of_week: timestamp.weekday(),
            });
        }
    }
    out.events.extend(bout_events(&out.records));
    out
}

/// Start minute of every run of at least [`MIN_BOUT_MINUTES`] consecutive
/// minutes meeting each intensity threshold.
pub fn bout_events(records: &[MinuteRecord]) -> Vec<EventRow> {
    type Test = (EventKind, fn(f64) -> bool);
    let tests: [Test; 3] = [
        (EventKind::SedentaryBout, |a| a < SEDENTARY_BELOW),
        (EventKind::PaBout, |a| a >= PA_AT_LEAST),
        (EventKind::MvpaBout, |a| a >= MVPA_AT_LEAST),
    ];
    let mut out = Vec::new();
    for (kind, test) in tests {
        let mut run_start: Option<usize> = None;
        for i in 0..=records.len() {
            let continues = i < records.len()
                && test(records[i].activity)
                && (i == 0
                    || run_start.is_none()
                    || (records[i].participant_id == records[i - 1].participant_id
                        && records[i].timestamp - records[i - 1].timestamp == Duration::minutes(1)));
            match (run_start, continues) {
                (None, true) => run_start = Some(i),
                (Some(s), false) => {
                    if i - s >= MIN_BOUT_MINUTES {
                        out.push(EventRow {
                            participant_id: records[s].participant_id.clone(),
                            timestamp: records[s].timestamp,
                            kind,
                        });
                    }
                    run_start = (i < records.len() && test(records[i].activity)).then_some(i);
                }
                _ => {}
            }
        }
    }
    out
}

/// Generates a full cohort. Output depends only on the configuration.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCohort> {
    cfg.validate()?;
    let outlets = generate_outlets(cfg);
    let index = OutletIndex::new(&outlets);
    let spec = TimePatternSpec::default();
    let mut records = Vec::with_capacity(cfg.row_count());
    let mut events = Vec::new();
    let mut homes = Vec::new();
    let mut outliers = Vec::new();
    let mut missing = Vec::new();
    let mut rule_rows = [(0usize, 0usize); 2];
    for i in 0..cfg.n_participants {
        let p = generate_participant(cfg, i, &outlets, &index, &spec);
        records.extend(p.records);
        events.extend(p.events);
        homes.push(p.home);
        outliers.extend(p.outliers);
        missing.extend(p.missing);
        for (total, part) in rule_rows.iter_mut().zip(p.rule_rows) {
            total.0 += part.0;
            total.1 += part.1;
        }
    }
    events.sort_by(|a, b| {
        (&a.participant_id, a.timestamp, a.kind.as_str()).cmp(&(&b.participant_id, b.timestamp, b.kind.as_str()))
    });
    let mut event_counts = BTreeMap::new();
    for e in &events {
        *event_counts.entry(e.kind.as_str().to_string()).or_insert(0) += 1;
    }
    let truth = GroundTruth {
        config: cfg.clone(),
        homes,
        outliers,
        missing_gps: missing,
        event_counts,
        rule_rows: BTreeMap::from([
            ("eating".to_string(), rule_rows[0]),
            ("purchasing".to_string(), rule_rows[1]),
        ]),
        bout_cut_points: BoutCutPoints {
            sedentary_below: SEDENTARY_BELOW,
            pa_at_least: PA_AT_LEAST,
            mvpa_at_least: MVPA_AT_LEAST,
            min_minutes: MIN_BOUT_MINUTES,
        },
    };
    Ok(SynthCohort {
        records,
        events,
        outlets,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Cohort;

    fn small() -> SynthConfig {
        SynthConfig {
            n_participants: 3,
            days: 2,
            ..Default::default()
        }
    }

    #[test]
    fn row_count_and_ingestible() {
        let cfg = small();
        let s = generate(&cfg).unwrap();
        assert_eq!(s.records.len(), 3 * 2 * 840);
        let cohort = Cohort::from_rows(s.records.clone(), s.events.clone()).unwrap();
        assert_eq!(cohort.participants.len(), 3);
        assert_eq!(cohort.dropped_no_gps, s.truth.missing_gps.len());
        let clean = cohort.drop_out_of_bounds(&cfg.bbox);
        assert_eq!(clean.record_count(), cohort.record_count() - s.truth.outliers.len());
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.events, b.events);
        let c = generate(&SynthConfig { seed: 7, ..small() }).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn sleep_points_stay_near_home() {
        let s = generate(&small()).unwrap();
        for r in s.records.iter().filter(|r| r.timestamp.time() < NaiveTime::from_hms_opt(4, 0, 0).unwrap()) {
            let h = s.truth.homes.iter().find(|h| h.participant_id == r.participant_id).unwrap();
            assert!(haversine(r.position.unwrap(), LatLon::new(h.lat, h.lon)) <= 30.0 + 1e-6);
        }
    }

    #[test]
    fn bouts_need_ten_consecutive_minutes() {
        let base = MinuteRecord {
            participant_id: "a".into(),
            timestamp: NaiveDate::from_ymd_opt(2016, 3, 7).unwrap().and_hms_opt(7, 0, 0).unwrap(),
            position: None,
            gps_distance: 0.0,
            gps_speed: 0.0,
            activity: 50.0,
            axis2: 0.0,
            axis3: 0.0,
            vector_mag: 0.0,
            lux: 0.0,
            wearing: true,
            day_of_week: chrono::Weekday::Mon,
        };
        let rows: Vec<MinuteRecord> = (0..25)
            .map(|i| MinuteRecord {
                timestamp: base.timestamp + Duration::minutes(i),
                activity: if i == 9 { 3000.0 } else { 50.0 },
                ..base.clone()
            })
            .collect();
        let bouts: Vec<_> = bout_events(&rows).into_iter().filter(|e| e.kind == EventKind::SedentaryBout).collect();
        // minutes 0-8 are too short, 10-24 qualify
        assert_eq!(bouts.len(), 1);
        assert_eq!(bouts[0].timestamp, base.timestamp + Duration::minutes(10));
    }

    #[test]
    fn config_validation_names_field() {
        let bad = SynthConfig {
            meal_visit_prob: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("synth.meal_visit_prob"));
    }
}
