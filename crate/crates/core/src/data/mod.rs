//! Cohort schema: minute records, event timelines, retail outlets.

mod io;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    read_events, read_outlets, read_records, write_events, write_outlets, write_records,
    EventRow, EVENTS_HEADER, OUTLETS_HEADER, RECORDS_HEADER,
};

/// Timestamp format used in every CSV file.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

/// One participant-minute of sensor and context columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MinuteRecord {
    pub participant_id: String,
    pub timestamp: NaiveDateTime,
    /// `None` when the GPS fix is absent.
    pub position: Option<LatLon>,
    /// Meters from the previous point.
    pub gps_distance: f64,
    /// km/h.
    pub gps_speed: f64,
    /// Accelerometer counts per minute, first axis.
    pub activity: f64,
    pub axis2: f64,
    pub axis3: f64,
    pub vector_mag: f64,
    pub lux: f64,
    pub wearing: bool,
    pub day_of_week: Weekday,
}

impl MinuteRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.timestamp.second() != 0 || self.timestamp.nanosecond() != 0 {
            return Err(format!("timestamp {} is not on a minute boundary", self.timestamp));
        }
        if let Some(p) = self.position {
            if !(-90.0..=90.0).contains(&p.lat) {
                return Err(format!("lat {} out of range [-90, 90]", p.lat));
            }
            if !(-180.0..=180.0).contains(&p.lon) {
                return Err(format!("lon {} out of range [-180, 180]", p.lon));
            }
        }
        let channels = [
            ("gps_distance", self.gps_distance),
            ("gps_speed", self.gps_speed),
            ("activity", self.activity),
            ("axis2", self.axis2),
            ("axis3", self.axis3),
            ("vector_mag", self.vector_mag),
            ("lux", self.lux),
        ];
        for (name, v) in channels {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.day_of_week != self.timestamp.weekday() {
            return Err(format!(
                "day_of_week {:?} disagrees with timestamp {} ({:?})",
                self.day_of_week,
                self.timestamp,
                self.timestamp.weekday()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Eating,
    Purchasing,
    SedentaryBout,
    PaBout,
    MvpaBout,
}

impl EventKind {
    pub const ALL: [EventKind; 5] = [
        EventKind::Eating,
        EventKind::Purchasing,
        EventKind::SedentaryBout,
        EventKind::PaBout,
        EventKind::MvpaBout,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Eating => "eating",
            EventKind::Purchasing => "purchasing",
            EventKind::SedentaryBout => "sedentary_bout",
            EventKind::PaBout => "pa_bout",
            EventKind::MvpaBout => "mvpa_bout",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown event_type `{s}`"))
    }
}

/// Per-participant event minutes, one set per event kind.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventTimeline {
    pub participant_id: String,
    pub eating: BTreeSet<NaiveDateTime>,
    pub purchasing: BTreeSet<NaiveDateTime>,
    pub sedentary_bout: BTreeSet<NaiveDateTime>,
    pub pa_bout: BTreeSet<NaiveDateTime>,
    pub mvpa_bout: BTreeSet<NaiveDateTime>,
}

impl EventTimeline {
    pub fn new(participant_id: impl Into<String>) -> Self {
        Self {
            participant_id: participant_id.into(),
            ..Default::default()
        }
    }

    pub fn get(&self, kind: EventKind) -> &BTreeSet<NaiveDateTime> {
        match kind {
            EventKind::Eating => &self.eating,
            EventKind::Purchasing => &self.purchasing,
            EventKind::SedentaryBout => &self.sedentary_bout,
            EventKind::PaBout => &self.pa_bout,
            EventKind::MvpaBout => &self.mvpa_bout,
        }
    }

    pub fn get_mut(&mut self, kind: EventKind) -> &mut BTreeSet<NaiveDateTime> {
        match kind {
            EventKind::Eating => &mut self.eating,
            EventKind::Purchasing => &mut self.purchasing,
            EventKind::SedentaryBout => &mut self.sedentary_bout,
            EventKind::PaBout => &mut self.pa_bout,
            EventKind::MvpaBout => &mut self.mvpa_bout,
        }
    }

    pub fn len(&self) -> usize {
        EventKind::ALL.iter().map(|&k| self.get(k).len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn retain(&mut self, mut keep: impl FnMut(&NaiveDateTime) -> bool) -> usize {
        let before = self.len();
        for kind in EventKind::ALL {
            self.get_mut(kind).retain(|t| keep(t));
        }
        before - self.len()
    }
}

/// The five outlet categories, in feature-column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OutletCategory {
    FoodBeverage,
    HealthCare,
    Gasoline,
    Drinking,
    Eating,
}

impl OutletCategory {
    pub const ALL: [OutletCategory; 5] = [
        OutletCategory::FoodBeverage,
        OutletCategory::HealthCare,
        OutletCategory::Gasoline,
        OutletCategory::Drinking,
        OutletCategory::Eating,
    ];

    /// NAICS code.
    pub fn code(self) -> u32 {
        match self {
            OutletCategory::FoodBeverage => 445,
            OutletCategory::HealthCare => 446,
            OutletCategory::Gasoline => 447,
            OutletCategory::Drinking => 7224,
            OutletCategory::Eating => 7225,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.code() == code)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outlet {
    pub category: OutletCategory,
    pub position: LatLon,
}

/// Inclusive latitude/longitude rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    pub fn new(min_lat: f64, max_lat: f64, min_lon: f64, max_lon: f64) -> Result<Self> {
        let bbox = Self {
            min_lat,
            max_lat,
            min_lon,
            max_lon,
        };
        bbox.validate()?;
        Ok(bbox)
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail too
    pub fn validate(&self) -> Result<()> {
        if !(self.min_lat < self.max_lat) {
            return Err(Error::config("bbox", "min_lat must be < max_lat"));
        }
        if !(self.min_lon < self.max_lon) {
            return Err(Error::config("bbox", "min_lon must be < max_lon"));
        }
        Ok(())
    }

    pub fn contains(&self, p: LatLon) -> bool {
        p.lat >= self.min_lat && p.lat <= self.max_lat && p.lon >= self.min_lon && p.lon <= self.max_lon
    }
}

/// One participant's time-ordered minutes and their events.
#[derive(Debug, Clone, PartialEq)]
pub struct Participant {
    pub id: String,
    pub records: Vec<MinuteRecord>,
    pub events: EventTimeline,
}

impl Participant {
    /// Position of a record that survived ingestion. Ingestion drops every
    /// record without coordinates, so this never fails for cohort members.
    pub fn position(&self, i: usize) -> LatLon {
        self.records[i]
            .position
            .expect("cohort records always carry coordinates")
    }
}

/// Validated cohort, participants ordered by id and records by time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cohort {
    pub participants: Vec<Participant>,
    /// Rows dropped at ingestion for missing coordinates.
    pub dropped_no_gps: usize,
    /// Event rows that pointed at one of those dropped minutes.
    pub dropped_events: usize,
}

impl Cohort {
    /// Builds a cohort from raw rows, enforcing every schema invariant.
    pub fn from_rows(records: Vec<MinuteRecord>, events: Vec<EventRow>) -> Result<Self> {
        let mut by_participant: BTreeMap<String, Vec<MinuteRecord>> = BTreeMap::new();
        for r in records {
            r.validate()
                .map_err(|m| Error::Validation(format!("participant {} at {}: {m}", r.participant_id, r.timestamp)))?;
            by_participant.entry(r.participant_id.clone()).or_default().push(r);
        }

        let mut dropped_no_gps = 0;
        let mut missing_gps: BTreeSet<(String, NaiveDateTime)> = BTreeSet::new();
        let mut participants = Vec::with_capacity(by_participant.len());
        for (id, mut rows) in by_participant {
            rows.sort_by_key(|r| r.timestamp);
            if let Some(w) = rows.windows(2).find(|w| w[0].timestamp == w[1].timestamp) {
                return Err(Error::Validation(format!(
                    "duplicate minute for participant {id} at {}",
                    w[0].timestamp.format(TIMESTAMP_FORMAT)
                )));
            }
            let before = rows.len();
            rows.retain(|r| {
                if r.position.is_none() {
                    missing_gps.insert((id.clone(), r.timestamp));
                    false
                } else {
                    true
                }
            });
            dropped_no_gps += before - rows.len();
            participants.push(Participant {
                events: EventTimeline::new(id.clone()),
                id,
                records: rows,
            });
        }

        let mut dropped_events = 0;
        for ev in events {
            let Ok(pos) = participants.binary_search_by(|p| p.id.as_str().cmp(&ev.participant_id)) else {
                return Err(Error::Validation(format!(
                    "event {} for participant {} at {} has no matching record",
                    ev.kind,
                    ev.participant_id,
                    ev.timestamp.format(TIMESTAMP_FORMAT)
                )));
            };
            let p = &mut participants[pos];
            if p.records.binary_search_by_key(&ev.timestamp, |r| r.timestamp).is_ok() {
                p.events.get_mut(ev.kind).insert(ev.timestamp);
            } else if missing_gps.contains(&(ev.participant_id.clone(), ev.timestamp)) {
                dropped_events += 1;
            } else {
                return Err(Error::Validation(format!(
                    "event {} for participant {} at {} has no matching record",
                    ev.kind,
                    ev.participant_id,
                    ev.timestamp.format(TIMESTAMP_FORMAT)
                )));
            }
        }
        if dropped_no_gps > 0 {
            log::info!("dropped {dropped_no_gps} minutes without GPS coordinates ({dropped_events} events)");
        }
        // participants whose every minute lacked GPS carry nothing forward
        participants.retain(|p| !p.records.is_empty());

        Ok(Self {
            participants,
            dropped_no_gps,
            dropped_events,
        })
    }

    pub fn participant(&self, id: &str) -> Option<&Participant> {
        self.participants
            .binary_search_by(|p| p.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.participants[i])
    }

    pub fn participant_ids(&self) -> Vec<String> {
        self.participants.iter().map(|p| p.id.clone()).collect()
    }

    pub fn record_count(&self) -> usize {
        self.participants.iter().map(|p| p.records.len()).sum()
    }

    pub fn records(&self) -> impl Iterator<Item = &MinuteRecord> {
        self.participants.iter().flat_map(|p| p.records.iter())
    }

    pub fn event_rows(&self) -> Vec<EventRow> {
        let mut rows = Vec::new();
        for p in &self.participants {
            for kind in EventKind::ALL {
                for &t in p.events.get(kind) {
                    rows.push(EventRow {
                        participant_id: p.id.clone(),
                        timestamp: t,
                        kind,
                    });
                }
            }
        }
        rows.sort_by(|a, b| (&a.participant_id, a.timestamp, a.kind).cmp(&(&b.participant_id, b.timestamp, b.kind)));
        rows
    }

    /// Removes every minute outside `bbox`, together with its events.
    /// Participants left without minutes are removed.
    pub fn drop_out_of_bounds(&self, bbox: &BoundingBox) -> Cohort {
        let mut out = Vec::with_capacity(self.participants.len());
        let mut removed = 0usize;
        for p in &self.participants {
            let records: Vec<MinuteRecord> = p
                .records
                .iter()
                .filter(|r| r.position.is_some_and(|pos| bbox.contains(pos)))
                .cloned()
                .collect();
            removed += p.records.len() - records.len();
            if records.is_empty() {
                continue;
            }
            let mut events = p.events.clone();
            if records.len() != p.records.len() {
                let kept: BTreeSet<NaiveDateTime> = records.iter().map(|r| r.timestamp).collect();
                events.retain(|t| kept.contains(t));
            }
            out.push(Participant {
                id: p.id.clone(),
                records,
                events,
            });
        }
        if removed > 0 {
            log::info!("dropped {removed} minutes outside the study bounding box");
        }
        Cohort {
            participants: out,
            dropped_no_gps: self.dropped_no_gps,
            dropped_events: self.dropped_events,
        }
    }

    /// Writes the cohort back out in canonical CSV form.
    pub fn write_csv(&self, records_path: &Path, events_path: &Path) -> Result<()> {
        write_records(records_path, self.records())?;
        write_events(events_path, &self.event_rows())
    }
}

/// Reads and validates a cohort from the records and events CSV files.
pub fn ingest_cohort(records_path: &Path, events_path: &Path) -> Result<Cohort> {
    let records = read_records(records_path)?;
    let events = read_events(events_path)?;
    Cohort::from_rows(records, events)
}
