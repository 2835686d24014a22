//! Great-circle distances, DBSCAN home inference, outlet proximity.

use std::collections::VecDeque;

use chrono::{NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::data::{Cohort, LatLon, Outlet, OutletCategory, Participant};
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// A minute counts as "in home" within this distance of the home centroid.
pub const HOME_RADIUS_M: f64 = 50.0;

/// Distance reported for an outlet category with no outlets at all.
pub const MISSING_OUTLET_DISTANCE_M: f64 = 100_000.0;

/// Cluster label for DBSCAN noise points.
pub const NOISE: i32 = -1;

/// Haversine great-circle distance in meters.
pub fn haversine(a: LatLon, b: LatLon) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let s1 = (dphi * 0.5).sin();
    let s2 = (dlambda * 0.5).sin();
    let h = s1 * s1 + phi1.cos() * phi2.cos() * s2 * s2;
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    /// Neighborhood radius in meters.
    pub eps_m: f64,
    /// Minimum neighborhood size (the point itself included) for a core point.
    pub min_pts: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self {
            eps_m: 50.0,
            min_pts: 5,
        }
    }
}

impl DbscanParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_m > 0.0 && self.eps_m.is_finite()) {
            return Err(Error::config("dbscan.eps_m", "must be a positive number"));
        }
        if self.min_pts == 0 {
            return Err(Error::config("dbscan.min_pts", "must be >= 1"));
        }
        Ok(())
    }
}

fn region(points: &[LatLon], p: usize, eps: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, q)| haversine(points[p], **q) <= eps)
        .map(|(i, _)| i)
        .collect()
}

/// DBSCAN over lat/lon points with the haversine metric.
///
/// Returns one label per point: clusters are numbered from 0 in discovery
/// order, noise is [`NOISE`]. A border point belongs to the first cluster
/// that reaches it.
pub fn dbscan(points: &[LatLon], params: &DbscanParams) -> Vec<i32> {
    const UNVISITED: i32 = i32::MIN;
    let mut labels = vec![UNVISITED; points.len()];
    let mut next = 0;
    for p in 0..points.len() {
        if labels[p] != UNVISITED {
            continue;
        }
        let seeds = region(points, p, params.eps_m);
        if seeds.len() < params.min_pts {
            labels[p] = NOISE;
            continue;
        }
        let cluster = next;
        next += 1;
        labels[p] = cluster;
        let mut queue: VecDeque<usize> = seeds.into();
        while let Some(q) = queue.pop_front() {
            if labels[q] == NOISE {
                labels[q] = cluster;
                continue;
            }
            if labels[q] != UNVISITED {
                continue;
            }
            labels[q] = cluster;
            let reach = region(points, q, params.eps_m);
            if reach.len() >= params.min_pts {
                queue.extend(reach);
            }
        }
    }
    labels
}

/// Half-open clock interval `[start, end)`; wraps past midnight when
/// `start > end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockWindow {
    pub start: NaiveTime,
    pub end: NaiveTime,
}

impl ClockWindow {
    pub fn new(start: NaiveTime, end: NaiveTime) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, t: NaiveTime) -> bool {
        if self.start <= self.end {
            t >= self.start && t < self.end
        } else {
            t >= self.start || t < self.end
        }
    }
}

impl Default for ClockWindow {
    /// The 03:00-04:00 sleep window.
    fn default() -> Self {
        Self {
            start: NaiveTime::from_hms_opt(3, 0, 0).unwrap(),
            end: NaiveTime::from_hms_opt(4, 0, 0).unwrap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomeLocation {
    pub participant_id: String,
    pub lat: f64,
    pub lon: f64,
    /// Number of sleep-window points in the winning cluster.
    pub support: usize,
}

impl HomeLocation {
    pub fn position(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }
}

/// Clusters the participant's sleep-window points and returns the centroid of
/// the largest cluster (ties go to the first discovered), or `None` when every
/// point is noise or the window is empty.
pub fn infer_participant_home(
    participant: &Participant,
    window: &ClockWindow,
    params: &DbscanParams,
) -> Option<HomeLocation> {
    let points: Vec<LatLon> = participant
        .records
        .iter()
        .filter(|r| window.contains(r.timestamp.time()))
        .filter_map(|r| r.position)
        .collect();
    let labels = dbscan(&points, params);
    let clusters = labels.iter().copied().max().filter(|&m| m >= 0)? as usize + 1;
    let mut sizes = vec![0usize; clusters];
    for &l in labels.iter().filter(|&&l| l >= 0) {
        sizes[l as usize] += 1;
    }
    let best = (0..clusters).fold(0, |best, c| if sizes[c] > sizes[best] { c } else { best });
    let (mut lat, mut lon) = (0.0, 0.0);
    for (p, _) in points.iter().zip(&labels).filter(|(_, &l)| l == best as i32) {
        lat += p.lat;
        lon += p.lon;
    }
    let n = sizes[best] as f64;
    Some(HomeLocation {
        participant_id: participant.id.clone(),
        lat: lat / n,
        lon: lon / n,
        support: sizes[best],
    })
}

pub fn infer_home(
    cohort: &Cohort,
    participant_id: &str,
    window: &ClockWindow,
    params: &DbscanParams,
) -> Option<HomeLocation> {
    cohort
        .participant(participant_id)
        .and_then(|p| infer_participant_home(p, window, params))
}

/// Homes for every participant, in cohort order.
pub fn infer_homes(
    cohort: &Cohort,
    window: &ClockWindow,
    params: &DbscanParams,
    exec: Execution,
) -> Vec<Option<HomeLocation>> {
    let homes = exec.map(&cohort.participants, |p| infer_participant_home(p, window, params));
    for (p, h) in cohort.participants.iter().zip(&homes) {
        if h.is_none() {
            log::warn!("no home could be inferred for participant {}; in-home flag is 0 for all minutes", p.id);
        }
    }
    homes
}

/// 1 when within [`HOME_RADIUS_M`] of the home (boundary inclusive); always
/// 0 without a home.
pub fn in_home(position: LatLon, home: Option<&HomeLocation>) -> bool {
    home.is_some_and(|h| haversine(position, h.position()) <= HOME_RADIUS_M)
}

/// Per-category nearest-outlet distance by linear scan, in category order
/// (445, 446, 447, 7224, 7225).
pub fn nearest_outlet_distances(position: LatLon, outlets: &[Outlet]) -> [f64; 5] {
    let mut best = [f64::INFINITY; 5];
    for o in outlets {
        let d = haversine(position, o.position);
        let slot = &mut best[o.category.index()];
        if d < *slot {
            *slot = d;
        }
    }
    best.map(|d| if d.is_finite() { d } else { MISSING_OUTLET_DISTANCE_M })
}

/// Latitude-sorted outlets per category. Query results are identical to
/// [`nearest_outlet_distances`]: candidates are pruned only when the
/// latitude difference alone already exceeds the best distance found,
/// which is a lower bound on the great-circle distance.
#[derive(Debug, Clone)]
pub struct OutletIndex {
    by_category: [Vec<LatLon>; 5],
}

impl OutletIndex {
    pub fn new(outlets: &[Outlet]) -> Self {
        let mut by_category: [Vec<LatLon>; 5] = Default::default();
        for o in outlets {
            by_category[o.category.index()].push(o.position);
        }
        for list in &mut by_category {
            list.sort_by(|a, b| a.lat.total_cmp(&b.lat).then(a.lon.total_cmp(&b.lon)));
        }
        Self { by_category }
    }

    pub fn count(&self, category: OutletCategory) -> usize {
        self.by_category[category.index()].len()
    }

    pub fn nearest(&self, position: LatLon, category: OutletCategory) -> f64 {
        let list = &self.by_category[category.index()];
        if list.is_empty() {
            return MISSING_OUTLET_DISTANCE_M;
        }
        let phi = position.lat.to_radians();
        let bound = |q: &LatLon| EARTH_RADIUS_M * (q.lat.to_radians() - phi).abs();
        // slack keeps rounding in the bound from pruning a true minimum
        let prune = |lb: f64, best: f64| lb > best * (1.0 + 1e-9) + 1e-6;

        let start = list.partition_point(|q| q.lat < position.lat);
        let mut best = f64::INFINITY;
        for q in &list[start..] {
            if prune(bound(q), best) {
                break;
            }
            best = best.min(haversine(position, *q));
        }
        for q in list[..start].iter().rev() {
            if prune(bound(q), best) {
                break;
            }
            best = best.min(haversine(position, *q));
        }
        best
    }

    pub fn distances(&self, position: LatLon) -> [f64; 5] {
        OutletCategory::ALL.map(|c| self.nearest(position, c))
    }
}

/// Minutes since midnight of a clock time.
pub(crate) fn minute_of_day(t: NaiveTime) -> u32 {
    t.hour() * 60 + t.minute()
}
