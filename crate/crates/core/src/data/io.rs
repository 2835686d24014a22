use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use chrono::{Datelike, NaiveDateTime};

use super::{EventKind, LatLon, MinuteRecord, Outlet, OutletCategory, TIMESTAMP_FORMAT};
use crate::error::{Error, Result};

pub const RECORDS_HEADER: [&str; 12] = [
    "participant_id",
    "timestamp",
    "lat",
    "lon",
    "gps_distance",
    "gps_speed",
    "activity",
    "axis2",
    "axis3",
    "vector_mag",
    "lux",
    "wearing",
];
pub const EVENTS_HEADER: [&str; 3] = ["participant_id", "timestamp", "event_type"];
pub const OUTLETS_HEADER: [&str; 3] = ["category", "lat", "lon"];

/// One row of the events file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRow {
    pub participant_id: String,
    pub timestamp: NaiveDateTime,
    pub kind: EventKind,
}

struct RowCtx<'a> {
    path: &'a str,
    line: u64,
}

impl RowCtx<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_string(),
            line: self.line,
            message: message.into(),
        }
    }

    fn float(&self, name: &str, raw: &str) -> Result<f64> {
        let v: f64 = raw
            .trim()
            .parse()
            .map_err(|_| self.err(format!("{name}: cannot parse `{raw}` as a number")))?;
        if !v.is_finite() {
            return Err(self.err(format!("{name}: non-finite value `{raw}`")));
        }
        Ok(v)
    }

    fn timestamp(&self, raw: &str) -> Result<NaiveDateTime> {
        parse_timestamp(raw.trim()).ok_or_else(|| self.err(format!("timestamp: cannot parse `{raw}` (expected YYYY-MM-DDTHH:MM)")))
    }
}

fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(raw, TIMESTAMP_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%S"))
        .or_else(|_| NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M"))
        .or_else(|_| NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S"))
        .ok()
}

fn open_reader(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(BufReader::new(file)))
}

fn check_header(reader: &mut csv::Reader<BufReader<File>>, path: &str, expected: &[&str]) -> Result<()> {
    let header = reader.headers().map_err(|e| Error::Parse {
        path: path.to_string(),
        line: 1,
        message: e.to_string(),
    })?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Parse {
            path: path.to_string(),
            line: 1,
            message: format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn rows<'a>(
    reader: &'a mut csv::Reader<BufReader<File>>,
    path: &str,
) -> impl Iterator<Item = Result<(u64, csv::StringRecord)>> + 'a {
    let path = path.to_string();
    reader.records().map(move |r| {
        r.map(|rec| (rec.position().map_or(0, |p| p.line()), rec)).map_err(|e| Error::Parse {
            path: path.clone(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })
    })
}

pub fn read_records(path: &Path) -> Result<Vec<MinuteRecord>> {
    let display = path.display().to_string();
    let mut reader = open_reader(path)?;
    check_header(&mut reader, &display, &RECORDS_HEADER)?;
    let mut out = Vec::new();
    for row in rows(&mut reader, &display) {
        let (line, rec) = row?;
        let ctx = RowCtx { path: &display, line };
        let field = |i: usize| rec.get(i).unwrap_or("");
        let participant_id = field(0).trim().to_string();
        if participant_id.is_empty() {
            return Err(ctx.err("participant_id is empty"));
        }
        let timestamp = ctx.timestamp(field(1))?;
        let (lat_raw, lon_raw) = (field(2).trim(), field(3).trim());
        let position = match (lat_raw.is_empty(), lon_raw.is_empty()) {
            (true, true) => None,
            (false, false) => Some(LatLon::new(ctx.float("lat", lat_raw)?, ctx.float("lon", lon_raw)?)),
            _ => return Err(ctx.err("lat and lon must both be present or both be empty")),
        };
        let wearing = match field(11).trim() {
            "1" | "true" | "TRUE" | "True" => true,
            "0" | "false" | "FALSE" | "False" => false,
            other => return Err(ctx.err(format!("wearing: expected 0/1, got `{other}`"))),
        };
        let record = MinuteRecord {
            participant_id,
            timestamp,
            position,
            gps_distance: ctx.float("gps_distance", field(4))?,
            gps_speed: ctx.float("gps_speed", field(5))?,
            activity: ctx.float("activity", field(6))?,
            axis2: ctx.float("axis2", field(7))?,
            axis3: ctx.float("axis3", field(8))?,
            vector_mag: ctx.float("vector_mag", field(9))?,
            lux: ctx.float("lux", field(10))?,
            wearing,
            day_of_week: timestamp.weekday(),
        };
        record.validate().map_err(|m| ctx.err(m))?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_events(path: &Path) -> Result<Vec<EventRow>> {
    let display = path.display().to_string();
    let mut reader = open_reader(path)?;
    check_header(&mut reader, &display, &EVENTS_HEADER)?;
    let mut out = Vec::new();
    for row in rows(&mut reader, &display) {
        let (line, rec) = row?;
        let ctx = RowCtx { path: &display, line };
        let participant_id = rec.get(0).unwrap_or("").trim().to_string();
        if participant_id.is_empty() {
            return Err(ctx.err("participant_id is empty"));
        }
        let timestamp = ctx.timestamp(rec.get(1).unwrap_or(""))?;
        let kind = rec.get(2).unwrap_or("").trim().parse().map_err(|m: String| ctx.err(m))?;
        out.push(EventRow {
            participant_id,
            timestamp,
            kind,
        });
    }
    Ok(out)
}

pub fn read_outlets(path: &Path) -> Result<Vec<Outlet>> {
    let display = path.display().to_string();
    let mut reader = open_reader(path)?;
    check_header(&mut reader, &display, &OUTLETS_HEADER)?;
    let mut out = Vec::new();
    for row in rows(&mut reader, &display) {
        let (line, rec) = row?;
        let ctx = RowCtx { path: &display, line };
        let raw = rec.get(0).unwrap_or("").trim();
        let category = raw
            .parse::<u32>()
            .ok()
            .and_then(OutletCategory::from_code)
            .ok_or_else(|| ctx.err(format!("category: expected one of 445,446,447,7224,7225, got `{raw}`")))?;
        let position = LatLon::new(
            ctx.float("lat", rec.get(1).unwrap_or(""))?,
            ctx.float("lon", rec.get(2).unwrap_or(""))?,
        );
        if !position.is_valid() {
            return Err(ctx.err(format!("coordinates ({}, {}) out of range", position.lat, position.lon)));
        }
        out.push(Outlet { category, position });
    }
    Ok(out)
}

fn create_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

pub fn write_records<'a>(path: &Path, records: impl IntoIterator<Item = &'a MinuteRecord>) -> Result<()> {
    let mut w = create_writer(path)?;
    w.write_record(RECORDS_HEADER).map_err(|e| csv_err(path, e))?;
    for r in records {
        let (lat, lon) = r
            .position
            .map_or((String::new(), String::new()), |p| (p.lat.to_string(), p.lon.to_string()));
        w.write_record([
            r.participant_id.clone(),
            r.timestamp.format(TIMESTAMP_FORMAT).to_string(),
            lat,
            lon,
            r.gps_distance.to_string(),
            r.gps_speed.to_string(),
            r.activity.to_string(),
            r.axis2.to_string(),
            r.axis3.to_string(),
            r.vector_mag.to_string(),
            r.lux.to_string(),
            if r.wearing { "1" } else { "0" }.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_events(path: &Path, events: &[EventRow]) -> Result<()> {
    let mut w = create_writer(path)?;
    w.write_record(EVENTS_HEADER).map_err(|e| csv_err(path, e))?;
    for ev in events {
        w.write_record([
            ev.participant_id.as_str(),
            &ev.timestamp.format(TIMESTAMP_FORMAT).to_string(),
            ev.kind.as_str(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_outlets(path: &Path, outlets: &[Outlet]) -> Result<()> {
    let mut w = create_writer(path)?;
    w.write_record(OUTLETS_HEADER).map_err(|e| csv_err(path, e))?;
    for o in outlets {
        w.write_record([
            o.category.code().to_string(),
            o.position.lat.to_string(),
            o.position.lon.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    const HEADER: &str = "participant_id,timestamp,lat,lon,gps_distance,gps_speed,activity,axis2,axis3,vector_mag,lux,wearing\n";

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{HEADER}p1,2017-03-06T08:00,32.7,-117.1,0,0,1,1,1,1,1,1\np1,2017-03-06T08:01,32.7,-117.1,zero,0,1,1,1,1,1,1\n"
        );
        let path = write_tmp(&dir, "r.csv", &body);
        match read_records(&path).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("gps_distance"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_tmp(&dir, "e.csv", "participant,timestamp,event_type\n");
        assert!(matches!(read_events(&path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn nonzero_seconds_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{HEADER}p1,2017-03-06T08:00:30,32.7,-117.1,0,0,1,1,1,1,1,1\n");
        let path = write_tmp(&dir, "r.csv", &body);
        assert!(read_records(&path).is_err());
    }

    #[test]
    fn unknown_outlet_category_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_tmp(&dir, "o.csv", "category,lat,lon\n445,32.7,-117.1\n999,32.7,-117.1\n");
        let err = read_outlets(&path).unwrap_err().to_string();
        assert!(err.contains(":3:"), "{err}");
    }

    #[test]
    fn absent_coordinates_parse_as_none() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{HEADER}p1,2017-03-06T08:00,,,0,0,1,1,1,1,1,0\n");
        let path = write_tmp(&dir, "r.csv", &body);
        let recs = read_records(&path).unwrap();
        assert_eq!(recs[0].position, None);
        assert!(!recs[0].wearing);
    }
}
