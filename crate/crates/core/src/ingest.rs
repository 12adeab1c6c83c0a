//! Smart-card record and calendar CSV ingestion.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Calendar, CalendarDay, Split, StationTable, Trip, TripChain, UserHistory};

pub const RECORDS_HEADER: [&str; 4] = ["card_id", "departure_time", "origin", "destination"];
pub const CALENDAR_HEADER: [&str; 3] = ["date", "weekday", "is_workday"];

/// Fraction of malformed rows tolerated before parsing fails outright.
pub const MAX_REJECT_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub card_id: String,
    pub departure_time: NaiveDateTime,
    pub origin: String,
    pub destination: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedRow {
    /// 1-based line number in the source file (header is line 1).
    pub line: u64,
    pub fields: Vec<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedRecords {
    pub records: Vec<RawRecord>,
    pub rejects: Vec<RejectedRow>,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

fn check_header(found: &csv::StringRecord, expected: &[&str], path: &Path) -> Result<()> {
    let ok = found.len() == expected.len() && found.iter().zip(expected).all(|(a, b)| a.trim() == *b);
    if ok {
        Ok(())
    } else {
        Err(Error::Data(format!(
            "{}: expected header `{}`, found `{}`",
            path.display(),
            expected.join(","),
            found.iter().collect::<Vec<_>>().join(",")
        )))
    }
}

fn parse_row(row: &csv::StringRecord) -> std::result::Result<RawRecord, String> {
    if row.len() != RECORDS_HEADER.len() {
        return Err(format!("expected 4 fields, found {}", row.len()));
    }
    let field = |i: usize| row.get(i).unwrap_or("").trim();
    for (i, name) in RECORDS_HEADER.iter().enumerate() {
        if field(i).is_empty() {
            return Err(format!("empty {name}"));
        }
    }
    let departure_time =
        parse_timestamp(field(1)).ok_or_else(|| format!("unparseable timestamp {:?}", field(1)))?;
    Ok(RawRecord {
        card_id: field(0).to_owned(),
        departure_time,
        origin: field(2).to_owned(),
        destination: field(3).to_owned(),
    })
}

pub fn parse_records_from<R: Read>(reader: R, path: &Path) -> Result<ParsedRecords> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(h) => h?,
        None => {
            return Err(Error::Data(format!("{}: missing header", path.display())));
        }
    };
    check_header(&header, &RECORDS_HEADER, path)?;

    let mut parsed = ParsedRecords::default();
    for row in rows {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        match parse_row(&row) {
            Ok(rec) => parsed.records.push(rec),
            Err(reason) => parsed.rejects.push(RejectedRow {
                line,
                fields: row.iter().map(str::to_owned).collect(),
                reason,
            }),
        }
    }
    let total = parsed.records.len() + parsed.rejects.len();
    if total > 0 && parsed.rejects.len() as f64 > MAX_REJECT_FRACTION * total as f64 {
        return Err(Error::Data(format!(
            "{}: {} of {} rows malformed (limit {:.0}%)",
            path.display(),
            parsed.rejects.len(),
            total,
            MAX_REJECT_FRACTION * 100.0
        )));
    }
    Ok(parsed)
}

/// Read a records CSV; malformed rows are collected in `rejects`.
pub fn parse_records(path: &Path) -> Result<ParsedRecords> {
    parse_records_from(open(path)?, path)
}

/// Rejects CSV: the input columns followed by `reason`.
pub fn write_rejects<W: Write>(out: W, rejects: &[RejectedRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(RECORDS_HEADER.iter().chain(["reason"].iter()))?;
    for r in rejects {
        let mut fields: Vec<&str> = r.fields.iter().map(String::as_str).collect();
        fields.resize(RECORDS_HEADER.len(), "");
        fields.push(&r.reason);
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::io("<rejects>", e))?;
    Ok(())
}

pub fn write_records<W: Write>(out: W, records: &[RawRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORDS_HEADER)?;
    for r in records {
        w.write_record([
            r.card_id.as_str(),
            &r.departure_time.format("%Y-%m-%dT%H:%M:%S").to_string(),
            r.origin.as_str(),
            r.destination.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<records>", e))?;
    Ok(())
}

pub fn load_calendar_from<R: Read>(reader: R, path: &Path) -> Result<Calendar> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(reader);
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(h) => h?,
        None => return Err(Error::Data(format!("{}: missing header", path.display()))),
    };
    check_header(&header, &CALENDAR_HEADER, path)?;
    let mut days = Vec::new();
    for row in rows {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let bad = |what: &str| Error::Data(format!("{}:{line}: {what}", path.display()));
        let date = NaiveDate::parse_from_str(row.get(0).unwrap_or("").trim(), "%Y-%m-%d")
            .map_err(|_| bad("unparseable date"))?;
        let weekday: u8 = row
            .get(1)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| bad("unparseable weekday"))?;
        let is_workday = match row.get(2).unwrap_or("").trim() {
            "1" => true,
            "0" => false,
            _ => return Err(bad("is_workday must be 0 or 1")),
        };
        days.push(CalendarDay {
            date,
            weekday,
            is_workday,
        });
    }
    Calendar::new(days).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn load_calendar(path: &Path) -> Result<Calendar> {
    load_calendar_from(open(path)?, path)
}

pub fn write_calendar<W: Write>(out: W, calendar: &Calendar) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CALENDAR_HEADER)?;
    for d in calendar.days() {
        w.write_record([
            d.date.format("%Y-%m-%d").to_string(),
            d.weekday.to_string(),
            (d.is_workday as u8).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<calendar>", e))?;
    Ok(())
}

/// Place one card's records into per-day chains (hour = floor of the
/// departure timestamp). The split defaults to "everything known".
pub fn assemble_history(
    records: &[RawRecord],
    calendar: Arc<Calendar>,
    card_id: &str,
    stations: &mut StationTable,
) -> Result<UserHistory> {
    let n = calendar.len();
    let mut chains = vec![TripChain::new(); n];
    for rec in records.iter().filter(|r| r.card_id == card_id) {
        let date = rec.departure_time.date();
        let day = calendar.index_of(date).ok_or_else(|| {
            Error::Data(format!("card {card_id}: record date {date} outside calendar"))
        })?;
        let trip = Trip::new(
            rec.departure_time.hour() as u8,
            stations.intern(&rec.origin)?,
            stations.intern(&rec.destination)?,
        )?;
        chains[day].insert(trip);
    }
    UserHistory::new(card_id, calendar, chains, Split::new(n, n, n)?)
}

#[derive(Debug, Clone, Default)]
pub struct Assembled {
    pub histories: Vec<UserHistory>,
    /// Cards dropped by the active-day filter, with their active-day count.
    pub filtered: Vec<(String, usize)>,
}

/// Assemble every card (sorted by card id), dropping cards with fewer than
/// `min_active_days` days of travel.
pub fn assemble_all(
    records: &[RawRecord],
    calendar: Arc<Calendar>,
    stations: &mut StationTable,
    min_active_days: usize,
) -> Result<Assembled> {
    let mut by_card: BTreeMap<&str, Vec<RawRecord>> = BTreeMap::new();
    for r in records {
        by_card.entry(r.card_id.as_str()).or_default().push(r.clone());
    }
    let mut out = Assembled::default();
    for (card, recs) in by_card {
        let h = assemble_history(&recs, calendar.clone(), card, stations)?;
        let active = h.active_days();
        if active < min_active_days {
            out.filtered.push((card.to_owned(), active));
        } else {
            out.histories.push(h);
        }
    }
    Ok(out)
}

/// Serialize a history back into records, one per trip, at hh:00:00.
pub fn history_records(history: &UserHistory, stations: &StationTable) -> Vec<RawRecord> {
    let mut out = Vec::new();
    for (day, chain) in history.chains.iter().enumerate() {
        let date = history.calendar.day(day).date;
        for trip in chain {
            out.push(RawRecord {
                card_id: history.user_id.clone(),
                departure_time: date.and_hms_opt(trip.hour as u32, 0, 0).expect("valid hour"),
                origin: stations.token(trip.origin).to_owned(),
                destination: stations.token(trip.destination).to_owned(),
            });
        }
    }
    out
}
