//! Domain types shared by every stage of the pipeline.
//!
//! A [`Trip`] is the atomic label (departure hour, origin, destination); a
//! [`TripChain`] is the set of trips made on one day. A [`UserHistory`]
//! holds one chain per calendar day plus the train/validation/test split.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;
use std::sync::Arc;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense integer handle for an interned station token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationId(pub u32);

impl StationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Bijective token <-> id table for one corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StationTable {
    tokens: Vec<String>,
    index: HashMap<String, StationId>,
}

impl StationTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut table = Self::new();
        for token in tokens {
            let before = table.len();
            table.intern(token.as_ref())?;
            if table.len() == before {
                return Err(Error::Data(format!(
                    "duplicate station token {:?}",
                    token.as_ref()
                )));
            }
        }
        Ok(table)
    }

    pub fn intern(&mut self, token: &str) -> Result<StationId> {
        if token.is_empty() {
            return Err(Error::Input("empty station token".into()));
        }
        if let Some(&id) = self.index.get(token) {
            return Ok(id);
        }
        let id = StationId(self.tokens.len() as u32);
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        Ok(id)
    }

    pub fn get(&self, token: &str) -> Option<StationId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: StationId) -> &str {
        &self.tokens[id.index()]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// One bus trip at hourly precision.
///
/// The derived ordering is (hour, origin id, destination id), which is also
/// the within-day token order used by the edit-distance metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "(u8, StationId, StationId)", try_from = "(u8, StationId, StationId)")]
pub struct Trip {
    pub hour: u8,
    pub origin: StationId,
    pub destination: StationId,
}

impl Trip {
    pub fn new(hour: u8, origin: StationId, destination: StationId) -> Result<Self> {
        if hour > 23 {
            return Err(Error::Input(format!("trip hour {hour} outside 0..=23")));
        }
        Ok(Self {
            hour,
            origin,
            destination,
        })
    }
}

impl From<Trip> for (u8, StationId, StationId) {
    fn from(t: Trip) -> Self {
        (t.hour, t.origin, t.destination)
    }
}

impl TryFrom<(u8, StationId, StationId)> for Trip {
    type Error = Error;

    fn try_from((hour, origin, destination): (u8, StationId, StationId)) -> Result<Self> {
        Trip::new(hour, origin, destination)
    }
}

/// The set of trips made on one day. Empty means a no-travel day.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TripChain(BTreeSet<Trip>);

impl TripChain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, trip: Trip) -> bool {
        self.0.insert(trip)
    }

    pub fn contains(&self, trip: &Trip) -> bool {
        self.0.contains(trip)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Trips in (hour, origin, destination) order.
    pub fn iter(&self) -> impl Iterator<Item = &Trip> + '_ {
        self.0.iter()
    }

    pub fn intersection_len(&self, other: &TripChain) -> usize {
        let (small, large) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        small.iter().filter(|t| large.contains(t)).count()
    }
}

impl FromIterator<Trip> for TripChain {
    fn from_iter<I: IntoIterator<Item = Trip>>(iter: I) -> Self {
        TripChain(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a TripChain {
    type Item = &'a Trip;
    type IntoIter = std::collections::btree_set::Iter<'a, Trip>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Collapse a list of trips into a day chain; duplicates and order vanish.
pub fn chain_from_trips(trips: &[Trip]) -> TripChain {
    trips.iter().copied().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarDay {
    pub date: NaiveDate,
    /// 1 = Monday ... 7 = Sunday.
    pub weekday: u8,
    pub is_workday: bool,
}

/// Consecutive run of days with weekday and workday flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<CalendarDay>", into = "Vec<CalendarDay>")]
pub struct Calendar {
    days: Vec<CalendarDay>,
}

pub fn iso_weekday(date: NaiveDate) -> u8 {
    date.weekday().number_from_monday() as u8
}

impl Calendar {
    pub fn new(days: Vec<CalendarDay>) -> Result<Self> {
        for (i, day) in days.iter().enumerate() {
            if !(1..=7).contains(&day.weekday) {
                return Err(Error::Data(format!(
                    "{}: weekday {} outside 1..=7",
                    day.date, day.weekday
                )));
            }
            if iso_weekday(day.date) != day.weekday {
                return Err(Error::Data(format!(
                    "{}: weekday column says {} but the date is weekday {}",
                    day.date,
                    day.weekday,
                    iso_weekday(day.date)
                )));
            }
            if i > 0 {
                let prev = days[i - 1].date;
                match prev.succ_opt() {
                    Some(next) if next == day.date => {}
                    _ if day.date == prev => {
                        return Err(Error::Data(format!("duplicate date {}", day.date)))
                    }
                    _ => {
                        return Err(Error::Data(format!(
                            "dates not consecutive: {} followed by {}",
                            prev, day.date
                        )))
                    }
                }
            }
        }
        Ok(Self { days })
    }

    /// Build `n` consecutive days from `start`, asking `is_workday` per date.
    pub fn from_start(start: NaiveDate, n: usize, is_workday: impl Fn(NaiveDate) -> bool) -> Self {
        let days = start
            .iter_days()
            .take(n)
            .map(|date| CalendarDay {
                date,
                weekday: iso_weekday(date),
                is_workday: is_workday(date),
            })
            .collect();
        Self { days }
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn day(&self, i: usize) -> &CalendarDay {
        &self.days[i]
    }

    pub fn days(&self) -> &[CalendarDay] {
        &self.days
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let first = self.days.first()?.date;
        let offset = (date - first).num_days();
        if offset < 0 || offset as usize >= self.days.len() {
            None
        } else {
            Some(offset as usize)
        }
    }

    /// Day gap in calendar days.
    pub fn gap(&self, i: usize, j: usize) -> usize {
        i.abs_diff(j)
    }

    pub fn prefix(&self, n: usize) -> Calendar {
        Calendar {
            days: self.days[..n.min(self.days.len())].to_vec(),
        }
    }
}

impl TryFrom<Vec<CalendarDay>> for Calendar {
    type Error = Error;

    fn try_from(days: Vec<CalendarDay>) -> Result<Self> {
        Calendar::new(days)
    }
}

impl From<Calendar> for Vec<CalendarDay> {
    fn from(c: Calendar) -> Self {
        c.days
    }
}

/// Trip index plus per-day occurrence and co-occurrence counts.
///
/// Counts are presence-per-day: a trip repeated within a day counts once
/// (chains are sets anyway).
#[derive(Debug, Clone, PartialEq)]
pub struct TripVocabulary {
    trips: Vec<Trip>,
    index: HashMap<Trip, usize>,
    occurrences: Vec<u32>,
    cooccurrence: Vec<u32>,
    n_days: usize,
}

impl TripVocabulary {
    pub fn from_chains<'a, I>(chains: I) -> Self
    where
        I: IntoIterator<Item = &'a TripChain>,
        I::IntoIter: Clone,
    {
        let chains = chains.into_iter();
        let all: BTreeSet<Trip> = chains.clone().flat_map(|c| c.iter().copied()).collect();
        let trips: Vec<Trip> = all.into_iter().collect();
        let index: HashMap<Trip, usize> = trips.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        let n = trips.len();
        let mut occurrences = vec![0u32; n];
        let mut cooccurrence = vec![0u32; n * n];
        let mut n_days = 0;
        let mut ids = Vec::new();
        for chain in chains {
            n_days += 1;
            ids.clear();
            ids.extend(chain.iter().map(|t| index[t]));
            for (a, &i) in ids.iter().enumerate() {
                occurrences[i] += 1;
                for &j in &ids[a + 1..] {
                    cooccurrence[i * n + j] += 1;
                    cooccurrence[j * n + i] += 1;
                }
            }
        }
        Self {
            trips,
            index,
            occurrences,
            cooccurrence,
            n_days,
        }
    }

    pub fn len(&self) -> usize {
        self.trips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trips.is_empty()
    }

    pub fn trips(&self) -> &[Trip] {
        &self.trips
    }

    pub fn trip(&self, label: usize) -> Trip {
        self.trips[label]
    }

    pub fn label_of(&self, trip: &Trip) -> Option<usize> {
        self.index.get(trip).copied()
    }

    /// Number of days on which the trip occurs.
    pub fn occurrences(&self, label: usize) -> u32 {
        self.occurrences[label]
    }

    /// Number of days on which both trips occur; zero on the diagonal.
    pub fn cooccurrence(&self, a: usize, b: usize) -> u32 {
        self.cooccurrence[a * self.trips.len() + b]
    }

    /// Days the vocabulary was counted over.
    pub fn n_days(&self) -> usize {
        self.n_days
    }

    /// Occurrence frequency n1 / n of each trip.
    pub fn prior(&self, label: usize) -> f64 {
        if self.n_days == 0 {
            0.0
        } else {
            self.occurrences[label] as f64 / self.n_days as f64
        }
    }

    pub fn chain_of(&self, labels: impl IntoIterator<Item = usize>) -> TripChain {
        labels.into_iter().map(|l| self.trips[l]).collect()
    }
}

/// Day-index boundaries: train `[0, train_end)`, validation
/// `[train_end, validation_end)`, test `[validation_end, test_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_end: usize,
    pub validation_end: usize,
    pub test_end: usize,
}

impl Split {
    pub fn new(train_end: usize, validation_end: usize, test_end: usize) -> Result<Self> {
        if !(train_end <= validation_end && validation_end <= test_end) {
            return Err(Error::Input(format!(
                "split markers out of order: {train_end} / {validation_end} / {test_end}"
            )));
        }
        Ok(Self {
            train_end,
            validation_end,
            test_end,
        })
    }

    /// Known days: training plus validation.
    pub fn known(&self) -> Range<usize> {
        0..self.validation_end
    }

    pub fn test(&self) -> Range<usize> {
        self.validation_end..self.test_end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserHistory {
    pub user_id: String,
    pub calendar: Arc<Calendar>,
    pub chains: Vec<TripChain>,
    pub split: Split,
}

impl UserHistory {
    pub fn new(
        user_id: impl Into<String>,
        calendar: Arc<Calendar>,
        chains: Vec<TripChain>,
        split: Split,
    ) -> Result<Self> {
        if chains.len() != calendar.len() {
            return Err(Error::Data(format!(
                "{} chains for a {}-day calendar",
                chains.len(),
                calendar.len()
            )));
        }
        if split.test_end > chains.len() {
            return Err(Error::Input(format!(
                "split end {} beyond history length {}",
                split.test_end,
                chains.len()
            )));
        }
        Ok(Self {
            user_id: user_id.into(),
            calendar,
            chains,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }

    pub fn active_days(&self) -> usize {
        self.chains.iter().filter(|c| !c.is_empty()).count()
    }

    pub fn with_split(mut self, split: Split) -> Result<Self> {
        if split.test_end > self.chains.len() {
            return Err(Error::Input(format!(
                "split end {} beyond history length {}",
                split.test_end,
                self.chains.len()
            )));
        }
        self.split = split;
        Ok(self)
    }
}

/// Trip vocabulary over the chains of `range`.
pub fn build_vocabulary(history: &UserHistory, range: Range<usize>) -> Result<TripVocabulary> {
    if range.end > history.len() || range.start > range.end {
        return Err(Error::Contract(format!(
            "vocabulary range {range:?} outside history of {} days",
            history.len()
        )));
    }
    Ok(TripVocabulary::from_chains(&history.chains[range]))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn trip(h: u8, o: u32, d: u32) -> Trip {
        Trip::new(h, StationId(o), StationId(d)).unwrap()
    }

    #[test]
    fn interning_is_deterministic() {
        let mut table = StationTable::new();
        let ids: Vec<u32> = ["A", "B", "A"]
            .iter()
            .map(|t| table.intern(t).unwrap().0)
            .collect();
        assert_eq!(ids, vec![0, 1, 0]);
        assert_eq!(table.token(StationId(1)), "B");
    }

    #[test]
    fn empty_token_rejected() {
        let mut table = StationTable::new();
        assert!(matches!(table.intern(""), Err(Error::Input(_))));
    }

    #[test]
    fn interning_is_bijective() {
        let mut table = StationTable::new();
        let ids: BTreeSet<u32> = (0..10_000)
            .map(|i| table.intern(&format!("st{i}")).unwrap().0)
            .collect();
        assert_eq!(ids.len(), 10_000);
        for i in 0..10_000u32 {
            assert_eq!(table.token(StationId(i)), format!("st{i}"));
        }
    }

    #[test]
    fn hour_range_checked() {
        assert!(Trip::new(24, StationId(0), StationId(1)).is_err());
        assert!(Trip::new(23, StationId(0), StationId(1)).is_ok());
    }

    #[test]
    fn chain_collapses_duplicates() {
        let (t1, t2) = (trip(7, 0, 1), trip(18, 1, 0));
        let c = chain_from_trips(&[t1, t1, t2]);
        assert_eq!(c.len(), 2);
        assert!(chain_from_trips(&[]).is_empty());
        assert_eq!(chain_from_trips(&[t2, t1]), chain_from_trips(&[t1, t2]));
    }

    #[test]
    fn vocabulary_counts_days() {
        let (t1, t2) = (trip(7, 0, 1), trip(18, 1, 0));
        let chains = vec![
            chain_from_trips(&[t1, t2]),
            chain_from_trips(&[t1]),
            TripChain::new(),
        ];
        let v = TripVocabulary::from_chains(&chains);
        let (a, b) = (v.label_of(&t1).unwrap(), v.label_of(&t2).unwrap());
        assert_eq!(v.occurrences(a), 2);
        assert_eq!(v.occurrences(b), 1);
        assert_eq!(v.cooccurrence(a, b), 1);
        assert_eq!(v.cooccurrence(b, a), 1);
        assert_eq!(v.n_days(), 3);
    }

    #[test]
    fn vocabulary_empty_and_saturated() {
        let empty = vec![TripChain::new(); 4];
        assert!(TripVocabulary::from_chains(&empty).is_empty());

        let (t1, t2) = (trip(8, 2, 3), trip(17, 3, 2));
        let days = vec![chain_from_trips(&[t1, t2]); 5];
        let v = TripVocabulary::from_chains(&days);
        let (a, b) = (v.label_of(&t1).unwrap(), v.label_of(&t2).unwrap());
        assert_eq!(v.cooccurrence(a, b), 5);
        assert_eq!(v.occurrences(a), 5);
        assert_eq!(v.occurrences(b), 5);
    }

    #[test]
    fn calendar_weekday_recurrence() {
        let start = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
        let cal = Calendar::from_start(start, 400, |_| true);
        assert_eq!(cal.day(0).weekday, 1);
        for d in 0..cal.len() - 1 {
            assert_eq!(cal.day(d + 1).weekday, cal.day(d).weekday % 7 + 1);
        }
        assert_eq!(cal.index_of(NaiveDate::from_ymd_opt(2018, 1, 8).unwrap()), Some(7));
    }

    #[test]
    fn calendar_rejects_gaps_and_bad_weekday() {
        let d = |m, day| NaiveDate::from_ymd_opt(2018, m, day).unwrap();
        let mk = |date: NaiveDate| CalendarDay {
            date,
            weekday: iso_weekday(date),
            is_workday: true,
        };
        assert!(Calendar::new(vec![mk(d(2, 13)), mk(d(2, 15))]).is_err());
        assert!(Calendar::new(vec![mk(d(2, 13)), mk(d(2, 13))]).is_err());
        let mut monday = mk(d(1, 1));
        monday.weekday = 3;
        assert!(Calendar::new(vec![monday]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use std::collections::hash_map::DefaultHasher;
        use std::hash::{Hash, Hasher};

        fn hash_of(t: &Trip) -> u64 {
            let mut h = DefaultHasher::new();
            t.hash(&mut h);
            h.finish()
        }

        proptest! {
            #[test]
            fn trip_eq_hash_consistent(raw in prop::collection::vec((0u8..24, 0u32..6, 0u32..6), 1000)) {
                let trips: Vec<Trip> = raw.iter().map(|&(h, o, d)| trip(h, o, d)).collect();
                for a in trips.iter().take(60) {
                    for b in &trips {
                        if a == b {
                            prop_assert_eq!(hash_of(a), hash_of(b));
                        }
                        prop_assert_eq!(a == b, (a.hour, a.origin, a.destination) == (b.hour, b.origin, b.destination));
                    }
                }
            }

            #[test]
            fn cooccurrence_bounded_and_symmetric(
                days in prop::collection::vec(prop::collection::vec((6u8..10, 0u32..3, 0u32..3), 0..5), 1..30)
            ) {
                let chains: Vec<TripChain> = days
                    .iter()
                    .map(|d| d.iter().map(|&(h, o, s)| trip(h, o, s)).collect())
                    .collect();
                let v = TripVocabulary::from_chains(&chains);
                for i in 0..v.len() {
                    prop_assert_eq!(v.cooccurrence(i, i), 0);
                    for j in 0..v.len() {
                        prop_assert_eq!(v.cooccurrence(i, j), v.cooccurrence(j, i));
                        prop_assert!(v.cooccurrence(i, j) <= v.occurrences(i).min(v.occurrences(j)));
                    }
                }
            }
        }
    }
}
