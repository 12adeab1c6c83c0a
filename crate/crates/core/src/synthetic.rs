//! Seeded template-plus-noise traveller populations.
//!
//! Station `i` is the token `S{i:04}`, so interning the tokens in numeric
//! order reproduces the ids used here.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::forest::mix_seed;
use crate::error::{Error, Result};
use crate::ingest::{history_records, write_calendar, write_records};
use crate::model::{Calendar, Split, StationId, StationTable, Trip, TripChain, UserHistory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Archetype {
    RepeatDominated,
    RepeatEvolve,
    EvolveDominated,
}

/// Chains used on workdays (indexed by weekday - 1) and on holidays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub weekday: Vec<TripChain>,
    pub holiday: TripChain,
    /// Used on workdays that fall on a weekend.
    pub weekend_workday: TripChain,
}

impl TemplateSet {
    pub fn chain_for(&self, weekday: u8, is_workday: bool) -> &TripChain {
        match (is_workday, weekday) {
            (false, _) => &self.holiday,
            (true, 6 | 7) => &self.weekend_workday,
            (true, w) => &self.weekday[(w - 1) as usize],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchetypeSpec {
    pub archetype: Archetype,
    /// Per-trip probability of being dropped or shifted by one hour.
    pub noise: f64,
    /// Day indices at which a repeat-evolve user redraws templates.
    pub changepoints: Vec<usize>,
    /// Per-day probability that an evolving user swaps one station.
    pub drift_rate: f64,
    /// Size of the shared station pool.
    pub stations: u32,
    /// Fixed templates instead of drawn ones.
    pub templates: Option<TemplateSet>,
}

impl Default for ArchetypeSpec {
    fn default() -> Self {
        Self {
            archetype: Archetype::RepeatDominated,
            noise: 0.0,
            changepoints: Vec::new(),
            drift_rate: 1.0 / 40.0,
            stations: 60,
            templates: None,
        }
    }
}

impl ArchetypeSpec {
    pub fn new(archetype: Archetype, noise: f64) -> Self {
        Self {
            archetype,
            noise,
            ..Self::default()
        }
    }

    pub fn validate(&self, n_days: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Input(format!("noise rate {} outside [0, 1]", self.noise)));
        }
        if !(0.0..=1.0).contains(&self.drift_rate) {
            return Err(Error::Input(format!("drift rate {} outside [0, 1]", self.drift_rate)));
        }
        if self.changepoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Input("changepoints must be strictly increasing".into()));
        }
        if self.changepoints.last().is_some_and(|&c| c >= n_days) {
            return Err(Error::Input("changepoint beyond the calendar".into()));
        }
        if self.stations < 4 {
            return Err(Error::Input("station pool needs at least 4 stations".into()));
        }
        if let Some(t) = &self.templates {
            if t.weekday.len() != 7 {
                return Err(Error::Input("templates need one chain per weekday".into()));
            }
        }
        Ok(())
    }
}

pub fn station_token(id: u32) -> String {
    format!("S{id:04}")
}

fn trip(h: u8, o: u32, d: u32) -> Trip {
    Trip {
        hour: h,
        origin: StationId(o),
        destination: StationId(d),
    }
}

fn round_trip(out_hour: u8, back_hour: u8, a: u32, b: u32) -> TripChain {
    [trip(out_hour, a, b), trip(back_hour, b, a)].into_iter().collect()
}

fn other_station(rng: &mut ChaCha8Rng, pool: u32, avoid: &[u32]) -> u32 {
    loop {
        let s = rng.random_range(0..pool);
        if !avoid.contains(&s) {
            return s;
        }
    }
}

fn draw_templates(rng: &mut ChaCha8Rng, pool: u32, home: u32) -> TemplateSet {
    let work = other_station(rng, pool, &[home]);
    let out_hour = rng.random_range(6..=9);
    let back_hour = rng.random_range(17..=19);
    let base = round_trip(out_hour, back_hour, home, work);
    let weekday = (0..7)
        .map(|_| {
            let u = rng.random::<f64>();
            if u < 0.6 {
                base.clone()
            } else if u < 0.8 {
                // same commute at shifted hours
                let out = rng.random_range(6..=10);
                let back = rng.random_range(15..=20);
                round_trip(out, back, home, work)
            } else {
                // a weekly activity elsewhere instead of work
                let place = other_station(rng, pool, &[home, work]);
                round_trip(rng.random_range(8..=11), rng.random_range(16..=21), home, place)
            }
        })
        .collect();
    let holiday = if rng.random::<f64>() < 0.3 {
        TripChain::new()
    } else {
        let leisure = other_station(rng, pool, &[home, work]);
        let h = rng.random_range(9..=13);
        round_trip(h, h + rng.random_range(3..=6), home, leisure)
    };
    TemplateSet {
        weekday,
        holiday,
        weekend_workday: base,
    }
}

fn apply_noise(rng: &mut ChaCha8Rng, template: &TripChain, noise: f64) -> TripChain {
    let mut out = TripChain::new();
    for t in template.iter() {
        if noise > 0.0 && rng.random::<f64>() < noise {
            if rng.random::<bool>() {
                continue;
            }
            let hour = match t.hour {
                0 => 1,
                23 => 22,
                h if rng.random::<bool>() => h + 1,
                h => h - 1,
            };
            out.insert(Trip { hour, ..*t });
        } else {
            out.insert(*t);
        }
    }
    out
}

/// One user's history over the whole calendar; every day is known.
pub fn generate_user(
    spec: &ArchetypeSpec,
    calendar: Arc<Calendar>,
    seed: u64,
    user_id: &str,
) -> Result<UserHistory> {
    let n = calendar.len();
    spec.validate(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = spec.stations;
    let home = rng.random_range(0..pool);
    let mut templates = spec
        .templates
        .clone()
        .unwrap_or_else(|| draw_templates(&mut rng, pool, home));
    let mut chains = Vec::with_capacity(n);
    match spec.archetype {
        Archetype::RepeatDominated | Archetype::RepeatEvolve => {
            let mut next_cp = 0;
            for (d, day) in calendar.days().iter().enumerate() {
                if spec.archetype == Archetype::RepeatEvolve
                    && next_cp < spec.changepoints.len()
                    && spec.changepoints[next_cp] == d
                {
                    templates = draw_templates(&mut rng, pool, home);
                    next_cp += 1;
                }
                let t = templates.chain_for(day.weekday, day.is_workday).clone();
                chains.push(apply_noise(&mut rng, &t, spec.noise));
            }
        }
        Archetype::EvolveDominated => {
            // one chain every day; drift swaps a station for a fresh one
            let mut a = home;
            let mut b = other_station(&mut rng, pool, &[home]);
            let out_hour = rng.random_range(6..=9);
            let back_hour = rng.random_range(17..=19);
            let mut fresh = pool;
            for _ in 0..n {
                if rng.random::<f64>() < spec.drift_rate {
                    if rng.random::<bool>() {
                        a = fresh;
                    } else {
                        b = fresh;
                    }
                    fresh += 1;
                }
                let t = round_trip(out_hour, back_hour, a, b);
                chains.push(apply_noise(&mut rng, &t, spec.noise));
            }
        }
    }
    UserHistory::new(user_id, calendar, chains, Split::new(n, n, n)?)
}

/// `n_users` users with archetypes drawn from `mix` (weights are
/// normalised). User `i` is named `u{i:04}`.
pub fn generate_population(
    mix: &[(ArchetypeSpec, f64)],
    n_users: usize,
    calendar: Arc<Calendar>,
    seed: u64,
) -> Result<Vec<UserHistory>> {
    if n_users == 0 {
        return Ok(Vec::new());
    }
    let total: f64 = mix.iter().map(|m| m.1).sum();
    if mix.is_empty() || !(total > 0.0) || mix.iter().any(|m| m.1 < 0.0 || !m.1.is_finite()) {
        return Err(Error::Input("archetype mix needs nonnegative weights with a positive sum".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, u64::MAX));
    (0..n_users)
        .map(|i| {
            let mut u = rng.random::<f64>() * total;
            let mut pick = mix.len() - 1;
            for (k, (_, w)) in mix.iter().enumerate() {
                if u < *w {
                    pick = k;
                    break;
                }
                u -= w;
            }
            generate_user(&mix[pick].0, calendar.clone(), mix_seed(seed, i as u64), &format!("u{i:04}"))
        })
        .collect()
}

/// Null corpus: every day of every user draws 0 to 3 trips independently
/// from one shared pool of `pool_trips` trips.
pub fn generate_null_population(
    n_users: usize,
    calendar: Arc<Calendar>,
    pool_trips: usize,
    seed: u64,
) -> Result<Vec<UserHistory>> {
    let mut pool_rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<Trip> = (0..pool_trips)
        .map(|_| {
            let o = pool_rng.random_range(0..20);
            let mut d = pool_rng.random_range(0..20);
            if d == o {
                d = (d + 1) % 20;
            }
            trip(pool_rng.random_range(6..=21), o, d)
        })
        .collect();
    let n = calendar.len();
    (0..n_users)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64));
            let chains = (0..n)
                .map(|_| {
                    let k = rng.random_range(0..=3);
                    (0..k).map(|_| pool[rng.random_range(0..pool.len())]).collect()
                })
                .collect();
            UserHistory::new(format!("u{i:04}"), calendar.clone(), chains, Split::new(n, n, n)?)
        })
        .collect()
}

/// Mark the first `known` days as known, the last `validation` of them as
/// the validation block.
pub fn with_known_days(histories: Vec<UserHistory>, known: usize, validation: usize) -> Result<Vec<UserHistory>> {
    histories
        .into_iter()
        .map(|h| {
            let n = h.len();
            if known > n || validation > known {
                return Err(Error::Input(format!(
                    "{known} known / {validation} validation days do not fit {n} days"
                )));
            }
            h.with_split(Split::new(known - validation, known, n)?)
        })
        .collect()
}

/// Mainland China 2018 statutory holidays and weekend make-up workdays.
fn china_2018_override(date: NaiveDate) -> Option<bool> {
    if date.year() != 2018 {
        return None;
    }
    let md = (date.month(), date.day());
    let holiday = matches!(
        md,
        (1, 1)
            | (2, 15..=21)
            | (4, 5..=7)
            | (4, 29..=30)
            | (5, 1)
            | (6, 16..=18)
            | (9, 22..=24)
            | (10, 1..=7)
            | (12, 30..=31)
    );
    let makeup = matches!(md, (2, 11) | (2, 24) | (4, 8) | (4, 28) | (9, 29) | (9, 30) | (12, 29));
    if holiday {
        Some(false)
    } else if makeup {
        Some(true)
    } else {
        None
    }
}

/// `n` days from 2018-01-01 with the mainland China 2018 holiday schedule;
/// later years fall back to plain weekends.
pub fn china_2018_calendar(n: usize) -> Calendar {
    let start = NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date");
    Calendar::from_start(start, n, |d| {
        china_2018_override(d).unwrap_or(d.weekday().number_from_monday() <= 5)
    })
}

/// Station table holding every id used by `histories`.
pub fn station_table(histories: &[UserHistory]) -> StationTable {
    let max = histories
        .iter()
        .flat_map(|h| h.chains.iter())
        .flat_map(|c| c.iter())
        .map(|t| t.origin.0.max(t.destination.0))
        .max();
    let n = max.map_or(0, |m| m + 1);
    StationTable::from_tokens((0..n).map(station_token)).expect("tokens are nonempty and distinct")
}

/// Write `records.csv` and `calendar.csv` into `dir`.
pub fn write_corpus(dir: &Path, histories: &[UserHistory], calendar: &Calendar) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stations = station_table(histories);
    let mut records = Vec::new();
    for h in histories {
        records.extend(history_records(h, &stations));
    }
    let path = dir.join("records.csv");
    let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_records(std::io::BufWriter::new(f), &records)?;
    let path = dir.join("calendar.csv");
    let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_calendar(&mut w, calendar)?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::chain_similarity;

    fn cal() -> Arc<Calendar> {
        Arc::new(china_2018_calendar(308))
    }

    #[test]
    fn calendar_flags() {
        let c = china_2018_calendar(365);
        let flag = |m, d| c.day(c.index_of(NaiveDate::from_ymd_opt(2018, m, d).unwrap()).unwrap()).is_workday;
        assert!(!flag(1, 1));
        assert!(flag(1, 2));
        assert!(!flag(2, 16));
        assert!(flag(2, 11)); // Sunday make-up day
        assert!(!flag(10, 3));
        assert!(flag(9, 29));
        assert!(!flag(1, 6)); // plain Saturday
        assert_eq!(c.day(0).weekday, 1);
    }

    #[test]
    fn noise_free_repeat_user_is_weekly() {
        let spec = ArchetypeSpec::new(Archetype::RepeatDominated, 0.0);
        let h = generate_user(&spec, cal(), 5, "u").unwrap();
        let c = &h.calendar;
        let mondays: Vec<usize> = (0..h.len())
            .filter(|&d| c.day(d).weekday == 1 && c.day(d).is_workday)
            .collect();
        assert!(mondays.len() > 30);
        assert!(mondays.iter().all(|&d| h.chains[d] == h.chains[mondays[0]]));
    }

    #[test]
    fn changepoint_breaks_similarity() {
        let spec = ArchetypeSpec {
            archetype: Archetype::RepeatEvolve,
            changepoints: vec![180],
            ..ArchetypeSpec::default()
        };
        // day 10 and 17 are both Thursdays; day 200 is a Friday workday
        let h = generate_user(&spec, cal(), 13, "u").unwrap();
        assert_eq!(chain_similarity(&h.chains[10], &h.chains[17]), 1.0);
        assert!(chain_similarity(&h.chains[10], &h.chains[200]) < 1.0);
    }

    #[test]
    fn seeded_population_is_reproducible() {
        let mix = vec![
            (ArchetypeSpec::new(Archetype::RepeatDominated, 0.1), 2.0),
            (ArchetypeSpec::new(Archetype::EvolveDominated, 0.1), 1.0),
        ];
        let a = generate_population(&mix, 12, cal(), 9).unwrap();
        let b = generate_population(&mix, 12, cal(), 9).unwrap();
        assert_eq!(a, b);
        assert!(generate_population(&mix, 0, cal(), 9).unwrap().is_empty());
        assert!(generate_population(&[], 3, cal(), 9).is_err());
    }

    #[test]
    fn evolve_user_decays_with_gap() {
        let spec = ArchetypeSpec {
            archetype: Archetype::EvolveDominated,
            drift_rate: 0.05,
            ..ArchetypeSpec::default()
        };
        let mean_at = |hs: &[UserHistory], gap: usize| {
            let mut s = 0.0;
            let mut n = 0;
            for h in hs {
                for i in 0..h.len() - gap {
                    s += chain_similarity(&h.chains[i], &h.chains[i + gap]);
                    n += 1;
                }
            }
            s / n as f64
        };
        let hs: Vec<UserHistory> = (0..20).map(|i| generate_user(&spec, cal(), i, "u").unwrap()).collect();
        assert!(mean_at(&hs, 1) > mean_at(&hs, 20));
        assert!(mean_at(&hs, 20) > mean_at(&hs, 100));
    }

    #[test]
    fn bad_specs_are_rejected() {
        let mut s = ArchetypeSpec::new(Archetype::RepeatDominated, 1.5);
        assert!(generate_user(&s, cal(), 0, "u").is_err());
        s.noise = 0.1;
        s.changepoints = vec![50, 20];
        assert!(generate_user(&s, cal(), 0, "u").is_err());
    }
}
