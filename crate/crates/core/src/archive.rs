//! JSON archive of assembled per-user histories: the hand-off between
//! `ingest` and every analysis command.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Calendar, Split, StationTable, TripChain, UserHistory};

pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchivedUser {
    pub user_id: String,
    /// One chain per calendar day; trips are (hour, origin id, destination id).
    pub chains: Vec<TripChain>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryArchive {
    pub version: u32,
    pub calendar: Calendar,
    /// Station tokens indexed by id.
    pub stations: Vec<String>,
    pub users: Vec<ArchivedUser>,
}

impl HistoryArchive {
    pub fn new(calendar: &Calendar, stations: &StationTable, histories: &[UserHistory]) -> Self {
        let mut users: Vec<ArchivedUser> = histories
            .iter()
            .map(|h| ArchivedUser {
                user_id: h.user_id.clone(),
                chains: h.chains.clone(),
            })
            .collect();
        users.sort_by(|a, b| a.user_id.cmp(&b.user_id));
        Self {
            version: ARCHIVE_VERSION,
            calendar: calendar.clone(),
            stations: stations.tokens().to_vec(),
            users,
        }
    }

    pub fn station_table(&self) -> Result<StationTable> {
        StationTable::from_tokens(&self.stations)
    }

    /// Histories with every day marked known.
    pub fn histories(&self) -> Result<Vec<UserHistory>> {
        let cal = Arc::new(self.calendar.clone());
        let n = cal.len();
        let n_stations = self.stations.len() as u32;
        self.users
            .iter()
            .map(|u| {
                if let Some(t) = u
                    .chains
                    .iter()
                    .flat_map(|c| c.iter())
                    .find(|t| t.origin.0 >= n_stations || t.destination.0 >= n_stations)
                {
                    return Err(Error::Data(format!(
                        "user {}: trip references station outside the archive table ({:?})",
                        u.user_id, t
                    )));
                }
                UserHistory::new(u.user_id.clone(), cal.clone(), u.chains.clone(), Split::new(n, n, n)?)
            })
            .collect()
    }

    pub fn read_from<R: Read>(reader: R) -> Result<Self> {
        let a: Self = serde_json::from_reader(reader)?;
        if a.version != ARCHIVE_VERSION {
            return Err(Error::Data(format!(
                "archive version {} (expected {ARCHIVE_VERSION})",
                a.version
            )));
        }
        Ok(a)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f)).map_err(|e| match e {
            Error::Json(j) => Error::Data(format!("{}: {j}", path.display())),
            other => other,
        })
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, self)?;
        out.write_all(b"\n").map_err(|e| Error::io("<archive>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}
