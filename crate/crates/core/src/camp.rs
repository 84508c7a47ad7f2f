use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Political side supported by a hashtag, a tweet or a user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Camp {
    /// Fernández-Fernández formula.
    Fernandez,
    /// Macri-Pichetto formula.
    Macri,
    /// Any secondary candidate.
    Third,
}

impl Camp {
    pub const ALL: [Camp; 3] = [Camp::Fernandez, Camp::Macri, Camp::Third];

    /// Single-letter seed code (`F`, `M`, `T`).
    pub fn code(self) -> char {
        match self {
            Camp::Fernandez => 'F',
            Camp::Macri => 'M',
            Camp::Third => 'T',
        }
    }

    /// Formula label used in reports (`FF`, `MP`, `TP`).
    pub fn formula(self) -> &'static str {
        match self {
            Camp::Fernandez => "FF",
            Camp::Macri => "MP",
            Camp::Third => "TP",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Camp::Fernandez => 0,
            Camp::Macri => 1,
            Camp::Third => 2,
        }
    }
}

impl fmt::Display for Camp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.formula())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown camp label `{0}`")]
pub struct UnknownCamp(pub String);

impl FromStr for Camp {
    type Err = UnknownCamp;

    /// Accepts seed codes and formula labels. `K` (Kirchner) is an alias for `F`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "F" | "K" | "FF" => Ok(Camp::Fernandez),
            "M" | "MP" => Ok(Camp::Macri),
            "T" | "TP" => Ok(Camp::Third),
            _ => Err(UnknownCamp(s.to_string())),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SeedError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Camp(#[from] UnknownCamp),
    #[error("hashtag `{hashtag}` labeled both {first} and {second}")]
    Conflict {
        hashtag: String,
        first: Camp,
        second: Camp,
    },
}

/// Hand-labeled hashtag camps. Keys are lowercase without the leading `#`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HashtagSeedLabels {
    labels: BTreeMap<String, Camp>,
}

pub(crate) fn normalize_hashtag(tag: &str) -> String {
    tag.trim().trim_start_matches('#').to_lowercase()
}

impl HashtagSeedLabels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a label. Relabeling a hashtag with a different camp is an error.
    pub fn insert(&mut self, hashtag: &str, camp: Camp) -> Result<(), SeedError> {
        let key = normalize_hashtag(hashtag);
        match self.labels.get(&key) {
            Some(&existing) if existing != camp => Err(SeedError::Conflict {
                hashtag: key,
                first: existing,
                second: camp,
            }),
            _ => {
                self.labels.insert(key, camp);
                Ok(())
            }
        }
    }

    pub fn get(&self, hashtag: &str) -> Option<Camp> {
        self.labels.get(hashtag).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Camp)> {
        self.labels.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Camps of the seed hashtags present in `hashtags` (deduplicated input not required).
    pub fn camps_in<'a, I>(&self, hashtags: I) -> Vec<Camp>
    where
        I: IntoIterator<Item = &'a String>,
    {
        hashtags.into_iter().filter_map(|h| self.get(h)).collect()
    }

    /// Reads `hashtag,camp` CSV with a header row.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, SeedError> {
        #[derive(Deserialize)]
        struct Row {
            hashtag: String,
            camp: String,
        }
        let mut out = Self::new();
        let mut rdr = csv::Reader::from_reader(reader);
        for row in rdr.deserialize() {
            let row: Row = row?;
            out.insert(&row.hashtag, row.camp.parse()?)?;
        }
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["hashtag", "camp"])?;
        for (tag, camp) in self.iter() {
            wtr.write_record([tag, &camp.code().to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

impl FromIterator<(String, Camp)> for HashtagSeedLabels {
    /// Later entries win on conflict.
    fn from_iter<I: IntoIterator<Item = (String, Camp)>>(iter: I) -> Self {
        Self {
            labels: iter
                .into_iter()
                .map(|(k, v)| (normalize_hashtag(&k), v))
                .collect(),
        }
    }
}

/// Per-camp tallies indexed by [`Camp::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampCounts(pub [u32; 3]);

impl CampCounts {
    pub fn get(&self, camp: Camp) -> u32 {
        self.0[camp.index()]
    }

    pub fn add(&mut self, camp: Camp, n: u32) {
        self.0[camp.index()] += n;
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn merge(&mut self, other: &CampCounts) {
        for (a, b) in self.0.iter_mut().zip(other.0) {
            *a += b;
        }
    }
}
