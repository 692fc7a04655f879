//! Ratings ingestion and train/validation splitting.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;
use std::str::FromStr;

use nlfactor::{ObservationSet, Sample};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Jester's marker for an unrated joke.
pub const JESTER_MISSING: f64 = 99.0;
const JESTER_ITEMS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatingsFormat {
    /// `userId,movieId,rating,timestamp` with a header line.
    MovielensCsv,
    /// One user per line: rating count, then 100 ratings, 99 = missing.
    JesterDense,
}

impl FromStr for RatingsFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "movielens-csv" | "movielens" => Ok(RatingsFormat::MovielensCsv),
            "jester-dense" | "jester" => Ok(RatingsFormat::JesterDense),
            other => Err(Error::Config(format!("unknown ratings format `{other}`"))),
        }
    }
}

/// Ratings with users and items reindexed densely in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsDataset {
    /// Original id of each dense user index.
    pub user_ids: Vec<String>,
    /// Original id of each dense item index.
    pub item_ids: Vec<String>,
    /// `(user, item, value)` triples; `row` is the user, `col` the item.
    pub ratings: Vec<Sample>,
    /// Users present in the file with no usable rating.
    pub dropped_users: Vec<String>,
}

impl RatingsDataset {
    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn to_observations(&self) -> Result<ObservationSet> {
        Ok(ObservationSet::new(
            self.n_users(),
            self.n_items(),
            self.ratings.clone(),
        )?)
    }
}

#[derive(Default)]
struct Builder {
    users: HashMap<String, usize>,
    items: HashMap<String, usize>,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    cells: HashMap<(usize, usize), usize>,
    ratings: Vec<Sample>,
}

impl Builder {
    fn intern(map: &mut HashMap<String, usize>, ids: &mut Vec<String>, key: &str) -> usize {
        if let Some(&k) = map.get(key) {
            return k;
        }
        let k = ids.len();
        map.insert(key.to_string(), k);
        ids.push(key.to_string());
        k
    }

    fn push(&mut self, user: &str, item: &str, y: f64) {
        let row = Self::intern(&mut self.users, &mut self.user_ids, user);
        let col = Self::intern(&mut self.items, &mut self.item_ids, item);
        match self.cells.get(&(row, col)) {
            Some(&k) => self.ratings[k].y = y,
            None => {
                self.cells.insert((row, col), self.ratings.len());
                self.ratings.push(Sample { row, col, y });
            }
        }
    }

    fn finish(self, path: &Path, dropped_users: Vec<String>) -> Result<RatingsDataset> {
        if self.ratings.is_empty() {
            return Err(Error::EmptyDataset { path: path.into() });
        }
        Ok(RatingsDataset {
            user_ids: self.user_ids,
            item_ids: self.item_ids,
            ratings: self.ratings,
            dropped_users,
        })
    }
}

pub fn load_ratings(path: &Path, format: RatingsFormat) -> Result<RatingsDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = csv::ReaderBuilder::new()
        .has_headers(format == RatingsFormat::MovielensCsv)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    match format {
        RatingsFormat::MovielensCsv => load_movielens(path, reader),
        RatingsFormat::JesterDense => load_jester(path, reader),
    }
}

fn parse_error(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.into(),
        line,
        msg: msg.into(),
    }
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    parse_error(path, line, e.to_string())
}

fn load_movielens(path: &Path, mut reader: csv::Reader<File>) -> Result<RatingsDataset> {
    let mut b = Builder::default();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = record_line(&rec);
        if rec.len() < 3 {
            return Err(parse_error(
                path,
                line,
                format!("expected 4 fields, found {}", rec.len()),
            ));
        }
        let y: f64 = rec[2]
            .parse()
            .map_err(|_| parse_error(path, line, format!("bad rating `{}`", &rec[2])))?;
        if !y.is_finite() {
            return Err(parse_error(path, line, "non-finite rating"));
        }
        if rec[0].is_empty() || rec[1].is_empty() {
            return Err(parse_error(path, line, "empty user or item id"));
        }
        b.push(&rec[0], &rec[1], y);
    }
    b.finish(path, Vec::new())
}

fn load_jester(path: &Path, mut reader: csv::Reader<File>) -> Result<RatingsDataset> {
    let mut b = Builder::default();
    let mut dropped = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = record_line(&rec);
        if rec.len() != JESTER_ITEMS + 1 {
            return Err(parse_error(
                path,
                line,
                format!("expected {} fields, found {}", JESTER_ITEMS + 1, rec.len()),
            ));
        }
        let user = line.to_string();
        let mut any = false;
        for (j, field) in rec.iter().skip(1).enumerate() {
            let y: f64 = field
                .parse()
                .map_err(|_| parse_error(path, line, format!("bad rating `{field}`")))?;
            if y == JESTER_MISSING {
                continue;
            }
            if !(-10.0..=10.0).contains(&y) {
                return Err(parse_error(path, line, format!("rating {y} outside [-10, 10]")));
            }
            b.push(&user, &(j + 1).to_string(), y);
            any = true;
        }
        if !any {
            dropped.push(user);
        }
    }
    b.finish(path, dropped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitStrategy {
    RowStratified,
    Uniform,
}

impl FromStr for SplitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "row-stratified" => Ok(SplitStrategy::RowStratified),
            "uniform" => Ok(SplitStrategy::Uniform),
            other => Err(Error::Config(format!("unknown split strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub holdout_fraction: f64,
    pub strategy: SplitStrategy,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(holdout_fraction: f64, strategy: SplitStrategy, seed: u64) -> Result<Self> {
        if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
            return Err(Error::Config(format!(
                "holdout fraction must lie in (0, 1), got {holdout_fraction}"
            )));
        }
        Ok(SplitSpec {
            holdout_fraction,
            strategy,
            seed,
        })
    }
}

/// Disjoint train and validation samples over the dataset's full grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub n: usize,
    pub t: usize,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

impl Split {
    pub fn train_set(&self) -> Result<ObservationSet> {
        Ok(ObservationSet::new(self.n, self.t, self.train.clone())?)
    }

    /// Fails when the validation part is empty.
    pub fn val_set(&self) -> Result<ObservationSet> {
        Ok(ObservationSet::new(self.n, self.t, self.val.clone())?)
    }
}

/// Number of ratings moved to validation out of `count`.
fn holdout_count(fraction: f64, count: usize) -> usize {
    ((fraction * count as f64).floor() as usize).min(count.saturating_sub(1))
}

/// Move a `holdout_fraction` of ratings to validation. Row-stratified splits
/// hold out `floor(fraction * count)` of each user's ratings, never all of them.
/// Both parts keep the dataset order.
pub fn split(ds: &RatingsDataset, spec: &SplitSpec) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut held = vec![false; ds.ratings.len()];
    match spec.strategy {
        SplitStrategy::RowStratified => {
            let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); ds.n_users()];
            for (k, s) in ds.ratings.iter().enumerate() {
                by_user[s.row].push(k);
            }
            for mut idx in by_user {
                let k = holdout_count(spec.holdout_fraction, idx.len());
                idx.shuffle(&mut rng);
                for &j in &idx[..k] {
                    held[j] = true;
                }
            }
        }
        SplitStrategy::Uniform => {
            let mut idx: Vec<usize> = (0..ds.ratings.len()).collect();
            let k = holdout_count(spec.holdout_fraction, idx.len());
            idx.shuffle(&mut rng);
            for &j in &idx[..k] {
                held[j] = true;
            }
        }
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (s, h) in ds.ratings.iter().zip(held) {
        if h {
            val.push(*s);
        } else {
            train.push(*s);
        }
    }
    Split {
        n: ds.n_users(),
        t: ds.n_items(),
        train,
        val,
    }
}
