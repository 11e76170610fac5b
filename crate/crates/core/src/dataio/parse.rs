use std::io::BufRead;
use std::str::FromStr;

use chrono::NaiveDate;

use super::RatingRecord;
use crate::error::{Error, Result};

const MOVIELENS_HEADER: &str = "userId,movieId,rating,timestamp";

/// Raw rating file layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatingFormat {
    /// `ratings.csv`: header `userId,movieId,rating,timestamp`.
    MovieLensCsv,
    /// `combined_data_*.txt`: `MovieID:` blocks of `CustomerID,Rating,Date`.
    NetflixPerMovie,
}

impl FromStr for RatingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "movielens_csv" => Ok(Self::MovieLensCsv),
            "netflix_per_movie" => Ok(Self::NetflixPerMovie),
            other => Err(Error::Config(format!(
                "unknown rating format `{other}` (expected movielens_csv or netflix_per_movie)"
            ))),
        }
    }
}

fn field<'a>(parts: &mut impl Iterator<Item = &'a str>, name: &str, line: usize) -> Result<&'a str> {
    parts.next().map(str::trim).ok_or_else(|| Error::Parse { line, msg: format!("missing field `{name}`") })
}

fn num<T: FromStr>(s: &str, name: &str, line: usize) -> Result<T> {
    s.parse().map_err(|_| Error::Parse { line, msg: format!("invalid {name} `{s}`") })
}

fn check_rating(rating: f64, line: usize) -> Result<f64> {
    if (0.5..=5.0).contains(&rating) {
        Ok(rating)
    } else {
        Err(Error::Parse { line, msg: format!("rating {rating} outside [0.5, 5.0]") })
    }
}

/// Parses a whole rating file. Blank lines are ignored; line numbers in
/// errors are 1-based.
pub fn parse_ratings<R: BufRead>(source: R, format: RatingFormat) -> Result<Vec<RatingRecord>> {
    match format {
        RatingFormat::MovieLensCsv => parse_movielens(source),
        RatingFormat::NetflixPerMovie => parse_netflix(source),
    }
}

fn parse_movielens<R: BufRead>(source: R) -> Result<Vec<RatingRecord>> {
    let mut out = Vec::new();
    let mut saw_header = false;
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if !saw_header {
            if line.trim_start_matches('\u{feff}') != MOVIELENS_HEADER {
                return Err(Error::Parse { line: line_no, msg: format!("expected header `{MOVIELENS_HEADER}`") });
            }
            saw_header = true;
            continue;
        }
        let mut parts = line.split(',');
        let user_id = num(field(&mut parts, "userId", line_no)?, "userId", line_no)?;
        let item_id = num(field(&mut parts, "movieId", line_no)?, "movieId", line_no)?;
        let rating = check_rating(num(field(&mut parts, "rating", line_no)?, "rating", line_no)?, line_no)?;
        let timestamp = num(field(&mut parts, "timestamp", line_no)?, "timestamp", line_no)?;
        if parts.next().is_some() {
            return Err(Error::Parse { line: line_no, msg: "too many fields".into() });
        }
        out.push(RatingRecord { user_id, item_id, rating, timestamp: Some(timestamp) });
    }
    if !saw_header {
        return Err(Error::Parse { line: 1, msg: format!("missing header `{MOVIELENS_HEADER}`") });
    }
    Ok(out)
}

fn parse_netflix<R: BufRead>(source: R) -> Result<Vec<RatingRecord>> {
    let mut out = Vec::new();
    let mut movie: Option<u64> = None;
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(id) = line.strip_suffix(':') {
            movie = Some(num(id, "MovieID", line_no)?);
            continue;
        }
        let item_id = movie
            .ok_or_else(|| Error::Parse { line: line_no, msg: "rating line before any `MovieID:` header".into() })?;
        let mut parts = line.split(',');
        let user_id = num(field(&mut parts, "CustomerID", line_no)?, "CustomerID", line_no)?;
        let rating = check_rating(num(field(&mut parts, "Rating", line_no)?, "Rating", line_no)?, line_no)?;
        let date = field(&mut parts, "Date", line_no)?;
        let timestamp = NaiveDate::parse_from_str(date, "%Y-%m-%d")
            .map_err(|_| Error::Parse { line: line_no, msg: format!("invalid date `{date}`") })?
            .and_hms_opt(0, 0, 0)
            .map(|dt| dt.and_utc().timestamp());
        out.push(RatingRecord { user_id, item_id, rating, timestamp });
    }
    Ok(out)
}
