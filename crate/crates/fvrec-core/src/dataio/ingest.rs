//! Raw-file ingestion for the MovieLens and LastFM layouts.
//!
//! Ratings/events files: one record per line, separator auto-detected among
//! tab, "::" and comma. Users file: (user, gender, age). Users with an
//! unparseable gender or age are dropped and counted.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::dataio::{InteractionMatrix, SensitiveLabels};
use crate::error::{Error, Result};

/// Ingestion counters echoed into the prepare report.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct IngestReport {
    pub raw_records: usize,
    pub users_in_attr_file: usize,
    pub users_dropped_missing_attrs: usize,
    pub users_retained: usize,
    pub items_retained: usize,
    pub items_dropped_by_filter: usize,
    pub positives_retained: usize,
    pub n_female: usize,
    pub n_male: usize,
    pub n_senior: usize,
    pub n_young: usize,
}

/// How to interpret the third column of a LastFM events file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LastFmValue {
    /// Value is a play count; event totals sum it.
    Count,
    /// Value is a timestamp; each record is one event.
    Timestamp,
}

struct UserAttrs {
    gender: u8,
    age_group: u8,
}

fn detect_separator(line: &str) -> &'static str {
    if line.contains("::") {
        "::"
    } else if line.contains('\t') {
        "\t"
    } else {
        ","
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let content = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(content.lines().map(|l| l.to_string()).collect())
}

fn parse_gender(s: &str) -> Option<u8> {
    match s.trim().to_ascii_lowercase().as_str() {
        "m" | "male" => Some(0),
        "f" | "female" => Some(1),
        _ => None,
    }
}

/// Users file -> attributes for users with both a valid binary gender and a
/// parseable age. Age is binarized: senior iff age >= threshold.
fn parse_users(
    path: &Path,
    age_threshold: u32,
    report: &mut IngestReport,
) -> Result<BTreeMap<String, UserAttrs>> {
    let lines = read_lines(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sep = detect_separator(line);
        let fields: Vec<&str> = line.split(sep).collect();
        if fields.len() < 3 {
            return Err(Error::Parse {
                file: path.display().to_string(),
                line: i + 1,
                msg: format!("expected (user, gender, age), got {} fields", fields.len()),
            });
        }
        report.users_in_attr_file += 1;
        let gender = parse_gender(fields[1]);
        let age = fields[2].trim().parse::<u32>().ok();
        match (gender, age) {
            (Some(g), Some(a)) => {
                let age_group = u8::from(a >= age_threshold);
                out.insert(
                    fields[0].trim().to_string(),
                    UserAttrs {
                        gender: g,
                        age_group,
                    },
                );
            }
            _ => report.users_dropped_missing_attrs += 1,
        }
    }
    if out.is_empty() {
        return Err(Error::Data(format!(
            "no users with valid attributes in {}",
            path.display()
        )));
    }
    Ok(out)
}

fn parse_record<'a>(
    path: &Path,
    i: usize,
    line: &'a str,
) -> Result<Option<(&'a str, &'a str, Option<f64>)>> {
    if line.trim().is_empty() {
        return Ok(None);
    }
    let sep = detect_separator(line);
    let fields: Vec<&str> = line.split(sep).collect();
    if fields.len() < 2 {
        return Err(Error::Parse {
            file: path.display().to_string(),
            line: i + 1,
            msg: "expected at least (user, item)".into(),
        });
    }
    let value = if fields.len() >= 3 {
        let raw = fields[2].trim();
        Some(raw.parse::<f64>().map_err(|_| Error::Parse {
            file: path.display().to_string(),
            line: i + 1,
            msg: format!("value '{raw}' is not a number"),
        })?)
    } else {
        None
    };
    Ok(Some((fields[0].trim(), fields[1].trim(), value)))
}

fn finalize(
    positives: BTreeMap<String, Vec<String>>,
    attrs: &BTreeMap<String, UserAttrs>,
    mut report: IngestReport,
) -> Result<(InteractionMatrix, SensitiveLabels, IngestReport)> {
    let matrix = InteractionMatrix::from_positives(&positives)?;
    let mut gender = Vec::with_capacity(matrix.n_users());
    let mut age_group = Vec::with_capacity(matrix.n_users());
    for id in matrix.user_ids() {
        let a = &attrs[id];
        gender.push(a.gender);
        age_group.push(a.age_group);
    }
    report.users_retained = matrix.n_users();
    report.items_retained = matrix.n_items();
    report.positives_retained = matrix.n_interactions();
    report.n_female = gender.iter().filter(|&&g| g == 1).count();
    report.n_male = report.users_retained - report.n_female;
    report.n_senior = age_group.iter().filter(|&&a| a == 1).count();
    report.n_young = report.users_retained - report.n_senior;
    Ok((matrix, SensitiveLabels { gender, age_group }, report))
}

/// MovieLens-style ingestion: ratings >= `min_rating` become positives,
/// items with fewer than `min_item_positives` positives are dropped, then
/// users left without positives are dropped.
pub fn ingest_movielens(
    ratings_path: &Path,
    users_path: &Path,
    min_rating: f64,
    age_threshold: u32,
    min_item_positives: usize,
) -> Result<(InteractionMatrix, SensitiveLabels, IngestReport)> {
    let mut report = IngestReport::default();
    let attrs = parse_users(users_path, age_threshold, &mut report)?;
    let lines = read_lines(ratings_path)?;
    let mut pairs: BTreeMap<(String, String), f64> = BTreeMap::new();
    for (i, line) in lines.iter().enumerate() {
        let Some((user, item, value)) = parse_record(ratings_path, i, line)? else {
            continue;
        };
        let rating = value.ok_or_else(|| Error::Parse {
            file: ratings_path.display().to_string(),
            line: i + 1,
            msg: "ratings record needs a rating column".into(),
        })?;
        report.raw_records += 1;
        if !attrs.contains_key(user) {
            continue;
        }
        let e = pairs.entry((user.to_string(), item.to_string())).or_insert(rating);
        if rating > *e {
            *e = rating;
        }
    }
    // positives, then the item filter, then drop users left empty
    let mut item_counts: BTreeMap<&String, usize> = BTreeMap::new();
    for ((_, item), rating) in &pairs {
        if *rating >= min_rating {
            *item_counts.entry(item).or_insert(0) += 1;
        }
    }
    let kept_items: std::collections::BTreeSet<String> = item_counts
        .iter()
        .filter(|(_, &c)| c >= min_item_positives)
        .map(|(it, _)| (*it).clone())
        .collect();
    report.items_dropped_by_filter = item_counts.len() - kept_items.len();
    let mut positives: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for ((user, item), rating) in &pairs {
        if *rating >= min_rating && kept_items.contains(item) {
            positives.entry(user.clone()).or_default().push(item.clone());
        }
    }
    finalize(positives, &attrs, report)
}

/// LastFM-style ingestion: artists with fewer than `min_item_events` total
/// listening events are dropped, and surviving (user, artist) pairs are
/// binarized. Event totals count the value column per `value_mode`.
pub fn ingest_lastfm(
    events_path: &Path,
    users_path: &Path,
    min_item_events: u64,
    age_threshold: u32,
    value_mode: LastFmValue,
) -> Result<(InteractionMatrix, SensitiveLabels, IngestReport)> {
    let mut report = IngestReport::default();
    let attrs = parse_users(users_path, age_threshold, &mut report)?;
    let lines = read_lines(events_path)?;
    let mut item_events: BTreeMap<String, u64> = BTreeMap::new();
    let mut pairs: std::collections::BTreeSet<(String, String)> = Default::default();
    for (i, line) in lines.iter().enumerate() {
        let Some((user, item, value)) = parse_record(events_path, i, line)? else {
            continue;
        };
        report.raw_records += 1;
        let events = match (value_mode, value) {
            (LastFmValue::Count, Some(v)) if v >= 0.0 => v as u64,
            (LastFmValue::Count, Some(_)) => 0,
            (LastFmValue::Timestamp, Some(_)) => 1,
            (_, None) => 1,
        };
        *item_events.entry(item.to_string()).or_insert(0) += events;
        if attrs.contains_key(user) {
            pairs.insert((user.to_string(), item.to_string()));
        }
    }
    let kept_items: std::collections::BTreeSet<&String> = item_events
        .iter()
        .filter(|(_, &c)| c >= min_item_events)
        .map(|(it, _)| it)
        .collect();
    report.items_dropped_by_filter = item_events.len() - kept_items.len();
    let mut positives: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (user, item) in &pairs {
        if kept_items.contains(item) {
            positives.entry(user.clone()).or_default().push(item.clone());
        }
    }
    finalize(positives, &attrs, report)
}
