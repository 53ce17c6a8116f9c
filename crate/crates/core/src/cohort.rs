//! Cohort data model: per-user step series, attributes, derived binary labels,
//! CSV ingestion with completeness validation, and attribute correlation.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PERIODS_PER_DAY: usize = 5760;
pub const DAYS_PER_WEEK: usize = 7;
pub const PERIODS_PER_WEEK: usize = PERIODS_PER_DAY * DAYS_PER_WEEK;
pub const DEFAULT_AGE_THRESHOLD: u32 = 55;
pub const MIN_AGE: u32 = 18;
pub const MAX_AGE: u32 = 120;

pub const STEPS_HEADER: [&str; 4] = ["user_id", "day", "period", "steps"];
pub const ATTRIBUTES_HEADER: [&str; 4] = ["user_id", "gender", "age", "education"];

/// One user's week of step counts, one entry per 15 second period.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSeries {
    user_id: String,
    counts: Vec<u32>,
}

impl StepSeries {
    pub fn new(user_id: impl Into<String>, counts: Vec<u32>) -> Result<Self> {
        if counts.len() != PERIODS_PER_WEEK {
            return Err(Error::invalid(format!(
                "step series must have {PERIODS_PER_WEEK} periods, got {}",
                counts.len()
            )));
        }
        Ok(StepSeries {
            user_id: user_id.into(),
            counts,
        })
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Periods of day `day` (0 based).
    pub fn day(&self, day: usize) -> &[u32] {
        &self.counts[day * PERIODS_PER_DAY..(day + 1) * PERIODS_PER_DAY]
    }

    pub fn max_count(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }

    /// Numeric encoding used for correlation: male 0, female 1.
    pub fn code(self) -> f64 {
        match self {
            Gender::Male => 0.0,
            Gender::Female => 1.0,
        }
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "male" => Ok(Gender::Male),
            "female" => Ok(Gender::Female),
            other => Err(Error::invalid(format!("unknown gender {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Education {
    Low,
    Medium,
    High,
}

impl Education {
    pub fn as_str(self) -> &'static str {
        match self {
            Education::Low => "low",
            Education::Medium => "medium",
            Education::High => "high",
        }
    }

    /// Ordinal encoding used for correlation: low 0, medium 1, high 2.
    pub fn code(self) -> f64 {
        match self {
            Education::Low => 0.0,
            Education::Medium => 1.0,
            Education::High => 2.0,
        }
    }
}

impl FromStr for Education {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Education::Low),
            "medium" => Ok(Education::Medium),
            "high" => Ok(Education::High),
            other => Err(Error::invalid(format!("unknown education {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attributes {
    pub gender: Gender,
    pub age: u32,
    pub education: Education,
}

impl Attributes {
    pub fn new(gender: Gender, age: u32, education: Education) -> Result<Self> {
        if !(MIN_AGE..=MAX_AGE).contains(&age) {
            return Err(Error::invalid(format!(
                "age {age} outside [{MIN_AGE}, {MAX_AGE}]"
            )));
        }
        Ok(Attributes {
            gender,
            age,
            education,
        })
    }
}

/// The three binary inference targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Gender,
    Age,
    Education,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Gender, Attribute::Age, Attribute::Education];

    pub fn as_str(self) -> &'static str {
        match self {
            Attribute::Gender => "gender",
            Attribute::Age => "age",
            Attribute::Education => "education",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gender" => Ok(Attribute::Gender),
            "age" => Ok(Attribute::Age),
            "education" => Ok(Attribute::Education),
            other => Err(Error::invalid(format!("unknown attribute {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgeClass {
    Young,
    Old,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub age_bin: AgeClass,
    pub gender_bin: Gender,
    /// Absent for low education, which takes no part in the education task.
    pub edu_bin: Option<Education>,
}

impl Labels {
    pub fn derive(attrs: &Attributes, age_threshold: u32) -> Self {
        Labels {
            age_bin: if attrs.age >= age_threshold {
                AgeClass::Old
            } else {
                AgeClass::Young
            },
            gender_bin: attrs.gender,
            edu_bin: match attrs.education {
                Education::Low => None,
                e => Some(e),
            },
        }
    }

    /// Binary target for `attribute`: old, female and high education map to 1.
    pub fn binary(&self, attribute: Attribute) -> Option<u8> {
        match attribute {
            Attribute::Age => Some(u8::from(self.age_bin == AgeClass::Old)),
            Attribute::Gender => Some(u8::from(self.gender_bin == Gender::Female)),
            Attribute::Education => self.edu_bin.map(|e| u8::from(e == Education::High)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub series: StepSeries,
    pub attrs: Attributes,
    pub labels: Labels,
}

impl UserRecord {
    pub fn new(series: StepSeries, attrs: Attributes, age_threshold: u32) -> Self {
        let labels = Labels::derive(&attrs, age_threshold);
        UserRecord {
            series,
            attrs,
            labels,
        }
    }

    pub fn user_id(&self) -> &str {
        self.series.user_id()
    }
}

/// Recomputes the binary labels of `record` for `age_threshold`.
pub fn derive_labels(mut record: UserRecord, age_threshold: u32) -> UserRecord {
    record.labels = Labels::derive(&record.attrs, age_threshold);
    record
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortStats {
    pub n_users: usize,
    /// Largest per-period count over every included user.
    pub max_steps: u32,
    /// attribute name -> class name -> number of users.
    pub class_counts: BTreeMap<String, BTreeMap<String, usize>>,
}

impl CohortStats {
    pub fn compute(records: &[UserRecord]) -> Self {
        let mut class_counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        let mut bump = |attr: &str, class: &str| {
            *class_counts
                .entry(attr.to_string())
                .or_default()
                .entry(class.to_string())
                .or_default() += 1;
        };
        for r in records {
            bump("gender", r.attrs.gender.as_str());
            bump("education", r.attrs.education.as_str());
            bump(
                "age",
                match r.labels.age_bin {
                    AgeClass::Young => "young",
                    AgeClass::Old => "old",
                },
            );
        }
        CohortStats {
            n_users: records.len(),
            max_steps: records
                .iter()
                .map(|r| r.series.max_count())
                .max()
                .unwrap_or(0),
            class_counts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub user_id: String,
    pub reason: String,
}

/// A validated, immutable set of users.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub records: Vec<UserRecord>,
    pub stats: CohortStats,
    pub exclusions: Vec<Exclusion>,
    pub age_threshold: u32,
}

impl Cohort {
    /// Builds a cohort from already-validated records, rejecting duplicate ids.
    pub fn from_records(records: Vec<UserRecord>, age_threshold: u32) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.user_id()) {
                return Err(Error::Duplicate {
                    what: "user_id",
                    key: r.user_id().to_string(),
                });
            }
        }
        let records: Vec<UserRecord> = records
            .into_iter()
            .map(|r| derive_labels(r, age_threshold))
            .collect();
        Ok(Cohort {
            stats: CohortStats::compute(&records),
            records,
            exclusions: Vec::new(),
            age_threshold,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, user_id: &str) -> Option<&UserRecord> {
        self.records.iter().find(|r| r.user_id() == user_id)
    }

    pub fn write_exclusions<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.exclusions)?;
        Ok(())
    }
}

/// Step rows grouped per user; `None` marks a period with no row.
pub type StepGrid = BTreeMap<String, Vec<Option<u32>>>;

fn check_header(headers: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(Error::Malformed {
            line: 1,
            message: format!("expected header {:?}, got {:?}", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input)
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, line: u64, name: &str) -> Result<&'a str> {
    rec.get(idx).ok_or_else(|| Error::Malformed {
        line,
        message: format!("missing field {name}"),
    })
}

fn parse_num<T: FromStr>(raw: &str, line: u64, name: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::Malformed {
        line,
        message: format!("{name} {raw:?} is not a non-negative integer"),
    })
}

/// Parses the long-format steps CSV (`user_id,day,period,steps`).
///
/// Rows may arrive in any order. A repeated `(user_id, day, period)` is an
/// error. Missing periods are left as `None` for the caller to judge.
pub fn parse_steps<R: Read>(input: R) -> Result<StepGrid> {
    let mut rdr = csv_reader(input);
    let headers = rdr.headers()?.clone();
    let mut grid = StepGrid::new();
    if headers.is_empty() {
        return Ok(grid);
    }
    check_header(&headers, &STEPS_HEADER)?;

    let mut rec = csv::StringRecord::new();
    while rdr.read_record(&mut rec)? {
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != STEPS_HEADER.len() {
            return Err(Error::Malformed {
                line,
                message: format!("expected 4 fields, got {}", rec.len()),
            });
        }
        let user = field(&rec, 0, line, "user_id")?;
        if user.is_empty() {
            return Err(Error::Malformed {
                line,
                message: "empty user_id".into(),
            });
        }
        let day: usize = parse_num(field(&rec, 1, line, "day")?, line, "day")?;
        let period: usize = parse_num(field(&rec, 2, line, "period")?, line, "period")?;
        let steps: u32 = parse_num(field(&rec, 3, line, "steps")?, line, "steps")?;
        if day >= DAYS_PER_WEEK {
            return Err(Error::Malformed {
                line,
                message: format!("day {day} outside [0, {}]", DAYS_PER_WEEK - 1),
            });
        }
        if period >= PERIODS_PER_DAY {
            return Err(Error::Malformed {
                line,
                message: format!("period {period} outside [0, {}]", PERIODS_PER_DAY - 1),
            });
        }
        let slots = grid
            .entry(user.to_string())
            .or_insert_with(|| vec![None; PERIODS_PER_WEEK]);
        let slot = &mut slots[day * PERIODS_PER_DAY + period];
        if slot.is_some() {
            return Err(Error::Malformed {
                line,
                message: format!("duplicate row for user {user} day {day} period {period}"),
            });
        }
        *slot = Some(steps);
    }
    Ok(grid)
}

/// Parses the attributes CSV (`user_id,gender,age,education`).
///
/// Rows with an empty field parse to `None` (missing attributes). Invalid
/// non-empty values are malformed rows. Duplicate ids are a hard error.
pub fn parse_attributes<R: Read>(input: R) -> Result<BTreeMap<String, Option<Attributes>>> {
    let mut rdr = csv_reader(input);
    let headers = rdr.headers()?.clone();
    let mut out = BTreeMap::new();
    if headers.is_empty() {
        return Ok(out);
    }
    check_header(&headers, &ATTRIBUTES_HEADER)?;

    let mut rec = csv::StringRecord::new();
    while rdr.read_record(&mut rec)? {
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != ATTRIBUTES_HEADER.len() {
            return Err(Error::Malformed {
                line,
                message: format!("expected 4 fields, got {}", rec.len()),
            });
        }
        let user = field(&rec, 0, line, "user_id")?;
        if user.is_empty() {
            return Err(Error::Malformed {
                line,
                message: "empty user_id".into(),
            });
        }
        let raw: Vec<&str> = (1..4).map(|i| rec.get(i).unwrap_or("")).collect();
        let attrs = if raw.iter().any(|s| s.is_empty()) {
            None
        } else {
            let malformed = |e: Error| Error::Malformed {
                line,
                message: e.to_string(),
            };
            let gender: Gender = raw[0].parse().map_err(malformed)?;
            let age: u32 = parse_num(raw[1], line, "age")?;
            let education: Education = raw[2].parse().map_err(malformed)?;
            Some(Attributes::new(gender, age, education).map_err(malformed)?)
        };
        match out.entry(user.to_string()) {
            Entry::Occupied(_) => {
                return Err(Error::Duplicate {
                    what: "user_id",
                    key: user.to_string(),
                })
            }
            Entry::Vacant(v) => {
                v.insert(attrs);
            }
        }
    }
    Ok(out)
}

/// Joins parsed steps and attributes, excluding incomplete users.
pub fn assemble_cohort(
    steps: StepGrid,
    mut attrs: BTreeMap<String, Option<Attributes>>,
    age_threshold: u32,
) -> Result<Cohort> {
    let mut records = Vec::new();
    let mut exclusions = Vec::new();
    for (user_id, slots) in steps {
        let present = slots.iter().filter(|s| s.is_some()).count();
        let user_attrs = attrs.remove(&user_id);
        if present < PERIODS_PER_WEEK {
            exclusions.push(Exclusion {
                user_id,
                reason: format!("incomplete step grid: {present} of {PERIODS_PER_WEEK} periods"),
            });
            continue;
        }
        let attrs = match user_attrs {
            Some(Some(a)) => a,
            Some(None) => {
                exclusions.push(Exclusion {
                    user_id,
                    reason: "missing attribute values".into(),
                });
                continue;
            }
            None => {
                exclusions.push(Exclusion {
                    user_id,
                    reason: "absent from attributes file".into(),
                });
                continue;
            }
        };
        let counts = slots.into_iter().map(|s| s.unwrap_or(0)).collect();
        let series = StepSeries::new(user_id, counts)?;
        records.push(UserRecord::new(series, attrs, age_threshold));
    }
    for user_id in attrs.into_keys() {
        exclusions.push(Exclusion {
            user_id,
            reason: "absent from steps file".into(),
        });
    }
    exclusions.sort_by(|a, b| a.user_id.cmp(&b.user_id));

    let mut cohort = Cohort::from_records(records, age_threshold)?;
    cohort.exclusions = exclusions;
    Ok(cohort)
}

/// Reads and validates a cohort from the steps and attributes CSV files.
pub fn load_cohort(steps_file: &Path, attrs_file: &Path, age_threshold: u32) -> Result<Cohort> {
    let steps = File::open(steps_file).map_err(|e| Error::io(steps_file, e))?;
    let attrs = File::open(attrs_file).map_err(|e| Error::io(attrs_file, e))?;
    let grid = parse_steps(std::io::BufReader::new(steps))?;
    let attrs = parse_attributes(std::io::BufReader::new(attrs))?;
    assemble_cohort(grid, attrs, age_threshold)
}

pub fn write_steps_csv<W: Write>(out: W, records: &[UserRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(out);
    let io = |e| Error::io("<steps output>", e);
    writeln!(w, "{}", STEPS_HEADER.join(",")).map_err(io)?;
    for r in records {
        for (i, c) in r.series.counts().iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{}",
                r.user_id(),
                i / PERIODS_PER_DAY,
                i % PERIODS_PER_DAY,
                c
            )
            .map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn write_attributes_csv<W: Write>(out: W, records: &[UserRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ATTRIBUTES_HEADER)?;
    for r in records {
        w.write_record([
            r.user_id(),
            r.attrs.gender.as_str(),
            &r.attrs.age.to_string(),
            r.attrs.education.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<attributes output>", e))?;
    Ok(())
}

/// Pearson correlation; `None` when either column has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pairwise Pearson coefficients over (age, education, gender).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: [String; 3],
    /// `None` where a column has zero variance.
    pub values: [[Option<f64>; 3]; 3],
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        self.values[i][j]
    }
}

pub fn attribute_correlation(records: &[UserRecord]) -> Result<CorrelationMatrix> {
    if records.len() < 2 {
        return Err(Error::invalid("correlation needs at least 2 users"));
    }
    let cols: [Vec<f64>; 3] = [
        records.iter().map(|r| f64::from(r.attrs.age)).collect(),
        records.iter().map(|r| r.attrs.education.code()).collect(),
        records.iter().map(|r| r.attrs.gender.code()).collect(),
    ];
    let mut values = [[None; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let v = if i == j {
                pearson(&cols[i], &cols[i]).map(|_| 1.0)
            } else {
                pearson(&cols[i], &cols[j])
            };
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    Ok(CorrelationMatrix {
        names: ["age".into(), "education".into(), "gender".into()],
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_series(id: &str, v: u32) -> StepSeries {
        StepSeries::new(id, vec![v; PERIODS_PER_WEEK]).unwrap()
    }

    fn rec(id: &str, gender: Gender, age: u32, edu: Education) -> UserRecord {
        UserRecord::new(
            flat_series(id, 1),
            Attributes::new(gender, age, edu).unwrap(),
            DEFAULT_AGE_THRESHOLD,
        )
    }

    #[test]
    fn age_boundary() {
        let old = rec("a", Gender::Male, 55, Education::High);
        let young = rec("b", Gender::Male, 54, Education::High);
        assert_eq!(old.labels.age_bin, AgeClass::Old);
        assert_eq!(young.labels.age_bin, AgeClass::Young);
        assert_eq!(old.labels.binary(Attribute::Age), Some(1));
        assert_eq!(young.labels.binary(Attribute::Age), Some(0));
    }

    #[test]
    fn low_education_has_no_label() {
        let r = rec("a", Gender::Female, 40, Education::Low);
        assert_eq!(r.labels.edu_bin, None);
        assert_eq!(r.labels.binary(Attribute::Education), None);
        assert_eq!(r.labels.binary(Attribute::Gender), Some(1));
    }

    #[test]
    fn derive_labels_is_idempotent() {
        let r = rec("a", Gender::Female, 60, Education::Medium);
        let once = derive_labels(r.clone(), 61);
        let twice = derive_labels(once.clone(), 61);
        assert_eq!(once, twice);
        assert_eq!(once.labels.age_bin, AgeClass::Young);
    }

    #[test]
    fn empty_steps_file_gives_empty_cohort() {
        let grid = parse_steps("".as_bytes()).unwrap();
        let attrs = parse_attributes("user_id,gender,age,education\n".as_bytes()).unwrap();
        let c = assemble_cohort(grid, attrs, 55).unwrap();
        assert_eq!(c.stats.n_users, 0);
        assert!(c.is_empty());
    }

    #[test]
    fn malformed_rows_report_line() {
        let csv = "user_id,day,period,steps\nu1,0,0,3\nu1,0,1,-4\n";
        match parse_steps(csv.as_bytes()) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let csv = "user_id,day,period,steps\nu1,7,0,3\n";
        assert!(matches!(
            parse_steps(csv.as_bytes()),
            Err(Error::Malformed { line: 2, .. })
        ));
        let csv = "user,day,period,steps\n";
        assert!(matches!(
            parse_steps(csv.as_bytes()),
            Err(Error::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn duplicate_step_row_is_error() {
        let csv = "user_id,day,period,steps\nu1,0,0,3\nu1,0,0,3\n";
        assert!(matches!(
            parse_steps(csv.as_bytes()),
            Err(Error::Malformed { line: 3, .. })
        ));
    }

    #[test]
    fn duplicate_attribute_user_is_error() {
        let csv = "user_id,gender,age,education\nu1,male,40,high\nu1,female,41,low\n";
        assert!(matches!(
            parse_attributes(csv.as_bytes()),
            Err(Error::Duplicate { .. })
        ));
    }

    #[test]
    fn invalid_attribute_values() {
        for row in ["u1,other,40,high", "u1,male,12,high", "u1,male,40,phd", "u1,male,x,high"] {
            let csv = format!("user_id,gender,age,education\n{row}\n");
            assert!(
                matches!(parse_attributes(csv.as_bytes()), Err(Error::Malformed { line: 2, .. })),
                "{row}"
            );
        }
        let csv = "user_id,gender,age,education\nu1,male,,high\n";
        let parsed = parse_attributes(csv.as_bytes()).unwrap();
        assert_eq!(parsed["u1"], None);
    }

    #[test]
    fn incomplete_and_unmatched_users_are_excluded() {
        let mut grid = StepGrid::new();
        grid.insert("full".into(), vec![Some(2); PERIODS_PER_WEEK]);
        grid.insert("no_attrs".into(), vec![Some(2); PERIODS_PER_WEEK]);
        let mut partial = vec![Some(9); PERIODS_PER_WEEK];
        partial[100] = None;
        grid.insert("partial".into(), partial);
        let attrs = parse_attributes(
            "user_id,gender,age,education\nfull,male,40,high\npartial,male,40,high\nno_steps,female,33,medium\n"
                .as_bytes(),
        )
        .unwrap();
        let c = assemble_cohort(grid, attrs, 55).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.records[0].user_id(), "full");
        // the incomplete user's 9s must not leak into the cohort max
        assert_eq!(c.stats.max_steps, 2);
        let excluded: Vec<&str> = c.exclusions.iter().map(|e| e.user_id.as_str()).collect();
        assert_eq!(excluded, ["no_attrs", "no_steps", "partial"]);

        let mut json = Vec::new();
        c.write_exclusions(&mut json).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&json).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 3);
        assert!(v[0]["reason"].is_string());
    }

    #[test]
    fn max_steps_ignores_order() {
        let mut a = vec![
            rec("a", Gender::Male, 30, Education::High),
            rec("b", Gender::Female, 70, Education::Medium),
        ];
        a[1].series.counts[7] = 44;
        let s1 = CohortStats::compute(&a);
        a.reverse();
        let s2 = CohortStats::compute(&a);
        assert_eq!(s1, s2);
        assert_eq!(s1.max_steps, 44);
        assert_eq!(s1.class_counts["gender"]["female"], 1);
    }

    #[test]
    fn correlation_self_and_negated() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&x, &[3.0; 4]), None);
    }

    #[test]
    fn correlation_matches_pair_sum_oracle() {
        let users = [
            rec("a", Gender::Male, 31, Education::High),
            rec("b", Gender::Female, 48, Education::Medium),
            rec("c", Gender::Female, 66, Education::Low),
            rec("d", Gender::Male, 80, Education::Medium),
        ];
        let m = attribute_correlation(&users).unwrap();
        // r = (nΣxy − ΣxΣy) / sqrt((nΣx² − (Σx)²)(nΣy² − (Σy)²))
        let age = [31.0, 48.0, 66.0, 80.0];
        let edu = [2.0, 1.0, 0.0, 1.0];
        let n = 4.0;
        let sx: f64 = age.iter().sum();
        let sy: f64 = edu.iter().sum();
        let sxy: f64 = age.iter().zip(&edu).map(|(a, b)| a * b).sum();
        let sxx: f64 = age.iter().map(|a| a * a).sum();
        let syy: f64 = edu.iter().map(|a| a * a).sum();
        let oracle = (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
        let got = m.get("age", "education").unwrap();
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
        assert_eq!(m.get("education", "age"), Some(got));
        assert_eq!(m.get("gender", "gender"), Some(1.0));
    }

    #[test]
    fn zero_variance_column_is_undefined() {
        let users = [
            rec("a", Gender::Male, 31, Education::High),
            rec("b", Gender::Male, 48, Education::Medium),
        ];
        let m = attribute_correlation(&users).unwrap();
        assert_eq!(m.get("age", "gender"), None);
        assert_eq!(m.get("gender", "gender"), None);
        assert!(attribute_correlation(&users[..1]).is_err());
    }
}
