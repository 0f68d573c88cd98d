//! Unit records, the fixed category/stratum vocabularies, and validated datasets.
//!
//! Post-treatment behaviour takes exactly three values: the program itself
//! (`e`), a low-quality alternative (`lq`) and a high-quality alternative
//! (`hq`). Monotonicity and irrelevant alternatives leave five principal
//! strata, which are the only ones [`Stratum`] can represent.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Randomized assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Control,
    Treatment,
}

impl Arm {
    pub const ALL: [Arm; 2] = [Arm::Control, Arm::Treatment];

    pub fn from_z(z: u8) -> Option<Arm> {
        match z {
            0 => Some(Arm::Control),
            1 => Some(Arm::Treatment),
            _ => None,
        }
    }

    pub fn z(self) -> u8 {
        match self {
            Arm::Control => 0,
            Arm::Treatment => 1,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::Control => "control",
            Arm::Treatment => "treatment",
        })
    }
}

/// Observed post-treatment category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    E,
    Lq,
    Hq,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::E, Category::Lq, Category::Hq];

    pub fn label(self) -> &'static str {
        match self {
            Category::E => "e",
            Category::Lq => "lq",
            Category::Hq => "hq",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One of the six directly identifiable `(z, s)` groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObservedGroup {
    pub arm: Arm,
    pub category: Category,
}

impl ObservedGroup {
    pub const ALL: [ObservedGroup; 6] = [
        ObservedGroup::new(Arm::Control, Category::E),
        ObservedGroup::new(Arm::Control, Category::Lq),
        ObservedGroup::new(Arm::Control, Category::Hq),
        ObservedGroup::new(Arm::Treatment, Category::E),
        ObservedGroup::new(Arm::Treatment, Category::Lq),
        ObservedGroup::new(Arm::Treatment, Category::Hq),
    ];

    pub const fn new(arm: Arm, category: Category) -> Self {
        ObservedGroup { arm, category }
    }

    fn slot(self) -> usize {
        let a = match self.arm {
            Arm::Control => 0,
            Arm::Treatment => 3,
        };
        let c = match self.category {
            Category::E => 0,
            Category::Lq => 1,
            Category::Hq => 2,
        };
        a + c
    }
}

impl fmt::Display for ObservedGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.arm.z(), self.category)
    }
}

/// A value for each of the six observed groups.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PerGroup<T>(pub [T; 6]);

impl<T> PerGroup<T> {
    pub fn from_fn(mut f: impl FnMut(ObservedGroup) -> T) -> Self {
        PerGroup(ObservedGroup::ALL.map(&mut f))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ObservedGroup, &T)> {
        ObservedGroup::ALL.into_iter().zip(self.0.iter())
    }
}

impl<T: Serialize> Serialize for PerGroup<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_map(self.iter().map(|(g, v)| (g.to_string(), v)))
    }
}

impl<T> Index<ObservedGroup> for PerGroup<T> {
    type Output = T;
    fn index(&self, g: ObservedGroup) -> &T {
        &self.0[g.slot()]
    }
}

impl<T> IndexMut<ObservedGroup> for PerGroup<T> {
    fn index_mut(&mut self, g: ObservedGroup) -> &mut T {
        &mut self.0[g.slot()]
    }
}

/// Principal strata surviving monotonicity and irrelevant alternatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratum {
    Eat,
    Lqat,
    Hqat,
    Lqc,
    Hqc,
}

impl Stratum {
    pub const ALL: [Stratum; 5] = [
        Stratum::Eat,
        Stratum::Lqat,
        Stratum::Hqat,
        Stratum::Lqc,
        Stratum::Hqc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stratum::Eat => "eat",
            Stratum::Lqat => "lqat",
            Stratum::Hqat => "hqat",
            Stratum::Lqc => "lqc",
            Stratum::Hqc => "hqc",
        }
    }

    /// Stratum implied by the pair of potential behaviours, or `None` for
    /// the four excluded cells.
    pub fn from_behaviour(s0: Category, s1: Category) -> Option<Stratum> {
        use Category::*;
        match (s0, s1) {
            (E, E) => Some(Stratum::Eat),
            (Lq, E) => Some(Stratum::Lqc),
            (Hq, E) => Some(Stratum::Hqc),
            (Lq, Lq) => Some(Stratum::Lqat),
            (Hq, Hq) => Some(Stratum::Hqat),
            _ => None,
        }
    }

    pub fn is_complier(self) -> bool {
        matches!(self, Stratum::Lqc | Stratum::Hqc)
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A value for each principal stratum, keyed by name in config files.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerStratum<T> {
    pub eat: T,
    pub lqat: T,
    pub hqat: T,
    pub lqc: T,
    pub hqc: T,
}

impl<T> PerStratum<T> {
    pub fn from_fn(mut f: impl FnMut(Stratum) -> T) -> Self {
        PerStratum {
            eat: f(Stratum::Eat),
            lqat: f(Stratum::Lqat),
            hqat: f(Stratum::Hqat),
            lqc: f(Stratum::Lqc),
            hqc: f(Stratum::Hqc),
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> PerStratum<U> {
        PerStratum::from_fn(|s| f(&self[s]))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Stratum, &T)> {
        Stratum::ALL.into_iter().map(move |s| (s, &self[s]))
    }
}

impl<T> Index<Stratum> for PerStratum<T> {
    type Output = T;
    fn index(&self, s: Stratum) -> &T {
        match s {
            Stratum::Eat => &self.eat,
            Stratum::Lqat => &self.lqat,
            Stratum::Hqat => &self.hqat,
            Stratum::Lqc => &self.lqc,
            Stratum::Hqc => &self.hqc,
        }
    }
}

impl<T> IndexMut<Stratum> for PerStratum<T> {
    fn index_mut(&mut self, s: Stratum) -> &mut T {
        match s {
            Stratum::Eat => &mut self.eat,
            Stratum::Lqat => &mut self.lqat,
            Stratum::Hqat => &mut self.hqat,
            Stratum::Lqc => &mut self.lqc,
            Stratum::Hqc => &mut self.hqc,
        }
    }
}

/// One experimental subject.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    pub unit_id: String,
    pub z: Arm,
    pub s: Category,
    pub y: bool,
    /// Probability of assignment to treatment, strictly inside (0, 1).
    pub prob_treat: f64,
    /// Covariate values aligned with the owning dataset's schema.
    pub covariates: Vec<Option<f64>>,
}

impl UnitRecord {
    /// Inverse probability of the arm actually received.
    pub fn weight(&self) -> f64 {
        match self.z {
            Arm::Treatment => 1.0 / self.prob_treat,
            Arm::Control => 1.0 / (1.0 - self.prob_treat),
        }
    }

    pub fn group(&self) -> ObservedGroup {
        ObservedGroup::new(self.z, self.s)
    }

    pub fn outcome(&self) -> f64 {
        if self.y {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CovariateInfo {
    pub name: String,
    pub complete: bool,
}

/// Validated, immutable collection of unit records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<UnitRecord>,
    schema: Vec<CovariateInfo>,
}

impl Dataset {
    /// Builds a dataset from already-typed records, checking every invariant.
    pub fn from_records(covariate_names: Vec<String>, records: Vec<UnitRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::NoRecords);
        }
        for (i, r) in records.iter().enumerate() {
            if !(r.prob_treat > 0.0 && r.prob_treat < 1.0) {
                return Err(Error::InvalidRecord {
                    row: i + 1,
                    message: format!("prob_treat {} outside (0,1)", r.prob_treat),
                });
            }
            if r.covariates.len() != covariate_names.len() {
                return Err(Error::InvalidRecord {
                    row: i + 1,
                    message: format!(
                        "{} covariate values for {} covariates",
                        r.covariates.len(),
                        covariate_names.len()
                    ),
                });
            }
        }
        let schema = covariate_names
            .into_iter()
            .enumerate()
            .map(|(j, name)| CovariateInfo {
                complete: records.iter().all(|r| r.covariates[j].is_some()),
                name,
            })
            .collect();
        Ok(Dataset { records, schema })
    }

    pub fn records(&self) -> &[UnitRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn schema(&self) -> &[CovariateInfo] {
        &self.schema
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.schema.iter().map(|c| c.name.clone()).collect()
    }

    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        self.schema
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
    }

    pub fn weights(&self) -> Vec<f64> {
        self.records.iter().map(UnitRecord::weight).collect()
    }

    pub fn group_counts(&self) -> PerGroup<usize> {
        let mut counts = PerGroup::default();
        for r in &self.records {
            counts[r.group()] += 1;
        }
        counts
    }

    /// Borrowed view over every record, in order.
    pub fn view(&self) -> Vec<&UnitRecord> {
        self.records.iter().collect()
    }
}

/// Record indices for each observed group. Every record lands in exactly one group.
pub fn group_partition(ds: &Dataset) -> PerGroup<Vec<usize>> {
    let mut groups: PerGroup<Vec<usize>> = PerGroup::default();
    for (i, r) in ds.records().iter().enumerate() {
        groups[r.group()].push(i);
    }
    groups
}

/// Labels accepted for each category role at ingest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CategoryAliases {
    pub e: Vec<String>,
    pub lq: Vec<String>,
    pub hq: Vec<String>,
}

impl Default for CategoryAliases {
    fn default() -> Self {
        CategoryAliases {
            e: vec!["e".into()],
            lq: vec!["lq".into()],
            hq: vec!["hq".into()],
        }
    }
}

impl CategoryAliases {
    pub fn resolve(&self, label: &str) -> Option<Category> {
        let label = label.trim();
        let hit = |v: &Vec<String>| v.iter().any(|a| a == label);
        if hit(&self.e) {
            Some(Category::E)
        } else if hit(&self.lq) {
            Some(Category::Lq)
        } else if hit(&self.hq) {
            Some(Category::Hq)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestOptions {
    pub aliases: CategoryAliases,
    /// Dataset-wide assignment probability used when no `prob_treat` column exists.
    pub default_prob_treat: Option<f64>,
}

/// Untyped rows as parsed from external input.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

const REQUIRED: [&str; 4] = ["unit_id", "z", "s", "y"];

fn is_missing(token: &str) -> bool {
    matches!(token.trim(), "" | "NA" | "na" | "NaN" | "nan" | ".")
}

/// Validates raw rows into a [`Dataset`]. Fails on the first bad row.
pub fn validate_dataset(raw: &RawTable, opts: &IngestOptions) -> Result<Dataset> {
    if raw.rows.is_empty() {
        return Err(Error::NoRecords);
    }
    let col = |name: &str| raw.header.iter().position(|h| h.trim() == name);
    let mut fixed = [0usize; 4];
    for (slot, name) in fixed.iter_mut().zip(REQUIRED) {
        *slot = col(name).ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }
    let [id_col, z_col, s_col, y_col] = fixed;
    let p_col = col("prob_treat");
    if p_col.is_none() && opts.default_prob_treat.is_none() {
        return Err(Error::MissingColumn("prob_treat".into()));
    }
    let cov_cols: Vec<usize> = (0..raw.header.len())
        .filter(|&j| {
            let h = raw.header[j].trim();
            !REQUIRED.contains(&h) && h != "prob_treat"
        })
        .collect();
    let names: Vec<String> = cov_cols
        .iter()
        .map(|&j| raw.header[j].trim().to_string())
        .collect();

    let mut records = Vec::with_capacity(raw.rows.len());
    for (i, row) in raw.rows.iter().enumerate() {
        let row_no = i + 1;
        let bad = |message: String| Error::InvalidRecord {
            row: row_no,
            message,
        };
        if row.len() != raw.header.len() {
            return Err(bad(format!(
                "{} fields, header has {}",
                row.len(),
                raw.header.len()
            )));
        }
        let field = |j: usize| row[j].trim();
        if is_missing(field(id_col)) {
            return Err(bad("missing unit_id".into()));
        }
        let z = match field(z_col) {
            "0" => Arm::Control,
            "1" => Arm::Treatment,
            other => return Err(bad(format!("z must be 0 or 1, got `{other}`"))),
        };
        let s = opts
            .aliases
            .resolve(field(s_col))
            .ok_or_else(|| bad(format!("unknown category label `{}`", field(s_col))))?;
        let y = match field(y_col) {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("y must be 0 or 1, got `{other}`"))),
        };
        let prob_treat = match p_col {
            Some(j) if !is_missing(field(j)) => field(j)
                .parse::<f64>()
                .map_err(|_| bad(format!("prob_treat `{}` is not a number", field(j))))?,
            Some(_) => match opts.default_prob_treat {
                Some(p) => p,
                None => return Err(bad("missing prob_treat".into())),
            },
            None => opts.default_prob_treat.unwrap_or(f64::NAN),
        };
        if !(prob_treat > 0.0 && prob_treat < 1.0) {
            return Err(bad(format!("prob_treat {prob_treat} outside (0,1)")));
        }
        let mut covariates = Vec::with_capacity(cov_cols.len());
        for &j in &cov_cols {
            let t = field(j);
            if is_missing(t) {
                covariates.push(None);
            } else {
                let v = t.parse::<f64>().map_err(|_| {
                    bad(format!("covariate `{}` value `{t}` is not a number", raw.header[j]))
                })?;
                if !v.is_finite() {
                    return Err(bad(format!("covariate `{}` is not finite", raw.header[j])));
                }
                covariates.push(Some(v));
            }
        }
        records.push(UnitRecord {
            unit_id: field(id_col).to_string(),
            z,
            s,
            y,
            prob_treat,
            covariates,
        });
    }
    Dataset::from_records(names, records)
}

/// Parses CSV (header row required) into a raw table.
pub fn read_raw_csv<R: Read>(reader: R) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok(RawTable { header, rows })
}

pub fn read_csv<R: Read>(reader: R, opts: &IngestOptions) -> Result<Dataset> {
    validate_dataset(&read_raw_csv(reader)?, opts)
}

/// Writes the dataset in the ingest schema with canonical category labels.
pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["unit_id", "z", "s", "y", "prob_treat"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(ds.covariate_names());
    w.write_record(&header)?;
    for r in ds.records() {
        let mut row = vec![
            r.unit_id.clone(),
            r.z.z().to_string(),
            r.s.label().to_string(),
            u8::from(r.y).to_string(),
            format!("{:?}", r.prob_treat),
        ];
        row.extend(r.covariates.iter().map(|c| match c {
            Some(v) => format!("{v:?}"),
            None => String::new(),
        }));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Summary emitted after ingest, one JSON object per line.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub records: usize,
    pub group_counts: BTreeMap<String, usize>,
    pub covariates: Vec<CovariateSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CovariateSummary {
    pub name: String,
    pub missing: usize,
}

impl ValidationReport {
    pub fn new(ds: &Dataset) -> Self {
        let counts = ds.group_counts();
        ValidationReport {
            records: ds.len(),
            group_counts: counts.iter().map(|(g, &n)| (g.to_string(), n)).collect(),
            covariates: ds
                .schema()
                .iter()
                .enumerate()
                .map(|(j, c)| CovariateSummary {
                    name: c.name.clone(),
                    missing: ds.records().iter().filter(|r| r.covariates[j].is_none()).count(),
                })
                .collect(),
        }
    }

    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        let line = serde_json::json!({"kind": "summary", "records": self.records});
        out.push_str(&line.to_string());
        out.push('\n');
        for (g, n) in &self.group_counts {
            let line = serde_json::json!({"kind": "group", "group": g, "count": n});
            out.push_str(&line.to_string());
            out.push('\n');
        }
        for c in &self.covariates {
            let line = serde_json::json!({"kind": "covariate", "name": c.name, "missing": c.missing});
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[&str]) -> RawTable {
        read_raw_csv(rows.join("\n").as_bytes()).unwrap()
    }

    #[test]
    fn empty_input_is_rejected() {
        let raw = table(&["unit_id,z,s,y,prob_treat"]);
        assert_eq!(
            validate_dataset(&raw, &IngestOptions::default()),
            Err(Error::NoRecords)
        );
    }

    #[test]
    fn treated_half_probability_weighs_two() {
        let raw = table(&["unit_id,z,s,y,prob_treat", "a,1,e,1,0.5"]);
        let ds = validate_dataset(&raw, &IngestOptions::default()).unwrap();
        assert_eq!(ds.records()[0].weight(), 2.0);
    }

    #[test]
    fn bad_rows_report_their_index() {
        let cases = [
            ("a,1,xx,1,0.5", "unknown category"),
            ("a,1,e,2,0.5", "y must be"),
            ("a,1,e,1,1.0", "outside (0,1)"),
            ("a,1,e,1,0", "outside (0,1)"),
            ("a,3,e,1,0.5", "z must be"),
        ];
        for (row, needle) in cases {
            let raw = table(&["unit_id,z,s,y,prob_treat", "ok,0,lq,0,0.5", row]);
            match validate_dataset(&raw, &IngestOptions::default()) {
                Err(Error::InvalidRecord { row, message }) => {
                    assert_eq!(row, 2);
                    assert!(message.contains(needle), "{message}");
                }
                other => panic!("expected rejection, got {other:?}"),
            }
        }
    }

    #[test]
    fn missing_required_column() {
        let raw = table(&["unit_id,z,y,prob_treat", "a,1,1,0.5"]);
        assert_eq!(
            validate_dataset(&raw, &IngestOptions::default()),
            Err(Error::MissingColumn("s".into()))
        );
    }

    #[test]
    fn constant_probability_shorthand() {
        let raw = table(&["unit_id,z,s,y", "a,0,hq,1"]);
        assert!(validate_dataset(&raw, &IngestOptions::default()).is_err());
        let opts = IngestOptions {
            default_prob_treat: Some(0.25),
            ..Default::default()
        };
        let ds = validate_dataset(&raw, &opts).unwrap();
        assert!((ds.records()[0].weight() - 1.0 / 0.75).abs() < 1e-15);
    }

    #[test]
    fn aliases_map_to_roles() {
        let raw = table(&["unit_id,z,s,y,prob_treat", "a,1,ECHS,1,0.5", "b,0,low,0,0.5"]);
        let opts = IngestOptions {
            aliases: CategoryAliases {
                e: vec!["ECHS".into()],
                lq: vec!["low".into()],
                hq: vec!["high".into()],
            },
            default_prob_treat: None,
        };
        let ds = validate_dataset(&raw, &opts).unwrap();
        assert_eq!(ds.records()[0].s, Category::E);
        assert_eq!(ds.records()[1].s, Category::Lq);
    }

    #[test]
    fn missing_covariates_are_kept() {
        let raw = table(&["unit_id,z,s,y,prob_treat,math", "a,1,e,1,0.5,", "b,0,lq,1,0.5,0.3"]);
        let ds = validate_dataset(&raw, &IngestOptions::default()).unwrap();
        assert_eq!(ds.len(), 2);
        assert!(!ds.schema()[0].complete);
        assert_eq!(ds.records()[1].covariates[0], Some(0.3));
    }

    #[test]
    fn partition_of_all_control_data() {
        let raw = table(&[
            "unit_id,z,s,y,prob_treat",
            "a,0,e,1,0.5",
            "b,0,lq,1,0.5",
            "c,0,hq,0,0.5",
        ]);
        let ds = validate_dataset(&raw, &IngestOptions::default()).unwrap();
        let parts = group_partition(&ds);
        let nonempty = parts.iter().filter(|(_, v)| !v.is_empty()).count();
        assert_eq!(nonempty, 3);
        for (g, v) in parts.iter() {
            assert_eq!(v.is_empty(), g.arm == Arm::Treatment);
        }
    }

    #[test]
    fn records_differing_in_z_split() {
        let raw = table(&["unit_id,z,s,y,prob_treat", "a,0,lq,1,0.5", "b,1,lq,1,0.5"]);
        let ds = validate_dataset(&raw, &IngestOptions::default()).unwrap();
        let parts = group_partition(&ds);
        assert_eq!(parts[ObservedGroup::new(Arm::Control, Category::Lq)], vec![0]);
        assert_eq!(parts[ObservedGroup::new(Arm::Treatment, Category::Lq)], vec![1]);
    }

    #[test]
    fn forbidden_cells_have_no_stratum() {
        use Category::*;
        assert_eq!(Stratum::from_behaviour(E, Lq), None);
        assert_eq!(Stratum::from_behaviour(E, Hq), None);
        assert_eq!(Stratum::from_behaviour(Lq, Hq), None);
        assert_eq!(Stratum::from_behaviour(Hq, Lq), None);
        let valid = Category::ALL
            .iter()
            .flat_map(|&a| Category::ALL.iter().map(move |&b| (a, b)))
            .filter_map(|(a, b)| Stratum::from_behaviour(a, b))
            .count();
        assert_eq!(valid, 5);
    }

    #[test]
    fn validation_report_lines() {
        let raw = table(&["unit_id,z,s,y,prob_treat,x", "a,0,e,1,0.5,", "b,1,lq,1,0.5,2"]);
        let ds = validate_dataset(&raw, &IngestOptions::default()).unwrap();
        let text = ValidationReport::new(&ds).to_json_lines();
        assert_eq!(text.lines().count(), 1 + 6 + 1);
        assert!(text.contains(r#""missing":1"#));
    }
}
