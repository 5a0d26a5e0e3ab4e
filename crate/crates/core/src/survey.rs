//! Survey data model: weighted units with possibly-missing categorical items,
//! response patterns, class partitions and the CSV dataset format.
//!
//! Categories are 0-based. A missing item is `None`; there is no sentinel
//! category. Datasets are validated on construction and immutable afterwards.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A categorical item value, `None` when the unit did not respond.
pub type Cat = Option<u32>;

/// Which item cells of a unit were filled by imputation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ImputedCells {
    pub x: bool,
    pub y: bool,
    pub z: bool,
}

impl ImputedCells {
    pub fn any(&self) -> bool {
        self.x || self.y || self.z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub id: u64,
    /// Sampling weight `1/pi`.
    pub weight: f64,
    /// Imputation class, 1-based.
    pub class: u32,
    pub x: Cat,
    pub y: Cat,
    /// `None` when the dataset carries only two items.
    pub z: Option<Cat>,
    pub imputed: ImputedCells,
}

impl Unit {
    pub fn new(id: u64, weight: f64, class: u32, x: Cat, y: Cat) -> Self {
        Self {
            id,
            weight,
            class,
            x,
            y,
            z: None,
            imputed: ImputedCells::default(),
        }
    }

    pub fn with_z(mut self, z: Cat) -> Self {
        self.z = Some(z);
        self
    }

    pub fn inclusion_probability(&self) -> f64 {
        1.0 / self.weight
    }

    pub fn pattern(&self) -> ResponsePattern {
        pattern_of(self)
    }

    pub fn is_complete(&self) -> bool {
        self.x.is_some() && self.y.is_some() && self.z.is_none_or(|z| z.is_some())
    }
}

/// Response pattern over `(x, y)`: `r` = responded, `m` = missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pattern2 {
    Rr,
    Rm,
    Mr,
    Mm,
}

impl Pattern2 {
    pub const ALL: [Pattern2; 4] = [Pattern2::Rr, Pattern2::Rm, Pattern2::Mr, Pattern2::Mm];

    pub fn from_observed(x: bool, y: bool) -> Self {
        match (x, y) {
            (true, true) => Pattern2::Rr,
            (true, false) => Pattern2::Rm,
            (false, true) => Pattern2::Mr,
            (false, false) => Pattern2::Mm,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Pattern2::Rr => "rr",
            Pattern2::Rm => "rm",
            Pattern2::Mr => "mr",
            Pattern2::Mm => "mm",
        }
    }
}

/// Response pattern over `(x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pattern3 {
    pub x: bool,
    pub y: bool,
    pub z: bool,
}

impl Pattern3 {
    pub fn name(self) -> String {
        [self.x, self.y, self.z]
            .iter()
            .map(|&r| if r { 'r' } else { 'm' })
            .collect()
    }

    pub fn is_complete(self) -> bool {
        self.x && self.y && self.z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ResponsePattern {
    Two(Pattern2),
    Three(Pattern3),
}

impl fmt::Display for ResponsePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResponsePattern::Two(p) => f.write_str(p.name()),
            ResponsePattern::Three(p) => f.write_str(&p.name()),
        }
    }
}

pub fn pattern_of(unit: &Unit) -> ResponsePattern {
    match unit.z {
        None => ResponsePattern::Two(Pattern2::from_observed(unit.x.is_some(), unit.y.is_some())),
        Some(z) => ResponsePattern::Three(Pattern3 {
            x: unit.x.is_some(),
            y: unit.y.is_some(),
            z: z.is_some(),
        }),
    }
}

/// Category counts of the items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Categories {
    pub k: u32,
    pub l: u32,
    pub q: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveyDataset {
    units: Vec<Unit>,
    population_size: u64,
    categories: Categories,
}

impl SurveyDataset {
    pub fn new(units: Vec<Unit>, population_size: u64, categories: Categories) -> Result<Self> {
        if population_size == 0 {
            return Err(Error::InvalidDataset("population size must be positive".into()));
        }
        if categories.k == 0 || categories.l == 0 || categories.q == Some(0) {
            return Err(Error::InvalidDataset("category counts must be positive".into()));
        }
        let mut ids = HashSet::with_capacity(units.len());
        for u in &units {
            if !(u.weight.is_finite() && u.weight > 0.0) {
                return Err(Error::InvalidDataset(format!("unit {}: non-positive weight", u.id)));
            }
            if u.weight < 1.0 - 1e-9 {
                return Err(Error::InvalidDataset(format!(
                    "unit {}: weight {} implies inclusion probability above 1",
                    u.id, u.weight
                )));
            }
            if u.class == 0 {
                return Err(Error::InvalidDataset(format!("unit {}: classes are 1-based", u.id)));
            }
            check_cat(u.id, "x", u.x, categories.k)?;
            check_cat(u.id, "y", u.y, categories.l)?;
            match (categories.q, u.z) {
                (Some(q), Some(z)) => check_cat(u.id, "z", z, q)?,
                (None, None) => {}
                (Some(_), None) => return Err(Error::InvalidDataset(format!("unit {}: missing z item", u.id))),
                (None, Some(_)) => {
                    return Err(Error::InvalidDataset(format!(
                        "unit {}: z item in a two-item dataset",
                        u.id
                    )))
                }
            }
            if !ids.insert(u.id) {
                return Err(Error::InvalidDataset(format!("duplicate id {}", u.id)));
            }
        }
        Ok(Self {
            units,
            population_size,
            categories,
        })
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn population_size(&self) -> u64 {
        self.population_size
    }

    pub fn categories(&self) -> Categories {
        self.categories
    }

    pub fn k(&self) -> usize {
        self.categories.k as usize
    }

    pub fn l(&self) -> usize {
        self.categories.l as usize
    }

    pub fn has_z(&self) -> bool {
        self.categories.q.is_some()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.weight).collect()
    }

    pub fn classes(&self) -> Vec<u32> {
        let mut c: Vec<u32> = self.units.iter().map(|u| u.class).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn is_complete(&self) -> bool {
        self.units.iter().all(Unit::is_complete)
    }

    /// Replaces the units, keeping population size and categories.
    pub fn with_units(&self, units: Vec<Unit>) -> Result<Self> {
        Self::new(units, self.population_size, self.categories)
    }

    pub fn into_units(self) -> Vec<Unit> {
        self.units
    }
}

fn check_cat(id: u64, column: &'static str, value: Cat, limit: u32) -> Result<()> {
    match value {
        Some(v) if v >= limit => Err(Error::InvalidDataset(format!(
            "unit {id}: category out of range ({column}={v}, {limit} declared)"
        ))),
        _ => Ok(()),
    }
}

/// Units grouped by imputation class and response pattern.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatternPartition {
    pub sets: BTreeMap<(u32, ResponsePattern), Vec<usize>>,
    pub weight_totals: BTreeMap<(u32, ResponsePattern), f64>,
}

impl PatternPartition {
    pub fn indices(&self, class: u32, pattern: ResponsePattern) -> &[usize] {
        self.sets.get(&(class, pattern)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn weight_total(&self, class: u32, pattern: ResponsePattern) -> f64 {
        self.weight_totals.get(&(class, pattern)).copied().unwrap_or(0.0)
    }

    pub fn size(&self, class: u32, pattern: ResponsePattern) -> usize {
        self.indices(class, pattern).len()
    }
}

pub fn partition_by_class_and_pattern(data: &SurveyDataset) -> PatternPartition {
    let mut part = PatternPartition::default();
    for (i, u) in data.units().iter().enumerate() {
        let key = (u.class, u.pattern());
        part.sets.entry(key).or_default().push(i);
        *part.weight_totals.entry(key).or_insert(0.0) += u.weight;
    }
    part
}

/// Units grouped by imputation class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPartition {
    pub classes: BTreeMap<u32, Vec<usize>>,
}

impl ClassPartition {
    pub fn of(data: &SurveyDataset) -> Self {
        let mut classes: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, u) in data.units().iter().enumerate() {
            classes.entry(u.class).or_default().push(i);
        }
        Self { classes }
    }

    pub fn count(&self) -> usize {
        self.classes.len()
    }

    pub fn weight_total(&self, data: &SurveyDataset, class: u32) -> f64 {
        self.classes
            .get(&class)
            .map(|idx| idx.iter().map(|&i| data.units()[i].weight).sum())
            .unwrap_or(0.0)
    }
}

/// Column names of the CSV dataset format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub id: String,
    pub weight: String,
    pub class: String,
    pub x: String,
    pub y: String,
    pub z: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            id: "id".into(),
            weight: "weight".into(),
            class: "class".into(),
            x: "x".into(),
            y: "y".into(),
            z: "z".into(),
        }
    }
}

/// Sidecar schema for a dataset CSV. Category counts not given here are
/// inferred from the data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    pub population_size: Option<u64>,
    pub k: Option<u32>,
    pub l: Option<u32>,
    pub q: Option<u32>,
    pub columns: ColumnMap,
}

impl Schema {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidSchema(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn for_dataset(data: &SurveyDataset) -> Self {
        let c = data.categories();
        Self {
            population_size: Some(data.population_size()),
            k: Some(c.k),
            l: Some(c.l),
            q: c.q,
            columns: ColumnMap::default(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    /// Conventional sidecar location `<csv>.schema.toml`.
    pub fn sidecar_path(csv: &Path) -> PathBuf {
        let mut s = csv.as_os_str().to_owned();
        s.push(".schema.toml");
        PathBuf::from(s)
    }
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::InputNotFound(path.display().to_string()),
        _ => Error::Io(e),
    })
}

fn parse_cat(row: u64, column: &'static str, raw: &str) -> Result<Cat> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse::<u32>().map(Some).map_err(|_| Error::MalformedRow {
        row,
        message: format!("{column} value {raw:?} is not a non-negative integer"),
    })
}

fn parse_flag(row: u64, raw: &str) -> Result<bool> {
    match raw.trim() {
        "" | "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        other => Err(Error::MalformedRow {
            row,
            message: format!("imputation flag {other:?} is not 0/1"),
        }),
    }
}

/// Parses a dataset from CSV text. Empty cells in item columns are missing
/// values. Optional `x_imputed`/`y_imputed`/`z_imputed` columns restore the
/// imputation flags.
pub fn parse_dataset(text: &str, schema: &Schema) -> Result<SurveyDataset> {
    let population_size = schema
        .population_size
        .ok_or_else(|| Error::InvalidSchema("population size required".into()))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::MalformedRow {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| {
        col(name).ok_or_else(|| Error::MalformedRow {
            row: 1,
            message: format!("missing column {name:?}"),
        })
    };
    let cm = &schema.columns;
    let (ci, cw, cc, cx, cy) = (
        need(&cm.id)?,
        need(&cm.weight)?,
        need(&cm.class)?,
        need(&cm.x)?,
        need(&cm.y)?,
    );
    let cz = col(&cm.z);
    let flags = [col("x_imputed"), col("y_imputed"), col("z_imputed")];

    let mut units = Vec::new();
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::MalformedRow {
            row: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let row = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("");
        let id: u64 = field(ci).parse().map_err(|_| Error::MalformedRow {
            row,
            message: format!("id {:?} is not a non-negative integer", field(ci)),
        })?;
        let weight: f64 = field(cw).parse().map_err(|_| Error::MalformedRow {
            row,
            message: format!("weight {:?} is not a number", field(cw)),
        })?;
        if !(weight.is_finite() && weight > 0.0) {
            return Err(Error::NonPositiveWeight { row });
        }
        let class: u32 = field(cc).parse().map_err(|_| Error::MalformedRow {
            row,
            message: format!("class {:?} is not a positive integer", field(cc)),
        })?;
        if class == 0 {
            return Err(Error::MalformedRow {
                row,
                message: "classes are 1-based".into(),
            });
        }
        if !seen.insert(id) {
            return Err(Error::DuplicateId { row, id });
        }
        let mut unit = Unit::new(
            id,
            weight,
            class,
            parse_cat(row, "x", field(cx))?,
            parse_cat(row, "y", field(cy))?,
        );
        if let Some(cz) = cz {
            unit.z = Some(parse_cat(row, "z", field(cz))?);
        }
        let flag = |i: Option<usize>| i.map_or(Ok(false), |i| parse_flag(row, field(i)));
        unit.imputed = ImputedCells {
            x: flag(flags[0])?,
            y: flag(flags[1])?,
            z: flag(flags[2])?,
        };
        units.push(unit);
        rows.push(row);
    }

    let infer = |declared: Option<u32>, values: &mut dyn Iterator<Item = Cat>| -> u32 {
        declared.unwrap_or_else(|| values.flatten().max().map_or(1, |m| m + 1))
    };
    let k = infer(schema.k, &mut units.iter().map(|u| u.x));
    let l = infer(schema.l, &mut units.iter().map(|u| u.y));
    let q = if cz.is_some() {
        Some(infer(schema.q, &mut units.iter().map(|u| u.z.flatten())))
    } else {
        None
    };
    for (u, &row) in units.iter().zip(&rows) {
        let checks = [
            ("x", u.x, k),
            ("y", u.y, l),
            ("z", u.z.flatten(), q.unwrap_or(u32::MAX)),
        ];
        for (column, value, limit) in checks {
            if let Some(v) = value {
                if v >= limit {
                    return Err(Error::CategoryOutOfRange {
                        row,
                        column,
                        value: v,
                        limit,
                    });
                }
            }
        }
        if u.weight < 1.0 - 1e-9 {
            return Err(Error::MalformedRow {
                row,
                message: format!("weight {} implies inclusion probability above 1", u.weight),
            });
        }
    }
    SurveyDataset::new(units, population_size, Categories { k, l, q })
}

/// Loads a dataset CSV. Population size and category counts come from the
/// schema.
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<SurveyDataset> {
    let text = read_to_string(path)?;
    parse_dataset(&text, schema)
}

/// Serializes a dataset to CSV text. With `emit_flags`, the per-cell
/// imputation flags are written as extra columns.
pub fn dataset_to_csv(data: &SurveyDataset, emit_flags: bool) -> String {
    let fmt_cat = |c: Cat| c.map(|v| v.to_string()).unwrap_or_default();
    let has_z = data.has_z();
    let mut out = String::from("id,weight,class,x,y");
    if has_z {
        out.push_str(",z");
    }
    if emit_flags {
        out.push_str(",x_imputed,y_imputed");
        if has_z {
            out.push_str(",z_imputed");
        }
    }
    out.push('\n');
    for u in data.units() {
        out.push_str(&format!(
            "{},{},{},{},{}",
            u.id,
            u.weight,
            u.class,
            fmt_cat(u.x),
            fmt_cat(u.y)
        ));
        if has_z {
            out.push(',');
            out.push_str(&fmt_cat(u.z.flatten()));
        }
        if emit_flags {
            let b = |f: bool| if f { ",1" } else { ",0" };
            out.push_str(b(u.imputed.x));
            out.push_str(b(u.imputed.y));
            if has_z {
                out.push_str(b(u.imputed.z));
            }
        }
        out.push('\n');
    }
    out
}

/// Writes the dataset CSV and its sidecar schema.
pub fn write_dataset(path: &Path, data: &SurveyDataset, emit_flags: bool) -> Result<()> {
    std::fs::write(path, dataset_to_csv(data, emit_flags))?;
    std::fs::write(Schema::sidecar_path(path), Schema::for_dataset(data).to_toml())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(n: u64) -> Schema {
        Schema {
            population_size: Some(n),
            ..Schema::default()
        }
    }

    #[test]
    fn parses_missing_cells_as_missing() {
        let csv = "id,weight,class,x,y\n1,10,1,0,1\n2,10,1,1,\n3,10,1,1,0\n4,10,1,0,\n";
        let d = parse_dataset(csv, &schema(40)).unwrap();
        assert_eq!(d.len(), 4);
        let part = partition_by_class_and_pattern(&d);
        assert_eq!(part.size(1, ResponsePattern::Two(Pattern2::Rm)), 2);
        assert_eq!(d.categories(), Categories { k: 2, l: 2, q: None });
    }

    #[test]
    fn crlf_is_accepted() {
        let csv = "id,weight,class,x,y\r\n1,1,1,0,1\r\n2,1,1,,\r\n";
        let d = parse_dataset(csv, &schema(2)).unwrap();
        assert_eq!(d.units()[1].pattern(), ResponsePattern::Two(Pattern2::Mm));
    }

    #[test]
    fn negative_weight_reports_row() {
        let csv = "id,weight,class,x,y\n1,-1,1,0,1\n";
        let err = parse_dataset(csv, &schema(2)).unwrap_err();
        assert_eq!(err.to_string(), "non-positive weight at row 2");
    }

    #[test]
    fn declared_category_count_is_enforced() {
        let csv = "id,weight,class,x,y\n1,1,1,0,0\n2,1,1,1,0\n3,1,1,2,0\n";
        let s = Schema {
            k: Some(2),
            ..schema(3)
        };
        let err = parse_dataset(csv, &s).unwrap_err();
        assert!(err.to_string().contains("category out of range"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let csv = "id,weight,class,x,y\n1,1,1,0,0\n1,1,1,1,0\n";
        assert!(matches!(
            parse_dataset(csv, &schema(2)),
            Err(Error::DuplicateId { row: 3, id: 1 })
        ));
    }

    #[test]
    fn malformed_row_reports_row() {
        let csv = "id,weight,class,x,y\n1,1,1,0,0\n2,1,1,a,0\n";
        assert!(matches!(
            parse_dataset(csv, &schema(2)),
            Err(Error::MalformedRow { row: 3, .. })
        ));
    }

    #[test]
    fn population_size_is_required() {
        let csv = "id,weight,class,x,y\n1,1,1,0,0\n";
        assert!(matches!(
            parse_dataset(csv, &Schema::default()),
            Err(Error::InvalidSchema(_))
        ));
    }

    #[test]
    fn column_mapping_renames() {
        let csv = "uid,w,stratum,a,b\n1,2,1,0,1\n";
        let s = Schema {
            columns: ColumnMap {
                id: "uid".into(),
                weight: "w".into(),
                class: "stratum".into(),
                x: "a".into(),
                y: "b".into(),
                z: "c".into(),
            },
            ..schema(2)
        };
        let d = parse_dataset(csv, &s).unwrap();
        assert_eq!(d.units()[0].y, Some(1));
    }

    #[test]
    fn patterns() {
        let u = Unit::new(1, 1.0, 1, Some(1), None);
        assert_eq!(pattern_of(&u).to_string(), "rm");
        let u = Unit::new(1, 1.0, 1, None, None);
        assert_eq!(pattern_of(&u).to_string(), "mm");
        let u = Unit::new(1, 1.0, 1, Some(0), Some(1)).with_z(None);
        assert_eq!(pattern_of(&u).to_string(), "rrm");
    }

    #[test]
    fn partition_counts() {
        let units = vec![
            Unit::new(1, 1.0, 1, Some(0), Some(0)),
            Unit::new(2, 1.0, 1, Some(1), Some(0)),
            Unit::new(3, 1.0, 1, None, Some(0)),
            Unit::new(4, 1.0, 1, None, None),
        ];
        let d = SurveyDataset::new(units, 4, Categories { k: 2, l: 2, q: None }).unwrap();
        let p = partition_by_class_and_pattern(&d);
        let two = ResponsePattern::Two;
        assert_eq!(p.size(1, two(Pattern2::Rr)), 2);
        assert_eq!(p.size(1, two(Pattern2::Rm)), 0);
        assert_eq!(p.size(1, two(Pattern2::Mr)), 1);
        assert_eq!(p.size(1, two(Pattern2::Mm)), 1);
        assert_eq!(p.weight_total(1, two(Pattern2::Rr)), 2.0);

        let empty = SurveyDataset::new(vec![], 4, Categories { k: 2, l: 2, q: None }).unwrap();
        assert!(partition_by_class_and_pattern(&empty).sets.is_empty());

        let units = vec![
            Unit::new(1, 1.0, 1, Some(0), Some(0)),
            Unit::new(2, 1.0, 2, Some(0), Some(0)),
        ];
        let d = SurveyDataset::new(units, 4, Categories { k: 2, l: 2, q: None }).unwrap();
        let keys: Vec<_> = partition_by_class_and_pattern(&d).sets.into_keys().collect();
        assert_eq!(keys, vec![(1, two(Pattern2::Rr)), (2, two(Pattern2::Rr))]);
    }

    #[test]
    fn class_partition_is_exhaustive() {
        let units = vec![
            Unit::new(1, 2.0, 2, Some(0), Some(0)),
            Unit::new(2, 3.0, 1, None, Some(0)),
            Unit::new(3, 4.0, 2, None, None),
        ];
        let d = SurveyDataset::new(units, 9, Categories { k: 2, l: 2, q: None }).unwrap();
        let cp = ClassPartition::of(&d);
        assert_eq!(cp.count(), 2);
        assert_eq!(cp.weight_total(&d, 2), 6.0);
        assert_eq!(cp.classes.values().map(Vec::len).sum::<usize>(), 3);
    }
}
