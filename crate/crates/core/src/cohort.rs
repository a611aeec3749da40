//! Subject x visit tables with age labels, acquisition site, diagnosis and features.
//!
//! CSV layout (UTF-8, comma separated, header required):
//!
//! ```text
//! subject_id,visit_index,visit_time,site,age,group,f0,f1,...,f{p-1}
//! ```
//!
//! `group` is one of `HC`, `sMCI`, `pMCI`, `AD`. Numbers use `.` as decimal
//! separator. Parse errors report the 1-based line number in the file.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    #[serde(rename = "HC")]
    Hc,
    #[serde(rename = "sMCI")]
    SMci,
    #[serde(rename = "pMCI")]
    PMci,
    #[serde(rename = "AD")]
    Ad,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::Hc, Group::SMci, Group::PMci, Group::Ad];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Hc => "HC",
            Group::SMci => "sMCI",
            Group::PMci => "pMCI",
            Group::Ad => "AD",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "HC" => Ok(Group::Hc),
            "sMCI" => Ok(Group::SMci),
            "pMCI" => Ok(Group::PMci),
            "AD" => Ok(Group::Ad),
            other => Err(invalid(format!("unknown group '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortRow {
    pub subject_id: String,
    pub visit_index: u32,
    /// Years since the subject's baseline visit.
    pub visit_time: f64,
    pub site: String,
    /// Chronological age in years.
    pub age: f64,
    pub group: Group,
    pub features: Vec<f64>,
}

/// Validated cohort table.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    rows: Vec<CohortRow>,
    feature_dim: usize,
}

impl Cohort {
    pub fn new(rows: Vec<CohortRow>) -> Result<Self> {
        let feature_dim = rows.first().map_or(0, |r| r.features.len());
        let mut keys = BTreeSet::new();
        let mut subjects: HashMap<&str, (&str, Group)> = HashMap::new();
        for (i, r) in rows.iter().enumerate() {
            row_check(r, feature_dim).map_err(|m| Error::Parse { row: i, message: m })?;
            if !keys.insert((r.subject_id.as_str(), r.visit_index)) {
                return Err(Error::Parse {
                    row: i,
                    message: format!("duplicate visit ({}, {})", r.subject_id, r.visit_index),
                });
            }
            if let Some(msg) = consistency(&mut subjects, r) {
                return Err(Error::Parse {
                    row: i,
                    message: msg,
                });
            }
        }
        Ok(Self { rows, feature_dim })
    }

    pub fn rows(&self) -> &[CohortRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Feature matrix of the selected rows.
    pub fn features<T: Scalar>(&self, idx: &[usize]) -> Matrix<T> {
        let mut data = Vec::with_capacity(idx.len() * self.feature_dim);
        for &i in idx {
            data.extend(self.rows[i].features.iter().map(|&v| T::lit(v)));
        }
        Matrix::from_vec(idx.len(), self.feature_dim, data).expect("uniform feature width")
    }

    pub fn ages<T: Scalar>(&self, idx: &[usize]) -> Vec<T> {
        idx.iter().map(|&i| T::lit(self.rows[i].age)).collect()
    }

    /// Distinct subject ids in sorted order.
    pub fn subjects(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.rows.iter().map(|r| r.subject_id.as_str()).collect();
        set.into_iter().collect()
    }

    /// Distinct sites in sorted order.
    pub fn sites(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.rows.iter().map(|r| r.site.as_str()).collect();
        set.into_iter().collect()
    }

    /// Row index of each subject's earliest visit.
    pub fn baseline_rows(&self) -> BTreeMap<&str, usize> {
        let mut out: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, r) in self.rows.iter().enumerate() {
            out.entry(r.subject_id.as_str())
                .and_modify(|j| {
                    if r.visit_index < self.rows[*j].visit_index {
                        *j = i;
                    }
                })
                .or_insert(i);
        }
        out
    }

    pub fn group_counts(&self) -> BTreeMap<Group, usize> {
        let mut out = BTreeMap::new();
        for &i in self.baseline_rows().values() {
            *out.entry(self.rows[i].group).or_insert(0) += 1;
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = [
            "subject_id",
            "visit_index",
            "visit_time",
            "site",
            "age",
            "group",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((0..self.feature_dim).map(|j| format!("f{j}")));
        w.write_record(&header).map_err(csv_io)?;
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        for r in &self.rows {
            rec.clear();
            rec.push(r.subject_id.clone());
            rec.push(r.visit_index.to_string());
            rec.push(fmt_f64(r.visit_time));
            rec.push(r.site.clone());
            rec.push(fmt_f64(r.age));
            rec.push(r.group.as_str().to_string());
            rec.extend(r.features.iter().map(|&v| fmt_f64(v)));
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::Parse {
                row: 1,
                message: e.to_string(),
            })?
            .clone();
        let fixed = [
            "subject_id",
            "visit_index",
            "visit_time",
            "site",
            "age",
            "group",
        ];
        let mut col = HashMap::new();
        for name in fixed {
            let pos = header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Parse {
                    row: 1,
                    message: format!("missing column '{name}'"),
                })?;
            col.insert(name, pos);
        }
        let mut feature_cols = Vec::new();
        for j in 0.. {
            match header.iter().position(|h| h.trim() == format!("f{j}")) {
                Some(p) => feature_cols.push(p),
                None => break,
            }
        }
        if feature_cols.is_empty() {
            return Err(Error::Parse {
                row: 1,
                message: "missing feature columns f0..".into(),
            });
        }

        let mut rows = Vec::new();
        let mut keys = BTreeSet::new();
        let mut subjects: HashMap<String, (String, Group)> = HashMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::Parse {
                row: line,
                message: e.to_string(),
            })?;
            let perr = |message: String| Error::Parse { row: line, message };
            let field = |name: &str| -> Result<&str> {
                rec.get(col[name])
                    .map(str::trim)
                    .ok_or_else(|| perr(format!("missing value for '{name}'")))
            };
            let num = |name: &str| -> Result<f64> {
                let s = field(name)?;
                s.parse::<f64>()
                    .map_err(|_| perr(format!("malformed number '{s}' in column '{name}'")))
            };
            let visit_index = field("visit_index")?.parse::<u32>().map_err(|_| {
                perr(format!(
                    "malformed visit_index '{}'",
                    field("visit_index").unwrap_or("")
                ))
            })?;
            let group = field("group")?
                .parse::<Group>()
                .map_err(|e| perr(e.to_string()))?;
            let mut features = Vec::with_capacity(feature_cols.len());
            for (j, &c) in feature_cols.iter().enumerate() {
                let s = rec
                    .get(c)
                    .map(str::trim)
                    .ok_or_else(|| perr(format!("missing value for 'f{j}'")))?;
                features.push(
                    s.parse::<f64>()
                        .map_err(|_| perr(format!("malformed number '{s}' in column 'f{j}'")))?,
                );
            }
            let row = CohortRow {
                subject_id: field("subject_id")?.to_string(),
                visit_index,
                visit_time: num("visit_time")?,
                site: field("site")?.to_string(),
                age: num("age")?,
                group,
                features,
            };
            row_check(&row, feature_cols.len()).map_err(perr)?;
            if !keys.insert((row.subject_id.clone(), row.visit_index)) {
                return Err(perr(format!(
                    "duplicate visit ({}, {})",
                    row.subject_id, row.visit_index
                )));
            }
            match subjects.get(&row.subject_id) {
                Some((site, group)) if site != &row.site || *group != row.group => {
                    return Err(perr(format!(
                        "subject {} changes site or group across visits",
                        row.subject_id
                    )));
                }
                Some(_) => {}
                None => {
                    subjects.insert(row.subject_id.clone(), (row.site.clone(), row.group));
                }
            }
            rows.push(row);
        }
        Ok(Self {
            feature_dim: feature_cols.len(),
            rows,
        })
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

/// Shortest representation that parses back to the same `f64`.
fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn row_check(r: &CohortRow, width: usize) -> std::result::Result<(), String> {
    if r.subject_id.is_empty() {
        return Err("empty subject_id".into());
    }
    if r.site.is_empty() {
        return Err("empty site".into());
    }
    if !r.age.is_finite() || !r.visit_time.is_finite() {
        return Err("age and visit_time must be finite".into());
    }
    if r.features.len() != width {
        return Err(format!("{} features, expected {width}", r.features.len()));
    }
    if r.features.iter().any(|v| !v.is_finite()) {
        return Err("non-finite feature value".into());
    }
    Ok(())
}

fn consistency<'a>(
    seen: &mut HashMap<&'a str, (&'a str, Group)>,
    r: &'a CohortRow,
) -> Option<String> {
    match seen.get(r.subject_id.as_str()) {
        Some(&(site, group)) if site != r.site || group != r.group => Some(format!(
            "subject {} changes site or group across visits",
            r.subject_id
        )),
        Some(_) => None,
        None => {
            seen.insert(&r.subject_id, (&r.site, r.group));
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "subject_id,visit_index,visit_time,site,age,group,f0,f1\n\
        s1,0,0,A,70.5,HC,0.1,-2\n\
        s2,0,0,B,65,AD,1e-3,3.25\n";

    #[test]
    fn parses_minimal_file() {
        let c = Cohort::read_csv(MINIMAL.as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.feature_dim(), 2);
        assert_eq!(c.rows()[1].group, Group::Ad);
        assert_eq!(c.rows()[1].features, vec![1e-3, 3.25]);
        assert_eq!(c.sites(), vec!["A", "B"]);
    }

    fn parse_err(text: &str) -> (usize, String) {
        match Cohort::read_csv(text.as_bytes()) {
            Err(Error::Parse { row, message }) => (row, message),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_key_names_row() {
        let text = format!("{MINIMAL}s1,0,1,A,71.5,HC,0,0\n");
        let (row, msg) = parse_err(&text);
        assert_eq!(row, 4);
        assert!(msg.contains("duplicate"), "{msg}");
    }

    #[test]
    fn malformed_inputs() {
        let (row, msg) =
            parse_err("subject_id,visit_index,visit_time,site,group,f0\ns1,0,0,A,HC,1\n");
        assert_eq!(row, 1);
        assert!(msg.contains("age"));

        let (row, msg) = parse_err(&MINIMAL.replace("65,AD", "sixty,AD"));
        assert_eq!(row, 3);
        assert!(msg.contains("malformed"), "{msg}");

        let (row, _) = parse_err(&format!("{MINIMAL}s1,1,1,B,71.5,HC,0,0\n"));
        assert_eq!(row, 4);

        let (_, msg) = parse_err(&MINIMAL.replace(",AD,", ",MCI,"));
        assert!(msg.contains("group"));

        let (row, _) = parse_err(&MINIMAL.replace("3.25", "NaN"));
        assert_eq!(row, 3);
    }

    #[test]
    fn write_then_read_round_trips() {
        let c = Cohort::read_csv(MINIMAL.as_bytes()).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("subject_id,visit_index,visit_time,site,age,group,f0,f1\n"));
        assert_eq!(Cohort::read_csv(buf.as_slice()).unwrap(), c);
    }

    #[test]
    fn constructor_validates() {
        let row = |id: &str, v: u32, site: &str| CohortRow {
            subject_id: id.into(),
            visit_index: v,
            visit_time: v as f64,
            site: site.into(),
            age: 60.0,
            group: Group::Hc,
            features: vec![0.0, 1.0],
        };
        assert!(Cohort::new(vec![row("a", 0, "X"), row("a", 1, "X")]).is_ok());
        assert!(Cohort::new(vec![row("a", 0, "X"), row("a", 0, "X")]).is_err());
        assert!(Cohort::new(vec![row("a", 0, "X"), row("a", 1, "Y")]).is_err());
        let c = Cohort::new(vec![row("b", 2, "X"), row("b", 0, "X"), row("a", 0, "X")]).unwrap();
        assert_eq!(c.baseline_rows()["b"], 1);
        assert_eq!(c.subjects(), vec!["a", "b"]);
    }
}
