//! Tabular input: column roles, categorical encoding and missing-value fill.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meta_tree::Observations;

/// Roles of the columns of a CSV file, by header name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSchema {
    pub target: String,
    #[serde(default)]
    pub continuous: Vec<String>,
    /// Columns already coded 0/1.
    #[serde(default)]
    pub binary: Vec<String>,
    /// Columns expanded one-hot (a single 0/1 column when there are two levels).
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default)]
    pub ignore: Vec<String>,
    /// Cell values read as missing.
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
}

fn default_missing() -> Vec<String> {
    ["", "NA", "NaN", "?"].iter().map(|s| s.to_string()).collect()
}

impl DataSchema {
    /// Every feature column of `ds` in its own role, continuous first.
    pub fn for_dataset(ds: &Dataset) -> Self {
        let p = ds.n_continuous();
        Self {
            target: ds.target_name.clone(),
            continuous: ds.feature_names[..p].to_vec(),
            binary: ds.feature_names[p..].to_vec(),
            categorical: Vec::new(),
            ignore: Vec::new(),
            missing: default_missing(),
        }
    }
}

/// Explanatory variables split by kind, plus the response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x_continuous: Vec<Vec<f64>>,
    pub x_binary: Vec<Vec<u8>>,
    pub y: Vec<f64>,
    /// Continuous names followed by binary names.
    pub feature_names: Vec<String>,
    pub target_name: String,
}

impl Dataset {
    pub fn new(
        x_continuous: Vec<Vec<f64>>,
        x_binary: Vec<Vec<u8>>,
        y: Vec<f64>,
        feature_names: Vec<String>,
        target_name: String,
    ) -> Result<Self> {
        let n = y.len();
        if x_continuous.len() != n || x_binary.len() != n {
            return Err(Error::InvalidConfig("row counts of features and response differ".into()));
        }
        let p = x_continuous.first().map_or(0, Vec::len);
        let q = x_binary.first().map_or(0, Vec::len);
        for (i, (c, b)) in x_continuous.iter().zip(&x_binary).enumerate() {
            if c.len() != p || b.len() != q {
                return Err(Error::DimensionMismatch {
                    expected: p + q,
                    got: c.len() + b.len(),
                });
            }
            if let Some(j) = b.iter().position(|&v| v > 1) {
                return Err(Error::Data {
                    row: i,
                    column: feature_names.get(p + j).cloned().unwrap_or_default(),
                    message: "binary feature outside {0, 1}".into(),
                });
            }
        }
        if n > 0 && feature_names.len() != p + q {
            return Err(Error::DimensionMismatch {
                expected: p + q,
                got: feature_names.len(),
            });
        }
        Ok(Self {
            x_continuous,
            x_binary,
            y,
            feature_names,
            target_name,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_continuous(&self) -> usize {
        self.feature_names.len() - self.n_binary()
    }

    pub fn n_binary(&self) -> usize {
        self.x_binary.first().map_or_else(
            || self.feature_names.len() - self.x_continuous.first().map_or(0, Vec::len),
            Vec::len,
        )
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        let mut r = self.x_continuous[i].clone();
        r.extend(self.x_binary[i].iter().map(|&b| f64::from(b)));
        r
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.row(i)).collect()
    }

    pub fn observations(&self) -> Result<Observations> {
        let mut obs = Observations::new(self.feature_names.len());
        for i in 0..self.len() {
            obs.push(&self.row(i), self.y[i])?;
        }
        Ok(obs)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = self.feature_names.clone();
        header.push(self.target_name.clone());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.x_continuous[i].iter().map(|v| v.to_string()).collect();
            rec.extend(self.x_binary[i].iter().map(|v| v.to_string()));
            rec.push(self.y[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// How each source column becomes model features; fitted on training data
/// and reused for test data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub target: String,
    pub columns: Vec<ColumnEncoding>,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum ColumnEncoding {
    Continuous { name: String, fill: f64 },
    Binary { name: String, fill: u8 },
    /// Sorted levels; two levels give one column (1 for the second level).
    Categorical { name: String, levels: Vec<String>, fill: String },
}

impl ColumnEncoding {
    fn name(&self) -> &str {
        match self {
            Self::Continuous { name, .. } | Self::Binary { name, .. } | Self::Categorical { name, .. } => name,
        }
    }

    fn output_names(&self) -> Vec<String> {
        match self {
            Self::Continuous { name, .. } | Self::Binary { name, .. } => vec![name.clone()],
            Self::Categorical { name, levels, .. } if levels.len() <= 2 => {
                vec![format!("{name}={}", levels.last().map_or("", String::as_str))]
            }
            Self::Categorical { name, levels, .. } => levels.iter().map(|l| format!("{name}={l}")).collect(),
        }
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok(Table { header, rows })
}

fn column_index(t: &Table, name: &str) -> Result<usize> {
    t.header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::InvalidConfig(format!("column `{name}` not found in the header")))
}

fn parse_cell(row: usize, column: &str, cell: &str) -> Result<f64> {
    cell.parse::<f64>().map_err(|_| Error::Data {
        row,
        column: column.to_string(),
        message: format!("cannot parse `{cell}` as a number"),
    })
}

/// Reads `path` and fits the encoding on it.
pub fn load_csv(path: &Path, schema: &DataSchema) -> Result<(Dataset, Encoding)> {
    let table = read_table(path)?;
    let encoding = fit_encoding(&table, schema)?;
    let ds = apply(&table, &encoding)?;
    Ok((ds, encoding))
}

/// Reads `path` with an encoding fitted elsewhere. Categorical levels unseen
/// there are treated as missing.
pub fn load_csv_encoded(path: &Path, encoding: &Encoding) -> Result<Dataset> {
    apply(&read_table(path)?, encoding)
}

fn fit_encoding(t: &Table, schema: &DataSchema) -> Result<Encoding> {
    let mut role: HashMap<&str, &str> = HashMap::new();
    let groups: [(&str, &[String]); 5] = [
        ("target", std::slice::from_ref(&schema.target)),
        ("continuous", &schema.continuous),
        ("binary", &schema.binary),
        ("categorical", &schema.categorical),
        ("ignore", &schema.ignore),
    ];
    for (r, names) in groups {
        for n in names {
            if let Some(prev) = role.insert(n, r) {
                return Err(Error::InvalidConfig(format!("column `{n}` listed as both {prev} and {r}")));
            }
            column_index(t, n)?;
        }
    }
    if let Some(h) = t.header.iter().find(|h| !role.contains_key(h.as_str())) {
        return Err(Error::InvalidConfig(format!(
            "column `{h}` has no role; list it under `ignore` to skip it"
        )));
    }
    let missing = |s: &str| schema.missing.iter().any(|m| m == s);
    let mut columns = Vec::new();
    // continuous columns first so that the model sees them as features 0..p
    for name in &schema.continuous {
        let j = column_index(t, name)?;
        let mut vals = Vec::new();
        for (i, row) in t.rows.iter().enumerate() {
            if !missing(&row[j]) {
                vals.push(parse_cell(i, name, &row[j])?);
            }
        }
        columns.push(ColumnEncoding::Continuous {
            name: name.clone(),
            fill: median(&mut vals),
        });
    }
    for name in &schema.binary {
        let j = column_index(t, name)?;
        let mut counts = [0usize; 2];
        for (i, row) in t.rows.iter().enumerate() {
            if !missing(&row[j]) {
                counts[parse_binary(i, name, &row[j])? as usize] += 1;
            }
        }
        columns.push(ColumnEncoding::Binary {
            name: name.clone(),
            fill: u8::from(counts[1] > counts[0]),
        });
    }
    for name in &schema.categorical {
        let j = column_index(t, name)?;
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for row in &t.rows {
            if !missing(&row[j]) {
                *counts.entry(row[j].as_str()).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::InvalidConfig(format!("categorical column `{name}` has no values")));
        }
        // BTreeMap order makes the smallest level win ties
        let fill = counts
            .iter()
            .fold(("", 0), |best, (&l, &c)| if c > best.1 { (l, c) } else { best })
            .0
            .to_string();
        columns.push(ColumnEncoding::Categorical {
            name: name.clone(),
            levels: counts.keys().map(|s| s.to_string()).collect(),
            fill,
        });
    }
    Ok(Encoding {
        target: schema.target.clone(),
        columns,
        missing: schema.missing.clone(),
    })
}

fn parse_binary(row: usize, column: &str, cell: &str) -> Result<u8> {
    match parse_cell(row, column, cell)? {
        v if v == 0.0 => Ok(0),
        v if v == 1.0 => Ok(1),
        v => Err(Error::Data {
            row,
            column: column.to_string(),
            message: format!("binary column holds {v}"),
        }),
    }
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        super::experiments::median(v)
    }
}

fn apply(t: &Table, enc: &Encoding) -> Result<Dataset> {
    let missing = |s: &str| enc.missing.iter().any(|m| m == s);
    let target = column_index(t, &enc.target)?;
    let idx = enc
        .columns
        .iter()
        .map(|c| column_index(t, c.name()))
        .collect::<Result<Vec<_>>>()?;
    let mut x_continuous = Vec::with_capacity(t.rows.len());
    let mut x_binary = Vec::with_capacity(t.rows.len());
    let mut y = Vec::with_capacity(t.rows.len());
    for (i, row) in t.rows.iter().enumerate() {
        let cell = &row[target];
        if missing(cell) {
            return Err(Error::Data {
                row: i,
                column: enc.target.clone(),
                message: "missing response".into(),
            });
        }
        y.push(parse_cell(i, &enc.target, cell)?);
        let mut cont = Vec::new();
        let mut bin = Vec::new();
        for (c, &j) in enc.columns.iter().zip(&idx) {
            let cell = row[j].as_str();
            match c {
                ColumnEncoding::Continuous { name, fill } => {
                    cont.push(if missing(cell) { *fill } else { parse_cell(i, name, cell)? });
                }
                ColumnEncoding::Binary { name, fill } => {
                    bin.push(if missing(cell) { *fill } else { parse_binary(i, name, cell)? });
                }
                ColumnEncoding::Categorical { levels, fill, .. } => {
                    let level = if missing(cell) || !levels.iter().any(|l| l == cell) {
                        fill.as_str()
                    } else {
                        cell
                    };
                    if levels.len() <= 2 {
                        bin.push(u8::from(levels.len() == 2 && level == levels[1]));
                    } else {
                        bin.extend(levels.iter().map(|l| u8::from(l == level)));
                    }
                }
            }
        }
        x_continuous.push(cont);
        x_binary.push(bin);
    }
    let names = enc.columns.iter().flat_map(ColumnEncoding::output_names).collect();
    Dataset::new(x_continuous, x_binary, y, names, enc.target.clone())
}
