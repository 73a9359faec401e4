use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Cell text for missing or failed values.
pub const NA: &str = "NA";

pub const UNIT_F: &str = "ml/min/100g";
pub const UNIT_F2: &str = "(ml/min/100g)^2";
pub const UNIT_ATT: &str = "s";
pub const UNIT_ATT2: &str = "s^2";
pub const UNIT_COUNT: &str = "count";
pub const UNIT_NONE: &str = "1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub unit: String,
}

impl Column {
    pub fn new(name: &str, unit: &str) -> Self {
        Self {
            name: name.to_string(),
            unit: unit.to_string(),
        }
    }

    pub fn header(&self) -> String {
        format!("{} [{}]", self.name, self.unit)
    }

    fn parse_header(h: &str) -> Result<Self> {
        let h = h.trim();
        match (h.rfind(" ["), h.ends_with(']')) {
            (Some(i), true) => Ok(Self {
                name: h[..i].to_string(),
                unit: h[i + 2..h.len() - 1].to_string(),
            }),
            _ => Err(Error::format("header", format!("expected `name [unit]`, got `{h}`"))),
        }
    }
}

/// Rectangular table of scalars; non-finite cells are written as `NA`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentTable {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<f64>>,
}

impl ExperimentTable {
    pub fn new(columns: Vec<Column>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::InvalidInput(format!(
                "row has {} cells, table has {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::ColumnMissing(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io_err = |e: csv::Error| Error::format("csv", e.to_string());
        w.write_record(self.columns.iter().map(Column::header))
            .map_err(io_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|&x| format_number(x)))
                .map_err(io_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::format("csv", e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is ASCII"))
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let headers = r
            .headers()
            .map_err(|e| Error::format("header", e.to_string()))?
            .clone();
        let columns = headers
            .iter()
            .map(Column::parse_header)
            .collect::<Result<Vec<_>>>()?;
        let mut table = Self::new(columns);
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::format("row", e.to_string()))?;
            let row = rec
                .iter()
                .map(|cell| parse_number(cell).ok_or_else(|| {
                    Error::format("cell", format!("row {}: cannot parse `{cell}`", line + 1))
                }))
                .collect::<Result<Vec<_>>>()?;
            table.push_row(row)?;
        }
        Ok(table)
    }
}

/// Nine significant digits, fixed notation for moderate exponents.
pub fn format_number(x: f64) -> String {
    if !x.is_finite() {
        return NA.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn parse_number(cell: &str) -> Option<f64> {
    let cell = cell.trim();
    if cell == NA {
        Some(f64::NAN)
    } else {
        cell.parse().ok()
    }
}

pub fn emit_table(table: &ExperimentTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = table.to_csv_string()?;
    File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

pub fn read_table(path: impl AsRef<Path>) -> Result<ExperimentTable> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    ExperimentTable::from_csv_str(&text)
}
