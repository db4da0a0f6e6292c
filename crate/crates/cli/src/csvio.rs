//! Dataset CSV: header `y,x1..xd,p1..pM`, one observation per row.

use std::io::{Read, Write};

use mvcreg::{ConcentrationMatrix, Dataset};

use crate::error::CliError;

/// Row-sum tolerance for concentrations read from files.
pub const CSV_ROW_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub data: Dataset,
    pub p: ConcentrationMatrix,
    pub regressor_names: Vec<String>,
    pub intercept_added: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum Column {
    Y,
    X(usize),
    P(usize),
}

fn classify(name: &str) -> Option<Column> {
    let name = name.trim();
    if name == "y" {
        return Some(Column::Y);
    }
    if let Some(i) = name.strip_prefix('x').and_then(|d| d.parse().ok()) {
        Some(Column::X(i))
    } else {
        name.strip_prefix('p')
            .and_then(|d| d.parse().ok())
            .map(Column::P)
    }
}

/// Checks that `indices` are exactly `start..start + len` and returns the
/// column positions sorted by index.
fn ordered(
    mut cols: Vec<(usize, usize)>,
    start: usize,
    what: &str,
) -> Result<Vec<usize>, CliError> {
    cols.sort();
    for (expected, (index, _)) in (start..).zip(&cols) {
        if *index != expected {
            return Err(CliError::Input(format!(
                "{what} columns must be numbered consecutively from {start}; found {what}{index}"
            )));
        }
    }
    Ok(cols.into_iter().map(|(_, pos)| pos).collect())
}

pub fn read_dataset<R: Read>(reader: R, intercept: bool) -> Result<LoadedData, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Input(format!("cannot read CSV header: {e}")))?
        .clone();
    let mut y_pos = None;
    let mut xs = Vec::new();
    let mut ps = Vec::new();
    for (pos, name) in headers.iter().enumerate() {
        match classify(name) {
            Some(Column::Y) if y_pos.is_none() => y_pos = Some(pos),
            Some(Column::Y) => return Err(CliError::Input("duplicate `y` column".into())),
            Some(Column::X(i)) => xs.push((i, pos)),
            Some(Column::P(i)) => ps.push((i, pos)),
            None => {
                return Err(CliError::Input(format!(
                    "unexpected column `{name}`; expected y, x1..xd, p1..pM"
                )))
            }
        }
    }
    let y_pos = y_pos.ok_or_else(|| CliError::Input("missing `y` column".into()))?;
    if xs.is_empty() {
        return Err(CliError::Input("no regressor columns (x1..xd)".into()));
    }
    if ps.is_empty() {
        return Err(CliError::Input("no concentration columns (p1..pM)".into()));
    }
    let x_start = xs.iter().map(|(i, _)| *i).min().unwrap_or(1);
    if x_start > 1 {
        return Err(CliError::Input(
            "regressor columns must start at x1 (or x0)".into(),
        ));
    }
    if intercept && x_start == 0 {
        return Err(CliError::Input(
            "--intercept adds x0, but the file already has an x0 column".into(),
        ));
    }
    let mut names: Vec<String> = Vec::new();
    if intercept {
        names.push("x0".into());
    }
    let x_cols = ordered(xs, x_start, "x")?;
    names.extend(x_cols.iter().map(|&pos| headers[pos].trim().to_string()));
    let p_cols = ordered(ps, 1, "p")?;

    let d = names.len();
    let m = p_cols.len();
    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut p = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| CliError::Input(format!("CSV row {}: {e}", line + 1)))?;
        let field = |pos: usize| -> Result<f64, CliError> {
            let raw = record.get(pos).unwrap_or("");
            raw.parse::<f64>().map_err(|_| {
                CliError::Input(format!(
                    "CSV row {}, column `{}`: cannot parse `{raw}` as a number",
                    line + 1,
                    headers[pos].trim()
                ))
            })
        };
        y.push(field(y_pos)?);
        if intercept {
            x.push(1.0);
        }
        for &pos in &x_cols {
            x.push(field(pos)?);
        }
        for &pos in &p_cols {
            p.push(field(pos)?);
        }
    }
    let n = y.len();
    let data = Dataset::new(y, x, d)?;
    let p = ConcentrationMatrix::with_tolerance(p, n, m, CSV_ROW_SUM_TOL)?;
    Ok(LoadedData {
        data,
        p,
        regressor_names: names,
        intercept_added: intercept,
    })
}

/// Reads only the `p1..pM` columns; any `y`/`x` columns are ignored.
pub fn read_concentrations<R: Read>(reader: R) -> Result<ConcentrationMatrix, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Input(format!("cannot read CSV header: {e}")))?
        .clone();
    let mut ps = Vec::new();
    for (pos, name) in headers.iter().enumerate() {
        match classify(name) {
            Some(Column::P(i)) => ps.push((i, pos)),
            Some(_) => {}
            None => {
                return Err(CliError::Input(format!(
                    "unexpected column `{name}`; expected y, x1..xd, p1..pM"
                )))
            }
        }
    }
    if ps.is_empty() {
        return Err(CliError::Input("no concentration columns (p1..pM)".into()));
    }
    let p_cols = ordered(ps, 1, "p")?;
    let mut values = Vec::new();
    let mut n = 0;
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| CliError::Input(format!("CSV row {}: {e}", line + 1)))?;
        for &pos in &p_cols {
            let raw = record.get(pos).unwrap_or("");
            values.push(raw.parse::<f64>().map_err(|_| {
                CliError::Input(format!(
                    "CSV row {}, column `{}`: cannot parse `{raw}` as a number",
                    line + 1,
                    headers[pos].trim()
                ))
            })?);
        }
        n += 1;
    }
    Ok(ConcentrationMatrix::with_tolerance(
        values,
        n,
        p_cols.len(),
        CSV_ROW_SUM_TOL,
    )?)
}

/// Writes `y, x1..xd, p1..pM`. Floats use the shortest representation that
/// parses back to the same value.
pub fn write_dataset<W: Write>(
    writer: W,
    data: &Dataset,
    p: &ConcentrationMatrix,
) -> Result<(), CliError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let d = data.n_regressors();
    let m = p.n_components();
    let mut header = vec!["y".to_string()];
    header.extend((1..=d).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|k| format!("p{k}")));
    let to_io = |e: csv::Error| CliError::Write(std::io::Error::other(e));
    wtr.write_record(&header).map_err(to_io)?;
    for j in 0..data.n_obs() {
        let mut row = vec![data.y()[j].to_string()];
        row.extend(data.x_row(j).iter().map(f64::to_string));
        row.extend(p.row(j).iter().map(f64::to_string));
        wtr.write_record(&row).map_err(to_io)?;
    }
    wtr.flush()?;
    Ok(())
}
