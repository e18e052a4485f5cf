//! CSV input and output. Every file written starts with a `# digest=` comment
//! line naming the configuration that produced it; readers skip `#` lines.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::CliError;

/// Sites and values read from an `x,y` or `x1,x2,y` file.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteData {
    pub sites: Vec<[f64; 2]>,
    pub values: Vec<f64>,
}

fn reader(path: &Path) -> Result<csv::Reader<File>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(file))
}

fn parse_field(path: &Path, line: usize, raw: &str) -> Result<f64, CliError> {
    let v: f64 = raw
        .parse()
        .map_err(|_| CliError::Data(format!("{}: row {line}: '{raw}' is not a number", path.display())))?;
    if !v.is_finite() {
        return Err(CliError::Data(format!("{}: row {line}: non-finite value", path.display())));
    }
    Ok(v)
}

/// Reads sites for a `dim`-dimensional problem.
pub fn read_sites(path: &Path, dim: usize) -> Result<SiteData, CliError> {
    let mut rdr = reader(path)?;
    let expected: &[&str] = if dim == 1 { &["x", "y"] } else { &["x1", "x2", "y"] };
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(CliError::Data(format!(
            "{}: expected header '{}', found '{}'",
            path.display(),
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = SiteData { sites: Vec::new(), values: Vec::new() };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let nums: Vec<f64> = rec.iter().map(|r| parse_field(path, i + 1, r)).collect::<Result<_, _>>()?;
        if dim == 1 {
            out.sites.push([nums[0], 0.0]);
            out.values.push(nums[1]);
        } else {
            out.sites.push([nums[0], nums[1]]);
            out.values.push(nums[2]);
        }
    }
    if out.values.is_empty() {
        return Err(CliError::Data(format!("{}: no data rows", path.display())));
    }
    Ok(out)
}

/// A time series from a `t,value` file or a single-column file of values.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub times: Option<Vec<f64>>,
    pub values: Vec<f64>,
}

pub fn read_series(path: &Path) -> Result<Series, CliError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let with_time = match headers.len() {
        1 => false,
        2 if headers.get(0) == Some("t") && headers.get(1) == Some("value") => true,
        _ => {
            return Err(CliError::Data(format!(
                "{}: expected header 't,value' or a single column",
                path.display()
            )))
        }
    };
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if with_time {
            times.push(parse_field(path, i + 1, &rec[0])?);
            values.push(parse_field(path, i + 1, &rec[1])?);
        } else {
            values.push(parse_field(path, i + 1, &rec[0])?);
        }
    }
    if values.is_empty() {
        return Err(CliError::Data(format!("{}: no data rows", path.display())));
    }
    Ok(Series { times: with_time.then_some(times), values })
}

/// Writes rows of numbers under a header, preceded by the digest comment.
pub fn write_table(path: &Path, digest: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?);
    writeln!(w, "# digest={digest}")?;
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes sites and values in the format [`read_sites`] accepts.
pub fn write_sites(path: &Path, digest: &str, dim: usize, sites: &[[f64; 2]], values: &[f64]) -> Result<(), CliError> {
    let rows: Vec<Vec<f64>> = sites
        .iter()
        .zip(values)
        .map(|(s, v)| if dim == 1 { vec![s[0], *v] } else { vec![s[0], s[1], *v] })
        .collect();
    let header: &[&str] = if dim == 1 { &["x", "y"] } else { &["x1", "x2", "y"] };
    write_table(path, digest, header, &rows)
}
