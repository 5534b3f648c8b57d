//! Gridded panel data: sites, dates, the long-format CSV interchange
//! format, and the fire danger index computed from raw weather columns.
//!
//! Input CSV (UTF-8, header required):
//!   `site_id,lon,lat,date,value`
//! or in raw-weather mode:
//!   `site_id,lon,lat,date,df,rh,temp,wind`
//! with ISO-8601 dates. Missing (site, date) cells are recorded as
//! missing, never as zero.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Calendar date with ISO-8601 text form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Date {
    pub year: i32,
    pub month: u8,
    pub day: u8,
}

impl Date {
    pub fn new(year: i32, month: u8, day: u8) -> Result<Self> {
        if !(1..=12).contains(&month) || day == 0 || day > days_in_month(year, month) {
            return Err(Error::Validation(format!(
                "invalid date {year:04}-{month:02}-{day:02}"
            )));
        }
        Ok(Self { year, month, day })
    }

    pub fn next_day(self) -> Date {
        if self.day < days_in_month(self.year, self.month) {
            Date {
                day: self.day + 1,
                ..self
            }
        } else if self.month < 12 {
            Date {
                year: self.year,
                month: self.month + 1,
                day: 1,
            }
        } else {
            Date {
                year: self.year + 1,
                month: 1,
                day: 1,
            }
        }
    }
}

pub fn days_in_month(year: i32, month: u8) -> u8 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 => {
            if (year % 4 == 0 && year % 100 != 0) || year % 400 == 0 {
                29
            } else {
                28
            }
        }
        _ => 0,
    }
}

impl fmt::Display for Date {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}-{:02}", self.year, self.month, self.day)
    }
}

impl FromStr for Date {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('-').collect();
        if parts.len() != 3 {
            return Err(Error::Validation(format!("bad ISO date: {s:?}")));
        }
        let year = parts[0]
            .parse()
            .map_err(|_| Error::Validation(format!("bad year in date {s:?}")))?;
        let month = parts[1]
            .parse()
            .map_err(|_| Error::Validation(format!("bad month in date {s:?}")))?;
        let day = parts[2]
            .parse()
            .map_err(|_| Error::Validation(format!("bad day in date {s:?}")))?;
        Date::new(year, month, day)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub id: String,
    pub lon: f64,
    pub lat: f64,
}

/// A sites x times panel; missing cells are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedDataset {
    pub sites: Vec<Site>,
    /// Strictly increasing.
    pub times: Vec<Date>,
    /// Site-major: `values[site * n_times + t]`.
    values: Vec<f64>,
}

impl GriddedDataset {
    pub fn new(sites: Vec<Site>, times: Vec<Date>) -> Result<Self> {
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Integrity("times are not strictly increasing".into()));
        }
        if sites
            .iter()
            .any(|s| !s.lon.is_finite() || !s.lat.is_finite())
        {
            return Err(Error::Validation("non-finite site coordinates".into()));
        }
        let n = sites.len() * times.len();
        Ok(Self {
            sites,
            times,
            values: vec![f64::NAN; n],
        })
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn value(&self, site: usize, t: usize) -> f64 {
        self.values[site * self.n_times() + t]
    }

    pub fn set_value(&mut self, site: usize, t: usize, v: f64) {
        let nt = self.n_times();
        self.values[site * nt + t] = v;
    }

    /// One site's full series, missing cells as NaN.
    pub fn series(&self, site: usize) -> &[f64] {
        let nt = self.n_times();
        &self.values[site * nt..(site + 1) * nt]
    }

    pub fn coords(&self) -> Vec<(f64, f64)> {
        self.sites.iter().map(|s| (s.lon, s.lat)).collect()
    }

    /// Keep every second grid cell in each direction (grid thinning).
    pub fn thinned(&self) -> Result<GriddedDataset> {
        let lons: Vec<f64> = self.sites.iter().map(|s| s.lon).collect();
        let lats: Vec<f64> = self.sites.iter().map(|s| s.lat).collect();
        let ix = snap_indices(&lons);
        let iy = snap_indices(&lats);
        let keep: Vec<usize> = (0..self.n_sites())
            .filter(|&s| ix[s] % 2 == 0 && iy[s] % 2 == 0)
            .collect();
        if keep.is_empty() {
            return Err(Error::Validation("thinning removed every site".into()));
        }
        let sites: Vec<Site> = keep.iter().map(|&s| self.sites[s].clone()).collect();
        let mut out = GriddedDataset::new(sites, self.times.clone())?;
        for (new_s, &old_s) in keep.iter().enumerate() {
            for t in 0..self.n_times() {
                out.set_value(new_s, t, self.value(old_s, t));
            }
        }
        Ok(out)
    }
}

/// Snap one axis of grid coordinates to integer indices (smallest positive
/// gap is the spacing).
pub(crate) fn snap_indices(values: &[f64]) -> Vec<i64> {
    let mut uniq: Vec<f64> = values.to_vec();
    uniq.sort_by(|a, b| a.partial_cmp(b).unwrap());
    uniq.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let origin = uniq[0];
    let spacing = uniq
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    if !spacing.is_finite() {
        return vec![0; values.len()];
    }
    values
        .iter()
        .map(|v| ((v - origin) / spacing).round() as i64)
        .collect()
}

/// Fire danger index from drought factor, relative humidity (%),
/// temperature (deg C) and wind speed (km/h).
pub fn ffdi(df: f64, rh: f64, temp: f64, wind: f64) -> Result<f64> {
    if !(df > 0.0) {
        return Err(Error::ParamDomain(format!(
            "drought factor must be positive, got {df}"
        )));
    }
    if !(0.0..=100.0).contains(&rh) {
        return Err(Error::ParamDomain(format!(
            "relative humidity must lie in [0, 100], got {rh}"
        )));
    }
    Ok(2.0 * (-0.45 + 0.987 * df.ln() - 0.0345 * rh + 0.0338 * temp + 0.0234 * wind).exp())
}

/// Column layout of the input CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvMode {
    /// `site_id,lon,lat,date,value`
    Value,
    /// `site_id,lon,lat,date,df,rh,temp,wind`; the value is the computed
    /// fire danger index.
    RawWeather,
}

/// Read and validate a long-format CSV into a panel.
pub fn read_csv(path: &Path, mode: CsvMode) -> Result<GriddedDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;

    let want_fields = match mode {
        CsvMode::Value => 5,
        CsvMode::RawWeather => 8,
    };

    struct Row {
        site: String,
        lon: f64,
        lat: f64,
        date: Date,
        value: f64,
    }

    let mut rows: Vec<Row> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(rows.len() + 2);
        if record.len() != want_fields {
            return Err(Error::Parse {
                line,
                message: format!("expected {want_fields} fields, found {}", record.len()),
            });
        }
        let num = |idx: usize, name: &str| -> Result<f64> {
            record[idx]
                .parse::<f64>()
                .map_err(|_| Error::Parse {
                    line,
                    message: format!("bad {name}: {:?}", &record[idx]),
                })
                .and_then(|v| {
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(Error::Parse {
                            line,
                            message: format!("non-finite {name}"),
                        })
                    }
                })
        };
        let site = record[0].to_string();
        if site.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty site_id".into(),
            });
        }
        let lon = num(1, "lon")?;
        let lat = num(2, "lat")?;
        let date: Date = record[3].parse().map_err(|e| Error::Parse {
            line,
            message: format!("{e}"),
        })?;
        let value = match mode {
            CsvMode::Value => num(4, "value")?,
            CsvMode::RawWeather => {
                let df = num(4, "df")?;
                let rh = num(5, "rh")?;
                let temp = num(6, "temp")?;
                let wind = num(7, "wind")?;
                ffdi(df, rh, temp, wind).map_err(|e| Error::Parse {
                    line,
                    message: format!("{e}"),
                })?
            }
        };
        rows.push(Row {
            site,
            lon,
            lat,
            date,
            value,
        });
    }
    if rows.is_empty() {
        return Err(Error::Validation(format!(
            "empty input: no data rows in {}",
            path.display()
        )));
    }

    // stable site order: first appearance
    let mut sites: Vec<Site> = Vec::new();
    let mut site_index = std::collections::HashMap::new();
    for r in &rows {
        match site_index.get(&r.site) {
            None => {
                site_index.insert(r.site.clone(), sites.len());
                sites.push(Site {
                    id: r.site.clone(),
                    lon: r.lon,
                    lat: r.lat,
                });
            }
            Some(&k) => {
                let s: &Site = &sites[k];
                if (s.lon - r.lon).abs() > 1e-9 || (s.lat - r.lat).abs() > 1e-9 {
                    return Err(Error::Integrity(format!(
                        "site {} has inconsistent coordinates",
                        r.site
                    )));
                }
            }
        }
    }
    let mut times: Vec<Date> = rows.iter().map(|r| r.date).collect();
    times.sort_unstable();
    times.dedup();
    let time_index: std::collections::HashMap<Date, usize> =
        times.iter().enumerate().map(|(k, &d)| (d, k)).collect();

    let mut ds = GriddedDataset::new(sites, times)?;
    for r in &rows {
        let s = site_index[&r.site];
        let t = time_index[&r.date];
        if !ds.value(s, t).is_nan() {
            return Err(Error::Integrity(format!(
                "duplicate cell: site {} at {}",
                r.site, r.date
            )));
        }
        ds.set_value(s, t, r.value);
    }
    Ok(ds)
}

/// Write a panel in the long-format value CSV (missing cells skipped).
/// Output is byte-stable: fixed row order and shortest round-trip floats.
pub fn write_csv(ds: &GriddedDataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "site_id,lon,lat,date,value")?;
    for (s, site) in ds.sites.iter().enumerate() {
        for (t, date) in ds.times.iter().enumerate() {
            let v = ds.value(s, t);
            if !v.is_nan() {
                writeln!(out, "{},{},{},{},{}", site.id, site.lon, site.lat, date, v)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}
