use std::io::Read;
use std::path::Path;

use chrono::{Days, NaiveDate};

use crate::error::{Result, StoneError};
use crate::tensor::Tensor;

/// Longest run of missing days that is filled by interpolation.
pub const MAX_GAP_DAYS: usize = 3;

const DATE_FORMAT: &str = "%Y-%m-%d";

/// Daily readings of `N` stations, `values: [T×N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSeries {
    pub dates: Vec<NaiveDate>,
    pub values: Tensor,
    pub station_ids: Vec<String>,
}

impl SensorSeries {
    pub fn new(dates: Vec<NaiveDate>, values: Tensor, station_ids: Vec<String>) -> Result<Self> {
        let n = station_ids.len();
        if n == 0 || values.dims() != [dates.len(), n] {
            return Err(StoneError::dims("sensor_series", values.dims(), &[dates.len(), n]));
        }
        for pair in dates.windows(2) {
            if pair[1] != pair[0] + Days::new(1) {
                return Err(StoneError::Contract(format!(
                    "dates must advance one day at a time: {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(SensorSeries {
            dates,
            values,
            station_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_sensors(&self) -> usize {
        self.station_ids.len()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = std::iter::once("date").chain(self.station_ids.iter().map(String::as_str));
        w.write_record(header).map_err(csv_err)?;
        let n = self.n_sensors();
        for (t, date) in self.dates.iter().enumerate() {
            let row = &self.values.data()[t * n..(t + 1) * n];
            let cells = std::iter::once(date.format(DATE_FORMAT).to_string()).chain(row.iter().map(f64::to_string));
            w.write_record(cells).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| StoneError::Contract(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| StoneError::Contract(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| StoneError::io(path, e))
    }
}

fn csv_err(e: csv::Error) -> StoneError {
    StoneError::Contract(e.to_string())
}

pub fn load_sensor_csv(path: &Path) -> Result<SensorSeries> {
    let file = std::fs::File::open(path).map_err(|e| StoneError::io(path, e))?;
    parse_sensor_csv(file)
}

/// Parses `date,station_1,...,station_N` with ISO dates and numeric or empty cells.
///
/// Missing cells and missing date rows are filled by linear interpolation when the
/// run is at most [`MAX_GAP_DAYS`] long; longer runs are rejected.
pub fn parse_sensor_csv(reader: impl Read) -> Result<SensorSeries> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| StoneError::Ingestion {
            row: 1,
            detail: e.to_string(),
        })?
        .clone();
    if header.get(0).map(str::trim) != Some("date") || header.len() < 2 {
        return Err(StoneError::Ingestion {
            row: 1,
            detail: "header must be `date,station_1,...,station_N`".into(),
        });
    }
    let station_ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let n = station_ids.len();

    // One slot per calendar day from the first date; None marks a missing reading.
    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut cells: Vec<Vec<Option<f64>>> = vec![Vec::new(); n];
    let mut rows: Vec<usize> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| StoneError::Ingestion {
            row: e.position().map_or(0, |p| p.line() as usize),
            detail: e.to_string(),
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != n + 1 {
            return Err(StoneError::Ingestion {
                row,
                detail: format!("expected {} fields, found {}", n + 1, record.len()),
            });
        }
        let date = NaiveDate::parse_from_str(record[0].trim(), DATE_FORMAT).map_err(|e| StoneError::Ingestion {
            row,
            detail: format!("bad date `{}`: {e}", &record[0]),
        })?;
        if let Some(&prev) = dates.last() {
            if date <= prev {
                return Err(StoneError::Ingestion {
                    row,
                    detail: format!("date {date} does not follow {prev}"),
                });
            }
            let missing = (date - prev).num_days() as usize - 1;
            if missing > MAX_GAP_DAYS {
                return Err(StoneError::Ingestion {
                    row,
                    detail: format!(
                        "gap of {missing} days from {} to {} exceeds {MAX_GAP_DAYS}",
                        prev + Days::new(1),
                        date - Days::new(1)
                    ),
                });
            }
            for k in 1..=missing {
                dates.push(prev + Days::new(k as u64));
                rows.push(row);
                cells.iter_mut().for_each(|c| c.push(None));
            }
        }
        dates.push(date);
        rows.push(row);
        for (s, cell) in record.iter().skip(1).enumerate() {
            let cell = cell.trim();
            let value = if cell.is_empty() {
                None
            } else {
                let v: f64 = cell.parse().map_err(|_| StoneError::Ingestion {
                    row,
                    detail: format!("non-numeric cell `{cell}` for {}", station_ids[s]),
                })?;
                if !v.is_finite() {
                    return Err(StoneError::Ingestion {
                        row,
                        detail: format!("non-finite cell `{cell}` for {}", station_ids[s]),
                    });
                }
                Some(v)
            };
            cells[s].push(value);
        }
    }
    if dates.is_empty() {
        return Err(StoneError::Ingestion {
            row: 2,
            detail: "no data rows".into(),
        });
    }

    let t_total = dates.len();
    let mut values = vec![0.0; t_total * n];
    for (s, column) in cells.iter().enumerate() {
        let filled = fill_gaps(column).map_err(|(start, len)| StoneError::Ingestion {
            row: rows[start],
            detail: if start == 0 || start + len == t_total {
                format!(
                    "{} has no reading to interpolate from around {}",
                    station_ids[s], dates[start]
                )
            } else {
                format!(
                    "{} missing {len} days from {} to {} exceeds {MAX_GAP_DAYS}",
                    station_ids[s],
                    dates[start],
                    dates[start + len - 1]
                )
            },
        })?;
        for (t, v) in filled.into_iter().enumerate() {
            values[t * n + s] = v;
        }
    }
    SensorSeries::new(dates, Tensor::from_vec(&[t_total, n], values)?, station_ids)
}

/// Interpolates interior runs of `None` up to `MAX_GAP_DAYS`; returns the offending
/// run `(start, len)` otherwise.
fn fill_gaps(column: &[Option<f64>]) -> std::result::Result<Vec<f64>, (usize, usize)> {
    let mut out = Vec::with_capacity(column.len());
    let mut t = 0;
    while t < column.len() {
        if let Some(v) = column[t] {
            out.push(v);
            t += 1;
            continue;
        }
        let start = t;
        while t < column.len() && column[t].is_none() {
            t += 1;
        }
        let len = t - start;
        if start == 0 || t == column.len() || len > MAX_GAP_DAYS {
            return Err((start, len));
        }
        let (lo, hi) = (column[start - 1].unwrap_or_default(), column[t].unwrap_or_default());
        for k in 1..=len {
            out.push(lo + (hi - lo) * k as f64 / (len + 1) as f64);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<SensorSeries> {
        parse_sensor_csv(text.as_bytes())
    }

    #[test]
    fn well_formed_file() {
        let s = parse(
            "date,station_1,station_2\n2020-01-01,1,2\n2020-01-02,3,4\n2020-01-03,5,6\n2020-01-04,7,8\n2020-01-05,9,10\n",
        )
        .unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s.n_sensors(), 2);
        assert_eq!(s.values.at(&[4, 1]), 10.0);
    }

    #[test]
    fn missing_cell_is_interpolated() {
        let s = parse("date,a\n2020-01-01,10\n2020-01-02,\n2020-01-03,12\n").unwrap();
        assert_eq!(s.values.data(), &[10.0, 11.0, 12.0]);
    }

    #[test]
    fn missing_date_rows_are_interpolated() {
        let s = parse("date,a\n2020-01-01,0\n2020-01-05,8\n").unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s.values.data(), &[0.0, 2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn long_gap_names_dates() {
        let err = parse("date,a\n2020-01-01,1\n2020-01-07,2\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, StoneError::Ingestion { row: 3, .. }), "{msg}");
        assert!(msg.contains("2020-01-02") && msg.contains("2020-01-06"), "{msg}");
    }

    #[test]
    fn long_empty_cell_run_names_dates() {
        let err = parse("date,a\n2020-01-01,1\n2020-01-02,\n2020-01-03,\n2020-01-04,\n2020-01-05,\n2020-01-06,2\n")
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2020-01-02") && msg.contains("2020-01-05"), "{msg}");
    }

    #[test]
    fn non_monotone_dates_rejected_with_row() {
        let err = parse("date,a\n2020-01-02,1\n2020-01-01,2\n").unwrap_err();
        assert!(matches!(err, StoneError::Ingestion { row: 3, .. }), "{err}");
    }

    #[test]
    fn non_numeric_cell_rejected_with_row() {
        let err = parse("date,a\n2020-01-01,1\n2020-01-02,abc\n").unwrap_err();
        assert!(matches!(err, StoneError::Ingestion { row: 3, .. }), "{err}");
    }

    #[test]
    fn leading_gap_cannot_be_filled() {
        assert!(parse("date,a\n2020-01-01,\n2020-01-02,1\n").is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dates: Vec<NaiveDate> = (0..4)
            .map(|d| NaiveDate::from_ymd_opt(2001, 1, 1).unwrap() + Days::new(d))
            .collect();
        let values = Tensor::from_vec(&[4, 2], vec![0.1, 1.0 / 3.0, 1e-17, -2.5, 7.0, 8.125, 1e300, 0.0]).unwrap();
        let s = SensorSeries::new(dates, values, vec!["x".into(), "y".into()]).unwrap();
        assert_eq!(parse(&s.to_csv().unwrap()).unwrap(), s);
    }
}
