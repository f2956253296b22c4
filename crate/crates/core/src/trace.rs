//! Measurement datasets and replay traces.
//!
//! Dataset CSV header: `payload,rsrp,rsrq,sinr,cqi,asu,ta,freq,cellid,velocity,datarate`.
//! Trace CSV header: `t,payload,rsrp,rsrq,sinr,cqi,asu,ta,freq,cellid,velocity`.
//! Lines starting with `#` are skipped. Rows are reported 1-based, counting
//! data rows only.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Number of measured features per transmission.
pub const FEATURE_COUNT: usize = 10;

/// Column names of the ten features, in feature-index order.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "payload", "rsrp", "rsrq", "sinr", "cqi", "asu", "ta", "freq", "cellid", "velocity",
];

pub const PAYLOAD: usize = 0;
pub const SINR: usize = 3;

const LABEL_COLUMN: &str = "datarate";
const TIME_COLUMN: &str = "t";

/// Link and context indicators observed for one transmission.
///
/// Units: payload in bytes, RSRP in dBm, RSRQ and SINR in dB, carrier
/// frequency in MHz, velocity in km/h. CQI, ASU and TA are integer indices
/// carried as floats; the cell id is an opaque number treated as ordered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub payload_size: f64,
    pub rsrp: f64,
    pub rsrq: f64,
    pub sinr: f64,
    pub cqi: f64,
    pub asu: f64,
    pub ta: f64,
    pub carrier_freq: f64,
    pub cell_id: f64,
    pub velocity: f64,
}

impl FeatureVector {
    pub fn from_array(v: [f64; FEATURE_COUNT]) -> Self {
        FeatureVector {
            payload_size: v[0],
            rsrp: v[1],
            rsrq: v[2],
            sinr: v[3],
            cqi: v[4],
            asu: v[5],
            ta: v[6],
            carrier_freq: v[7],
            cell_id: v[8],
            velocity: v[9],
        }
    }

    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.payload_size,
            self.rsrp,
            self.rsrq,
            self.sinr,
            self.cqi,
            self.asu,
            self.ta,
            self.carrier_freq,
            self.cell_id,
            self.velocity,
        ]
    }

    /// Copy with the payload replaced, used when a buffer of a different size
    /// is evaluated under the same channel conditions.
    pub fn with_payload(&self, payload_size: f64) -> Self {
        FeatureVector {
            payload_size,
            ..*self
        }
    }

    /// Checks the value-range invariants. On failure returns the offending
    /// column name and a description.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        for (name, v) in FEATURE_NAMES.iter().zip(self.to_array()) {
            if !v.is_finite() {
                return Err((name, format!("non-finite value {v}")));
            }
        }
        if self.payload_size <= 0.0 {
            return Err(("payload", format!("payload must be > 0, got {}", self.payload_size)));
        }
        if !(0.0..=30.0).contains(&self.cqi) {
            return Err(("cqi", format!("cqi must lie in [0, 30], got {}", self.cqi)));
        }
        if self.velocity < 0.0 {
            return Err(("velocity", format!("velocity must be >= 0, got {}", self.velocity)));
        }
        Ok(())
    }
}

/// One labeled measurement: features and the measured data rate in MBit/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransmissionRecord {
    pub features: FeatureVector,
    pub datarate: f64,
}

/// A non-empty labeled corpus with its label range.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<TransmissionRecord>,
    label_min: f64,
    label_max: f64,
}

impl Dataset {
    pub fn new(records: Vec<TransmissionRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Argument("dataset is empty".into()));
        }
        for (i, r) in records.iter().enumerate() {
            if let Err((column, message)) = r.features.check() {
                return Err(Error::ingest(i + 1, column, message));
            }
            if !(r.datarate.is_finite() && r.datarate >= 0.0) {
                return Err(Error::ingest(
                    i + 1,
                    LABEL_COLUMN,
                    format!("datarate must be finite and >= 0, got {}", r.datarate),
                ));
            }
        }
        let label_min = records.iter().map(|r| r.datarate).fold(f64::INFINITY, f64::min);
        let label_max = records.iter().map(|r| r.datarate).fold(f64::NEG_INFINITY, f64::max);
        Ok(Dataset {
            records,
            label_min,
            label_max,
        })
    }

    pub fn records(&self) -> &[TransmissionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn label_min(&self) -> f64 {
        self.label_min
    }

    pub fn label_max(&self) -> f64 {
        self.label_max
    }

    pub fn labels(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.datarate).collect()
    }

    pub fn feature_rows(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.features.to_array().to_vec()).collect()
    }

    fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(indices.iter().map(|&i| self.records[i]).collect())
    }

    /// Writes the dataset in the CSV format read by [`load_dataset`].
    /// Numbers use Rust's shortest round-trip formatting, so reloading is exact.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = FEATURE_NAMES.to_vec();
        header.push(LABEL_COLUMN);
        w.write_record(&header).map_err(csv_write_error)?;
        for r in &self.records {
            let mut row: Vec<String> = r.features.to_array().iter().map(|v| v.to_string()).collect();
            row.push(r.datarate.to_string());
            w.write_record(&row).map_err(csv_write_error)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn csv_write_error(e: csv::Error) -> Error {
    Error::Format(format!("csv write failed: {e}"))
}

/// A time-ordered sequence of feature observations. Timestamps in seconds,
/// strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    ticks: Vec<(f64, FeatureVector)>,
}

impl Trace {
    pub fn new(ticks: Vec<(f64, FeatureVector)>) -> Result<Self> {
        for (i, (t, fv)) in ticks.iter().enumerate() {
            if !t.is_finite() {
                return Err(Error::ingest(i + 1, TIME_COLUMN, "non-finite timestamp"));
            }
            if let Err((column, message)) = fv.check() {
                return Err(Error::ingest(i + 1, column, message));
            }
            if i > 0 && *t <= ticks[i - 1].0 {
                return Err(Error::ingest(
                    i + 1,
                    TIME_COLUMN,
                    format!("timestamps not strictly increasing ({} after {})", t, ticks[i - 1].0),
                ));
            }
        }
        Ok(Trace { ticks })
    }

    pub fn ticks(&self) -> &[(f64, FeatureVector)] {
        &self.ticks
    }

    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![TIME_COLUMN];
        header.extend(FEATURE_NAMES);
        w.write_record(&header).map_err(csv_write_error)?;
        for (t, fv) in &self.ticks {
            let mut row = vec![t.to_string()];
            row.extend(fv.to_array().iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_write_error)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Reads rows of numbers under an exact expected header.
fn read_numeric_rows<R: Read>(input: R, expected: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);

    let header = reader
        .headers()
        .map_err(|e| Error::Format(format!("cannot read header: {e}")))?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Format("empty file: missing header".into()));
    }
    for name in expected {
        if !header.iter().any(|h| h == *name) {
            return Err(Error::ingest(0, *name, "missing column"));
        }
    }
    if header.len() != expected.len() || header.iter().zip(expected).any(|(h, e)| h != *e) {
        return Err(Error::Format(format!(
            "unexpected header `{}`, expected `{}`",
            header.iter().collect::<Vec<_>>().join(","),
            expected.join(",")
        )));
    }

    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::ingest(row, "*", format!("malformed row ({e})")))?;
        if rec.len() != expected.len() {
            return Err(Error::ingest(
                row,
                "*",
                format!("malformed row: {} fields, expected {}", rec.len(), expected.len()),
            ));
        }
        let mut values = Vec::with_capacity(expected.len());
        for (field, column) in rec.iter().zip(expected) {
            if field.is_empty() {
                return Err(Error::ingest(row, *column, "missing value"));
            }
            let v: f64 = field
                .parse()
                .map_err(|_| Error::ingest(row, *column, format!("non-numeric value `{field}`")))?;
            values.push(v);
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::Format("empty file: no data rows".into()));
    }
    Ok(rows)
}

pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let mut expected: Vec<&str> = FEATURE_NAMES.to_vec();
    expected.push(LABEL_COLUMN);
    let rows = read_numeric_rows(input, &expected)?;
    let records = rows
        .into_iter()
        .map(|v| TransmissionRecord {
            features: FeatureVector::from_array(v[..FEATURE_COUNT].try_into().expect("row width")),
            datarate: v[FEATURE_COUNT],
        })
        .collect();
    Dataset::new(records)
}

pub fn read_trace<R: Read>(input: R) -> Result<Trace> {
    let mut expected = vec![TIME_COLUMN];
    expected.extend(FEATURE_NAMES);
    let rows = read_numeric_rows(input, &expected)?;
    let ticks = rows
        .into_iter()
        .map(|v| (v[0], FeatureVector::from_array(v[1..].try_into().expect("row width"))))
        .collect();
    Trace::new(ticks)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(std::io::BufReader::new(file))
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trace(std::io::BufReader::new(file))
}

/// Assigns each record a fold in `0..k`: indices are shuffled with `seed` and
/// dealt round-robin, so fold sizes differ by at most one.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Argument(format!("fold count must be >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::Argument(format!("fold count {k} exceeds record count {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut fold = vec![0; n];
    for (pos, idx) in order.into_iter().enumerate() {
        fold[idx] = pos % k;
    }
    Ok(fold)
}

/// Returns `k` (train, test) pairs whose test parts partition `d`.
pub fn split_folds(d: &Dataset, k: usize, seed: u64) -> Result<Vec<(Dataset, Dataset)>> {
    let fold = fold_assignment(d.len(), k, seed)?;
    (0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..d.len()).partition(|&i| fold[i] == f);
            Ok((d.subset(&train)?, d.subset(&test)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "payload,rsrp,rsrq,sinr,cqi,asu,ta,freq,cellid,velocity,datarate\n";

    fn record(payload: f64, sinr: f64, rate: f64) -> TransmissionRecord {
        TransmissionRecord {
            features: FeatureVector::from_array([payload, -90.0, -10.0, sinr, 9.0, 50.0, 3.0, 1800.0, 7.0, 30.0]),
            datarate: rate,
        }
    }

    #[test]
    fn loads_well_formed_rows() {
        let csv = format!(
            "# drive test\n{HEADER}1e6,-95,-11,12.5,10,45,2,1800,42,50,8.5\n\
             2e6,-80,-8,20,14,60,1,1800,42,30,17.25\n5e5,-110,-15,-2,3,30,5,800,7,0,0.75\n"
        );
        let d = read_dataset(csv.as_bytes()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.label_min(), 0.75);
        assert_eq!(d.label_max(), 17.25);
        assert_eq!(d.records()[0].features.sinr, 12.5);
        assert_eq!(d.records()[2].features.cell_id, 7.0);
    }

    #[test]
    fn empty_cell_names_row_and_column() {
        let csv = format!("{HEADER}1e6,-95,-11,,10,45,2,1800,42,50,8.5\n");
        let err = read_dataset(csv.as_bytes()).unwrap_err();
        assert_eq!(err.to_string(), "missing value, row 1, column sinr");
    }

    #[test]
    fn rejects_bad_inputs() {
        let non_numeric = format!("{HEADER}1e6,-95,-11,abc,10,45,2,1800,42,50,8.5\n");
        assert!(matches!(
            read_dataset(non_numeric.as_bytes()),
            Err(Error::Ingest { row: 1, ref column, .. }) if column == "sinr"
        ));

        let short = format!("{HEADER}1e6,-95,-11,3\n");
        assert!(matches!(read_dataset(short.as_bytes()), Err(Error::Ingest { row: 1, .. })));

        let missing_col = "payload,rsrp,rsrq,cqi,asu,ta,freq,cellid,velocity,datarate\n1,2,3,4,5,6,7,8,9,10\n";
        assert!(matches!(
            read_dataset(missing_col.as_bytes()),
            Err(Error::Ingest { ref column, .. }) if column == "sinr"
        ));

        assert!(read_dataset("".as_bytes()).is_err());
        assert!(read_dataset(HEADER.as_bytes()).is_err());

        let bad_cqi = format!("{HEADER}1e6,-95,-11,3,31,45,2,1800,42,50,8.5\n");
        assert!(matches!(
            read_dataset(bad_cqi.as_bytes()),
            Err(Error::Ingest { ref column, .. }) if column == "cqi"
        ));
        let negative_rate = format!("{HEADER}1e6,-95,-11,3,3,45,2,1800,42,50,-1\n");
        assert!(read_dataset(negative_rate.as_bytes()).is_err());
    }

    #[test]
    fn trace_monotonicity() {
        let header = "t,payload,rsrp,rsrq,sinr,cqi,asu,ta,freq,cellid,velocity\n";
        let row = "1,-95,-11,12,10,45,2,1800,42,50";
        let ok = format!("{header}0,{row}\n1,{row}\n2,{row}\n");
        assert_eq!(read_trace(ok.as_bytes()).unwrap().len(), 3);

        let bad = format!("{header}0,{row}\n1,{row}\n1,{row}\n");
        let err = read_trace(bad.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Ingest { row: 3, ref column, .. } if column == "t"), "{err}");
    }

    #[test]
    fn one_hz_trace_of_600_seconds() {
        let ticks = (0..600)
            .map(|t| (t as f64, record(1.0, 10.0, 0.0).features))
            .collect();
        let trace = Trace::new(ticks).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        assert_eq!(read_trace(buf.as_slice()).unwrap().len(), 600);
    }

    #[test]
    fn fold_sizes() {
        let d = Dataset::new((0..10).map(|i| record(1.0 + i as f64, 0.0, i as f64)).collect()).unwrap();
        let folds = split_folds(&d, 10, 3).unwrap();
        assert!(folds.iter().all(|(train, test)| test.len() == 1 && train.len() == 9));

        let folds = split_folds(&d, 3, 3).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(|(_, t)| t.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);

        assert_eq!(split_folds(&d, 3, 3).unwrap(), folds);
        assert!(split_folds(&d, 11, 3).is_err());
        assert!(split_folds(&d, 1, 3).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_record() -> impl Strategy<Value = TransmissionRecord> {
            (
                prop::array::uniform10(-1e4f64..1e4),
                0.0f64..100.0,
            )
                .prop_map(|(mut f, rate)| {
                    f[PAYLOAD] = f[PAYLOAD].abs() + 1.0;
                    f[4] = f[4].abs() % 30.0;
                    f[9] = f[9].abs();
                    TransmissionRecord {
                        features: FeatureVector::from_array(f),
                        datarate: rate,
                    }
                })
        }

        proptest! {
            #[test]
            fn csv_round_trip_is_exact(records in prop::collection::vec(arb_record(), 1..40)) {
                let d = Dataset::new(records).unwrap();
                let mut buf = Vec::new();
                d.write_csv(&mut buf).unwrap();
                prop_assert_eq!(read_dataset(buf.as_slice()).unwrap(), d);
            }

            #[test]
            fn folds_partition_records(n in 2usize..60, k in 2usize..12, seed in any::<u64>()) {
                prop_assume!(k <= n);
                let fold = fold_assignment(n, k, seed).unwrap();
                let mut counts = vec![0usize; k];
                for &f in &fold {
                    counts[f] += 1;
                }
                let max = *counts.iter().max().unwrap();
                let min = *counts.iter().min().unwrap();
                prop_assert!(max - min <= 1);
                prop_assert_eq!(counts.iter().sum::<usize>(), n);
            }
        }
    }
}
