//! Observational data layout, treatment coding, train/test splitting and
//! sub-population indexing.
//!
//! Treatment labels are stored as dense 0-based indices; the real-valued
//! levels live only in [`TreatmentCoding`]. All types here are immutable
//! after construction and the operations are pure functions.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, TableViolation};

/// One record per row: outcome `y`, treatment label `d`, outcome-specific
/// features `u`, treatment-specific features `x`, confounders `z`.
#[derive(Debug, Clone)]
pub struct ObservationTable {
    y: Array1<f64>,
    d: Vec<usize>,
    u: Array2<f64>,
    x: Array2<f64>,
    z: Array2<f64>,
}

impl ObservationTable {
    /// Builds a table, rejecting mismatched row counts or an empty table.
    /// Value-level invariants (finiteness, label range) are checked by
    /// [`validate_table`].
    pub fn new(
        y: Array1<f64>,
        d: Vec<usize>,
        u: Array2<f64>,
        x: Array2<f64>,
        z: Array2<f64>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::ShapeMismatch("table must have at least one row".into()));
        }
        for (name, rows) in [("d", d.len()), ("u", u.nrows()), ("x", x.nrows()), ("z", z.nrows())] {
            if rows != n {
                return Err(Error::ShapeMismatch(format!(
                    "column block {name} has {rows} rows, outcome has {n}"
                )));
            }
        }
        Ok(Self { y, d, u, x, z })
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn p_u(&self) -> usize {
        self.u.ncols()
    }

    pub fn p_x(&self) -> usize {
        self.x.ncols()
    }

    pub fn p_z(&self) -> usize {
        self.z.ncols()
    }

    pub fn outcome(&self, row: usize) -> f64 {
        self.y[row]
    }

    pub fn label(&self, row: usize) -> usize {
        self.d[row]
    }

    pub fn u_row(&self, row: usize) -> &[f64] {
        self.u.row(row).into_slice().expect("row-major layout")
    }

    pub fn x_row(&self, row: usize) -> &[f64] {
        self.x.row(row).into_slice().expect("row-major layout")
    }

    pub fn z_row(&self, row: usize) -> &[f64] {
        self.z.row(row).into_slice().expect("row-major layout")
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn labels(&self) -> &[usize] {
        &self.d
    }

    pub fn u(&self) -> &Array2<f64> {
        &self.u
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn z(&self) -> &Array2<f64> {
        &self.z
    }

    /// Highest label present plus one. A lower bound on the number of levels.
    pub fn max_label_plus_one(&self) -> usize {
        self.d.iter().copied().max().map_or(0, |m| m + 1)
    }
}

/// The ordered real-valued treatment levels `d^1 < d^2 < ... < d^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentCoding {
    levels: Vec<f64>,
}

impl TreatmentCoding {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::InvalidConfig("need at least 2 treatment levels".into()));
        }
        if levels.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("treatment levels must be finite".into()));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("treatment levels must be strictly increasing".into()));
        }
        Ok(Self { levels })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn value_of(&self, label: usize) -> f64 {
        self.levels[label]
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Label of a raw treatment value, matched with exact equality.
    pub fn label_of(&self, value: f64) -> Option<usize> {
        self.levels.iter().position(|&v| v == value)
    }
}

/// Disjoint train/test row sets covering `0..N-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIndex {
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

/// Checks every type invariant and reports all violations at once:
/// finiteness of every value and label range against the coding.
pub fn validate_table(table: &ObservationTable, coding: &TreatmentCoding) -> Result<()> {
    let mut violations = Vec::new();
    let n_levels = coding.n_levels();
    for row in 0..table.n_rows() {
        if !table.outcome(row).is_finite() {
            violations.push(TableViolation::NonFiniteValue { row, column: "y".into() });
        }
        let label = table.label(row);
        if label >= n_levels {
            violations.push(TableViolation::UnknownTreatmentLabel { row, label, n_levels });
        }
        for (prefix, block) in [("u", table.u_row(row)), ("x", table.x_row(row)), ("z", table.z_row(row))] {
            for (k, v) in block.iter().enumerate() {
                if !v.is_finite() {
                    violations.push(TableViolation::NonFiniteValue {
                        row,
                        column: format!("{prefix}_{}", k + 1),
                    });
                }
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidTable(violations))
    }
}

/// Uniformly shuffled split, deterministic in the seed. Train size is
/// `round(fraction * N)`; both sides must be non-empty.
pub fn split_train_test(table: &ObservationTable, fraction: f64, seed: u64) -> Result<SplitIndex> {
    let n = table.n_rows();
    if n < 2 {
        return Err(Error::DegenerateSplit(format!("need at least 2 rows, have {n}")));
    }
    if !(0.0 < fraction && fraction < 1.0) {
        return Err(Error::DegenerateSplit(format!("fraction {fraction} not in (0, 1)")));
    }
    let n_train = (fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::DegenerateSplit(format!(
            "fraction {fraction} on {n} rows leaves an empty side"
        )));
    }
    let mut rows: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rows.shuffle(&mut rng);
    let mut train_rows = rows[..n_train].to_vec();
    let mut test_rows = rows[n_train..].to_vec();
    train_rows.sort_unstable();
    test_rows.sort_unstable();

    // No stratification; warn if a level present in the table is absent
    // from the train side.
    let n_levels = table.max_label_plus_one();
    let mut in_table = vec![false; n_levels];
    for &l in table.labels() {
        in_table[l] = true;
    }
    let mut in_train = vec![false; n_levels];
    for &r in &train_rows {
        in_train[table.label(r)] = true;
    }
    for (level, (&t, &tr)) in in_table.iter().zip(&in_train).enumerate() {
        if t && !tr {
            log::warn!("treatment level {level} present in table but absent from train split");
        }
    }
    Ok(SplitIndex { train_rows, test_rows })
}

/// Rows observed at the given level, and their count `N_j`. Restricted to
/// `rows` when provided, otherwise the whole table.
pub fn subpopulation(table: &ObservationTable, level: usize, rows: Option<&[usize]>) -> (Vec<usize>, usize) {
    let idx: Vec<usize> = match rows {
        Some(rs) => rs.iter().copied().filter(|&r| table.label(r) == level).collect(),
        None => (0..table.n_rows()).filter(|&r| table.label(r) == level).collect(),
    };
    let n = idx.len();
    (idx, n)
}

// ---------------------------------------------------------------------------
// CSV dataset format
// ---------------------------------------------------------------------------
//
// Header row required: y, d, u_1..u_{p_u}, x_1..x_{p_x}, z_1..z_{p_z}.
// The `d` column holds the raw treatment value and is matched against the
// coding with exact equality after parsing.

fn parse_header(headers: &csv::StringRecord) -> Result<(usize, usize, usize)> {
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 2 || cols[0] != "y" || cols[1] != "d" {
        return Err(Error::Parse("CSV header must start with 'y,d'".into()));
    }
    let mut p_u = 0;
    let mut p_x = 0;
    let mut p_z = 0;
    for c in cols[2..].iter() {
        if c.starts_with("u_") && p_x == 0 && p_z == 0 {
            p_u += 1;
        } else if c.starts_with("x_") && p_z == 0 {
            p_x += 1;
        } else if c.starts_with("z_") {
            p_z += 1;
        } else {
            return Err(Error::Parse(format!("unexpected CSV column '{c}'")));
        }
    }
    Ok((p_u, p_x, p_z))
}

fn read_rows<R: std::io::Read>(reader: R) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, usize, usize, usize)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let (p_u, p_x, p_z) = parse_header(rdr.headers()?)?;
    let mut y = Vec::new();
    let mut d_raw = Vec::new();
    let mut u = Vec::new();
    let mut x = Vec::new();
    let mut z = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 + p_u + p_x + p_z {
            return Err(Error::Parse(format!("row {i}: expected {} fields, got {}", 2 + p_u + p_x + p_z, rec.len())));
        }
        let field = |k: usize| -> Result<f64> {
            rec[k].trim().parse::<f64>().map_err(|e| Error::Parse(format!("row {i}, field {k}: {e}")))
        };
        y.push(field(0)?);
        d_raw.push(field(1)?);
        for k in 0..p_u {
            u.push(field(2 + k)?);
        }
        for k in 0..p_x {
            x.push(field(2 + p_u + k)?);
        }
        for k in 0..p_z {
            z.push(field(2 + p_u + p_x + k)?);
        }
    }
    Ok((y, d_raw, u, x, z, p_u, p_x, p_z))
}

fn assemble(
    y: Vec<f64>,
    d: Vec<usize>,
    u: Vec<f64>,
    x: Vec<f64>,
    z: Vec<f64>,
    p_u: usize,
    p_x: usize,
    p_z: usize,
) -> Result<ObservationTable> {
    let n = y.len();
    let shaped = |data: Vec<f64>, p: usize, name: &str| -> Result<Array2<f64>> {
        Array2::from_shape_vec((n, p), data)
            .map_err(|e| Error::ShapeMismatch(format!("{name}: {e}")))
    };
    ObservationTable::new(
        Array1::from_vec(y),
        d,
        shaped(u, p_u, "u")?,
        shaped(x, p_x, "x")?,
        shaped(z, p_z, "z")?,
    )
}

/// Reads the CSV dataset format, mapping raw `d` values to labels through the
/// supplied coding.
pub fn read_csv<R: std::io::Read>(reader: R, coding: &TreatmentCoding) -> Result<ObservationTable> {
    let (y, d_raw, u, x, z, p_u, p_x, p_z) = read_rows(reader)?;
    let mut d = Vec::with_capacity(d_raw.len());
    for (row, &v) in d_raw.iter().enumerate() {
        match coding.label_of(v) {
            Some(l) => d.push(l),
            None => {
                return Err(Error::Parse(format!("row {row}: treatment value {v} not in coding")));
            }
        }
    }
    assemble(y, d, u, x, z, p_u, p_x, p_z)
}

/// Reads the CSV dataset format and infers the coding from the distinct raw
/// `d` values (sorted ascending).
pub fn read_csv_infer<R: std::io::Read>(reader: R) -> Result<(ObservationTable, TreatmentCoding)> {
    let (y, d_raw, u, x, z, p_u, p_x, p_z) = read_rows(reader)?;
    let mut levels: Vec<f64> = d_raw.clone();
    levels.sort_by(|a, b| a.partial_cmp(b).ok_or(()).expect("finite treatment values"));
    levels.dedup();
    let coding = TreatmentCoding::new(levels)?;
    let d = d_raw
        .iter()
        .map(|&v| coding.label_of(v).expect("value came from the same column"))
        .collect();
    let table = assemble(y, d, u, x, z, p_u, p_x, p_z)?;
    Ok((table, coding))
}

/// Writes the CSV dataset format. Numbers use the shortest round-trip
/// representation, so read-back is exact.
pub fn write_csv<W: std::io::Write>(
    table: &ObservationTable,
    coding: &TreatmentCoding,
    writer: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["y".to_string(), "d".to_string()];
    header.extend((1..=table.p_u()).map(|k| format!("u_{k}")));
    header.extend((1..=table.p_x()).map(|k| format!("x_{k}")));
    header.extend((1..=table.p_z()).map(|k| format!("z_{k}")));
    wtr.write_record(&header)?;
    for row in 0..table.n_rows() {
        let mut rec = Vec::with_capacity(header.len());
        rec.push(table.outcome(row).to_string());
        rec.push(coding.value_of(table.label(row)).to_string());
        rec.extend(table.u_row(row).iter().map(|v| v.to_string()));
        rec.extend(table.x_row(row).iter().map(|v| v.to_string()));
        rec.extend(table.z_row(row).iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    /// Ten training rows of the two-level credit-line worked example:
    /// (z, x, u, d, y) with levels {1000, 2000}.
    pub(crate) fn worked_example_train() -> (ObservationTable, TreatmentCoding) {
        let rows: [(f64, f64, f64, f64, f64); 10] = [
            (1000., 21., 500., 1000., 0.095),
            (2000., 22., 1000., 1000., 0.090),
            (3000., 23., 1500., 1000., 0.087),
            (4000., 24., 2000., 1000., 0.080),
            (5000., 25., 2500., 1000., 0.075),
            (6000., 26., 3000., 2000., 0.569),
            (7000., 27., 3500., 2000., 0.566),
            (8000., 28., 4000., 2000., 0.562),
            (9000., 29., 4500., 2000., 0.553),
            (10000., 30., 5000., 2000., 0.551),
        ];
        let coding = TreatmentCoding::new(vec![1000.0, 2000.0]).unwrap();
        let y = Array1::from_iter(rows.iter().map(|r| r.4));
        let d = rows.iter().map(|r| coding.label_of(r.3).unwrap()).collect();
        let u = arr2(&rows.map(|r| [r.2]));
        let x = arr2(&rows.map(|r| [r.1]));
        let z = arr2(&rows.map(|r| [r.0]));
        (ObservationTable::new(y, d, u, x, z).unwrap(), coding)
    }

    #[test]
    fn valid_ten_row_table_passes() {
        let (table, coding) = worked_example_train();
        assert!(validate_table(&table, &coding).is_ok());
    }

    #[test]
    fn nan_outcome_is_reported() {
        let (table, coding) = worked_example_train();
        let mut y = table.y().clone();
        y[3] = f64::NAN;
        let bad = ObservationTable::new(y, table.labels().to_vec(), table.u().clone(), table.x().clone(), table.z().clone()).unwrap();
        match validate_table(&bad, &coding) {
            Err(Error::InvalidTable(v)) => {
                assert_eq!(v, vec![TableViolation::NonFiniteValue { row: 3, column: "y".into() }]);
            }
            other => panic!("expected InvalidTable, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_label_is_reported() {
        let coding = TreatmentCoding::new(vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let table = ObservationTable::new(
            Array1::from_vec(vec![0.0, 1.0]),
            vec![0, 5],
            Array2::zeros((2, 1)),
            Array2::zeros((2, 1)),
            Array2::zeros((2, 1)),
        )
        .unwrap();
        match validate_table(&table, &coding) {
            Err(Error::InvalidTable(v)) => {
                assert_eq!(v, vec![TableViolation::UnknownTreatmentLabel { row: 1, label: 5, n_levels: 5 }]);
            }
            other => panic!("expected InvalidTable, got {other:?}"),
        }
    }

    #[test]
    fn validation_reports_every_violation() {
        let coding = TreatmentCoding::new(vec![0.0, 1.0]).unwrap();
        let table = ObservationTable::new(
            Array1::from_vec(vec![f64::NAN, 1.0]),
            vec![0, 7],
            arr2(&[[f64::INFINITY], [0.0]]),
            Array2::zeros((2, 1)),
            Array2::zeros((2, 1)),
        )
        .unwrap();
        match validate_table(&table, &coding) {
            Err(Error::InvalidTable(v)) => assert_eq!(v.len(), 3),
            other => panic!("expected InvalidTable, got {other:?}"),
        }
    }

    #[test]
    fn split_70_30_on_ten_rows() {
        let (table, _) = worked_example_train();
        let split = split_train_test(&table, 0.7, 42).unwrap();
        assert_eq!(split.train_rows.len(), 7);
        assert_eq!(split.test_rows.len(), 3);
        let mut all: Vec<usize> = split.train_rows.iter().chain(&split.test_rows).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_deterministic() {
        let (table, _) = worked_example_train();
        let a = split_train_test(&table, 0.7, 42).unwrap();
        let b = split_train_test(&table, 0.7, 42).unwrap();
        assert_eq!(a, b);
        let c = split_train_test(&table, 0.7, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_side_is_degenerate() {
        let (table, _) = worked_example_train();
        assert!(matches!(split_train_test(&table, 0.01, 1), Err(Error::DegenerateSplit(_))));
        assert!(matches!(split_train_test(&table, 0.99, 1), Err(Error::DegenerateSplit(_))));
    }

    #[test]
    fn subpopulation_counts_partition_the_table() {
        let (table, coding) = worked_example_train();
        let (idx0, n0) = subpopulation(&table, 0, None);
        let (idx1, n1) = subpopulation(&table, 1, None);
        assert_eq!(n0, 5);
        assert_eq!(n1, 5);
        assert_eq!(idx0, vec![0, 1, 2, 3, 4]);
        assert_eq!(idx1, vec![5, 6, 7, 8, 9]);
        assert_eq!(n0 + n1, table.n_rows());
        let _ = coding;
    }

    #[test]
    fn absent_level_gives_empty_subpopulation() {
        let (table, _) = worked_example_train();
        let (idx, n) = subpopulation(&table, 3, None);
        assert!(idx.is_empty());
        assert_eq!(n, 0);
    }

    #[test]
    fn all_rows_same_level() {
        let table = ObservationTable::new(
            Array1::from_vec(vec![1.0; 4]),
            vec![1; 4],
            Array2::zeros((4, 1)),
            Array2::zeros((4, 1)),
            Array2::zeros((4, 1)),
        )
        .unwrap();
        assert_eq!(subpopulation(&table, 1, None).1, 4);
        assert_eq!(subpopulation(&table, 0, None).1, 0);
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let (table, coding) = worked_example_train();
        let mut buf = Vec::new();
        write_csv(&table, &coding, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &coding).unwrap();
        assert_eq!(back.y(), table.y());
        assert_eq!(back.labels(), table.labels());
        assert_eq!(back.u(), table.u());
        assert_eq!(back.z(), table.z());
        let (inferred, coding2) = read_csv_infer(buf.as_slice()).unwrap();
        assert_eq!(coding2, coding);
        assert_eq!(inferred.labels(), table.labels());
    }

    #[test]
    fn csv_rejects_unknown_treatment_value() {
        let (table, coding) = worked_example_train();
        let mut buf = Vec::new();
        write_csv(&table, &coding, &mut buf).unwrap();
        let other = TreatmentCoding::new(vec![1.0, 2.0]).unwrap();
        assert!(matches!(read_csv(buf.as_slice(), &other), Err(Error::Parse(_))));
    }

    #[test]
    fn coding_must_increase() {
        assert!(TreatmentCoding::new(vec![2.0, 1.0]).is_err());
        assert!(TreatmentCoding::new(vec![1.0]).is_err());
        assert!(TreatmentCoding::new(vec![1.0, 1.0]).is_err());
    }
}
