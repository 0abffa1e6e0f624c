//! CSV dataset files: header `f0,...,f{d-1},label`, one sample per row.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::problem::{FiniteSumProblem, LossModel};

pub fn write_csv<W: Write>(problem: &FiniteSumProblem, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..problem.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(problem.dim() + 1);
    for i in 0..problem.n() {
        row.clear();
        row.extend(problem.features(i).iter().map(|v| format_float(*v)));
        row.push(format_float(problem.label(i)));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R, loss: LossModel) -> Result<FiniteSumProblem> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let d = header.len().checked_sub(1).filter(|&d| d > 0).ok_or_else(|| {
        Error::InvalidInput("dataset header needs at least one feature and a label".into())
    })?;
    for (j, name) in header.iter().take(d).enumerate() {
        if name.trim() != format!("f{j}") {
            return Err(Error::InvalidInput(format!(
                "expected column f{j}, found {name:?}"
            )));
        }
    }
    if header[d].trim() != "label" {
        return Err(Error::InvalidInput(format!(
            "last column must be `label`, found {:?}",
            &header[d]
        )));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|e| {
                Error::InvalidInput(format!("row {}: cannot parse {s:?}: {e}", line + 1))
            })
        };
        for v in record.iter().take(d) {
            features.push(parse(v)?);
        }
        labels.push(parse(&record[d])?);
    }
    FiniteSumProblem::from_flat(features, labels, d, loss)
}

pub fn save_csv(problem: &FiniteSumProblem, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(problem, std::io::BufWriter::new(f))
}

pub fn load_csv(path: &Path, loss: LossModel) -> Result<FiniteSumProblem> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(f), loss)
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let s = serde_json::to_string_pretty(value)?;
    std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
}

/// Shortest representation that round-trips exactly.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_separable, SeparableSpec};
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let p = FiniteSumProblem::new(
            vec![crate::Sample::new(vec![0.5, -1.0], 1.0)],
            LossModel::SquaredHinge,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "f0,f1,label\n0.5,-1.0,1.0\n");
    }

    #[test]
    fn rejects_bad_headers() {
        let bad = "x0,label\n1,1\n";
        assert!(read_csv(bad.as_bytes(), LossModel::LeastSquares).is_err());
        let no_label = "f0,f1\n1,1\n";
        assert!(read_csv(no_label.as_bytes(), LossModel::LeastSquares).is_err());
        let garbage = "f0,label\nabc,1\n";
        assert!(read_csv(garbage.as_bytes(), LossModel::LeastSquares).is_err());
    }

    proptest! {
        #[test]
        fn csv_roundtrip_is_exact(seed in 0u64..1000, n in 2usize..20, d in 2usize..6) {
            let ds = gen_separable(
                SeparableSpec { n, d, margin: 0.05, seed },
                LossModel::SquaredHinge,
            ).unwrap();
            let mut buf = Vec::new();
            write_csv(&ds.problem, &mut buf).unwrap();
            let back = read_csv(buf.as_slice(), LossModel::SquaredHinge).unwrap();
            prop_assert_eq!(back, ds.problem);
        }
    }
}
