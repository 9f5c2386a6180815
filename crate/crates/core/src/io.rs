//! Flat binary fields and CSV tables.
//!
//! Binary layout: 8-byte magic, `n` as little-endian `u64`, then `n * n`
//! little-endian `f64` values in row-major order (`y` rows of `x`).
//! CSV numbers use shortest round-trip formatting.

use std::fmt::Write as _;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::elliptic::StabilityReport;
use crate::flow::MonitorLog;
use crate::grid::{GridError, PeriodicGrid, ScalarField};
use crate::scalar::Real;
use crate::sphere::SphereRecord;

pub const FIELD_MAGIC: [u8; 8] = *b"RMMPFLD1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic bytes")]
    BadMagic,
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub fn write_field<T: Real>(field: &ScalarField<T>, mut out: impl Write) -> Result<(), IoError> {
    out.write_all(&FIELD_MAGIC)?;
    out.write_all(&(field.grid().n() as u64).to_le_bytes())?;
    for v in field.values() {
        out.write_all(&v.to_f64_lossy().to_le_bytes())?;
    }
    Ok(())
}

pub fn field_bytes<T: Real>(field: &ScalarField<T>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + 8 * field.values().len());
    write_field(field, &mut buf).expect("writing to memory");
    buf
}

pub fn read_field(mut input: impl Read) -> Result<ScalarField<f64>, IoError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if magic != FIELD_MAGIC {
        return Err(IoError::BadMagic);
    }
    let mut word = [0u8; 8];
    input.read_exact(&mut word)?;
    let n = usize::try_from(u64::from_le_bytes(word)).map_err(|_| GridError::BadSize(usize::MAX))?;
    let grid = PeriodicGrid::new(n)?;
    let mut values = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        input.read_exact(&mut word)?;
        values.push(f64::from_le_bytes(word));
    }
    Ok(ScalarField::new(grid, values)?)
}

fn num<T: Real>(v: T) -> String {
    format!("{}", v.to_f64_lossy())
}

/// `x,y,value` per grid point.
pub fn field_csv<T: Real>(field: &ScalarField<T>) -> String {
    let grid = field.grid();
    let mut out = String::from("x,y,value\n");
    for (k, &v) in field.values().iter().enumerate() {
        let (x, y) = grid.point::<f64>(k);
        let _ = writeln!(out, "{x},{y},{}", num(v));
    }
    out
}

pub const MONITOR_COLUMNS: [&str; 13] = [
    "t",
    "volume_ratio_min",
    "volume_ratio_max",
    "class_mass",
    "phi_inf",
    "phi_dot_inf",
    "scal_inf",
    "fixed_point_gap",
    "expected_class_mass",
    "phi_dot_sup",
    "phi_dot_l1",
    "ddbar_inf",
    "dt",
];

pub fn monitors_csv<T: Real>(log: &MonitorLog<T>) -> String {
    let mut out = MONITOR_COLUMNS.join(",");
    out.push('\n');
    for r in &log.records {
        let gap = r.fixed_point_gap.map(num).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            num(r.t),
            num(r.volume_ratio_min),
            num(r.volume_ratio_max),
            num(r.class_mass),
            num(r.phi_inf),
            num(r.phi_dot_inf),
            num(r.scal_inf),
            gap,
            num(r.expected_class_mass),
            num(r.phi_dot_sup),
            num(r.phi_dot_l1),
            num(r.ddbar_inf),
            num(r.dt),
        );
    }
    out
}

/// `pair_id,l1,linf,ratio`; the ratio is empty for skipped pairs.
pub fn stability_csv<T: Real>(report: &StabilityReport<T>) -> String {
    let mut out = String::from("pair_id,l1,linf,ratio\n");
    for row in &report.rows {
        let ratio = row.ratio.map(num).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", row.pair_id, num(row.l1), num(row.linf), ratio);
    }
    out
}

pub fn sphere_csv<T: Real>(log: &[SphereRecord<T>]) -> String {
    let mut out = String::from("t,A,min_v,max_v,max_abs_k,gauss_bonnet_residual\n");
    for r in log {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            num(r.t),
            num(r.area),
            num(r.min_v),
            num(r.max_v),
            num(r.max_abs_k),
            num(r.gauss_bonnet_residual)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let grid = PeriodicGrid::new(16).unwrap();
        let f = ScalarField::from_fn(grid, |x: f64, y: f64| x + 10.0 * y);
        let bytes = field_bytes(&f);
        assert_eq!(&bytes[..8], b"RMMPFLD1");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 16);
        assert_eq!(bytes.len(), 16 + 8 * 256);
        // row-major: second value is (x = 1/16, y = 0)
        assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 1.0 / 16.0);
        assert_eq!(read_field(&bytes[..]).unwrap(), f);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(read_field(&b"NOTMAGIC\0\0\0\0\0\0\0\0"[..]), Err(IoError::BadMagic)));
        let mut bytes = field_bytes(&ScalarField::<f64>::zeros(PeriodicGrid::new(16).unwrap()));
        bytes.truncate(100);
        assert!(matches!(read_field(&bytes[..]), Err(IoError::Io(_))));
    }

    #[test]
    fn csv_round_trips_values() {
        let grid = PeriodicGrid::new(16).unwrap();
        let f = ScalarField::from_fn(grid, |x: f64, y: f64| (x * 3.1).sin() / (y + 0.3));
        let csv = field_csv(&f);
        let parsed: Vec<f64> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
        assert_eq!(parsed, f.values());
    }
}
