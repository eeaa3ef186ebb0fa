//! Field snapshot serialization.
//!
//! Binary layout (little endian throughout): magic `"NLS2"`, version `u32`,
//! `n: u32`, `l_dom: f64`, then `n^2` `(re, im)` `f64` pairs in row-major
//! node order. A CSV exporter `(x1, x2, re, im)` is provided for plotting.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{ComplexField, Grid2D};

const MAGIC: &[u8; 4] = b"NLS2";
const VERSION: u32 = 1;

pub fn write_snapshot(path: &Path, field: &ComplexField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(field.grid().n() as u32).to_le_bytes())?;
    w.write_all(&field.grid().l_dom().to_le_bytes())?;
    for v in field.values() {
        w.write_all(&v.re.to_le_bytes())?;
        w.write_all(&v.im.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<ComplexField> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::BadSnapshot(format!(
            "bad magic {:?} in {}",
            magic,
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::BadSnapshot(format!("unsupported version {version}")));
    }
    r.read_exact(&mut u32buf)?;
    let n = u32::from_le_bytes(u32buf) as usize;
    let mut f64buf = [0u8; 8];
    r.read_exact(&mut f64buf)?;
    let l_dom = f64::from_le_bytes(f64buf);
    let grid = Grid2D::new(n, l_dom)?;
    let mut values = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        r.read_exact(&mut f64buf)?;
        let re = f64::from_le_bytes(f64buf);
        r.read_exact(&mut f64buf)?;
        let im = f64::from_le_bytes(f64buf);
        values.push(Complex64::new(re, im));
    }
    ComplexField::from_values(&grid, values)
}

pub fn write_csv(path: &Path, field: &ComplexField) -> Result<()> {
    let grid = field.grid();
    let n = grid.n();
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "x1,x2,re,im")?;
    for i1 in 0..n {
        for i2 in 0..n {
            let v = field.values()[grid.index(i1, i2)];
            writeln!(w, "{},{},{},{}", grid.coord(i1), grid.coord(i2), v.re, v.im)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_roundtrip() {
        let grid = Grid2D::new(32, 10.0).unwrap();
        let mut rng = crate::rng::seeded(3);
        let f = crate::rng::smooth_field(&grid, &mut rng, 4.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.nls2");
        write_snapshot(&path, &f).unwrap();
        let g = read_snapshot(&path).unwrap();
        assert_eq!(g.grid().n(), 32);
        assert_eq!(g.grid().l_dom(), 10.0);
        assert_eq!(f.values(), g.values());
    }

    #[test]
    fn snapshot_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"not a snapshot at all").unwrap();
        assert!(read_snapshot(&path).is_err());
    }
}
