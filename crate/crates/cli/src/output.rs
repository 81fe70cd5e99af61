use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use kgprop::SpacetimeFunction;
use serde::Serialize;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct Sidecar {
    pub shape: [usize; 2],
    pub dt: f64,
    pub dx: f64,
    #[serde(rename = "T_min")]
    pub t_min: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub field: String,
}

/// Single writer for one output directory.
pub struct Writer {
    dir: PathBuf,
}

impl Writer {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    /// `<name>.bin` (row-major little-endian complex128, time-major) and
    /// `<name>.json`.
    pub fn field(&self, name: &str, u: &SpacetimeFunction) -> Result<(), CliError> {
        let mut bytes = Vec::with_capacity(16 * u.values().len());
        for z in u.values() {
            bytes.extend_from_slice(&z.re.to_le_bytes());
            bytes.extend_from_slice(&z.im.to_le_bytes());
        }
        self.write(&format!("{name}.bin"), &bytes)?;
        let (nt, n) = u.shape();
        let side = Sidecar {
            shape: [nt, n],
            dt: u.time().dt(),
            dx: u.space().dx(),
            t_min: u.time().t_min(),
            l: u.space().length(),
            field: name.to_string(),
        };
        self.json(&format!("{name}.json"), &side)
    }

    /// Two-column CSV with a header line.
    pub fn csv(&self, name: &str, columns: [&str; 2], rows: &[(f64, f64)]) -> Result<(), CliError> {
        let mut s = format!("{},{}\n", columns[0], columns[1]);
        for (a, b) in rows {
            writeln!(s, "{a:e},{b:e}").expect("string write");
        }
        self.write(&format!("{name}.csv"), s.as_bytes())
    }

    pub fn text(&self, name: &str, text: &str) -> Result<(), CliError> {
        self.write(name, text.as_bytes())
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value).expect("report serializes");
        s.push('\n');
        self.write(name, s.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use kgprop::{SpatialGrid, TimeGrid, C64};

    #[test]
    fn field_layout() {
        let dir = tempfile::tempdir().unwrap();
        let w = Writer::new(&dir.path().join("nested")).unwrap();
        let g = SpatialGrid::new(8, 4.0).unwrap();
        let tg = TimeGrid::new(1.0, 4).unwrap();
        let u = SpacetimeFunction::from_fn(g, tg, |t, x| C64::new(t, x));
        w.field("u", &u).unwrap();
        let bytes = fs::read(w.dir().join("u.bin")).unwrap();
        assert_eq!(bytes.len(), 5 * 8 * 16);
        // second row, third point: (t, x) = (-0.5, -1.0)
        let k = (8 + 2) * 16;
        let re = f64::from_le_bytes(bytes[k..k + 8].try_into().unwrap());
        let im = f64::from_le_bytes(bytes[k + 8..k + 16].try_into().unwrap());
        assert_eq!((re, im), (tg.t(1), g.x(2)));
        let side: serde_json::Value = serde_json::from_slice(&fs::read(w.dir().join("u.json")).unwrap()).unwrap();
        assert_eq!(side["shape"], serde_json::json!([5, 8]));
        assert_eq!(side["T_min"], -1.0);
        assert_eq!(side["L"], 4.0);
        assert_eq!(side["field"], "u");
        w.csv("c", ["t", "value"], &[(0.5, 1e-3)]).unwrap();
        let text = fs::read_to_string(w.dir().join("c.csv")).unwrap();
        assert_eq!(text, "t,value\n5e-1,1e-3\n");
    }
}
