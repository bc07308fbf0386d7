//! Plot-ready comma-delimited output files with a single `#` header line,
//! plus the content checksums recorded in run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use crate::CliError;

/// FNV-1a 64-bit content checksum, hex-encoded.
pub fn fnv1a64(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

/// Accumulates one run's output files and their checksums.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<(String, String)>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::Config(format!("cannot create output directory: {e}")))?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Write a data file and record its checksum.
    pub fn write(&mut self, name: &str, content: &str) -> Result<(), CliError> {
        let path = self.root.join(name);
        fs::write(&path, content)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
        self.written.push((name.to_string(), fnv1a64(content.as_bytes())));
        Ok(())
    }

    pub fn checksums(&self) -> &[(String, String)] {
        &self.written
    }
}

/// A CSV table with a `#`-prefixed header naming the units-bearing columns.
pub struct Table {
    lines: Vec<String>,
}

impl Table {
    pub fn new(header: &str) -> Self {
        Self { lines: vec![format!("# {header}")] }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.lines.push(cells.join(","));
    }

    pub fn finish(self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }
}

/// Bit-stable float cell (shortest round-trip representation).
pub fn cell(x: f64) -> String {
    format!("{x:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksum_is_stable() {
        assert_eq!(fnv1a64(b""), "cbf29ce484222325");
        assert_eq!(fnv1a64(b"a"), fnv1a64(b"a"));
        assert_ne!(fnv1a64(b"a"), fnv1a64(b"b"));
    }

    #[test]
    fn table_layout() {
        let mut t = Table::new("t (a.u.),value");
        t.row(&[cell(1.0), cell(2.5e-3)]);
        let s = t.finish();
        assert_eq!(s, "# t (a.u.),value\n1.0,0.0025\n");
    }
}
