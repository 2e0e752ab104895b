//! Diagnostics CSV, binary field snapshots and the run output directory.
//!
//! Snapshot layout (all little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 6 | magic `NLCH1\0` |
//! | 2 | `u16` version = 1 |
//! | 1 | `u8` d |
//! | 1 | `u8` n + 1 |
//! | 8 | `u64` N |
//! | 8 | `f64` extent |
//! | 8 | `f64` time |
//! | 8 (n+1) N^d | `f64` values, species-major, then row-major with the last axis fastest |

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::grid::TorusGrid;
use crate::model::State;
use crate::scheme::{RunObserver, StepResult};

pub const SNAPSHOT_MAGIC: &[u8; 6] = b"NLCH1\0";
pub const SNAPSHOT_VERSION: u16 = 1;
const HEADER_BYTES: usize = 6 + 2 + 1 + 1 + 8 + 8 + 8;

pub fn encode_snapshot(state: &State) -> Vec<u8> {
    let grid = state.grid();
    let mut out = Vec::with_capacity(HEADER_BYTES + 8 * state.species() * grid.len());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.push(grid.dim() as u8);
    out.push(state.species() as u8);
    out.extend_from_slice(&(grid.n() as u64).to_le_bytes());
    out.extend_from_slice(&grid.extent().to_le_bytes());
    out.extend_from_slice(&state.time().to_le_bytes());
    for f in state.fields() {
        for v in f.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Inverse of [`encode_snapshot`]. Values are restored bit for bit; the
/// simplex constraint is not re-checked.
pub fn decode_snapshot(bytes: &[u8], path: &Path) -> Result<State> {
    let fail = |message: String| Error::Snapshot {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < HEADER_BYTES {
        return Err(fail(format!(
            "truncated header: expected at least {HEADER_BYTES} bytes, got {}",
            bytes.len()
        )));
    }
    if &bytes[..6] != SNAPSHOT_MAGIC {
        return Err(fail(format!("bad magic {:?}", &bytes[..6])));
    }
    let version = u16::from_le_bytes([bytes[6], bytes[7]]);
    if version != SNAPSHOT_VERSION {
        return Err(fail(format!("unsupported version {version}, expected {SNAPSHOT_VERSION}")));
    }
    let d = bytes[8] as usize;
    let species = bytes[9] as usize;
    let word = |at: usize| <[u8; 8]>::try_from(&bytes[at..at + 8]).expect("8 bytes");
    let n = u64::from_le_bytes(word(10));
    let extent = f64::from_le_bytes(word(18));
    let time = f64::from_le_bytes(word(26));
    if species < 2 {
        return Err(fail(format!("n + 1 = {species}, need at least 2 species")));
    }
    let n = usize::try_from(n).map_err(|_| fail(format!("N = {n} does not fit in memory")))?;
    let grid = TorusGrid::new(d, n, extent).map_err(|e| fail(e.to_string()))?;
    let expected = HEADER_BYTES + 8 * species * grid.len();
    if bytes.len() != expected {
        return Err(fail(format!(
            "size mismatch: expected {expected} bytes, got {}",
            bytes.len()
        )));
    }
    let mut raw = vec![Vec::with_capacity(grid.len()); species];
    for (k, chunk) in bytes[HEADER_BYTES..].chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        raw[k / grid.len()].push(v);
    }
    State::from_raw_unchecked(&grid, raw, time).map_err(|e| fail(e.to_string()))
}

pub fn write_snapshot(state: &State, path: &Path) -> Result<()> {
    fs::write(path, encode_snapshot(state))?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<State> {
    let bytes = fs::read(path)?;
    decode_snapshot(&bytes, path)
}

/// Grid coordinates and every species value, one point per row.
pub fn fields_csv(state: &State) -> String {
    let grid = state.grid();
    let mut out = String::new();
    let axes = ["x", "y", "z"];
    let mut header: Vec<String> = axes[..grid.dim()].iter().map(|s| s.to_string()).collect();
    header.extend((0..state.species()).map(|i| format!("u_{i}")));
    out.push_str(&header.join(","));
    out.push('\n');
    for x in 0..grid.len() {
        let c = grid.coords(x);
        let mut row: Vec<String> = c[..grid.dim()].iter().map(|v| format!("{v:e}")).collect();
        row.extend(state.fields().iter().map(|f| format!("{:e}", f.values()[x])));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn diagnostics_csv(records: &[DiagnosticsRecord], local: bool) -> String {
    let species = records.first().map_or(0, |r| r.mass.len());
    let mut out = DiagnosticsRecord::csv_header(species, local).join(",");
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row().join(","));
        out.push('\n');
    }
    out
}

pub fn write_diagnostics(records: &[DiagnosticsRecord], local: bool, path: &Path) -> Result<()> {
    fs::write(path, diagnostics_csv(records, local))?;
    Ok(())
}

/// Streams a run into a directory: `diagnostics.csv`, `snap_<step>.bin` and,
/// with `fields_csv`, a `snap_<step>.csv` next to each snapshot.
pub struct RunWriter {
    dir: PathBuf,
    csv: BufWriter<File>,
    fields_csv: bool,
    pub snapshots: Vec<PathBuf>,
    pub min_floor: f64,
}

impl RunWriter {
    pub fn create(dir: &Path, species: usize, local: bool, fields_csv: bool) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let mut csv = BufWriter::new(File::create(dir.join("diagnostics.csv"))?);
        writeln!(csv, "{}", DiagnosticsRecord::csv_header(species, local).join(","))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            csv,
            fields_csv,
            snapshots: vec![],
            min_floor: f64::INFINITY,
        })
    }

    pub fn finish(mut self) -> Result<Vec<PathBuf>> {
        self.csv.flush()?;
        Ok(self.snapshots)
    }
}

impl RunObserver for RunWriter {
    fn on_record(&mut self, record: &DiagnosticsRecord) -> Result<()> {
        writeln!(self.csv, "{}", record.csv_row().join(","))?;
        Ok(())
    }

    fn on_snapshot(&mut self, step: usize, state: &State) -> Result<()> {
        let path = self.dir.join(format!("snap_{step:06}.bin"));
        write_snapshot(state, &path)?;
        if self.fields_csv {
            fs::write(path.with_extension("csv"), fields_csv(state))?;
        }
        self.snapshots.push(path);
        Ok(())
    }

    fn on_step(&mut self, result: &StepResult) -> Result<()> {
        self.min_floor = self.min_floor.min(result.positivity_floor);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_pcg::Pcg64;

    fn random_state(d: usize, n: usize, species: usize, seed: u64) -> State {
        let g = TorusGrid::new(d, n, 2.5).unwrap();
        let mut rng = Pcg64::seed_from_u64(seed);
        let mut raw = vec![vec![0.0; g.len()]; species];
        for x in 0..g.len() {
            let w: Vec<f64> = (0..species).map(|_| rng.random_range(0.01..1.0)).collect();
            let t: f64 = w.iter().sum();
            for i in 0..species {
                raw[i][x] = w[i] / t;
            }
        }
        State::from_raw(&g, raw, 0.123456789).unwrap()
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for (d, n, s) in [(1, 16, 2), (2, 8, 3), (3, 4, 4)] {
            let st = random_state(d, n, s, 7);
            let p = dir.path().join("s.bin");
            write_snapshot(&st, &p).unwrap();
            let back = read_snapshot(&p).unwrap();
            assert_eq!(back.time().to_bits(), st.time().to_bits());
            for (a, b) in st.fields().iter().zip(back.fields()) {
                assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            assert_eq!(back.grid(), st.grid());
        }
    }

    #[test]
    fn header_layout_is_pinned() {
        let st = random_state(1, 4, 2, 1);
        let b = encode_snapshot(&st);
        assert_eq!(&b[..6], b"NLCH1\0");
        assert_eq!(&b[6..8], &[1, 0]);
        assert_eq!(b[8], 1);
        assert_eq!(b[9], 2);
        assert_eq!(&b[10..18], &4u64.to_le_bytes());
        assert_eq!(&b[18..26], &2.5f64.to_le_bytes());
        assert_eq!(b.len(), 34 + 8 * 2 * 4);
        assert_eq!(&b[34..42], &st.field(0).values()[0].to_le_bytes());
    }

    #[test]
    fn truncated_file_names_sizes() {
        let st = random_state(2, 8, 2, 3);
        let mut b = encode_snapshot(&st);
        b.truncate(b.len() - 5);
        let msg = decode_snapshot(&b, Path::new("t.bin")).unwrap_err().to_string();
        assert!(msg.contains(&format!("expected {} bytes", 34 + 8 * 2 * 64)), "{msg}");
        assert!(msg.contains(&format!("got {}", 34 + 8 * 2 * 64 - 5)), "{msg}");
        let msg = decode_snapshot(&b[..10], Path::new("t.bin")).unwrap_err().to_string();
        assert!(msg.contains("expected at least 34"), "{msg}");
    }

    #[test]
    fn bad_magic_and_version() {
        let st = random_state(1, 4, 2, 3);
        let mut b = encode_snapshot(&st);
        b[6] = 2;
        assert!(decode_snapshot(&b, Path::new("x")).unwrap_err().to_string().contains("version 2"));
        b[0] = b'X';
        assert!(decode_snapshot(&b, Path::new("x")).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn fields_csv_shape() {
        let st = random_state(2, 4, 3, 3);
        let text = fields_csv(&st);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,y,u_0,u_1,u_2");
        assert_eq!(lines.len(), 17);
        assert!(lines.iter().all(|l| l.split(',').count() == 5));
    }
}
