//! Control records and their on-disk formats.
//!
//! Binary layout (little endian):
//!
//! ```text
//! magic   8 bytes  "CBREC\0\0\x01"
//! order   u32      N
//! n       u64      number of clock periods
//! T       f64      clock period in seconds
//! seed    u64      reference seed
//! bits    ceil(n (N+1) / 8) bytes, row-major (k outer, ℓ inner),
//!         least significant bit first, 1 = +1, 0 = -1
//! ```
//!
//! The CSV form carries the same header as a two-line preamble followed by
//! one row of `N + 1` signed bits per clock period.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CBREC\0\0\x01";

/// Binary control sequences `s_0..s_N` from one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlRecord {
    pub clock_period: f64,
    pub seed: u64,
    /// `controls[ℓ][k] = s_ℓ[k]`; channel 0 is the reference.
    controls: Vec<Vec<i8>>,
    /// `x(kT)`, one row per clock period, when captured.
    states: Option<DMatrix<f64>>,
}

impl ControlRecord {
    pub fn new(
        clock_period: f64,
        seed: u64,
        controls: Vec<Vec<i8>>,
        states: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        if controls.len() < 2 {
            return Err(Error::Shape(
                "a record needs the reference and at least one control".into(),
            ));
        }
        let n = controls[0].len();
        if controls.iter().any(|c| c.len() != n) {
            return Err(Error::Shape("control channels differ in length".into()));
        }
        if let Some((l, k)) = controls.iter().enumerate().find_map(|(l, c)| {
            c.iter().position(|&s| s != 1 && s != -1).map(|k| (l, k))
        }) {
            return Err(Error::Shape(format!("s_{l}[{k}] is not ±1")));
        }
        if let Some(x) = &states {
            if x.nrows() != n || x.ncols() != controls.len() - 1 {
                return Err(Error::Shape(format!(
                    "state matrix is {}x{}, expected {}x{}",
                    x.nrows(),
                    x.ncols(),
                    n,
                    controls.len() - 1
                )));
            }
        }
        Ok(Self {
            clock_period,
            seed,
            controls,
            states,
        })
    }

    pub fn order(&self) -> usize {
        self.controls.len() - 1
    }

    pub fn n_samples(&self) -> usize {
        self.controls[0].len()
    }

    pub fn channel(&self, l: usize) -> &[i8] {
        &self.controls[l]
    }

    pub fn channels(&self) -> &[Vec<i8>] {
        &self.controls
    }

    pub fn states(&self) -> Option<&DMatrix<f64>> {
        self.states.as_ref()
    }

    /// Largest `|x_ℓ(kT)|` over the captured trajectory.
    pub fn max_abs_state(&self) -> Option<f64> {
        self.states
            .as_ref()
            .map(|x| x.iter().fold(0.0f64, |m, v| m.max(v.abs())))
    }

    /// The record with its first `count` periods removed.
    pub fn skip(&self, count: usize) -> ControlRecord {
        let count = count.min(self.n_samples());
        let controls = self.controls.iter().map(|c| c[count..].to_vec()).collect();
        let states = self
            .states
            .as_ref()
            .map(|x| x.rows(count, x.nrows() - count).into_owned());
        ControlRecord {
            clock_period: self.clock_period,
            seed: self.seed,
            controls,
            states,
        }
    }

    /// Copy without the state trajectory.
    pub fn without_states(&self) -> ControlRecord {
        ControlRecord {
            states: None,
            ..self.clone()
        }
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.order() as u32).to_le_bytes())?;
        w.write_all(&(self.n_samples() as u64).to_le_bytes())?;
        w.write_all(&self.clock_period.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        let width = self.controls.len();
        let total = self.n_samples() * width;
        let mut bytes = vec![0u8; total.div_ceil(8)];
        for k in 0..self.n_samples() {
            for (l, c) in self.controls.iter().enumerate() {
                if c[k] > 0 {
                    let bit = k * width + l;
                    bytes[bit / 8] |= 1 << (bit % 8);
                }
            }
        }
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("control record", "bad magic"));
        }
        let order = read_u32(&mut r)? as usize;
        let n = read_u64(&mut r)? as usize;
        let clock_period = f64::from_bits(read_u64(&mut r)?);
        let seed = read_u64(&mut r)?;
        if order == 0 {
            return Err(Error::format("control record", "order is zero"));
        }
        let width = order + 1;
        let total = n
            .checked_mul(width)
            .ok_or_else(|| Error::format("control record", "size overflow"))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != total.div_ceil(8) {
            return Err(Error::format(
                "control record",
                format!(
                    "expected {} payload bytes, found {}",
                    total.div_ceil(8),
                    bytes.len()
                ),
            ));
        }
        if total % 8 != 0 && bytes[bytes.len() - 1] >> (total % 8) != 0 {
            return Err(Error::format("control record", "nonzero padding bits"));
        }
        let mut controls = vec![Vec::with_capacity(n); width];
        for k in 0..n {
            for (l, c) in controls.iter_mut().enumerate() {
                let bit = k * width + l;
                c.push(if (bytes[bit / 8] >> (bit % 8)) & 1 == 1 { 1 } else { -1 });
            }
        }
        ControlRecord::new(clock_period, seed, controls, None)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "order,n_samples,clock_period,seed")?;
        writeln!(
            w,
            "{},{},{:e},{}",
            self.order(),
            self.n_samples(),
            self.clock_period,
            self.seed
        )?;
        let names: Vec<String> = (0..self.controls.len()).map(|l| format!("s{l}")).collect();
        writeln!(w, "{}", names.join(","))?;
        let mut line = String::new();
        for k in 0..self.n_samples() {
            line.clear();
            for (l, c) in self.controls.iter().enumerate() {
                if l > 0 {
                    line.push(',');
                }
                line.push_str(if c[k] > 0 { "1" } else { "-1" });
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let bad = |reason: String| Error::format("control record csv", reason);
        let mut lines = BufReader::new(r).lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| bad(format!("missing {what}")))
        };
        if next("header")?.trim() != "order,n_samples,clock_period,seed" {
            return Err(bad("unexpected header".into()));
        }
        let meta = next("metadata")?;
        let fields: Vec<&str> = meta.trim().split(',').collect();
        if fields.len() != 4 {
            return Err(bad("metadata needs 4 fields".into()));
        }
        let order: usize = fields[0].parse().map_err(|e| bad(format!("order: {e}")))?;
        let n: usize = fields[1].parse().map_err(|e| bad(format!("n_samples: {e}")))?;
        let clock_period: f64 = fields[2]
            .parse()
            .map_err(|e| bad(format!("clock_period: {e}")))?;
        let seed: u64 = fields[3].parse().map_err(|e| bad(format!("seed: {e}")))?;
        let columns = next("column names")?;
        if columns.trim().split(',').count() != order + 1 {
            return Err(bad("column count does not match order".into()));
        }
        let mut controls = vec![Vec::with_capacity(n); order + 1];
        for k in 0..n {
            let row = next("control row")?;
            let mut count = 0;
            for (l, cell) in row.trim().split(',').enumerate() {
                let v = match cell {
                    "1" => 1,
                    "-1" => -1,
                    other => return Err(bad(format!("row {k}: `{other}` is not a signed bit"))),
                };
                if l > order {
                    return Err(bad(format!("row {k}: too many columns")));
                }
                controls[l].push(v);
                count += 1;
            }
            if count != order + 1 {
                return Err(bad(format!("row {k}: expected {} columns", order + 1)));
            }
        }
        if next("end").is_ok() {
            return Err(bad("trailing rows after n_samples".into()));
        }
        ControlRecord::new(clock_period, seed, controls, None)
    }

    /// Write in the format implied by the extension (`.csv` or binary).
    pub fn save(&self, path: &Path) -> Result<()> {
        let w = BufWriter::new(File::create(path)?);
        if is_csv(path) {
            self.write_csv(w)
        } else {
            self.write_binary(w)
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        if is_csv(path) {
            Self::read_csv(r)
        } else {
            Self::read_binary(r)
        }
    }
}

pub(crate) fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
