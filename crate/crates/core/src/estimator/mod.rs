//! Linear FIR estimator mapping control sequences to input estimates.

mod design;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub use design::{
    design_reference_filter, hamming, magnitude_response, windowed_sinc, DEFAULT_TAPS,
};

use crate::error::{Error, Result};
use crate::simulator::{is_csv, read_u32, read_u64, ControlRecord};

const BANK_MAGIC: &[u8; 4] = b"CBFB";
const BANK_VERSION: u32 = 1;

/// Estimator coefficients: one K-tap filter per sequence plus an offset.
///
/// `filters[0]` acts on the reference sequence, `filters[l]` on control `s_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    taps: usize,
    filters: Vec<Vec<f64>>,
    offset: f64,
}

impl FilterBank {
    pub fn new(filters: Vec<Vec<f64>>, offset: f64) -> Result<Self> {
        let taps = filters.first().map_or(0, Vec::len);
        if filters.len() < 2 {
            return Err(Error::Shape(format!(
                "need a reference filter and at least one control filter, got {}",
                filters.len()
            )));
        }
        if taps == 0 || taps % 2 != 0 {
            return Err(Error::invalid("taps", format!("must be even and positive, got {taps}")));
        }
        if let Some((l, f)) = filters.iter().enumerate().find(|(_, f)| f.len() != taps) {
            return Err(Error::Shape(format!(
                "filter h{l} has {} taps, expected {taps}",
                f.len()
            )));
        }
        if filters.iter().flatten().any(|v| !v.is_finite()) || !offset.is_finite() {
            return Err(Error::invalid("filters", "coefficients must be finite"));
        }
        Ok(Self {
            taps,
            filters,
            offset,
        })
    }

    /// Bank with the given reference filter and zero control filters.
    pub fn with_reference(reference: Vec<f64>, order: usize) -> Result<Self> {
        let taps = reference.len();
        let mut filters = vec![reference];
        filters.extend((0..order).map(|_| vec![0.0; taps]));
        Self::new(filters, 0.0)
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    /// Number of control filters.
    pub fn order(&self) -> usize {
        self.filters.len() - 1
    }

    pub fn filters(&self) -> &[Vec<f64>] {
        &self.filters
    }

    pub fn filter(&self, l: usize) -> &[f64] {
        &self.filters[l]
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Length of the stacked parameter vector `h_1 ‖ … ‖ h_N ‖ û_0`.
    pub fn parameter_len(&self) -> usize {
        self.order() * self.taps + 1
    }

    /// Control filters and offset in regressor order.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.filters[1..].iter().flatten().copied().collect();
        p.push(self.offset);
        p
    }

    /// Replace the control filters and offset from a stacked parameter vector.
    pub fn set_parameters(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.parameter_len() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, expected {}",
                p.len(),
                self.parameter_len()
            )));
        }
        for (f, chunk) in self.filters[1..].iter_mut().zip(p.chunks(self.taps)) {
            f.copy_from_slice(chunk);
        }
        self.offset = p[p.len() - 1];
        Ok(())
    }

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

    /// Layout: magic, version `u32`, `N` as `u32`, `K` as `u64`, then
    /// `h_0 … h_N` tap-major per filter and the offset, all `f64` little endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BANK_MAGIC)?;
        w.write_all(&BANK_VERSION.to_le_bytes())?;
        w.write_all(&(self.order() as u32).to_le_bytes())?;
        w.write_all(&(self.taps as u64).to_le_bytes())?;
        for v in self.filters.iter().flatten().chain(std::iter::once(&self.offset)) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::format("filter bank", "truncated header"))?;
        if &magic != BANK_MAGIC {
            return Err(Error::format("filter bank", "bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != BANK_VERSION {
            return Err(Error::format(
                "filter bank",
                format!("unsupported version {version}"),
            ));
        }
        let order = read_u32(&mut r)? as usize;
        let taps = read_u64(&mut r)? as usize;
        let count = (order + 1)
            .checked_mul(taps)
            .filter(|&c| c < 1 << 32)
            .ok_or_else(|| Error::format("filter bank", "implausible dimensions"))?;
        let mut read_f64 = || -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)
                .map_err(|_| Error::format("filter bank", "truncated coefficients"))?;
            Ok(f64::from_le_bytes(b))
        };
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(read_f64()?);
        }
        let offset = read_f64()?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::format("filter bank", "trailing bytes"));
        }
        let filters = values.chunks(taps.max(1)).map(<[f64]>::to_vec).collect();
        Self::new(filters, offset)
    }

    /// Header `tap,h0,…,hN`, one row per tap, then a final `offset,<value>` row.
    /// Values are written with shortest round-trip formatting.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (0..self.filters.len()).map(|l| format!("h{l}")).collect();
        writeln!(w, "tap,{}", header.join(","))?;
        for j in 0..self.taps {
            let row: Vec<String> = self.filters.iter().map(|f| format!("{:e}", f[j])).collect();
            writeln!(w, "{j},{}", row.join(","))?;
        }
        writeln!(w, "offset,{:e}", self.offset)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let bad = |reason: String| Error::format("filter bank csv", reason);
        let mut lines = BufReader::new(r).lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        let width = cols.len() - 1;
        let expected: Vec<String> = std::iter::once("tap".to_string())
            .chain((0..width).map(|l| format!("h{l}")))
            .collect();
        if width < 2 || cols != expected {
            return Err(bad(format!("unexpected header `{header}`")));
        }
        let mut filters = vec![Vec::new(); width];
        let mut offset = None;
        for (row, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if offset.is_some() {
                return Err(bad("rows after the offset row".into()));
            }
            let fields: Vec<&str> = line.split(',').collect();
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("row {}: `{s}`: {e}", row + 1)))
            };
            if fields[0] == "offset" {
                if fields.len() != 2 {
                    return Err(bad("offset row must have one value".into()));
                }
                offset = Some(parse(fields[1])?);
                continue;
            }
            if fields.len() != width + 1 || fields[0].parse::<usize>().ok() != Some(row) {
                return Err(bad(format!("malformed tap row {}", row + 1)));
            }
            for (f, s) in filters.iter_mut().zip(&fields[1..]) {
                f.push(parse(s)?);
            }
        }
        let offset = offset.ok_or_else(|| bad("missing offset row".into()))?;
        Self::new(filters, offset)
    }
}

/// `û[k] = Σ_l Σ_j h_l[j] s_l[k - K/2 + j] + û_0` over the valid region
/// `k ∈ [K/2, n - K/2)`.
///
/// Returns `n - K` samples; the first corresponds to record index `K/2`.
pub fn estimate(bank: &FilterBank, record: &ControlRecord) -> Result<Vec<f64>> {
    if record.order() != bank.order() {
        return Err(Error::Shape(format!(
            "filter bank has order {}, record has {} control channels",
            bank.order(),
            record.order()
        )));
    }
    let n = record.n_samples();
    let k = bank.taps();
    if n <= k {
        return Err(Error::TooShort {
            required: k + 1,
            actual: n,
        });
    }
    let mut out = vec![bank.offset(); n - k];
    for (h, s) in bank.filters().iter().zip(record.channels()) {
        correlate_into(h, s, &mut out);
    }
    Ok(out)
}

/// `out[i] += Σ_j h[j] s[i + j]`.
pub(crate) fn correlate_into(h: &[f64], s: &[i8], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let window = &s[i..i + h.len()];
        *o += h
            .iter()
            .zip(window)
            .map(|(&c, &b)| c * f64::from(b))
            .sum::<f64>();
    }
}

/// Reference contribution `(h_0 ∗ s_0)[k]` over the same valid region as [`estimate`].
pub fn reference_contribution(h0: &[f64], reference: &[i8]) -> Result<Vec<f64>> {
    let k = h0.len();
    if reference.len() <= k {
        return Err(Error::TooShort {
            required: k + 1,
            actual: reference.len(),
        });
    }
    let mut out = vec![0.0; reference.len() - k];
    correlate_into(h0, reference, &mut out);
    Ok(out)
}
