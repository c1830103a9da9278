//! Periodic scalar grids on `T³` with trilinear interpolation, and the flat
//! binary layout used to persist them.

use std::io::{self, BufRead, Write};

use crate::torus::TorusPoint;

/// Scalar samples at `(i, j, k) / n`, row-major with `i` slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicGrid {
    n: usize,
    data: Vec<f64>,
}

impl PeriodicGrid {
    pub fn zeros(n: usize) -> Self {
        assert!(n >= 1, "grid resolution must be positive");
        PeriodicGrid {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    pub fn from_data(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n * n, "grid data length");
        PeriodicGrid { n, data }
    }

    pub fn from_fn<F: Fn(&TorusPoint) -> f64>(n: usize, f: F) -> Self {
        let data = (0..n * n * n).map(|idx| f(&grid_point(n, idx))).collect();
        PeriodicGrid { n, data }
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        let n = self.n;
        self.data[(i % n) * n * n + (j % n) * n + (k % n)]
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Periodic trilinear interpolation.
    pub fn interpolate(&self, x: &TorusPoint) -> f64 {
        let (idx, w) = stencil(self.n, x);
        let mut acc = 0.0;
        for c in 0..8 {
            acc += w[c] * self.data[idx[c]];
        }
        acc
    }
}

/// Flat index `i n² + j n + k` to the grid point.
pub fn grid_point(n: usize, idx: usize) -> TorusPoint {
    let h = 1.0 / n as f64;
    let (i, j, k) = (idx / (n * n), (idx / n) % n, idx % n);
    TorusPoint::new(i as f64 * h, j as f64 * h, k as f64 * h).expect("grid point in range")
}

/// Indices and weights of the eight corners around `x`.
pub fn stencil(n: usize, x: &TorusPoint) -> ([usize; 8], [f64; 8]) {
    let c = x.coords();
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut t = [0.0; 3];
    for a in 0..3 {
        let s = c[a] * n as f64;
        let f = s.floor();
        let i = (f as usize).min(n - 1);
        lo[a] = i;
        hi[a] = (i + 1) % n;
        t[a] = (s - i as f64).clamp(0.0, 1.0);
    }
    let mut idx = [0usize; 8];
    let mut w = [0.0; 8];
    for corner in 0..8 {
        let pick = |a: usize| corner >> (2 - a) & 1 == 1;
        let mut weight = 1.0;
        let mut sub = [0usize; 3];
        for a in 0..3 {
            if pick(a) {
                sub[a] = hi[a];
                weight *= t[a];
            } else {
                sub[a] = lo[a];
                weight *= 1.0 - t[a];
            }
        }
        idx[corner] = sub[0] * n * n + sub[1] * n + sub[2];
        w[corner] = weight;
    }
    (idx, w)
}

pub const FIELD_MAGIC: &str = "DATORUS-FIELD v1";

/// Text header of key/value pairs followed by equally sized little-endian
/// `f64` grids.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldFile {
    pub meta: Vec<(String, String)>,
    pub grids: Vec<PeriodicGrid>,
}

impl FieldFile {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let n = self.grids.first().map_or(0, |g| g.resolution());
        writeln!(w, "{FIELD_MAGIC}")?;
        writeln!(w, "resolution={n}")?;
        writeln!(w, "grids={}", self.grids.len())?;
        for (k, v) in &self.meta {
            if k.contains('=') || k.contains('\n') || v.contains('\n') {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidInput,
                    format!("header entry {k:?} is not a single key=value line"),
                ));
            }
            writeln!(w, "{k}={v}")?;
        }
        writeln!(w, "end")?;
        for g in &self.grids {
            if g.resolution() != n {
                return Err(io::Error::new(io::ErrorKind::InvalidInput, "grid sizes differ"));
            }
            let mut buf = Vec::with_capacity(g.data().len() * 8);
            for v in g.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: &mut R) -> io::Result<FieldFile> {
        let bad = |m: String| io::Error::new(io::ErrorKind::InvalidData, m);
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != FIELD_MAGIC {
            return Err(bad(format!("bad magic line {:?}", line.trim_end())));
        }
        let mut meta = Vec::new();
        let mut resolution = None;
        let mut count = None;
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(bad("header not terminated".into()));
            }
            let l = line.trim_end_matches('\n');
            if l == "end" {
                break;
            }
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed header line {l:?}")))?;
            match k {
                "resolution" => resolution = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "grids" => count = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                _ => meta.push((k.to_string(), v.to_string())),
            }
        }
        let n = resolution.ok_or_else(|| bad("missing resolution".into()))?;
        let count = count.ok_or_else(|| bad("missing grid count".into()))?;
        let mut grids = Vec::with_capacity(count);
        let mut buf = vec![0u8; n * n * n * 8];
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            let data = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            grids.push(PeriodicGrid::from_data(n, data));
        }
        Ok(FieldFile { meta, grids })
    }
}
