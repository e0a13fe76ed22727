//! Versioned binary dumps (regions, scalar fields, spin configurations), CSV
//! exports and JSON helpers.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classification::BoxReport;
use crate::energy::SpinConfig;
use crate::error::{Error, Result};
use crate::fields::{Bc, ScalarField};
use crate::geometry::{Region, Site};
use crate::sampler::Series;
use crate::variational::TracePoint;

pub const REGION_MAGIC: &[u8; 4] = b"RFO1";
pub const FIELD_MAGIC: &[u8; 4] = b"RFOF";
pub const SPIN_MAGIC: &[u8; 4] = b"RFOS";
pub const FORMAT_VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or_else(|| Error::Format("truncated input".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != want {
            return Err(Error::Format(format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), String::from_utf8_lossy(want))));
        }
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {v}")));
        }
        Ok(())
    }
}

fn header(out: &mut Vec<u8>, magic: &[u8; 4]) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
}

/// Run-length form: runs of consecutive sites along the last axis.
pub fn encode_region(region: &Region) -> Vec<u8> {
    let dim = region.dim();
    let mut runs: Vec<(Site, u64)> = Vec::new();
    for &x in region.sites() {
        if let Some((start, len)) = runs.last_mut() {
            let mut next = *start;
            next.0[dim - 1] += *len as i64;
            if next == x {
                *len += 1;
                continue;
            }
        }
        runs.push((x, 1));
    }
    let mut out = Vec::with_capacity(20 + runs.len() * 8 * (dim + 1));
    header(&mut out, REGION_MAGIC);
    out.extend_from_slice(&(dim as u64).to_le_bytes());
    out.extend_from_slice(&(runs.len() as u64).to_le_bytes());
    for (start, len) in runs {
        for c in &start.0[..dim] {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.extend_from_slice(&len.to_le_bytes());
    }
    out
}

fn read_region(r: &mut Reader) -> Result<Region> {
    r.magic(REGION_MAGIC)?;
    let dim = r.u64()? as usize;
    if !(1..=3).contains(&dim) {
        return Err(Error::Format(format!("dimension {dim} out of range")));
    }
    let n = r.u64()?;
    let mut sites = Vec::new();
    for _ in 0..n {
        let mut start = Site::origin();
        for c in start.0.iter_mut().take(dim) {
            *c = r.i64()?;
        }
        let len = r.u64()?;
        if len > 1 << 32 {
            return Err(Error::Format("run length out of range".into()));
        }
        for k in 0..len as i64 {
            let mut x = start;
            x.0[dim - 1] += k;
            sites.push(x);
        }
    }
    let region = Region::from_sites(dim, sites);
    Ok(region)
}

pub fn decode_region(bytes: &[u8]) -> Result<Region> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let region = read_region(&mut r)?;
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after region".into()));
    }
    Ok(region)
}

/// Stable 64-bit FNV-1a hash of the region's binary form.
pub fn region_hash(region: &Region) -> u64 {
    encode_region(region).iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Header of a field or spin dump; also written as the JSON sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpMeta {
    pub kind: String,
    pub dim: usize,
    pub lambda: f64,
    /// "none", "dirichlet" or "neumann"
    pub bc: String,
    pub region_hash: u64,
    pub epsilon: f64,
    pub seed: u64,
    pub sites: usize,
}

impl DumpMeta {
    pub fn new(kind: &str, region: &Region, lambda: f64, bc: Option<Bc>, epsilon: f64, seed: u64) -> DumpMeta {
        DumpMeta {
            kind: kind.to_string(),
            dim: region.dim(),
            lambda,
            bc: bc_name(bc).to_string(),
            region_hash: region_hash(region),
            epsilon,
            seed,
            sites: region.len(),
        }
    }
}

fn bc_name(bc: Option<Bc>) -> &'static str {
    match bc {
        None => "none",
        Some(Bc::Dirichlet) => "dirichlet",
        Some(Bc::Neumann) => "neumann",
    }
}

fn bc_code(name: &str) -> Result<u8> {
    match name {
        "none" => Ok(0),
        "dirichlet" => Ok(1),
        "neumann" => Ok(2),
        _ => Err(Error::Format(format!("unknown boundary condition {name}"))),
    }
}

fn bc_from_code(c: u8) -> Result<&'static str> {
    match c {
        0 => Ok("none"),
        1 => Ok("dirichlet"),
        2 => Ok("neumann"),
        _ => Err(Error::Format(format!("unknown boundary condition code {c}"))),
    }
}

fn encode_values(magic: &[u8; 4], meta: &DumpMeta, region: &Region, values: &[f64]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    header(&mut out, magic);
    out.extend_from_slice(&(meta.dim as u64).to_le_bytes());
    out.extend_from_slice(&meta.lambda.to_le_bytes());
    out.push(bc_code(&meta.bc)?);
    out.extend_from_slice(&meta.region_hash.to_le_bytes());
    out.extend_from_slice(&meta.epsilon.to_le_bytes());
    out.extend_from_slice(&meta.seed.to_le_bytes());
    out.extend_from_slice(&encode_region(region));
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn decode_values(magic: &[u8; 4], kind: &str, bytes: &[u8]) -> Result<(DumpMeta, Region, Vec<f64>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.magic(magic)?;
    let dim = r.u64()? as usize;
    let lambda = r.f64()?;
    let bc = bc_from_code(r.u8()?)?.to_string();
    let hash = r.u64()?;
    let epsilon = r.f64()?;
    let seed = r.u64()?;
    let region = read_region(&mut r)?;
    if region.dim() != dim || region_hash(&region) != hash {
        return Err(Error::Format("region does not match the header".into()));
    }
    let n = r.u64()? as usize;
    if n != region.len() {
        return Err(Error::Format(format!("{n} values for {} sites", region.len())));
    }
    let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after values".into()));
    }
    let meta = DumpMeta { kind: kind.to_string(), dim, lambda, bc, region_hash: hash, epsilon, seed, sites: n };
    Ok((meta, region, values))
}

pub fn encode_field(field: &ScalarField, meta: &DumpMeta) -> Result<Vec<u8>> {
    encode_values(FIELD_MAGIC, meta, field.region(), field.values())
}

pub fn decode_field(bytes: &[u8]) -> Result<(DumpMeta, ScalarField)> {
    let (meta, region, values) = decode_values(FIELD_MAGIC, "field", bytes)?;
    Ok((meta, ScalarField::new(Arc::new(region), values)?))
}

pub fn encode_spins(sigma: &SpinConfig, meta: &DumpMeta) -> Result<Vec<u8>> {
    encode_values(SPIN_MAGIC, meta, sigma.region(), sigma.angles())
}

pub fn decode_spins(bytes: &[u8]) -> Result<(DumpMeta, SpinConfig)> {
    let (meta, region, values) = decode_values(SPIN_MAGIC, "spins", bytes)?;
    Ok((meta, SpinConfig::new(Arc::new(region), values)?))
}

/// JSON list of coordinate tuples.
pub fn region_to_json(region: &Region) -> serde_json::Value {
    let dim = region.dim();
    serde_json::Value::Array(region.sites().iter().map(|x| serde_json::json!(x.coords(dim))).collect())
}

pub fn region_from_json(value: &serde_json::Value) -> Result<Region> {
    let coords: Vec<Vec<i64>> = serde_json::from_value(value.clone())?;
    let dim = coords.first().map_or(1, |c| c.len());
    if !(1..=3).contains(&dim) || coords.iter().any(|c| c.len() != dim) {
        return Err(Error::Format("coordinate tuples must share a dimension in 1..=3".into()));
    }
    Ok(Region::from_sites(dim, coords.iter().map(|c| Site::new(c))))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// One row per box, one margin column and one pass column per condition.
pub fn write_box_reports<W: Write>(out: W, dim: usize, reports: &[BoxReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut head: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    head.push("side".into());
    for c in BoxReport::COLUMNS {
        head.push(format!("{c}_margin"));
        head.push(format!("{c}_holds"));
    }
    head.push("nice".into());
    head.push("good".into());
    w.write_record(&head).map_err(csv_err)?;
    for r in reports {
        let mut row: Vec<String> = r.corner.coords(dim).iter().map(|c| c.to_string()).collect();
        row.push(r.side.to_string());
        for c in r.checks() {
            row.push(format!("{:e}", c.margin));
            row.push(c.holds.to_string());
        }
        row.push(r.nice.to_string());
        row.push(r.good.map_or(String::new(), |g| g.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Observable series: sweep, energy, magnetization, then block magnetizations.
pub fn write_series<W: Write>(out: W, dim: usize, series: &Series) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut head = vec!["sweep".to_string(), "energy".into(), "m1".into(), "m2".into()];
    for c in &series.block_corners {
        let tag = c.coords(dim).iter().map(|v| v.to_string()).collect::<Vec<_>>().join("_");
        head.push(format!("b{tag}_m1"));
        head.push(format!("b{tag}_m2"));
    }
    w.write_record(&head).map_err(csv_err)?;
    for r in &series.records {
        let mut row = vec![r.sweep.to_string(), format!("{:e}", r.energy), format!("{:e}", r.magnetization[0]), format!("{:e}", r.magnetization[1])];
        for b in &r.blocks {
            row.push(format!("{:e}", b[0]));
            row.push(format!("{:e}", b[1]));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Convergence trace: iteration, objective, residual.
pub fn write_trace<W: Write>(out: W, trace: &[TracePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "objective", "residual"]).map_err(csv_err)?;
    for t in trace {
        w.write_record([t.iteration.to_string(), format!("{:e}", t.objective), format!("{:e}", t.residual)]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_all(mut src: impl Read) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    src.read_to_end(&mut buf)?;
    Ok(buf)
}
