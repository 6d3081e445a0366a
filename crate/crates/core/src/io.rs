//! Operator files.
//!
//! Text form: a `#cascade-op v1` line, `key value` header lines (`kind`,
//! `dim`, `hermitian`, `order`), a `data` line, then one `re im` pair per
//! line in row-major order.
//!
//! Binary form: the 8-byte magic `CSCOPv1\0`, kind (u8: 0 Harmonic,
//! 1 HalfWave), hermitian (u8), dim (u64 LE), order (f64 LE), then
//! `2 N^2` f64 LE values, row-major `re, im` pairs.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use faer::Mat;

use crate::basis::{BasisKind, BasisModel};
use crate::operator::TruncatedOperator;
use crate::{Error, Result, C64};

const MAGIC: &[u8; 8] = b"CSCOPv1\0";
const TEXT_TAG: &str = "#cascade-op v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpFormat {
    Text,
    Binary,
}

impl OpFormat {
    /// `.mat` and `.bin` are binary, anything else text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("mat") | Some("bin") => OpFormat::Binary,
            _ => OpFormat::Text,
        }
    }
}

fn kind_code(k: BasisKind) -> u8 {
    match k {
        BasisKind::Harmonic => 0,
        BasisKind::HalfWave => 1,
    }
}

fn kind_from(code: u8) -> Result<BasisKind> {
    match code {
        0 => Ok(BasisKind::Harmonic),
        1 => Ok(BasisKind::HalfWave),
        c => Err(Error::Format(format!("unknown basis kind code {c}"))),
    }
}

pub fn write_operator<W: Write>(op: &TruncatedOperator, fmt: OpFormat, mut w: W) -> Result<()> {
    let n = op.dim();
    match fmt {
        OpFormat::Binary => {
            w.write_all(MAGIC)?;
            w.write_all(&[kind_code(op.basis.kind()), op.hermitian as u8])?;
            w.write_all(&(n as u64).to_le_bytes())?;
            w.write_all(&op.order_tag.to_le_bytes())?;
            let mut buf = Vec::with_capacity(16 * n);
            for i in 0..n {
                buf.clear();
                for j in 0..n {
                    let z = op.matrix[(i, j)];
                    buf.extend_from_slice(&z.re.to_le_bytes());
                    buf.extend_from_slice(&z.im.to_le_bytes());
                }
                w.write_all(&buf)?;
            }
        }
        OpFormat::Text => {
            writeln!(w, "{TEXT_TAG}")?;
            writeln!(w, "kind {:?}", op.basis.kind())?;
            writeln!(w, "dim {n}")?;
            writeln!(w, "hermitian {}", op.hermitian as u8)?;
            writeln!(w, "order {:e}", op.order_tag)?;
            writeln!(w, "data")?;
            for i in 0..n {
                for j in 0..n {
                    let z = op.matrix[(i, j)];
                    writeln!(w, "{:e} {:e}", z.re, z.im)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_operator(op: &TruncatedOperator, path: &Path) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_operator(op, OpFormat::from_path(path), f)
}

/// Reads either form, detected from the first bytes.
pub fn read_operator<R: Read>(r: R) -> Result<TruncatedOperator> {
    let mut r = BufReader::new(r);
    let head = r.fill_buf()?;
    if head.starts_with(MAGIC) {
        read_binary(r)
    } else {
        read_text(r)
    }
}

pub fn load_operator(path: &Path) -> Result<TruncatedOperator> {
    read_operator(std::fs::File::open(path)?)
}

fn read_binary<R: Read>(mut r: R) -> Result<TruncatedOperator> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    let mut flags = [0u8; 2];
    r.read_exact(&mut flags)?;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let order = f64::from_le_bytes(b8);
    let basis = BasisModel::shared(kind_from(flags[0])?, n)?;
    let mut raw = vec![0u8; 16 * n * n];
    r.read_exact(&mut raw)?;
    let val = |k: usize| f64::from_le_bytes(raw[8 * k..8 * k + 8].try_into().unwrap());
    let m = Mat::from_fn(n, n, |i, j| {
        let k = 2 * (i * n + j);
        C64::new(val(k), val(k + 1))
    });
    finish(basis, m, order, flags[1] != 0)
}

fn read_text<R: BufRead>(r: R) -> Result<TruncatedOperator> {
    let mut lines = r.lines();
    let mut next = || -> Result<String> {
        lines.next().ok_or_else(|| Error::Format("unexpected end of file".into()))?.map_err(Error::from)
    };
    if next()?.trim() != TEXT_TAG {
        return Err(Error::Format("missing operator header".into()));
    }
    let (mut kind, mut dim, mut herm, mut order) = (None, None, None, None);
    loop {
        let line = next()?;
        let line = line.trim();
        if line == "data" {
            break;
        }
        let (key, value) = line.split_once(' ').ok_or_else(|| Error::Format(format!("bad header line {line}")))?;
        let bad = |_| Error::Format(format!("bad value for {key}: {value}"));
        match key {
            "kind" => {
                kind = Some(match value {
                    "Harmonic" => BasisKind::Harmonic,
                    "HalfWave" => BasisKind::HalfWave,
                    _ => return Err(Error::Format(format!("unknown kind {value}"))),
                })
            }
            "dim" => dim = Some(value.parse::<usize>().map_err(|_| Error::Format(format!("bad dim {value}")))?),
            "hermitian" => herm = Some(value == "1" || value == "true"),
            "order" => order = Some(value.parse::<f64>().map_err(bad)?),
            _ => return Err(Error::Format(format!("unknown header key {key}"))),
        }
    }
    let missing = |k: &str| Error::Format(format!("missing header {k}"));
    let n = dim.ok_or_else(|| missing("dim"))?;
    let basis = BasisModel::shared(kind.ok_or_else(|| missing("kind"))?, n)?;
    let mut vals = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        let line = next()?;
        let mut it = line.split_whitespace().map(|x| x.parse::<f64>());
        match (it.next(), it.next()) {
            (Some(Ok(re)), Some(Ok(im))) => vals.push(C64::new(re, im)),
            _ => return Err(Error::Format(format!("bad entry line {line}"))),
        }
    }
    let m = Mat::from_fn(n, n, |i, j| vals[i * n + j]);
    finish(basis, m, order.unwrap_or(0.0), herm.unwrap_or(false))
}

fn finish(basis: std::sync::Arc<BasisModel>, m: Mat<C64>, order: f64, hermitian: bool) -> Result<TruncatedOperator> {
    let op = TruncatedOperator::new(basis, m, order)?;
    if hermitian && !op.hermitian {
        return Err(Error::NotHermitian { defect: op.hermitian_defect() });
    }
    Ok(op)
}
