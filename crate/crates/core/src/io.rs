//! Reading and writing datasets and index files.
//!
//! EMB1 layout, all little-endian, no padding:
//!
//! ```text
//! "EMB1" | u32 version=1 | u32 n | u32 dim | u8 has_labels | [u32 k]
//!        | n*dim f32 row-major | [n i32 labels, -1 = unlabeled]
//! ```
//!
//! CSV has a header `f0,...,f{dim-1}[,label]`; the class count is inferred as
//! one more than the largest label.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{EmbeddingDataset, Labels, SampleIndexSet, UNLABELED};
use crate::error::{Error, Result};

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";
pub const EMB1_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Binary,
    Csv,
}

impl Format {
    /// `.csv` selects CSV, anything else EMB1.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Binary,
        }
    }
}

fn with_path(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| with_path(path, e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| with_path(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>, format: Format) -> Result<EmbeddingDataset> {
    let file = open(path.as_ref())?;
    match format {
        Format::Binary => read_emb1(BufReader::new(file)),
        Format::Csv => read_csv(BufReader::new(file)),
    }
}

pub fn save_dataset(ds: &EmbeddingDataset, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let mut w = BufWriter::new(create(path.as_ref())?);
    match format {
        Format::Binary => write_emb1(ds, &mut w)?,
        Format::Csv => write_csv(ds, &mut w)?,
    }
    w.flush()?;
    Ok(())
}

/// Reader wrapper that tracks the byte offset for error messages.
struct Counting<R> {
    inner: R,
    pos: u64,
}

impl<R: Read> Read for Counting<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.pos += n as u64;
        Ok(n)
    }
}

impl<R: Read> Counting<R> {
    fn field<T>(
        &mut self,
        what: &str,
        f: impl FnOnce(&mut Self) -> std::io::Result<T>,
    ) -> Result<T> {
        let at = self.pos;
        f(self).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => {
                Error::format(format!("byte {at}"), format!("truncated file while reading {what}"))
            }
            _ => Error::Io(e),
        })
    }
}

pub fn read_emb1<R: Read>(reader: R) -> Result<EmbeddingDataset> {
    let mut r = Counting { inner: reader, pos: 0 };

    let mut magic = [0u8; 4];
    r.field("magic", |r| r.read_exact(&mut magic))?;
    if &magic != EMB1_MAGIC {
        return Err(Error::format("byte 0", format!("bad magic {magic:?}, expected \"EMB1\"")));
    }
    let at = r.pos;
    let version = r.field("version", |r| r.read_u32::<LittleEndian>())?;
    if version != EMB1_VERSION {
        return Err(Error::format(format!("byte {at}"), format!("unsupported version {version}")));
    }
    let at = r.pos;
    let n = r.field("n", |r| r.read_u32::<LittleEndian>())? as usize;
    if n == 0 {
        return Err(Error::format(format!("byte {at}"), "sample count n must be >= 1"));
    }
    let at = r.pos;
    let dim = r.field("dim", |r| r.read_u32::<LittleEndian>())? as usize;
    if dim == 0 {
        return Err(Error::format(format!("byte {at}"), "dimension must be >= 1"));
    }
    let at = r.pos;
    let has_labels = match r.field("has_labels", |r| r.read_u8())? {
        0 => false,
        1 => true,
        other => {
            return Err(Error::format(
                format!("byte {at}"),
                format!("has_labels flag must be 0 or 1, found {other}"),
            ))
        }
    };
    let k = if has_labels {
        let at = r.pos;
        let k = r.field("k", |r| r.read_u32::<LittleEndian>())? as usize;
        if k == 0 || k > i32::MAX as usize {
            return Err(Error::format(format!("byte {at}"), format!("invalid class count {k}")));
        }
        Some(k)
    } else {
        None
    };

    let total = n
        .checked_mul(dim)
        .ok_or_else(|| Error::format("header", "n * dim overflows"))?;
    let start = r.pos;
    let mut data = vec![0f32; total];
    r.field("features", |r| r.read_f32_into::<LittleEndian>(&mut data))?;
    if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(
            format!("byte {}", start + 4 * bad as u64),
            format!("non-finite value at row {}, column {}", bad / dim, bad % dim),
        ));
    }

    let labels = match k {
        None => None,
        Some(k) => {
            let start = r.pos;
            let mut values = vec![0i32; n];
            r.field("labels", |r| r.read_i32_into::<LittleEndian>(&mut values))?;
            if let Some(bad) = values
                .iter()
                .position(|&l| l != UNLABELED && (l < 0 || l as usize >= k))
            {
                return Err(Error::format(
                    format!("byte {}", start + 4 * bad as u64),
                    format!("label {} at row {bad} out of range [0, {k})", values[bad]),
                ));
            }
            Some(Labels::new(values, k)?)
        }
    };

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::format(format!("byte {}", r.pos - 1), "trailing bytes after payload"));
    }

    let features = Array2::from_shape_vec((n, dim), data)
        .map_err(|e| Error::InvalidDataset(e.to_string()))?;
    EmbeddingDataset::new(features, labels)
}

pub fn write_emb1<W: Write>(ds: &EmbeddingDataset, w: &mut W) -> Result<()> {
    let too_big = |what: &str| Error::InvalidDataset(format!("{what} exceeds u32 range"));
    w.write_all(EMB1_MAGIC)?;
    w.write_u32::<LittleEndian>(EMB1_VERSION)?;
    w.write_u32::<LittleEndian>(u32::try_from(ds.n()).map_err(|_| too_big("n"))?)?;
    w.write_u32::<LittleEndian>(u32::try_from(ds.dim()).map_err(|_| too_big("dim"))?)?;
    match ds.labels() {
        Some(l) => {
            w.write_u8(1)?;
            w.write_u32::<LittleEndian>(l.k() as u32)?;
        }
        None => w.write_u8(0)?,
    }
    for &v in ds.features().iter() {
        w.write_f32::<LittleEndian>(v)?;
    }
    if let Some(l) = ds.labels() {
        for &v in l.values() {
            w.write_i32::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<EmbeddingDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::format("line 1", e.to_string()))?
        .clone();
    let has_labels = headers.iter().next_back() == Some("label");
    let dim = headers.len() - usize::from(has_labels);
    if dim == 0 {
        return Err(Error::format("line 1", "no feature columns"));
    }
    for (c, h) in headers.iter().take(dim).enumerate() {
        if h != format!("f{c}") {
            return Err(Error::format("line 1", format!("expected column f{c}, found {h:?}")));
        }
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::format(format!("line {line}"), e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != headers.len() {
            return Err(Error::format(
                format!("line {line}"),
                format!("expected {} fields, found {}", headers.len(), rec.len()),
            ));
        }
        for (c, field) in rec.iter().take(dim).enumerate() {
            let v: f32 = field.trim().parse().map_err(|_| {
                Error::format(format!("line {line}"), format!("column {c}: cannot parse {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(Error::format(
                    format!("line {line}"),
                    format!("non-finite value at line {line}, column {c}"),
                ));
            }
            data.push(v);
        }
        if has_labels {
            let field = rec.get(dim).unwrap_or("").trim();
            let l: i32 = field.parse().map_err(|_| {
                Error::format(format!("line {line}"), format!("cannot parse label {field:?}"))
            })?;
            if l < UNLABELED {
                return Err(Error::format(format!("line {line}"), format!("label {l} out of range")));
            }
            labels.push(l);
        }
    }
    let n = data.len() / dim;
    if n == 0 {
        return Err(Error::format("line 2", "no data rows"));
    }
    let labels = if has_labels {
        let k = labels.iter().copied().max().unwrap_or(UNLABELED) + 1;
        if k <= 0 {
            return Err(Error::InvalidDataset("label column holds no labeled rows".into()));
        }
        Some(Labels::new(labels, k as usize)?)
    } else {
        None
    };
    let features = Array2::from_shape_vec((n, dim), data)
        .map_err(|e| Error::InvalidDataset(e.to_string()))?;
    EmbeddingDataset::new(features, labels)
}

pub fn write_csv<W: Write>(ds: &EmbeddingDataset, w: &mut W) -> Result<()> {
    let mut header: Vec<String> = (0..ds.dim()).map(|c| format!("f{c}")).collect();
    if ds.labels().is_some() {
        header.push("label".into());
    }
    writeln!(w, "{}", header.join(","))?;
    for i in 0..ds.n() {
        let mut fields: Vec<String> = ds.row(i).iter().map(|v| v.to_string()).collect();
        if let Some(l) = ds.labels() {
            fields.push(l.values()[i].to_string());
        }
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

/// One decimal index per line, ascending.
pub fn write_indices(set: &SampleIndexSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(create(path.as_ref())?);
    for i in set.iter() {
        writeln!(w, "{i}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an index file; blank lines are skipped, order must be strictly
/// increasing.
pub fn read_indices(path: impl AsRef<Path>) -> Result<SampleIndexSet> {
    let reader = BufReader::new(open(path.as_ref())?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: usize = t.parse().map_err(|_| {
            Error::format(format!("line {}", lineno + 1), format!("not an index: {t:?}"))
        })?;
        if out.last().is_some_and(|&prev| prev >= v) {
            return Err(Error::format(
                format!("line {}", lineno + 1),
                "indices must be strictly increasing",
            ));
        }
        out.push(v);
    }
    SampleIndexSet::from_sorted(out)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(create(path.as_ref())?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let reader = BufReader::new(open(path.as_ref())?);
    serde_json::from_reader(reader)
        .map_err(|e| Error::format(path.as_ref().display().to_string(), e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> EmbeddingDataset {
        EmbeddingDataset::from_rows(
            vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]],
            Some((vec![0, 0, 1], 2)),
        )
        .unwrap()
    }

    fn hand_built() -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"EMB1");
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&3u32.to_le_bytes());
        b.extend_from_slice(&2u32.to_le_bytes());
        b.push(1);
        b.extend_from_slice(&2u32.to_le_bytes());
        for v in [0f32, 0., 1., 1., 2., 2.] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for l in [0i32, 0, 1] {
            b.extend_from_slice(&l.to_le_bytes());
        }
        b
    }

    #[test]
    fn reads_hand_built_file() {
        let ds = read_emb1(&hand_built()[..]).unwrap();
        assert_eq!(ds, toy());
        assert_eq!(ds.k(), Some(2));
        let mut out = Vec::new();
        write_emb1(&ds, &mut out).unwrap();
        assert_eq!(out, hand_built());
    }

    #[test]
    fn binary_errors_carry_byte_positions() {
        let mut b = hand_built();
        b[0] = b'X';
        assert!(read_emb1(&b[..]).unwrap_err().to_string().contains("byte 0"));

        let mut b = hand_built();
        // second feature of row 1 -> NaN; features start at byte 21
        b[21 + 12..21 + 16].copy_from_slice(&f32::NAN.to_le_bytes());
        let msg = read_emb1(&b[..]).unwrap_err().to_string();
        assert!(msg.contains("byte 33") && msg.contains("non-finite"), "{msg}");

        let mut b = hand_built();
        let len = b.len();
        b[len - 4..].copy_from_slice(&5i32.to_le_bytes());
        let msg = read_emb1(&b[..]).unwrap_err().to_string();
        assert!(msg.contains("out of range") && msg.contains(&format!("byte {}", len - 4)), "{msg}");

        let b = hand_built();
        assert!(read_emb1(&b[..b.len() - 2]).unwrap_err().to_string().contains("truncated"));

        let mut b = hand_built();
        b.push(0);
        assert!(read_emb1(&b[..]).unwrap_err().to_string().contains("trailing"));

        let mut b = hand_built();
        b[12..16].copy_from_slice(&0u32.to_le_bytes());
        assert!(read_emb1(&b[..]).is_err());
    }

    #[test]
    fn csv_nan_reports_line() {
        let text = "f0,f1,label\n0,0,0\n1,NaN,1\n";
        let err = read_csv(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("non-finite value at line 3"), "{err}");
    }

    #[test]
    fn csv_round_trip_and_unlabeled() {
        let ds = toy();
        let mut out = Vec::new();
        write_csv(&ds, &mut out).unwrap();
        assert!(String::from_utf8_lossy(&out).starts_with("f0,f1,label\n"));
        assert_eq!(read_csv(&out[..]).unwrap(), ds);

        let unl = EmbeddingDataset::new(ds.features().to_owned(), None).unwrap();
        let mut out = Vec::new();
        write_emb1(&unl, &mut out).unwrap();
        assert!(read_emb1(&out[..]).unwrap().labels().is_none());
        let mut out = Vec::new();
        write_csv(&unl, &mut out).unwrap();
        assert!(read_csv(&out[..]).unwrap().labels().is_none());
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        assert!(read_csv("f0,f1\n1,2\n3\n".as_bytes()).is_err());
        assert!(read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn single_row_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = EmbeddingDataset::from_rows(vec![vec![1.5, -2.25, 3.0]], Some((vec![0], 1))).unwrap();
        for fmt in [Format::Binary, Format::Csv] {
            let p = dir.path().join(format!("one.{fmt:?}"));
            save_dataset(&ds, &p, fmt).unwrap();
            assert_eq!(load_dataset(&p, fmt).unwrap(), ds);
        }
    }

    #[test]
    fn index_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("idx.txt");
        let set = SampleIndexSet::from_sorted(vec![0, 4, 9]).unwrap();
        write_indices(&set, &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "0\n4\n9\n");
        assert_eq!(read_indices(&p).unwrap(), set);
        write_indices(&SampleIndexSet::new(), &p).unwrap();
        assert!(read_indices(&p).unwrap().is_empty());
        std::fs::write(&p, "3\n1\n").unwrap();
        assert!(read_indices(&p).is_err());
    }

    fn arb_dataset() -> impl Strategy<Value = EmbeddingDataset> {
        (1usize..64, 1usize..24, any::<bool>(), any::<u64>()).prop_map(|(n, dim, labeled, seed)| {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f32>> = (0..n)
                .map(|_| {
                    (0..dim)
                        .map(|_| {
                            // arbitrary finite bit patterns, including subnormals
                            loop {
                                let v = f32::from_bits(rng.random());
                                if v.is_finite() {
                                    break v;
                                }
                            }
                        })
                        .collect()
                })
                .collect();
            let labels = labeled.then(|| {
                let k = rng.random_range(1..=n.min(5));
                let mut v: Vec<i32> = (0..n).map(|_| rng.random_range(-1..k as i32)).collect();
                for c in 0..k {
                    v[c] = c as i32;
                }
                (v, k)
            });
            EmbeddingDataset::from_rows(rows, labels).unwrap()
        })
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_bit_exact(ds in arb_dataset()) {
            let mut buf = Vec::new();
            write_emb1(&ds, &mut buf).unwrap();
            let back = read_emb1(&buf[..]).unwrap();
            prop_assert_eq!(back.labels(), ds.labels());
            let a: Vec<u32> = back.features().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = ds.features().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn csv_round_trip_within_six_digits(ds in arb_dataset()) {
            let mut buf = Vec::new();
            write_csv(&ds, &mut buf).unwrap();
            let back = read_csv(&buf[..]).unwrap();
            for (x, y) in back.features().iter().zip(ds.features().iter()) {
                prop_assert!((x - y).abs() <= 1e-6 * y.abs().max(f32::MIN_POSITIVE));
            }
        }
    }

    #[test]
    fn large_random_binary_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f32> = (0..10_000 * 64).map(|_| rng.random_range(-1e3f32..1e3)).collect();
        let ds = EmbeddingDataset::new(Array2::from_shape_vec((10_000, 64), data).unwrap(), None).unwrap();
        let mut buf = Vec::new();
        write_emb1(&ds, &mut buf).unwrap();
        assert_eq!(buf.len(), 17 + 10_000 * 64 * 4);
        let back = read_emb1(&buf[..]).unwrap();
        assert!(back.features().iter().zip(ds.features().iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
