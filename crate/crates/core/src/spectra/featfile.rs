//! `SPEC1` feature files: magic, one JSON header line, then `F·T`
//! little-endian `f32` values in frequency-major order.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FrameParams, Matrix, SpectraError, Spectrogram, SpectrogramKind};

const MAGIC: &[u8; 5] = b"SPEC1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spec1Header {
    pub kind: SpectrogramKind,
    #[serde(rename = "F")]
    pub f: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub params: FrameParams,
    pub source_id: String,
    /// Soft label, present on patch dumps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
}

pub fn write_spec1<W: Write>(mut w: W, header: &Spec1Header, data: &[f64]) -> Result<(), SpectraError> {
    if data.len() != header.f * header.t {
        return Err(SpectraError::Format(format!(
            "header declares {}×{} values, got {}",
            header.f,
            header.t,
            data.len()
        )));
    }
    let json = serde_json::to_string(header).map_err(|e| SpectraError::Format(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(json.as_bytes())?;
    w.write_all(b"\n")?;
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for &v in data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Reads the magic and header, leaving the reader at the start of the payload.
pub fn read_spec1_header<R: BufRead>(r: &mut R) -> Result<Spec1Header, SpectraError> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| SpectraError::Format("file too short for SPEC1 magic".into()))?;
    if &magic != MAGIC {
        return Err(SpectraError::Format("missing SPEC1 magic".into()));
    }
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(SpectraError::Format("unterminated SPEC1 header".into()));
    }
    serde_json::from_slice(&line).map_err(|e| SpectraError::Format(format!("bad SPEC1 header: {e}")))
}

pub fn read_spec1<R: Read>(r: R) -> Result<(Spec1Header, Vec<f32>), SpectraError> {
    let mut r = BufReader::new(r);
    let header = read_spec1_header(&mut r)?;
    let n = header.f * header.t;
    let mut bytes = Vec::with_capacity(n * 4);
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * 4 {
        return Err(SpectraError::Format(format!(
            "payload has {} bytes, header implies {}",
            bytes.len(),
            n * 4
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, data))
}

/// Writes to a temporary sibling and renames it into place.
pub(crate) fn write_atomic(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<(), SpectraError>,
) -> Result<(), SpectraError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        f(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

impl Spectrogram {
    pub fn header(&self) -> Spec1Header {
        Spec1Header {
            kind: self.kind,
            f: self.data.rows(),
            t: self.data.cols(),
            params: self.params,
            source_id: self.source_id.clone(),
            label: None,
            index: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), SpectraError> {
        let header = self.header();
        write_atomic(path, |w| write_spec1(w, &header, self.data.data()))
    }

    /// Loads a feature file; values come back rounded to `f32`.
    pub fn load(path: &Path) -> Result<Spectrogram, SpectraError> {
        let (h, data) = read_spec1(fs::File::open(path)?)?;
        let data = Matrix::from_vec(h.f, h.t, data.into_iter().map(f64::from).collect())
            .ok_or_else(|| SpectraError::Format("payload size mismatch".into()))?;
        Spectrogram::new(h.kind, data, h.params, h.source_id)
    }
}
