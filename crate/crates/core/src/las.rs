//! LAS 1.2–1.4 point-cloud reading and writing (point formats 0–3), plus a
//! whitespace-separated text fallback.
//!
//! Only the parts of the format the height pipeline needs are interpreted:
//! the public header block, and the fixed leading fields of each point
//! record. Variable-length records are skipped, never parsed.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const LAS_SIGNATURE: &[u8; 4] = b"LASF";

/// Header block sizes for the supported minor versions of LAS 1.x.
const HEADER_SIZE_1_2: usize = 227;
const HEADER_SIZE_1_3: usize = 235;
const HEADER_SIZE_1_4: usize = 375;

/// Largest value a 5-bit legacy classification field can hold.
pub const MAX_LEGACY_CLASS: u8 = 31;

#[derive(Debug, Error)]
pub enum LasError {
    #[error("bad file signature {0:?}, expected \"LASF\"")]
    BadMagic([u8; 4]),
    #[error("unsupported LAS version {0}.{1} (supported: 1.2 to 1.4)")]
    UnsupportedVersion(u8, u8),
    #[error("unsupported point data format {0} (supported: 0 to 3)")]
    UnsupportedPointFormat(u8),
    #[error("truncated input: needed {needed} bytes, found {found}")]
    Truncated { needed: u64, found: u64 },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("coordinate {value} on axis {axis} does not fit a 32-bit raw integer at the given scale and offset")]
    QuantizationOverflow { axis: char, value: f64 },
    #[error("classification {0} does not fit the 5-bit class field of point formats 0 to 3")]
    ClassificationOutOfRange(u8),
    #[error("malformed line {0}: expected \"x y z classification\"")]
    MalformedLine(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Axis triple used for scale, offset and bounding-box corners.
pub type Xyz = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct LasHeader {
    pub signature: [u8; 4],
    pub version: (u8, u8),
    pub header_size: u16,
    pub point_format_id: u8,
    pub point_count: u64,
    pub scale: Xyz,
    pub offset: Xyz,
    pub bbox_min: Xyz,
    pub bbox_max: Xyz,
    pub point_data_offset: u32,
    pub point_record_length: u16,
}

impl LasHeader {
    pub fn has_color(&self) -> bool {
        matches!(self.point_format_id, 2 | 3)
    }
}

/// Minimum number of bytes a point record of the given format occupies.
pub fn point_format_length(format: u8) -> Option<u16> {
    match format {
        0 => Some(20),
        1 => Some(28),
        2 => Some(26),
        3 => Some(34),
        _ => None,
    }
}

fn fixed_header_size(minor: u8) -> usize {
    match minor {
        2 => HEADER_SIZE_1_2,
        3 => HEADER_SIZE_1_3,
        _ => HEADER_SIZE_1_4,
    }
}

/// One LiDAR return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointRecord {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: u16,
    pub classification: u8,
    pub color: Option<[u16; 3]>,
    pub nir: Option<u16>,
}

impl PointRecord {
    pub fn new(x: f64, y: f64, z: f64, classification: u8) -> Self {
        Self {
            x,
            y,
            z,
            intensity: 0,
            classification,
            color: None,
            nir: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Header
// ---------------------------------------------------------------------------

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

fn i32_at(b: &[u8], at: usize) -> i32 {
    i32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn truncated(needed: usize, found: usize) -> LasError {
    LasError::Truncated {
        needed: needed as u64,
        found: found as u64,
    }
}

/// Parses and validates the public header block at the start of `bytes`.
///
/// `bytes` may extend past the header (e.g. a whole file); only the header
/// block is inspected.
pub fn parse_las_header(bytes: &[u8]) -> Result<LasHeader, LasError> {
    if bytes.len() < 4 {
        return Err(truncated(4, bytes.len()));
    }
    let signature: [u8; 4] = bytes[0..4].try_into().unwrap();
    if &signature != LAS_SIGNATURE {
        return Err(LasError::BadMagic(signature));
    }
    if bytes.len() < 26 {
        return Err(truncated(26, bytes.len()));
    }
    let (major, minor) = (bytes[24], bytes[25]);
    if major != 1 || !(2..=4).contains(&minor) {
        return Err(LasError::UnsupportedVersion(major, minor));
    }
    let fixed = fixed_header_size(minor);
    if bytes.len() < fixed {
        return Err(truncated(fixed, bytes.len()));
    }

    let header_size = u16_at(bytes, 94);
    if (header_size as usize) < fixed {
        return Err(LasError::InvalidHeader(format!(
            "header size {header_size} is smaller than the {fixed} bytes LAS 1.{minor} requires"
        )));
    }
    if bytes.len() < header_size as usize {
        return Err(truncated(header_size as usize, bytes.len()));
    }

    let point_data_offset = u32_at(bytes, 96);
    let point_format_id = bytes[104];
    let point_record_length = u16_at(bytes, 105);
    let legacy_count = u32_at(bytes, 107);

    let scale = [f64_at(bytes, 131), f64_at(bytes, 139), f64_at(bytes, 147)];
    let offset = [f64_at(bytes, 155), f64_at(bytes, 163), f64_at(bytes, 171)];
    // Stored as max x, min x, max y, min y, max z, min z.
    let bbox_max = [f64_at(bytes, 179), f64_at(bytes, 195), f64_at(bytes, 211)];
    let bbox_min = [f64_at(bytes, 187), f64_at(bytes, 203), f64_at(bytes, 219)];

    let point_count = if minor >= 4 {
        let extended = u64_at(bytes, 247);
        if extended > 0 {
            extended
        } else {
            legacy_count as u64
        }
    } else {
        legacy_count as u64
    };

    // Some writers set bit 7 of the format id for compressed data.
    let min_record = point_format_length(point_format_id)
        .ok_or(LasError::UnsupportedPointFormat(point_format_id))?;
    if point_record_length < min_record {
        return Err(LasError::InvalidHeader(format!(
            "point record length {point_record_length} is shorter than the {min_record} bytes format {point_format_id} requires"
        )));
    }
    if (point_data_offset as usize) < header_size as usize {
        return Err(LasError::InvalidHeader(format!(
            "point data offset {point_data_offset} lies inside the {header_size}-byte header"
        )));
    }
    for axis in 0..3 {
        let s = scale[axis];
        if !(s.is_finite() && s > 0.0) {
            return Err(LasError::InvalidHeader(format!(
                "scale {s} on axis {axis} is not strictly positive"
            )));
        }
        if !offset[axis].is_finite() {
            return Err(LasError::InvalidHeader(format!(
                "offset on axis {axis} is not finite"
            )));
        }
        if !(bbox_min[axis] <= bbox_max[axis]) {
            return Err(LasError::InvalidHeader(format!(
                "bounding box min {} exceeds max {} on axis {axis}",
                bbox_min[axis], bbox_max[axis]
            )));
        }
    }

    Ok(LasHeader {
        signature,
        version: (major, minor),
        header_size,
        point_format_id,
        point_count,
        scale,
        offset,
        bbox_min,
        bbox_max,
        point_data_offset,
        point_record_length,
    })
}

/// Reads just enough of `source` to parse the header. Returns the header and
/// the number of bytes consumed.
pub fn read_las_header<R: Read>(source: &mut R) -> Result<(LasHeader, u64), LasError> {
    let mut buf = vec![0u8; 26];
    let got = read_fully(source, &mut buf)?;
    if got < buf.len() {
        buf.truncate(got);
        // Lets the parser report BadMagic / Truncated consistently.
        return parse_las_header(&buf).map(|h| (h, got as u64));
    }
    let minor = buf[25];
    let mut want = if buf[24] == 1 && (2..=4).contains(&minor) {
        fixed_header_size(minor)
    } else {
        26
    };
    let mut have = buf.len();
    loop {
        buf.resize(want, 0);
        let got = read_fully(source, &mut buf[have..])?;
        have += got;
        buf.truncate(have);
        if have < want || have < 96 {
            break;
        }
        let declared = u16_at(&buf, 94) as usize;
        if declared <= have {
            break;
        }
        want = declared;
    }
    let header = parse_las_header(&buf)?;
    Ok((header, have as u64))
}

fn read_fully<R: Read>(source: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

// ---------------------------------------------------------------------------
// Points
// ---------------------------------------------------------------------------

/// Streaming iterator over the point records of one LAS file.
pub struct PointReader<R> {
    source: R,
    header: LasHeader,
    to_skip: u64,
    remaining: u64,
    buf: Vec<u8>,
    failed: bool,
}

/// Streams the points of a LAS file. `source` must be positioned at byte 0
/// of the file that `header` was parsed from.
pub fn read_points<R: Read>(source: R, header: &LasHeader) -> PointReader<R> {
    PointReader::with_position(source, header.clone(), 0)
}

impl<R: Read> PointReader<R> {
    /// Like [`read_points`] but with `consumed` bytes already read from the
    /// start of the file.
    pub fn with_position(source: R, header: LasHeader, consumed: u64) -> Self {
        let to_skip = (header.point_data_offset as u64).saturating_sub(consumed);
        let remaining = header.point_count;
        let buf = vec![0u8; header.point_record_length as usize];
        Self {
            source,
            header,
            to_skip,
            remaining,
            buf,
            failed: false,
        }
    }

    pub fn header(&self) -> &LasHeader {
        &self.header
    }

    fn skip_to_points(&mut self) -> Result<(), LasError> {
        if self.to_skip == 0 {
            return Ok(());
        }
        let want = self.to_skip;
        let skipped = io::copy(&mut (&mut self.source).take(want), &mut io::sink())?;
        if skipped < want {
            return Err(LasError::Truncated {
                needed: self.header.point_data_offset as u64,
                found: self.header.point_data_offset as u64 - (want - skipped),
            });
        }
        self.to_skip = 0;
        Ok(())
    }

    fn next_record(&mut self) -> Result<PointRecord, LasError> {
        self.skip_to_points()?;
        let got = read_fully(&mut self.source, &mut self.buf)?;
        if got < self.buf.len() {
            let index = self.header.point_count - self.remaining;
            return Err(LasError::Truncated {
                needed: self.header.point_data_offset as u64
                    + (index + 1) * self.buf.len() as u64,
                found: self.header.point_data_offset as u64
                    + index * self.buf.len() as u64
                    + got as u64,
            });
        }
        Ok(decode_point(&self.buf, &self.header))
    }
}

impl<R: Read> Iterator for PointReader<R> {
    type Item = Result<PointRecord, LasError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.remaining == 0 {
            return None;
        }
        let item = self.next_record();
        match item {
            Ok(_) => self.remaining -= 1,
            Err(_) => self.failed = true,
        }
        Some(item)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        if self.failed {
            (0, Some(0))
        } else {
            (0, usize::try_from(self.remaining).ok())
        }
    }
}

fn decode_point(rec: &[u8], header: &LasHeader) -> PointRecord {
    let [sx, sy, sz] = header.scale;
    let [ox, oy, oz] = header.offset;
    let x = i32_at(rec, 0) as f64 * sx + ox;
    let y = i32_at(rec, 4) as f64 * sy + oy;
    let z = i32_at(rec, 8) as f64 * sz + oz;
    let intensity = u16_at(rec, 12);
    // Formats 0-5 pack synthetic/key-point/withheld flags into the top 3 bits.
    let classification = rec[15] & 0x1f;
    let color = match header.point_format_id {
        2 => Some([u16_at(rec, 20), u16_at(rec, 22), u16_at(rec, 24)]),
        3 => Some([u16_at(rec, 28), u16_at(rec, 30), u16_at(rec, 32)]),
        _ => None,
    };
    PointRecord {
        x,
        y,
        z,
        intensity,
        classification,
        color,
        nir: None,
    }
}

/// Opens a LAS file and returns its header together with a point stream.
pub fn open_las(path: &Path) -> Result<(LasHeader, PointReader<BufReader<File>>), LasError> {
    let mut reader = BufReader::with_capacity(1 << 20, File::open(path)?);
    let (header, consumed) = read_las_header(&mut reader)?;
    let points = PointReader::with_position(reader, header.clone(), consumed);
    Ok((header, points))
}

// ---------------------------------------------------------------------------
// Writing
// ---------------------------------------------------------------------------

fn quantize(value: f64, scale: f64, offset: f64, axis: char) -> Result<i32, LasError> {
    let raw = ((value - offset) / scale).round();
    if !raw.is_finite() || raw < i32::MIN as f64 || raw > i32::MAX as f64 {
        return Err(LasError::QuantizationOverflow { axis, value });
    }
    Ok(raw as i32)
}

/// Encodes `records` as a LAS 1.2 file image. Point format 2 is used when any
/// record carries color, format 0 otherwise.
pub fn encode_las(records: &[PointRecord], scale: Xyz, offset: Xyz) -> Result<Vec<u8>, LasError> {
    for axis in 0..3 {
        if !(scale[axis].is_finite() && scale[axis] > 0.0) || !offset[axis].is_finite() {
            return Err(LasError::InvalidHeader(format!(
                "scale {} / offset {} on axis {axis} cannot be written",
                scale[axis], offset[axis]
            )));
        }
    }
    let count = u32::try_from(records.len())
        .map_err(|_| LasError::InvalidHeader("LAS 1.2 holds at most 2^32-1 points".into()))?;
    let format: u8 = if records.iter().any(|r| r.color.is_some()) { 2 } else { 0 };
    let record_len = point_format_length(format).unwrap();

    let mut body = Vec::with_capacity(records.len() * record_len as usize);
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    let mut by_return = [0u32; 5];
    for r in records {
        if r.classification > MAX_LEGACY_CLASS {
            return Err(LasError::ClassificationOutOfRange(r.classification));
        }
        let raw = [
            quantize(r.x, scale[0], offset[0], 'x')?,
            quantize(r.y, scale[1], offset[1], 'y')?,
            quantize(r.z, scale[2], offset[2], 'z')?,
        ];
        for axis in 0..3 {
            let v = raw[axis] as f64 * scale[axis] + offset[axis];
            min[axis] = min[axis].min(v);
            max[axis] = max[axis].max(v);
            body.extend_from_slice(&raw[axis].to_le_bytes());
        }
        body.extend_from_slice(&r.intensity.to_le_bytes());
        body.push(0b0000_1001); // return 1 of 1
        body.push(r.classification);
        body.push(0); // scan angle rank
        body.push(0); // user data
        body.extend_from_slice(&0u16.to_le_bytes()); // point source id
        if format == 2 {
            for c in r.color.unwrap_or([0; 3]) {
                body.extend_from_slice(&c.to_le_bytes());
            }
        }
        by_return[0] += 1;
    }
    if records.is_empty() {
        min = [0.0; 3];
        max = [0.0; 3];
    }

    let mut out = Vec::with_capacity(HEADER_SIZE_1_2 + body.len());
    out.extend_from_slice(LAS_SIGNATURE);
    out.extend_from_slice(&0u16.to_le_bytes()); // file source id
    out.extend_from_slice(&0u16.to_le_bytes()); // global encoding
    out.extend_from_slice(&[0u8; 16]); // project GUID
    out.push(1);
    out.push(2);
    out.extend_from_slice(&padded::<32>(b"heights"));
    out.extend_from_slice(&padded::<32>(b"heights-core"));
    out.extend_from_slice(&0u16.to_le_bytes()); // creation day
    out.extend_from_slice(&0u16.to_le_bytes()); // creation year
    out.extend_from_slice(&(HEADER_SIZE_1_2 as u16).to_le_bytes());
    out.extend_from_slice(&(HEADER_SIZE_1_2 as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes()); // VLR count
    out.push(format);
    out.extend_from_slice(&record_len.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for n in by_return {
        out.extend_from_slice(&n.to_le_bytes());
    }
    for v in scale.iter().chain(offset.iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for axis in 0..3 {
        out.extend_from_slice(&max[axis].to_le_bytes());
        out.extend_from_slice(&min[axis].to_le_bytes());
    }
    debug_assert_eq!(out.len(), HEADER_SIZE_1_2);
    out.extend_from_slice(&body);
    Ok(out)
}

fn padded<const N: usize>(s: &[u8]) -> [u8; N] {
    let mut out = [0u8; N];
    out[..s.len()].copy_from_slice(s);
    out
}

/// Writes `records` to `path` as LAS 1.2.
pub fn write_las(records: &[PointRecord], scale: Xyz, offset: Xyz, path: &Path) -> Result<(), LasError> {
    let bytes = encode_las(records, scale, offset)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Text fallback
// ---------------------------------------------------------------------------

/// Streaming iterator over "x y z classification" lines.
pub struct XyzTextReader<R> {
    lines: io::Lines<R>,
    line_no: usize,
    failed: bool,
}

pub fn read_xyz_text<R: BufRead>(source: R) -> XyzTextReader<R> {
    XyzTextReader {
        lines: source.lines(),
        line_no: 0,
        failed: false,
    }
}

fn parse_xyz_line(line: &str) -> Option<PointRecord> {
    let mut fields = line.split_whitespace();
    let x = fields.next()?.parse::<f64>().ok()?;
    let y = fields.next()?.parse::<f64>().ok()?;
    let z = fields.next()?.parse::<f64>().ok()?;
    let class = fields.next()?.parse::<u8>().ok()?;
    if fields.next().is_some() || !(x.is_finite() && y.is_finite() && z.is_finite()) {
        return None;
    }
    Some(PointRecord::new(x, y, z, class))
}

impl<R: BufRead> Iterator for XyzTextReader<R> {
    type Item = Result<PointRecord, LasError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e.into()));
                }
            };
            self.line_no += 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            return Some(match parse_xyz_line(trimmed) {
                Some(p) => Ok(p),
                None => {
                    self.failed = true;
                    Err(LasError::MalformedLine(self.line_no))
                }
            });
        }
    }
}

// ---------------------------------------------------------------------------
