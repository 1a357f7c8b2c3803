//! Raster and sequence-manifest I/O.
//!
//! Frames are binary PGM (`P5`) at 8 or 16 bits; a JSON manifest lists the
//! contrast-injected reference frames (one per cardiac phase) and the
//! navigation frames, all with paths relative to the manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single-channel raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    bit_depth: u8,
    pixels: Vec<u16>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, bit_depth: u8, pixels: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if bit_depth != 8 && bit_depth != 16 {
            return Err(Error::InvalidArgument(format!(
                "bit depth must be 8 or 16, got {bit_depth}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "expected {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if bit_depth == 8 {
            if let Some(i) = pixels.iter().position(|&v| v > 255) {
                return Err(Error::InvalidArgument(format!(
                    "pixel {i} value {} exceeds 8-bit range",
                    pixels[i]
                )));
            }
        }
        Ok(GrayImage {
            width,
            height,
            bit_depth,
            pixels,
        })
    }

    /// A constant image.
    pub fn filled(width: usize, height: usize, bit_depth: u8, value: u16) -> Result<Self> {
        GrayImage::new(width, height, bit_depth, vec![value; width * height])
    }

    /// Rounds and clamps real intensities into the given depth.
    pub fn from_f64(width: usize, height: usize, bit_depth: u8, values: &[f64]) -> Result<Self> {
        let max = if bit_depth == 8 { 255.0 } else { 65535.0 };
        let pixels = values
            .iter()
            .map(|&v| v.round().clamp(0.0, max) as u16)
            .collect();
        GrayImage::new(width, height, bit_depth, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn max_value(&self) -> u16 {
        if self.bit_depth == 8 {
            255
        } else {
            65535
        }
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u16) {
        assert!(v <= self.max_value(), "pixel value out of range");
        self.pixels[y * self.width + x] = v;
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Encodes `img` as binary PGM; 16-bit samples are big-endian.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.max_value()).into_bytes();
    if img.bit_depth == 8 {
        out.extend(img.pixels.iter().map(|&v| v as u8));
    } else {
        for &v in &img.pixels {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}

/// Width, height and maxval parsed from a PGM header, plus the payload offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PgmHeader {
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
    pub data_offset: usize,
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    token_start: usize,
    origin: &'a str,
}

impl HeaderCursor<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.origin.to_string(),
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        self.token_start = start;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                self.pos = start;
                self.err(format!("{what} out of range"))
            })
    }
}

pub fn parse_pgm_header(bytes: &[u8], origin: &str) -> Result<PgmHeader> {
    let mut c = HeaderCursor {
        bytes,
        pos: 0,
        token_start: 0,
        origin,
    };
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(c.err("missing PGM magic"));
    }
    if bytes[1] != b'5' {
        return Err(c.err(format!(
            "unsupported PNM variant P{}; only binary P5 is accepted",
            bytes[1] as char
        )));
    }
    c.pos = 2;
    let width = c.number("width")? as usize;
    let height = c.number("height")? as usize;
    let maxval = c.number("maxval")?;
    let maxval_pos = c.token_start;
    if width == 0 || height == 0 {
        c.pos = maxval_pos;
        return Err(c.err("zero image dimension"));
    }
    if maxval != 255 && maxval != 65535 {
        c.pos = maxval_pos;
        return Err(c.err(format!("unsupported maxval {maxval}; expected 255 or 65535")));
    }
    match bytes.get(c.pos) {
        Some(b) if b.is_ascii_whitespace() => c.pos += 1,
        _ => return Err(c.err("expected single whitespace after maxval")),
    }
    Ok(PgmHeader {
        width,
        height,
        maxval,
        data_offset: c.pos,
    })
}

/// Decodes a binary PGM buffer. `origin` labels errors.
pub fn decode_pgm(bytes: &[u8], origin: &str) -> Result<GrayImage> {
    let h = parse_pgm_header(bytes, origin)?;
    let bpp = if h.maxval == 255 { 1 } else { 2 };
    let need = h.width * h.height * bpp;
    let payload = &bytes[h.data_offset..];
    if payload.len() < need {
        return Err(Error::Format {
            path: origin.to_string(),
            offset: bytes.len(),
            message: format!("truncated payload: need {need} bytes, found {}", payload.len()),
        });
    }
    let pixels = if bpp == 1 {
        payload[..need].iter().map(|&b| u16::from(b)).collect()
    } else {
        payload[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    GrayImage::new(h.width, h.height, if bpp == 1 { 8 } else { 16 }, pixels)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, &path.display().to_string())
}

pub fn write_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_pgm(img)).map_err(|e| Error::io(path, e))
}

/// Reads only enough of a PGM file to learn its dimensions.
pub fn read_pgm_dimensions(path: &Path) -> Result<(usize, usize)> {
    use std::io::Read;
    let mut buf = Vec::with_capacity(256);
    fs::File::open(path)
        .and_then(|f| f.take(512).read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let h = parse_pgm_header(&buf, &path.display().to_string())?;
    Ok((h.width, h.height))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceFrame {
    pub path: String,
    pub phase: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NavigationFrame {
    pub path: String,
    /// Cardiac phase; defaults to `frame_index % cycle_length`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthRef {
    pub voi_path: String,
    pub tip_presence: Vec<bool>,
}

/// Describes one acquisition: a reference sequence covering a cardiac cycle
/// and the navigation sequence to analyze.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceManifest {
    pub pixel_spacing_mm: f64,
    pub frame_interval_s: f64,
    pub cycle_length: usize,
    pub reference_frames: Vec<ReferenceFrame>,
    pub navigation_frames: Vec<NavigationFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruthRef>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

pub const MIN_CYCLE_LENGTH: usize = 2;
pub const MAX_CYCLE_LENGTH: usize = 64;

impl SequenceManifest {
    pub fn navigation_phase(&self, frame: usize) -> usize {
        self.navigation_frames[frame]
            .phase
            .unwrap_or(frame % self.cycle_length)
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    /// Reference frame paths indexed by phase.
    pub fn reference_paths_by_phase(&self) -> Vec<PathBuf> {
        let mut v = vec![PathBuf::new(); self.cycle_length];
        for r in &self.reference_frames {
            v[r.phase] = self.resolve(&r.path);
        }
        v
    }

    /// Structural checks that need no filesystem access. `origin` names the
    /// document in error messages.
    pub fn validate(&self, origin: &str) -> Result<()> {
        let bad = |field: String, msg: String| Err(Error::validation(origin, field, msg));
        if !(self.pixel_spacing_mm.is_finite() && self.pixel_spacing_mm > 0.0) {
            return bad(
                "pixel_spacing_mm".into(),
                format!("must be positive, got {}", self.pixel_spacing_mm),
            );
        }
        if !(self.frame_interval_s.is_finite() && self.frame_interval_s > 0.0) {
            return bad(
                "frame_interval_s".into(),
                format!("must be positive, got {}", self.frame_interval_s),
            );
        }
        if !(MIN_CYCLE_LENGTH..=MAX_CYCLE_LENGTH).contains(&self.cycle_length) {
            return bad(
                "cycle_length".into(),
                format!(
                    "must be in {MIN_CYCLE_LENGTH}..={MAX_CYCLE_LENGTH}, got {}",
                    self.cycle_length
                ),
            );
        }
        let mut seen = vec![false; self.cycle_length];
        for (i, r) in self.reference_frames.iter().enumerate() {
            if r.phase >= self.cycle_length {
                return bad(
                    format!("reference_frames[{i}].phase"),
                    format!("phase {} outside cycle of {}", r.phase, self.cycle_length),
                );
            }
            if std::mem::replace(&mut seen[r.phase], true) {
                return bad(
                    format!("reference_frames[{i}].phase"),
                    format!("duplicate phase {}", r.phase),
                );
            }
        }
        if let Some(p) = seen.iter().position(|s| !s) {
            return bad(
                "reference_frames".into(),
                format!("no reference frame for phase {p}"),
            );
        }
        for (i, n) in self.navigation_frames.iter().enumerate() {
            if let Some(p) = n.phase {
                if p >= self.cycle_length {
                    return bad(
                        format!("navigation_frames[{i}].phase"),
                        format!("phase {p} outside cycle of {}", self.cycle_length),
                    );
                }
            }
        }
        if let Some(gt) = &self.ground_truth {
            if gt.tip_presence.len() != self.navigation_frames.len() {
                return bad(
                    "ground_truth.tip_presence".into(),
                    format!(
                        "has {} entries for {} navigation frames",
                        gt.tip_presence.len(),
                        self.navigation_frames.len()
                    ),
                );
            }
        }
        Ok(())
    }

    /// Confirms every referenced image exists and all share one size.
    /// Returns that size.
    pub fn check_images(&self, origin: &str) -> Result<(usize, usize)> {
        let mut dims: Option<(usize, usize)> = None;
        let refs = self
            .reference_frames
            .iter()
            .enumerate()
            .map(|(i, r)| (format!("reference_frames[{i}].path"), &r.path));
        let navs = self
            .navigation_frames
            .iter()
            .enumerate()
            .map(|(i, n)| (format!("navigation_frames[{i}].path"), &n.path));
        for (field, rel) in refs.chain(navs) {
            let d = read_pgm_dimensions(&self.resolve(rel))?;
            match dims {
                None => dims = Some(d),
                Some(first) if first != d => {
                    return Err(Error::validation(
                        origin,
                        field,
                        format!(
                            "image is {}x{}, expected {}x{}",
                            d.0, d.1, first.0, first.1
                        ),
                    ))
                }
                _ => {}
            }
        }
        Ok(dims.unwrap_or((0, 0)))
    }
}

/// Reads, validates and checks a manifest and its images.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<SequenceManifest> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m: SequenceManifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: origin.clone(),
        source: e,
    })?;
    m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    m.validate(&origin)?;
    m.check_images(&origin)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decode_single_pixel() {
        let img = decode_pgm(b"P5\n1 1\n255\n\x00", "t").unwrap();
        assert_eq!(img, GrayImage::new(1, 1, 8, vec![0]).unwrap());
    }

    #[test]
    fn header_comments_accepted() {
        let img = decode_pgm(b"P5 # made by hand\n2 # w\n1\n255 \x07\x09", "t").unwrap();
        assert_eq!(img.pixels(), &[7, 9]);
    }

    #[test]
    fn sixteen_bit_is_big_endian() {
        let img = GrayImage::new(2, 1, 16, vec![0x0102, 0xfffe]).unwrap();
        let bytes = encode_pgm(&img);
        assert!(bytes.ends_with(&[0x01, 0x02, 0xff, 0xfe]));
        assert_eq!(decode_pgm(&bytes, "t").unwrap(), img);
    }

    #[test]
    fn rejects_ascii_variant() {
        let err = decode_pgm(b"P2\n1 1\n255\n0\n", "t").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
    }

    #[test]
    fn rejects_bad_maxval_and_truncation() {
        let err = decode_pgm(b"P5\n1 1\n100\n\x00", "t").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 7, .. }), "{err}");
        let err = decode_pgm(b"P5\n2 2\n255\n\x00\x01", "t").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 13, .. }), "{err}");
        let err = decode_pgm(b"P5\nxx 2\n255\n", "t").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 3, .. }), "{err}");
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let img = GrayImage::new(3, 2, 8, vec![0, 1, 2, 253, 254, 255]).unwrap();
        write_pgm(&img, &path).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), img);
        assert_eq!(read_pgm_dimensions(&path).unwrap(), (3, 2));
        assert!(read_pgm(dir.path().join("missing.pgm")).unwrap_err().is_io());
    }

    proptest! {
        #[test]
        fn pgm_roundtrip_bit_exact(
            w in 1usize..9, h in 1usize..9, deep in any::<bool>(), seed in any::<u64>()
        ) {
            let depth = if deep { 16 } else { 8 };
            let max = if deep { 65535u64 } else { 255 };
            let mut s = seed;
            let pixels = (0..w * h).map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 33) % (max + 1)) as u16
            }).collect();
            let img = GrayImage::new(w, h, depth, pixels).unwrap();
            prop_assert_eq!(decode_pgm(&encode_pgm(&img), "t").unwrap(), img);
        }
    }

    fn manifest(cycle: usize) -> SequenceManifest {
        SequenceManifest {
            pixel_spacing_mm: 0.2,
            frame_interval_s: 1.0 / 15.0,
            cycle_length: cycle,
            reference_frames: (0..cycle)
                .map(|p| ReferenceFrame {
                    path: format!("ref_{p:02}.pgm"),
                    phase: p,
                })
                .collect(),
            navigation_frames: (0..5)
                .map(|i| NavigationFrame {
                    path: format!("nav_{i:03}.pgm"),
                    phase: None,
                })
                .collect(),
            ground_truth: None,
            base_dir: PathBuf::new(),
        }
    }

    fn field_of(e: Error) -> String {
        match e {
            Error::Validation { field, .. } => field,
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn manifest_examples() {
        assert!(manifest(12).validate("m").is_ok());

        let mut dup = manifest(12);
        dup.reference_frames[4].phase = 3;
        assert_eq!(field_of(dup.validate("m").unwrap_err()), "reference_frames[4].phase");

        let mut zero = manifest(12);
        zero.pixel_spacing_mm = 0.0;
        assert_eq!(field_of(zero.validate("m").unwrap_err()), "pixel_spacing_mm");

        let mut short = manifest(12);
        short.reference_frames.pop();
        assert_eq!(field_of(short.validate("m").unwrap_err()), "reference_frames");

        assert_eq!(field_of(manifest(1).validate("m").unwrap_err()), "cycle_length");
        assert_eq!(manifest(12).navigation_phase(4), 4);
    }

    #[test]
    fn manifest_json_field_names() {
        let json = r#"{
            "pixel_spacing_mm": 0.25, "frame_interval_s": 0.066, "cycle_length": 2,
            "reference_frames": [{"path": "a.pgm", "phase": 1}, {"path": "b.pgm", "phase": 0}],
            "navigation_frames": [{"path": "n.pgm"}, {"path": "m.pgm", "phase": 0}],
            "ground_truth": {"voi_path": "gt.json", "tip_presence": [true, false]}
        }"#;
        let m: SequenceManifest = serde_json::from_str(json).unwrap();
        m.validate("m").unwrap();
        assert_eq!(m.navigation_phase(1), 0);
        assert!(serde_json::from_str::<SequenceManifest>(&json.replace("cycle_length", "cycles")).is_err());
    }

    #[test]
    fn read_manifest_checks_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(2);
        for r in &m.reference_frames {
            write_pgm(&GrayImage::filled(4, 4, 8, 9).unwrap(), dir.path().join(&r.path)).unwrap();
        }
        for n in &m.navigation_frames {
            write_pgm(&GrayImage::filled(4, 4, 8, 9).unwrap(), dir.path().join(&n.path)).unwrap();
        }
        let mpath = dir.path().join("manifest.json");
        fs::write(&mpath, serde_json::to_string(&m).unwrap()).unwrap();
        assert!(read_manifest(&mpath).is_ok());

        write_pgm(&GrayImage::filled(5, 4, 8, 9).unwrap(), dir.path().join("nav_002.pgm")).unwrap();
        assert_eq!(field_of(read_manifest(&mpath).unwrap_err()), "navigation_frames[2].path");

        fs::remove_file(dir.path().join("ref_01.pgm")).unwrap();
        assert!(read_manifest(&mpath).unwrap_err().is_io());
    }

    #[derive(Debug, Clone)]
    enum Corruption {
        None,
        Spacing(f64),
        Interval(f64),
        Cycle(usize),
        DuplicatePhase(usize),
        DropPhase(usize),
        RefPhaseOutOfRange(usize),
        NavPhaseOutOfRange(usize),
        TipPresenceLength(usize),
    }

    fn corruption() -> impl Strategy<Value = Corruption> {
        prop_oneof![
            Just(Corruption::None),
            prop_oneof![Just(0.0), Just(-0.3), Just(f64::NAN), Just(f64::INFINITY)].prop_map(Corruption::Spacing),
            prop_oneof![Just(0.0), Just(-1.0)].prop_map(Corruption::Interval),
            prop_oneof![0usize..2, 65usize..200].prop_map(Corruption::Cycle),
            any::<usize>().prop_map(Corruption::DuplicatePhase),
            any::<usize>().prop_map(Corruption::DropPhase),
            any::<usize>().prop_map(Corruption::RefPhaseOutOfRange),
            any::<usize>().prop_map(Corruption::NavPhaseOutOfRange),
            (1usize..4).prop_map(Corruption::TipPresenceLength),
        ]
    }

    proptest! {
        #[test]
        fn validation_matches_invariants(
            cycle in 2usize..=64,
            spacing in 0.01..2.0f64,
            nav in 0usize..20,
            with_gt in any::<bool>(),
            shuffle in any::<u64>(),
            c in corruption(),
        ) {
            let mut m = manifest(cycle);
            m.pixel_spacing_mm = spacing;
            m.navigation_frames = (0..nav)
                .map(|i| NavigationFrame { path: format!("n{i}"), phase: (i % 2 == 0).then_some(i % cycle) })
                .collect();
            if with_gt {
                m.ground_truth = Some(GroundTruthRef { voi_path: "gt.json".into(), tip_presence: vec![true; nav] });
            }
            let k = (shuffle as usize) % cycle;
            m.reference_frames.rotate_left(k);
            let corrupt = match c {
                Corruption::None => false,
                Corruption::Spacing(v) => { m.pixel_spacing_mm = v; true }
                Corruption::Interval(v) => { m.frame_interval_s = v; true }
                Corruption::Cycle(v) => { m.cycle_length = v; true }
                Corruption::DuplicatePhase(i) => {
                    let (a, b) = (i % cycle, (i / 7 + 1 + i % cycle) % cycle);
                    let p = m.reference_frames[b].phase;
                    m.reference_frames[a].phase = p;
                    a != b
                }
                Corruption::DropPhase(i) => { m.reference_frames.remove(i % cycle); true }
                Corruption::RefPhaseOutOfRange(i) => { m.reference_frames[i % cycle].phase = cycle + i % 5; true }
                Corruption::NavPhaseOutOfRange(i) => {
                    if nav == 0 { false } else { m.navigation_frames[i % nav].phase = Some(cycle + i % 3); true }
                }
                Corruption::TipPresenceLength(d) => match m.ground_truth.as_mut() {
                    Some(gt) => { gt.tip_presence.extend(std::iter::repeat(false).take(d)); true }
                    None => false,
                },
            };
            prop_assert_eq!(m.validate("m").is_err(), corrupt);
        }
    }
}
