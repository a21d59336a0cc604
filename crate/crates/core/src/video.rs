//! Planar YUV frames and sequences, Y4M / raw YUV I/O and synthetic content.
//!
//! Samples are stored as `u16` for both 8-bit and 10-bit content. All
//! downstream quality and feature math reads the luma plane only; chroma is
//! carried along for I/O and resampling.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use num_integer::Integer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed Y4M header: {0}")]
    Header(String),
    #[error("unsupported chroma tag `{0}`")]
    UnsupportedChroma(String),
    #[error("truncated frame payload in frame {0}")]
    Truncated(usize),
    #[error("no frames")]
    NoFrames,
    #[error("file size {size} is not a multiple of the frame size {frame}")]
    SizeMismatch { size: u64, frame: usize },
    #[error("invalid geometry {0}x{1}")]
    Geometry(usize, usize),
    #[error("invalid frame rate `{0}`")]
    FrameRate(String),
    #[error("frames do not share geometry or format")]
    Inconsistent,
    #[error("unsupported bit depth {0}")]
    BitDepth(u8),
}

/// Exact frame rate as a reduced positive rational.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RateRepr", into = "String")]
pub struct FrameRate {
    num: u64,
    den: u64,
}

impl FrameRate {
    pub fn new(num: u64, den: u64) -> Result<Self, VideoError> {
        if num == 0 || den == 0 {
            return Err(VideoError::FrameRate(format!("{num}/{den}")));
        }
        let g = num.gcd(&den);
        Ok(FrameRate {
            num: num / g,
            den: den / g,
        })
    }

    pub fn integer(fps: u64) -> Self {
        FrameRate::new(fps, 1).expect("positive frame rate")
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Smallest rate that both `self` and `other` divide into whole ticks.
    pub fn lcm(&self, other: &FrameRate) -> FrameRate {
        FrameRate::new(self.num.lcm(&other.num), self.den.gcd(&other.den)).expect("lcm of positive rates")
    }

    /// Number of ticks of `grid` covered by one frame period at this rate.
    /// `grid` must be a multiple of `self` (e.g. obtained from [`FrameRate::lcm`]).
    pub fn ticks_per_frame(&self, grid: &FrameRate) -> u64 {
        // (gn/gd) / (n/d) = gn*d / (gd*n)
        let num = grid.num as u128 * self.den as u128;
        let den = grid.den as u128 * self.num as u128;
        debug_assert_eq!(num % den, 0, "grid is not a multiple of the rate");
        (num / den) as u64
    }

    /// Integer ratio `self / other` when it is a whole number.
    pub fn integer_ratio(&self, other: &FrameRate) -> Option<u64> {
        let num = self.num as u128 * other.den as u128;
        let den = self.den as u128 * other.num as u128;
        (num % den == 0).then(|| (num / den) as u64)
    }
}

impl PartialOrd for FrameRate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FrameRate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
    }
}

impl fmt::Display for FrameRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl fmt::Debug for FrameRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}fps")
    }
}

impl FromStr for FrameRate {
    type Err = VideoError;

    /// Accepts `120`, `120000/1001` or `120000:1001`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || VideoError::FrameRate(s.to_string());
        let s = s.trim();
        match s.split_once(['/', ':']) {
            Some((n, d)) => FrameRate::new(n.parse().map_err(|_| bad())?, d.parse().map_err(|_| bad())?),
            None => FrameRate::new(s.parse().map_err(|_| bad())?, 1),
        }
    }
}

/// Serialized form: an integer or a `num/den` string.
#[derive(Deserialize)]
#[serde(untagged)]
enum RateRepr {
    Int(u64),
    Text(String),
}

impl TryFrom<RateRepr> for FrameRate {
    type Error = VideoError;
    fn try_from(r: RateRepr) -> Result<Self, Self::Error> {
        match r {
            RateRepr::Int(n) => FrameRate::new(n, 1),
            RateRepr::Text(s) => s.parse(),
        }
    }
}

impl From<FrameRate> for String {
    fn from(f: FrameRate) -> String {
        f.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChromaSampling {
    Cs420,
    Cs422,
    Cs444,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelFormat {
    pub chroma: ChromaSampling,
    pub bit_depth: u8,
}

impl PixelFormat {
    pub const YUV420P8: PixelFormat = PixelFormat {
        chroma: ChromaSampling::Cs420,
        bit_depth: 8,
    };

    pub fn new(chroma: ChromaSampling, bit_depth: u8) -> Result<Self, VideoError> {
        if bit_depth != 8 && bit_depth != 10 {
            return Err(VideoError::BitDepth(bit_depth));
        }
        Ok(PixelFormat { chroma, bit_depth })
    }

    pub fn max_value(&self) -> u16 {
        (1u16 << self.bit_depth) - 1
    }

    pub fn bytes_per_sample(&self) -> usize {
        if self.bit_depth > 8 {
            2
        } else {
            1
        }
    }

    pub fn chroma_dims(&self, width: usize, height: usize) -> (usize, usize) {
        match self.chroma {
            ChromaSampling::Cs420 => (width.div_ceil(2), height.div_ceil(2)),
            ChromaSampling::Cs422 => (width.div_ceil(2), height),
            ChromaSampling::Cs444 => (width, height),
        }
    }

    pub fn frame_samples(&self, width: usize, height: usize) -> usize {
        let (cw, ch) = self.chroma_dims(width, height);
        width * height + 2 * cw * ch
    }

    pub fn frame_bytes(&self, width: usize, height: usize) -> usize {
        self.frame_samples(width, height) * self.bytes_per_sample()
    }

    pub fn y4m_tag(&self) -> &'static str {
        match (self.chroma, self.bit_depth) {
            (ChromaSampling::Cs420, 8) => "420jpeg",
            (ChromaSampling::Cs422, 8) => "422",
            (ChromaSampling::Cs444, 8) => "444",
            (ChromaSampling::Cs420, _) => "420p10",
            (ChromaSampling::Cs422, _) => "422p10",
            (ChromaSampling::Cs444, _) => "444p10",
        }
    }

    pub fn from_y4m_tag(tag: &str) -> Result<Self, VideoError> {
        let chroma = match tag {
            "420" | "420jpeg" | "420paldv" | "420mpeg2" | "420p10" => ChromaSampling::Cs420,
            "422" | "422p10" => ChromaSampling::Cs422,
            "444" | "444p10" => ChromaSampling::Cs444,
            other => return Err(VideoError::UnsupportedChroma(other.to_string())),
        };
        let bit_depth = if tag.ends_with("p10") { 10 } else { 8 };
        PixelFormat::new(chroma, bit_depth)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u16>,
}

impl Plane {
    pub fn filled(width: usize, height: usize, value: u16) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.data[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[u16] {
        &self.data[y * self.width..(y + 1) * self.width]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub format: PixelFormat,
    /// Y, U, V.
    pub planes: [Plane; 3],
}

impl Frame {
    pub fn new(width: usize, height: usize, format: PixelFormat, luma: u16, chroma: u16) -> Result<Self, VideoError> {
        if width == 0 || height == 0 {
            return Err(VideoError::Geometry(width, height));
        }
        let (cw, ch) = format.chroma_dims(width, height);
        Ok(Frame {
            format,
            planes: [
                Plane::filled(width, height, luma),
                Plane::filled(cw, ch, chroma),
                Plane::filled(cw, ch, chroma),
            ],
        })
    }

    /// Builds a frame from a luma plane with neutral chroma.
    pub fn from_luma(luma: Plane, format: PixelFormat) -> Result<Self, VideoError> {
        if luma.width == 0 || luma.height == 0 || luma.data.len() != luma.width * luma.height {
            return Err(VideoError::Geometry(luma.width, luma.height));
        }
        let (cw, ch) = format.chroma_dims(luma.width, luma.height);
        let mid = 1u16 << (format.bit_depth - 1);
        Ok(Frame {
            format,
            planes: [luma, Plane::filled(cw, ch, mid), Plane::filled(cw, ch, mid)],
        })
    }

    pub fn width(&self) -> usize {
        self.planes[0].width
    }

    pub fn height(&self) -> usize {
        self.planes[0].height
    }

    pub fn luma(&self) -> &Plane {
        &self.planes[0]
    }

    fn is_consistent(&self) -> bool {
        let (cw, ch) = self.format.chroma_dims(self.width(), self.height());
        let max = self.format.max_value();
        self.planes[1..].iter().all(|p| p.width == cw && p.height == ch)
            && self
                .planes
                .iter()
                .all(|p| p.data.len() == p.width * p.height && p.data.iter().all(|&s| s <= max))
    }

    fn same_layout(&self, other: &Frame) -> bool {
        self.format == other.format && self.width() == other.width() && self.height() == other.height()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence {
    pub name: String,
    pub frame_rate: FrameRate,
    frames: Vec<Frame>,
    /// Y4M header tokens other than W/H/F/C, kept for byte-exact rewrites.
    pub y4m_extra_tags: Vec<String>,
    pub y4m_chroma_tag: Option<String>,
}

impl VideoSequence {
    pub fn new(name: impl Into<String>, frame_rate: FrameRate, frames: Vec<Frame>) -> Result<Self, VideoError> {
        let first = frames.first().ok_or(VideoError::NoFrames)?;
        if !frames.iter().all(|f| f.is_consistent() && f.same_layout(first)) {
            return Err(VideoError::Inconsistent);
        }
        Ok(VideoSequence {
            name: name.into(),
            frame_rate,
            frames,
            y4m_extra_tags: vec!["Ip".into(), "A0:0".into()],
            y4m_chroma_tag: None,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn format(&self) -> PixelFormat {
        self.frames[0].format
    }

    /// Duration in seconds (N / f).
    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.frame_rate.as_f64()
    }

    pub fn info(&self) -> SequenceInfo {
        SequenceInfo {
            width: self.width(),
            height: self.height(),
            n_frames: self.len(),
            frame_rate: self.frame_rate,
        }
    }
}

/// Geometry and timing of a sequence without its samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceInfo {
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    pub frame_rate: FrameRate,
}

impl SequenceInfo {
    pub fn duration_secs(&self) -> f64 {
        self.n_frames as f64 / self.frame_rate.as_f64()
    }
}

fn read_plane_samples<R: Read>(r: &mut R, plane: &mut Plane, bytes_per_sample: usize, buf: &mut Vec<u8>) -> std::io::Result<()> {
    buf.resize(plane.data.len() * bytes_per_sample, 0);
    r.read_exact(buf)?;
    if bytes_per_sample == 1 {
        for (d, &b) in plane.data.iter_mut().zip(buf.iter()) {
            *d = b as u16;
        }
    } else {
        for (d, c) in plane.data.iter_mut().zip(buf.chunks_exact(2)) {
            *d = u16::from_le_bytes([c[0], c[1]]);
        }
    }
    Ok(())
}

fn read_frame_payload<R: Read>(r: &mut R, width: usize, height: usize, format: PixelFormat, buf: &mut Vec<u8>) -> std::io::Result<Frame> {
    let mut frame = Frame::new(width, height, format, 0, 0).expect("validated geometry");
    for plane in frame.planes.iter_mut() {
        read_plane_samples(r, plane, format.bytes_per_sample(), buf)?;
    }
    Ok(frame)
}

fn write_frame_payload<W: Write>(w: &mut W, frame: &Frame) -> std::io::Result<()> {
    let wide = frame.format.bytes_per_sample() == 2;
    let mut buf = Vec::new();
    for plane in &frame.planes {
        buf.clear();
        if wide {
            buf.extend(plane.data.iter().flat_map(|s| s.to_le_bytes()));
        } else {
            buf.extend(plane.data.iter().map(|&s| s as u8));
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_line<R: BufRead>(r: &mut R) -> std::io::Result<Option<String>> {
    let mut line = Vec::new();
    let n = r.read_until(b'\n', &mut line)?;
    if n == 0 {
        return Ok(None);
    }
    if line.last() == Some(&b'\n') {
        line.pop();
    }
    Ok(Some(String::from_utf8_lossy(&line).into_owned()))
}

struct Y4mHeader {
    width: usize,
    height: usize,
    rate: FrameRate,
    format: PixelFormat,
    ctag: Option<String>,
    extras: Vec<String>,
}

fn read_y4m_header<R: BufRead>(r: &mut R) -> Result<Y4mHeader, VideoError> {
    let header = read_line(r)?.ok_or_else(|| VideoError::Header("empty file".into()))?;
    let mut tokens = header.split(' ');
    if tokens.next() != Some("YUV4MPEG2") {
        return Err(VideoError::Header("missing YUV4MPEG2 signature".into()));
    }
    let (mut width, mut height, mut rate, mut ctag) = (None, None, None, None);
    let mut extras = Vec::new();
    for tok in tokens.filter(|t| !t.is_empty()) {
        let (key, val) = tok.split_at(1);
        match key {
            "W" => width = Some(val.parse::<usize>().map_err(|_| VideoError::Header(tok.into()))?),
            "H" => height = Some(val.parse::<usize>().map_err(|_| VideoError::Header(tok.into()))?),
            "F" => rate = Some(val.parse::<FrameRate>().map_err(|_| VideoError::Header(tok.into()))?),
            "C" => ctag = Some(val.to_string()),
            _ => extras.push(tok.to_string()),
        }
    }
    let width = width.ok_or_else(|| VideoError::Header("missing W".into()))?;
    let height = height.ok_or_else(|| VideoError::Header("missing H".into()))?;
    let rate = rate.ok_or_else(|| VideoError::Header("missing F".into()))?;
    if width == 0 || height == 0 {
        return Err(VideoError::Geometry(width, height));
    }
    let format = PixelFormat::from_y4m_tag(ctag.as_deref().unwrap_or("420jpeg"))?;
    Ok(Y4mHeader {
        width,
        height,
        rate,
        format,
        ctag,
        extras,
    })
}

/// Reads geometry, rate and frame count of a YUV4MPEG2 file without decoding samples.
pub fn probe_y4m(path: impl AsRef<Path>) -> Result<SequenceInfo, VideoError> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let h = read_y4m_header(&mut r)?;
    let payload = h.format.frame_bytes(h.width, h.height) as u64;
    let mut n_frames = 0;
    while let Some(line) = read_line(&mut r)? {
        if !line.starts_with("FRAME") {
            return Err(VideoError::Header(format!("expected FRAME marker, got `{line}`")));
        }
        let skipped = std::io::copy(&mut (&mut r).take(payload), &mut std::io::sink())?;
        if skipped != payload {
            return Err(VideoError::Truncated(n_frames));
        }
        n_frames += 1;
    }
    if n_frames == 0 {
        return Err(VideoError::NoFrames);
    }
    Ok(SequenceInfo {
        width: h.width,
        height: h.height,
        n_frames,
        frame_rate: h.rate,
    })
}

/// Reads a YUV4MPEG2 stream.
pub fn read_y4m(path: impl AsRef<Path>) -> Result<VideoSequence, VideoError> {
    let path = path.as_ref();
    let mut r = BufReader::new(fs::File::open(path)?);
    let Y4mHeader {
        width,
        height,
        rate,
        format,
        ctag,
        extras,
    } = read_y4m_header(&mut r)?;

    let mut frames = Vec::new();
    let mut buf = Vec::new();
    while let Some(line) = read_line(&mut r)? {
        if !line.starts_with("FRAME") {
            return Err(VideoError::Header(format!("expected FRAME marker, got `{line}`")));
        }
        let frame = read_frame_payload(&mut r, width, height, format, &mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => VideoError::Truncated(frames.len()),
            _ => VideoError::Io(e),
        })?;
        frames.push(frame);
    }
    if frames.is_empty() {
        return Err(VideoError::NoFrames);
    }
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut seq = VideoSequence::new(name, rate, frames)?;
    seq.y4m_extra_tags = extras;
    seq.y4m_chroma_tag = ctag;
    Ok(seq)
}

/// Writes a YUV4MPEG2 stream. The frame rate is emitted as an exact rational.
pub fn write_y4m(seq: &VideoSequence, path: impl AsRef<Path>) -> Result<(), VideoError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let format = seq.format();
    let ctag = match &seq.y4m_chroma_tag {
        Some(tag) if PixelFormat::from_y4m_tag(tag).ok() == Some(format) => tag.as_str(),
        _ => format.y4m_tag(),
    };
    write!(
        w,
        "YUV4MPEG2 W{} H{} F{}:{}",
        seq.width(),
        seq.height(),
        seq.frame_rate.num(),
        seq.frame_rate.den()
    )?;
    for tag in &seq.y4m_extra_tags {
        write!(w, " {tag}")?;
    }
    writeln!(w, " C{ctag}")?;
    for frame in &seq.frames {
        w.write_all(b"FRAME\n")?;
        write_frame_payload(&mut w, frame)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads headerless planar YUV. 10-bit samples are little-endian 16-bit words.
pub fn read_raw_yuv(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    frame_rate: FrameRate,
    format: PixelFormat,
) -> Result<VideoSequence, VideoError> {
    let path = path.as_ref();
    if width == 0 || height == 0 {
        return Err(VideoError::Geometry(width, height));
    }
    let frame_bytes = format.frame_bytes(width, height);
    let size = fs::metadata(path)?.len();
    if size % frame_bytes as u64 != 0 {
        return Err(VideoError::SizeMismatch { size, frame: frame_bytes });
    }
    let n = (size / frame_bytes as u64) as usize;
    if n == 0 {
        return Err(VideoError::NoFrames);
    }
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut buf = Vec::new();
    let frames = (0..n)
        .map(|i| {
            read_frame_payload(&mut r, width, height, format, &mut buf).map_err(|e| match e.kind() {
                std::io::ErrorKind::UnexpectedEof => VideoError::Truncated(i),
                _ => VideoError::Io(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    VideoSequence::new(name, frame_rate, frames)
}

/// Writes headerless planar YUV.
pub fn write_raw_yuv(seq: &VideoSequence, path: impl AsRef<Path>) -> Result<(), VideoError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for frame in &seq.frames {
        write_frame_payload(&mut w, frame)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Every luma sample equals `params.value`.
    Constant,
    /// A smooth periodic texture translated by `(dx, dy)` pixels per frame, with wrap.
    GlobalTranslation,
    /// Static textured background with a bright square moving by `(dx, dy)` per frame.
    LocalMotion,
    /// Irregular texture whose phase field drifts continuously (water-like).
    DynamicTexture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub frame_rate: FrameRate,
    pub dx: i64,
    pub dy: i64,
    /// Constant luma value, and texture amplitude for the other kinds.
    pub value: u16,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            width: 64,
            height: 64,
            frames: 24,
            frame_rate: FrameRate::integer(120),
            dx: 1,
            dy: 0,
            value: 128,
            seed: 0,
        }
    }
}

/// Smooth periodic texture; periods divide the frame size so that wrapped
/// translation stays seamless.
fn periodic_texture(width: usize, height: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comps: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|k| {
            let fx = (1 + k % 2 + rng.gen_range(0..2)) as f64;
            let fy = (1 + (k + 1) % 2 + rng.gen_range(0..2)) as f64;
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let amp = rng.gen_range(0.5..1.0);
            (fx, fy, phase, amp)
        })
        .collect();
    let norm: f64 = comps.iter().map(|c| c.3).sum();
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let v: f64 = comps
                .iter()
                .map(|&(fx, fy, ph, a)| {
                    a * (std::f64::consts::TAU * (fx * x as f64 / width as f64 + fy * y as f64 / height as f64) + ph).sin()
                })
                .sum();
            out.push(v / norm);
        }
    }
    out
}

fn to_sample(v: f64, max: u16) -> u16 {
    v.round().clamp(0.0, max as f64) as u16
}

/// Generates deterministic synthetic 8-bit 4:2:0 content.
pub fn generate_synthetic(kind: SyntheticKind, params: &SyntheticParams) -> Result<VideoSequence, VideoError> {
    let (w, h) = (params.width, params.height);
    if w == 0 || h == 0 {
        return Err(VideoError::Geometry(w, h));
    }
    if params.frames == 0 {
        return Err(VideoError::NoFrames);
    }
    let format = PixelFormat::YUV420P8;
    let max = format.max_value();
    let amp = params.value.min(127) as f64;
    let tex = periodic_texture(w, h, params.seed);
    let wrap = |v: i64, n: usize| v.rem_euclid(n as i64) as usize;

    let frames = (0..params.frames)
        .map(|i| {
            let i = i as i64;
            let data: Vec<u16> = match kind {
                SyntheticKind::Constant => vec![params.value.min(max); w * h],
                SyntheticKind::GlobalTranslation => (0..h)
                    .flat_map(|y| (0..w).map(move |x| (x, y)))
                    .map(|(x, y)| {
                        let sx = wrap(x as i64 - params.dx * i, w);
                        let sy = wrap(y as i64 - params.dy * i, h);
                        to_sample(128.0 + amp * tex[sy * w + sx], max)
                    })
                    .collect(),
                SyntheticKind::LocalMotion => {
                    let side = (w.min(h) / 4).max(1);
                    let ox = wrap(params.dx * i, w);
                    let oy = wrap(h as i64 / 2 - side as i64 / 2 + params.dy * i, h);
                    (0..h)
                        .flat_map(|y| (0..w).map(move |x| (x, y)))
                        .map(|(x, y)| {
                            let inside = wrap(x as i64 - ox as i64, w) < side && wrap(y as i64 - oy as i64, h) < side;
                            if inside {
                                let local = ((x + y) % 8) as f64 * 4.0;
                                to_sample(220.0 - local, max)
                            } else {
                                to_sample(100.0 + 0.5 * amp * tex[y * w + x], max)
                            }
                        })
                        .collect()
                }
                SyntheticKind::DynamicTexture => {
                    let t = i as f64 * (params.dx.abs().max(1) as f64) * 0.15;
                    (0..h)
                        .flat_map(|y| (0..w).map(move |x| (x, y)))
                        .map(|(x, y)| {
                            let base = tex[y * w + x];
                            let ripple = (0.35 * x as f64 + 0.21 * y as f64 + 3.0 * base - t).sin();
                            to_sample(128.0 + amp * 0.5 * (base + ripple), max)
                        })
                        .collect()
                }
            };
            Frame::from_luma(Plane { width: w, height: h, data }, format)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let name = format!("{kind:?}").to_lowercase();
    VideoSequence::new(name, params.frame_rate, frames)
}
