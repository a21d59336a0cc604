//! Encoder/decoder invocation: external command templates or in-process
//! test doubles, bitrate bookkeeping and per-run sidecars.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{EnergyError, Workload};
use crate::video::{self, Frame, FrameRate, PixelFormat, SequenceInfo, VideoError, VideoSequence};

pub const MAX_CRF: u8 = 51;

const PLACEHOLDERS: [&str; 6] = ["input", "output", "crf", "fps", "width", "height"];

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("crf {0} outside 0..=51")]
    Crf(u8),
    #[error("invalid command template: {0}")]
    Template(String),
    #[error("placeholder {{{0}}} has no value here")]
    Unresolved(String),
    #[error("`{cmd}` failed: {detail}")]
    Failed { cmd: String, detail: String },
    #[error("encoder produced an empty bitstream at {0}")]
    EmptyOutput(PathBuf),
    #[error("bitstream {0} does not exist")]
    MissingBitstream(PathBuf),
    #[error("malformed stub bitstream: {0}")]
    Bitstream(String),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Shell-style command line with `{input}`, `{output}`, `{crf}`, `{fps}`,
/// `{width}` and `{height}` placeholders. Tokenized before substitution, so
/// paths containing spaces stay single arguments.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CommandTemplate {
    source: String,
    tokens: Vec<String>,
}

impl CommandTemplate {
    pub fn new(source: &str) -> Result<Self, CodecError> {
        let tokens = shlex::split(source).ok_or_else(|| CodecError::Template(format!("unbalanced quotes in `{source}`")))?;
        if tokens.is_empty() {
            return Err(CodecError::Template("empty template".into()));
        }
        for tok in &tokens {
            for name in placeholders(tok)? {
                if !PLACEHOLDERS.contains(&name) {
                    return Err(CodecError::Template(format!("unknown placeholder {{{name}}}")));
                }
            }
        }
        Ok(CommandTemplate {
            source: source.to_string(),
            tokens,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    /// Substitutes placeholders and returns the argument vector.
    pub fn render(&self, vars: &BTreeMap<&str, String>) -> Result<Vec<String>, CodecError> {
        self.tokens
            .iter()
            .map(|tok| {
                let mut out = String::new();
                let mut rest = tok.as_str();
                while let Some(open) = rest.find('{') {
                    let close = open + rest[open..].find('}').expect("validated at construction");
                    let name = &rest[open + 1..close];
                    out.push_str(&rest[..open]);
                    out.push_str(vars.get(name).ok_or_else(|| CodecError::Unresolved(name.to_string()))?);
                    rest = &rest[close + 1..];
                }
                out.push_str(rest);
                Ok(out)
            })
            .collect()
    }
}

fn placeholders(tok: &str) -> Result<Vec<&str>, CodecError> {
    let mut names = Vec::new();
    let mut rest = tok;
    while let Some(open) = rest.find('{') {
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| CodecError::Template(format!("unterminated placeholder in `{tok}`")))?;
        names.push(&rest[open + 1..open + close]);
        rest = &rest[open + close + 1..];
    }
    Ok(names)
}

impl TryFrom<String> for CommandTemplate {
    type Error = CodecError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        CommandTemplate::new(&s)
    }
}

impl From<CommandTemplate> for String {
    fn from(t: CommandTemplate) -> String {
        t.source
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Codec {
    /// External executables.
    Command { encode: CommandTemplate, decode: CommandTemplate },
    /// Copies the Y4M through unchanged.
    Identity,
    /// CRF-driven dithered quantizer with deflated inter-frame residuals.
    QuantizingStub,
}

impl Codec {
    pub fn name(&self) -> &'static str {
        match self {
            Codec::Command { .. } => "command",
            Codec::Identity => "identity",
            Codec::QuantizingStub => "quantizing_stub",
        }
    }

    pub fn encode_job(&self, input: &Path, output: &Path, crf: u8, info: &SequenceInfo) -> Result<CodecJob, CodecError> {
        if crf > MAX_CRF {
            return Err(CodecError::Crf(crf));
        }
        if let Codec::Command { encode, .. } = self {
            encode.render(&vars(input, output, Some(crf), info))?;
        }
        Ok(CodecJob {
            codec: self.clone(),
            op: Op::Encode { crf },
            input: input.to_path_buf(),
            output: output.to_path_buf(),
            info: *info,
            nominal_seconds: None,
        })
    }

    pub fn decode_job(&self, bitstream: &Path, output: &Path, info: &SequenceInfo) -> Result<CodecJob, CodecError> {
        if !bitstream.is_file() {
            return Err(CodecError::MissingBitstream(bitstream.to_path_buf()));
        }
        if let Codec::Command { decode, .. } = self {
            decode.render(&vars(bitstream, output, None, info))?;
        }
        Ok(CodecJob {
            codec: self.clone(),
            op: Op::Decode,
            input: bitstream.to_path_buf(),
            output: output.to_path_buf(),
            info: *info,
            nominal_seconds: None,
        })
    }
}

fn vars(input: &Path, output: &Path, crf: Option<u8>, info: &SequenceInfo) -> BTreeMap<&'static str, String> {
    let mut v = BTreeMap::from([
        ("input", input.display().to_string()),
        ("output", output.display().to_string()),
        ("fps", info.frame_rate.to_string()),
        ("width", info.width.to_string()),
        ("height", info.height.to_string()),
    ]);
    if let Some(crf) = crf {
        v.insert("crf", crf.to_string());
    }
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Encode { crf: u8 },
    Decode,
}

/// One prepared encode or decode; runnable repeatedly under an energy meter.
#[derive(Clone, Debug)]
pub struct CodecJob {
    codec: Codec,
    op: Op,
    input: PathBuf,
    output: PathBuf,
    info: SequenceInfo,
    nominal_seconds: Option<f64>,
}

impl CodecJob {
    /// Duration charged by meters with a virtual clock.
    pub fn with_nominal_seconds(mut self, secs: f64) -> Self {
        self.nominal_seconds = Some(secs);
        self
    }

    pub fn output(&self) -> &Path {
        &self.output
    }

    pub fn describe(&self) -> String {
        match &self.codec {
            Codec::Command { encode, decode } => {
                let t = if matches!(self.op, Op::Encode { .. }) { encode } else { decode };
                t.render(&self.vars())
                    .map(|a| a.join(" "))
                    .unwrap_or_else(|_| t.as_str().to_string())
            }
            other => format!("{} {:?} {}", other.name(), self.op, self.input.display()),
        }
    }

    fn vars(&self) -> BTreeMap<&'static str, String> {
        let crf = match self.op {
            Op::Encode { crf } => Some(crf),
            Op::Decode => None,
        };
        vars(&self.input, &self.output, crf, &self.info)
    }

    pub fn execute(&self) -> Result<(), CodecError> {
        match (&self.codec, self.op) {
            (Codec::Command { encode, decode }, op) => {
                let argv = match op {
                    Op::Encode { .. } => encode.render(&self.vars())?,
                    Op::Decode => decode.render(&self.vars())?,
                };
                run_argv(&argv)
            }
            (Codec::Identity, _) => {
                fs::copy(&self.input, &self.output)?;
                Ok(())
            }
            (Codec::QuantizingStub, Op::Encode { crf }) => stub_encode(&self.input, &self.output, crf),
            (Codec::QuantizingStub, Op::Decode) => stub_decode(&self.input, &self.output),
        }
    }
}

impl Workload for CodecJob {
    fn run(&mut self) -> Result<(), EnergyError> {
        self.execute().map_err(|e| EnergyError::CommandFailed {
            cmd: self.describe(),
            detail: e.to_string(),
        })
    }

    fn nominal_seconds(&self) -> Option<f64> {
        self.nominal_seconds
    }

    fn class(&self) -> &str {
        match self.op {
            Op::Encode { .. } => "encode",
            Op::Decode => "decode",
        }
    }
}

fn run_argv(argv: &[String]) -> Result<(), CodecError> {
    let (prog, args) = argv.split_first().ok_or_else(|| CodecError::Template("empty command".into()))?;
    let out = Command::new(prog).args(args).output().map_err(|e| CodecError::Failed {
        cmd: argv.join(" "),
        detail: e.to_string(),
    })?;
    if !out.status.success() {
        return Err(CodecError::Failed {
            cmd: argv.join(" "),
            detail: format!("{}: {}", out.status, String::from_utf8_lossy(&out.stderr).trim()),
        });
    }
    Ok(())
}

/// Bitrate in kbit/s of `bytes` spread over the duration of `info`.
pub fn bitrate_kbps(bytes: u64, info: &SequenceInfo) -> f64 {
    8.0 * bytes as f64 / info.duration_secs() / 1000.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodeResult {
    pub bitstream_path: PathBuf,
    pub bytes: u64,
    pub bitrate_kbps: f64,
    pub wall_s: f64,
    pub crf: u8,
    pub frame_rate: FrameRate,
    pub n_frames: usize,
}

impl EncodeResult {
    /// Collects the result of an encode that wrote `bitstream`.
    pub fn from_output(bitstream: &Path, info: &SequenceInfo, crf: u8, wall_s: f64) -> Result<Self, CodecError> {
        let bytes = fs::metadata(bitstream)
            .map_err(|_| CodecError::EmptyOutput(bitstream.to_path_buf()))?
            .len();
        if bytes == 0 {
            return Err(CodecError::EmptyOutput(bitstream.to_path_buf()));
        }
        Ok(EncodeResult {
            bitstream_path: bitstream.to_path_buf(),
            bytes,
            bitrate_kbps: bitrate_kbps(bytes, info),
            wall_s,
            crf,
            frame_rate: info.frame_rate,
            n_frames: info.n_frames,
        })
    }

    pub fn sidecar_path(&self) -> PathBuf {
        let mut s = self.bitstream_path.clone().into_os_string();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Writes `{crf, fps, bitrate_kbps, wall_s}` next to the bitstream.
    pub fn write_sidecar(&self) -> Result<PathBuf, CodecError> {
        let path = self.sidecar_path();
        let body = serde_json::json!({
            "crf": self.crf,
            "fps": self.frame_rate,
            "bitrate_kbps": self.bitrate_kbps,
            "wall_s": self.wall_s,
        });
        fs::write(&path, serde_json::to_string_pretty(&body).expect("plain json") + "\n")?;
        Ok(path)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub decoded_path: PathBuf,
    pub wall_s: f64,
}

/// Encodes a Y4M file once, recording wall time, bitrate and a sidecar.
pub fn run_encode(codec: &Codec, input: &Path, output: &Path, crf: u8) -> Result<EncodeResult, CodecError> {
    if crf > MAX_CRF {
        return Err(CodecError::Crf(crf));
    }
    let info = video::probe_y4m(input)?;
    let job = codec.encode_job(input, output, crf, &info)?;
    let start = Instant::now();
    job.execute()?;
    let result = EncodeResult::from_output(output, &info, crf, start.elapsed().as_secs_f64())?;
    result.write_sidecar()?;
    Ok(result)
}

/// Decodes a bitstream to Y4M. `info` describes the encoded sequence.
pub fn run_decode(codec: &Codec, bitstream: &Path, output: &Path, info: &SequenceInfo) -> Result<DecodeResult, CodecError> {
    let job = codec.decode_job(bitstream, output, info)?;
    let start = Instant::now();
    job.execute()?;
    Ok(DecodeResult {
        decoded_path: output.to_path_buf(),
        wall_s: start.elapsed().as_secs_f64(),
    })
}

/// Processing-time model charged to the mock meter:
/// `frames · pixels · k · (1 + (51 − crf)/51)` for encoding, `frames · pixels · k`
/// for decoding and feature extraction, a constant for one classification.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockCost {
    pub encode_s_per_pixel: f64,
    pub decode_s_per_pixel: f64,
    pub feature_s_per_pixel: f64,
    pub classify_s: f64,
}

impl Default for MockCost {
    fn default() -> Self {
        MockCost {
            encode_s_per_pixel: 1e-7,
            decode_s_per_pixel: 2e-8,
            feature_s_per_pixel: 5e-8,
            classify_s: 1e-4,
        }
    }
}

impl MockCost {
    pub fn encode_seconds(&self, info: &SequenceInfo, crf: u8) -> f64 {
        let crf_factor = 1.0 + (MAX_CRF as f64 - crf as f64) / MAX_CRF as f64;
        pixels(info) * self.encode_s_per_pixel * crf_factor
    }

    pub fn decode_seconds(&self, info: &SequenceInfo) -> f64 {
        pixels(info) * self.decode_s_per_pixel
    }

    pub fn feature_seconds(&self, info: &SequenceInfo) -> f64 {
        pixels(info) * self.feature_s_per_pixel
    }
}

fn pixels(info: &SequenceInfo) -> f64 {
    (info.n_frames * info.width * info.height) as f64
}

/// Quantizer step for a CRF: 1 at CRF 0, doubling every 8 CRF steps.
pub fn stub_step(crf: u8) -> f64 {
    2f64.powf(crf as f64 / 8.0)
}

/// Position-only dither in [-q/2, q/2); identical for every frame so static
/// content decodes to identical frames.
fn dither(plane: usize, x: usize, y: usize, q: f64) -> f64 {
    if q <= 1.0 {
        return 0.0;
    }
    let mut z = ((plane as u64) << 48) ^ ((y as u64) << 24) ^ x as u64;
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    ((z >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * q
}

const STUB_MAGIC: &str = "FPSQ";

fn stub_encode(input: &Path, output: &Path, crf: u8) -> Result<(), CodecError> {
    let seq = video::read_y4m(input)?;
    let q = stub_step(crf);
    let format = seq.format();
    let mut out = std::io::BufWriter::new(fs::File::create(output)?);
    writeln!(
        out,
        "{STUB_MAGIC} W{} H{} F{}:{} C{} Q{crf} N{}",
        seq.width(),
        seq.height(),
        seq.frame_rate.num(),
        seq.frame_rate.den(),
        format.y4m_tag(),
        seq.len()
    )?;
    let mut z = ZlibEncoder::new(out, Compression::default());
    let mut prev: Vec<Vec<i32>> = Vec::new();
    for frame in seq.frames() {
        let mut cur = Vec::with_capacity(3);
        for (p, plane) in frame.planes.iter().enumerate() {
            let idx: Vec<i32> = plane
                .data
                .iter()
                .enumerate()
                .map(|(i, &v)| ((v as f64 + dither(p, i % plane.width, i / plane.width, q)) / q).round() as i32)
                .collect();
            let base = prev.get(p);
            let mut buf = Vec::with_capacity(idx.len() * 2);
            for (i, &v) in idx.iter().enumerate() {
                let d = v - base.map_or(0, |b| b[i]);
                buf.extend_from_slice(&(d as i16).to_le_bytes());
            }
            z.write_all(&buf)?;
            cur.push(idx);
        }
        prev = cur;
    }
    z.finish()?.flush()?;
    Ok(())
}

fn stub_decode(input: &Path, output: &Path) -> Result<(), CodecError> {
    let mut r = BufReader::new(fs::File::open(input)?);
    let mut header = String::new();
    r.read_line(&mut header)?;
    let bad = |m: &str| CodecError::Bitstream(m.to_string());
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some(STUB_MAGIC) {
        return Err(bad("missing signature"));
    }
    let (mut w, mut h, mut rate, mut format, mut crf, mut n) = (None, None, None, None, None, None);
    for tok in tokens {
        let (key, val) = tok.split_at(1);
        match key {
            "W" => w = val.parse::<usize>().ok(),
            "H" => h = val.parse::<usize>().ok(),
            "F" => rate = val.parse::<FrameRate>().ok(),
            "C" => format = PixelFormat::from_y4m_tag(val).ok(),
            "Q" => crf = val.parse::<u8>().ok(),
            "N" => n = val.parse::<usize>().ok(),
            _ => return Err(bad(tok)),
        }
    }
    let (Some(w), Some(h), Some(rate), Some(format), Some(crf), Some(n)) = (w, h, rate, format, crf, n) else {
        return Err(bad("incomplete header"));
    };
    let q = stub_step(crf);
    let max = format.max_value() as f64;
    let mut z = ZlibDecoder::new(r);
    let mut frames = Vec::with_capacity(n);
    let mut prev: Vec<Vec<i32>> = Vec::new();
    let mut buf = Vec::new();
    for _ in 0..n {
        let mut frame = Frame::new(w, h, format, 0, 0)?;
        let mut cur = Vec::with_capacity(3);
        for (p, plane) in frame.planes.iter_mut().enumerate() {
            buf.resize(plane.data.len() * 2, 0);
            z.read_exact(&mut buf).map_err(|_| bad("truncated payload"))?;
            let idx: Vec<i32> = buf
                .chunks_exact(2)
                .enumerate()
                .map(|(i, c)| i16::from_le_bytes([c[0], c[1]]) as i32 + prev.get(p).map_or(0, |b: &Vec<i32>| b[i]))
                .collect();
            for (i, (s, &k)) in plane.data.iter_mut().zip(&idx).enumerate() {
                let v = k as f64 * q - dither(p, i % plane.width, i / plane.width, q);
                *s = v.round().clamp(0.0, max) as u16;
            }
            cur.push(idx);
        }
        prev = cur;
        frames.push(frame);
    }
    let name = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    video::write_y4m(&VideoSequence::new(name, rate, frames)?, output)?;
    Ok(())
}
