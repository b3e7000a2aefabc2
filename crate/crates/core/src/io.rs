//! Depth and normal-map file formats, plus the text configuration documents.
//!
//! * 16-bit grayscale PNG depth: `depth_m = raw / scale`.
//! * PFM (`Pf` single channel, `PF` three channel). Scanlines are stored
//!   bottom-to-top as the format prescribes; in memory rows are always
//!   top-down. Reading honors the byte order given by the sign of the scale
//!   field; writing always uses little-endian (negative scale).
//! * 8-bit RGB PNG normal visualization, `c = round((n + 1) / 2 * 255)`.
//! * TOML key-value documents for intrinsics and synthetic scenes.
//!
//! All writers go through a temporary file in the destination directory that
//! is renamed into place once complete.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthImage, NormalVector};
use crate::normal_map::NormalMap;
use crate::synth::{NoiseSpec, SceneGeometry, SceneSpec};

/// KITTI-style depth PNGs store 256 raw units per meter.
pub const DEFAULT_PNG16_SCALE: f64 = 256.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DepthFormat {
    Png16,
    Pfm,
}

impl DepthFormat {
    /// Guesses from the file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "png" => Some(DepthFormat::Png16),
            "pfm" => Some(DepthFormat::Pfm),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthFileSpec {
    pub format: DepthFormat,
    /// Raw units per meter; png16 only.
    pub scale: f64,
    pub zero_is_invalid: bool,
}

impl DepthFileSpec {
    pub fn png16(scale: f64) -> Self {
        Self {
            format: DepthFormat::Png16,
            scale,
            zero_is_invalid: true,
        }
    }

    pub fn pfm() -> Self {
        Self {
            format: DepthFormat::Pfm,
            scale: 1.0,
            zero_is_invalid: true,
        }
    }

    fn validate(&self, path: &Path) -> Result<()> {
        if self.format == DepthFormat::Png16 && !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::parse(
                path,
                format!("png16 scale must be finite and positive, got {}", self.scale),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum NormalEncoding {
    Rgb8,
    Pfm3,
}

fn write_atomic<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<&mut fs::File>) -> std::io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::Builder::new()
        .prefix(".partial-")
        .tempfile_in(dir)
        .map_err(|e| Error::io(path, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn png_error(path: &Path, e: png::EncodingError) -> Error {
    match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::parse(path, other.to_string()),
    }
}

// ---- PFM -----------------------------------------------------------------

/// Decoded PFM: top-down rows, `channels` interleaved samples per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

fn read_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<PfmImage> {
    let bad = |m: String| Error::parse(path, m);
    let mut pos = 0;
    let channels = match read_token(bytes, &mut pos) {
        Some(b"Pf") => 1,
        Some(b"PF") => 3,
        Some(other) => {
            return Err(bad(format!(
                "not a PFM file (magic {:?})",
                String::from_utf8_lossy(other)
            )))
        }
        None => return Err(bad("empty file".into())),
    };
    let mut number = |what: &str| -> Result<String> {
        let tok = read_token(bytes, &mut pos).ok_or_else(|| bad(format!("header ends before {what}")))?;
        std::str::from_utf8(tok)
            .map(str::to_owned)
            .map_err(|_| bad(format!("non-ASCII {what}")))
    };
    let width: usize = number("width")?
        .parse()
        .map_err(|e| bad(format!("bad width: {e}")))?;
    let height: usize = number("height")?
        .parse()
        .map_err(|e| bad(format!("bad height: {e}")))?;
    let scale: f64 = number("scale")?
        .parse()
        .map_err(|e| bad(format!("bad scale: {e}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad(format!("scale must be non-zero and finite, got {scale}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("header is not terminated".into()));
    }
    pos += 1;

    let samples = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .filter(|&n| n.checked_mul(4).is_some())
        .ok_or_else(|| bad(format!("dimensions {width}x{height} overflow")))?;
    let body = &bytes[pos..];
    if body.len() != samples * 4 {
        return Err(bad(format!(
            "{width}x{height}x{channels} raster needs {} bytes, found {}",
            samples * 4,
            body.len()
        )));
    }
    let little = scale < 0.0;
    let row_len = width * channels;
    let mut data = vec![0.0f32; samples];
    for (stored_row, chunk) in body.chunks_exact((row_len * 4).max(1)).enumerate().take(height) {
        let v = height - 1 - stored_row;
        for (k, b) in chunk.chunks_exact(4).enumerate() {
            let b = [b[0], b[1], b[2], b[3]];
            data[v * row_len + k] = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
        }
    }
    Ok(PfmImage {
        width,
        height,
        channels,
        data,
    })
}

pub fn encode_pfm(img: &PfmImage, out: &mut impl Write) -> std::io::Result<()> {
    let magic = if img.channels == 3 { "PF" } else { "Pf" };
    write!(out, "{magic}\n{} {}\n-1.0\n", img.width, img.height)?;
    let row_len = img.width * img.channels;
    for v in (0..img.height).rev() {
        for x in &img.data[v * row_len..(v + 1) * row_len] {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<PfmImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes, path)
}

pub fn write_pfm(img: &PfmImage, path: &Path) -> Result<()> {
    if img.channels != 1 && img.channels != 3 {
        return Err(Error::InvalidInput(format!(
            "PFM holds 1 or 3 channels, got {}",
            img.channels
        )));
    }
    write_atomic(path, |w| encode_pfm(img, w))
}

// ---- depth ---------------------------------------------------------------

pub fn read_depth(path: &Path, spec: &DepthFileSpec) -> Result<DepthImage> {
    spec.validate(path)?;
    match spec.format {
        DepthFormat::Png16 => read_png16_depth(path, spec),
        DepthFormat::Pfm => {
            let pfm = read_pfm(path)?;
            if pfm.channels != 1 {
                return Err(Error::parse(
                    path,
                    format!("depth PFM must have 1 channel, found {}", pfm.channels),
                ));
            }
            let depth = pfm.data.iter().map(|&x| x as f64).collect();
            DepthImage::new(pfm.width, pfm.height, depth)
        }
    }
}

fn read_png16_depth(path: &Path, spec: &DepthFileSpec) -> Result<DepthImage> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| match e {
        png::DecodingError::IoError(io) => Error::io(path, io),
        other => Error::parse(path, other.to_string()),
    })?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::parse(
            path,
            format!(
                "expected 16-bit grayscale PNG, found {:?} at {:?} bits",
                info.color_type, info.bit_depth
            ),
        ));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    let stride = frame.line_size;
    let mut depth = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for v in 0..h {
        let row = &buf[v * stride..v * stride + 2 * w];
        for px in row.chunks_exact(2) {
            let raw = u16::from_be_bytes([px[0], px[1]]);
            let z = raw as f64 / spec.scale;
            let ok = !(spec.zero_is_invalid && raw == 0) && z > 0.0;
            depth.push(if ok { z } else { 0.0 });
            valid.push(ok);
        }
    }
    DepthImage::with_mask(w, h, depth, valid)
}

/// Invalid pixels become raw 0 (png16) or 0.0 (pfm). For png16, every valid
/// depth must round to a raw value in `1..=65535`.
pub fn write_depth(depth: &DepthImage, path: &Path, spec: &DepthFileSpec) -> Result<()> {
    spec.validate(path)?;
    let (w, h) = (depth.width(), depth.height());
    match spec.format {
        DepthFormat::Pfm => {
            let data = depth
                .depth()
                .iter()
                .zip(depth.mask())
                .map(|(&z, &ok)| if ok { z as f32 } else { 0.0 })
                .collect();
            write_pfm(
                &PfmImage {
                    width: w,
                    height: h,
                    channels: 1,
                    data,
                },
                path,
            )
        }
        DepthFormat::Png16 => {
            let mut bytes = Vec::with_capacity(2 * w * h);
            for (i, (&z, &ok)) in depth.depth().iter().zip(depth.mask()).enumerate() {
                let raw = if ok {
                    let r = (z * spec.scale).round();
                    if !(1.0..=65535.0).contains(&r) {
                        return Err(Error::InvalidInput(format!(
                            "depth {z} m at pixel ({}, {}) does not fit png16 at scale {}",
                            i % w,
                            i / w,
                            spec.scale
                        )));
                    }
                    r as u16
                } else {
                    0
                };
                bytes.extend_from_slice(&raw.to_be_bytes());
            }
            write_png(path, w, h, png::ColorType::Grayscale, png::BitDepth::Sixteen, &bytes)
        }
    }
}

fn write_png(
    path: &Path,
    w: usize,
    h: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    bytes: &[u8],
) -> Result<()> {
    let (w32, h32) = match (u32::try_from(w), u32::try_from(h)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return Err(Error::Dimension(format!("{w}x{h} is too large for PNG"))),
    };
    let mut encoded = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut encoded, w32, h32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header().map_err(|e| png_error(path, e))?;
        writer.write_image_data(bytes).map_err(|e| png_error(path, e))?;
        writer.finish().map_err(|e| png_error(path, e))?;
    }
    write_atomic(path, |w| w.write_all(&encoded))
}

// ---- normals -------------------------------------------------------------

/// `round((c + 1) / 2 * 255)` with halves rounded up.
pub fn encode_rgb8(n: NormalVector) -> [u8; 3] {
    n.to_array()
        .map(|c| ((c + 1.0) * 0.5 * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8)
}

pub fn write_normal_map(map: &NormalMap, path: &Path, encoding: NormalEncoding) -> Result<()> {
    let (w, h) = (map.width(), map.height());
    match encoding {
        NormalEncoding::Rgb8 => {
            let bytes: Vec<u8> = map
                .normals()
                .iter()
                .zip(map.mask())
                .flat_map(|(&n, &ok)| if ok { encode_rgb8(n) } else { [0, 0, 0] })
                .collect();
            write_png(path, w, h, png::ColorType::Rgb, png::BitDepth::Eight, &bytes)
        }
        NormalEncoding::Pfm3 => {
            let data = map
                .normals()
                .iter()
                .zip(map.mask())
                .flat_map(|(&n, &ok)| {
                    if ok {
                        n.to_array().map(|c| c as f32)
                    } else {
                        [f32::NAN; 3]
                    }
                })
                .collect();
            write_pfm(
                &PfmImage {
                    width: w,
                    height: h,
                    channels: 3,
                    data,
                },
                path,
            )
        }
    }
}

/// Reads a three-channel PFM normal map; pixels with any non-finite component
/// are invalid.
pub fn read_normal_map(path: &Path) -> Result<NormalMap> {
    let pfm = read_pfm(path)?;
    if pfm.channels != 3 {
        return Err(Error::parse(
            path,
            format!("normal map PFM must have 3 channels, found {}", pfm.channels),
        ));
    }
    let (normals, valid): (Vec<_>, Vec<_>) = pfm
        .data
        .chunks_exact(3)
        .map(|c| {
            let n = NormalVector::new(c[0] as f64, c[1] as f64, c[2] as f64);
            if n.is_finite() {
                (n, true)
            } else {
                (NormalVector::default(), false)
            }
        })
        .unzip();
    NormalMap::from_parts(pfm.width, pfm.height, normals, valid)
}

// ---- configuration documents ---------------------------------------------

/// Flat key-value intrinsics document:
///
/// ```toml
/// fx = 721.5377
/// fy = 721.5377
/// u0 = 609.5593
/// v0 = 172.854
/// # optional, checked against the depth image
/// width = 1242
/// height = 375
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsConfig {
    pub fx: f64,
    pub fy: f64,
    pub u0: f64,
    pub v0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
}

impl IntrinsicsConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::parse(path, one_line(&e.to_string())))?;
        cfg.intrinsics()
            .map_err(|e| Error::parse(path, e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fx, self.fy, self.u0, self.v0)
    }

    pub fn check_size(&self, width: usize, height: usize) -> Result<()> {
        let w_ok = self.width.map_or(true, |x| x == width);
        let h_ok = self.height.map_or(true, |x| x == height);
        if w_ok && h_ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "intrinsics declare {}x{} but the image is {width}x{height}",
                self.width.map_or("*".into(), |x| x.to_string()),
                self.height.map_or("*".into(), |x| x.to_string()),
            )))
        }
    }
}

impl From<CameraIntrinsics> for IntrinsicsConfig {
    fn from(k: CameraIntrinsics) -> Self {
        Self {
            fx: k.fx,
            fy: k.fy,
            u0: k.u0,
            v0: k.v0,
            width: None,
            height: None,
        }
    }
}

/// Synthetic scene document:
///
/// ```toml
/// width = 320
/// height = 240
///
/// [intrinsics]
/// fx = 300.0
/// fy = 300.0
/// u0 = 159.5
/// v0 = 119.5
///
/// [geometry]
/// kind = "plane"
/// normal = { x = 0.3, y = -0.2, z = -0.9 }
/// beta = 2.0
///
/// [noise]            # optional
/// model = "gaussian_inverse_depth"
/// sigma = 0.001
/// seed = 42
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub intrinsics: IntrinsicsConfig,
    pub geometry: SceneGeometry,
    #[serde(default)]
    pub noise: NoiseSpec,
}

impl SceneConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::parse(path, one_line(&e.to_string())))?;
        cfg.spec()
            .and_then(|s| s.validate())
            .map_err(|e| Error::parse(path, e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn spec(&self) -> Result<SceneSpec> {
        Ok(SceneSpec {
            width: self.width,
            height: self.height,
            intrinsics: self.intrinsics.intrinsics()?,
            geometry: self.geometry,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene config serializes")
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
