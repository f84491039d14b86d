//! Predict requests and responses, shared by the CLI and the HTTP service.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use clickhere_core::geometry::{Viewpoint, ViewpointBins};
use clickhere_core::model::{Model, Prediction};
use clickhere_core::render::Image;
use serde::{Deserialize, Serialize};

use crate::dataset::{image_from_bytes, StoredDataset};
use crate::error::FieldError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InlineFormat {
    /// 8-bit RGB or RGBA PNG; values are divided by 255.
    Png,
    /// Raw `s*s*3` f32 little-endian, row-major `[y][x][rgb]`.
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineImage {
    pub format: InlineFormat,
    /// Base64 (standard alphabet, padded).
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    #[serde(default)]
    pub instance_id: Option<u64>,
    #[serde(default)]
    pub image: Option<InlineImage>,
    pub x: i64,
    pub y: i64,
    /// Keypoint class, local to `object`.
    pub keypoint: usize,
    pub object: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleProbabilities {
    pub azimuth: Vec<f64>,
    pub elevation: Vec<f64>,
    pub tilt: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireWeightMap {
    pub h: usize,
    pub w: usize,
    /// Row-major.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub variant: String,
    pub n_bins: usize,
    pub probabilities: AngleProbabilities,
    pub bins: ViewpointBins,
    /// Bin-center angles of the argmax bins, degrees.
    pub angles: Viewpoint,
    /// `null` for the image-only variant.
    pub weight_map: Option<WireWeightMap>,
}

/// Rounds to 9 significant decimal digits, the precision of every float on
/// the wire.
pub fn wire(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

fn wire_vec(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| wire(x)).collect()
}

pub fn response_from(model: &Model, p: &Prediction) -> PredictResponse {
    PredictResponse {
        variant: model.variant().name().to_string(),
        n_bins: model.config.n_bins,
        probabilities: AngleProbabilities {
            azimuth: wire_vec(&p.probabilities[0]),
            elevation: wire_vec(&p.probabilities[1]),
            tilt: wire_vec(&p.probabilities[2]),
        },
        bins: p.bins,
        angles: Viewpoint::new(wire(p.angles.azimuth), wire(p.angles.elevation), wire(p.angles.tilt)),
        weight_map: p.weight_map.as_ref().map(|m| WireWeightMap {
            h: m.h,
            w: m.w,
            values: wire_vec(&m.values),
        }),
    }
}

pub fn decode_png(bytes: &[u8]) -> Result<Image, String> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or("image too large")?];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    if info.width != info.height {
        return Err(format!("image must be square, got {}x{}", info.width, info.height));
    }
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Indexed => return Err("unexpanded palette image".into()),
    };
    let s = info.width as usize;
    let mut data = Vec::with_capacity(s * s * 3);
    for px in buf[..info.buffer_size()].chunks_exact(channels) {
        let rgb = if channels < 3 { [px[0]; 3] } else { [px[0], px[1], px[2]] };
        data.extend(rgb.iter().map(|&v| f32::from(v) / 255.0));
    }
    Image::from_data(s, data).ok_or_else(|| "unexpected pixel buffer size".into())
}

/// 8-bit RGB PNG, for transport and display only.
pub fn encode_png(img: &Image) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.size as u32, img.size as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("png header");
        let bytes: Vec<u8> = img
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        w.write_image_data(&bytes).expect("png data");
    }
    out
}

/// Reads an image file: PNG by signature, raw f32 otherwise.
pub fn read_image_bytes(bytes: &[u8], size: usize) -> Result<Image, String> {
    if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes)
    } else {
        image_from_bytes(size, bytes)
            .ok_or_else(|| format!("raw image must be {} bytes, got {}", size * size * 12, bytes.len()))
    }
}

/// Checks a request against the model and dataset and returns the image it
/// refers to. Errors name the offending field.
pub fn resolve(model: &Model, dataset: Option<&StoredDataset>, req: &PredictRequest) -> Result<Image, ResolveError> {
    let c = &model.config;
    let s = c.image_size;
    let image = match (&req.instance_id, &req.image) {
        (Some(_), Some(_)) | (None, None) => {
            return Err(FieldError::new("instance_id", "give exactly one of instance_id and image").into())
        }
        (Some(id), None) => {
            let inst = dataset
                .and_then(|d| d.instance(*id))
                .ok_or(ResolveError::UnknownInstance(*id))?;
            (*inst.image).clone()
        }
        (None, Some(img)) => {
            let bytes = B64
                .decode(img.data.as_bytes())
                .map_err(|e| FieldError::new("image.data", format!("invalid base64: {e}")))?;
            let image = match img.format {
                InlineFormat::Png => decode_png(&bytes).map_err(|m| FieldError::new("image.data", m))?,
                InlineFormat::F32 => image_from_bytes(s, &bytes).ok_or_else(|| {
                    FieldError::new(
                        "image.data",
                        format!("expected {} bytes, got {}", s * s * 12, bytes.len()),
                    )
                })?,
            };
            if image.size != s {
                return Err(FieldError::new("image", format!("image is {}px, model expects {s}px", image.size)).into());
            }
            if !image.all_in_unit_range() {
                return Err(FieldError::new("image.data", "pixel values must be finite and in [0, 1]").into());
            }
            image
        }
    };
    let Some(obj) = c.objects.get(req.object) else {
        return Err(FieldError::new(
            "object",
            format!("object class {} out of range [0, {})", req.object, c.objects.len()),
        )
        .into());
    };
    if req.keypoint >= obj.keypoints.len() {
        return Err(FieldError::new(
            "keypoint",
            format!(
                "keypoint class {} out of range [0, {}) for `{}`",
                req.keypoint,
                obj.keypoints.len(),
                obj.name
            ),
        )
        .into());
    }
    for (field, v) in [("x", req.x), ("y", req.y)] {
        if v < 0 || v >= s as i64 {
            return Err(FieldError::new(field, format!("{v} is outside [0, {s})")).into());
        }
    }
    Ok(image)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResolveError {
    Field(FieldError),
    UnknownInstance(u64),
}

impl From<FieldError> for ResolveError {
    fn from(e: FieldError) -> Self {
        ResolveError::Field(e)
    }
}

/// Validates and runs one request.
pub fn run(model: &Model, dataset: Option<&StoredDataset>, req: &PredictRequest) -> Result<PredictResponse, ResolveError> {
    let image = resolve(model, dataset, req)?;
    let p = model
        .predict_click(&image.to_tensor(), req.x as usize, req.y as usize, req.keypoint, req.object)
        .map_err(|e| FieldError::new("request", e.to_string()))?;
    Ok(response_from(model, &p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_keeps_nine_digits() {
        assert_eq!(wire(0.123456789123), 0.123456789);
        assert_eq!(wire(1.0 / 3.0), 0.333333333);
        assert_eq!(wire(0.0), 0.0);
        assert_eq!(wire(2.5e-12), 2.5e-12);
    }

    #[test]
    fn png_round_trip_is_8_bit() {
        let mut img = Image::new(4);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i % 256) as f32 / 255.0;
        }
        let back = decode_png(&encode_png(&img)).unwrap();
        assert_eq!(back, img);
    }
}
