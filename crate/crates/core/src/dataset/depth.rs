use std::io::Cursor;
use std::path::Path;

use super::{read_file, write_file, DatasetError};
use crate::refine::DepthImage;

/// Largest depth a 16-bit millimeter pixel can hold.
pub const MAX_DEPTH_M: f64 = 65.535;

/// Encodes depth as a 16-bit grayscale PNG in millimeters, rounding to the
/// nearest millimeter. Holes stay 0.
pub fn encode_depth_png(depth: &DepthImage) -> Result<Vec<u8>, DatasetError> {
    let mut raw = Vec::with_capacity(depth.data().len() * 2);
    for &d in depth.data() {
        let mm = (d * 1000.0).round();
        if mm > u16::MAX as f64 {
            return Err(DatasetError::DepthOutOfRange { value: d });
        }
        raw.extend_from_slice(&(mm as u16).to_be_bytes());
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, depth.width(), depth.height());
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let encode_err = |e: png::EncodingError| DatasetError::CorruptDepth {
            path: "<memory>".into(),
            reason: e.to_string(),
        };
        let mut writer = enc.write_header().map_err(encode_err)?;
        writer.write_image_data(&raw).map_err(encode_err)?;
        writer.finish().map_err(encode_err)?;
    }
    Ok(out)
}

pub fn decode_depth_png(bytes: &[u8], path: &Path) -> Result<DepthImage, DatasetError> {
    let corrupt = |reason: String| DatasetError::CorruptDepth {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = png::Decoder::new(Cursor::new(bytes))
        .read_info()
        .map_err(|e| corrupt(e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(corrupt(format!(
            "expected 16-bit grayscale, found {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (width, height) = (info.width, info.height);
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| corrupt("image too large".into()))?;
    let mut buf = vec![0; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| corrupt(e.to_string()))?;
    let data = buf[..frame.buffer_size()]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 1000.0)
        .collect();
    DepthImage::new(width, height, data).map_err(|e| corrupt(e.to_string()))
}

pub fn write_depth_png(path: &Path, depth: &DepthImage) -> Result<(), DatasetError> {
    write_file(path, &encode_depth_png(depth)?)
}

pub fn read_depth_png(path: &Path) -> Result<DepthImage, DatasetError> {
    decode_depth_png(&read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn millimeters_to_meters() {
        let img = DepthImage::new(3, 1, vec![1.5, 0.0, 0.8004]).unwrap();
        let back = decode_depth_png(&encode_depth_png(&img).unwrap(), Path::new("x")).unwrap();
        assert_eq!(back.data(), &[1.5, 0.0, 0.8]);
    }

    #[test]
    fn full_resolution_frame() {
        let img = DepthImage::empty(1280, 720);
        let back = decode_depth_png(&encode_depth_png(&img).unwrap(), Path::new("x")).unwrap();
        assert_eq!((back.width(), back.height()), (1280, 720));
    }

    #[test]
    fn rejects_other_formats() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 1, 1);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[1, 2, 3]).unwrap();
        }
        assert!(matches!(
            decode_depth_png(&out, Path::new("rgb.png")),
            Err(DatasetError::CorruptDepth { .. })
        ));
        assert!(matches!(
            decode_depth_png(b"not a png", Path::new("junk.png")),
            Err(DatasetError::CorruptDepth { .. })
        ));
        let far = DepthImage::new(1, 1, vec![70.0]).unwrap();
        assert!(matches!(
            encode_depth_png(&far),
            Err(DatasetError::DepthOutOfRange { .. })
        ));
    }

    proptest! {
        #[test]
        fn representable_depths_round_trip(mm in prop::collection::vec(0u16..=u16::MAX, 1..64)) {
            let data: Vec<f64> = mm.iter().map(|&v| v as f64 / 1000.0).collect();
            let img = DepthImage::new(data.len() as u32, 1, data.clone()).unwrap();
            let back = decode_depth_png(&encode_depth_png(&img).unwrap(), Path::new("x")).unwrap();
            prop_assert_eq!(back.data(), &data[..]);
        }
    }
}
