//! PNG rasters: depth (16-bit millimeters), labels (8/16-bit ids),
//! color (8-bit RGB) and normals (16-bit RGB, `(n + 1) / 2` scaled).

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageReader, Luma, Rgb};
use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{ColorImage, DepthImage, LabelImage, NormalImage};

/// Largest depth representable on disk, in meters.
pub const MAX_DEPTH_M: f64 = u16::MAX as f64 / 1000.0;

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn decode(path: &Path) -> Result<DynamicImage> {
    ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| format_err(path, e.to_string()))
}

fn save<P, C>(path: &Path, buf: ImageBuffer<P, C>) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => format_err(path, other.to_string()),
        })
}

fn dims(w: u32, h: u32) -> (usize, usize) {
    (w as usize, h as usize)
}

pub fn read_depth_image(path: &Path) -> Result<DepthImage> {
    match decode(path)? {
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = dims(buf.width(), buf.height());
            let data = buf
                .into_raw()
                .into_iter()
                .map(|mm| mm as f64 / 1000.0)
                .collect();
            DepthImage::from_vec(w, h, data)
        }
        other => Err(format_err(
            path,
            format!(
                "depth must be 16-bit single-channel, found {:?}",
                other.color()
            ),
        )),
    }
}

/// Depth is rounded to whole millimeters.
pub fn write_depth_image(img: &DepthImage, path: &Path) -> Result<()> {
    img.validate_depth()?;
    let mut raw = Vec::with_capacity(img.len());
    for &d in img.data() {
        if d > MAX_DEPTH_M {
            return Err(Error::invalid(format!(
                "depth {d} m exceeds the 16-bit millimeter range"
            )));
        }
        raw.push((d * 1000.0).round() as u16);
    }
    let buf = ImageBuffer::<Luma<u16>, _>::from_raw(img.width() as u32, img.height() as u32, raw)
        .expect("buffer size matches");
    save(path, buf)
}

pub fn read_label_image(path: &Path) -> Result<LabelImage> {
    let (w, h, data) = match decode(path)? {
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = dims(buf.width(), buf.height());
            (w, h, buf.into_raw().into_iter().map(u16::from).collect())
        }
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = dims(buf.width(), buf.height());
            (w, h, buf.into_raw())
        }
        other => {
            return Err(format_err(
                path,
                format!("labels must be single-channel, found {:?}", other.color()),
            ))
        }
    };
    LabelImage::from_vec(w, h, data)
}

/// Always written as 16-bit so every id survives.
pub fn write_label_image(img: &LabelImage, path: &Path) -> Result<()> {
    let buf = ImageBuffer::<Luma<u16>, _>::from_raw(
        img.width() as u32,
        img.height() as u32,
        img.data().to_vec(),
    )
    .expect("buffer size matches");
    save(path, buf)
}

/// Any decodable image is converted to 8-bit RGB.
pub fn read_color_image(path: &Path) -> Result<ColorImage> {
    let buf = decode(path)?.into_rgb8();
    let (w, h) = dims(buf.width(), buf.height());
    let data = buf.pixels().map(|p| p.0).collect();
    ColorImage::from_vec(w, h, data)
}

pub fn write_color_image(img: &ColorImage, path: &Path) -> Result<()> {
    let raw: Vec<u8> = img.data().iter().flatten().copied().collect();
    let buf = ImageBuffer::<Rgb<u8>, _>::from_raw(img.width() as u32, img.height() as u32, raw)
        .expect("buffer size matches");
    save(path, buf)
}

/// All-zero pixels are invalid; others are renormalized to unit length.
pub fn read_normal_image(path: &Path) -> Result<NormalImage> {
    let buf = match decode(path)? {
        DynamicImage::ImageRgb16(buf) => buf,
        other => {
            return Err(format_err(
                path,
                format!("normals must be 16-bit RGB, found {:?}", other.color()),
            ))
        }
    };
    let (w, h) = dims(buf.width(), buf.height());
    let data = buf
        .pixels()
        .map(|p| {
            if p.0 == [0, 0, 0] {
                return None;
            }
            let n = Vector3::from(p.0.map(|c| c as f64 / 65535.0 * 2.0 - 1.0));
            let len = n.norm();
            (len > 1e-3).then(|| n / len)
        })
        .collect();
    NormalImage::from_vec(w, h, data)
}

pub fn write_normal_image(img: &NormalImage, path: &Path) -> Result<()> {
    let mut raw = Vec::with_capacity(img.len() * 3);
    for n in img.data() {
        match n {
            Some(n) => {
                for c in n.iter() {
                    // 0 is reserved for "invalid", so the lowest code is 1
                    raw.push((((c + 1.0) / 2.0) * 65535.0).round().clamp(1.0, 65535.0) as u16);
                }
            }
            None => raw.extend_from_slice(&[0, 0, 0]),
        }
    }
    let buf = ImageBuffer::<Rgb<u16>, _>::from_raw(img.width() as u32, img.height() as u32, raw)
        .expect("buffer size matches");
    save(path, buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn depth_unit_conversion_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        let raw = ImageBuffer::<Luma<u16>, _>::from_raw(2, 1, vec![1000u16, 0]).unwrap();
        raw.save(&p).unwrap();
        let d = read_depth_image(&p).unwrap();
        assert_eq!(*d.get(0, 0), 1.0);
        assert_eq!(*d.get(1, 0), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = DepthImage::from_fn(37, 21, |_, _| {
            rng.random_range(0..=u16::MAX) as f64 / 1000.0
        });
        write_depth_image(&img, &p).unwrap();
        assert_eq!(read_depth_image(&p).unwrap(), img);
    }

    #[test]
    fn depth_rejects_other_bit_depths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d8.png");
        ImageBuffer::<Luma<u8>, _>::from_raw(2, 2, vec![1u8; 4])
            .unwrap()
            .save(&p)
            .unwrap();
        assert!(matches!(read_depth_image(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn labels_accept_8_and_16_bit_and_reject_color() {
        let dir = tempfile::tempdir().unwrap();
        let p8 = dir.path().join("l8.png");
        ImageBuffer::<Luma<u8>, _>::from_raw(2, 1, vec![3u8, 0])
            .unwrap()
            .save(&p8)
            .unwrap();
        let l = read_label_image(&p8).unwrap();
        assert_eq!(l.data(), &[3, 0]);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = LabelImage::from_fn(19, 23, |_, _| rng.random());
        let p16 = dir.path().join("l16.png");
        write_label_image(&img, &p16).unwrap();
        assert_eq!(read_label_image(&p16).unwrap(), img);

        let prgb = dir.path().join("rgb.png");
        ImageBuffer::<Rgb<u8>, _>::from_raw(1, 1, vec![1u8, 2, 3])
            .unwrap()
            .save(&prgb)
            .unwrap();
        assert!(matches!(read_label_image(&prgb), Err(Error::Format { .. })));
    }

    #[test]
    fn color_and_normal_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = ColorImage::from_fn(9, 7, |_, _| [rng.random(), rng.random(), rng.random()]);
        let pc = dir.path().join("c.png");
        write_color_image(&c, &pc).unwrap();
        assert_eq!(read_color_image(&pc).unwrap(), c);

        let n = NormalImage::from_fn(9, 7, |x, y| {
            ((x + y) % 4 != 0).then(|| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    1.0,
                )
                .normalize()
            })
        });
        let pn = dir.path().join("n.png");
        write_normal_image(&n, &pn).unwrap();
        let back = read_normal_image(&pn).unwrap();
        for (a, b) in n.data().iter().zip(back.data()) {
            match (a, b) {
                (Some(a), Some(b)) => {
                    assert!((a - b).norm() < 1e-4);
                    assert!((b.norm() - 1.0).abs() < 1e-12);
                }
                (None, None) => {}
                _ => panic!("validity changed"),
            }
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            read_depth_image(Path::new("/nonexistent/depth.png")),
            Err(Error::Io { .. })
        ));
    }
}
