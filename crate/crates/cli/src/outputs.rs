//! Artifact writers: RFC-4180 CSV (CRLF), pretty JSON, and PNG tile grids
//! rendered directly from pixel data.

use clvae::{Error, Result, Tensor};
use serde::Serialize;
use std::path::Path;

/// Write rows as RFC-4180 CSV with CRLF line endings.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::shape(format!(
                "csv row has {} fields, header has {}",
                row.len(),
                header.len()
            )));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Pretty JSON with a trailing newline. Serialization order is the struct
/// field order (or sorted keys for maps), so equal values give equal bytes.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::config(format!("json encoding: {e}")))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

/// Render selected images of a [n, h, w, 1] tensor as one grayscale PNG
/// grid, `cols` tiles per row with a 2-pixel separator.
pub fn write_png_grid(
    path: &Path,
    images: &Tensor<f32>,
    indices: &[usize],
    cols: usize,
) -> Result<()> {
    if indices.is_empty() || cols == 0 {
        return Err(Error::config("empty PNG grid"));
    }
    let shape = images.shape();
    if shape.len() != 4 || shape[3] != 1 {
        return Err(Error::shape(format!(
            "PNG grid needs [n, h, w, 1] images, got {shape:?}"
        )));
    }
    let (h, w) = (shape[1], shape[2]);
    let cols = cols.min(indices.len());
    let rows = indices.len().div_ceil(cols);
    const PAD: usize = 2;
    let canvas_w = cols * w + (cols - 1) * PAD;
    let canvas_h = rows * h + (rows - 1) * PAD;
    let mut canvas = vec![0u8; canvas_w * canvas_h];
    for (tile, &idx) in indices.iter().enumerate() {
        if idx >= shape[0] {
            return Err(Error::shape(format!(
                "grid index {idx} out of range for {} images",
                shape[0]
            )));
        }
        let src = images.row(idx);
        let (tr, tc) = (tile / cols, tile % cols);
        let (y0, x0) = (tr * (h + PAD), tc * (w + PAD));
        for r in 0..h {
            for c in 0..w {
                let v = (src[r * w + c].clamp(0.0, 1.0) * 255.0).round() as u8;
                canvas[(y0 + r) * canvas_w + x0 + c] = v;
            }
        }
    }

    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file = std::fs::File::create(path)?;
    let mut encoder = png::Encoder::new(
        std::io::BufWriter::new(file),
        canvas_w as u32,
        canvas_h as u32,
    );
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    writer
        .write_image_data(&canvas)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_uses_crlf_and_checks_width() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_csv(
            &path,
            &["a", "b"],
            vec![vec!["1".to_string(), "x,y".to_string()]],
        )
        .unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(text, "a,b\r\n1,\"x,y\"\r\n");
        assert!(write_csv(&path, &["a", "b"], vec![vec!["1".to_string()]]).is_err());
    }

    #[test]
    fn json_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        let value: std::collections::BTreeMap<String, f64> =
            [("z".to_string(), 1.5), ("a".to_string(), 2.0)].into_iter().collect();
        write_json(&a, &value).unwrap();
        write_json(&b, &value).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let text = std::fs::read_to_string(&a).unwrap();
        assert!(text.find("\"a\"").unwrap() < text.find("\"z\"").unwrap());
    }

    #[test]
    fn png_grid_has_expected_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let images = Tensor::new(vec![5, 4, 3, 1], vec![0.5f32; 60]).unwrap();
        write_png_grid(&path, &images, &[0, 1, 2, 3, 4], 3).unwrap();
        let decoder =
            png::Decoder::new(std::io::BufReader::new(std::fs::File::open(&path).unwrap()));
        let reader = decoder.read_info().unwrap();
        let info = reader.info();
        // 3 cols x 3 wide + 2 pads x 2 px = 13; 2 rows x 4 high + 1 pad x 2 = 10
        assert_eq!(info.width, 13);
        assert_eq!(info.height, 10);
    }

    #[test]
    fn png_grid_rejects_bad_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let images = Tensor::new(vec![2, 4, 3, 1], vec![0.5f32; 24]).unwrap();
        assert!(write_png_grid(&path, &images, &[], 3).is_err());
        assert!(write_png_grid(&path, &images, &[5], 3).is_err());
    }
}
