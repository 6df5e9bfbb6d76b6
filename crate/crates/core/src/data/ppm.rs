use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format { offset, msg: msg.into() }
}

/// Encodes a (3,H,W) tensor in [−1, 1] as a binary P6 image.
pub fn save_ppm(img: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match *img.shape() {
        [3, h, w] => (h, w),
        ref s => return Err(shape_err!("PPM expects a (3,H,W) tensor, got {s:?}")),
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let d = img.data();
    out.reserve(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            out.push(to_byte(d[c * plane + i]));
        }
    }
    Ok(out)
}

fn to_byte(v: f32) -> u8 {
    ((v as f64 + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Decodes a binary P6 stream (maxval 255) into a (3,H,W) tensor in [−1, 1].
pub fn load_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(format_err(0, "missing P6 magic"));
    }
    pos += 2;
    let mut fields = [0usize; 3];
    let mut starts = [0usize; 3];
    for k in 0..3 {
        // whitespace and comments before each header number
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(format_err(pos, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(pos, format!("expected header number {}", k + 1)));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        starts[k] = start;
        fields[k] = text.parse().map_err(|_| format_err(start, "header number out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(format_err(pos, "expected single whitespace after maxval")),
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(format_err(starts[0], "zero image dimension"));
    }
    if maxval != 255 {
        return Err(format_err(starts[2], format!("unsupported maxval {maxval}")));
    }
    let plane = w.checked_mul(h).ok_or_else(|| format_err(starts[0], "image too large"))?;
    let need = plane * 3;
    if bytes.len() - pos < need {
        return Err(format_err(bytes.len(), format!("truncated payload: need {need} bytes after offset {pos}")));
    }
    let payload = &bytes[pos..pos + need];
    let mut data = vec![0.0f32; need];
    for i in 0..plane {
        for c in 0..3 {
            data[c * plane + i] = payload[3 * i + c] as f32 / 255.0 * 2.0 - 1.0;
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}
