use std::fs;
use std::io::Write;
use std::path::Path;

use super::render::Instance;
use crate::error::{Error, Result};

/// Binary 8-bit PGM (`P5`); values are clamped to `[0, 1]` and scaled to 255.
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Input(format!(
            "{} values for a {width}x{height} image",
            values.len()
        )));
    }
    let mut buf = format!("P5\n{width} {height}\n255\n").into_bytes();
    buf.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, buf)?;
    Ok(())
}

/// Writes `<stem>.pgm` and `<stem>.csv` (`index,x,y,visible`).
pub fn write_instance_csv(dir: &Path, stem: &str, inst: &Instance) -> Result<()> {
    let n = inst.image_size();
    write_pgm(&dir.join(format!("{stem}.pgm")), n, n, inst.image.data())?;
    let mut f = fs::File::create(dir.join(format!("{stem}.csv")))?;
    writeln!(f, "index,x,y,visible")?;
    for (i, (p, v)) in inst.keypoints.iter().zip(&inst.visibility).enumerate() {
        writeln!(f, "{i},{:?},{:?},{}", p[0], p[1], u8::from(*v))?;
    }
    Ok(())
}
