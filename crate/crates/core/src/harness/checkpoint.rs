//! Checkpoint directory: `manifest.txt` plus one `TSR1` file per parameter.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{tsr, Scalar};

pub const MANIFEST: &str = "manifest.txt";

fn shape_text(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

pub fn manifest_text<T: Scalar>(ps: &ParamStore<T>) -> String {
    ps.iter()
        .map(|p| format!("{} {} {}\n", p.name, shape_text(p.tensor.shape()), T::DTYPE.name()))
        .collect()
}

/// Writes every parameter of `ps` into `dir`, replacing earlier contents.
pub fn save<T: Scalar>(dir: &Path, ps: &ParamStore<T>) -> Result<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = dir.join(MANIFEST);
    std::fs::write(&m, manifest_text(ps)).map_err(|e| Error::io(&m, e))?;
    for p in ps.iter() {
        tsr::write(&dir.join(format!("{}.tsr", p.name)), &p.tensor)?;
    }
    Ok(())
}

/// Loads values into a store built for the same configuration. Names,
/// shapes and dtype must match the manifest exactly.
pub fn load<T: Scalar>(dir: &Path, ps: &mut ParamStore<T>) -> Result<()> {
    let m = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&m).map_err(|e| Error::io(&m, e))?;
    let expected = manifest_text(ps);
    let (got, want): (Vec<&str>, Vec<&str>) = (text.lines().collect(), expected.lines().collect());
    if got.len() != want.len() {
        return Err(Error::parse(
            &m,
            got.len().min(want.len()) + 1,
            format!("manifest lists {} parameters, model has {}", got.len(), want.len()),
        ));
    }
    for (i, (g, w)) in got.iter().zip(&want).enumerate() {
        if g != w {
            return Err(Error::parse(&m, i + 1, format!("manifest entry {g:?}, model expects {w:?}")));
        }
    }
    let names: Vec<_> = ps.ids().zip(ps.iter().map(|p| p.name.clone())).collect();
    for (id, name) in names {
        let t = tsr::read::<T>(&dir.join(format!("{name}.tsr")))?;
        ps.set(id, t)?;
    }
    Ok(())
}
