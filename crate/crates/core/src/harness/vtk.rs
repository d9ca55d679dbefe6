//! Legacy-VTK structured points output of nodal fields.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::FineGrid;

/// Writes `values` (one per fine node, lexicographic x-fastest) as ASCII
/// point data named `name`.
pub fn export_vtk(fine: &FineGrid, name: &str, values: &[f64], path: &Path) -> Result<()> {
    if values.len() != fine.num_nodes() {
        return Err(Error::Dimension {
            context: "VTK export",
            expected: fine.num_nodes(),
            actual: values.len(),
        });
    }
    if name.is_empty() || name.contains(char::is_whitespace) {
        return Err(Error::config(format!("invalid VTK field name '{name}'")));
    }
    let [nx, ny, nz] = fine.node_dims();
    let h = fine.h;
    let mut out = String::with_capacity(values.len() * 24 + 256);
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str(&format!("{name}\n"));
    out.push_str("ASCII\nDATASET STRUCTURED_POINTS\n");
    let _ = writeln!(out, "DIMENSIONS {nx} {ny} {nz}");
    out.push_str("ORIGIN 0 0 0\n");
    let _ = writeln!(out, "SPACING {h:e} {h:e} {h:e}");
    let _ = writeln!(out, "POINT_DATA {}", values.len());
    let _ = writeln!(out, "SCALARS {name} double 1");
    out.push_str("LOOKUP_TABLE default\n");
    for v in values {
        let _ = writeln!(out, "{v:e}");
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Contents of a structured-points file written by [`export_vtk`].
#[derive(Debug, Clone, PartialEq)]
pub struct VtkField {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub name: String,
    pub values: Vec<f64>,
}

/// Reads an ASCII structured-points file with one scalar point field.
pub fn read_vtk(path: &Path) -> Result<VtkField> {
    let text = std::fs::read_to_string(path)?;
    let invalid = |detail: String| Error::InvalidData {
        path: path.to_path_buf(),
        detail,
    };
    let mut dims = None;
    let mut spacing = None;
    let mut name = None;
    let mut count = None;
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        let mut words = line.split_whitespace();
        match words.next() {
            Some("DIMENSIONS") => {
                let d: Vec<usize> = words.map(|w| w.parse()).collect::<std::result::Result<_, _>>().map_err(|e| invalid(format!("{e}")))?;
                if d.len() != 3 {
                    return Err(invalid("DIMENSIONS needs three entries".into()));
                }
                dims = Some([d[0], d[1], d[2]]);
            }
            Some("SPACING") => {
                let s: Vec<f64> = words.map(|w| w.parse()).collect::<std::result::Result<_, _>>().map_err(|e| invalid(format!("{e}")))?;
                if s.len() != 3 {
                    return Err(invalid("SPACING needs three entries".into()));
                }
                spacing = Some([s[0], s[1], s[2]]);
            }
            Some("POINT_DATA") => {
                count = Some(
                    words
                        .next()
                        .and_then(|w| w.parse::<usize>().ok())
                        .ok_or_else(|| invalid("bad POINT_DATA".into()))?,
                );
            }
            Some("SCALARS") => name = words.next().map(str::to_string),
            Some("LOOKUP_TABLE") => break,
            _ => {}
        }
    }
    let dims = dims.ok_or_else(|| invalid("missing DIMENSIONS".into()))?;
    let count = count.ok_or_else(|| invalid("missing POINT_DATA".into()))?;
    if count != dims.iter().product::<usize>() {
        return Err(invalid(format!("POINT_DATA {count} does not match DIMENSIONS {dims:?}")));
    }
    let values: Vec<f64> = lines
        .flat_map(str::split_whitespace)
        .map(|w| w.parse::<f64>().map_err(|e| invalid(format!("'{w}': {e}"))))
        .collect::<Result<_>>()?;
    if values.len() != count {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected: count,
            actual: values.len(),
        });
    }
    Ok(VtkField {
        dims,
        spacing: spacing.ok_or_else(|| invalid("missing SPACING".into()))?,
        name: name.ok_or_else(|| invalid("missing SCALARS".into()))?,
        values,
    })
}
