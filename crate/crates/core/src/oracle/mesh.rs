//! Cartesian element mesh for the desk-scale conduction solver.
//!
//! The build plate is a coarse cube of elements; the part is a stack of
//! square layers with its own finer element size, centred on the plate's top
//! face. Conduction runs along face-to-face links; the plate/part interface
//! couples every part bottom element to the plate elements under it with
//! footprint-overlap weighting, which keeps the coupling symmetric however
//! the two grids line up.

use crate::error::{Error, Result};

use super::GeometryMaterialSpec;

#[derive(Debug, Clone)]
pub struct Node {
    /// Element volume \[m³\].
    pub volume: f64,
    /// Element centre \[m\].
    pub center: [f64; 3],
    /// 1-based layer index; `None` for plate elements.
    pub layer: Option<usize>,
}

/// Conduction path between two element centres: `area` of the shared face,
/// and the centre-to-face half distances on either side.
#[derive(Debug, Clone, Copy)]
pub struct Link {
    pub a: usize,
    pub b: usize,
    pub area: f64,
    pub half_a: f64,
    pub half_b: f64,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    /// Node indices per 1-based layer.
    pub layer_nodes: Vec<Vec<usize>>,
    pub n_plate_nodes: usize,
}

fn divides_evenly(len: f64, el: f64) -> Option<usize> {
    let n = len / el;
    let r = n.round();
    if r >= 1.0 && (n - r).abs() <= 1e-9 * n.max(1.0) {
        Some(r as usize)
    } else {
        None
    }
}

pub fn build(geom: &GeometryMaterialSpec) -> Result<Mesh> {
    geom.validate()?;
    let np = divides_evenly(geom.plate_side, geom.plate_element_size)
        .ok_or_else(|| bad_mesh("plate side", geom.plate_side, geom.plate_element_size))?;
    let nxy = divides_evenly(geom.part_side, geom.part_element_size)
        .ok_or_else(|| bad_mesh("part side", geom.part_side, geom.part_element_size))?;
    let nz_per_layer = divides_evenly(geom.layer_thickness, geom.part_element_size)
        .ok_or_else(|| bad_mesh("layer thickness", geom.layer_thickness, geom.part_element_size))?;

    let pe = geom.plate_element_size;
    let fe = geom.part_element_size;
    let offset = (geom.plate_side - geom.part_side) / 2.0;
    if offset < -1e-12 {
        return Err(Error::InvalidParams(
            "part cross-section exceeds the plate".into(),
        ));
    }

    let mut nodes = Vec::new();
    let mut links = Vec::new();

    // Plate elements, z in [-plate_side, 0], indexed x-fastest.
    let plate_index = |ix: usize, iy: usize, iz: usize| iz * np * np + iy * np + ix;
    for iz in 0..np {
        for iy in 0..np {
            for ix in 0..np {
                nodes.push(Node {
                    volume: pe * pe * pe,
                    center: [
                        (ix as f64 + 0.5) * pe,
                        (iy as f64 + 0.5) * pe,
                        -geom.plate_side + (iz as f64 + 0.5) * pe,
                    ],
                    layer: None,
                });
            }
        }
    }
    for iz in 0..np {
        for iy in 0..np {
            for ix in 0..np {
                let a = plate_index(ix, iy, iz);
                if ix + 1 < np {
                    links.push(face_link(a, plate_index(ix + 1, iy, iz), pe * pe, pe));
                }
                if iy + 1 < np {
                    links.push(face_link(a, plate_index(ix, iy + 1, iz), pe * pe, pe));
                }
                if iz + 1 < np {
                    links.push(face_link(a, plate_index(ix, iy, iz + 1), pe * pe, pe));
                }
            }
        }
    }
    let n_plate_nodes = nodes.len();

    // Part elements, layer by layer, z in [0, n_layers * thickness].
    let nz_total = geom.n_layers * nz_per_layer;
    let part_index =
        |ix: usize, iy: usize, iz: usize| n_plate_nodes + iz * nxy * nxy + iy * nxy + ix;
    let mut layer_nodes = vec![Vec::new(); geom.n_layers];
    for iz in 0..nz_total {
        let layer = iz / nz_per_layer + 1;
        for iy in 0..nxy {
            for ix in 0..nxy {
                layer_nodes[layer - 1].push(nodes.len());
                nodes.push(Node {
                    volume: fe * fe * fe,
                    center: [
                        offset + (ix as f64 + 0.5) * fe,
                        offset + (iy as f64 + 0.5) * fe,
                        (iz as f64 + 0.5) * fe,
                    ],
                    layer: Some(layer),
                });
            }
        }
    }
    for iz in 0..nz_total {
        for iy in 0..nxy {
            for ix in 0..nxy {
                let a = part_index(ix, iy, iz);
                if ix + 1 < nxy {
                    links.push(face_link(a, part_index(ix + 1, iy, iz), fe * fe, fe));
                }
                if iy + 1 < nxy {
                    links.push(face_link(a, part_index(ix, iy + 1, iz), fe * fe, fe));
                }
                if iz + 1 < nz_total {
                    links.push(face_link(a, part_index(ix, iy, iz + 1), fe * fe, fe));
                }
            }
        }
    }

    // Plate/part interface: overlap-weighted couplings between the part's
    // bottom elements and the plate's top elements.
    for iy in 0..nxy {
        for ix in 0..nxy {
            let part = part_index(ix, iy, 0);
            let (x0, x1) = (offset + ix as f64 * fe, offset + (ix + 1) as f64 * fe);
            let (y0, y1) = (offset + iy as f64 * fe, offset + (iy + 1) as f64 * fe);
            let jx0 = (x0 / pe).floor().max(0.0) as usize;
            let jx1 = ((x1 / pe).ceil() as usize).min(np);
            let jy0 = (y0 / pe).floor().max(0.0) as usize;
            let jy1 = ((y1 / pe).ceil() as usize).min(np);
            for jy in jy0..jy1 {
                for jx in jx0..jx1 {
                    let ox = overlap(x0, x1, jx as f64 * pe, (jx + 1) as f64 * pe);
                    let oy = overlap(y0, y1, jy as f64 * pe, (jy + 1) as f64 * pe);
                    let area = ox * oy;
                    if area > 1e-18 {
                        links.push(Link {
                            a: part,
                            b: plate_index(jx, jy, np - 1),
                            area,
                            half_a: fe / 2.0,
                            half_b: pe / 2.0,
                        });
                    }
                }
            }
        }
    }

    Ok(Mesh {
        nodes,
        links,
        layer_nodes,
        n_plate_nodes,
    })
}

fn face_link(a: usize, b: usize, area: f64, el: f64) -> Link {
    Link {
        a,
        b,
        area,
        half_a: el / 2.0,
        half_b: el / 2.0,
    }
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

fn bad_mesh(what: &str, len: f64, el: f64) -> Error {
    Error::InvalidParams(format!(
        "{what} {len} m is not an integer multiple of the element size {el} m"
    ))
}
