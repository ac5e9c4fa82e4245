//! 3D connected-component labelling (two-pass union-find).

use crate::model::GridMeta;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    /// Face neighbours only.
    Six,
    /// Face, edge, and corner neighbours.
    TwentySix,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            other => Err(format!("connectivity must be 6 or 26, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Six => 6,
            Connectivity::TwentySix => 26,
        }
    }
}

impl Connectivity {
    /// Neighbour offsets (dx, dy, dz) that precede a voxel in raster order.
    fn backward_offsets(self) -> Vec<[isize; 3]> {
        let mut v = Vec::new();
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let before = dz < 0 || (dz == 0 && (dy < 0 || (dy == 0 && dx < 0)));
                    if !before {
                        continue;
                    }
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    if self == Connectivity::TwentySix || manhattan == 1 {
                        v.push([dx, dy, dz]);
                    }
                }
            }
        }
        v
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

/// Labelled components: `labels[i]` is 0 for background, else 1..=N.
/// Labels follow the raster-scan order of each component's first voxel, and
/// each component's voxel list is ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct Components {
    pub labels: Vec<u32>,
    pub components: Vec<Vec<usize>>,
}

pub fn connected_components(mask: &[bool], meta: &GridMeta, connectivity: Connectivity) -> Components {
    let [nx, ny, nz] = meta.dims;
    let offsets = connectivity.backward_offsets();
    let mut provisional = vec![0u32; mask.len()];
    let mut parent: Vec<u32> = vec![0];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = meta.index(x, y, z);
                if !mask[i] {
                    continue;
                }
                let mut current = 0u32;
                for [dx, dy, dz] in &offsets {
                    let (qx, qy, qz) = (x as isize + dx, y as isize + dy, z as isize + dz);
                    if qx < 0 || qy < 0 || qz < 0 || qx >= nx as isize || qy >= ny as isize {
                        continue;
                    }
                    let l = provisional[meta.index(qx as usize, qy as usize, qz as usize)];
                    if l == 0 {
                        continue;
                    }
                    if current == 0 {
                        current = find(&mut parent, l);
                    } else {
                        let (a, b) = (find(&mut parent, current), find(&mut parent, l));
                        if a != b {
                            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                            parent[hi as usize] = lo;
                            current = lo;
                        }
                    }
                }
                if current == 0 {
                    current = parent.len() as u32;
                    parent.push(current);
                }
                provisional[i] = current;
            }
        }
    }
    let mut final_label = vec![0u32; parent.len()];
    let mut labels = vec![0u32; mask.len()];
    let mut components: Vec<Vec<usize>> = Vec::new();
    for i in 0..mask.len() {
        let p = provisional[i];
        if p == 0 {
            continue;
        }
        let root = find(&mut parent, p) as usize;
        if final_label[root] == 0 {
            components.push(Vec::new());
            final_label[root] = components.len() as u32;
        }
        let l = final_label[root];
        labels[i] = l;
        components[l as usize - 1].push(i);
    }
    Components { labels, components }
}
