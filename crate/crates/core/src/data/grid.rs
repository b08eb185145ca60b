use std::collections::HashSet;

use crate::error::{Result, StoneError};
use crate::tensor::Tensor;
use crate::trunk::normalize_coords;

/// Query points in degrees plus their `[P×2]` normalized form.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGrid {
    degrees: Vec<[f64; 2]>,
    normalized: Tensor,
    shape: Option<(usize, usize)>,
}

impl QueryGrid {
    /// Rows of `[lat, lon]` in degrees; rows must be unique.
    pub fn from_degrees(degrees: Vec<[f64; 2]>) -> Result<Self> {
        if degrees.is_empty() {
            return Err(StoneError::Range("query grid has no points".into()));
        }
        let mut seen = HashSet::new();
        let mut flat = Vec::with_capacity(degrees.len() * 2);
        for (i, &[lat, lon]) in degrees.iter().enumerate() {
            if !seen.insert((lat.to_bits(), lon.to_bits())) {
                return Err(StoneError::Range(format!("duplicate query point {i}: ({lat}, {lon})")));
            }
            let (u, v) = normalize_coords(lat, lon)?;
            flat.extend([u, v]);
        }
        let normalized = Tensor::from_vec(&[degrees.len(), 2], flat)?;
        Ok(QueryGrid {
            degrees,
            normalized,
            shape: None,
        })
    }

    /// Regular `nlat × nlon` grid of cell centres, latitude-major.
    pub fn regular(nlat: usize, nlon: usize) -> Result<Self> {
        if nlat == 0 || nlon == 0 {
            return Err(StoneError::config("grid", format!("{nlat}x{nlon} has no cells")));
        }
        let mut degrees = Vec::with_capacity(nlat * nlon);
        for i in 0..nlat {
            let lat = -90.0 + (i as f64 + 0.5) * 180.0 / nlat as f64;
            for j in 0..nlon {
                degrees.push([lat, -180.0 + (j as f64 + 0.5) * 360.0 / nlon as f64]);
            }
        }
        let mut grid = Self::from_degrees(degrees)?;
        grid.shape = Some((nlat, nlon));
        Ok(grid)
    }

    /// Parses `"LATxLON"` such as `8x16`.
    pub fn parse_dims(text: &str) -> Result<(usize, usize)> {
        let bad = || StoneError::config("grid", format!("`{text}` is not LATxLON"));
        let (a, b) = text.split_once(['x', 'X']).ok_or_else(bad)?;
        let nlat = a.trim().parse().map_err(|_| bad())?;
        let nlon = b.trim().parse().map_err(|_| bad())?;
        if nlat == 0 || nlon == 0 {
            return Err(bad());
        }
        Ok((nlat, nlon))
    }

    pub fn len(&self) -> usize {
        self.degrees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degrees.is_empty()
    }

    pub fn degrees(&self) -> &[[f64; 2]] {
        &self.degrees
    }

    pub fn normalized(&self) -> &Tensor {
        &self.normalized
    }

    /// `(nlat, nlon)` when built by [`QueryGrid::regular`].
    pub fn regular_shape(&self) -> Option<(usize, usize)> {
        self.shape
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let degrees = indices
            .iter()
            .map(|&i| {
                self.degrees
                    .get(i)
                    .copied()
                    .ok_or_else(|| StoneError::Range(format!("point index {i} outside grid of {}", self.len())))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_degrees(degrees)
    }
}
