//! Trunk decoder: normalized coordinate `r` to basis tensor `T(r) ∈ R^{q×p×K_fut}`.

use crate::autodiff::Var;
use crate::config::TrunkConfig;
use crate::error::{Result, StoneError};
use crate::nn::{Activation, DenseLayer};
use crate::params::{Bound, ParamBuilder};

/// Maps degrees to the unit square: `u = (lat+90)/180`, `v = (lon+180)/360`.
pub fn normalize_coords(lat_deg: f64, lon_deg: f64) -> Result<(f64, f64)> {
    if !(-90.0..=90.0).contains(&lat_deg) {
        return Err(StoneError::Range(format!("latitude {lat_deg} outside [-90, 90]")));
    }
    if !(-180.0..180.0).contains(&lon_deg) {
        return Err(StoneError::Range(format!("longitude {lon_deg} outside [-180, 180)")));
    }
    Ok(((lat_deg + 90.0) / 180.0, (lon_deg + 180.0) / 360.0))
}

#[derive(Debug, Clone)]
pub struct Trunk {
    config: TrunkConfig,
    hidden: Vec<DenseLayer>,
    output: DenseLayer,
}

impl Trunk {
    pub fn new(pb: &mut ParamBuilder, config: &TrunkConfig) -> Result<Self> {
        config.validate()?;
        let mut hidden = Vec::with_capacity(config.layers);
        let mut width = TrunkConfig::COORD_DIM;
        for l in 0..config.layers {
            hidden.push(DenseLayer::new(pb, &format!("trunk.fc{l}"), width, config.hidden, Activation::Relu)?);
            width = config.hidden;
        }
        let output = DenseLayer::new(pb, "trunk.out", width, config.out_width(), Activation::Identity)?;
        Ok(Trunk {
            config: config.clone(),
            hidden,
            output,
        })
    }

    pub fn config(&self) -> &TrunkConfig {
        &self.config
    }

    pub fn output_layer(&self) -> &DenseLayer {
        &self.output
    }

    /// Hidden features `[P×hidden]` feeding the output layer.
    pub fn features<'t>(&self, p: &Bound<'t>, coords: Var<'t>) -> Result<Var<'t>> {
        let dims = coords.dims();
        if dims.len() != 2 || dims[1] != TrunkConfig::COORD_DIM {
            return Err(StoneError::dims("decode_basis", &dims, &[TrunkConfig::COORD_DIM]));
        }
        if let Some(bad) = coords.value().data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(StoneError::Range(format!(
                "coordinate {bad} outside [0,1]; normalize degrees first"
            )));
        }
        let mut x = coords;
        for layer in &self.hidden {
            x = layer.forward(p, x)?;
        }
        Ok(x)
    }

    /// `coords: [P×2] -> T: [P×q×p×K_fut]`, pointwise in P.
    pub fn decode_basis<'t>(&self, p: &Bound<'t>, coords: Var<'t>) -> Result<Var<'t>> {
        let points = coords.dims()[0];
        let c = &self.config;
        self.output
            .forward(p, self.features(p, coords)?)?
            .reshape(&[points, c.q, c.p, c.k_fut])
    }
}
