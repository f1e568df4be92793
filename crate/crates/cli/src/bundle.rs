//! Trained-model checkpoints: energy network, optional log-partition network
//! and the feature standardizer in one file.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use minmin_core::data::Standardizer;
use minmin_core::energy::{Coupling, EnergyModel};
use minmin_core::nets::{read_checkpoint, write_checkpoint, Net, NetSpec, ParamVector};
use minmin_core::spaces::OutputSpace;
use minmin_core::training::LossKind;
use serde::{Deserialize, Serialize};

use crate::CliError;

const FORMAT: &str = "minmin-model/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    space: OutputSpace,
    coupling: Coupling,
    g: NetSpec,
    tau: Option<NetSpec>,
    standardizer: Option<Standardizer>,
    loss: LossKind,
    config_hash: String,
}

#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub model: EnergyModel,
    pub tau: Option<Net>,
    pub standardizer: Option<Standardizer>,
    pub loss: LossKind,
    pub config_hash: String,
}

impl ModelBundle {
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let header = Header {
            format: FORMAT.into(),
            space: self.model.space,
            coupling: self.model.coupling,
            g: self.model.h.spec.clone(),
            tau: self.tau.as_ref().map(|t| t.spec.clone()),
            standardizer: self.standardizer.clone(),
            loss: self.loss,
            config_hash: self.config_hash.clone(),
        };
        let mut values = self.model.h.params.values.clone();
        if let Some(t) = &self.tau {
            values.extend_from_slice(&t.params.values);
        }
        let w = BufWriter::new(File::create(path)?);
        write_checkpoint(w, &header, &values)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let r = BufReader::new(
            File::open(path).map_err(|e| CliError::Config(format!("cannot open checkpoint {}: {e}", path.display())))?,
        );
        let (header, values): (Header, Vec<f64>) = read_checkpoint(r)?;
        if header.format != FORMAT {
            return Err(CliError::Config(format!("unsupported checkpoint format {:?}", header.format)));
        }
        let g_len = header.g.num_params();
        let tau_len = header.tau.as_ref().map_or(0, NetSpec::num_params);
        if values.len() != g_len + tau_len {
            return Err(CliError::Config(format!(
                "checkpoint holds {} values, header describes {}",
                values.len(),
                g_len + tau_len
            )));
        }
        let g_params = ParamVector::from_values(&header.g, values[..g_len].to_vec())?;
        let model = EnergyModel::new(header.space, header.coupling, Net::new(header.g, g_params)?)?;
        let tau = match header.tau {
            Some(spec) => {
                let p = ParamVector::from_values(&spec, values[g_len..].to_vec())?;
                Some(Net::new(spec, p)?)
            }
            None => None,
        };
        Ok(ModelBundle {
            model,
            tau,
            standardizer: header.standardizer,
            loss: header.loss,
            config_hash: header.config_hash,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use minmin_core::nets::Activation;
    use rand::SeedableRng;

    #[test]
    fn round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let space = OutputSpace::binary(3);
        let h = Net::init(NetSpec::mlp(2, vec![4], 3, Activation::Relu), &mut rng).unwrap();
        let model = EnergyModel::new(space, Coupling::bilinear(&space), h).unwrap();
        let tau = Net::init(NetSpec::table(5), &mut rng).unwrap();
        let b = ModelBundle {
            model,
            tau: Some(tau),
            standardizer: Some(Standardizer {
                mean: vec![1.0, 2.0],
                std: vec![0.5, 3.0],
            }),
            loss: LossKind::MinminKl,
            config_hash: "abc".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        b.save(&p).unwrap();
        let back = ModelBundle::load(&p).unwrap();
        assert_eq!(back.model.h.params, b.model.h.params);
        assert_eq!(back.tau.unwrap().params, b.tau.unwrap().params);
        assert_eq!(back.standardizer, b.standardizer);
        assert_eq!(back.config_hash, "abc");
    }
}
